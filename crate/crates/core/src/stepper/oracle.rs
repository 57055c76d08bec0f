//! Sine-series reference solution for `a = I` on an interval with
//! state-independent terms: every mode is an Ornstein-Uhlenbeck process,
//! advanced with exact exponential factors.

use serde::Serialize;

use super::{eval_g_cells, Boundary, Scheme, SolutionPath, SpdeProblem};
use crate::error::{Error, Result};
use crate::grid::{l2_inner, GridField, SpatialGrid};
use crate::operator::divergence_term;

/// Which eigenvalue each sine mode decays with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleSpectrum {
    /// `(m pi / L)^2`: the continuum heat semigroup.
    Continuum,
    /// `4 / h^2 sin^2(m pi h / 2L)`: eigenvalues of the grid Laplacian.
    Discrete,
}

/// `sqrt(2 / L) sin(m pi x / L)` at the grid nodes.
pub fn sine_mode(grid: &SpatialGrid, m: usize) -> GridField {
    let l = grid.extents()[0];
    let c = (2.0 / l).sqrt();
    GridField::from_fn_dirichlet(grid, |x| c * (m as f64 * std::f64::consts::PI * x[0] / l).sin())
}

fn eigenvalue(grid: &SpatialGrid, m: usize, spectrum: OracleSpectrum) -> f64 {
    let l = grid.extents()[0];
    let k = m as f64 * std::f64::consts::PI / l;
    match spectrum {
        OracleSpectrum::Continuum => k * k,
        OracleSpectrum::Discrete => {
            let h = grid.spacing()[0];
            4.0 / (h * h) * (k * h / 2.0).sin().powi(2)
        }
    }
}

/// Structural requirements of [`spectral_oracle_linear`].
pub fn check_oracle_class(p: &SpdeProblem, modes: usize) -> Result<()> {
    let reject = |why: &str| Err(Error::OutsideOracleClass(why.to_string()));
    if p.grid.dim() != 1 {
        return reject("dimension must be 1");
    }
    if !p.a.is_identity() {
        return reject("coefficient must be the identity");
    }
    if !(p.f.is_state_independent() && p.g.is_state_independent() && p.h.is_state_independent()) {
        return reject("f, g and h must not depend on the solution");
    }
    if p.obstacle.is_some() {
        return reject("no obstacle allowed");
    }
    if !matches!(p.boundary, Boundary::Zero) {
        return reject("boundary must be null");
    }
    if modes == 0 || modes > p.grid.interior_count() {
        return Err(Error::InvalidTruncation { requested: modes, available: p.grid.interior_count() });
    }
    Ok(())
}

/// Projects every column of `h` (width per node) onto the sine modes and
/// rejects noise that the modes do not capture.
fn project_h(p: &SpdeProblem, t: f64, sines: &[GridField]) -> Result<Vec<Vec<f64>>> {
    let grid = &p.grid;
    let w = p.h.width();
    let h = p.h.zero_point(t, grid);
    let mut out = vec![vec![0.0; w]; sines.len()];
    for j in 0..w {
        let col = GridField::new((0..grid.node_count()).map(|n| h[n * w + j]).collect());
        let norm = l2_inner(&col, &col, grid)?.sqrt();
        let mut rest = col.clone();
        for (m, s) in sines.iter().enumerate() {
            let c = l2_inner(&col, s, grid)?;
            out[m][j] = c;
            rest = rest.zip_map(s, |a, b| a - c * b);
        }
        let miss = l2_inner(&rest, &rest, grid)?.sqrt();
        if miss > 1e-8 * norm.max(1e-300) && miss > 1e-14 {
            return Err(Error::OutsideOracleClass(format!(
                "noise column {j} is not spanned by the first {} sine modes (residual {miss:e})",
                sines.len()
            )));
        }
    }
    Ok(out)
}

/// Mode-by-mode exact solution along noise path `path`, consuming the same
/// per-step draws as [`super::solve`].
pub fn spectral_oracle_linear(
    problem: &SpdeProblem,
    modes: usize,
    path: u64,
    spectrum: OracleSpectrum,
) -> Result<SolutionPath> {
    check_oracle_class(problem, modes)?;
    let grid = &problem.grid;
    let time = problem.time;
    let dt = time.dt();
    let sines: Vec<GridField> = (1..=modes).map(|m| sine_mode(grid, m)).collect();
    let mu: Vec<f64> = (1..=modes).map(|m| eigenvalue(grid, m, spectrum)).collect();
    let decay: Vec<f64> = mu.iter().map(|m| (-m * dt).exp()).collect();
    let drift: Vec<f64> = mu.iter().map(|m| -(-m * dt).exp_m1() / m).collect();
    let diffusion: Vec<f64> = mu.iter().map(|m| (-(-2.0 * m * dt).exp_m1() / (2.0 * m * dt)).sqrt()).collect();

    let stream = problem.stream(path);
    let n_noise = problem.noise.truncation();
    let mut amp: Vec<f64> = sines.iter().map(|s| l2_inner(&problem.xi, s, grid)).collect::<Result<_>>()?;
    let assemble = |amp: &[f64]| {
        let mut out = vec![0.0; grid.node_count()];
        for (a, s) in amp.iter().zip(&sines) {
            out.iter_mut().zip(s.values()).for_each(|(o, v)| *o += a * v);
        }
        GridField::new(out)
    };
    let mut h_raw = problem.h.zero_point(0.0, grid);
    let mut h_proj = project_h(problem, 0.0, &sines)?;

    let mut levels = vec![assemble(&amp)];
    let mut draws = Vec::with_capacity(time.steps());
    for k in 0..time.steps() {
        let t = time.time(k);
        let db = stream.draws(k as u64, dt, n_noise);
        let mut forcing = GridField::new(problem.f.zero_point(t, grid));
        if !problem.g.is_zero() {
            let div = divergence_term(&eval_g_cells(problem, t, &GridField::zeros(grid))?, grid)?;
            forcing = forcing.zip_map(&div, |a, b| a + b);
        }
        if k > 0 && n_noise > 0 {
            let raw = problem.h.zero_point(t, grid);
            if raw != h_raw {
                h_proj = project_h(problem, t, &sines)?;
                h_raw = raw;
            }
        }
        for m in 0..modes {
            let fm = l2_inner(&forcing, &sines[m], grid)?;
            let noise: f64 = h_proj[m].iter().zip(&db).map(|(c, b)| c * b).sum();
            amp[m] = decay[m] * amp[m] + drift[m] * fm + diffusion[m] * noise;
        }
        levels.push(assemble(&amp));
        draws.push(db);
    }
    Ok(SolutionPath {
        levels,
        time,
        scheme: Scheme::Unconstrained,
        stream,
        draws,
        boundary: vec![0.0; time.steps() + 1],
        obstacle: None,
        dominating: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{NonlinearTerm, Role};
    use crate::grid::{build_grid, TimeGrid};
    use crate::noise::{kl_build, Kernel};
    use crate::operator::CoefficientField;
    use std::f64::consts::PI;

    #[test]
    fn deterministic_mode_decays_exactly() {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let xi = GridField::from_fn_dirichlet(&g, |x| (PI * x[0]).sin());
        let p = SpdeProblem::new(g.clone(), TimeGrid::new(0.5, 10).unwrap(), CoefficientField::identity(), xi, 0);
        let path = spectral_oracle_linear(&p, 31, 0, OracleSpectrum::Continuum).unwrap();
        for (k, l) in path.levels.iter().enumerate() {
            let t = p.time.time(k);
            for n in 0..g.node_count() {
                let exact = (-PI * PI * t).exp() * (PI * g.point(n)[0]).sin();
                assert!((l.values()[n] - exact).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn zero_everything_is_zero() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let xi = GridField::zeros(&g);
        let p = SpdeProblem::new(g, TimeGrid::new(0.5, 10).unwrap(), CoefficientField::identity(), xi, 0);
        let path = spectral_oracle_linear(&p, 15, 0, OracleSpectrum::Discrete).unwrap();
        assert!(path.levels.iter().all(|l| l.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn rejects_problems_outside_the_class() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let xi = GridField::zeros(&g);
        let p = SpdeProblem::new(g.clone(), TimeGrid::new(0.5, 10).unwrap(), CoefficientField::scalar_sin(&[1.0]), xi.clone(), 0);
        assert!(matches!(spectral_oracle_linear(&p, 5, 0, OracleSpectrum::Continuum), Err(Error::OutsideOracleClass(_))));
        let p = SpdeProblem::new(g.clone(), TimeGrid::new(0.5, 10).unwrap(), CoefficientField::identity(), xi.clone(), 0)
            .with_f(NonlinearTerm::sin_reaction(1.0));
        assert!(matches!(spectral_oracle_linear(&p, 5, 0, OracleSpectrum::Continuum), Err(Error::OutsideOracleClass(_))));
        // exponential-kernel noise is not spanned by five sine modes
        let model = kl_build(&Kernel::Exponential { length: 0.2 }, &g, 3).unwrap();
        let h = NonlinearTerm::additive_noise(&model, 1.0);
        let p = SpdeProblem::new(g, TimeGrid::new(0.5, 10).unwrap(), CoefficientField::identity(), xi, 0)
            .with_noise(model)
            .with_h(h);
        assert!(matches!(spectral_oracle_linear(&p, 5, 0, OracleSpectrum::Continuum), Err(Error::OutsideOracleClass(_))));
    }

    #[test]
    fn constant_forcing_reaches_the_steady_state() {
        // u_t = u_xx + 1 has steady state x(1 - x)/2.
        let g = build_grid(1, &[1.0], &[65]).unwrap();
        let xi = GridField::zeros(&g);
        let p = SpdeProblem::new(g.clone(), TimeGrid::new(4.0, 20).unwrap(), CoefficientField::identity(), xi, 0)
            .with_f(NonlinearTerm::constant(Role::F, vec![1.0]));
        let path = spectral_oracle_linear(&p, 63, 0, OracleSpectrum::Discrete).unwrap();
        let last = path.levels.last().unwrap();
        for n in 0..g.node_count() {
            let x = g.point(n)[0];
            assert!((last.values()[n] - x * (1.0 - x) / 2.0).abs() < 1e-10);
        }
    }
}
