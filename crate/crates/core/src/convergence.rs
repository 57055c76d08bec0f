//! Strong convergence in `L^2(0, T; L^2)` against a fine reference driven by
//! the same Brownian path.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{l2_norm, GridField};
use crate::montecarlo::run_paths;
use crate::stepper::{solve, spectral_oracle_linear, OracleSpectrum, Scheme, SolutionPath, SpdeProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reference {
    /// Exact mode-by-mode solution on the reference time grid.
    Oracle { modes: usize, spectrum: OracleSpectrum },
    /// The scheme itself on the reference time grid.
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub dt: f64,
    pub steps: usize,
    pub substeps: u32,
    /// `(E sum_k dt ||u_k - ref(t_k)||^2)^(1/2)`.
    pub rms_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub reference: Reference,
    pub reference_dt: f64,
    pub levels: Vec<ConvergenceLevel>,
    /// Least-squares slope of `log error` against `log dt`.
    pub order: f64,
}

/// Runs the scheme at every `dt` in `dts` against a reference on the grid
/// `min(dts) / refinement`. `build(steps, substeps)` must return the same
/// problem on `steps` time steps with noise aggregated from `substeps`
/// reference increments, so that all levels share one Brownian path.
pub fn strong_convergence(
    build: &(dyn Fn(usize, u32) -> Result<SpdeProblem> + Sync),
    horizon: f64,
    dts: &[f64],
    refinement: u32,
    reference: Reference,
    scheme: Scheme,
    paths: u64,
    parallel: bool,
) -> Result<ConvergenceStudy> {
    if dts.len() < 2 || refinement == 0 {
        return Err(Error::InvalidProblem("need at least two time steps and a positive refinement".into()));
    }
    let fine_dt = dts.iter().copied().fold(f64::INFINITY, f64::min) / refinement as f64;
    let ref_steps = steps_for(horizon, fine_dt)?;
    let mut levels = Vec::with_capacity(dts.len());
    for &dt in dts {
        let steps = steps_for(horizon, dt)?;
        if ref_steps % steps != 0 {
            return Err(Error::InvalidProblem(format!("dt = {dt} is not a multiple of the reference step {fine_dt}")));
        }
        levels.push((dt, steps, (ref_steps / steps) as u32));
    }
    let ref_problem = build(ref_steps, 1)?;
    let problems = levels.iter().map(|&(_, steps, r)| build(steps, r)).collect::<Result<Vec<_>>>()?;
    for p in &problems {
        p.validate()?;
    }
    let per_path = run_paths(paths, parallel, |path| {
        let r = match reference {
            Reference::Oracle { modes, spectrum } => spectral_oracle_linear(&ref_problem, modes, path, spectrum)?,
            Reference::Fine => solve(&ref_problem, scheme, path)?.0,
        };
        problems
            .iter()
            .zip(&levels)
            .map(|(p, &(dt, _, sub))| {
                let (u, _) = solve(p, scheme, path)?;
                squared_error(&u, &r, sub as usize, dt, p)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let n = per_path.len().max(1) as f64;
    let levels: Vec<ConvergenceLevel> = levels
        .iter()
        .enumerate()
        .map(|(i, &(dt, steps, substeps))| ConvergenceLevel {
            dt,
            steps,
            substeps,
            rms_error: (per_path.iter().map(|e| e[i]).sum::<f64>() / n).sqrt(),
        })
        .collect();
    let order = fitted_order(&levels);
    Ok(ConvergenceStudy { reference, reference_dt: fine_dt, levels, order })
}

fn steps_for(horizon: f64, dt: f64) -> Result<usize> {
    let s = horizon / dt;
    if !(s.is_finite() && s >= 1.0) || (s - s.round()).abs() > 1e-6 * s {
        return Err(Error::InvalidProblem(format!("dt = {dt} does not divide the horizon {horizon}")));
    }
    Ok(s.round() as usize)
}

fn squared_error(u: &SolutionPath, r: &SolutionPath, stride: usize, dt: f64, p: &SpdeProblem) -> Result<f64> {
    let mut e = 0.0;
    for k in 0..p.time.steps() {
        let d: GridField = u.levels[k].zip_map(&r.levels[k * stride], |a, b| a - b);
        e += dt * l2_norm(&d, &p.grid)?.powi(2);
    }
    Ok(e)
}

fn fitted_order(levels: &[ConvergenceLevel]) -> f64 {
    let pts: Vec<(f64, f64)> = levels.iter().map(|l| (l.dt.ln(), l.rms_error.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::NonlinearTerm;
    use crate::grid::{build_grid, TimeGrid};
    use crate::noise::{kl_build, Kernel};
    use crate::operator::CoefficientField;
    use std::f64::consts::PI;

    fn build(steps: usize, substeps: u32) -> Result<SpdeProblem> {
        let g = build_grid(1, &[1.0], &[17])?;
        let model = kl_build(&Kernel::BrownianBridge, &g, 8)?;
        let h = NonlinearTerm::additive_noise(&model, 1.0);
        let xi = GridField::from_fn_dirichlet(&g, |x| (PI * x[0]).sin());
        Ok(SpdeProblem::new(g, TimeGrid::new(0.2, steps)?, CoefficientField::identity(), xi, 5)
            .with_noise(model)
            .with_h(h)
            .with_substeps(substeps))
    }

    #[test]
    fn order_of_exact_power_law() {
        let lv = |dt: f64| ConvergenceLevel { dt, steps: 1, substeps: 1, rms_error: 3.0 * dt.powf(0.7) };
        let o = fitted_order(&[lv(0.1), lv(0.05), lv(0.025)]);
        assert!((o - 0.7).abs() < 1e-12);
    }

    #[test]
    fn non_dividing_step_is_rejected() {
        let e = strong_convergence(&build, 0.2, &[0.03, 0.02], 2, Reference::Fine, Scheme::Unconstrained, 1, false);
        assert!(e.is_err());
    }

    #[test]
    fn errors_shrink_against_both_references() {
        for reference in [Reference::Fine, Reference::Oracle { modes: 15, spectrum: OracleSpectrum::Continuum }] {
            let s = strong_convergence(&build, 0.2, &[0.02, 0.01, 0.005], 4, reference, Scheme::Unconstrained, 8, true)
                .unwrap();
            assert!(s.levels.windows(2).all(|w| w[1].rms_error < w[0].rms_error), "{s:?}");
            assert!(s.order > 0.3, "{s:?}");
        }
    }
}
