use serde::Serialize;

use super::report::{CheckEntry, Status};
use crate::coefficients::validate_assumptions;
use crate::error::Result;
use crate::grid::{gradient_norm_sq, l2_inner, GridField};
use crate::montecarlo::{run_paths, MeanEstimate};
use crate::stepper::{solve, Scheme, SpdeProblem};

/// Monte Carlo estimate of `E ||u||_T^2` against the data functional
/// `||xi||^2 + int (||f^0||^2 + ||g^0||^2 + ||h^0||^2)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub lhs: MeanEstimate,
    #[serde(skip)]
    pub samples: Vec<f64>,
    pub rhs: f64,
    /// `E lhs / rhs`; zero when both sides vanish.
    pub ratio: f64,
}

/// `sup_k ||u_k||^2 + sum_{k>=1} dt ||grad u_k||^2`.
pub fn trajectory_energy(levels: &[GridField], problem: &SpdeProblem) -> Result<f64> {
    let grid = &problem.grid;
    let mut sup: f64 = 0.0;
    let mut grad = 0.0;
    for (k, u) in levels.iter().enumerate() {
        sup = sup.max(l2_inner(u, u, grid)?);
        if k > 0 {
            grad += problem.time.dt() * gradient_norm_sq(u, grid)?;
        }
    }
    Ok(sup + grad)
}

pub fn energy_estimate(problem: &SpdeProblem, scheme: Scheme, paths: u64, parallel: bool) -> Result<EnergyEstimate> {
    problem.validate()?;
    let samples = run_paths(paths, parallel, |p| {
        let (path, _) = solve(problem, scheme, p)?;
        trajectory_energy(&path.levels, problem)
    })?;
    let lhs = MeanEstimate::from_samples(&samples);
    let rhs = validate_assumptions(problem).integrability_l2;
    let ratio = if rhs > 0.0 {
        lhs.mean / rhs
    } else if lhs.mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(EnergyEstimate { lhs, samples, rhs, ratio })
}

/// Ratio on two grid levels. The constant is unknown, so a finite ratio
/// that moves by at most `tolerance` (relative) between levels is
/// informational; a blow-up or an unstable ratio fails.
pub fn energy_estimate_check(
    coarse: &SpdeProblem,
    fine: &SpdeProblem,
    scheme: Scheme,
    paths: u64,
    parallel: bool,
    tolerance: f64,
) -> Result<CheckEntry> {
    let a = energy_estimate(coarse, scheme, paths, parallel)?;
    let b = energy_estimate(fine, scheme, paths, parallel)?;
    let finite = a.ratio.is_finite() && b.ratio.is_finite();
    let change = relative_change(a.ratio, b.ratio);
    // Radius of the ratio, propagated from the LHS estimates.
    let slack = if a.rhs > 0.0 && b.rhs > 0.0 { a.lhs.radius / a.rhs + b.lhs.radius / b.rhs } else { 0.0 };
    let stable = (a.ratio - b.ratio).abs() <= tolerance * a.ratio.abs().max(b.ratio.abs()) + slack;
    let status = if finite && stable { Status::Informational } else { Status::Fail };
    let note = if !finite {
        "ratio is not finite".to_string()
    } else if !stable {
        format!("ratio moved by {:.1}% between grid levels", 100.0 * change)
    } else {
        "constant unspecified; ratio reported for information".to_string()
    };
    Ok(CheckEntry::from_samples("energy_estimate", status, b.samples.clone())
        .with("ratio_coarse", a.ratio)
        .with("ratio_fine", b.ratio)
        .with("relative_change", change)
        .with("lhs_coarse", a.lhs.mean)
        .with("rhs_coarse", a.rhs)
        .with("rhs_fine", b.rhs)
        .with_note(note))
}

pub(crate) fn relative_change(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::NonlinearTerm;
    use crate::grid::{build_grid, TimeGrid};
    use crate::noise::{kl_build, Kernel};
    use crate::operator::CoefficientField;
    use std::f64::consts::PI;

    fn additive(nodes: usize, steps: usize, scale: f64) -> SpdeProblem {
        let g = build_grid(1, &[1.0], &[nodes]).unwrap();
        let xi = GridField::from_fn_dirichlet(&g, |x| scale * (PI * x[0]).sin());
        let model = kl_build(&Kernel::BrownianBridge, &g, 8).unwrap();
        let h = NonlinearTerm::additive_noise(&model, scale);
        SpdeProblem::new(g, TimeGrid::new(0.5, steps).unwrap(), CoefficientField::identity(), xi, 3)
            .with_noise(model)
            .with_h(h)
    }

    #[test]
    fn zero_data_gives_zero_on_both_sides() {
        let g = build_grid(1, &[1.0], &[17]).unwrap();
        let p = SpdeProblem::new(g.clone(), TimeGrid::new(0.5, 20).unwrap(), CoefficientField::identity(), GridField::zeros(&g), 0);
        let e = energy_estimate(&p, Scheme::Unconstrained, 3, false).unwrap();
        assert_eq!((e.lhs.mean, e.rhs, e.ratio), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ratio_is_homogeneous_in_the_data() {
        let a = energy_estimate(&additive(17, 40, 1.0), Scheme::Unconstrained, 20, false).unwrap();
        let b = energy_estimate(&additive(17, 40, 3.0), Scheme::Unconstrained, 20, false).unwrap();
        assert!((a.ratio - b.ratio).abs() < 1e-10 * a.ratio);
    }

    #[test]
    fn additive_heat_ratio_is_stable_under_refinement() {
        let e = energy_estimate_check(&additive(17, 50, 1.0), &additive(33, 200, 1.0), Scheme::Unconstrained, 100, true, 0.2)
            .unwrap();
        assert_eq!(e.status, Status::Informational, "{e:?}");
        assert!(e.detail("ratio_fine").unwrap().is_finite());
    }
}
