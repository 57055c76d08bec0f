use serde::Serialize;

use super::report::{CheckEntry, Status};
use crate::error::{Error, Result};
use crate::grid::{nodal_gradients, GridField};
use crate::montecarlo::{run_paths, MeanEstimate};
use crate::stepper::{solve, ReflectionMeasure, Scheme, SolutionPath, SpdeProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonOutcome {
    /// `(path, step, node)` triples with `u1 - u2 > tol`.
    pub violations: usize,
    /// Largest `u1 - u2` seen, over every path.
    pub max_excess: f64,
    /// Ordered initial data, obstacles and drifts on every path.
    pub hypotheses_hold: bool,
    pub mean_mass: (f64, f64),
    /// Paths where the lower solution's reflection mass is at least the upper one's.
    pub mass_ordered_paths: usize,
    pub entry: CheckEntry,
}

pub(crate) fn ensure_coupled(p1: &SpdeProblem, p2: &SpdeProblem) -> Result<()> {
    let why = if p1.seed != p2.seed {
        format!("seeds {} and {}", p1.seed, p2.seed)
    } else if p1.substeps != p2.substeps {
        format!("substeps {} and {}", p1.substeps, p2.substeps)
    } else if p1.time != p2.time {
        "different time grids".to_string()
    } else if p1.grid.nodes_per_axis() != p2.grid.nodes_per_axis() || p1.grid.extents() != p2.grid.extents() {
        "different spatial grids".to_string()
    } else if p1.noise.truncation() != p2.noise.truncation() {
        format!("truncations {} and {}", p1.noise.truncation(), p2.noise.truncation())
    } else {
        return Ok(());
    };
    Err(Error::Uncoupled(why))
}

/// Nodewise ordering `u1 <= u2` on coupled paths. Refuses problems that do
/// not share the noise.
pub fn comparison_check(
    p1: &SpdeProblem,
    p2: &SpdeProblem,
    scheme: Scheme,
    paths: u64,
    parallel: bool,
) -> Result<ComparisonOutcome> {
    ensure_coupled(p1, p2)?;
    p1.validate()?;
    p2.validate()?;
    let per_path = run_paths(paths, parallel, |p| {
        let (a, nu_a) = solve(p1, scheme, p)?;
        let (b, nu_b) = solve(p2, scheme, p)?;
        let scale = a.levels.iter().chain(&b.levels).map(GridField::sup_norm).fold(0.0, f64::max);
        let tol = 1e-9 + 10.0 * f64::EPSILON * scale;
        let mut count = 0usize;
        let mut excess = f64::NEG_INFINITY;
        for (u1, u2) in a.levels.iter().zip(&b.levels) {
            for (x, y) in u1.values().iter().zip(u2.values()) {
                excess = excess.max(x - y);
                if x - y > tol {
                    count += 1;
                }
            }
        }
        let hyp = hypotheses(p1, p2, &a, &b)?;
        Ok((count, excess, hyp, nu_a.total_mass(), nu_b.total_mass()))
    })?;
    let violations: usize = per_path.iter().map(|r| r.0).sum();
    let excess: Vec<f64> = per_path.iter().map(|r| r.1).collect();
    let max_excess = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hypotheses_hold = per_path.iter().all(|r| r.2);
    let m1: Vec<f64> = per_path.iter().map(|r| r.3).collect();
    let m2: Vec<f64> = per_path.iter().map(|r| r.4).collect();
    let mass_ordered_paths = per_path.iter().filter(|r| r.3 >= r.4).count();
    let mean_mass = (MeanEstimate::from_samples(&m1).mean, MeanEstimate::from_samples(&m2).mean);
    let status = if violations == 0 { Status::Pass } else { Status::Fail };
    let note = match (violations, hypotheses_hold) {
        (0, _) => String::new(),
        (_, true) => format!("{violations} ordering violations with ordered data"),
        (_, false) => format!("{violations} ordering violations; data are not ordered"),
    };
    let entry = CheckEntry::from_samples("comparison", status, excess)
        .with("violations", violations as f64)
        .with("max_excess", max_excess)
        .with("hypotheses_hold", f64::from(u8::from(hypotheses_hold)))
        .with("mass_lower", mean_mass.0)
        .with("mass_upper", mean_mass.1)
        .with("mass_ordered_paths", mass_ordered_paths as f64)
        .with_note(note);
    Ok(ComparisonOutcome { violations, max_excess, hypotheses_hold, mean_mass, mass_ordered_paths, entry })
}

/// `xi1 <= xi2`, `S1 <= S2` on every level, and `f1 <= f2` evaluated along
/// the upper solution.
fn hypotheses(p1: &SpdeProblem, p2: &SpdeProblem, a: &SolutionPath, b: &SolutionPath) -> Result<bool> {
    let grid = &p1.grid;
    if p1.xi.values().iter().zip(p2.xi.values()).any(|(x, y)| x > y) {
        return Ok(false);
    }
    match (&a.obstacle, &b.obstacle) {
        (Some(s1), Some(s2)) => {
            let interior = grid.interior_nodes();
            for (l1, l2) in s1.iter().zip(s2) {
                if interior.iter().any(|&i| l1.values()[i] > l2.values()[i]) {
                    return Ok(false);
                }
            }
        }
        (Some(_), None) => return Ok(false),
        _ => {}
    }
    for k in 0..p1.time.steps() {
        let t = p1.time.time(k);
        let u = &b.levels[k];
        let grad = nodal_gradients(u, grid)?;
        let f1 = p1.f.eval_field(t, grid, u.values(), &grad);
        let f2 = p2.f.eval_field(t, grid, u.values(), &grad);
        if grid.interior_nodes().iter().any(|&i| f1[i] > f2[i]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `|sum nu (u - S)| / (total mass * ||u - S||_inf)` over the interior.
/// Projected masses are paired with the level they constrain, penalized
/// masses with the level that produced them.
pub fn skorohod_residual(path: &SolutionPath, nu: &ReflectionMeasure, interior: &[usize]) -> f64 {
    let Some(s) = &path.obstacle else { return 0.0 };
    let shift = usize::from(!matches!(path.scheme, Scheme::Penalized { .. }));
    let mut pairing = 0.0;
    let mut mass = 0.0;
    let mut gap: f64 = 0.0;
    for (k, (u, sk)) in path.levels.iter().zip(s).enumerate() {
        for &i in interior {
            gap = gap.max((u.values()[i] - sk.values()[i]).abs());
        }
        if k + 1 >= nu.masses.len() {
            continue;
        }
        let m = &nu.masses[k + 1];
        let j = k + shift;
        for &i in interior {
            let g = path.levels[j].values()[i] - s[j].values()[i];
            pairing += m.values()[i] * g;
            mass += m.values()[i];
        }
    }
    if mass == 0.0 || gap == 0.0 {
        0.0
    } else {
        pairing.abs() / (mass * gap)
    }
}

/// Largest `|min(u - S, r)|` over steps and interior nodes, with `r` the
/// mass density `nu / weight` of the step.
pub fn complementarity_residual(path: &SolutionPath, nu: &ReflectionMeasure, grid: &crate::grid::SpatialGrid) -> f64 {
    let Some(s) = &path.obstacle else { return 0.0 };
    let mut worst: f64 = 0.0;
    for k in 1..path.levels.len() {
        for &i in grid.interior_nodes() {
            let gap = path.levels[k].values()[i] - s[k].values()[i];
            let r = nu.masses[k].values()[i] / grid.weight(i);
            worst = worst.max(gap.min(r).abs());
        }
    }
    worst
}

/// Skorohod residual over `paths` paths. The projected scheme must meet
/// `tolerance` on every path; for the penalty scheme the residual decays
/// with `n` and is reported only.
pub fn skorohod_check(problem: &SpdeProblem, scheme: Scheme, paths: u64, parallel: bool, tolerance: f64) -> Result<CheckEntry> {
    problem.validate()?;
    if problem.obstacle.is_none() || matches!(scheme, Scheme::Unconstrained) {
        return Ok(CheckEntry::disabled("skorohod", "needs an obstacle and an obstacle scheme"));
    }
    let grid = &problem.grid;
    let per_path = run_paths(paths, parallel, |p| {
        let (path, nu) = solve(problem, scheme, p)?;
        Ok((skorohod_residual(&path, &nu, grid.interior_nodes()), complementarity_residual(&path, &nu, grid), nu.total_mass()))
    })?;
    let res: Vec<f64> = per_path.iter().map(|r| r.0).collect();
    let comp = per_path.iter().map(|r| r.1).fold(0.0, f64::max);
    let max = res.iter().copied().fold(0.0, f64::max);
    let status = match scheme {
        Scheme::Projected if max <= tolerance && comp <= tolerance => Status::Pass,
        Scheme::Projected => Status::Fail,
        _ => Status::Informational,
    };
    let exceptions = per_path.iter().filter(|r| r.0 > tolerance || r.1 > tolerance).count();
    Ok(CheckEntry::from_samples("skorohod", status, res)
        .with("complementarity_max", comp)
        .with("exceptions", exceptions as f64)
        .with("mean_mass", MeanEstimate::from_samples(&per_path.iter().map(|r| r.2).collect::<Vec<_>>()).mean)
        .with_note(scheme.label()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{NonlinearTerm, ObstacleSpec, Role};
    use crate::grid::{build_grid, TimeGrid};
    use crate::noise::{kl_build, Kernel};
    use crate::operator::CoefficientField;
    use std::f64::consts::PI;

    fn base(shift: f64, s_shift: f64, seed: u64) -> SpdeProblem {
        let g = build_grid(1, &[1.0], &[33]).unwrap();
        let model = kl_build(&Kernel::BrownianBridge, &g, 8).unwrap();
        let h = NonlinearTerm::additive_noise(&model, 0.5);
        let xi = GridField::from_fn_dirichlet(&g, |x| (0.5 + shift) * (PI * x[0]).sin());
        SpdeProblem::new(g, TimeGrid::new(0.25, 100).unwrap(), CoefficientField::identity(), xi, seed)
            .with_noise(model)
            .with_h(h)
            .with_f(NonlinearTerm::constant(Role::F, vec![-2.0]))
            .with_obstacle(ObstacleSpec::direct("s", move |_, x| (0.2 + s_shift) * (PI * x[0]).sin()))
    }

    #[test]
    fn identical_problems_have_no_violations() {
        let p = base(0.0, 0.0, 1);
        let o = comparison_check(&p, &p, Scheme::Projected, 5, false).unwrap();
        assert_eq!(o.violations, 0);
        assert_eq!(o.max_excess, 0.0);
    }

    #[test]
    fn ordered_data_give_ordered_solutions() {
        let o = comparison_check(&base(0.0, 0.0, 1), &base(0.1, 0.05, 1), Scheme::Projected, 20, true).unwrap();
        assert!(o.hypotheses_hold);
        assert_eq!(o.violations, 0, "{:?}", o.entry);
        assert_eq!(o.entry.status, Status::Pass);
    }

    #[test]
    fn uncoupled_problems_are_refused() {
        assert!(matches!(
            comparison_check(&base(0.0, 0.0, 1), &base(0.0, 0.0, 2), Scheme::Projected, 1, false),
            Err(Error::Uncoupled(_))
        ));
    }

    #[test]
    fn reversed_drift_is_detected() {
        let p2 = base(0.0, 0.0, 1);
        let p1 = base(0.0, 0.0, 1).with_f(NonlinearTerm::constant(Role::F, vec![-1.0]));
        let o = comparison_check(&p1, &p2, Scheme::Unconstrained, 5, false).unwrap();
        assert!(!o.hypotheses_hold);
        assert!(o.violations > 0);
        assert_eq!(o.entry.status, Status::Fail);
    }

    #[test]
    fn projected_skorohod_residual_is_exact() {
        let e = skorohod_check(&base(0.0, 0.0, 3), Scheme::Projected, 10, true, 1e-10).unwrap();
        assert_eq!(e.status, Status::Pass, "{e:?}");
        assert!(e.detail("mean_mass").unwrap() > 0.0);
    }

    #[test]
    fn penalty_residual_decays_with_n() {
        let p = base(0.0, 0.0, 3);
        let r = |n| skorohod_check(&p, Scheme::Penalized { n }, 4, false, 1e-10).unwrap().residual.mean;
        let (a, b) = (r(1e2), r(1e3));
        assert!(b < a / 2.0, "{a} {b}");
    }

    #[test]
    fn no_mass_means_zero_residual() {
        let p = base(0.0, -2.0, 3);
        let (path, nu) = solve(&p, Scheme::Projected, 0).unwrap();
        assert_eq!(nu.total_mass(), 0.0);
        assert_eq!(skorohod_residual(&path, &nu, p.grid.interior_nodes()), 0.0);
    }
}
