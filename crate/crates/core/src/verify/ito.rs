use serde::Serialize;

use super::report::{CheckEntry, Status};
use super::{cell_pairing, noise_pairing, Operators};
use crate::error::{Error, Result};
use crate::grid::{cell_gradients, l2_inner, nodal_gradients, GridField};
use crate::montecarlo::{run_paths, MeanEstimate};
use crate::stepper::{eval_g_cells, solve, Boundary, ReflectionMeasure, Scheme, SolutionPath, SpdeProblem};

/// Per-path sides of the energy identity for `Phi(y) = y^2`:
///
/// `||u_T||^2 + 2 int E(u, u) = ||xi||^2 + 2 int (f, u) - 2 sum_i int (g_i, d_i u)
///  + sum_j int ||h_j||^2 + 2 int u dnu + 2 sum_j int (u, h_j) dB^j`.
///
/// The stochastic integral has zero mean; keeping it pathwise makes it a
/// control variate for the other terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItoBalance {
    pub lhs: f64,
    pub rhs: f64,
    /// `2 int u dnu`.
    pub contact: f64,
    /// The stochastic integral included in `rhs`.
    pub martingale: f64,
}

pub fn ito_balance(problem: &SpdeProblem, path: &SolutionPath, nu: &ReflectionMeasure) -> Result<ItoBalance> {
    if !matches!(problem.boundary, Boundary::Zero) {
        return Err(Error::InvalidProblem("the energy balance is checked under the null boundary condition".into()));
    }
    let grid = &problem.grid;
    let time = &problem.time;
    let dt = time.dt();
    let ops = Operators::new(problem)?;
    let w = problem.h.width();
    let mut form = 0.0;
    let mut drift = 0.0;
    let mut div = 0.0;
    let mut ito = 0.0;
    let mut contact = 0.0;
    let mut martingale = 0.0;
    for k in 0..time.steps() {
        let t = time.time(k);
        let u = &path.levels[k];
        let next = &path.levels[k + 1];
        form += dt * ops.energy(k + 1, next, 0.0, next, 0.0)?;
        let grad = nodal_gradients(u, grid)?;
        if !problem.f.is_zero() {
            let f = GridField::new(problem.f.eval_field(t, grid, u.values(), &grad));
            drift += dt * l2_inner(&f, u, grid)?;
        }
        if !problem.g.is_zero() {
            div += dt * cell_pairing(&eval_g_cells(problem, t, u)?, &cell_gradients(u, grid)?, grid);
        }
        if w > 0 {
            let h = problem.h.eval_field(t, grid, u.values(), &grad);
            ito += dt * h.chunks(w).zip(grid.weights()).map(|(c, wt)| wt * c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
            martingale += noise_pairing(&h, w, &path.draws[k], u, grid);
        }
        contact += nu.masses[k + 1].values().iter().zip(next.values()).map(|(m, v)| m * v).sum::<f64>();
    }
    let last = path.final_level();
    let lhs = l2_inner(last, last, grid)? + 2.0 * form;
    let rhs = l2_inner(&problem.xi, &problem.xi, grid)? + 2.0 * drift - 2.0 * div + ito + 2.0 * contact + 2.0 * martingale;
    Ok(ItoBalance { lhs, rhs, contact: 2.0 * contact, martingale: 2.0 * martingale })
}

/// Expected-value balance over `paths` paths. Passes when
/// `|E(lhs - rhs)| <= tolerance E lhs` up to the confidence radius.
pub fn ito_balance_check(
    problem: &SpdeProblem,
    scheme: Scheme,
    paths: u64,
    parallel: bool,
    tolerance: f64,
) -> Result<CheckEntry> {
    problem.validate()?;
    let per_path = run_paths(paths, parallel, |p| {
        let (path, nu) = solve(problem, scheme, p)?;
        ito_balance(problem, &path, &nu)
    })?;
    let diff: Vec<f64> = per_path.iter().map(|b| b.lhs - b.rhs).collect();
    let lhs: Vec<f64> = per_path.iter().map(|b| b.lhs).collect();
    let contact: Vec<f64> = per_path.iter().map(|b| b.contact).collect();
    let d = MeanEstimate::from_samples(&diff);
    let l = MeanEstimate::from_samples(&lhs);
    let c = MeanEstimate::from_samples(&contact);
    let relative = if l.mean != 0.0 { d.mean.abs() / l.mean.abs() } else { d.mean.abs() };
    let pass = d.mean.abs() <= tolerance * l.mean.abs() + d.radius;
    let negative = contact.iter().filter(|&&v| v < 0.0).count();
    Ok(CheckEntry::from_samples("ito_balance", if pass { Status::Pass } else { Status::Fail }, diff)
        .with("relative", relative)
        .with("lhs", l.mean)
        .with("rhs", l.mean - d.mean)
        .with("contact_mean", c.mean)
        .with("contact_negative_paths", negative as f64)
        .with_note(format!("tolerance {tolerance}")))
}
