//! Pathwise and Monte Carlo checks of the properties the solver must
//! reproduce. Every estimate carries a 95% confidence radius, and an
//! inequality only fails when it is violated by more than that radius.

mod comparison;
mod energy;
mod ito;
mod maxprinciple;
mod report;
mod weak;

pub use comparison::{comparison_check, complementarity_residual, skorohod_check, skorohod_residual, ComparisonOutcome};
pub use energy::{energy_estimate, energy_estimate_check, EnergyEstimate};
pub use ito::{ito_balance, ito_balance_check, ItoBalance};
pub use maxprinciple::{maximum_principle_check, maximum_principle_estimate, MaxPrincipleEstimate};
pub use report::{CheckEntry, GridMetadata, Status, VerificationReport};
pub use weak::{test_family, weak_residual_check, TestFunction, WeakResidual};

use crate::error::Result;
use crate::grid::{GridField, SpatialGrid};
use crate::operator::{assemble_stiffness, StiffnessOperator};
use crate::stepper::SpdeProblem;

impl GridMetadata {
    pub fn of(problem: &SpdeProblem) -> Self {
        Self {
            dim: problem.grid.dim(),
            nodes_per_axis: problem.grid.nodes_per_axis().to_vec(),
            extents: problem.grid.extents().to_vec(),
            steps: problem.time.steps(),
            horizon: problem.time.horizon(),
        }
    }
}

/// Stiffness operators along the time grid, assembled once when the
/// coefficient is time independent.
pub(crate) struct Operators<'a> {
    problem: &'a SpdeProblem,
    fixed: Option<StiffnessOperator>,
}

impl<'a> Operators<'a> {
    pub(crate) fn new(problem: &'a SpdeProblem) -> Result<Self> {
        let fixed = if problem.a.is_time_independent() {
            Some(assemble_stiffness(&problem.a, 0.0, &problem.grid)?)
        } else {
            None
        };
        Ok(Self { problem, fixed })
    }

    /// `E_{t_k}(u - mu, v - mv)` on interior values.
    pub(crate) fn energy(&self, k: usize, u: &GridField, mu: f64, v: &GridField, mv: f64) -> Result<f64> {
        let grid = &self.problem.grid;
        let ui: Vec<f64> = u.interior(grid).iter().map(|x| x - mu).collect();
        let vi: Vec<f64> = v.interior(grid).iter().map(|x| x - mv).collect();
        match &self.fixed {
            Some(op) => Ok(op.energy(&ui, &vi)),
            None => Ok(assemble_stiffness(&self.problem.a, self.problem.time.time(k), grid)?.energy(&ui, &vi)),
        }
    }

    pub(crate) fn at(&self, k: usize) -> Result<StiffnessOperator> {
        match &self.fixed {
            Some(op) => Ok(op.clone()),
            None => assemble_stiffness(&self.problem.a, self.problem.time.time(k), &self.problem.grid),
        }
    }
}

/// `sum_c vol_c g_c . grad(phi)_c` for per-cell `g` and cell gradients of `phi`.
pub(crate) fn cell_pairing(g: &[f64], grad: &[f64], grid: &SpatialGrid) -> f64 {
    let d = grid.dim();
    grid.cells()
        .iter()
        .enumerate()
        .map(|(c, cell)| cell.volume * (0..d).map(|a| g[c * d + a] * grad[c * d + a]).sum::<f64>())
        .sum()
}

/// Sum over nodes of `h_j(node) dB^j` paired with `phi`, lumped.
pub(crate) fn noise_pairing(h: &[f64], width: usize, draws: &[f64], phi: &GridField, grid: &SpatialGrid) -> f64 {
    if width == 0 {
        return 0.0;
    }
    phi.values()
        .iter()
        .zip(grid.weights())
        .enumerate()
        .map(|(n, (p, w))| w * p * h[n * width..(n + 1) * width].iter().zip(draws).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}
