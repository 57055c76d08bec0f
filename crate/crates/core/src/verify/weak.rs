use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{cell_pairing, noise_pairing, Operators};
use crate::error::{Error, Result};
use crate::grid::{cell_gradients, l2_inner, l2_norm, GridField, SpatialGrid};
use crate::stepper::{eval_g_cells, ReflectionMeasure, SolutionPath, SpdeProblem};

/// `phi(t, x) = (1 + amp sin(omega t + phase)) prod_a sin(m_a pi x_a / L_a)^power`.
/// Vanishes on the spatial boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunction {
    pub freq: [u32; 2],
    pub power: i32,
    pub amp: f64,
    pub omega: f64,
    pub phase: f64,
}

impl TestFunction {
    /// The zero test function.
    pub fn zero() -> Self {
        Self { freq: [1, 1], power: 1, amp: -1.0, omega: 0.0, phase: PI / 2.0 }
    }

    fn space(&self, x: &[f64], extents: &[f64]) -> f64 {
        x.iter()
            .zip(extents)
            .zip(self.freq)
            .map(|((x, l), m)| (m as f64 * PI * x / l).sin().powi(self.power))
            .product()
    }

    pub fn value(&self, t: f64, x: &[f64], extents: &[f64]) -> f64 {
        (1.0 + self.amp * (self.omega * t + self.phase).sin()) * self.space(x, extents)
    }

    pub fn time_derivative(&self, t: f64, x: &[f64], extents: &[f64]) -> f64 {
        self.amp * self.omega * (self.omega * t + self.phase).cos() * self.space(x, extents)
    }

    fn field(&self, grid: &SpatialGrid, t: f64) -> GridField {
        GridField::from_fn_dirichlet(grid, |x| self.value(t, x, grid.extents()))
    }

    fn derivative_field(&self, grid: &SpatialGrid, t: f64) -> GridField {
        GridField::from_fn_dirichlet(grid, |x| self.time_derivative(t, x, grid.extents()))
    }
}

/// Twelve low-frequency test functions drawn from a seeded generator.
pub fn test_family(dim: usize, seed: u64) -> Vec<TestFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..12)
        .map(|_| {
            let mut freq = [1u32; 2];
            for f in freq.iter_mut().take(dim) {
                *f = rng.random_range(1..=3);
            }
            TestFunction {
                freq,
                power: rng.random_range(1..=2),
                amp: rng.random_range(0.0..0.5),
                omega: rng.random_range(0.5..4.0),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakResidual {
    /// Max over test functions and evaluation times.
    pub max_relative: f64,
    /// Max over evaluation times, per test function.
    pub per_test: Vec<f64>,
}

/// Both sides of the weak formulation along one simulated path:
///
/// `(u_t, phi_t) = (xi, phi_0) + int (u, d_s phi) - int E(u, phi) + int (f, phi)
///  - sum_i int (g_i, d_i phi) + sum_j int (h_j, phi) dB^j + int phi dnu`.
///
/// Implicit quantities (`u` in the time-derivative and form terms, `nu`)
/// are paired with `phi` at the right endpoint of each step, the explicit
/// terms at the left. The residual at time `t` is `|LHS - RHS|` divided by
/// the sum of the absolute values of all terms, floored at `||xi|| ||phi_0||`.
pub fn weak_residual_check(
    path: &SolutionPath,
    nu: &ReflectionMeasure,
    problem: &SpdeProblem,
    tests: &[TestFunction],
    times: &[f64],
) -> Result<WeakResidual> {
    let grid = &problem.grid;
    let time = &problem.time;
    let dt = time.dt();
    if path.levels.len() != time.steps() + 1 || nu.masses.len() != path.levels.len() {
        return Err(Error::ShapeMismatch { expected: time.steps() + 1, found: path.levels.len() });
    }
    let mut ends: Vec<usize> = times.iter().map(|&t| time.steps_until(t)).collect::<Result<_>>()?;
    ends.sort_unstable();
    let last = ends.iter().copied().max().unwrap_or(0);
    let ops = Operators::new(problem)?;

    // Per-step data shared by every test function.
    let mut f_levels = Vec::with_capacity(last);
    let mut g_levels = Vec::with_capacity(last);
    let mut h_levels = Vec::with_capacity(last);
    for k in 0..last {
        let t = time.time(k);
        let u = &path.levels[k];
        let grad = if problem.f.is_state_independent() && problem.h.is_state_independent() {
            vec![0.0; grid.node_count() * grid.dim()]
        } else {
            crate::grid::nodal_gradients(u, grid)?
        };
        f_levels.push(GridField::new(problem.f.eval_field(t, grid, u.values(), &grad)));
        g_levels.push(eval_g_cells(problem, t, u)?);
        h_levels.push(problem.h.eval_field(t, grid, u.values(), &grad));
    }

    let mut per_test = Vec::with_capacity(tests.len());
    for test in tests {
        let phi0 = test.field(grid, 0.0);
        let init = l2_inner(&problem.xi, &phi0, grid)?;
        // Floor for test functions nearly orthogonal to the solution.
        let floor = l2_norm(&problem.xi, grid)? * l2_norm(&phi0, grid)?;
        let mut sums = [0.0f64; 6];
        let mut worst: f64 = 0.0;
        let mut phi_k = phi0;
        let mut k = 0;
        for &n in &ends {
            while k < n {
                let phi_next = test.field(grid, time.time(k + 1));
                let dphi_next = test.derivative_field(grid, time.time(k + 1));
                let u_next = &path.levels[k + 1];
                let m_next = path.boundary[k + 1];
                sums[0] += dt * l2_inner(u_next, &dphi_next, grid)?;
                sums[1] -= dt * ops.energy(k + 1, u_next, m_next, &phi_next, 0.0)?;
                sums[2] += dt * l2_inner(&f_levels[k], &phi_k, grid)?;
                sums[3] -= dt * cell_pairing(&g_levels[k], &cell_gradients(&phi_k, grid)?, grid);
                sums[4] += noise_pairing(&h_levels[k], problem.h.width(), &path.draws[k], &phi_k, grid);
                sums[5] += nu.masses[k + 1].values().iter().zip(phi_next.values()).map(|(a, b)| a * b).sum::<f64>();
                phi_k = phi_next;
                k += 1;
            }
            let lhs = l2_inner(&path.levels[n], &phi_k, grid)?;
            let rhs = init + sums.iter().sum::<f64>();
            let scale = (lhs.abs() + init.abs() + sums.iter().map(|s| s.abs()).sum::<f64>()).max(floor);
            let r = if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 };
            worst = worst.max(r);
        }
        per_test.push(worst);
    }
    let max_relative = per_test.iter().copied().fold(0.0, f64::max);
    Ok(WeakResidual { max_relative, per_test })
}
