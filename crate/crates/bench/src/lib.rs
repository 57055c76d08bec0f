//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use ospde_core::grid::build_grid;
use ospde_core::noise::kl_build;
use ospde_core::{CoefficientField, GridField, Kernel, NonlinearTerm, ObstacleSpec, SpdeProblem, TimeGrid};

/// Heat equation on the unit square or interval with additive
/// Brownian-bridge noise and the obstacle `0.2 prod sin(pi x_a)`.
pub fn obstacle_problem(dim: usize, nodes: usize, steps: usize, modes: usize) -> SpdeProblem {
    let extents = vec![1.0; dim];
    let grid = build_grid(dim, &extents, &vec![nodes; dim]).expect("valid grid");
    let bump = |x: &[f64]| x.iter().map(|v| (PI * v).sin()).product::<f64>();
    let xi = GridField::from_fn_dirichlet(&grid, |x| 0.5 * bump(x));
    let model = kl_build(&Kernel::BrownianBridge, &grid, modes).expect("noise model");
    let h = NonlinearTerm::additive_noise(&model, 0.3);
    SpdeProblem::new(grid, TimeGrid::new(0.1, steps).expect("time grid"), CoefficientField::identity(), xi, 1)
        .with_noise(model)
        .with_h(h)
        .with_obstacle(ObstacleSpec::direct("bump", move |_, x| 0.2 * bump(x)))
}
