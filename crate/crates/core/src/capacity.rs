//! Deterministic parabolic potentials: smallest potentials above space-time
//! compacts, their measures, and the capacity they define.
//!
//! A potential is stored as levels `v_0, ..., v_K` with `v_{-1} = 0`, and
//! its measure as per-level node masses
//! `nu_k = ((I + dt A(t_k)) v_k - v_{k-1}) vol`, the backward Euler form of
//! `dv/dt + A v`. The jump from `v_{-1} = 0` to `v_0` is part of `nu_0`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{build_grid, gradient_norm_sq, l2_inner, GridField, SpatialGrid, TimeGrid};
use crate::linalg::{solve_lcp, BandedCholesky, CsrMatrix, PgsSettings};
use crate::operator::{assemble_stiffness, CoefficientField, StiffnessOperator};

#[derive(Debug, Clone)]
pub struct ParabolicPotential {
    pub levels: Vec<GridField>,
    /// Node masses per level, same indexing as `levels`.
    pub measure: Vec<GridField>,
}

impl ParabolicPotential {
    pub fn zeros(grid: &SpatialGrid, time: &TimeGrid) -> Self {
        let z = vec![GridField::zeros(grid); time.steps() + 1];
        Self { levels: z.clone(), measure: z }
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.iter().flat_map(|m| m.values()).sum()
    }

    /// `sup_k ||v_k||^2 + sum_k dt (||v_k||^2 + ||grad v_k||^2)`.
    pub fn energy(&self, grid: &SpatialGrid, time: &TimeGrid) -> Result<f64> {
        let mut sup: f64 = 0.0;
        let mut int = 0.0;
        for (k, v) in self.levels.iter().enumerate() {
            let l2 = l2_inner(v, v, grid)?;
            sup = sup.max(l2);
            if k < time.steps() {
                int += time.dt() * (l2 + gradient_norm_sq(v, grid)?);
            }
        }
        Ok(sup + int)
    }
}

/// Space-time compact `[t1, t2] x K` resolved on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeCompact {
    pub t1: f64,
    pub t2: f64,
    /// Interior nodes of `K`.
    pub mask: Vec<bool>,
    /// Levels at which the obstacle is active.
    pub active_levels: Vec<usize>,
}

impl SpaceTimeCompact {
    /// Resolves `[t1, t2] x {x : region(x)}`; a slice shorter than one step
    /// snaps to the nearest level.
    pub fn on_grid(
        t1: f64,
        t2: f64,
        region: &dyn Fn(&[f64]) -> bool,
        grid: &SpatialGrid,
        time: &TimeGrid,
    ) -> Result<Self> {
        if !(0.0 <= t1 && t1 <= t2 && t2 < time.horizon()) {
            return Err(Error::InvalidProblem(format!(
                "interval [{t1}, {t2}] must lie in [0, {})",
                time.horizon()
            )));
        }
        let mask: Vec<bool> = (0..grid.node_count()).map(|n| !grid.is_boundary(n) && region(grid.point(n))).collect();
        let dt = time.dt();
        let mut active: Vec<usize> = (0..=time.steps())
            .filter(|&k| {
                let t = time.time(k);
                t >= t1 - 1e-12 && t <= t2 + 1e-12
            })
            .collect();
        if active.is_empty() {
            active.push(((t1 / dt).round() as usize).min(time.steps()));
        }
        Ok(Self { t1, t2, mask, active_levels: active })
    }

    pub fn is_thin(&self, time: &TimeGrid) -> bool {
        self.t2 - self.t1 <= time.dt()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// The mask grown by one cell in every axis direction, diagonals
    /// included; boundary nodes stay outside.
    pub fn dilated(&self, grid: &SpatialGrid) -> Vec<bool> {
        let npa = grid.nodes_per_axis();
        let mut out = self.mask.clone();
        let (nx, ny) = (npa[0], if grid.dim() == 2 { npa[1] } else { 1 });
        for n in 0..self.mask.len() {
            if !self.mask[n] {
                continue;
            }
            let (i, j) = (n % nx, n / nx);
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                        continue;
                    }
                    let m = b as usize * nx + a as usize;
                    if !grid.is_boundary(m) {
                        out[m] = true;
                    }
                }
            }
        }
        out
    }
}

/// How the constraint `v >= 1` is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ConstraintMethod {
    Projected,
    /// Implicit penalty `n (v - obstacle)^-`.
    Penalized { n: f64 },
}

struct Operators<'a> {
    a: &'a CoefficientField,
    grid: &'a SpatialGrid,
    time: &'a TimeGrid,
    cached: Option<Arc<(StiffnessOperator, CsrMatrix, BandedCholesky)>>,
}

impl<'a> Operators<'a> {
    fn new(a: &'a CoefficientField, grid: &'a SpatialGrid, time: &'a TimeGrid) -> Self {
        Self { a, grid, time, cached: None }
    }

    fn at(&mut self, k: usize) -> Result<Arc<(StiffnessOperator, CsrMatrix, BandedCholesky)>> {
        if let Some(c) = &self.cached {
            return Ok(Arc::clone(c));
        }
        let op = assemble_stiffness(self.a, self.time.time(k), self.grid)?;
        let b = op.matrix().shifted(1.0, self.time.dt());
        let chol = BandedCholesky::factor(&b)?;
        let out = Arc::new((op, b, chol));
        if self.a.is_time_independent() {
            self.cached = Some(Arc::clone(&out));
        }
        Ok(out)
    }
}

/// Implicit penalized step `B v - dt n (obstacle - v)^+ = rhs` by active-set
/// iteration; returns `v` and the penalty term `dt n (obstacle - v)^+`.
fn penalized_solve(b: &CsrMatrix, rhs: &[f64], lower: &[f64], n: f64, dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = b.dim();
    let mut active = vec![false; m];
    let mut v = BandedCholesky::factor(b)?.solve(rhs);
    for _ in 0..200 {
        let next: Vec<bool> = v.iter().zip(lower).map(|(x, l)| x < l).collect();
        if next == active {
            let pen = v.iter().zip(lower).map(|(x, l)| dt * n * (l - x).max(0.0)).collect();
            return Ok((v, pen));
        }
        active = next;
        let mut trip = Vec::with_capacity(b.nnz() + m);
        let mut r = rhs.to_vec();
        for i in 0..m {
            for (j, val) in b.row(i) {
                trip.push((i, j, val));
            }
            if active[i] {
                trip.push((i, i, dt * n));
                r[i] += dt * n * lower[i];
            }
        }
        v = BandedCholesky::factor(&CsrMatrix::from_triplets(m, trip))?.solve(&r);
    }
    Err(Error::LinearSolve("penalty active set did not settle".into()))
}

/// Forward sweep `(I + dt A(t_k)) v_k >= v_{k-1}` under the obstacle levels
/// (`-inf` where inactive), starting from `v_{-1} = 0`.
fn constrained_sweep(
    a: &CoefficientField,
    grid: &SpatialGrid,
    time: &TimeGrid,
    obstacle: &dyn Fn(usize) -> Option<Vec<f64>>,
    method: ConstraintMethod,
    pgs: &PgsSettings,
) -> Result<ParabolicPotential> {
    let mut ops = Operators::new(a, grid, time);
    let m = grid.interior_count();
    let mut prev = vec![0.0; m];
    let mut out = ParabolicPotential { levels: Vec::new(), measure: Vec::new() };
    for k in 0..=time.steps() {
        let sys = ops.at(k)?;
        let (v, r) = match (obstacle(k), method) {
            (None, _) => (sys.2.solve(&prev), vec![0.0; m]),
            (Some(lower), ConstraintMethod::Projected) => {
                let sol = solve_lcp(&sys.1, &prev, &lower, &prev, pgs)?;
                (sol.x, sol.residual)
            }
            (Some(lower), ConstraintMethod::Penalized { n }) => penalized_solve(&sys.1, &prev, &lower, n, time.dt())?,
        };
        let mass: Vec<f64> = r.iter().zip(grid.interior_nodes()).map(|(r, &i)| r * grid.weight(i)).collect();
        out.levels.push(GridField::from_interior(grid, &v, 0.0));
        out.measure.push(GridField::from_interior(grid, &mass, 0.0));
        prev = v;
    }
    Ok(out)
}

/// Smallest potential `>= 1` on the compact dilated by one cell.
pub fn smallest_potential_on_compact(
    compact: &SpaceTimeCompact,
    a: &CoefficientField,
    grid: &SpatialGrid,
    time: &TimeGrid,
    method: ConstraintMethod,
) -> Result<ParabolicPotential> {
    if compact.is_empty() {
        return Ok(ParabolicPotential::zeros(grid, time));
    }
    let dil = compact.dilated(grid);
    let lower: Vec<f64> = grid
        .interior_nodes()
        .iter()
        .map(|&n| if dil[n] { 1.0 } else { f64::NEG_INFINITY })
        .collect();
    let active = &compact.active_levels;
    constrained_sweep(a, grid, time, &|k| active.contains(&k).then(|| lower.clone()), method, &PgsSettings::default())
}

/// Penalized potential `dv/dt + A v = n (v - u)^-` with `v_0 = u_0^+`,
/// implicit in `v` against `u_{k+1}`. `measure[0]` holds the initial mass
/// `v_0 vol`; later levels hold `n (v - u)^- dt vol`.
pub fn dominating_potential(
    u: &[GridField],
    a: &CoefficientField,
    grid: &SpatialGrid,
    time: &TimeGrid,
    n: f64,
) -> Result<ParabolicPotential> {
    if u.len() != time.steps() + 1 {
        return Err(Error::ShapeMismatch { expected: time.steps() + 1, found: u.len() });
    }
    if !(n > 0.0) {
        return Err(Error::InvalidProblem(format!("penalty {n} must be positive")));
    }
    let mut ops = Operators::new(a, grid, time);
    let v0: Vec<f64> = u[0].interior(grid).iter().map(|x| x.max(0.0)).collect();
    let mut out = ParabolicPotential {
        levels: vec![GridField::from_interior(grid, &v0, 0.0)],
        measure: vec![GridField::from_interior(
            grid,
            &v0.iter().zip(grid.interior_nodes()).map(|(v, &i)| v * grid.weight(i)).collect::<Vec<_>>(),
            0.0,
        )],
    };
    let mut prev = v0;
    for k in 1..=time.steps() {
        let sys = ops.at(k)?;
        let lower = u[k].interior(grid);
        let (v, pen) = penalized_solve(&sys.1, &prev, &lower, n, time.dt())?;
        let mass: Vec<f64> = pen.iter().zip(grid.interior_nodes()).map(|(p, &i)| p * grid.weight(i)).collect();
        out.levels.push(GridField::from_interior(grid, &v, 0.0));
        out.measure.push(GridField::from_interior(grid, &mass, 0.0));
        prev = v;
    }
    Ok(out)
}

/// `nu_k = ((I + dt A(t_k)) v_k - v_{k-1}) vol` with `v_{-1} = 0`. Masses in
/// `[-1e-10, 0)` are rounded to zero; anything below is an error.
pub fn regular_measure_from_potential(
    v: &[GridField],
    a: &CoefficientField,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<Vec<GridField>> {
    if v.len() != time.steps() + 1 {
        return Err(Error::ShapeMismatch { expected: time.steps() + 1, found: v.len() });
    }
    let mut ops = Operators::new(a, grid, time);
    let mut prev = vec![0.0; grid.interior_count()];
    let mut out = Vec::with_capacity(v.len());
    for (k, level) in v.iter().enumerate() {
        let sys = ops.at(k)?;
        let cur = level.interior(grid);
        let bv = sys.1.apply(&cur);
        let mut mass = Vec::with_capacity(cur.len());
        for ((bv, p), &node) in bv.iter().zip(&prev).zip(grid.interior_nodes()) {
            let m = (bv - p) * grid.weight(node);
            if m < -1e-10 {
                return Err(Error::NotAPotential { level: k, node, mass: m });
            }
            mass.push(m.max(0.0));
        }
        out.push(GridField::from_interior(grid, &mass, 0.0));
        prev = cur;
    }
    Ok(out)
}

/// A smooth space-time test function with its time derivative.
pub struct TestField<'a> {
    pub phi: &'a dyn Fn(f64, &[f64]) -> f64,
    pub dphi_dt: &'a dyn Fn(f64, &[f64]) -> f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairingResidual {
    /// `sum phi dnu`.
    pub measure_side: f64,
    /// `int (-d_t phi, v) + E(phi, v) dt + (phi_T, v_T)`, left-endpoint rule.
    pub form_side: f64,
    pub relative: f64,
}

/// Both sides of the identity pairing a test function with a potential's
/// measure.
pub fn duality_pairing_check(
    test: &TestField<'_>,
    v: &ParabolicPotential,
    a: &CoefficientField,
    grid: &SpatialGrid,
    time: &TimeGrid,
) -> Result<PairingResidual> {
    let mut ops = Operators::new(a, grid, time);
    let k_last = time.steps();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for k in 0..=k_last {
        let t = time.time(k);
        let phi = GridField::from_fn_dirichlet(grid, |x| (test.phi)(t, x));
        lhs += phi.values().iter().zip(v.measure[k].values()).map(|(p, m)| p * m).sum::<f64>();
        if k < k_last {
            let dphi = GridField::from_fn_dirichlet(grid, |x| (test.dphi_dt)(t, x));
            let op = &ops.at(k)?.0;
            let e = op.energy(&phi.interior(grid), &v.levels[k].interior(grid));
            rhs += time.dt() * (-l2_inner(&dphi, &v.levels[k], grid)? + e);
        } else {
            rhs += l2_inner(&phi, &v.levels[k], grid)?;
        }
    }
    let scale = lhs.abs().max(rhs.abs());
    let relative = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
    Ok(PairingResidual { measure_side: lhs, form_side: rhs, relative })
}

/// One level of a refinement schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefinementLevel {
    pub nodes_per_axis: usize,
    pub steps: usize,
    pub method: ConstraintMethod,
}

/// Levels halving the mesh width and quartering the step, so both the
/// `h` and `sqrt(dt)` parts of the slice error halve per level.
pub fn halving_schedule(levels: usize, base_cells: usize, base_steps: usize, method: ConstraintMethod) -> Vec<RefinementLevel> {
    (0..levels)
        .map(|l| RefinementLevel {
            nodes_per_axis: base_cells * (1 << l) + 1,
            steps: base_steps * (1 << (2 * l)),
            method: match method {
                ConstraintMethod::Penalized { n } => ConstraintMethod::Penalized { n: n * 10f64.powi(l as i32) },
                m => m,
            },
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub level: usize,
    pub nodes_per_axis: usize,
    pub dt: f64,
    /// Penalty, infinite for the projected method.
    pub penalty: f64,
    pub mass: f64,
    /// `|m_l - m_{l-1}|`.
    pub indicator: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityEstimate {
    pub levels: Vec<LevelResult>,
    /// Mass at the finest level.
    pub value: f64,
    pub indicator: Option<f64>,
    /// Error indicators strictly decrease along the schedule.
    pub monotone: bool,
    /// First-order Richardson value, only for monotone schedules.
    pub extrapolated: Option<f64>,
}

/// Capacity of `[t1, t2] x {region}` in the box `extents`, along a
/// refinement schedule.
pub fn capacity_estimate(
    t1: f64,
    t2: f64,
    region: &dyn Fn(&[f64]) -> bool,
    extents: &[f64],
    horizon: f64,
    a: &CoefficientField,
    schedule: &[RefinementLevel],
) -> Result<CapacityEstimate> {
    if schedule.is_empty() {
        return Err(Error::InvalidProblem("empty refinement schedule".into()));
    }
    let mut levels: Vec<LevelResult> = Vec::with_capacity(schedule.len());
    for (l, lvl) in schedule.iter().enumerate() {
        let grid = build_grid(extents.len(), extents, &vec![lvl.nodes_per_axis; extents.len()])?;
        let time = TimeGrid::new(horizon, lvl.steps)?;
        let compact = SpaceTimeCompact::on_grid(t1, t2, region, &grid, &time)?;
        let v = smallest_potential_on_compact(&compact, a, &grid, &time, lvl.method)?;
        let mass = v.total_mass();
        let indicator = levels.last().map(|p| (mass - p.mass).abs());
        levels.push(LevelResult {
            level: l,
            nodes_per_axis: lvl.nodes_per_axis,
            dt: time.dt(),
            penalty: match lvl.method {
                ConstraintMethod::Projected => f64::INFINITY,
                ConstraintMethod::Penalized { n } => n,
            },
            mass,
            indicator,
        });
    }
    let inds: Vec<f64> = levels.iter().filter_map(|l| l.indicator).collect();
    let monotone = inds.windows(2).all(|w| w[1] < w[0]);
    let last = levels.last().expect("nonempty");
    let extrapolated = match (monotone, levels.len()) {
        (true, n) if n >= 2 => Some(2.0 * last.mass - levels[n - 2].mass),
        _ => None,
    };
    Ok(CapacityEstimate { value: last.mass, indicator: last.indicator, monotone, extrapolated, levels })
}
