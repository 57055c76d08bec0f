//! Semi-implicit time stepping of the equation with and without obstacle.
//!
//! One step solves `(I + dt A(t_{k+1})) u_{k+1} = u_k + dt f + dt D(g) +
//! sum_j h_j dB^j` with `f`, `g`, `h` evaluated at `(t_k, u_k, grad u_k)`.
//! The obstacle variants add an explicit penalty source or turn the solve
//! into a complementarity problem whose residual is the reflection measure.
//!
//! A spatially constant boundary process `M` is handled through `v = u - M`:
//! `v` has zero boundary values, its forcing loses `b dt + sigma_j dB^j`,
//! and its obstacle is `S - M`.

mod oracle;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

pub use oracle::{check_oracle_class, sine_mode, spectral_oracle_linear, OracleSpectrum};

use crate::coefficients::{NonlinearTerm, ObstacleSpec, Point, Role};
use crate::error::{Error, Result};
use crate::grid::{cell_gradients, nodal_gradients, GridField, SpatialGrid, TimeGrid};
use crate::linalg::{solve_lcp, BandedCholesky, CsrMatrix, PgsSettings};
use crate::noise::{CovarianceModel, NoiseStream};
use crate::operator::{assemble_stiffness, check_ellipticity, CoefficientField};

/// `M_t = m + int b ds + sum_j int sigma_j dB^j`, constant in space.
#[derive(Clone)]
pub struct ItoProcessBoundary {
    pub m: f64,
    descriptor: String,
    drift: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    loadings: Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>,
}

impl fmt::Debug for ItoProcessBoundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ItoProcessBoundary({})", self.descriptor)
    }
}

impl ItoProcessBoundary {
    pub fn new(
        m: f64,
        descriptor: impl Into<String>,
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        loadings: impl Fn(f64, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { m, descriptor: descriptor.into(), drift: Arc::new(drift), loadings: Arc::new(loadings) }
    }

    /// Constant drift `b` and loadings `sigma` (missing modes are zero).
    pub fn constant(m: f64, b: f64, sigma: Vec<f64>) -> Self {
        let descriptor = format!("m={m}, b={b}, sigma={sigma:?}");
        Self::new(m, descriptor, move |_| b, move |_, out| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = sigma.get(j).copied().unwrap_or(0.0);
            }
        })
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn drift(&self, t: f64) -> f64 {
        (self.drift)(t)
    }

    pub fn loadings(&self, t: f64, modes: usize) -> Vec<f64> {
        let mut out = vec![0.0; modes];
        (self.loadings)(t, &mut out);
        out
    }

    /// `M_k` along the given per-step draws.
    pub fn path(&self, time: &TimeGrid, draws: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(time.steps() + 1);
        let mut m = self.m;
        out.push(m);
        for (k, db) in draws.iter().enumerate() {
            let t = time.time(k);
            let s = self.loadings(t, db.len());
            m += self.drift(t) * time.dt() + s.iter().zip(db).map(|(a, b)| a * b).sum::<f64>();
            out.push(m);
        }
        out
    }

    /// `(|m|^p, (int |b|^(1/(1-theta)))^(p(1-theta)), (int |sigma|^(2/(1-theta)))^(p(1-theta)/2))`
    /// on the time grid up to `t`.
    pub fn integrability(&self, time: &TimeGrid, modes: usize, p: f64, theta: f64, t: f64) -> Result<[f64; 3]> {
        if !(0.0..1.0).contains(&theta) || p < 2.0 {
            return Err(Error::InvalidExponent(format!("need p >= 2 and theta in [0, 1), got p={p}, theta={theta}")));
        }
        let n = time.steps_until(t)?;
        let e = 1.0 / (1.0 - theta);
        let (mut ib, mut is) = (0.0, 0.0);
        for k in 0..n {
            let s = time.time(k);
            ib += time.dt() * self.drift(s).abs().powf(e);
            let sig: f64 = self.loadings(s, modes).iter().map(|v| v * v).sum::<f64>().sqrt();
            is += time.dt() * sig.powf(2.0 * e);
        }
        Ok([self.m.abs().powf(p), ib.powf(p * (1.0 - theta)), is.powf(p * (1.0 - theta) / 2.0)])
    }
}

#[derive(Debug, Clone, Default)]
pub enum Boundary {
    #[default]
    Zero,
    Ito(ItoProcessBoundary),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Scheme {
    Unconstrained,
    Penalized { n: f64 },
    Projected,
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Unconstrained => "unconstrained".into(),
            Scheme::Penalized { n } => format!("penalized(n={n})"),
            Scheme::Projected => "projected".into(),
        }
    }
}

/// Full problem data: domain, operator, terms, noise, obstacle, initial
/// and boundary data, and the master seed of the noise.
#[derive(Debug, Clone)]
pub struct SpdeProblem {
    pub grid: SpatialGrid,
    pub time: TimeGrid,
    pub a: CoefficientField,
    pub f: NonlinearTerm,
    pub g: NonlinearTerm,
    pub h: NonlinearTerm,
    pub noise: CovarianceModel,
    pub obstacle: Option<ObstacleSpec>,
    pub xi: GridField,
    pub boundary: Boundary,
    pub seed: u64,
    /// Each step's increment is aggregated from this many finer draws.
    pub substeps: u32,
    pub pgs: PgsSettings,
}

impl SpdeProblem {
    /// Noise-free problem with zero terms.
    pub fn new(grid: SpatialGrid, time: TimeGrid, a: CoefficientField, xi: GridField, seed: u64) -> Self {
        let d = grid.dim();
        Self {
            grid,
            time,
            a,
            f: NonlinearTerm::zero(Role::F, 1),
            g: NonlinearTerm::zero(Role::G, d),
            h: NonlinearTerm::zero(Role::H, 0),
            noise: CovarianceModel::none(),
            obstacle: None,
            xi,
            boundary: Boundary::Zero,
            seed,
            substeps: 1,
            pgs: PgsSettings::default(),
        }
    }

    /// Sets the noise model; `h` is reset to zero with the new truncation.
    pub fn with_noise(mut self, noise: CovarianceModel) -> Self {
        self.h = NonlinearTerm::zero(Role::H, noise.truncation());
        self.noise = noise;
        self
    }

    pub fn with_f(mut self, f: NonlinearTerm) -> Self {
        self.f = f;
        self
    }

    pub fn with_g(mut self, g: NonlinearTerm) -> Self {
        self.g = g;
        self
    }

    pub fn with_h(mut self, h: NonlinearTerm) -> Self {
        self.h = h;
        self
    }

    pub fn with_obstacle(mut self, obstacle: ObstacleSpec) -> Self {
        self.obstacle = Some(obstacle);
        self
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn with_pgs(mut self, pgs: PgsSettings) -> Self {
        self.pgs = pgs;
        self
    }

    pub fn boundary_value(&self) -> f64 {
        match &self.boundary {
            Boundary::Zero => 0.0,
            Boundary::Ito(m) => m.m,
        }
    }

    pub fn stream(&self, path: u64) -> NoiseStream {
        NoiseStream::new(self.seed, path).with_substeps(self.substeps)
    }

    /// Shape, finiteness, boundary and initial-obstacle checks.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        g.check(&self.xi)?;
        if !self.xi.is_finite() {
            return Err(Error::NonFinite("initial condition".into()));
        }
        let mb = self.boundary_value();
        for node in 0..g.node_count() {
            let v = self.xi.values()[node];
            if g.is_boundary(node) && (v - mb).abs() > 1e-12 {
                return Err(Error::NonZeroBoundary { node, value: v - mb });
            }
        }
        for (term, role, width) in [
            (&self.f, Role::F, 1),
            (&self.g, Role::G, g.dim()),
            (&self.h, Role::H, self.noise.truncation()),
        ] {
            if term.role() != role {
                return Err(Error::InvalidProblem(format!("term {} used in the wrong slot", term.name())));
            }
            if term.width() != width {
                return Err(Error::ShapeMismatch { expected: width, found: term.width() });
            }
        }
        if let Some(o) = &self.obstacle {
            for &node in g.interior_nodes() {
                let s = o.initial(g.point(node));
                if s > self.xi.values()[node] + 1e-12 {
                    return Err(Error::InvalidProblem(format!(
                        "initial obstacle {s} exceeds the initial condition {} at node {node}",
                        self.xi.values()[node]
                    )));
                }
            }
            if let ObstacleSpec::Dominated { f, g: gp, h, .. } = o {
                if f.width() != 1 || gp.width() != g.dim() || h.width() != self.noise.truncation() {
                    return Err(Error::InvalidProblem("dominating data has the wrong shape".into()));
                }
            }
        }
        check_ellipticity(&self.a, g, &[0.0])?;
        Ok(())
    }
}

/// Trajectory of one noise path together with the data needed to re-check it.
#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub levels: Vec<GridField>,
    pub time: TimeGrid,
    pub scheme: Scheme,
    pub stream: NoiseStream,
    /// `Delta B^j` of every step.
    pub draws: Vec<Vec<f64>>,
    /// `M_k`; all zero for the null Dirichlet condition.
    pub boundary: Vec<f64>,
    /// `S(t_k)` when an obstacle is present.
    pub obstacle: Option<Vec<GridField>>,
    /// `S'(t_k)` when the obstacle is given through a dominating equation.
    pub dominating: Option<Vec<GridField>>,
}

impl SolutionPath {
    pub fn final_level(&self) -> &GridField {
        self.levels.last().expect("at least the initial level")
    }
}

/// Per-node masses of the reflection measure. `masses[k + 1]` is the mass
/// produced by the step from `t_k` to `t_{k+1}`; `masses[0]` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionMeasure {
    pub masses: Vec<GridField>,
}

impl ReflectionMeasure {
    pub fn zeros(grid: &SpatialGrid, levels: usize) -> Self {
        Self { masses: vec![GridField::zeros(grid); levels] }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().flat_map(|m| m.values()).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.masses.iter().flat_map(|m| m.values()).all(|&v| v >= 0.0)
    }
}

struct System {
    b: CsrMatrix,
    chol: BandedCholesky,
}

/// Step engine for one problem; caches the factorized system when the
/// coefficient does not depend on time.
pub struct Stepper<'a> {
    problem: &'a SpdeProblem,
    cache: Option<Arc<System>>,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a SpdeProblem) -> Self {
        Self { problem, cache: None }
    }

    fn system(&mut self, k: usize) -> Result<Arc<System>> {
        if let Some(s) = &self.cache {
            return Ok(Arc::clone(s));
        }
        let p = self.problem;
        let op = assemble_stiffness(&p.a, p.time.time(k + 1), &p.grid)?;
        let b = op.matrix().shifted(1.0, p.time.dt());
        let chol = BandedCholesky::factor(&b)?;
        let s = Arc::new(System { b, chol });
        if p.a.is_time_independent() {
            self.cache = Some(Arc::clone(&s));
        }
        Ok(s)
    }

    /// Interior right-hand side for `v = u - M` of step `k`.
    pub fn forcing(&self, k: usize, u: &GridField, m_k: f64, draws: &[f64]) -> Result<Vec<f64>> {
        let p = self.problem;
        let grid = &p.grid;
        grid.check(u)?;
        let t = p.time.time(k);
        let dt = p.time.dt();
        let d = grid.dim();
        let n = grid.node_count();
        let vals = u.values();
        let need_grad = !(p.f.is_state_independent() && p.h.is_state_independent());
        let grad = if need_grad { nodal_gradients(u, grid)? } else { vec![0.0; n * d] };

        let mut rhs: Vec<f64> = grid.interior_nodes().iter().map(|&i| vals[i] - m_k).collect();
        let (b_k, sigma) = match &p.boundary {
            Boundary::Zero => (0.0, vec![0.0; draws.len()]),
            Boundary::Ito(m) => (m.drift(t), m.loadings(t, draws.len())),
        };
        let sigma_db: f64 = sigma.iter().zip(draws).map(|(s, b)| s * b).sum();
        if !p.f.is_zero() {
            let f = p.f.eval_field(t, grid, vals, &grad);
            for (r, &i) in rhs.iter_mut().zip(grid.interior_nodes()) {
                *r += dt * f[i];
            }
        }
        if b_k != 0.0 || sigma_db != 0.0 {
            rhs.iter_mut().for_each(|r| *r -= dt * b_k + sigma_db);
        }
        if !p.g.is_zero() {
            let div = crate::operator::divergence_term(&eval_g_cells(p, t, u)?, grid)?;
            for (r, &i) in rhs.iter_mut().zip(grid.interior_nodes()) {
                *r += dt * div.values()[i];
            }
        }
        if !p.h.is_zero() && draws.iter().any(|&b| b != 0.0) {
            let w = p.h.width();
            let h = p.h.eval_field(t, grid, vals, &grad);
            for (r, &i) in rhs.iter_mut().zip(grid.interior_nodes()) {
                *r += h[i * w..(i + 1) * w].iter().zip(draws).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("forcing at step {k}")));
        }
        Ok(rhs)
    }

    fn lift(&self, v: &[f64], m: f64) -> GridField {
        let mut out = GridField::from_interior(&self.problem.grid, v, 0.0);
        if m != 0.0 {
            out.values_mut().iter_mut().for_each(|x| *x += m);
        }
        out
    }

    pub fn step_unconstrained(&mut self, k: usize, u: &GridField, m: (f64, f64), draws: &[f64]) -> Result<GridField> {
        let rhs = self.forcing(k, u, m.0, draws)?;
        let sys = self.system(k)?;
        Ok(self.lift(&sys.chol.solve(&rhs), m.1))
    }

    /// Adds the explicit source `n (u_k - S_k)^-`; returns the new level and
    /// the node masses `n (u_k - S_k)^- dt vol`.
    pub fn step_penalized(
        &mut self,
        k: usize,
        u: &GridField,
        m: (f64, f64),
        draws: &[f64],
        n: f64,
        s_k: &GridField,
    ) -> Result<(GridField, GridField)> {
        if !(n > 0.0) {
            return Err(Error::InvalidProblem(format!("penalty {n} must be positive")));
        }
        let p = self.problem;
        let dt = p.time.dt();
        let mut rhs = self.forcing(k, u, m.0, draws)?;
        let mut mass = GridField::zeros(&p.grid);
        for (r, &i) in rhs.iter_mut().zip(p.grid.interior_nodes()) {
            let deficit = (s_k.values()[i] - u.values()[i]).max(0.0);
            if deficit > 0.0 {
                *r += dt * n * deficit;
                mass.values_mut()[i] = n * deficit * dt * p.grid.weight(i);
            }
        }
        let sys = self.system(k)?;
        Ok((self.lift(&sys.chol.solve(&rhs), m.1), mass))
    }

    /// Solves the complementarity problem against `S_{k+1}`; node masses
    /// are `r vol` with `r` the algebraic residual.
    pub fn step_projected(
        &mut self,
        k: usize,
        u: &GridField,
        m: (f64, f64),
        draws: &[f64],
        s_next: &GridField,
    ) -> Result<(GridField, GridField)> {
        let p = self.problem;
        let rhs = self.forcing(k, u, m.0, draws)?;
        let lower: Vec<f64> = p.grid.interior_nodes().iter().map(|&i| s_next.values()[i] - m.1).collect();
        let warm: Vec<f64> = p.grid.interior_nodes().iter().map(|&i| u.values()[i] - m.0).collect();
        let sys = self.system(k)?;
        let sol = solve_lcp(&sys.b, &rhs, &lower, &warm, &p.pgs)?;
        let vol: Vec<f64> = sol.residual.iter().zip(p.grid.interior_nodes()).map(|(r, &i)| r * p.grid.weight(i)).collect();
        Ok((self.lift(&sol.x, m.1), GridField::from_interior(&p.grid, &vol, 0.0)))
    }
}

/// `g(t, x, u, grad u)` on every gradient cell, with `u` averaged over the
/// cell's vertices and `grad u` the cell gradient.
pub fn eval_g_cells(problem: &SpdeProblem, t: f64, u: &GridField) -> Result<Vec<f64>> {
    let grid = &problem.grid;
    let d = grid.dim();
    let cells = grid.cells();
    let mut out = vec![0.0; cells.len() * d];
    if problem.g.is_zero() {
        return Ok(out);
    }
    let cg = if problem.g.is_state_independent() { vec![0.0; cells.len() * d] } else { cell_gradients(u, grid)? };
    for (c, cell) in cells.iter().enumerate() {
        let y = cell.vertices[..=d].iter().map(|&v| u.values()[v]).sum::<f64>() / (d + 1) as f64;
        let p = Point { t, node: cell.vertices[0], x: &cell.centroid[..d], y, z: &cg[c * d..(c + 1) * d] };
        problem.g.eval(&p, &mut out[c * d..(c + 1) * d]);
    }
    Ok(out)
}

fn with_step(k: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Step { step: k, source: Box::new(e) }
}

/// One unconstrained step from `u_k` under null Dirichlet data.
pub fn step_unconstrained(u: &GridField, k: usize, problem: &SpdeProblem, draws: &[f64]) -> Result<GridField> {
    Stepper::new(problem).step_unconstrained(k, u, (0.0, 0.0), draws)
}

/// One penalized step from `u_k` under null Dirichlet data.
pub fn step_obstacle_penalized(
    u: &GridField,
    k: usize,
    problem: &SpdeProblem,
    draws: &[f64],
    n: f64,
    s_k: &GridField,
) -> Result<(GridField, GridField)> {
    Stepper::new(problem).step_penalized(k, u, (0.0, 0.0), draws, n, s_k)
}

/// One projected step from `u_k` under null Dirichlet data.
pub fn step_obstacle_projected(
    u: &GridField,
    k: usize,
    problem: &SpdeProblem,
    draws: &[f64],
    s_next: &GridField,
) -> Result<(GridField, GridField)> {
    Stepper::new(problem).step_projected(k, u, (0.0, 0.0), draws, s_next)
}

/// Obstacle levels `S(t_k)`, and `S'(t_k)` in the dominated form, along
/// the given draws.
pub fn obstacle_levels(problem: &SpdeProblem, draws: &[Vec<f64>]) -> Result<Option<(Vec<GridField>, Option<Vec<GridField>>)>> {
    let Some(o) = &problem.obstacle else { return Ok(None) };
    let grid = &problem.grid;
    let time = &problem.time;
    match o {
        ObstacleSpec::Direct { s, .. } => {
            let levels = (0..=time.steps()).map(|k| GridField::from_fn(grid, |x| s(time.time(k), x))).collect();
            Ok(Some((levels, None)))
        }
        ObstacleSpec::Dominated { s0, f, g, h, gap } => {
            let xi = GridField::from_fn_dirichlet(grid, |x| s0(0.0, x));
            let sub = SpdeProblem {
                f: f.clone(),
                g: g.clone(),
                h: h.clone(),
                obstacle: None,
                xi,
                boundary: Boundary::Zero,
                ..problem.clone()
            };
            let zeros = vec![0.0; time.steps() + 1];
            let (path, _) = integrate(&sub, Scheme::Unconstrained, draws, &zeros, None)?;
            let s = path.iter().map(|l| l.map(|v| v - gap)).collect();
            Ok(Some((s, Some(path))))
        }
    }
}

fn integrate(
    problem: &SpdeProblem,
    scheme: Scheme,
    draws: &[Vec<f64>],
    boundary: &[f64],
    obstacle: Option<&[GridField]>,
) -> Result<(Vec<GridField>, ReflectionMeasure)> {
    let steps = problem.time.steps();
    let mut stepper = Stepper::new(problem);
    let mut levels = Vec::with_capacity(steps + 1);
    levels.push(problem.xi.clone());
    let mut nu = ReflectionMeasure::zeros(&problem.grid, steps + 1);
    for k in 0..steps {
        let u = &levels[k];
        let m = (boundary[k], boundary[k + 1]);
        let next = match (scheme, obstacle) {
            (Scheme::Unconstrained, _) => stepper.step_unconstrained(k, u, m, &draws[k]).map_err(with_step(k))?,
            (Scheme::Penalized { n }, Some(s)) => {
                let (v, mass) = stepper.step_penalized(k, u, m, &draws[k], n, &s[k]).map_err(with_step(k))?;
                nu.masses[k + 1] = mass;
                v
            }
            (Scheme::Projected, Some(s)) => {
                let (v, mass) = stepper.step_projected(k, u, m, &draws[k], &s[k + 1]).map_err(with_step(k))?;
                nu.masses[k + 1] = mass;
                v
            }
            (_, None) => return Err(Error::InvalidProblem("obstacle scheme without an obstacle".into())),
        };
        if !next.is_finite() {
            return Err(with_step(k)(Error::NonFinite("solution".into())));
        }
        levels.push(next);
    }
    Ok((levels, nu))
}

/// Simulates noise path `path` of `problem` with `scheme`. Deterministic in
/// `(seed, path)`.
pub fn solve(problem: &SpdeProblem, scheme: Scheme, path: u64) -> Result<(SolutionPath, ReflectionMeasure)> {
    problem.validate()?;
    let stream = problem.stream(path);
    let draws: Vec<Vec<f64>> = (0..problem.time.steps())
        .map(|k| stream.draws(k as u64, problem.time.dt(), problem.noise.truncation()))
        .collect();
    solve_with_draws(problem, scheme, stream, draws)
}

/// As [`solve`], with the per-step Brownian increments supplied.
pub fn solve_with_draws(
    problem: &SpdeProblem,
    scheme: Scheme,
    stream: NoiseStream,
    draws: Vec<Vec<f64>>,
) -> Result<(SolutionPath, ReflectionMeasure)> {
    if draws.len() != problem.time.steps() {
        return Err(Error::ShapeMismatch { expected: problem.time.steps(), found: draws.len() });
    }
    let boundary = match &problem.boundary {
        Boundary::Zero => vec![0.0; problem.time.steps() + 1],
        Boundary::Ito(m) => m.path(&problem.time, &draws),
    };
    let obstacle = obstacle_levels(problem, &draws)?;
    let (obstacle, dominating) = match obstacle {
        Some((s, d)) => (Some(s), d),
        None => (None, None),
    };
    let (levels, nu) = integrate(problem, scheme, &draws, &boundary, obstacle.as_deref())?;
    Ok((
        SolutionPath { levels, time: problem.time, scheme, stream, draws, boundary, obstacle, dominating },
        nu,
    ))
}
