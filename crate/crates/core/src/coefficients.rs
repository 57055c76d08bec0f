//! Nonlinear terms `f`, `g`, `h`, obstacle data, assumption gates and the
//! shifted coefficients `f - f'`, `g - g'`, `h - h'` around a dominating path.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, Vars};
use crate::grid::{nodal_gradients, GridField, SpatialGrid, TimeGrid};
use crate::noise::CovarianceModel;
use crate::stepper::SpdeProblem;

/// Evaluation point of a term. `node` lets tabulated data (noise
/// eigenfunctions, dominating paths) be looked up without interpolation.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub node: usize,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
}

impl Point<'_> {
    fn vars(&self) -> Vars {
        let mut v = Vars { t: self.t, y: self.y, ..Vars::default() };
        v.x[..self.x.len()].copy_from_slice(self.x);
        v.z[..self.z.len()].copy_from_slice(self.z);
        v
    }
}

/// Which slot of the equation a term fills; decides how its Lipschitz
/// constants are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    F,
    G,
    H,
}

/// Declared constants: `f` uses `c` for both arguments, `g` reads `z` as
/// alpha and `h` reads `z` as beta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lipschitz {
    pub c: f64,
    pub z: f64,
}

impl Lipschitz {
    pub const ZERO: Lipschitz = Lipschitz { c: 0.0, z: 0.0 };
}

type Eval = Arc<dyn Fn(&Point<'_>, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct NonlinearTerm {
    name: String,
    role: Role,
    width: usize,
    lipschitz: Lipschitz,
    state_free: bool,
    eval: Eval,
}

impl fmt::Debug for NonlinearTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearTerm")
            .field("name", &self.name)
            .field("role", &self.role)
            .field("width", &self.width)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl NonlinearTerm {
    /// A term writing `width` outputs. `state_free` promises that the
    /// evaluator ignores `y` and `z`.
    pub fn new(
        name: impl Into<String>,
        role: Role,
        width: usize,
        lipschitz: Lipschitz,
        state_free: bool,
        eval: impl Fn(&Point<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), role, width, lipschitz, state_free, eval: Arc::new(eval) }
    }

    pub fn zero(role: Role, width: usize) -> Self {
        Self::new("zero", role, width, Lipschitz::ZERO, true, |_, out| out.fill(0.0))
    }

    /// `f = cy y + cz sum_i z_i`, or `g_i = cy y + cz z_i` for `g`.
    pub fn linear(role: Role, dim: usize, cy: f64, cz: f64) -> Self {
        let sd = (dim as f64).sqrt();
        match role {
            Role::F => Self::new(
                format!("linear({cy}, {cz})"),
                role,
                1,
                Lipschitz { c: cy.abs().max(cz.abs() * sd), z: cy.abs().max(cz.abs() * sd) },
                cy == 0.0 && cz == 0.0,
                move |p, out| out[0] = cy * p.y + cz * p.z.iter().sum::<f64>(),
            ),
            Role::G => Self::new(
                format!("linear({cy}, {cz})"),
                role,
                dim,
                Lipschitz { c: cy.abs() * sd, z: cz.abs() },
                cy == 0.0 && cz == 0.0,
                move |p, out| {
                    for (o, z) in out.iter_mut().zip(p.z) {
                        *o = cy * p.y + cz * z;
                    }
                },
            ),
            Role::H => panic!("linear h terms go through multiplicative_htilde"),
        }
    }

    pub fn constant(role: Role, values: Vec<f64>) -> Self {
        Self::new(format!("constant({values:?})"), role, values.len(), Lipschitz::ZERO, true, move |_, out| {
            out.copy_from_slice(&values)
        })
    }

    /// `f = amplitude sin(y)`.
    pub fn sin_reaction(amplitude: f64) -> Self {
        let c = amplitude.abs();
        Self::new(
            format!("sin-reaction({amplitude})"),
            Role::F,
            1,
            Lipschitz { c, z: c },
            amplitude == 0.0,
            move |p, out| out[0] = amplitude * p.y.sin(),
        )
    }

    /// `h_j(x) = scale sqrt(lambda_j) e_j(x)`, so that `sum_j h_j dB^j = scale dW`.
    pub fn additive_noise(model: &CovarianceModel, scale: f64) -> Self {
        let loads = loadings(model);
        let n = model.truncation();
        Self::new(format!("additive-noise({scale})"), Role::H, n, Lipschitz::ZERO, true, move |p, out| {
            for (j, o) in out.iter_mut().enumerate() {
                *o = scale * loads[p.node * n + j];
            }
        })
    }

    /// `h_j = sqrt(lambda_j) htilde(t, x, y, z) e_j(x)` from a scalar term.
    pub fn multiplicative_htilde(model: &CovarianceModel, htilde: NonlinearTerm, node_count: usize) -> Result<Self> {
        if htilde.width != 1 {
            return Err(Error::ShapeMismatch { expected: 1, found: htilde.width });
        }
        let loads = loadings(model);
        let n = model.truncation();
        let sup = (0..node_count)
            .map(|node| loads[node * n..(node + 1) * n].iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let lip = Lipschitz { c: sup * htilde.lipschitz.c, z: sup * htilde.lipschitz.z };
        let state_free = htilde.state_free;
        let name = format!("multiplicative-htilde({})", htilde.name);
        Ok(Self::new(name, Role::H, n, lip, state_free, move |p, out| {
            let mut s = [0.0];
            htilde.eval(p, &mut s);
            for (j, o) in out.iter_mut().enumerate() {
                *o = s[0] * loads[p.node * n + j];
            }
        }))
    }

    /// One expression per output. Constants are declared, not inferred.
    pub fn from_exprs(role: Role, exprs: Vec<Expr>, lipschitz: Lipschitz) -> Self {
        let state_free = exprs.iter().all(|e| e.is_state_independent());
        let name = exprs.iter().map(|e| e.source().to_string()).collect::<Vec<_>>().join("; ");
        Self::new(name, role, exprs.len(), lipschitz, state_free, move |p, out| {
            let v = p.vars();
            for (o, e) in out.iter_mut().zip(&exprs) {
                *o = e.eval(&v);
            }
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn lipschitz(&self) -> Lipschitz {
        self.lipschitz
    }

    pub fn is_state_independent(&self) -> bool {
        self.state_free
    }

    pub fn is_zero(&self) -> bool {
        self.name == "zero"
    }

    pub fn eval(&self, p: &Point<'_>, out: &mut [f64]) {
        (self.eval)(p, out)
    }

    /// Values at every node for the state `u` with nodal gradient `grad`
    /// (flattened `dim` per node); `width` outputs per node.
    pub fn eval_field(&self, t: f64, grid: &SpatialGrid, u: &[f64], grad: &[f64]) -> Vec<f64> {
        let d = grid.dim();
        let w = self.width;
        let mut out = vec![0.0; grid.node_count() * w];
        for node in 0..grid.node_count() {
            let p = Point { t, node, x: grid.point(node), y: u[node], z: &grad[node * d..(node + 1) * d] };
            self.eval(&p, &mut out[node * w..(node + 1) * w]);
        }
        out
    }

    /// Zero-point data `f^0(t, x) = f(t, x, 0, 0)` at every node.
    pub fn zero_point(&self, t: f64, grid: &SpatialGrid) -> Vec<f64> {
        let n = grid.node_count();
        self.eval_field(t, grid, &vec![0.0; n], &vec![0.0; n * grid.dim()])
    }
}

fn loadings(model: &CovarianceModel) -> Arc<Vec<f64>> {
    let n = model.truncation();
    let nodes = model.eigenfunctions().first().map_or(0, GridField::len);
    let mut out = vec![0.0; nodes * n];
    for node in 0..nodes {
        for (j, l) in model.loadings(node).enumerate() {
            out[node * n + j] = l;
        }
    }
    Arc::new(out)
}

pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Obstacle `S`, given directly or as `S = S' - gap` with `S'` the
/// solution of the linear equation driven by `(S'_0, f', g', h')` on the
/// same noise.
#[derive(Clone)]
pub enum ObstacleSpec {
    Direct { name: String, s: SpaceTimeFn },
    Dominated { s0: SpaceTimeFn, f: NonlinearTerm, g: NonlinearTerm, h: NonlinearTerm, gap: f64 },
}

impl fmt::Debug for ObstacleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObstacleSpec::Direct { name, .. } => write!(f, "Direct({name})"),
            ObstacleSpec::Dominated { f: ff, g, h, gap, .. } => {
                write!(f, "Dominated(f'={}, g'={}, h'={}, gap={gap})", ff.name(), g.name(), h.name())
            }
        }
    }
}

impl ObstacleSpec {
    pub fn direct(name: impl Into<String>, s: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ObstacleSpec::Direct { name: name.into(), s: Arc::new(s) }
    }

    /// `S(0, x)`: for the dominated form this is `S'_0 - gap`.
    pub fn initial(&self, x: &[f64]) -> f64 {
        match self {
            ObstacleSpec::Direct { s, .. } => s(0.0, x),
            ObstacleSpec::Dominated { s0, gap, .. } => s0(0.0, x) - gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateReport {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `2 alpha + beta^2`.
    pub contraction_lhs: f64,
    /// `alpha + beta^2 / 2 + 72 beta^2`.
    pub maximum_principle_lhs: f64,
    /// `2 alpha + beta^2 < 2 lambda`.
    pub contraction: bool,
    /// `alpha + beta^2 / 2 + 72 beta^2 < lambda`.
    pub maximum_principle: bool,
}

/// The two strict inequalities on the structure constants.
pub fn check_gates(lambda: f64, alpha: f64, beta: f64) -> GateReport {
    let b2 = beta * beta;
    let contraction_lhs = 2.0 * alpha + b2;
    let maximum_principle_lhs = alpha + b2 / 2.0 + 72.0 * b2;
    GateReport {
        lambda,
        alpha,
        beta,
        contraction_lhs,
        maximum_principle_lhs,
        contraction: contraction_lhs < 2.0 * lambda,
        maximum_principle: maximum_principle_lhs < lambda,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub gates: GateReport,
    pub lipschitz_f: f64,
    pub lipschitz_g: Lipschitz,
    pub lipschitz_h: Lipschitz,
    /// `||xi||^2 + int (||f^0||^2 + ||g^0||^2 + ||h^0||^2)` evaluated on the grids.
    pub integrability_l2: f64,
    /// Sup of `|xi|`, `|f^0|`, `|g^0|^2`, `|h^0|^2` over the grids.
    pub integrability_sup: f64,
    pub integrable: bool,
    pub obstacle_below_initial: bool,
}

impl AssumptionReport {
    /// Maximum-principle checks are only offered when this holds.
    pub fn maximum_principle_enabled(&self) -> bool {
        self.gates.maximum_principle
    }
}

/// Gates from the declared constants plus integrability of the zero-point
/// data on the solver grids. Pure in its inputs: no sampling involved.
pub fn validate_assumptions(problem: &SpdeProblem) -> AssumptionReport {
    let grid = &problem.grid;
    let time = &problem.time;
    let gates = check_gates(problem.a.bounds().lower, problem.g.lipschitz().z, problem.h.lipschitz().z);
    let w = grid.weights();
    let mut l2 = problem.xi.values().iter().zip(w).map(|(v, w)| w * v * v).sum::<f64>();
    let mut sup = problem.xi.sup_norm();
    for k in 0..time.steps() {
        let t = time.time(k);
        for (term, squared) in [(&problem.f, false), (&problem.g, true), (&problem.h, true)] {
            let z = term.zero_point(t, grid);
            let wd = term.width();
            for (node, wn) in w.iter().enumerate() {
                let s: f64 = z[node * wd..(node + 1) * wd].iter().map(|v| v * v).sum();
                l2 += time.dt() * wn * s;
                sup = sup.max(if squared { s } else { s.sqrt() });
            }
        }
    }
    let obstacle_below_initial = match &problem.obstacle {
        None => true,
        Some(o) => (0..grid.node_count())
            .filter(|&n| !grid.is_boundary(n))
            .all(|n| o.initial(grid.point(n)) <= problem.xi.values()[n]),
    };
    AssumptionReport {
        gates,
        lipschitz_f: problem.f.lipschitz().c,
        lipschitz_g: problem.g.lipschitz(),
        lipschitz_h: problem.h.lipschitz(),
        integrability_l2: l2,
        integrability_sup: sup,
        integrable: l2.is_finite() && sup.is_finite(),
        obstacle_below_initial,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    /// Max ratio over pairs differing in `y` only.
    pub y: f64,
    /// Max ratio over pairs differing in `z` only.
    pub z: f64,
}

impl LipschitzEstimate {
    /// `(C, alpha or beta)` as read for the term's role; for `f` both
    /// arguments share one constant and the second slot is `None`.
    pub fn constants(&self, role: Role) -> (f64, Option<f64>) {
        match role {
            Role::F => (self.y.max(self.z), None),
            Role::G | Role::H => (self.y, Some(self.z)),
        }
    }
}

/// Largest sampled difference ratios of `term`, with `y` and `z` drawn
/// from `[-10, 10]`, `t` from `[0, horizon]` and nodes uniformly.
pub fn estimate_lipschitz<R: Rng>(
    term: &NonlinearTerm,
    grid: &SpatialGrid,
    horizon: f64,
    budget: usize,
    rng: &mut R,
) -> Result<LipschitzEstimate> {
    if budget == 0 {
        return Err(Error::InvalidProblem("sample budget must be at least 1".into()));
    }
    let d = grid.dim();
    let w = term.width();
    let mut a = vec![0.0; w];
    let mut b = vec![0.0; w];
    let mut est = LipschitzEstimate { y: 0.0, z: 0.0 };
    for _ in 0..budget {
        let t = rng.random_range(0.0..=horizon);
        let node = rng.random_range(0..grid.node_count());
        let x = grid.point(node);
        let y1: f64 = rng.random_range(-10.0..10.0);
        let y2: f64 = rng.random_range(-10.0..10.0);
        let z1: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let z2: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();

        term.eval(&Point { t, node, x, y: y1, z: &z1 }, &mut a);
        term.eval(&Point { t, node, x, y: y2, z: &z1 }, &mut b);
        est.y = est.y.max(ratio(&a, &b, (y1 - y2).abs())?);

        term.eval(&Point { t, node, x, y: y1, z: &z2 }, &mut b);
        let dz = z1.iter().zip(&z2).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        est.z = est.z.max(ratio(&a, &b, dz)?);
    }
    Ok(est)
}

fn ratio(a: &[f64], b: &[f64], gap: f64) -> Result<f64> {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("term evaluation".into()));
    }
    if gap == 0.0 {
        return Ok(0.0);
    }
    Ok(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() / gap)
}

/// A simulated path with its nodal gradients, looked up at the level
/// `floor(t / dt)`.
#[derive(Debug, Clone)]
pub struct PathLookup {
    time: TimeGrid,
    dim: usize,
    values: Vec<GridField>,
    gradients: Vec<Vec<f64>>,
}

impl PathLookup {
    pub fn new(levels: &[GridField], grid: &SpatialGrid, time: &TimeGrid) -> Result<Self> {
        if levels.len() != time.steps() + 1 {
            return Err(Error::ShapeMismatch { expected: time.steps() + 1, found: levels.len() });
        }
        let gradients = levels.iter().map(|f| nodal_gradients(f, grid)).collect::<Result<Vec<_>>>()?;
        Ok(Self { time: *time, dim: grid.dim(), values: levels.to_vec(), gradients })
    }

    fn level(&self, t: f64) -> usize {
        self.time.steps_until(t.min(self.time.horizon())).unwrap_or(0)
    }

    fn value(&self, t: f64, node: usize) -> f64 {
        self.values[self.level(t)].values()[node]
    }

    fn gradient(&self, t: f64, node: usize) -> &[f64] {
        &self.gradients[self.level(t)][node * self.dim..(node + 1) * self.dim]
    }

    fn node_count(&self) -> usize {
        self.values[0].len()
    }
}

/// `term(t, x, y + sign S', z + sign grad S') - sign prime(t, x)`: with
/// `sign = 1` this is the shifted coefficient, with `sign = -1` its inverse.
fn shift_term(term: &NonlinearTerm, path: &Arc<PathLookup>, prime: &NonlinearTerm, sign: f64) -> Result<NonlinearTerm> {
    if term.width() != prime.width() {
        return Err(Error::ShapeMismatch { expected: term.width(), found: prime.width() });
    }
    let (term, prime, path) = (term.clone(), prime.clone(), Arc::clone(path));
    let name = if sign > 0.0 { format!("shifted({})", term.name) } else { format!("unshifted({})", term.name) };
    let (role, width, lip, free) = (term.role, term.width, term.lipschitz, term.state_free);
    Ok(NonlinearTerm::new(name, role, width, lip, free, move |p, out| {
        if p.node >= path.node_count() {
            out.fill(f64::NAN);
            return;
        }
        let s = path.value(p.t, p.node);
        let gs = path.gradient(p.t, p.node);
        let z: Vec<f64> = p.z.iter().zip(gs).map(|(z, g)| z + sign * g).collect();
        term.eval(&Point { y: p.y + sign * s, z: &z, ..*p }, out);
        let mut q = vec![0.0; out.len()];
        prime.eval(p, &mut q);
        for (o, q) in out.iter_mut().zip(q) {
            *o -= sign * q;
        }
    }))
}

#[derive(Debug, Clone)]
pub struct ShiftedTerms {
    pub f: NonlinearTerm,
    pub g: NonlinearTerm,
    pub h: NonlinearTerm,
}

/// `(f-bar, g-bar, h-bar)` around the dominating path `S'`.
pub fn shift_coefficients(
    terms: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
    s_prime: &PathLookup,
    primes: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
) -> Result<ShiftedTerms> {
    shift_all(terms, s_prime, primes, 1.0)
}

/// Inverse of [`shift_coefficients`].
pub fn unshift_coefficients(
    shifted: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
    s_prime: &PathLookup,
    primes: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
) -> Result<ShiftedTerms> {
    shift_all(shifted, s_prime, primes, -1.0)
}

fn shift_all(
    terms: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
    s_prime: &PathLookup,
    primes: (&NonlinearTerm, &NonlinearTerm, &NonlinearTerm),
    sign: f64,
) -> Result<ShiftedTerms> {
    let path = Arc::new(s_prime.clone());
    Ok(ShiftedTerms {
        f: shift_term(terms.0, &path, primes.0, sign)?,
        g: shift_term(terms.1, &path, primes.1, sign)?,
        h: shift_term(terms.2, &path, primes.2, sign)?,
    })
}
