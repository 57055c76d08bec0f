//! The time-dependent divergence-form operator `-div(a(t, x) grad u)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{GridField, SpatialGrid};
use crate::linalg::CsrMatrix;

/// Symmetric 2x2 matrix; for d = 1 only the `[0][0]` entry is used.
pub type Matrix2 = [[f64; 2]; 2];

const IDENTITY: Matrix2 = [[1.0, 0.0], [0.0, 1.0]];

/// Declared structure constants `lambda <= a <= Lambda`, `|a_ij| <= M`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EllipticityBounds {
    pub lower: f64,
    pub upper: f64,
    pub entry: f64,
}

/// Tabulated coefficient: piecewise constant in time (last sample time not
/// after `t`), nearest sample point in space.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCoefficient {
    times: Vec<f64>,
    // per time: (point, matrix)
    samples: Vec<Vec<([f64; 2], Matrix2)>>,
}

impl TabulatedCoefficient {
    /// Rows are `(t, point, matrix)`.
    pub fn new(rows: Vec<(f64, [f64; 2], Matrix2)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidProblem("empty coefficient table".into()));
        }
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::new();
        let mut samples: Vec<Vec<([f64; 2], Matrix2)>> = Vec::new();
        for (t, p, m) in rows {
            if times.last() != Some(&t) {
                times.push(t);
                samples.push(Vec::new());
            }
            samples.last_mut().expect("pushed").push((p, m));
        }
        Ok(Self { times, samples })
    }

    fn eval(&self, t: f64, x: &[f64]) -> Matrix2 {
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        let dist = |p: &[f64; 2]| x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.samples[k]
            .iter()
            .min_by(|a, b| dist(&a.0).total_cmp(&dist(&b.0)))
            .map(|s| s.1)
            .expect("nonempty table")
    }
}

#[derive(Clone)]
pub enum CoefficientKind {
    Identity,
    /// `(1 + 1/2 sin(2 pi t) prod_a sin(pi x_a / L_a)) I`.
    ScalarSin { extents: Vec<f64> },
    AnisotropicConst(Matrix2),
    Tabulated(TabulatedCoefficient),
    Custom(Arc<dyn Fn(f64, &[f64]) -> Matrix2 + Send + Sync>),
}

impl fmt::Debug for CoefficientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::ScalarSin { extents } => write!(f, "ScalarSin({extents:?})"),
            Self::AnisotropicConst(m) => write!(f, "AnisotropicConst({m:?})"),
            Self::Tabulated(_) => write!(f, "Tabulated"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Coefficient field `a(t, x)` with its declared bounds.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    kind: CoefficientKind,
    bounds: EllipticityBounds,
}

impl CoefficientField {
    pub fn new(kind: CoefficientKind, bounds: EllipticityBounds) -> Result<Self> {
        let b = bounds;
        if !(b.lower > 0.0 && b.upper >= b.lower && b.entry > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "ellipticity bounds must satisfy 0 < lambda <= Lambda and M > 0, got {b:?}"
            )));
        }
        Ok(Self { kind, bounds })
    }

    pub fn identity() -> Self {
        Self {
            kind: CoefficientKind::Identity,
            bounds: EllipticityBounds { lower: 1.0, upper: 1.0, entry: 1.0 },
        }
    }

    pub fn scalar_sin(extents: &[f64]) -> Self {
        Self {
            kind: CoefficientKind::ScalarSin { extents: extents.to_vec() },
            bounds: EllipticityBounds { lower: 0.5, upper: 1.5, entry: 1.5 },
        }
    }

    /// Constant symmetric matrix; the declared bounds are its exact eigenvalues.
    pub fn anisotropic(dim: usize, m: Matrix2) -> Result<Self> {
        let (lo, hi) = eigen_range(dim, &m);
        let entry = if dim == 1 {
            m[0][0].abs()
        } else {
            m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()))
        };
        Self::new(
            CoefficientKind::AnisotropicConst(m),
            EllipticityBounds { lower: lo, upper: hi, entry },
        )
    }

    pub fn kind(&self) -> &CoefficientKind {
        &self.kind
    }

    pub fn bounds(&self) -> EllipticityBounds {
        self.bounds
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, CoefficientKind::Identity)
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.kind {
            CoefficientKind::Identity | CoefficientKind::AnisotropicConst(_) => true,
            CoefficientKind::Tabulated(t) => t.times.len() == 1,
            CoefficientKind::ScalarSin { .. } | CoefficientKind::Custom(_) => false,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Matrix2 {
        match &self.kind {
            CoefficientKind::Identity => IDENTITY,
            CoefficientKind::ScalarSin { extents } => {
                let s: f64 = x.iter().zip(extents).map(|(xi, l)| (PI * xi / l).sin()).product();
                let c = 1.0 + 0.5 * (2.0 * PI * t).sin() * s;
                [[c, 0.0], [0.0, c]]
            }
            CoefficientKind::AnisotropicConst(m) => *m,
            CoefficientKind::Tabulated(tab) => tab.eval(t, x),
            CoefficientKind::Custom(f) => f(t, x),
        }
    }
}

fn eigen_range(dim: usize, m: &Matrix2) -> (f64, f64) {
    if dim == 1 {
        return (m[0][0], m[0][0]);
    }
    let tr = 0.5 * (m[0][0] + m[1][1]);
    let r = (0.25 * (m[0][0] - m[1][1]).powi(2) + m[0][1] * m[1][0]).max(0.0).sqrt();
    (tr - r, tr + r)
}

fn rayleigh(dim: usize, m: &Matrix2, eta: &[f64; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..dim {
        den += eta[i] * eta[i];
        for j in 0..dim {
            num += eta[i] * m[i][j] * eta[j];
        }
    }
    num / den
}

/// Directions probed by the ellipticity check: the canonical axes, the
/// eigenvectors (d = 2), and a few random unit vectors.
fn probe_directions(dim: usize, m: &Matrix2, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut dirs = vec![[1.0, 0.0]];
    if dim == 2 {
        dirs.push([0.0, 1.0]);
        let theta = 0.5 * (2.0 * m[0][1]).atan2(m[0][0] - m[1][1]);
        dirs.push([theta.cos(), theta.sin()]);
        dirs.push([-theta.sin(), theta.cos()]);
        for _ in 0..4 {
            let a: f64 = rng.random_range(0.0..2.0 * PI);
            dirs.push([a.cos(), a.sin()]);
        }
    }
    dirs
}

/// Samples `a` at every gradient-cell centroid and every time in `times`;
/// returns the extreme Rayleigh quotients `(lambda_hat, Lambda_hat)`.
pub fn check_ellipticity(
    a: &CoefficientField,
    grid: &SpatialGrid,
    times: &[f64],
) -> Result<(f64, f64)> {
    if times.is_empty() {
        return Err(Error::InvalidProblem("ellipticity check needs at least one time".into()));
    }
    let d = grid.dim();
    let b = a.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(0x05ee_de11);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut lo_witness = (0.0, vec![], vec![]);
    let mut hi_witness = (0.0, vec![], vec![]);
    for &t in times {
        for cell in grid.cells() {
            let x = &cell.centroid[..d];
            let m = a.eval(t, x);
            let scale = m.iter().flatten().fold(1.0f64, |s, v| s.max(v.abs()));
            if d == 2 && (m[0][1] - m[1][0]).abs() > 1e-12 * scale {
                return Err(Error::AsymmetricCoefficient { t, x: x.to_vec() });
            }
            for i in 0..d {
                for j in 0..d {
                    if !m[i][j].is_finite() {
                        return Err(Error::NonFinite("coefficient field".into()));
                    }
                    if m[i][j].abs() > b.entry + 1e-12 {
                        return Err(Error::EntryBound {
                            t,
                            x: x.to_vec(),
                            value: m[i][j],
                            bound: b.entry,
                        });
                    }
                }
            }
            for eta in probe_directions(d, &m, &mut rng) {
                let q = rayleigh(d, &m, &eta);
                if q < lo {
                    lo = q;
                    lo_witness = (t, x.to_vec(), eta[..d].to_vec());
                }
                if q > hi {
                    hi = q;
                    hi_witness = (t, x.to_vec(), eta[..d].to_vec());
                }
            }
        }
    }
    if lo <= 1e-12 {
        return Err(Error::DegenerateCoefficient(lo));
    }
    if lo < b.lower - 1e-12 {
        let (t, x, eta) = lo_witness;
        return Err(Error::EllipticityViolation {
            t,
            x,
            eta,
            quotient: lo,
            lower: b.lower,
            upper: b.upper,
        });
    }
    if hi > b.upper + 1e-12 {
        let (t, x, eta) = hi_witness;
        return Err(Error::EllipticityViolation {
            t,
            x,
            eta,
            quotient: hi,
            lower: b.lower,
            upper: b.upper,
        });
    }
    Ok((lo, hi))
}

/// Mass-scaled stiffness `A(t)` on interior unknowns: `(A u, phi)` equals the
/// discrete Dirichlet form `sum_c vol_c (grad u)_c . a_c (grad phi)_c`.
#[derive(Debug, Clone)]
pub struct StiffnessOperator {
    matrix: CsrMatrix,
    time: f64,
    cell_volume: f64,
}

impl StiffnessOperator {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// `A u` on interior vectors.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.apply(u)
    }

    /// Dirichlet form `E(u, v) = (A u, v)` on interior vectors.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        self.cell_volume * self.matrix.quadratic_form(v, u)
    }
}

/// Assembles `A(t)` from the coefficient at cell centroids, after checking
/// ellipticity at time `t`.
pub fn assemble_stiffness(
    a: &CoefficientField,
    t: f64,
    grid: &SpatialGrid,
) -> Result<StiffnessOperator> {
    check_ellipticity(a, grid, &[t])?;
    Ok(assemble_unchecked(a, t, grid))
}

pub(crate) fn assemble_unchecked(a: &CoefficientField, t: f64, grid: &SpatialGrid) -> StiffnessOperator {
    let d = grid.dim();
    let mass = grid.cell_volume();
    let mut triplets = Vec::with_capacity(grid.cells().len() * (d + 1) * (d + 1));
    for cell in grid.cells() {
        let m = a.eval(t, &cell.centroid[..d]);
        for p in 0..=d {
            let Some(ip) = grid.interior_index(cell.vertices[p]) else { continue };
            for q in 0..=d {
                let Some(iq) = grid.interior_index(cell.vertices[q]) else { continue };
                let mut v = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        v += cell.grads[p][i] * m[i][j] * cell.grads[q][j];
                    }
                }
                triplets.push((ip, iq, cell.volume * v / mass));
            }
        }
    }
    let mut matrix = CsrMatrix::from_triplets(grid.interior_count(), triplets);
    symmetrize(&mut matrix);
    StiffnessOperator { matrix, time: t, cell_volume: mass }
}

// Summation order can differ between (i, j) and (j, i); average to make
// the matrix bitwise symmetric.
fn symmetrize(m: &mut CsrMatrix) {
    let n = m.dim();
    let mut triplets = Vec::with_capacity(m.nnz());
    for i in 0..n {
        for (j, v) in m.row(i) {
            triplets.push((i, j, 0.5 * (v + m.get(j, i))));
        }
    }
    *m = CsrMatrix::from_triplets(n, triplets);
}

/// Weak divergence `D(g)` of a per-cell vector field (flattened `dim` per
/// cell): `(D(g), phi) = -sum_i (g_i, d_i phi)` for every grid field `phi`
/// vanishing on the boundary. Boundary values of the result are zero.
pub fn divergence_term(g: &[f64], grid: &SpatialGrid) -> Result<GridField> {
    let d = grid.dim();
    let expected = grid.cells().len() * d;
    if g.len() != expected {
        return Err(Error::ShapeMismatch { expected, found: g.len() });
    }
    let mut out = vec![0.0; grid.node_count()];
    for (c, cell) in grid.cells().iter().enumerate() {
        for v in 0..=d {
            let node = cell.vertices[v];
            if grid.is_boundary(node) {
                continue;
            }
            let dot: f64 = (0..d).map(|a| g[c * d + a] * cell.grads[v][a]).sum();
            out[node] -= cell.volume * dot;
        }
    }
    for (node, o) in out.iter_mut().enumerate() {
        if !grid.is_boundary(node) {
            *o /= grid.weight(node);
        }
    }
    Ok(GridField::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, cell_gradients, gradient_norm_sq, l2_inner};
    use proptest::prelude::*;

    #[test]
    fn ellipticity_of_builtins() {
        let g = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
        assert_eq!(check_ellipticity(&CoefficientField::identity(), &g, &[0.0]).unwrap(), (1.0, 1.0));
        let a = CoefficientField::anisotropic(2, [[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let (lo, hi) = check_ellipticity(&a, &g, &[0.0, 1.0]).unwrap();
        assert!((lo - 2.0).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_sin_range_refines_to_half_and_three_halves() {
        let g = build_grid(1, &[1.0], &[201]).unwrap();
        let a = CoefficientField::scalar_sin(&[1.0]);
        let times: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
        let (lo, hi) = check_ellipticity(&a, &g, &times).unwrap();
        assert!((lo - 0.5).abs() < 1e-3, "{lo}");
        assert!((hi - 1.5).abs() < 1e-3, "{hi}");
    }

    #[test]
    fn ellipticity_violation_reports_witness() {
        let g = build_grid(1, &[1.0], &[5]).unwrap();
        let a = CoefficientField::new(
            CoefficientKind::Custom(Arc::new(|_, x| {
                let c = if x[0] > 0.5 { 3.0 } else { 1.0 };
                [[c, 0.0], [0.0, c]]
            })),
            EllipticityBounds { lower: 1.0, upper: 2.0, entry: 5.0 },
        )
        .unwrap();
        match check_ellipticity(&a, &g, &[0.0]) {
            Err(Error::EllipticityViolation { x, quotient, .. }) => {
                assert!(x[0] > 0.5);
                assert_eq!(quotient, 3.0);
            }
            other => panic!("{other:?}"),
        }
        let degenerate = CoefficientField::new(
            CoefficientKind::Custom(Arc::new(|_, _| [[0.0, 0.0], [0.0, 0.0]])),
            EllipticityBounds { lower: 1.0, upper: 2.0, entry: 5.0 },
        )
        .unwrap();
        assert!(matches!(
            check_ellipticity(&degenerate, &g, &[0.0]),
            Err(Error::DegenerateCoefficient(_))
        ));
    }

    #[test]
    fn one_dimensional_laplacian() {
        let h = 0.125;
        let g = build_grid(1, &[1.0], &[9]).unwrap();
        let s = assemble_stiffness(&CoefficientField::identity(), 0.0, &g).unwrap();
        let m = s.matrix();
        for i in 0..7 {
            assert!((m.get(i, i) - 2.0 / (h * h)).abs() < 1e-9);
            if i > 0 {
                assert!((m.get(i, i - 1) + 1.0 / (h * h)).abs() < 1e-9);
            }
        }
        assert!(m.is_symmetric());
        let c = CoefficientField::anisotropic(1, [[3.0, 0.0], [0.0, 0.0]]).unwrap();
        let m3 = assemble_stiffness(&c, 0.0, &g).unwrap();
        for i in 0..7 {
            for (j, v) in m.row(i) {
                assert!((m3.matrix().get(i, j) - 3.0 * v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_dimensional_identity_is_five_point() {
        let g = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
        let s = assemble_stiffness(&CoefficientField::identity(), 0.0, &g).unwrap();
        let h2 = 0.2 * 0.2;
        let m = s.matrix();
        assert!((m.get(5, 5) - 4.0 / h2).abs() < 1e-9);
        assert!((m.get(5, 6) + 1.0 / h2).abs() < 1e-9);
        assert!((m.get(5, 9) + 1.0 / h2).abs() < 1e-9);
        assert_eq!(m.get(5, 10), 0.0);
        assert_eq!(m.get(5, 8), 0.0);
        assert!(m.is_symmetric());
    }

    #[test]
    fn divergence_of_constant_lives_next_to_boundary() {
        let g = build_grid(1, &[1.0], &[5]).unwrap();
        let dg = divergence_term(&[2.0; 4], &g).unwrap();
        // (D g)_i = -(g_{i-1/2} * (1/h) + g_{i+1/2} * (-1/h)) * h / h
        assert_eq!(dg.values(), &[0.0, 0.0, 0.0, 0.0, 0.0]);
        let dg = divergence_term(&[1.0, 2.0, 2.0, 3.0], &g).unwrap();
        // node 1: -(1*4 - 2*4)*0.25/0.25 = 4; node 2: 0; node 3: -(2*4 - 3*4) = 4
        assert_eq!(dg.values(), &[0.0, 4.0, 0.0, 4.0, 0.0]);
        assert_eq!(divergence_term(&[0.0; 4], &g).unwrap().values(), &[0.0; 5]);
        assert!(divergence_term(&[0.0; 3], &g).is_err());
    }

    fn random_field(grid: &SpatialGrid, vals: &[f64]) -> GridField {
        GridField::from_interior(grid, &vals[..grid.interior_count()], 0.0)
    }

    proptest! {
        #[test]
        fn divergence_is_adjoint_of_gradient(
            g in prop::collection::vec(-3.0f64..3.0, 50),
            phi in prop::collection::vec(-3.0f64..3.0, 16),
        ) {
            let grid = build_grid(2, &[1.0, 1.5], &[6, 6]).unwrap();
            let ncell = grid.cells().len();
            let gv = &g.iter().cycle().take(ncell * 2).copied().collect::<Vec<_>>();
            let phi = random_field(&grid, &phi);
            let dg = divergence_term(gv, &grid).unwrap();
            let lhs = l2_inner(&dg, &phi, &grid).unwrap();
            let grad = cell_gradients(&phi, &grid).unwrap();
            let rhs: f64 = grid.cells().iter().enumerate()
                .map(|(c, cell)| cell.volume * (gv[2 * c] * grad[2 * c] + gv[2 * c + 1] * grad[2 * c + 1]))
                .sum();
            prop_assert!((lhs + rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }

        #[test]
        fn energy_is_bracketed_by_ellipticity(
            vals in prop::collection::vec(-1.0f64..1.0, 16),
            t in 0.0f64..1.0,
        ) {
            let grid = build_grid(2, &[1.0, 1.0], &[6, 6]).unwrap();
            let a = CoefficientField::scalar_sin(&[1.0, 1.0]);
            let (lo, hi) = check_ellipticity(&a, &grid, &[t]).unwrap();
            let s = assemble_stiffness(&a, t, &grid).unwrap();
            let u = random_field(&grid, &vals);
            let ui = u.interior(&grid);
            let e = s.energy(&ui, &ui);
            let gn = gradient_norm_sq(&u, &grid).unwrap();
            prop_assert!(e >= lo * gn * (1.0 - 1e-12) - 1e-12);
            prop_assert!(e <= hi * gn * (1.0 + 1e-12) + 1e-12);
        }
    }
}
