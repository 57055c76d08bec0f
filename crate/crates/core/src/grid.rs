//! Box grids, grid functions, and the norms used by estimates.
//!
//! Space integrals use nodal (mass-lumped) quadrature: the trapezoid weight
//! of a node is the cell volume times `1/2` per axis on which the node sits
//! on the boundary. Time integrals use the left-endpoint rule.
//!
//! Gradients live on *gradient cells*: segments in 1D and the two right
//! triangles of every square in 2D. On each cell the gradient of the
//! piecewise-linear interpolant is constant and is a forward (or backward)
//! difference of the vertex values, so the discrete Dirichlet form
//! `sum_c vol_c (grad u)_c . a_c (grad v)_c` is exactly the stiffness
//! matrix assembled in [`crate::operator`].

use serde::Serialize;

use crate::error::{Error, Result};

/// Maximum number of vertices of a gradient cell (triangle).
pub const MAX_CELL_VERTICES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCell {
    /// Node ids of the vertices; only the first `dim + 1` are used.
    pub vertices: [usize; MAX_CELL_VERTICES],
    /// `grads[v][axis]`: derivative of the cell gradient along `axis`
    /// with respect to the value at vertex `v`.
    pub grads: [[f64; 2]; MAX_CELL_VERTICES],
    pub volume: f64,
    pub centroid: [f64; 2],
}

impl GradientCell {
    pub fn vertex_count(&self, dim: usize) -> usize {
        dim + 1
    }
}

/// Uniform grid on the box `(0, L_1) x ... x (0, L_d)`, `d` in {1, 2}.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dim: usize,
    extents: Vec<f64>,
    nodes_per_axis: Vec<usize>,
    spacing: Vec<f64>,
    coords: Vec<[f64; 2]>,
    boundary: Vec<bool>,
    weights: Vec<f64>,
    interior: Vec<usize>,
    interior_index: Vec<Option<usize>>,
    cells: Vec<GradientCell>,
    cell_volume: f64,
}

impl SpatialGrid {
    /// Builds a uniform grid; `nodes_per_axis` counts boundary nodes.
    pub fn new(dim: usize, extents: &[f64], nodes_per_axis: &[usize]) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if extents.len() != dim || nodes_per_axis.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} extents and node counts, got {} and {}",
                extents.len(),
                nodes_per_axis.len()
            )));
        }
        for (&l, &n) in extents.iter().zip(nodes_per_axis) {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("extent {l} must be positive")));
            }
            if n < 3 {
                return Err(Error::InvalidGrid(format!(
                    "{n} nodes per axis; at least 3 are required"
                )));
            }
        }
        let spacing: Vec<f64> = extents
            .iter()
            .zip(nodes_per_axis)
            .map(|(&l, &n)| l / (n - 1) as f64)
            .collect();
        let cell_volume = spacing.iter().product();

        let (nx, ny) = (nodes_per_axis[0], if dim == 2 { nodes_per_axis[1] } else { 1 });
        let total = nx * ny;
        let mut coords = Vec::with_capacity(total);
        let mut boundary = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for j in 0..ny {
            for i in 0..nx {
                let x = i as f64 * spacing[0];
                let y = if dim == 2 { j as f64 * spacing[1] } else { 0.0 };
                coords.push([x, y]);
                let bx = i == 0 || i == nx - 1;
                let by = dim == 2 && (j == 0 || j == ny - 1);
                boundary.push(bx || by);
                let mut w = cell_volume;
                if bx {
                    w *= 0.5;
                }
                if by {
                    w *= 0.5;
                }
                weights.push(w);
            }
        }
        let mut interior = Vec::new();
        let mut interior_index = vec![None; total];
        for (node, &b) in boundary.iter().enumerate() {
            if !b {
                interior_index[node] = Some(interior.len());
                interior.push(node);
            }
        }

        let mut cells = Vec::new();
        if dim == 1 {
            let h = spacing[0];
            for i in 0..nx - 1 {
                cells.push(GradientCell {
                    vertices: [i, i + 1, usize::MAX],
                    grads: [[-1.0 / h, 0.0], [1.0 / h, 0.0], [0.0, 0.0]],
                    volume: h,
                    centroid: [(i as f64 + 0.5) * h, 0.0],
                });
            }
        } else {
            let (hx, hy) = (spacing[0], spacing[1]);
            let vol = 0.5 * hx * hy;
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let n00 = i + nx * j;
                    let n10 = n00 + 1;
                    let n01 = n00 + nx;
                    let n11 = n01 + 1;
                    let (x0, y0) = (i as f64 * hx, j as f64 * hy);
                    cells.push(GradientCell {
                        vertices: [n00, n10, n01],
                        grads: [[-1.0 / hx, -1.0 / hy], [1.0 / hx, 0.0], [0.0, 1.0 / hy]],
                        volume: vol,
                        centroid: [x0 + hx / 3.0, y0 + hy / 3.0],
                    });
                    cells.push(GradientCell {
                        vertices: [n11, n01, n10],
                        grads: [[1.0 / hx, 1.0 / hy], [-1.0 / hx, 0.0], [0.0, -1.0 / hy]],
                        volume: vol,
                        centroid: [x0 + 2.0 * hx / 3.0, y0 + 2.0 * hy / 3.0],
                    });
                }
            }
        }
        if interior.is_empty() {
            return Err(Error::InvalidGrid("grid has no interior node".into()));
        }

        Ok(Self {
            dim,
            extents: extents.to_vec(),
            nodes_per_axis: nodes_per_axis.to_vec(),
            spacing,
            coords,
            boundary,
            weights,
            interior,
            interior_index,
            cells,
            cell_volume,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes_per_axis
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    /// Coordinates of `node`; only the first `dim` entries are meaningful.
    pub fn point(&self, node: usize) -> &[f64] {
        &self.coords[node][..self.dim]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Lumped quadrature weight of `node`.
    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node ids of interior nodes, lexicographic with x fastest.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_count(&self) -> usize {
        self.interior.len()
    }

    pub fn interior_index(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    pub fn cells(&self) -> &[GradientCell] {
        &self.cells
    }

    /// Largest index distance between coupled interior unknowns.
    pub fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.nodes_per_axis[0] - 2
        }
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        self.extents.iter().product()
    }

    pub(crate) fn check(&self, field: &GridField) -> Result<()> {
        if field.len() != self.node_count() {
            return Err(Error::ShapeMismatch {
                expected: self.node_count(),
                found: field.len(),
            });
        }
        Ok(())
    }
}

/// Builds a uniform grid with a flagged Dirichlet boundary.
pub fn build_grid(dim: usize, extents: &[f64], nodes_per_axis: &[usize]) -> Result<SpatialGrid> {
    SpatialGrid::new(dim, extents, nodes_per_axis)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// `steps` may be zero, in which case the grid is the single level `t_0 = 0`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon {horizon} must be positive")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            self.horizon
        } else {
            self.horizon / self.steps as f64
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Number of whole steps contained in `[0, t]`.
    pub fn steps_until(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        if self.steps == 0 {
            return Ok(0);
        }
        let n = (t / self.dt() + 1e-9).floor() as usize;
        Ok(n.min(self.steps))
    }
}

/// Values of a grid function at every node (boundary included).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridField(Vec<f64>);

impl GridField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(grid: &SpatialGrid) -> Self {
        Self(vec![0.0; grid.node_count()])
    }

    pub fn constant(grid: &SpatialGrid, c: f64) -> Self {
        Self(vec![c; grid.node_count()])
    }

    pub fn from_fn(grid: &SpatialGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Self((0..grid.node_count()).map(|n| f(grid.point(n))).collect())
    }

    /// Same as [`GridField::from_fn`] but forced to zero on the boundary.
    pub fn from_fn_dirichlet(grid: &SpatialGrid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        Self(
            (0..grid.node_count())
                .map(|n| if grid.is_boundary(n) { 0.0 } else { f(grid.point(n)) })
                .collect(),
        )
    }

    /// Scatters interior values into a full field with `boundary` on the boundary.
    pub fn from_interior(grid: &SpatialGrid, interior: &[f64], boundary: f64) -> Self {
        let mut values = vec![boundary; grid.node_count()];
        for (&node, &v) in grid.interior_nodes().iter().zip(interior) {
            values[node] = v;
        }
        Self(values)
    }

    pub fn interior(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.interior_nodes().iter().map(|&n| self.0[n]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| c * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_pair(u: &GridField, v: &GridField, grid: &SpatialGrid) -> Result<()> {
    grid.check(u)?;
    grid.check(v)
}

/// Lumped-quadrature approximation of `int u v dx`.
pub fn l2_inner(u: &GridField, v: &GridField, grid: &SpatialGrid) -> Result<f64> {
    check_pair(u, v, grid)?;
    Ok(u.0
        .iter()
        .zip(&v.0)
        .zip(grid.weights())
        .map(|((a, b), w)| w * a * b)
        .sum())
}

pub fn l2_norm(u: &GridField, grid: &SpatialGrid) -> Result<f64> {
    Ok(l2_inner(u, u, grid)?.sqrt())
}

/// `L^p(O)` norm with lumped weights; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(u: &GridField, p: f64, grid: &SpatialGrid) -> Result<f64> {
    grid.check(u)?;
    lp_of_slice(u.values(), p, grid.weights())
}

fn lp_of_slice(values: &[f64], p: f64, weights: &[f64]) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(format!("p = {p} must be in [1, inf]")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let s: f64 = values.iter().zip(weights).map(|(v, w)| w * v.abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

/// Constant gradient of `u` on every gradient cell, flattened `dim` per cell.
pub fn cell_gradients(u: &GridField, grid: &SpatialGrid) -> Result<Vec<f64>> {
    grid.check(u)?;
    let d = grid.dim();
    let mut out = vec![0.0; grid.cells().len() * d];
    for (c, cell) in grid.cells().iter().enumerate() {
        for v in 0..=d {
            let value = u.0[cell.vertices[v]];
            for a in 0..d {
                out[c * d + a] += cell.grads[v][a] * value;
            }
        }
    }
    Ok(out)
}

/// Volume-weighted average of adjacent cell gradients at every node,
/// flattened `dim` per node. In 1D this is the central difference at
/// interior nodes and the one-sided difference at the ends.
pub fn nodal_gradients(u: &GridField, grid: &SpatialGrid) -> Result<Vec<f64>> {
    let cg = cell_gradients(u, grid)?;
    let d = grid.dim();
    let mut acc = vec![0.0; grid.node_count() * d];
    let mut vol = vec![0.0; grid.node_count()];
    for (c, cell) in grid.cells().iter().enumerate() {
        for &node in &cell.vertices[..=d] {
            vol[node] += cell.volume;
            for a in 0..d {
                acc[node * d + a] += cell.volume * cg[c * d + a];
            }
        }
    }
    for (node, &w) in vol.iter().enumerate() {
        for a in 0..d {
            acc[node * d + a] /= w;
        }
    }
    Ok(acc)
}

/// `||grad u||_2^2` from the cell gradients.
pub fn gradient_norm_sq(u: &GridField, grid: &SpatialGrid) -> Result<f64> {
    let cg = cell_gradients(u, grid)?;
    let d = grid.dim();
    Ok(grid
        .cells()
        .iter()
        .enumerate()
        .map(|(c, cell)| cell.volume * cg[c * d..(c + 1) * d].iter().map(|g| g * g).sum::<f64>())
        .sum())
}

/// `H^1_0` norm `(||u||^2 + ||grad u||^2)^(1/2)`; rejects fields that do
/// not vanish on the boundary.
pub fn h1_norm(u: &GridField, grid: &SpatialGrid) -> Result<f64> {
    grid.check(u)?;
    for (node, &v) in u.0.iter().enumerate() {
        if grid.is_boundary(node) && v != 0.0 {
            return Err(Error::NonZeroBoundary { node, value: v });
        }
    }
    Ok((l2_inner(u, u, grid)? + gradient_norm_sq(u, grid)?).sqrt())
}

/// Exponent pair used by the `#` norm in dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevExponent {
    /// `2*`: infinity for d = 1, fixed to 6 for d = 2.
    pub critical: f64,
    /// Conjugate `(2*)'`.
    pub conjugate: f64,
}

impl SobolevExponent {
    pub fn for_dim(dim: usize) -> Self {
        match dim {
            1 => Self { critical: f64::INFINITY, conjugate: 1.0 },
            _ => Self { critical: 6.0, conjugate: 6.0 / 5.0 },
        }
    }
}

/// Time-indexed sequence of grid fields, one per time level.
#[derive(Debug, Clone, Copy)]
pub struct SpaceTimeField<'a> {
    pub levels: &'a [GridField],
    pub grid: &'a SpatialGrid,
    pub time: &'a TimeGrid,
}

impl<'a> SpaceTimeField<'a> {
    pub fn new(levels: &'a [GridField], grid: &'a SpatialGrid, time: &'a TimeGrid) -> Result<Self> {
        if levels.len() != time.steps() + 1 {
            return Err(Error::ShapeMismatch { expected: time.steps() + 1, found: levels.len() });
        }
        for f in levels {
            grid.check(f)?;
        }
        Ok(Self { levels, grid, time })
    }
}

/// `||u||_{p,q;t}`: `L^p` in space, `L^q` in time over `[0, t]`.
///
/// Finite `q` integrates the levels `0..n` by the left-endpoint rule, `n`
/// being the number of steps in `[0, t]`; `q = inf` takes the max over
/// levels `0..=n`.
pub fn lpq_norm(u: SpaceTimeField<'_>, p: f64, q: f64, t: f64) -> Result<f64> {
    if q.is_nan() || q < 1.0 {
        return Err(Error::InvalidExponent(format!("q = {q} must be in [1, inf]")));
    }
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidExponent(format!("p = {p} must be in [1, inf]")));
    }
    let n = u.time.steps_until(t)?;
    let w = u.grid.weights();
    if q.is_infinite() {
        let mut m: f64 = 0.0;
        for f in &u.levels[..=n] {
            m = m.max(lp_of_slice(f.values(), p, w)?);
        }
        return Ok(m);
    }
    let dt = u.time.dt();
    let mut s = 0.0;
    for f in &u.levels[..n] {
        s += dt * lp_of_slice(f.values(), p, w)?.powf(q);
    }
    Ok(s.powf(1.0 / q))
}

/// `||u||_{#;t} = max(||u||_{2,inf;t}, ||u||_{2*,2;t})`.
pub fn sharp_norm(u: SpaceTimeField<'_>, t: f64) -> Result<f64> {
    let e = SobolevExponent::for_dim(u.grid.dim());
    Ok(lpq_norm(u, 2.0, f64::INFINITY, t)?.max(lpq_norm(u, e.critical, 2.0, t)?))
}

/// Computable upper bound on the dual norm of `#`:
/// `min(||v||_{2,1;t}, ||v||_{(2*)',2;t})`. Each branch pairs by Hölder
/// with one branch of [`sharp_norm`], so
/// `int int u v <= sharp_norm(u) * sharp_dual_surrogate(v)`.
pub fn sharp_dual_surrogate(v: SpaceTimeField<'_>, t: f64) -> Result<f64> {
    let e = SobolevExponent::for_dim(v.grid.dim());
    Ok(lpq_norm(v, 2.0, 1.0, t)?.min(lpq_norm(v, e.conjugate, 2.0, t)?))
}

/// Left-endpoint approximation of `int_0^t int_O u v dx ds`.
pub fn space_time_inner(u: SpaceTimeField<'_>, v: SpaceTimeField<'_>, t: f64) -> Result<f64> {
    if u.levels.len() != v.levels.len() {
        return Err(Error::ShapeMismatch { expected: u.levels.len(), found: v.levels.len() });
    }
    let n = u.time.steps_until(t)?;
    let dt = u.time.dt();
    let mut s = 0.0;
    for k in 0..n {
        s += dt * l2_inner(&u.levels[k], &v.levels[k], u.grid)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> SpatialGrid {
        build_grid(1, &[1.0], &[n]).unwrap()
    }

    #[test]
    fn uniform_partitions() {
        let g = line(5);
        assert_eq!(g.spacing()[0], 0.25);
        assert_eq!(g.interior_count(), 3);

        let g = build_grid(2, &[1.0, 1.0], &[3, 3]).unwrap();
        assert_eq!(g.interior_count(), 1);
        let node = g.interior_nodes()[0];
        assert_eq!(g.point(node), &[0.5, 0.5]);
        assert_eq!(g.cell_volume(), 0.25);

        let g = build_grid(1, &[2.0], &[9]).unwrap();
        assert_eq!(g.spacing()[0], 0.25);
        assert_eq!(g.interior_count(), 7);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(build_grid(0, &[], &[]).is_err());
        assert!(build_grid(3, &[1.0; 3], &[4; 3]).is_err());
        assert!(build_grid(1, &[0.0], &[5]).is_err());
        assert!(build_grid(1, &[-1.0], &[5]).is_err());
        assert!(build_grid(1, &[1.0], &[2]).is_err());
    }

    #[test]
    fn boundary_flags_and_weights() {
        let g = build_grid(2, &[1.0, 2.0], &[4, 5]).unwrap();
        let flagged = (0..g.node_count()).filter(|&n| g.is_boundary(n)).count();
        assert_eq!(flagged, 4 * 5 - 2 * 3);
        let total: f64 = g.weights().iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        for &n in g.interior_nodes() {
            let p = g.point(n);
            assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 2.0);
        }
    }

    #[test]
    fn inner_products() {
        let g = line(11);
        let one = GridField::constant(&g, 1.0);
        let zero = GridField::zeros(&g);
        assert!((l2_inner(&one, &one, &g).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(l2_inner(&one, &zero, &g).unwrap(), 0.0);
        let short = GridField::new(vec![1.0; 3]);
        assert!(matches!(l2_inner(&one, &short, &g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn sine_inner_product_converges_at_second_order() {
        // int_0^1 sin^2(pi x) dx = 1/2
        let err = |n: usize| {
            let g = line(n);
            let s = GridField::from_fn(&g, |x| (PI * x[0]).sin());
            (l2_inner(&s, &s, &g).unwrap() - 0.5).abs()
        };
        // Lumped quadrature of a periodic-like smooth integrand is very accurate.
        assert!(err(17) < 1e-12);
        // f = x^2 has f'(1) != f'(0), so the trapezoid error is exactly h^2/6.
        let e = |n: usize| {
            let g = line(n);
            let s = GridField::from_fn(&g, |x| x[0]);
            (l2_inner(&s, &s, &g).unwrap() - 1.0 / 3.0).abs()
        };
        let (e1, e2) = (e(17), e(33));
        assert!((e1 - 1.0 / (6.0 * 256.0)).abs() < 1e-14);
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn h1_norm_of_sine() {
        let target = (0.5 + PI * PI / 2.0).sqrt();
        let mut prev = f64::INFINITY;
        for n in [33, 65, 129, 257] {
            let g = line(n);
            let s = GridField::from_fn_dirichlet(&g, |x| (PI * x[0]).sin());
            let e = (h1_norm(&s, &g).unwrap() - target).abs();
            assert!(e < prev);
            prev = e;
        }
        assert!(prev < 1e-4);
        let g = line(9);
        assert_eq!(h1_norm(&GridField::zeros(&g), &g).unwrap(), 0.0);
        let s = GridField::from_fn_dirichlet(&g, |x| (PI * x[0]).sin());
        let a = h1_norm(&s, &g).unwrap();
        let b = h1_norm(&s.scaled(-3.0), &g).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
        let bad = GridField::constant(&g, 1.0);
        assert!(matches!(h1_norm(&bad, &g), Err(Error::NonZeroBoundary { .. })));
    }

    #[test]
    fn nodal_gradient_is_central_difference() {
        let g = line(5);
        let u = GridField::new(vec![0.0, 1.0, 4.0, 9.0, 16.0]);
        let ng = nodal_gradients(&u, &g).unwrap();
        assert!((ng[2] - (9.0 - 1.0) / 0.5).abs() < 1e-12);
        assert!((ng[0] - 4.0).abs() < 1e-12);
    }

    fn series(g: &SpatialGrid, tg: &TimeGrid, f: impl Fn(f64, &[f64]) -> f64) -> Vec<GridField> {
        (0..=tg.steps()).map(|k| GridField::from_fn(g, |x| f(tg.time(k), x))).collect()
    }

    #[test]
    fn lpq_examples() {
        let g = line(11);
        let tg = TimeGrid::new(1.0, 1000).unwrap();
        let ones = series(&g, &tg, |_, _| 1.0);
        let st = SpaceTimeField::new(&ones, &g, &tg).unwrap();
        assert!((lpq_norm(st, 2.0, 2.0, 1.0).unwrap() - 1.0).abs() < 1e-12);

        let c = series(&g, &tg, |_, _| -2.5);
        let st = SpaceTimeField::new(&c, &g, &tg).unwrap();
        assert_eq!(lpq_norm(st, f64::INFINITY, f64::INFINITY, 1.0).unwrap(), 2.5);

        let s = series(&g, &tg, |t, _| t);
        let st = SpaceTimeField::new(&s, &g, &tg).unwrap();
        let v = lpq_norm(st, f64::INFINITY, 2.0, 1.0).unwrap();
        assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-3, "{v}");

        assert!(lpq_norm(st, 0.5, 2.0, 1.0).is_err());
        assert!(lpq_norm(st, 2.0, 0.0, 1.0).is_err());
        assert!(lpq_norm(st, 2.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn sharp_norms() {
        let g = line(11);
        let tg = TimeGrid::new(1.0, 100).unwrap();
        let z = series(&g, &tg, |_, _| 0.0);
        let st = SpaceTimeField::new(&z, &g, &tg).unwrap();
        assert_eq!(sharp_norm(st, 1.0).unwrap(), 0.0);
        assert_eq!(sharp_dual_surrogate(st, 1.0).unwrap(), 0.0);

        // constant c on (0,1)x(0,1), d = 1: ||.||_{2,inf} = c, ||.||_{inf,2} = c
        let c = series(&g, &tg, |_, _| 3.0);
        let st = SpaceTimeField::new(&c, &g, &tg).unwrap();
        assert!((sharp_norm(st, 1.0).unwrap() - 3.0).abs() < 1e-12);
        // dual: ||.||_{2,1} = c, ||.||_{1,2} = c; over [0, 1/2]: c/2 and c/sqrt 2
        assert!((sharp_dual_surrogate(st, 1.0).unwrap() - 3.0).abs() < 1e-12);
        assert!((sharp_dual_surrogate(st, 0.5).unwrap() - 1.5).abs() < 1e-12);

        let g2 = build_grid(1, &[4.0], &[9]).unwrap();
        let c = series(&g2, &tg, |_, _| 1.0);
        let st = SpaceTimeField::new(&c, &g2, &tg).unwrap();
        // L = 4, t = 1: ||1||_{2,1} = 2, ||1||_{1,2} = 4
        assert!((sharp_dual_surrogate(st, 1.0).unwrap() - 2.0).abs() < 1e-12);
        // ||1||_{2,inf} = 2, ||1||_{inf,2} = 1
        assert!((sharp_norm(st, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sharp_norm_monotone_in_time() {
        let g = line(9);
        let tg = TimeGrid::new(1.0, 50).unwrap();
        let s = series(&g, &tg, |t, x| (3.0 * t).sin() * x[0] * (1.0 - x[0]));
        let st = SpaceTimeField::new(&s, &g, &tg).unwrap();
        let mut prev = 0.0;
        for k in 0..=50 {
            let v = sharp_norm(st, tg.time(k)).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }
}
