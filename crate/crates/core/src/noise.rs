//! Trace-class noise, white in time and colored in space, sampled through
//! its truncated Karhunen-Loeve expansion `dW = sum_i sqrt(lambda_i) e_i dB^i`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{l2_inner, GridField, SpatialGrid};

#[derive(Clone)]
pub enum Kernel {
    /// `k(x, y) = phi(x) phi(y)`.
    RankOne(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
    /// Product over axes of `min(x, y) - x y / L`.
    BrownianBridge,
    /// `exp(-|x - y| / length)`.
    Exponential { length: f64 },
    /// Kernel matrix on interior nodes, row-major.
    Tabulated(Vec<f64>),
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Kernel {
    pub fn name(&self) -> String {
        match self {
            Kernel::RankOne(_) => "rank-one".into(),
            Kernel::BrownianBridge => "brownian-bridge".into(),
            Kernel::Exponential { length } => format!("exponential({length})"),
            Kernel::Tabulated(_) => "tabulated".into(),
        }
    }

    fn eval(&self, x: &[f64], y: &[f64], extents: &[f64]) -> f64 {
        match self {
            Kernel::RankOne(phi) => phi(x) * phi(y),
            Kernel::BrownianBridge => x
                .iter()
                .zip(y)
                .zip(extents)
                .map(|((&a, &b), &l)| a.min(b) - a * b / l)
                .product(),
            Kernel::Exponential { length } => {
                let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (-r / length).exp()
            }
            Kernel::Tabulated(_) => unreachable!("tabulated kernels are indexed, not evaluated"),
        }
    }

    /// Eigenvalues of the continuum operator when known in closed form.
    fn continuum_spectrum(&self, extents: &[f64], count: usize) -> Option<Vec<f64>> {
        match self {
            Kernel::BrownianBridge if extents.len() == 1 => {
                let l = extents[0];
                Some((1..=count).map(|i| (l / (i as f64 * std::f64::consts::PI)).powi(2)).collect())
            }
            _ => None,
        }
    }

    /// Trace of the continuum operator when known.
    fn continuum_trace(&self, extents: &[f64]) -> Option<f64> {
        match self {
            // int_0^L (x - x^2/L) dx = L^2 / 6 per axis
            Kernel::BrownianBridge => Some(extents.iter().map(|l| l * l / 6.0).product()),
            _ => None,
        }
    }
}

/// Truncated eigensystem of the discretized covariance operator.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    kernel_name: String,
    eigenvalues: Vec<f64>,
    eigenfunctions: Vec<GridField>,
    /// Sum of all discrete eigenvalues (trace of the discrete operator).
    discrete_trace: f64,
    /// `sum_{i > N} lambda_i` of the continuum operator when known.
    discarded_mass: Option<f64>,
}

impl CovarianceModel {
    /// Model from explicit modes; eigenfunctions must be orthonormal in the
    /// grid inner product and vanish on the boundary.
    pub fn from_modes(
        grid: &SpatialGrid,
        name: &str,
        eigenvalues: Vec<f64>,
        eigenfunctions: Vec<GridField>,
    ) -> Result<Self> {
        if eigenvalues.is_empty() || eigenvalues.len() != eigenfunctions.len() {
            return Err(Error::InvalidTruncation {
                requested: eigenvalues.len(),
                available: eigenfunctions.len(),
            });
        }
        if let Some(&l) = eigenvalues.iter().find(|&&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::KernelNotPsd(l));
        }
        let model = Self {
            kernel_name: name.to_string(),
            discrete_trace: eigenvalues.iter().sum(),
            eigenvalues,
            eigenfunctions,
            discarded_mass: None,
        };
        let err = model.orthonormality_error(grid)?;
        if err > 1e-8 {
            return Err(Error::InvalidProblem(format!(
                "eigenfunctions are not orthonormal (Gram error {err:e})"
            )));
        }
        Ok(model)
    }

    /// A model with no modes at all: the noise-free case.
    pub fn none() -> Self {
        Self {
            kernel_name: "none".into(),
            eigenvalues: vec![],
            eigenfunctions: vec![],
            discrete_trace: 0.0,
            discarded_mass: Some(0.0),
        }
    }

    pub fn kernel_name(&self) -> &str {
        &self.kernel_name
    }

    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunctions(&self) -> &[GridField] {
        &self.eigenfunctions
    }

    /// `sum_{i <= N} lambda_i`.
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn discrete_trace(&self) -> f64 {
        self.discrete_trace
    }

    pub fn discarded_mass(&self) -> Option<f64> {
        self.discarded_mass
    }

    /// `sqrt(lambda_i) e_i(node)` for every mode.
    pub fn loadings(&self, node: usize) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues
            .iter()
            .zip(&self.eigenfunctions)
            .map(move |(l, e)| l.sqrt() * e.values()[node])
    }

    /// Max entry of `|G - I|` for the Gram matrix `G_ij = (e_i, e_j)`.
    pub fn orthonormality_error(&self, grid: &SpatialGrid) -> Result<f64> {
        let mut err: f64 = 0.0;
        for (i, ei) in self.eigenfunctions.iter().enumerate() {
            for (j, ej) in self.eigenfunctions.iter().enumerate().skip(i) {
                let g = l2_inner(ei, ej, grid)?;
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g - target).abs());
            }
        }
        Ok(err)
    }

    /// `sum_i sqrt(lambda_i) e_i draws_i`.
    pub fn assemble(&self, draws: &[f64], node_count: usize) -> GridField {
        let mut out = vec![0.0; node_count];
        for ((l, e), &b) in self.eigenvalues.iter().zip(&self.eigenfunctions).zip(draws) {
            let c = l.sqrt() * b;
            if c != 0.0 {
                out.iter_mut().zip(e.values()).for_each(|(o, v)| *o += c * v);
            }
        }
        GridField::new(out)
    }
}

/// Top-`n` eigenpairs of the covariance operator `(K f)(x) = int k(x, y) f(y) dy`
/// discretized on interior nodes with lumped quadrature.
pub fn kl_build(kernel: &Kernel, grid: &SpatialGrid, n: usize) -> Result<CovarianceModel> {
    let m = grid.interior_count();
    if n == 0 || n > m {
        return Err(Error::InvalidTruncation { requested: n, available: m });
    }
    let vol = grid.cell_volume();
    let nodes = grid.interior_nodes();
    let mut k = DMatrix::<f64>::zeros(m, m);
    match kernel {
        Kernel::Tabulated(values) => {
            if values.len() != m * m {
                return Err(Error::ShapeMismatch { expected: m * m, found: values.len() });
            }
            for i in 0..m {
                for j in 0..m {
                    k[(i, j)] = values[i * m + j];
                }
            }
        }
        _ => {
            for i in 0..m {
                for j in 0..m {
                    k[(i, j)] = kernel.eval(grid.point(nodes[i]), grid.point(nodes[j]), grid.extents());
                }
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (k[(i, j)], k[(j, i)]);
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite("covariance kernel".into()));
            }
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return Err(Error::KernelNotSymmetric { kxy: a, kyx: b });
            }
        }
    }
    let op = k.scale(vol);
    let eig = SymmetricEigen::new(op);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let smallest = eig.eigenvalues[order[m - 1]];
    if smallest < -1e-10 {
        return Err(Error::KernelNotPsd(smallest));
    }
    let discrete_trace = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenfunctions = Vec::with_capacity(n);
    for &idx in &order[..n] {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let col = eig.eigenvectors.column(idx);
        let peak = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lead = col.iter().find(|v| v.abs() > 1e-8 * peak).copied().unwrap_or(1.0);
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        let scale = sign / vol.sqrt();
        let interior: Vec<f64> = col.iter().map(|v| v * scale).collect();
        eigenfunctions.push(GridField::from_interior(grid, &interior, 0.0));
    }
    let discarded_mass = kernel
        .continuum_trace(grid.extents())
        .and_then(|tr| kernel.continuum_spectrum(grid.extents(), n).map(|s| tr - s.iter().sum::<f64>()))
        .or(match kernel {
            Kernel::RankOne(_) => Some(0.0),
            _ => None,
        });
    Ok(CovarianceModel {
        kernel_name: kernel.name(),
        eigenvalues,
        eigenfunctions,
        discrete_trace,
        discarded_mass,
    })
}

/// Coordinates of one noise path: master seed and path index. Draws for
/// step `k` and mode `i` are a pure function of `(seed, path, k, i)`.
///
/// With `substeps = r > 1` the increment of step `k` is the sum of the
/// `r` fine increments `k r, ..., k r + r - 1` of the same stream, so runs
/// on nested time grids see the same Brownian paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub path: u64,
    pub substeps: u32,
}

const WORDS_PER_STEP: u128 = 1 << 32;

impl NoiseStream {
    pub fn new(seed: u64, path: u64) -> Self {
        Self { seed, path, substeps: 1 }
    }

    pub fn with_substeps(self, substeps: u32) -> Self {
        Self { substeps: substeps.max(1), ..self }
    }

    fn standard_normals(&self, fine_step: u64, modes: usize, out: &mut [f64], weight: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path);
        rng.set_word_pos(fine_step as u128 * WORDS_PER_STEP);
        for o in out.iter_mut().take(modes) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *o += weight * z;
        }
    }

    /// Brownian increments `Delta B^i ~ N(0, dt)` of step `step` for `modes` modes.
    pub fn draws(&self, step: u64, dt: f64, modes: usize) -> Vec<f64> {
        let mut out = vec![0.0; modes];
        if dt == 0.0 || modes == 0 {
            return out;
        }
        let r = self.substeps as u64;
        let w = (dt / r as f64).sqrt();
        for j in 0..r {
            self.standard_normals(step * r + j, modes, &mut out, w);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub draws: Vec<f64>,
    pub field: GridField,
}

/// Samples the increment of step `step` on `stream`.
pub fn sample_increment(
    model: &CovarianceModel,
    dt: f64,
    stream: &NoiseStream,
    step: u64,
    grid: &SpatialGrid,
) -> NoiseIncrement {
    let draws = stream.draws(step, dt, model.truncation());
    let field = model.assemble(&draws, grid.node_count());
    NoiseIncrement { draws, field }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupCondition {
    /// `sum_{i <= N} lambda_i ||e_i||_inf^2`.
    pub sum: f64,
    /// Last term divided by the sum.
    pub last_fraction: f64,
    /// False when the last term exceeds 1% of the sum.
    pub plateaued: bool,
}

pub fn check_sup_condition(model: &CovarianceModel) -> SupCondition {
    let terms: Vec<f64> = model
        .eigenvalues
        .iter()
        .zip(&model.eigenfunctions)
        .map(|(l, e)| l * e.sup_norm().powi(2))
        .collect();
    let sum: f64 = terms.iter().sum();
    let last_fraction = match terms.last() {
        Some(&t) if sum > 0.0 => t / sum,
        _ => 0.0,
    };
    SupCondition { sum, last_fraction, plateaued: last_fraction <= 0.01 }
}
