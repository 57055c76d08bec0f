//! Sparse symmetric matrices, a banded Cholesky solver, and the projected
//! Gauss-Seidel solver for the per-step complementarity problem.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            cols.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..n {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self { n, row_ptr, cols, values }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.matvec(x, &mut out);
        out
    }

    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n).map(|i| x[i] * self.row(i).map(|(j, v)| v * y[j]).sum::<f64>()).sum()
    }

    /// `alpha * I + beta * self`.
    pub fn shifted(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.values[k] *= beta;
                if out.cols[k] == i {
                    out.values[k] += alpha;
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Symmetric matrix with the rows and columns of `fixed` replaced by
    /// identity rows, used to solve on the complement of an active set.
    fn restricted(&self, fixed: &[bool]) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            if fixed[i] {
                triplets.push((i, i, 1.0));
                continue;
            }
            for (j, v) in self.row(i) {
                if !fixed[j] {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(self.n, triplets)
    }
}

/// Cholesky factor of a symmetric positive definite banded matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    band: usize,
    // lower factor stored row-wise: l[i * (band + 1) + (band - (i - j))] = L_ij
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let band = a.bandwidth();
        let w = band + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * w + band - (i - j)] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(band);
            for j in j0..=i {
                let mut s = l[i * w + band - (i - j)];
                let k0 = j0.max(j.saturating_sub(band));
                for k in k0..j {
                    s -= l[i * w + band - (i - k)] * l[j * w + band - (j - k)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::LinearSolve(format!(
                            "matrix is not positive definite (pivot {s:e} at row {i})"
                        )));
                    }
                    l[i * w + band] = s.sqrt();
                } else {
                    l[i * w + band - (i - j)] = s / l[j * w + band];
                }
            }
        }
        Ok(Self { n, band, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, band, w) = (self.n, self.band, self.band + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(band)..i {
                s -= self.l[i * w + band - (i - k)] * b[k];
            }
            b[i] = s / self.l[i * w + band];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n.min(i + band + 1) {
                s -= self.l[k * w + band - (k - i)] * b[k];
            }
            b[i] = s / self.l[i * w + band];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgsSettings {
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub relaxation: f64,
}

impl Default for PgsSettings {
    fn default() -> Self {
        Self { tolerance: 1e-12, max_sweeps: 10_000, relaxation: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub x: Vec<f64>,
    /// `r = B x - b`, zero off the contact set and nonnegative on it.
    pub residual: Vec<f64>,
    pub sweeps: usize,
    /// `max_i |min(x_i - lower_i, r_i)|` at exit.
    pub merit: f64,
}

/// Natural merit `max_i |min(x_i - lower_i, r_i)|` of the complementarity
/// problem; nodes with `lower = -inf` contribute `|r_i|`.
pub fn complementarity_merit(x: &[f64], r: &[f64], lower: &[f64]) -> f64 {
    x.iter()
        .zip(r)
        .zip(lower)
        .map(|((&xi, &ri), &li)| {
            if li == f64::NEG_INFINITY {
                ri.abs()
            } else {
                (xi - li).min(ri).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Solves `x >= lower, r = B x - b >= 0, r . (x - lower) = 0` for a
/// symmetric positive definite `B` by projected SOR, then polishes the
/// iterate by an exact solve on the free set so that the residual
/// vanishes to rounding off the contact set and the contact set satisfies
/// `x = lower` exactly. `x0` is the warm start.
pub fn solve_lcp(
    b_mat: &CsrMatrix,
    rhs: &[f64],
    lower: &[f64],
    x0: &[f64],
    settings: &PgsSettings,
) -> Result<LcpSolution> {
    let n = b_mat.dim();
    let diag = b_mat.diagonal();
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = settings.tolerance * scale;
    let mut x: Vec<f64> = x0.iter().zip(lower).map(|(&a, &l)| a.max(l)).collect();
    let mut r = vec![0.0; n];
    let mut sweeps = 0;
    let mut merit = f64::INFINITY;

    for round in 0..4 {
        while sweeps < settings.max_sweeps {
            sweeps += 1;
            for i in 0..n {
                let bx: f64 = b_mat.row(i).map(|(j, v)| v * x[j]).sum();
                let z = x[i] + settings.relaxation * (rhs[i] - bx) / diag[i];
                x[i] = z.max(lower[i]);
            }
            b_mat.matvec(&x, &mut r);
            r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri -= bi);
            merit = complementarity_merit(&x, &r, lower);
            if merit <= tol {
                break;
            }
        }
        if merit > tol && round == 0 {
            return Err(Error::LcpNonConvergence { sweeps, residual: merit });
        }

        // Exact solve on the free set with x = lower on the contact set.
        let fixed: Vec<bool> = x.iter().zip(lower).map(|(&xi, &li)| xi == li).collect();
        if !fixed.iter().any(|&f| f) {
            let chol = BandedCholesky::factor(b_mat)?;
            let y = chol.solve(rhs);
            if y.iter().zip(lower).all(|(&yi, &li)| yi >= li) {
                x = y;
                b_mat.matvec(&x, &mut r);
                r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri -= bi);
                break;
            }
            continue;
        }
        let restricted = b_mat.restricted(&fixed);
        let mut b_red = rhs.to_vec();
        for i in 0..n {
            if fixed[i] {
                b_red[i] = lower[i];
            } else {
                for (j, v) in b_mat.row(i) {
                    if fixed[j] {
                        b_red[i] -= v * lower[j];
                    }
                }
            }
        }
        let y = BandedCholesky::factor(&restricted)?.solve(&b_red);
        let mut ry = vec![0.0; n];
        b_mat.matvec(&y, &mut ry);
        ry.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri -= bi);
        let feasible = (0..n).all(|i| {
            if fixed[i] {
                ry[i] >= -tol
            } else {
                y[i] >= lower[i]
            }
        });
        if feasible {
            x = y;
            r = ry;
            break;
        }
        // Active set guess was off; resume sweeping from the polished point.
        x = y.iter().zip(lower).map(|(&a, &l)| a.max(l)).collect();
        merit = f64::INFINITY;
    }

    b_mat.matvec(&x, &mut r);
    r.iter_mut().zip(rhs).for_each(|(ri, bi)| *ri -= bi);
    // Exact complementarity: zero residual off the contact set, clip the
    // rounding-level negatives on it.
    for i in 0..n {
        if x[i] != lower[i] {
            if r[i].abs() <= tol.max(1e-12) {
                r[i] = 0.0;
            }
        } else if r[i] < 0.0 && r[i] >= -tol.max(1e-12) {
            r[i] = 0.0;
        }
    }
    let merit = complementarity_merit(&x, &r, lower);
    if merit > tol.max(1e-10) {
        return Err(Error::LcpNonConvergence { sweeps, residual: merit });
    }
    Ok(LcpSolution { x, residual: r, sweeps, merit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn csr_basics() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0), (0, 1, 4.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(m.is_symmetric());
        assert_eq!(m.apply(&[1.0, 1.0]), vec![7.0, 4.0]);
        assert_eq!(m.bandwidth(), 1);
        let s = m.shifted(1.0, 2.0);
        assert_eq!(s.get(0, 0), 7.0);
        assert_eq!(s.get(1, 0), 8.0);
    }

    #[test]
    fn cholesky_solves_tridiagonal() {
        let a = laplacian(20, 0.1);
        let x_true: Vec<f64> = (0..20).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.apply(&x_true);
        let x = BandedCholesky::factor(&a).unwrap().solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(BandedCholesky::factor(&a).is_err());
    }

    #[test]
    fn lcp_with_inactive_bound_is_linear_solve() {
        let a = laplacian(10, 0.5);
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let lower = vec![-1e6; 10];
        let s = solve_lcp(&a, &b, &lower, &[0.0; 10], &PgsSettings::default()).unwrap();
        let x = BandedCholesky::factor(&a).unwrap().solve(&b);
        for (u, v) in s.x.iter().zip(&x) {
            assert!((u - v).abs() < 1e-10);
        }
        assert!(s.residual.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn lcp_binding_bound() {
        let a = laplacian(9, 0.1);
        let b = vec![-1.0; 9];
        let lower = vec![0.0; 9];
        let s = solve_lcp(&a, &b, &lower, &[0.0; 9], &PgsSettings::default()).unwrap();
        assert!(s.x.iter().all(|&x| x == 0.0));
        assert!(s.residual.iter().all(|&r| r >= 0.0));
        let r = a.apply(&s.x);
        for i in 0..9 {
            assert!((s.residual[i] - (r[i] - b[i])).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn lcp_complementarity(
            rhs in prop::collection::vec(-2.0f64..2.0, 12),
            lower in prop::collection::vec(-0.5f64..0.5, 12),
            shift in 0.01f64..2.0,
        ) {
            let a = laplacian(12, shift);
            let s = solve_lcp(&a, &rhs, &lower, &[0.0; 12], &PgsSettings::default()).unwrap();
            let mut ax = a.apply(&s.x);
            ax.iter_mut().zip(&rhs).for_each(|(v, b)| *v -= b);
            for i in 0..12 {
                prop_assert!(s.x[i] >= lower[i]);
                prop_assert!(s.residual[i] >= 0.0);
                prop_assert!((s.x[i] - lower[i]) * s.residual[i] == 0.0);
                prop_assert!((s.residual[i] - ax[i]).abs() < 1e-10);
            }
        }
    }
}
