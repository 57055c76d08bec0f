//! Path fan-out and Monte Carlo summaries.
//!
//! Paths are independent given their index, results come back in path
//! order, and every reduction runs serially over that order, so serial and
//! parallel runs agree bitwise.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;

/// Runs `f` for every path index in `0..paths`.
pub fn run_paths<T, F>(paths: u64, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..paths).into_par_iter().map(f).collect()
    } else {
        (0..paths).map(f).collect()
    }
}

/// Sample mean with its standard error and a 95% normal confidence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub radius: f64,
    pub max: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: 0.0, std_err: 0.0, radius: 0.0, max: 0.0, n };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_err = (var / n as f64).sqrt();
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { mean, std_err, radius: 1.96 * std_err, max, n }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let f = |p: u64| Ok((p as f64).sqrt().sin());
        let a = run_paths(1000, false, f).unwrap();
        let b = run_paths(1000, true, f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors_propagate() {
        let r = run_paths(10, true, |p| if p == 7 { Err(crate::Error::NonFinite("x".into())) } else { Ok(p) });
        assert!(r.is_err());
    }

    #[test]
    fn mean_estimate() {
        let m = MeanEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std_err - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(m.max, 4.0);
        assert_eq!(MeanEstimate::from_samples(&[]).n, 0);
    }
}
