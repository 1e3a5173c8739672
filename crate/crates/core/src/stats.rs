//! Order-fixed reductions for Monte Carlo samples.

use crate::error::{Error, Result};

const LEAF: usize = 128;

/// Neumaier-compensated sum over a fixed pairwise tree.
///
/// The tree depends only on `xs.len()`, so the result is reproducible for a
/// given sample order regardless of how the samples were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return compensated(xs);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn compensated(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStats {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = xs.len();
        let mean = pairwise_sum(xs) / n as f64;
        let std_error = if n < 2 {
            0.0
        } else {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        };
        Ok(Self { mean, std_error, n })
    }
}

/// `|x - y| <= k * sqrt(se_x^2 + se_y^2)`
pub fn agree_within(x: f64, se_x: f64, y: f64, se_y: f64, k: f64) -> bool {
    (x - y).abs() <= k * se_x.hypot(se_y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_recovers_small_terms() {
        let mut xs = vec![1e16, 1.0, -1e16];
        xs.extend(std::iter::repeat_n(1.0, 300));
        assert_eq!(pairwise_sum(&xs), 301.0);
    }

    #[test]
    fn stats_of_known_sample() {
        let s = SampleStats::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((s.std_error - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(SampleStats::from_samples(&[3.0]).unwrap().std_error, 0.0);
        assert_eq!(SampleStats::from_samples(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn agreement() {
        assert!(agree_within(1.0, 0.3, 2.0, 0.4, 3.0));
        assert!(!agree_within(1.0, 0.03, 2.0, 0.04, 3.0));
    }
}
