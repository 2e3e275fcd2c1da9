//! Means with two-sided Student-t confidence intervals.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    /// Half-width of the interval; `NaN` when `n < 2`.
    pub half_width: f64,
    pub low: f64,
    pub high: f64,
}

/// Sample mean and its `level` confidence interval with `n - 1` degrees of
/// freedom.
pub fn mean_ci(samples: &[f64], level: f64) -> MeanCi {
    let n = samples.len();
    if n == 0 {
        return MeanCi {
            n,
            mean: f64::NAN,
            half_width: f64::NAN,
            low: f64::NAN,
            high: f64::NAN,
        };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanCi {
            n,
            mean,
            half_width: f64::NAN,
            low: f64::NAN,
            high: f64::NAN,
        };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("n >= 2 gives positive degrees of freedom")
        .inverse_cdf(0.5 + level / 2.0);
    let half_width = t * (var / n as f64).sqrt();
    MeanCi {
        n,
        mean,
        half_width,
        low: mean - half_width,
        high: mean + half_width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_t_intervals() {
        // t_{0.975, 4} = 2.776445105; mean 3, sd sqrt(2.5).
        let r = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.95);
        assert_eq!(r.mean, 3.0);
        assert!((r.half_width - 2.776445105 * (2.5f64 / 5.0).sqrt()).abs() < 1e-8);
        // t_{0.975, 1} = 12.70620474; sd of {0, 2} is sqrt(2).
        let r = mean_ci(&[0.0, 2.0], 0.95);
        assert!((r.half_width - 12.70620474 * 1.0).abs() < 1e-7);
        // t_{0.975, 99} = 1.984216952.
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let sd = (xs.iter().map(|x| (x - 49.5f64).powi(2)).sum::<f64>() / 99.0).sqrt();
        assert!((mean_ci(&xs, 0.95).half_width - 1.984216952 * sd / 10.0).abs() < 1e-7);
    }

    #[test]
    fn degenerate_samples() {
        assert!(mean_ci(&[], 0.95).mean.is_nan());
        let one = mean_ci(&[4.0], 0.95);
        assert_eq!(one.mean, 4.0);
        assert!(one.half_width.is_nan());
        assert_eq!(mean_ci(&[2.0; 10], 0.95).half_width, 0.0);
    }
}
