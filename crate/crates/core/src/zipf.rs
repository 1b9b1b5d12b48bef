//! Rank/frequency statistics and the Zipf distribution
//! `p_r = r^-a / Σ_{n=1..N} n^-a`.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ZipfError {
    #[error("rank {rank} outside 1..={n}")]
    RankOutOfRange { rank: usize, n: usize },
    #[error("shape parameter must be positive and finite, got {0}")]
    BadShape(f64),
    #[error("need at least {needed} ranks, got {got}")]
    TooFewRanks { needed: usize, got: usize },
    #[error("counts must be positive, finite and non-increasing")]
    BadCounts,
    #[error("log-log regression is degenerate (flat or increasing counts)")]
    Degenerate,
}

/// Positive counts in non-increasing order; rank `r` is `counts[r - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCounts {
    counts: Vec<f64>,
}

impl RankedCounts {
    pub fn new(counts: Vec<f64>) -> Result<Self, ZipfError> {
        let ok = counts.iter().all(|c| c.is_finite() && *c > 0.0)
            && counts.windows(2).all(|w| w[0] >= w[1]);
        if !ok {
            return Err(ZipfError::BadCounts);
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn n(&self) -> usize {
        self.counts.len()
    }
}

/// Sorts a token→count map into ranks. Equal counts are ordered by token so
/// that each keeps a distinct integer rank.
pub fn rank_frequencies<S: AsRef<str>>(counts: &HashMap<S, u64>) -> Result<RankedCounts, ZipfError> {
    let mut v: Vec<(&str, u64)> = counts
        .iter()
        .filter(|(_, c)| **c > 0)
        .map(|(t, c)| (t.as_ref(), *c))
        .collect();
    if v.is_empty() {
        return Err(ZipfError::TooFewRanks { needed: 1, got: 0 });
    }
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    RankedCounts::new(v.into_iter().map(|(_, c)| c as f64).collect())
}

fn check_shape(a: f64) -> Result<(), ZipfError> {
    if a.is_finite() && a > 0.0 {
        Ok(())
    } else {
        Err(ZipfError::BadShape(a))
    }
}

/// Normalised Zipf probabilities over ranks `1..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZipfDistribution {
    probs: Vec<f64>,
    a: f64,
}

impl ZipfDistribution {
    pub fn new(n: usize, a: f64) -> Result<Self, ZipfError> {
        check_shape(a)?;
        if n == 0 {
            return Err(ZipfError::TooFewRanks { needed: 1, got: 0 });
        }
        let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-a)).collect();
        // Smallest terms first.
        let norm: f64 = weights.iter().rev().sum();
        let probs = weights.into_iter().map(|w| w / norm).collect();
        Ok(Self { probs, a })
    }

    /// Probability of rank `r` (1-based).
    pub fn prob(&self, r: usize) -> Result<f64, ZipfError> {
        if r == 0 || r > self.probs.len() {
            return Err(ZipfError::RankOutOfRange { rank: r, n: self.probs.len() });
        }
        Ok(self.probs[r - 1])
    }

    /// Probabilities indexed by `rank - 1`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    pub fn shape(&self) -> f64 {
        self.a
    }
}

pub fn zipf_probability(r: usize, n: usize, a: f64) -> Result<f64, ZipfError> {
    if r == 0 || r > n {
        return Err(ZipfError::RankOutOfRange { rank: r, n });
    }
    ZipfDistribution::new(n, a)?.prob(r)
}

/// Least-squares fit of `ln count = c - a ln rank`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfFit {
    pub a: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn fit_zipf_shape(rc: &RankedCounts) -> Result<ZipfFit, ZipfError> {
    let n = rc.n();
    if n < 2 {
        return Err(ZipfError::TooFewRanks { needed: 2, got: n });
    }
    let xs: Vec<f64> = (1..=n).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = rc.counts().iter().map(|c| c.ln()).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let slope = sxy / sxx;
    if slope.is_nan() || slope >= 0.0 || syy <= 0.0 {
        return Err(ZipfError::Degenerate);
    }
    let r_squared = ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0);
    Ok(ZipfFit { a: -slope, r_squared, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ranks_break_ties_by_token() {
        let m: HashMap<&str, u64> = [("c", 2), ("a", 5), ("b", 2)].into();
        assert_eq!(rank_frequencies(&m).unwrap().counts(), &[5.0, 2.0, 2.0]);
        let m: HashMap<&str, u64> = [("x", 1)].into();
        assert_eq!(rank_frequencies(&m).unwrap().counts(), &[1.0]);
        let m: HashMap<&str, u64> = HashMap::new();
        assert!(rank_frequencies(&m).is_err());
    }

    #[test]
    fn probability_examples() {
        assert_eq!(zipf_probability(1, 1, 0.37).unwrap(), 1.0);
        assert_abs_diff_eq!(zipf_probability(1, 3, 1.0).unwrap(), 6.0 / 11.0, epsilon = 1e-15);
        let d = ZipfDistribution::new(100, 1.06).unwrap();
        assert_abs_diff_eq!(d.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(d.probs().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn probability_errors() {
        assert_eq!(zipf_probability(0, 3, 1.0), Err(ZipfError::RankOutOfRange { rank: 0, n: 3 }));
        assert!(zipf_probability(4, 3, 1.0).is_err());
        assert!(zipf_probability(1, 3, 0.0).is_err());
        assert!(zipf_probability(1, 3, f64::NAN).is_err());
    }

    #[test]
    fn exact_power_laws_fit_exactly() {
        for a in [1.0, 2.0, 1.06] {
            let rc = RankedCounts::new((1..=50).map(|r| 1000.0 / (r as f64).powf(a)).collect())
                .unwrap();
            let fit = fit_zipf_shape(&rc).unwrap();
            assert_abs_diff_eq!(fit.a, a, epsilon = 1e-9);
            assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-9);
            assert_eq!(fit.n, 50);
        }
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            fit_zipf_shape(&RankedCounts::new(vec![3.0]).unwrap()),
            Err(ZipfError::TooFewRanks { needed: 2, got: 1 })
        );
        assert_eq!(
            fit_zipf_shape(&RankedCounts::new(vec![3.0, 3.0, 3.0]).unwrap()),
            Err(ZipfError::Degenerate)
        );
        assert!(RankedCounts::new(vec![1.0, 2.0]).is_err());
        assert!(RankedCounts::new(vec![1.0, 0.0]).is_err());
    }
}
