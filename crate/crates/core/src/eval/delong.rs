use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEGENERATE_VARIANCE: f64 = 1e-15;
pub const SMALL_SAMPLE_POSITIVES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    /// Estimated var(auc_a − auc_b).
    pub variance: f64,
    pub z: f64,
    pub p_value: f64,
    pub degenerate: bool,
    pub small_sample: bool,
}

/// 1-based midranks (ties share their average rank).
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]].total_cmp(&values[order[i]]).is_eq() {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Placement values: V10 per positive (share of negatives it beats, ties ½)
/// and V01 per negative (share of positives it loses to).
fn placements(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &y)| y == 0).map(|(s, _)| *s).collect();
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let r_all = midranks(&all);
    let r_pos = midranks(&pos);
    let r_neg = midranks(&neg);
    let v10 = (0..pos.len()).map(|i| (r_all[i] - r_pos[i]) / n).collect();
    let v01 = (0..neg.len())
        .map(|j| 1.0 - (r_all[pos.len() + j] - r_neg[j]) / m)
        .collect();
    (v10, v01)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance with an (n−1) denominator; 0 for a single element.
fn cov(a: &[f64], b: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64
}

pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<DelongResult> {
    for s in [scores_a, scores_b] {
        if s.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: labels.len(),
            });
        }
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::AucUndefined);
    }
    let (a10, a01) = placements(scores_a, labels);
    let (b10, b01) = placements(scores_b, labels);
    let (m, n) = (a10.len() as f64, a01.len() as f64);
    let auc_a = mean(&a10);
    let auc_b = mean(&b10);
    let s10 = cov(&a10, &a10) + cov(&b10, &b10) - 2.0 * cov(&a10, &b10);
    let s01 = cov(&a01, &a01) + cov(&b01, &b01) - 2.0 * cov(&a01, &b01);
    let variance = (s10 / m + s01 / n).max(0.0);
    let delta = auc_a - auc_b;
    let small_sample = n_pos < SMALL_SAMPLE_POSITIVES;
    if variance < DEGENERATE_VARIANCE {
        if delta == 0.0 {
            return Ok(DelongResult {
                auc_a,
                auc_b,
                variance,
                z: 0.0,
                p_value: 1.0,
                degenerate: true,
                small_sample,
            });
        }
        return Err(Error::DegenerateVariance(variance));
    }
    let z = delta / variance.sqrt();
    let p_value = erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
    Ok(DelongResult {
        auc_a,
        auc_b,
        variance,
        z,
        p_value,
        degenerate: false,
        small_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::auc;

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_scores_are_degenerate() {
        let s = [0.1, 0.5, 0.3, 0.9, 0.2];
        let y = [0, 1, 0, 1, 0];
        let r = delong_test(&s, &s, &y).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p_value, 1.0);
        assert!(r.small_sample);
        assert!(delong_test(&s, &s[..4], &y).is_err());
    }

    #[test]
    fn antisymmetric_and_matches_auc() {
        let a = [0.1, 0.5, 0.3, 0.9, 0.2, 0.7, 0.4, 0.4];
        let b = [0.3, 0.2, 0.1, 0.8, 0.6, 0.5, 0.4, 0.9];
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let ab = delong_test(&a, &b, &y).unwrap();
        let ba = delong_test(&b, &a, &y).unwrap();
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p_value, ba.p_value);
        assert!((ab.auc_a - auc(&a, &y).unwrap()).abs() < 1e-15);
        assert!((ab.auc_b - auc(&b, &y).unwrap()).abs() < 1e-15);
        assert!(ab.variance >= 0.0 && (0.0..=1.0).contains(&ab.p_value));
    }
}
