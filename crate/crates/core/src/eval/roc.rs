use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    /// (false positive rate, true positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AucUndefined);
    }
    Ok((n_pos, n_neg))
}

/// Groups of tied scores from the highest score down, as (positives,
/// negatives) per group.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<(u64, u64)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in order {
        let s = scores[i];
        if last.is_none_or(|l| l.total_cmp(&s).is_ne()) {
            groups.push((0, 0));
            last = Some(s);
        }
        let g = groups.last_mut().expect("pushed above");
        if labels[i] == 1 {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Area as an exact integer ratio: Σ fp_g·(2·tp_before + tp_g) / (2·P·N),
/// i.e. the Mann–Whitney statistic with ties counted 1/2.
fn area(groups: &[(u64, u64)], n_pos: usize, n_neg: usize) -> f64 {
    let mut tp = 0u128;
    let mut num = 0u128;
    for &(p, f) in groups {
        num += f as u128 * (2 * tp + p as u128);
        tp += p as u128;
    }
    num as f64 / (2 * n_pos as u128 * n_neg as u128) as f64
}

pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocSummary> {
    let (n_pos, n_neg) = check(scores, labels)?;
    let groups = tie_groups(scores, labels);
    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push((0.0, 0.0));
    let (mut tp, mut fp) = (0u64, 0u64);
    for &(p, f) in &groups {
        tp += p;
        fp += f;
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocSummary {
        points,
        auc: area(&groups, n_pos, n_neg),
        n_pos,
        n_neg,
    })
}

pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check(scores, labels)?;
    Ok(area(&tie_groups(scores, labels), n_pos, n_neg))
}

/// Trapezoidal area under a list of ROC points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 5], &[0, 1, 0, 1, 1]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[1, 1]), Err(Error::AucUndefined)));
    }

    #[test]
    fn curve_shape_and_area() {
        let s = [0.9, 0.5, 0.5, 0.2, 0.7, 0.1];
        let y = [1, 0, 1, 0, 1, 0];
        let r = roc_points(&s, &y).unwrap();
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        for w in r.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert!((trapezoid(&r.points) - r.auc).abs() < 1e-12);
    }

    #[test]
    fn transform_and_label_swap() {
        let s = [0.3, -1.2, 2.0, 0.3, 0.9, -0.4, 1.1];
        let y = [1, 0, 1, 0, 0, 1, 1];
        let a = auc(&s, &y).unwrap();
        let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        assert_eq!(auc(&e, &y).unwrap(), a);
        let flipped: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        assert!((auc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-15);
    }
}
