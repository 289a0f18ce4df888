use serde::{Deserialize, Serialize};

/// Mean predicted probability among deaths and among survivors, per cohort.
/// A side with no rows is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRow {
    pub cohort: String,
    pub mean_dead: Option<f64>,
    pub mean_alive: Option<f64>,
    pub n_dead: usize,
    pub n_alive: usize,
}

pub fn conditional_prob_table(
    predictions: &[f64],
    labels: &[u8],
    cohorts: &[(String, Vec<usize>)],
) -> Vec<ConditionalRow> {
    cohorts
        .iter()
        .map(|(label, rows)| {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
            for &r in rows {
                if labels[r] == 1 {
                    s1 += predictions[r];
                    n1 += 1;
                } else {
                    s0 += predictions[r];
                    n0 += 1;
                }
            }
            ConditionalRow {
                cohort: label.clone(),
                mean_dead: (n1 > 0).then(|| s1 / n1 as f64),
                mean_alive: (n0 > 0).then(|| s0 / n0 as f64),
                n_dead: n1,
                n_alive: n0,
            }
        })
        .collect()
}

/// Percent with two decimals, e.g. `y=1: 4.06, y=0: 1.93`; absent sides
/// print as `NA`.
pub fn format_conditional(row: &ConditionalRow) -> String {
    let pct = |v: Option<f64>| v.map_or("NA".to_string(), |p| format!("{:.2}", 100.0 * p));
    format!("y=1: {}, y=0: {}", pct(row.mean_dead), pct(row.mean_alive))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_and_absent_cells() {
        let rows = conditional_prob_table(
            &[0.2, 0.1, 0.1, 0.3],
            &[1, 0, 0, 0],
            &[("81-100".into(), vec![0, 1, 2]), ("41-45".into(), vec![3])],
        );
        assert_eq!(rows[0].mean_dead, Some(0.2));
        assert_eq!(rows[0].mean_alive, Some(0.1));
        assert_eq!(rows[1].mean_dead, None);
        let r = ConditionalRow {
            cohort: "81-100".into(),
            mean_dead: Some(0.0406),
            mean_alive: Some(0.0193),
            n_dead: 1,
            n_alive: 1,
        };
        assert_eq!(format_conditional(&r), "y=1: 4.06, y=0: 1.93");
        assert_eq!(format_conditional(&rows[1]), "y=1: NA, y=0: 30.00");
    }
}
