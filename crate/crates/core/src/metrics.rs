//! Evaluation metrics: MSE, Pearson (LCC), Spearman (SRCC) and Kendall tau-b
//! (KTAU).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.len() < min_len.max(1) {
        return Err(Error::Empty("metric needs more samples"));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 1)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// Pearson correlation.
pub fn lcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 2)?;
    pearson(pred, truth).ok_or(Error::UndefinedCorrelation("lcc: zero variance"))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given the mean of the ranks they span.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman correlation: Pearson on mid-ranks.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 2)?;
    pearson(&mid_ranks(pred), &mid_ranks(truth))
        .ok_or(Error::UndefinedCorrelation("srcc: zero rank variance"))
}

/// Kendall tau-b: `(C - D) / sqrt((n0 - n1)(n0 - n2))`.
pub fn ktau(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, 2)?;
    let n = pred.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_pred, mut ties_truth) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let a = pred[i].total_cmp(&pred[j]) as i64;
            let b = truth[i].total_cmp(&truth[j]) as i64;
            if pred[i] == pred[j] {
                ties_pred += 1;
            }
            if truth[i] == truth[j] {
                ties_truth += 1;
            }
            match a * b {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_pred) as f64) * ((n0 - ties_truth) as f64);
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("ktau: all pairs tied"));
    }
    Ok(((concordant - discordant) as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionMetrics {
    pub mse: f64,
    pub lcc: f64,
    pub srcc: f64,
    pub ktau: f64,
}

impl DimensionMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(Self {
            mse: mse(pred, truth)?,
            lcc: lcc(pred, truth)?,
            srcc: srcc(pred, truth)?,
            ktau: ktau(pred, truth)?,
        })
    }

    /// Like [`DimensionMetrics::compute`] but undefined correlations, including
    /// those over a single sample, become NaN.
    pub fn compute_lenient(pred: &[f64], truth: &[f64]) -> Result<Self> {
        let soft = |r: Result<f64>| match r {
            Err(Error::UndefinedCorrelation(_) | Error::Empty(_)) => Ok(f64::NAN),
            other => other,
        };
        Ok(Self {
            mse: mse(pred, truth)?,
            lcc: soft(lcc(pred, truth))?,
            srcc: soft(srcc(pred, truth))?,
            ktau: soft(ktau(pred, truth))?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub dimension: String,
    #[serde(flatten)]
    pub metrics: DimensionMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub dimensions: Vec<DimensionReport>,
}

impl EvalReport {
    /// `columns[j]` holds `(predictions, truths)` for dimension `j`.
    pub fn from_columns(names: &[String], columns: &[(Vec<f64>, Vec<f64>)], lenient: bool) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch(names.len(), columns.len()));
        }
        let n = columns.first().map_or(0, |c| c.0.len());
        let dimensions = names
            .iter()
            .zip(columns)
            .map(|(name, (p, t))| {
                let metrics = if lenient {
                    DimensionMetrics::compute_lenient(p, t)?
                } else {
                    DimensionMetrics::compute(p, t)?
                };
                Ok(DimensionReport {
                    dimension: name.clone(),
                    metrics,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, dimensions })
    }

    pub fn average(&self) -> DimensionMetrics {
        let k = self.dimensions.len() as f64;
        let mean = |f: fn(&DimensionMetrics) -> f64| {
            self.dimensions.iter().map(|d| f(&d.metrics)).sum::<f64>() / k
        };
        DimensionMetrics {
            mse: mean(|m| m.mse),
            lcc: mean(|m| m.lcc),
            srcc: mean(|m| m.srcc),
            ktau: mean(|m| m.ktau),
        }
    }

    /// Tab-separated table: one row per dimension plus an `Average` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("dimension\tMSE\tLCC\tSRCC\tKTAU\n");
        let mut row = |name: &str, m: &DimensionMetrics| {
            let _ = writeln!(out, "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}", m.mse, m.lcc, m.srcc, m.ktau);
        };
        for d in &self.dimensions {
            row(&d.dimension, &d.metrics);
        }
        row("Average", &self.average());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(mse(&[], &[]), Err(Error::Empty(_))));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
    }

    #[test]
    fn lcc_examples() {
        let t = [1.0, 2.5, 3.0, 7.0];
        let p: Vec<f64> = t.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((lcc(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((lcc(&neg, &t).unwrap() + 1.0).abs() < 1e-12);
        assert!((lcc(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(lcc(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn srcc_examples() {
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 4.0, 3.0]).unwrap() - 0.8).abs() < 1e-12);
        let t = [0.1, 0.5, 0.2, 0.9];
        let p: Vec<f64> = t.iter().map(|x: &f64| x.exp()).collect();
        assert!((srcc(&p, &t).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = t.iter().map(|x| -x).collect();
        assert!((srcc(&rev, &t).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ktau_examples() {
        assert!((ktau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ktau(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(ktau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(ktau(&[1.0, 1.0], &[1.0, 1.0]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn ties_keep_tau_below_one() {
        let t = ktau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(t < 1.0 && t > 0.0);
        // C = 5, D = 0, one tie in pred: 5 / sqrt(5 * 6)
        assert!((t - 5.0 / 30f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tsv_has_row_per_dimension_and_average() {
        let names = vec!["a".to_string(), "b".to_string()];
        let cols = vec![
            (vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]),
            (vec![1.0, 3.0, 2.0], vec![1.0, 2.0, 3.0]),
        ];
        let report = EvalReport::from_columns(&names, &cols, false).unwrap();
        let tsv = report.to_tsv();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("Average\t"));
        assert_eq!(lines[1].split('\t').count(), 5);
    }

    #[test]
    fn lenient_report_marks_undefined() {
        let names = vec!["a".to_string()];
        let cols = vec![(vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 3.0])];
        assert!(EvalReport::from_columns(&names, &cols, false).is_err());
        let r = EvalReport::from_columns(&names, &cols, true).unwrap();
        assert!(r.dimensions[0].metrics.srcc.is_nan());
        assert_eq!(r.dimensions[0].metrics.mse, 5.0 / 3.0);

        let single = vec![(vec![0.5], vec![0.25])];
        assert!(EvalReport::from_columns(&names, &single, false).is_err());
        let r = EvalReport::from_columns(&names, &single, true).unwrap();
        assert!(r.dimensions[0].metrics.ktau.is_nan());
        assert_eq!(r.dimensions[0].metrics.mse, 0.0625);
    }

    fn distinct(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::btree_set(-1000i32..1000, n..=n)
            .prop_map(|s| s.into_iter().map(f64::from).collect::<Vec<_>>())
            .prop_shuffle()
    }

    proptest! {
        #[test]
        fn self_correlation_is_one(x in distinct(6)) {
            prop_assert!((lcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((srcc(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!((ktau(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rank_metrics_ignore_monotone_transforms(
            x in prop::collection::vec(-5i32..5, 2..12),
            y in prop::collection::vec(-5i32..5, 2..12),
        ) {
            let n = x.len().min(y.len());
            let x: Vec<f64> = x[..n].iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = y[..n].iter().map(|&v| f64::from(v)).collect();
            let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let gy: Vec<f64> = y.iter().map(|v| (v / 3.0).exp()).collect();
            match (srcc(&x, &y), srcc(&fx, &gy)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "{other:?}"),
            }
            match (ktau(&x, &y), ktau(&fx, &gy)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "{other:?}"),
            }
        }

        #[test]
        fn correlations_are_bounded(
            x in prop::collection::vec(-3.0..3.0f64, 3..10),
            y in prop::collection::vec(-3.0..3.0f64, 3..10),
        ) {
            let n = x.len().min(y.len());
            for r in [lcc(&x[..n], &y[..n]), srcc(&x[..n], &y[..n]), ktau(&x[..n], &y[..n])].into_iter().flatten() {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
