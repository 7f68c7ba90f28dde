//! Per-disease precision, recall and F1, with subgroup breakdowns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision threshold on predicted probabilities.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Confusion {
    /// Counts for one disease; a probability at or above `threshold` is positive.
    pub fn count(probabilities: &[f64], labels: &[f64], threshold: f64) -> Result<Self> {
        if probabilities.len() != labels.len() {
            return Err(Error::LengthMismatch {
                context: "predictions vs labels",
                left: probabilities.len(),
                right: labels.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p >= threshold, y == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// Zero-denominator conventions: each ratio is 0 when undefined.
    pub fn metrics(&self) -> DiseaseMetrics {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(self.tp, self.fp);
        let recall = ratio(self.tp, self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        DiseaseMetrics { precision, recall, f1 }
    }
}

/// Confusion counts per disease for `predictions[patient][disease]`.
pub fn confusions(predictions: &[Vec<f64>], labels: &[Vec<f64>], threshold: f64) -> Result<Vec<Confusion>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "prediction rows vs label rows",
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let diseases = labels.first().map_or(0, Vec::len);
    if predictions.iter().chain(labels).any(|r| r.len() != diseases) {
        return Err(Error::invalid("ragged prediction or label rows"));
    }
    (0..diseases)
        .map(|d| {
            let p: Vec<f64> = predictions.iter().map(|r| r[d]).collect();
            let y: Vec<f64> = labels.iter().map(|r| r[d]).collect();
            Confusion::count(&p, &y, threshold)
        })
        .collect()
}

pub fn compute_metrics(predictions: &[Vec<f64>], labels: &[Vec<f64>], threshold: f64) -> Result<Vec<DiseaseMetrics>> {
    Ok(confusions(predictions, labels, threshold)?.iter().map(Confusion::metrics).collect())
}

pub fn macro_f1(metrics: &[DiseaseMetrics]) -> f64 {
    if metrics.is_empty() {
        return 0.0;
    }
    metrics.iter().map(|m| m.f1).sum::<f64>() / metrics.len() as f64
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// How test patients are divided into strata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    /// At or below the median of a profile column versus above it.
    Median(String),
    /// The planted group of each patient.
    GroupTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub size: usize,
    pub metrics: Vec<DiseaseMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub stratification: Stratification,
    pub strata: Vec<Stratum>,
    /// Largest minus smallest value across strata, per disease; absent when a
    /// stratum is empty.
    pub gaps: Option<Vec<DiseaseMetrics>>,
}

/// Median of `values` (mean of the two middle values for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Metrics per stratum and the per-metric gaps between strata.
pub fn subgroup_report(
    predictions: &[Vec<f64>],
    labels: &[Vec<f64>],
    stratification: Stratification,
    strata: &[usize],
    names: &[String],
) -> Result<SubgroupReport> {
    if strata.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "strata vs labels",
            left: strata.len(),
            right: labels.len(),
        });
    }
    let mut out = Vec::with_capacity(names.len());
    for (s, name) in names.iter().enumerate() {
        let idx: Vec<usize> = (0..strata.len()).filter(|&i| strata[i] == s).collect();
        let p: Vec<Vec<f64>> = idx.iter().map(|&i| predictions[i].clone()).collect();
        let y: Vec<Vec<f64>> = idx.iter().map(|&i| labels[i].clone()).collect();
        let metrics = if idx.is_empty() {
            Vec::new()
        } else {
            compute_metrics(&p, &y, THRESHOLD)?
        };
        out.push(Stratum {
            label: name.clone(),
            size: idx.len(),
            metrics,
        });
    }
    let gaps = if out.len() < 2 || out.iter().any(|s| s.size == 0) {
        None
    } else {
        let diseases = out[0].metrics.len();
        let spread = |f: &dyn Fn(&DiseaseMetrics) -> f64, d: usize| {
            let vals: Vec<f64> = out.iter().map(|s| f(&s.metrics[d])).collect();
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vals.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        Some(
            (0..diseases)
                .map(|d| DiseaseMetrics {
                    precision: spread(&|m| m.precision, d),
                    recall: spread(&|m| m.recall, d),
                    f1: spread(&|m| m.f1, d),
                })
                .collect(),
        )
    };
    Ok(SubgroupReport {
        stratification,
        strata: out,
        gaps,
    })
}

/// Assigns 0 to values at or below the median and 1 above it.
pub fn median_strata(values: &[f64]) -> Vec<usize> {
    let m = median(values);
    values.iter().map(|&v| usize::from(v > m)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn hand_counts() {
        let c = Confusion { tp: 3, fp: 1, fn_: 2, tn: 0 }.metrics();
        assert!(close(c.precision, 0.75) && close(c.recall, 0.6) && close(c.f1, 0.666667));
        let c = Confusion { tp: 1, fp: 1, fn_: 1, tn: 5 }.metrics();
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
        let c = Confusion { tp: 0, fp: 0, fn_: 0, tn: 5 }.metrics();
        assert_eq!((c.precision, c.recall, c.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn perfect_predictions() {
        let y = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = compute_metrics(&y, &y, THRESHOLD).unwrap();
        assert!(m.iter().all(|m| (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)));
        assert!(compute_metrics(&y[..1], &y, THRESHOLD).is_err());
    }

    #[test]
    fn single_repeat_has_zero_std() {
        assert_eq!(MeanStd::of(&[0.7]).std, 0.0);
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn ten_row_subgroup_example() {
        // stratum 0: tp 2, fp 1, fn 1, tn 1; stratum 1: tp 1, fp 0, fn 2, tn 2
        let p = [0.9, 0.8, 0.7, 0.2, 0.1, 0.9, 0.3, 0.4, 0.1, 0.2];
        let y = [1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let s = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let rows = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        let names = vec!["low".to_string(), "high".to_string()];
        let r = subgroup_report(&rows(&p), &rows(&y), Stratification::GroupTruth, &s, &names).unwrap();
        let a = r.strata[0].metrics[0];
        let b = r.strata[1].metrics[0];
        assert!(close(a.precision, 2.0 / 3.0) && close(a.recall, 2.0 / 3.0));
        assert!(close(b.precision, 1.0) && close(b.recall, 1.0 / 3.0) && close(b.f1, 0.5));
        let g = r.gaps.unwrap()[0];
        assert!(close(g.precision, 1.0 / 3.0) && close(g.recall, 1.0 / 3.0) && close(g.f1, 2.0 / 3.0 - 0.5));
    }

    #[test]
    fn degenerate_strata() {
        let rows = vec![vec![0.9], vec![0.1]];
        let names = vec!["low".to_string(), "high".to_string()];
        let r = subgroup_report(&rows, &rows, Stratification::GroupTruth, &[0, 0], &names).unwrap();
        assert!(r.gaps.is_none());
        let same = subgroup_report(&rows, &[vec![1.0], vec![1.0]], Stratification::GroupTruth, &[0, 1], &names).unwrap();
        assert_eq!(same.strata[1].metrics[0].f1, 0.0);
        assert_eq!(median_strata(&[3.0, 1.0, 2.0, 4.0]), vec![1, 0, 0, 1]);
    }
}
