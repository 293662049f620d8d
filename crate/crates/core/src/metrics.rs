//! Parent-level confusion matrices, macro-averaged classification metrics,
//! per-class false-negative / false-positive rates and stratified K-fold
//! splitting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let c = self.num_classes();
        (0..c).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// CSV with a header of predicted class names and one row per true class.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\pred".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn default_names(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class_{i}")).collect()
}

/// Counts `(true, predicted)` pairs. Class names default to `class_<i>`.
pub fn confusion(true_labels: &[usize], pred_labels: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::Dimension {
            expected: true_labels.len(),
            got: pred_labels.len(),
        });
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        for l in [t, p] {
            if l >= num_classes {
                return Err(Error::Label {
                    label: l,
                    classes: num_classes,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: default_names(num_classes),
    })
}

/// Row-normalized matrix; empty rows stay zero.
pub fn normalize_rows(m: &ConfusionMatrix) -> Vec<Vec<f64>> {
    m.counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            if s == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&v| v as f64 / s as f64).collect()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    /// `1 − recall_c`; `None` for classes with no true samples.
    pub per_class_fn: Vec<Option<f64>>,
    /// Fall-out `FP_c / negatives_c`; `None` when the class has no negatives.
    pub per_class_fp: Vec<Option<f64>>,
    pub var_fn: f64,
    pub var_fp: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// False-negative rates with undefined classes read as zero.
    pub fn fn_rates(&self) -> Vec<f64> {
        self.per_class_fn.iter().map(|v| v.unwrap_or(0.0)).collect()
    }
}

fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Accuracy, macro recall/precision/F over classes present in the data, and
/// the population variance of the per-class FN and FP rates.
pub fn report(m: &ConfusionMatrix) -> Result<EvalReport> {
    let total = m.total();
    if m.num_classes() == 0 || total == 0 {
        return Err(Error::EmptyInput("confusion matrix has no samples".into()));
    }
    let c = m.num_classes();
    let rows = m.row_sums();
    let cols = m.col_sums();
    let diag: Vec<u64> = (0..c).map(|i| m.counts[i][i]).collect();
    let accuracy = diag.iter().sum::<u64>() as f64 / total as f64;

    let mut per_class_fn = Vec::with_capacity(c);
    let mut per_class_fp = Vec::with_capacity(c);
    let (mut rec_sum, mut prec_sum, mut f_sum, mut present) = (0.0, 0.0, 0.0, 0usize);
    for i in 0..c {
        if rows[i] > 0 {
            let r = diag[i] as f64 / rows[i] as f64;
            let p = if cols[i] > 0 {
                diag[i] as f64 / cols[i] as f64
            } else {
                0.0
            };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            rec_sum += r;
            prec_sum += p;
            f_sum += f;
            present += 1;
            per_class_fn.push(Some(1.0 - r));
        } else {
            per_class_fn.push(None);
        }
        let negatives = total - rows[i];
        per_class_fp.push(if negatives > 0 {
            Some((cols[i] - diag[i]) as f64 / negatives as f64)
        } else {
            None
        });
    }
    let n = present as f64;
    let defined = |v: &[Option<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
    Ok(EvalReport {
        accuracy,
        recall: rec_sum / n,
        precision: prec_sum / n,
        f_score: f_sum / n,
        var_fn: population_variance(&defined(&per_class_fn)),
        var_fp: population_variance(&defined(&per_class_fp)),
        per_class_fn,
        per_class_fp,
        confusion: m.clone(),
    })
}

/// Stratified K-fold split. Indices of each label are shuffled and dealt
/// round-robin, continuing the deal position across labels so fold sizes
/// stay balanced overall as well as per stratum.
pub fn kfold_split(n: usize, k: usize, rng: &mut Rng, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::param("folds", format!("need at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::param("folds", format!("{k} folds exceed {n} samples")));
    }
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: labels.len(),
        });
    }
    let num_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut strata = vec![Vec::new(); num_labels];
    for (i, &l) in labels.iter().enumerate() {
        strata[l].push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0usize;
    for mut stratum in strata {
        rng.shuffle(&mut stratum);
        for i in stratum {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn labelled() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..6).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..80)))
    }

    proptest! {
        #[test]
        fn report_consistent_with_direct_counts((c, pairs) in labelled()) {
            let t: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let m = confusion(&t, &p, c).unwrap();
            let r = report(&m).unwrap();
            let correct = t.iter().zip(&p).filter(|(a, b)| a == b).count();
            prop_assert_eq!(r.accuracy, correct as f64 / t.len() as f64);
            for v in r.per_class_fn.iter().chain(&r.per_class_fp).flatten() {
                prop_assert!((0.0..=1.0).contains(v));
            }
            prop_assert!(r.var_fn >= 0.0 && r.var_fp >= 0.0);
            for (row, counts) in normalize_rows(&m).iter().zip(&m.counts) {
                if counts.iter().sum::<u64>() > 0 {
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn kfold_partitions((n, k, seed) in (2usize..60).prop_flat_map(|n| (Just(n), 2..=n.min(8), any::<u64>())),
                            classes in 1usize..5) {
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % classes).collect();
            let folds = kfold_split(n, k, &mut crate::numeric::Rng::new(seed), &labels).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for l in 0..classes {
                let sizes: Vec<usize> = folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == l).count()).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }
}
