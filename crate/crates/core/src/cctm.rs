//! Cross-class test matrix (CCTM).
//!
//! `rates[c1][c2]` is the fraction of true-`c1` samples predicted as `c2`.
//! Rates are always derived from integer counts, so row sums and
//! permutation invariance are exact up to a single division.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;

#[derive(Debug, Clone, PartialEq)]
pub struct CctMatrix {
    counts: Vec<Vec<u64>>,
    class_sizes: Vec<u64>,
    rates: Vec<Vec<f64>>,
}

impl CctMatrix {
    /// Builds the matrix from true labels and predictions.
    pub fn from_predictions(
        labels: &[usize],
        predictions: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: predictions.len(),
            });
        }
        let mut counts = vec![vec![0u64; num_classes]; num_classes];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!(
                    "label {y} / prediction {p} out of range for {num_classes} classes"
                )));
            }
            counts[y][p] += 1;
        }
        Ok(CctMatrix::from_counts(counts))
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let class_sizes: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
        let rates = counts
            .iter()
            .zip(&class_sizes)
            .map(|(row, &n)| {
                row.iter()
                    .map(|&k| if n > 0 { k as f64 / n as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        CctMatrix {
            counts,
            class_sizes,
            rates,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn rates(&self) -> &[Vec<f64>] {
        &self.rates
    }

    pub fn rate(&self, c1: usize, c2: usize) -> f64 {
        self.rates[c1][c2]
    }

    pub fn class_sizes(&self) -> &[u64] {
        &self.class_sizes
    }

    /// True when no sample of class `c` was seen; its row is all zero.
    pub fn is_empty_class(&self, c: usize) -> bool {
        self.class_sizes[c] == 0
    }

    /// Diagonal of the rate matrix (per-class recall).
    pub fn recall(&self) -> Vec<f64> {
        (0..self.num_classes()).map(|c| self.rates[c][c]).collect()
    }

    /// `max(r12, r21) / max(min(r12, r21), 1e-12)`; 1 means symmetric
    /// interference.
    pub fn symmetry_score(&self, c1: usize, c2: usize) -> Result<f64> {
        let n = self.num_classes();
        if c1 >= n || c2 >= n {
            return Err(Error::invalid(format!("classes ({c1}, {c2}) out of range")));
        }
        if c1 == c2 {
            return Err(Error::invalid("symmetry score needs two distinct classes"));
        }
        if self.is_empty_class(c1) || self.is_empty_class(c2) {
            return Err(Error::invalid(format!(
                "class {} has no samples",
                if self.is_empty_class(c1) { c1 } else { c2 }
            )));
        }
        let (r12, r21) = (self.rates[c1][c2], self.rates[c2][c1]);
        Ok(r12.max(r21) / r12.min(r21).max(1e-12))
    }

    /// Fraction of all samples whose prediction differs from the label.
    pub fn mistake_rate(&self) -> f64 {
        let total: u64 = self.class_sizes.iter().sum();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.num_classes()).map(|c| self.counts[c][c]).sum();
        (total - correct) as f64 / total as f64
    }

    /// Rates as CSV: `class,<name_0>,...` then one row per true class, six
    /// decimals.
    pub fn rates_csv(&self, names: &[String]) -> String {
        self.table_csv(names, |c1, c2| format!("{:.6}", self.rates[c1][c2]))
    }

    pub fn counts_csv(&self, names: &[String]) -> String {
        self.table_csv(names, |c1, c2| self.counts[c1][c2].to_string())
    }

    fn table_csv(&self, names: &[String], cell: impl Fn(usize, usize) -> String) -> String {
        let n = self.num_classes();
        let name = |c: usize| names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let mut out = String::from("class");
        for c in 0..n {
            write!(out, ",{}", name(c)).unwrap();
        }
        out.push('\n');
        for c1 in 0..n {
            out.push_str(&name(c1));
            for c2 in 0..n {
                write!(out, ",{}", cell(c1, c2)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Writes `<stem>.csv` style rates to `path` and the integer counts next
    /// to it as `<stem>_counts.csv`.
    pub fn write_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.rates_csv(names)).map_err(|e| Error::io(path, e))?;
        let counts_path = counts_path(path);
        fs::write(&counts_path, self.counts_csv(names)).map_err(|e| Error::io(&counts_path, e))
    }
}

/// `dir/name.csv` -> `dir/name_counts.csv`.
pub fn counts_path(path: &Path) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cctm".into());
    path.with_file_name(format!("{stem}_counts.csv"))
}

/// Predictions of `model` for every sample, in dataset order.
pub fn predictions(model: &MlpModel, data: &Dataset) -> Result<Vec<usize>> {
    data.samples()
        .par_iter()
        .map(|s| model.predict(&s.features))
        .collect()
}

fn check_labels(model: &MlpModel, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if data.num_classes() > model.num_classes() {
        if let Some(s) = data
            .samples()
            .iter()
            .find(|s| s.label >= model.num_classes())
        {
            return Err(Error::invalid(format!(
                "data contains label {} but the model has {} classes",
                s.label,
                model.num_classes()
            )));
        }
    }
    Ok(())
}

/// CCTM of `model` on `data`.
pub fn compute_cctm(model: &MlpModel, data: &Dataset) -> Result<CctMatrix> {
    check_labels(model, data)?;
    let preds = predictions(model, data)?;
    let labels: Vec<usize> = data.samples().iter().map(|s| s.label).collect();
    CctMatrix::from_predictions(&labels, &preds, model.num_classes())
}

pub fn recall(cctm: &CctMatrix) -> Vec<f64> {
    cctm.recall()
}

pub fn symmetry_score(cctm: &CctMatrix, c1: usize, c2: usize) -> Result<f64> {
    cctm.symmetry_score(c1, c2)
}

/// Fraction of samples in `data` that `model` misclassifies.
pub fn mistake_rate(model: &MlpModel, data: &Dataset) -> Result<f64> {
    check_labels(model, data)?;
    let preds = predictions(model, data)?;
    let wrong = data
        .samples()
        .iter()
        .zip(&preds)
        .filter(|(s, &p)| s.label != p)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{MlpSpec, ParamVector, Sample};

    #[test]
    fn hand_counted_fixture() {
        let m = CctMatrix::from_predictions(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![1, 2]]);
        assert_eq!(m.rates()[0], vec![0.5, 0.5]);
        assert_eq!(m.rates()[1], vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(m.recall(), vec![0.5, 2.0 / 3.0]);
        assert!((m.mistake_rate() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = [0, 1, 2, 2, 1, 0];
        let m = CctMatrix::from_predictions(&labels, &labels, 3).unwrap();
        for c1 in 0..3 {
            for c2 in 0..3 {
                assert_eq!(m.rate(c1, c2), if c1 == c2 { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(m.recall(), vec![1.0; 3]);
        assert_eq!(m.mistake_rate(), 0.0);

        let m = CctMatrix::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.rates(), &[vec![1.0, 0.0], vec![1.0, 0.0]]);

        let m = CctMatrix::from_predictions(&[0, 1], &[1, 0], 2).unwrap();
        assert_eq!(m.mistake_rate(), 1.0);
    }

    #[test]
    fn empty_class_row_is_flagged_zero() {
        let m = CctMatrix::from_predictions(&[0, 0, 2], &[0, 2, 2], 3).unwrap();
        assert!(m.is_empty_class(1));
        assert_eq!(m.rates()[1], vec![0.0; 3]);
        assert_eq!(m.recall()[1], 0.0);
        assert!(m.symmetry_score(0, 1).is_err());
    }

    #[test]
    fn symmetry_scores() {
        let counts = vec![vec![94, 6, 0], vec![3, 97, 0], vec![0, 0, 100]];
        let m = CctMatrix::from_counts(counts);
        assert!((m.symmetry_score(0, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!((m.symmetry_score(1, 0).unwrap() - 2.0).abs() < 1e-12);
        let m = CctMatrix::from_counts(vec![vec![9, 1], vec![1, 9]]);
        assert_eq!(m.symmetry_score(0, 1).unwrap(), 1.0);
        assert!(m.symmetry_score(1, 1).is_err());
        // No interference at all: 0 / eps.
        let m = CctMatrix::from_counts(vec![vec![5, 0], vec![0, 5]]);
        assert_eq!(m.symmetry_score(0, 1).unwrap(), 0.0);
    }

    #[test]
    fn model_cctm_and_label_check() {
        let spec = MlpSpec::new(1, vec![], 2).unwrap();
        // logits = [x, -x]: positive x -> class 0.
        let model = MlpModel::new(
            spec,
            ParamVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]).unwrap(),
        )
        .unwrap();
        let data = Dataset::new(
            vec![
                Sample::new(vec![1.0], 0),
                Sample::new(vec![-1.0], 0),
                Sample::new(vec![-2.0], 1),
            ],
            2,
        )
        .unwrap();
        let m = compute_cctm(&model, &data).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![0, 1]]);
        assert!((mistake_rate(&model, &data).unwrap() - 1.0 / 3.0).abs() < 1e-15);

        let wide = Dataset::new(vec![Sample::new(vec![1.0], 2)], 3).unwrap();
        assert!(compute_cctm(&model, &wide).is_err());
        let empty = Dataset::new(vec![], 2).unwrap();
        assert!(mistake_rate(&model, &empty).is_err());
    }

    #[test]
    fn csv_layout() {
        let m = CctMatrix::from_predictions(&[0, 0, 1, 1, 1], &[0, 1, 1, 1, 0], 2).unwrap();
        let names = vec!["cat".to_string(), "dog".to_string()];
        assert_eq!(
            m.rates_csv(&names),
            "class,cat,dog\ncat,0.500000,0.500000\ndog,0.333333,0.666667\n"
        );
        assert_eq!(m.counts_csv(&[]), "class,0,1\n0,1,1\n1,1,2\n");
        assert_eq!(
            counts_path(Path::new("out/cctm.csv")),
            Path::new("out/cctm_counts.csv")
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
            prop::collection::vec((0usize..5, 0usize..5), 1..200)
        }

        proptest! {
            #[test]
            fn rows_are_stochastic(pairs in pairs()) {
                let (labels, preds): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let m = CctMatrix::from_predictions(&labels, &preds, 5).unwrap();
                for c in 0..5 {
                    let s: f64 = m.rates()[c].iter().sum();
                    if m.is_empty_class(c) {
                        prop_assert_eq!(s, 0.0);
                    } else {
                        prop_assert!((s - 1.0).abs() < 1e-9);
                        prop_assert_eq!(m.counts()[c].iter().sum::<u64>(), m.class_sizes()[c]);
                    }
                    prop_assert!(m.rates()[c].iter().all(|r| (0.0..=1.0).contains(r)));
                }
            }

            #[test]
            fn permutation_invariant(pairs in pairs(), seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = pairs.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let (l1, p1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let (l2, p2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
                prop_assert_eq!(
                    CctMatrix::from_predictions(&l1, &p1, 5).unwrap(),
                    CctMatrix::from_predictions(&l2, &p2, 5).unwrap()
                );
            }

            #[test]
            fn mistake_rate_identity(pairs in pairs()) {
                let (labels, preds): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let m = CctMatrix::from_predictions(&labels, &preds, 5).unwrap();
                let n = labels.len() as f64;
                let weighted: f64 = (0..5)
                    .map(|c| m.class_sizes()[c] as f64 / n * m.recall()[c])
                    .sum();
                prop_assert!((m.mistake_rate() - (1.0 - weighted)).abs() < 1e-12);
            }
        }
    }
}
