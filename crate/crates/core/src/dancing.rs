//! Training-time interference diagnostics.
//!
//! A [`TrainingTrace`] holds, for each recorded epoch, the training-set CCTM
//! of the post-update model. From it:
//!
//! - [`dancing_notes`]: per epoch, the class that steals most predictions
//!   from class `c`, or [`NO_INTERFERENCE`] when no other class takes at
//!   least `threshold` of them.
//! - [`dance_score`]: negated Pearson correlation of the first differences
//!   of two recall curves inside a centred window. Values near +1 mean one
//!   recall rises while the other falls.
//! - [`dance_events`]: maximal epoch runs where the score stays above a
//!   threshold.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cctm::compute_cctm;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;

/// Note value for epochs in which no class interferes.
pub const NO_INTERFERENCE: i64 = -2;

pub const DEFAULT_NOTE_THRESHOLD: f64 = 0.001;
pub const DEFAULT_DANCE_WINDOW: usize = 21;
pub const DEFAULT_DANCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mistake_rate: f64,
    pub recall: Vec<f64>,
    pub cctm: Vec<Vec<f64>>,
}

/// Per-epoch training-set statistics.
///
/// `epochs` counts the records. When recording is decimated (`stride > 1`)
/// record `i` holds epoch `i * stride`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: usize,
    pub num_classes: usize,
    pub records: Vec<EpochRecord>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

impl TrainingTrace {
    pub fn new(num_classes: usize) -> Self {
        TrainingTrace {
            epochs: 0,
            num_classes,
            records: Vec::new(),
            stride: 1,
        }
    }

    pub fn with_stride(num_classes: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::invalid("trace stride must be at least 1"));
        }
        Ok(TrainingTrace {
            stride,
            ..TrainingTrace::new(num_classes)
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends the statistics of `model` on `train_data` for `epoch`, which
    /// must be the next expected epoch.
    pub fn record_epoch(
        &mut self,
        model: &MlpModel,
        train_data: &Dataset,
        epoch: usize,
        lr: f64,
    ) -> Result<()> {
        let expected = self.records.len() * self.stride;
        if epoch != expected {
            return Err(Error::invalid(format!(
                "trace expects epoch {expected} next, got {epoch}"
            )));
        }
        if model.num_classes() != self.num_classes {
            return Err(Error::invalid(format!(
                "trace has {} classes, model has {}",
                self.num_classes,
                model.num_classes()
            )));
        }
        let cctm = compute_cctm(model, train_data)?;
        self.records.push(EpochRecord {
            epoch,
            lr,
            mistake_rate: cctm.mistake_rate(),
            recall: cctm.recall(),
            cctm: cctm.rates().to_vec(),
        });
        self.epochs = self.records.len();
        Ok(())
    }

    /// Recall of class `c` at every recorded epoch.
    pub fn recall_series(&self, c: usize) -> Result<Vec<f64>> {
        self.check_class(c)?;
        Ok(self.records.iter().map(|r| r.recall[c]).collect())
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.num_classes {
            return Err(Error::invalid(format!(
                "class {c} out of range for {} classes",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("trace stride must be at least 1"));
        }
        if self.epochs != self.records.len() {
            return Err(Error::invalid(format!(
                "trace declares {} epochs but holds {} records",
                self.epochs,
                self.records.len()
            )));
        }
        let c = self.num_classes;
        for (i, r) in self.records.iter().enumerate() {
            if r.epoch != i * self.stride {
                return Err(Error::invalid(format!(
                    "record {i} has epoch {}, expected {}",
                    r.epoch,
                    i * self.stride
                )));
            }
            if r.recall.len() != c || r.cctm.len() != c || r.cctm.iter().any(|row| row.len() != c) {
                return Err(Error::invalid(format!(
                    "record {i} does not match {c} classes"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let trace: TrainingTrace = serde_json::from_str(s)?;
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainingTrace::from_json(&s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DancingNotes {
    pub class: usize,
    pub epochs: Vec<usize>,
    /// Most frequent wrong prediction per epoch, or [`NO_INTERFERENCE`].
    pub notes: Vec<i64>,
    pub max_rates: Vec<f64>,
}

impl DancingNotes {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,note,max_rate\n");
        for ((e, n), r) in self.epochs.iter().zip(&self.notes).zip(&self.max_rates) {
            writeln!(out, "{e},{n},{r:.6}").unwrap();
        }
        out
    }
}

/// Per-epoch argmax of the off-diagonal CCTM row of `c` (ties to the
/// smallest class), replaced by [`NO_INTERFERENCE`] when the maximum is
/// below `threshold`.
pub fn dancing_notes(trace: &TrainingTrace, c: usize, threshold: f64) -> Result<DancingNotes> {
    trace.check_class(c)?;
    if trace.is_empty() {
        return Err(Error::invalid("trace is empty"));
    }
    let mut notes = DancingNotes {
        class: c,
        epochs: Vec::with_capacity(trace.len()),
        notes: Vec::with_capacity(trace.len()),
        max_rates: Vec::with_capacity(trace.len()),
    };
    for r in &trace.records {
        let row = &r.cctm[c];
        let mut best: Option<usize> = None;
        for (k, &v) in row.iter().enumerate() {
            if k != c && best.is_none_or(|b| v > row[b]) {
                best = Some(k);
            }
        }
        let best = best.expect("at least two classes");
        let max_rate = row[best];
        notes.epochs.push(r.epoch);
        notes.notes.push(if max_rate < threshold {
            NO_INTERFERENCE
        } else {
            best as i64
        });
        notes.max_rates.push(max_rate);
    }
    Ok(notes)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Label-dance score for a pair of recall curves, one value per recorded
/// epoch. Epochs closer than `window / 2` to either end have no full window
/// and score 0.
pub fn dance_score_series(r1: &[f64], r2: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "dance window must be odd and at least 3, got {window}"
        )));
    }
    if r1.len() != r2.len() {
        return Err(Error::DimensionMismatch {
            expected: r1.len(),
            actual: r2.len(),
        });
    }
    let len = r1.len();
    if len < window {
        return Err(Error::invalid(format!(
            "trace has {len} epochs, shorter than the window of {window}"
        )));
    }
    let diff = |r: &[f64]| -> Vec<f64> { r.windows(2).map(|w| w[1] - w[0]).collect() };
    // d[s - 1] = r[s] - r[s - 1]
    let (d1, d2) = (diff(r1), diff(r2));
    let half = window / 2;
    let mut scores = vec![0.0; len];
    for t in half..len - half {
        let lo = t - half; // differences for epochs lo+1..=t+half
        let hi = t + half;
        scores[t] = -pearson(&d1[lo..hi], &d2[lo..hi]);
    }
    Ok(scores)
}

pub fn dance_score(trace: &TrainingTrace, c1: usize, c2: usize, window: usize) -> Result<Vec<f64>> {
    dance_score_series(&trace.recall_series(c1)?, &trace.recall_series(c2)?, window)
}

/// Inclusive epoch interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochInterval {
    pub start: usize,
    pub end: usize,
}

/// Maximal runs of consecutive entries with `score >= threshold`, reported
/// in the epoch numbers of `epochs`.
pub fn runs_above(epochs: &[usize], scores: &[f64], threshold: f64) -> Vec<EpochInterval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match (s >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(b)) => {
                out.push(EpochInterval {
                    start: epochs[b],
                    end: epochs[i - 1],
                });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(b) = start {
        out.push(EpochInterval {
            start: epochs[b],
            end: epochs[scores.len() - 1],
        });
    }
    out
}

pub fn dance_events(
    trace: &TrainingTrace,
    c1: usize,
    c2: usize,
    score_threshold: f64,
    window: usize,
) -> Result<Vec<EpochInterval>> {
    let scores = dance_score(trace, c1, c2, window)?;
    let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
    Ok(runs_above(&epochs, &scores, score_threshold))
}

/// `epoch,score` CSV.
pub fn dance_csv(trace: &TrainingTrace, scores: &[f64]) -> String {
    let mut out = String::from("epoch,score\n");
    for (r, s) in trace.records.iter().zip(scores) {
        writeln!(out, "{},{s:.6}", r.epoch).unwrap();
    }
    out
}
