//! Mini-batch SGD with heavy-ball momentum, coupled weight decay and an
//! optional cosine learning-rate schedule.
//!
//! Per batch:
//!
//! ```text
//! g <- mean sample gradient + weight_decay * w
//! v <- momentum * v + g
//! w <- w - lr(t) * v
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dancing::TrainingTrace;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// `½·base_lr·(1 + cos(π t / T))`, stepped once per epoch.
    Cosine,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::invalid(format!(
                "unknown schedule `{other}` (expected constant or cosine)"
            ))),
        }
    }
}

/// The three optimizer regimes compared in the flatness experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "small-lr")]
    SmallLr,
    #[serde(rename = "big-lr")]
    BigLr,
    #[serde(rename = "anneal-lr")]
    AnnealLr,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::SmallLr, Preset::BigLr, Preset::AnnealLr];

    pub fn name(self) -> &'static str {
        match self {
            Preset::SmallLr => "small-lr",
            Preset::BigLr => "big-lr",
            Preset::AnnealLr => "anneal-lr",
        }
    }

    pub fn config(self, seed: u64) -> OptimizerConfig {
        let (base_lr, schedule) = match self {
            Preset::SmallLr => (0.0001, Schedule::Constant),
            Preset::BigLr => (0.01, Schedule::Constant),
            Preset::AnnealLr => (0.1, Schedule::Cosine),
        };
        OptimizerConfig {
            base_lr,
            momentum: 0.9,
            weight_decay: 0.0005,
            schedule,
            epochs: 200,
            batch_size: 128,
            seed,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown preset `{s}` (expected small-lr, big-lr or anneal-lr)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        // base_lr = 0 is allowed for train_epoch (a fixed point); the
        // schedule requires it to be positive.
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be >= 0, got {}",
                self.base_lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            kind: self.schedule,
            base_lr: self.base_lr,
            epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: Schedule,
    pub base_lr: f64,
    pub epochs: usize,
}

impl LrSchedule {
    pub fn constant(base_lr: f64, epochs: usize) -> Self {
        LrSchedule {
            kind: Schedule::Constant,
            base_lr,
            epochs,
        }
    }

    pub fn cosine(base_lr: f64, epochs: usize) -> Self {
        LrSchedule {
            kind: Schedule::Cosine,
            base_lr,
            epochs,
        }
    }

    /// Learning rate for epoch `t`, `0 <= t < epochs`.
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        if t >= self.epochs {
            return Err(Error::invalid(format!(
                "epoch {t} outside schedule of {} epochs",
                self.epochs
            )));
        }
        Ok(match self.kind {
            Schedule::Constant => self.base_lr,
            Schedule::Cosine => {
                let phase = PI * t as f64 / self.epochs as f64;
                0.5 * self.base_lr * (1.0 + phase.cos())
            }
        })
    }
}

pub fn lr_at(schedule: &LrSchedule, t: usize) -> Result<f64> {
    schedule.lr_at(t)
}

/// Velocity carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumBuffer(Vec<f64>);

impl MomentumBuffer {
    pub fn zeros(len: usize) -> Self {
        MomentumBuffer(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the shuffling stream for `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64))
}

/// Fisher-Yates permutation of `0..n` for `epoch`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order
}

/// One pass over `data` in the epoch's shuffled order, updating `model` and
/// `state` in place.
pub fn train_epoch(
    model: &mut MlpModel,
    data: &Dataset,
    cfg: &OptimizerConfig,
    state: &mut MomentumBuffer,
    epoch: usize,
) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training data is empty"));
    }
    let p = model.params().len();
    if state.0.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: state.0.len(),
        });
    }
    let lr = cfg.lr_schedule().lr_at(epoch)?;
    let order = epoch_permutation(data.len(), cfg.seed, epoch);
    let samples = data.samples();
    let mut grad = vec![0.0; p];

    for batch in order.chunks(cfg.batch_size) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for &i in batch {
            model.accumulate_gradient(&samples[i], &mut grad)?;
        }
        let n = batch.len() as f64;
        let w = model.params_mut();
        for ((wk, vk), gk) in w.iter_mut().zip(state.0.iter_mut()).zip(&grad) {
            let g = gk / n + cfg.weight_decay * *wk;
            *vk = cfg.momentum * *vk + g;
            *wk -= lr * *vk;
        }
    }
    if model.params().as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "training diverged at epoch {epoch} (lr {lr})"
        )));
    }
    Ok(())
}

/// Called after every epoch with the updated model.
pub trait EpochHook {
    fn on_epoch_end(&mut self, epoch: usize, lr: f64, model: &MlpModel) -> Result<()>;
}

impl<F> EpochHook for F
where
    F: FnMut(usize, f64, &MlpModel) -> Result<()>,
{
    fn on_epoch_end(&mut self, epoch: usize, lr: f64, model: &MlpModel) -> Result<()> {
        self(epoch, lr, model)
    }
}

/// Runs `cfg.epochs` epochs from a zero momentum buffer.
pub fn train(
    mut model: MlpModel,
    data: &Dataset,
    cfg: &OptimizerConfig,
    hook: &mut dyn EpochHook,
) -> Result<MlpModel> {
    cfg.validate()?;
    if cfg.base_lr <= 0.0 {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if data.num_classes() > model.num_classes() {
        return Err(Error::invalid(format!(
            "data has {} classes but the model has {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    let schedule = cfg.lr_schedule();
    let mut state = MomentumBuffer::zeros(model.params().len());
    for epoch in 0..cfg.epochs {
        train_epoch(&mut model, data, cfg, &mut state, epoch)?;
        hook.on_epoch_end(epoch, schedule.lr_at(epoch)?, &model)?;
    }
    Ok(model)
}

/// [`train`] that records a trace every `trace_every` epochs on `data`.
pub fn train_with_trace(
    model: MlpModel,
    data: &Dataset,
    cfg: &OptimizerConfig,
    trace_every: usize,
) -> Result<(MlpModel, TrainingTrace)> {
    let mut trace = TrainingTrace::with_stride(model.num_classes(), trace_every)?;
    let mut hook = |epoch: usize, lr: f64, m: &MlpModel| -> Result<()> {
        if epoch % trace_every == 0 {
            trace.record_epoch(m, data, epoch, lr)?;
        }
        Ok(())
    };
    let model = train(model, data, cfg, &mut hook)?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cctm::mistake_rate;
    use crate::datagen::{generate, DatasetSpec};
    use crate::nn::{MlpSpec, ParamVector, Sample};

    fn cfg(lr: f64, momentum: f64, wd: f64, batch: usize) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: lr,
            momentum,
            weight_decay: wd,
            schedule: Schedule::Constant,
            epochs: 1,
            batch_size: batch,
            seed: 3,
        }
    }

    fn small_data(n: usize) -> Dataset {
        let spec = DatasetSpec {
            num_classes: 3,
            dim: 2,
            per_class: n,
            class_means: vec![vec![0.0, 1.0], vec![1.0, -1.0], vec![-1.0, 0.0]],
            class_std: 0.5,
            seed: 4,
        };
        generate(&spec).unwrap()
    }

    #[test]
    fn cosine_values() {
        let s = LrSchedule::cosine(0.1, 200);
        assert_eq!(s.lr_at(0).unwrap(), 0.1);
        assert!((s.lr_at(100).unwrap() - 0.05).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let lr = s.lr_at(t).unwrap();
            assert!(lr > 0.0 && lr < prev, "epoch {t}");
            prev = lr;
        }
        assert!(s.lr_at(200).is_err());
        let c = LrSchedule::constant(0.01, 7);
        assert!((0..7).all(|t| c.lr_at(t).unwrap() == 0.01));
    }

    #[test]
    fn presets() {
        let p = Preset::AnnealLr.config(0);
        assert_eq!((p.base_lr, p.schedule), (0.1, Schedule::Cosine));
        assert_eq!(
            (p.momentum, p.weight_decay, p.batch_size, p.epochs),
            (0.9, 0.0005, 128, 200)
        );
        assert_eq!(Preset::SmallLr.config(0).base_lr, 0.0001);
        assert_eq!(Preset::BigLr.config(0).base_lr, 0.01);
        assert_eq!("big-lr".parse::<Preset>().unwrap(), Preset::BigLr);
        assert!("huge-lr".parse::<Preset>().is_err());
    }

    #[test]
    fn plain_gradient_step() {
        let model = MlpModel::init(MlpSpec::new(2, vec![3], 3).unwrap(), 1).unwrap();
        let s = Sample::new(vec![0.4, -0.7], 2);
        let data = Dataset::new(vec![s.clone()], 3).unwrap();
        let g = model.sample_gradient(&s).unwrap();
        let want = model.params().sub_scaled(&g, 1.0).unwrap();
        let mut trained = model.clone();
        let mut state = MomentumBuffer::zeros(model.params().len());
        train_epoch(&mut trained, &data, &cfg(1.0, 0.0, 0.0, 4), &mut state, 0).unwrap();
        assert!(trained.params().max_abs_diff(&want).unwrap() < 1e-15);
    }

    #[test]
    fn zero_lr_is_a_fixed_point() {
        let model = MlpModel::init(MlpSpec::new(2, vec![4], 3).unwrap(), 2).unwrap();
        let data = small_data(10);
        let mut trained = model.clone();
        let mut state = MomentumBuffer::zeros(model.params().len());
        let c = cfg(0.0, 0.9, 0.0005, 7);
        for epoch in 0..1 {
            train_epoch(&mut trained, &data, &c, &mut state, epoch).unwrap();
        }
        assert_eq!(trained.params(), model.params());
    }

    #[test]
    fn two_batches_match_sequential_oracle() {
        let model = MlpModel::init(MlpSpec::new(2, vec![4], 3).unwrap(), 5).unwrap();
        let data = small_data(3); // 9 samples
        let c = cfg(0.05, 0.9, 0.01, 5);
        let order = epoch_permutation(data.len(), c.seed, 0);

        let mut w = model.params().clone().into_vec();
        let mut v = vec![0.0; w.len()];
        for batch in [&order[..5], &order[5..]] {
            let current = model
                .with_params(ParamVector::from_vec(w.clone()).unwrap())
                .unwrap();
            let mut mean = vec![0.0; w.len()];
            for &i in batch {
                let g = current.sample_gradient(&data.samples()[i]).unwrap();
                for (m, gi) in mean.iter_mut().zip(g.as_slice()) {
                    *m += gi;
                }
            }
            for k in 0..w.len() {
                let g = mean[k] / batch.len() as f64 + c.weight_decay * w[k];
                v[k] = c.momentum * v[k] + g;
                w[k] -= c.base_lr * v[k];
            }
        }

        let mut trained = model.clone();
        let mut state = MomentumBuffer::zeros(model.params().len());
        train_epoch(&mut trained, &data, &c, &mut state, 0).unwrap();
        let want = ParamVector::from_vec(w).unwrap();
        assert!(trained.params().max_abs_diff(&want).unwrap() < 1e-12);
        assert!(state
            .as_slice()
            .iter()
            .zip(&v)
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn weight_decay_shrinks_saturated_model() {
        // Logits are 60 * onehot(label) for every sample, so the data
        // gradient is ~e^-60.
        let spec = MlpSpec::new(2, vec![], 2).unwrap();
        let p = vec![0.3, -0.2, 0.1, 0.25, 30.0, -30.0];
        let model = MlpModel::new(spec, ParamVector::from_vec(p).unwrap()).unwrap();
        let data = Dataset::new(vec![Sample::new(vec![0.0, 0.0], 0)], 2).unwrap();
        let c = cfg(0.1, 0.0, 0.0005, 1);
        let mut trained = model.clone();
        let mut state = MomentumBuffer::zeros(6);
        train_epoch(&mut trained, &data, &c, &mut state, 0).unwrap();
        let want = model.params().norm() * (1.0 - 0.1 * 0.0005);
        assert!((trained.params().norm() - want).abs() < 1e-12);
    }

    #[test]
    fn empty_data_and_bad_config() {
        let model = MlpModel::init(MlpSpec::new(2, vec![], 2).unwrap(), 0).unwrap();
        let empty = Dataset::new(vec![], 2).unwrap();
        let mut m = model.clone();
        let mut state = MomentumBuffer::zeros(6);
        assert!(train_epoch(&mut m, &empty, &cfg(0.1, 0.0, 0.0, 1), &mut state, 0).is_err());

        let data = small_data(2);
        let mut bad = cfg(0.1, 0.0, 0.0, 1);
        bad.epochs = 0;
        assert!(train(model.clone(), &data, &bad, &mut |_, _, _: &MlpModel| Ok(())).is_err());
        let mut bad = cfg(0.1, 1.0, 0.0, 1);
        bad.epochs = 2;
        assert!(bad.validate().is_err());
        let mut bad = cfg(0.1, 0.0, 0.0, 0);
        bad.epochs = 2;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_epoch_train_equals_train_epoch() {
        let model = MlpModel::init(MlpSpec::new(2, vec![4], 3).unwrap(), 8).unwrap();
        let data = small_data(20);
        let c = cfg(0.05, 0.9, 0.0005, 16);
        let mut by_epoch = model.clone();
        let mut state = MomentumBuffer::zeros(model.params().len());
        train_epoch(&mut by_epoch, &data, &c, &mut state, 0).unwrap();
        let mut calls = vec![];
        let trained = train(model, &data, &c, &mut |e, lr, _: &MlpModel| {
            calls.push((e, lr));
            Ok(())
        })
        .unwrap();
        assert_eq!(trained, by_epoch);
        assert_eq!(calls, vec![(0, 0.05)]);
    }

    #[test]
    fn training_is_deterministic() {
        let data = small_data(30);
        let mut c = Preset::AnnealLr.config(11);
        c.epochs = 5;
        c.batch_size = 16;
        let run = || {
            let m = MlpModel::init(MlpSpec::new(2, vec![8], 3).unwrap(), 1).unwrap();
            train_with_trace(m, &data, &c, 1).unwrap()
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a.params().digest(), b.params().digest());
        assert_eq!(ta, tb);
        assert_eq!(ta.len(), 5);
    }

    #[test]
    fn separable_gaussians_are_learned() {
        let spec = DatasetSpec {
            num_classes: 2,
            dim: 2,
            per_class: 200,
            class_means: vec![vec![-5.0, 0.0], vec![5.0, 0.0]],
            class_std: 1.0,
            seed: 10,
        };
        let data = generate(&spec).unwrap();
        let mut c = Preset::AnnealLr.config(3);
        c.epochs = 50;
        let m = MlpModel::init(MlpSpec::new(2, vec![8], 2).unwrap(), 2).unwrap();
        let trained = train(m, &data, &c, &mut |_, _, _: &MlpModel| Ok(())).unwrap();
        assert!(mistake_rate(&trained, &data).unwrap() < 0.01);
    }

    #[test]
    fn permutations_differ_by_epoch() {
        let a = epoch_permutation(50, 1, 0);
        let b = epoch_permutation(50, 1, 1);
        assert_ne!(a, b);
        assert_eq!(a, epoch_permutation(50, 1, 0));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
