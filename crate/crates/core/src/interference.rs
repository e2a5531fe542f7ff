//! Class gradients, ego models and interference surfaces.
//!
//! For a trained model `w*` the gradient of class `c` is the mean per-sample
//! loss gradient over the samples of that class. Stepping against it gives
//! the ego models `w* - α·g_c`; mixing two classes gives the interference
//! models `w* - (θ1·g_c1 + θ2·g_c2)`, which are exactly the convex
//! combinations of one ego model of each class. [`sample_surface`]
//! evaluates a metric over a uniform `[-σ, σ]²` grid of `(θ1, θ2)`.
//!
//! Class gradients use the bare cross-entropy; weight decay is not part of
//! them.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cctm;
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::{MlpModel, ParamVector};

pub const DEFAULT_SIGMA: f64 = 0.5;
pub const DEFAULT_POINTS: usize = 19;
pub const DEFAULT_TAU: f64 = 0.02;

/// Mean sample gradient over the samples of class `c`.
pub fn class_gradient(model: &MlpModel, data: &Dataset, c: usize) -> Result<ParamVector> {
    let mut sum = vec![0.0; model.params().len()];
    let mut n = 0usize;
    for s in data.class_subset(c) {
        model.accumulate_gradient(s, &mut sum)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid(format!("class {c} has no samples")));
    }
    sum.iter_mut().for_each(|g| *g /= n as f64);
    ParamVector::from_vec(sum)
}

/// Mean sample gradient over the whole dataset.
pub fn full_gradient(model: &MlpModel, data: &Dataset) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let mut sum = vec![0.0; model.params().len()];
    for s in data.samples() {
        model.accumulate_gradient(s, &mut sum)?;
    }
    sum.iter_mut().for_each(|g| *g /= data.len() as f64);
    ParamVector::from_vec(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassGradientSet {
    gradients: Vec<ParamVector>,
    class_sizes: Vec<usize>,
    base_model_hash: String,
}

impl ClassGradientSet {
    pub fn gradient(&self, c: usize) -> Result<&ParamVector> {
        self.gradients
            .get(c)
            .ok_or_else(|| Error::invalid(format!("no gradient for class {c}")))
    }

    pub fn gradients(&self) -> &[ParamVector] {
        &self.gradients
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    /// Digest of the parameters the gradients were taken at.
    pub fn base_model_hash(&self) -> &str {
        &self.base_model_hash
    }

    pub fn norms(&self) -> Vec<f64> {
        self.gradients.iter().map(ParamVector::norm).collect()
    }

    /// `Σ_c (|D_c| / |D|) · g_c`, which equals the full-batch mean gradient.
    pub fn weighted_mean(&self) -> ParamVector {
        let total: usize = self.class_sizes.iter().sum();
        let mut out = vec![0.0; self.gradients[0].len()];
        for (g, &n) in self.gradients.iter().zip(&self.class_sizes) {
            let w = n as f64 / total as f64;
            for (o, v) in out.iter_mut().zip(g.as_slice()) {
                *o += w * v;
            }
        }
        ParamVector::from_vec(out).expect("finite combination of finite vectors")
    }
}

/// One class gradient per class of the model. Every class must have samples.
pub fn compute_class_gradients(model: &MlpModel, data: &Dataset) -> Result<ClassGradientSet> {
    let c = model.num_classes();
    let mut sizes = vec![0usize; c];
    for s in data.samples() {
        if s.label >= c {
            return Err(Error::invalid(format!(
                "data contains label {} but the model has {c} classes",
                s.label
            )));
        }
        sizes[s.label] += 1;
    }
    let missing: Vec<String> = (0..c)
        .filter(|&k| sizes[k] == 0)
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "classes without samples: {}",
            missing.join(", ")
        )));
    }
    let gradients = (0..c)
        .into_par_iter()
        .map(|k| class_gradient(model, data, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassGradientSet {
        gradients,
        class_sizes: sizes,
        base_model_hash: model.params().digest(),
    })
}

/// `w* - α·g`.
pub fn ego_model(w_star: &ParamVector, grad: &ParamVector, alpha: f64) -> Result<ParamVector> {
    w_star.sub_scaled(grad, alpha)
}

/// A set of ego models of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct EgoModelSet {
    pub class: usize,
    pub alphas: Vec<f64>,
    pub models: Vec<ParamVector>,
}

pub fn ego_model_set(
    w_star: &ParamVector,
    grads: &ClassGradientSet,
    class: usize,
    alphas: &[f64],
) -> Result<EgoModelSet> {
    let g = grads.gradient(class)?;
    let models = alphas
        .iter()
        .map(|&a| ego_model(w_star, g, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(EgoModelSet {
        class,
        alphas: alphas.to_vec(),
        models,
    })
}

/// `w* - (θ1·g1 + θ2·g2)`.
pub fn interference_model(
    w_star: &ParamVector,
    g1: &ParamVector,
    g2: &ParamVector,
    theta1: f64,
    theta2: f64,
) -> Result<ParamVector> {
    w_star.check_len(g1)?;
    w_star.check_len(g2)?;
    let values = w_star
        .as_slice()
        .iter()
        .zip(g1.as_slice())
        .zip(g2.as_slice())
        .map(|((w, a), b)| w - (theta1 * a + theta2 * b))
        .collect();
    ParamVector::from_vec(values)
}

/// Largest coordinate gap between `λ·w_i(c1) + (1-λ)·w_j(c2)` and the
/// interference model at `θ1 = λ·α_i`, `θ2 = (1-λ)·α_j`.
pub fn mixing_identity_gap(
    w_star: &ParamVector,
    g1: &ParamVector,
    g2: &ParamVector,
    alpha_i: f64,
    alpha_j: f64,
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    let ego1 = ego_model(w_star, g1, alpha_i)?;
    let ego2 = ego_model(w_star, g2, alpha_j)?;
    let mix: Vec<f64> = ego1
        .as_slice()
        .iter()
        .zip(ego2.as_slice())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    let mix = ParamVector::from_vec(mix)?;
    let direct = interference_model(w_star, g1, g2, lambda * alpha_i, (1.0 - lambda) * alpha_j)?;
    mix.max_abs_diff(&direct)
}

/// What a surface node measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SurfaceMetric {
    MistakeRate,
    CrossEntropy,
    /// Mean cross-entropy over the samples of one class.
    ClassLoss(usize),
}

impl fmt::Display for SurfaceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceMetric::MistakeRate => f.write_str("mistake"),
            SurfaceMetric::CrossEntropy => f.write_str("xent"),
            SurfaceMetric::ClassLoss(k) => write!(f, "class:{k}"),
        }
    }
}

impl FromStr for SurfaceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mistake" | "mistake_rate" => Ok(SurfaceMetric::MistakeRate),
            "xent" | "cross_entropy" => Ok(SurfaceMetric::CrossEntropy),
            _ => s
                .strip_prefix("class:")
                .and_then(|k| k.parse().ok())
                .map(SurfaceMetric::ClassLoss)
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "unknown metric `{s}` (expected mistake, xent or class:<k>)"
                    ))
                }),
        }
    }
}

impl From<SurfaceMetric> for String {
    fn from(m: SurfaceMetric) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for SurfaceMetric {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Evaluates `metric` for `model` on `data`.
pub fn evaluate_metric(model: &MlpModel, data: &Dataset, metric: SurfaceMetric) -> Result<f64> {
    match metric {
        SurfaceMetric::MistakeRate => cctm::mistake_rate(model, data),
        SurfaceMetric::CrossEntropy => mean_loss(model, data.samples().iter()),
        SurfaceMetric::ClassLoss(k) => {
            if k >= model.num_classes() {
                return Err(Error::invalid(format!(
                    "class {k} out of range for {} classes",
                    model.num_classes()
                )));
            }
            mean_loss(model, data.class_subset(k))
        }
    }
}

fn mean_loss<'a>(
    model: &MlpModel,
    samples: impl Iterator<Item = &'a crate::nn::Sample>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in samples {
        total += model.sample_loss(s)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no samples to evaluate"));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub c1: usize,
    pub c2: usize,
    pub sigma: f64,
    pub points_per_axis: usize,
    pub metric: SurfaceMetric,
}

impl SurfaceSpec {
    pub fn new(
        c1: usize,
        c2: usize,
        sigma: f64,
        points_per_axis: usize,
        metric: SurfaceMetric,
    ) -> Result<Self> {
        let spec = SurfaceSpec {
            c1,
            c2,
            sigma,
            points_per_axis,
            metric,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c1 == self.c2 {
            return Err(Error::invalid("surface needs two distinct classes"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.points_per_axis == 0 || self.points_per_axis % 2 == 0 {
            return Err(Error::invalid(format!(
                "points must be odd so the origin is a grid node, got {}",
                self.points_per_axis
            )));
        }
        Ok(())
    }

    /// Uniform coordinates over `[-σ, σ]`, endpoints included; the middle
    /// one is exactly 0.
    pub fn theta_axis(&self) -> Vec<f64> {
        let n = self.points_per_axis;
        if n == 1 {
            return vec![0.0];
        }
        let span = (n - 1) as f64;
        (0..n)
            .map(|i| self.sigma * (2.0 * i as f64 - span) / span)
            .collect()
    }
}

/// Metric values over the `(θ1, θ2)` grid; `values[i][j]` sits at
/// `(theta_axis[i], theta_axis[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub spec: SurfaceSpec,
    pub theta_axis: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SurfaceGrid {
    pub fn center(&self) -> f64 {
        let m = self.theta_axis.len() / 2;
        self.values[m][m]
    }

    pub fn node_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// `theta1,theta2,value`, row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta1,theta2,value\n");
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{v:.6}",
                    self.theta_axis[i], self.theta_axis[j]
                )
                .unwrap();
            }
        }
        out
    }
}

/// Evaluates the metric at every interference model of the grid.
///
/// Nodes are evaluated in parallel; each writes its own slot, so the result
/// does not depend on the number of workers.
pub fn sample_surface(
    model: &MlpModel,
    grads: &ClassGradientSet,
    data: &Dataset,
    spec: &SurfaceSpec,
) -> Result<SurfaceGrid> {
    spec.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let g1 = grads.gradient(spec.c1)?;
    let g2 = grads.gradient(spec.c2)?;
    let w_star = model.params();
    let axis = spec.theta_axis();
    let n = axis.len();
    let flat = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let params = interference_model(w_star, g1, g2, axis[i], axis[j])?;
            evaluate_metric(&model.with_params(params)?, data, spec.metric)
        })
        .collect::<Result<Vec<f64>>>()?;
    let values = flat.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(SurfaceGrid {
        spec: *spec,
        theta_axis: axis,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceStats {
    pub center: f64,
    pub min: f64,
    pub max: f64,
    pub flat_fraction: f64,
    pub tau: f64,
    pub sigma: f64,
    pub points: usize,
    pub metric: SurfaceMetric,
    pub c1: usize,
    pub c2: usize,
}

/// Center value, extremes, and the fraction of nodes within `tau` above the
/// center.
pub fn surface_stats(grid: &SurfaceGrid, tau: f64) -> SurfaceStats {
    let center = grid.center();
    let all = grid.values.iter().flatten();
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut flat = 0usize;
    for &v in all {
        min = min.min(v);
        max = max.max(v);
        if v <= center + tau {
            flat += 1;
        }
    }
    SurfaceStats {
        center,
        min,
        max,
        flat_fraction: flat as f64 / grid.node_count() as f64,
        tau,
        sigma: grid.spec.sigma,
        points: grid.spec.points_per_axis,
        metric: grid.spec.metric,
        c1: grid.spec.c1,
        c2: grid.spec.c2,
    }
}
