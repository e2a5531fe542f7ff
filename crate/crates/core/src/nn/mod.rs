//! Fully connected ReLU classifier with cross-entropy loss and exact
//! backpropagation over a flat parameter vector.
//!
//! Parameter layout, layer by layer: the weight matrix row-major with shape
//! `(fan_out, fan_in)`, followed by the `fan_out` biases.

mod io;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `max(0, x)`; the subgradient at 0 is taken as 0.
    #[default]
    Relu,
}

/// Architecture of a classifier: input width, hidden widths and class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim must be at least 1"));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::invalid(format!("hidden layer {i} has width 0")));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every dense layer, input to output.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }
}

/// Total number of weights and biases implied by `spec`.
pub fn param_count(spec: &MlpSpec) -> usize {
    spec.layers()
        .iter()
        .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
        .sum()
}

/// One labelled example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Sample { features, label }
    }
}

/// A classifier: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    params: ParamVector,
}

impl MlpModel {
    pub fn new(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(MlpModel { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let n = spec.param_count();
        MlpModel::new(spec, ParamVector::zeros(n))
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out) in spec.layers() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        MlpModel::new(spec, ParamVector::from_vec(values)?)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Same architecture, different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        MlpModel::new(self.spec.clone(), params)
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite"));
        }
        Ok(())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        self.check_input(&sample.features)?;
        if sample.label >= self.spec.num_classes {
            return Err(Error::invalid(format!(
                "label {} out of range for {} classes",
                sample.label, self.spec.num_classes
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer; the last entry holds the logits.
    fn forward_layers(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.spec.layers();
        let w = self.params.as_slice();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let weights = &w[offset..offset + fan_in * fan_out];
            let bias = &w[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<f64> = {
                let input: &[f64] = if l == 0 { x } else { &out[l - 1] };
                (0..fan_out)
                    .map(|o| {
                        let row = &weights[o * fan_in..(o + 1) * fan_in];
                        let mut acc = bias[o];
                        if l == 0 {
                            for (wi, xi) in row.iter().zip(input) {
                                acc += wi * xi;
                            }
                        } else {
                            for (wi, zi) in row.iter().zip(input) {
                                acc += wi * relu(*zi);
                            }
                        }
                        acc
                    })
                    .collect()
            };
            out.push(z);
        }
        out
    }

    /// Logits for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_layers(x).pop().expect("at least one layer"))
    }

    /// Cross-entropy `-log softmax(logits)[label]`.
    pub fn sample_loss(&self, sample: &Sample) -> Result<f64> {
        self.check_sample(sample)?;
        let logits = self.forward_layers(&sample.features).pop().expect("layer");
        Ok(cross_entropy(&logits, sample.label))
    }

    /// Gradient of [`sample_loss`](Self::sample_loss) with respect to every
    /// parameter.
    pub fn sample_gradient(&self, sample: &Sample) -> Result<ParamVector> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(sample, &mut grad)?;
        ParamVector::from_vec(grad)
    }

    /// Adds the sample gradient into `acc` and returns the sample loss.
    pub(crate) fn accumulate_gradient(&self, sample: &Sample, acc: &mut [f64]) -> Result<f64> {
        self.check_sample(sample)?;
        debug_assert_eq!(acc.len(), self.params.len());
        let layers = self.spec.layers();
        let pre = self.forward_layers(&sample.features);
        let logits = pre.last().expect("layer");
        let loss = cross_entropy(logits, sample.label);

        let mut delta = softmax(logits);
        delta[sample.label] -= 1.0;

        let w = self.params.as_slice();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(fan_in, fan_out) in &layers {
            offsets.push(offset);
            offset += fan_in * fan_out + fan_out;
        }

        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let base = offsets[l];
            let input: Vec<f64> = if l == 0 {
                sample.features.clone()
            } else {
                pre[l - 1].iter().map(|&z| relu(z)).collect()
            };
            for o in 0..fan_out {
                let d = delta[o];
                let row = &mut acc[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
                acc[base + fan_in * fan_out + o] += d;
            }
            if l > 0 {
                let weights = &w[base..base + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let d = delta[o];
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += wi * d;
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&pre[l - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(loss)
    }

    /// Index of the largest logit; ties go to the smallest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }
}

fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(logits: &[f64]) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    (max, sum)
}

/// Numerically stable `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let (max, sum) = log_sum_exp(logits);
    (max - logits[label]) + sum.ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let (max, sum) = log_sum_exp(logits);
    logits.iter().map(|&z| (z - max).exp() / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_sample(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Sample {
        Sample::new(
            (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            rng.gen_range(0..classes),
        )
    }

    // Layer-by-layer matrix multiply that shares nothing with forward_layers.
    fn matmul_oracle(model: &MlpModel, x: &[f64]) -> Vec<f64> {
        let p = model.params().as_slice();
        let mut a = x.to_vec();
        let mut off = 0;
        let layers = model.spec().layers();
        for (l, (fi, fo)) in layers.iter().copied().enumerate() {
            let mut w = vec![vec![0.0; fi]; fo];
            for (o, row) in w.iter_mut().enumerate() {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = p[off + o * fi + i];
                }
            }
            let b = &p[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; fo];
            for o in 0..fo {
                z[o] = b[o] + (0..fi).map(|i| w[o][i] * a[i]).sum::<f64>();
            }
            if l + 1 < layers.len() {
                a = z.iter().map(|&v| v.max(0.0)).collect();
            } else {
                a = z;
            }
        }
        a
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(param_count(&MlpSpec::new(2, vec![3], 2).unwrap()), 17);
        assert_eq!(param_count(&MlpSpec::new(1, vec![], 2).unwrap()), 4);

        let spec = MlpSpec::new(4, vec![8, 8], 4).unwrap();
        let widths = [4usize, 8, 8, 4];
        let mut oracle = 0;
        for i in 0..widths.len() - 1 {
            oracle += widths[i] * widths[i + 1];
            oracle += widths[i + 1];
        }
        assert_eq!(param_count(&spec), oracle);
        assert_eq!(oracle, 148);
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(0, vec![], 2).is_err());
        assert!(MlpSpec::new(2, vec![4, 0], 2).is_err());
        assert!(MlpSpec::new(2, vec![4], 1).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits_and_ln_c_loss() {
        let model = MlpModel::zeros(MlpSpec::new(3, vec![5], 10).unwrap()).unwrap();
        let x = [0.3, -1.0, 7.0];
        assert_eq!(model.forward(&x).unwrap(), vec![0.0; 10]);
        let loss = model.sample_loss(&Sample::new(x.to_vec(), 4)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn identity_layer() {
        let spec = MlpSpec::new(3, vec![], 3).unwrap();
        let mut p = vec![0.0; spec.param_count()];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let model = MlpModel::new(spec, ParamVector::from_vec(p).unwrap()).unwrap();
        assert_eq!(
            model.forward(&[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let model = MlpModel::init(MlpSpec::new(4, vec![7, 5], 3).unwrap(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let s = random_sample(&mut rng, 4, 3);
            let got = model.forward(&s.features).unwrap();
            let want = matmul_oracle(&model, &s.features);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = MlpModel::zeros(MlpSpec::new(3, vec![], 2).unwrap()).unwrap();
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 2
            })
        ));
        assert!(model.forward(&[1.0, f64::NAN, 0.0]).is_err());
        assert!(model.sample_loss(&Sample::new(vec![0.0; 3], 2)).is_err());
    }

    /// Linear model whose logits equal `margin * onehot(label)` at input `x`.
    fn saturated_linear(dim: usize, classes: usize, label: usize, margin: f64) -> MlpModel {
        let spec = MlpSpec::new(dim, vec![], classes).unwrap();
        let mut p = vec![0.0; spec.param_count()];
        p[dim * classes + label] = margin;
        MlpModel::new(spec, ParamVector::from_vec(p).unwrap()).unwrap()
    }

    #[test]
    fn saturated_loss_and_gradient_vanish() {
        let model = saturated_linear(3, 4, 2, 50.0);
        let s = Sample::new(vec![0.5, -0.2, 1.0], 2);
        assert!(model.sample_loss(&s).unwrap() < 1e-6);
        assert!(model.sample_gradient(&s).unwrap().norm() < 1e-6);
    }

    #[test]
    fn loss_matches_naive_formula() {
        let model = MlpModel::init(MlpSpec::new(3, vec![6], 5).unwrap(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = random_sample(&mut rng, 3, 5);
            let z = matmul_oracle(&model, &s.features);
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            let naive = -(z[s.label].exp() / denom).ln();
            assert!((model.sample_loss(&s).unwrap() - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_stable_for_huge_logits() {
        let model = saturated_linear(1, 3, 0, 1e6);
        let s = Sample::new(vec![0.0], 1);
        let loss = model.sample_loss(&s).unwrap();
        assert!((loss - 1e6).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_logistic_closed_form() {
        let model = MlpModel::init(MlpSpec::new(3, vec![], 2).unwrap(), 21).unwrap();
        let s = Sample::new(vec![0.7, -1.3, 2.0], 1);
        let z = matmul_oracle(&model, &s.features);
        let e0 = z[0].exp();
        let e1 = z[1].exp();
        let p = [e0 / (e0 + e1), e1 / (e0 + e1)];
        let err = [p[0], p[1] - 1.0];
        let mut want = vec![];
        for e in err {
            for x in &s.features {
                want.push(e * x);
            }
        }
        want.extend_from_slice(&err);
        let got = model.sample_gradient(&s).unwrap();
        for (g, w) in got.as_slice().iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = MlpSpec::new(3, vec![5, 4], 3).unwrap();
        let model = MlpModel::init(spec, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = 1e-5;
        for _ in 0..5 {
            let s = random_sample(&mut rng, 3, 3);
            let g = model.sample_gradient(&s).unwrap();
            for k in 0..model.params().len() {
                let mut plus = model.params().clone().into_vec();
                let mut minus = plus.clone();
                plus[k] += h;
                minus[k] -= h;
                let lp = model
                    .with_params(ParamVector::from_vec(plus).unwrap())
                    .unwrap()
                    .sample_loss(&s)
                    .unwrap();
                let lm = model
                    .with_params(ParamVector::from_vec(minus).unwrap())
                    .unwrap()
                    .sample_loss(&s)
                    .unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (g.as_slice()[k] - fd).abs() / (fd.abs() + 1e-8);
                assert!(rel < 1e-4, "coord {k}: {} vs {fd}", g.as_slice()[k]);
            }
        }
    }

    #[test]
    fn predict_ties_and_argmax() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[2.0, 1.0, 2.0]), 0);

        let model = MlpModel::zeros(MlpSpec::new(2, vec![3], 4).unwrap()).unwrap();
        assert_eq!(model.predict(&[5.0, -5.0]).unwrap(), 0);
    }

    #[test]
    fn predict_matches_argmax_oracle() {
        let model = MlpModel::init(MlpSpec::new(2, vec![8], 4).unwrap(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let s = random_sample(&mut rng, 2, 4);
            let z = matmul_oracle(&model, &s.features);
            let mut best = 0;
            for c in 1..z.len() {
                if z[c] > z[best] {
                    best = c;
                }
            }
            assert_eq!(model.predict(&s.features).unwrap(), best);
        }
    }

    #[test]
    fn pure_operations_are_bit_identical() {
        let model = MlpModel::init(MlpSpec::new(2, vec![4], 3).unwrap(), 6).unwrap();
        let s = Sample::new(vec![0.25, -1.5], 2);
        assert_eq!(
            model.forward(&s.features).unwrap(),
            model.forward(&s.features).unwrap()
        );
        assert_eq!(
            model.sample_gradient(&s).unwrap(),
            model.sample_gradient(&s).unwrap()
        );
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = MlpSpec::new(2, vec![3], 2).unwrap();
        let a = MlpModel::init(spec.clone(), 1).unwrap();
        let b = MlpModel::init(spec.clone(), 1).unwrap();
        let c = MlpModel::init(spec, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let p = a.params().as_slice();
        let limit1 = (6.0f64 / 5.0).sqrt();
        assert!(p[..6].iter().all(|v| v.abs() <= limit1));
        assert_eq!(&p[6..9], &[0.0, 0.0, 0.0]);
        assert_eq!(&p[15..17], &[0.0, 0.0]);
    }

    #[test]
    fn set_params_round_trip() {
        let mut model = MlpModel::init(MlpSpec::new(2, vec![3], 2).unwrap(), 1).unwrap();
        let p = model.params().clone();
        let raw = p.clone().into_vec();
        model
            .set_params(ParamVector::from_vec(raw).unwrap())
            .unwrap();
        assert_eq!(model.params(), &p);
        assert!(model.set_params(ParamVector::zeros(3)).is_err());
    }
}
