//! One-hidden-layer logistic network used by both the call classifier and the
//! expert-trained post-classifier.
//!
//! Training is full-batch gradient descent on weighted mean cross-entropy,
//! single-threaded and fully determined by the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MlpError {
    #[error("feature vector has length {got}, model expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set needs both classes")]
    SingleClass,
    #[error("training produced non-finite weights")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Weights start uniform in `(-init_range, init_range)`; biases start at zero.
    pub init_range: f64,
    /// L2 penalty on weights (not biases), applied at each step.
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { hidden: 16, learning_rate: 0.05, epochs: 2000, init_range: 0.1, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Absent until the model has been trained.
    pub final_loss: Option<f64>,
}

/// Per-feature affine standardization stored alongside a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean/std per column; a zero spread is replaced by 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 && s.is_finite() { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// `[inputs, hidden, 1]`.
    pub layer_sizes: Vec<usize>,
    pub activation: String,
    /// Hidden-layer weights, row-major `[hidden x inputs]`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    /// Input schema; empty when the caller feeds positional vectors.
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    pub training: TrainingMeta,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Gradient of the loss with the same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpModel {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            layer_sizes: vec![inputs, hidden, 1],
            activation: "logistic".into(),
            w1: vec![0.0; inputs * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            feature_names: Vec::new(),
            standardizer: None,
            training: TrainingMeta { seed: 0, epochs: 0, learning_rate: 0.0, final_loss: None },
        }
    }

    pub fn random(inputs: usize, hidden: usize, init_range: f64, seed: u64) -> Self {
        let mut m = Self::zeros(inputs, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in m.w1.iter_mut().chain(m.w2.iter_mut()) {
            *w = rng.gen_range(-init_range..init_range);
        }
        m.training.seed = seed;
        m
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn hidden(&self) -> usize {
        self.layer_sizes[1]
    }

    /// Output logit for an input that is already standardized.
    fn logit(&self, x: &[f64], hidden: &mut [f64]) -> f64 {
        let d = self.inputs();
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &self.w1[j * d..(j + 1) * d];
            let z: f64 = row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b1[j];
            *h = sigmoid(z);
        }
        hidden.iter().zip(&self.w2).map(|(h, w)| h * w).sum::<f64>() + self.b2
    }

    /// Forward pass on an input in model space (after standardization).
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden()];
        sigmoid(self.logit(x, &mut h))
    }

    /// Score a raw feature vector, standardizing first when the model carries
    /// a standardizer.
    pub fn predict(&self, features: &[f64]) -> Result<f64, MlpError> {
        if features.len() != self.inputs() {
            return Err(MlpError::LengthMismatch { expected: self.inputs(), got: features.len() });
        }
        Ok(match &self.standardizer {
            Some(s) => self.forward(&s.apply(features)),
            None => self.forward(features),
        })
    }

    /// Weighted mean cross-entropy and its gradient over a batch.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64], ws: &[f64]) -> (f64, Gradient) {
        let (d, hn) = (self.inputs(), self.hidden());
        let mut g = Gradient { w1: vec![0.0; d * hn], b1: vec![0.0; hn], w2: vec![0.0; hn], b2: 0.0 };
        let total_w: f64 = ws.iter().sum();
        let mut loss = 0.0;
        let mut h = vec![0.0; hn];
        for ((x, &y), &w) in xs.iter().zip(ys).zip(ws) {
            let z = self.logit(x, &mut h);
            loss += w * (softplus(z) - y * z);
            let dz = w * (sigmoid(z) - y) / total_w;
            g.b2 += dz;
            for j in 0..hn {
                g.w2[j] += dz * h[j];
                let dh = dz * self.w2[j] * h[j] * (1.0 - h[j]);
                if dh == 0.0 {
                    continue;
                }
                g.b1[j] += dh;
                for (gw, xi) in g.w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += dh * xi;
                }
            }
        }
        (loss / total_w, g)
    }

    fn step(&mut self, g: &Gradient, lr: f64, decay: f64) {
        for (w, d) in self.w1.iter_mut().zip(&g.w1) {
            *w -= lr * (d + decay * *w);
        }
        for (w, d) in self.b1.iter_mut().zip(&g.b1) {
            *w -= lr * d;
        }
        for (w, d) in self.w2.iter_mut().zip(&g.w2) {
            *w -= lr * (d + decay * *w);
        }
        self.b2 -= lr * g.b2;
    }

    /// All parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        assert_eq!(p.len(), a + b + c + 1, "parameter count");
        self.w1.copy_from_slice(&p[..a]);
        self.b1.copy_from_slice(&p[a..a + b]);
        self.w2.copy_from_slice(&p[a + b..a + b + c]);
        self.b2 = p[a + b + c];
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }
}

impl Gradient {
    pub fn flat(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }
}

/// Train on model-space inputs (callers standardize beforehand if wanted).
pub fn train(
    xs: &[Vec<f64>],
    ys: &[f64],
    weights: Option<&[f64]>,
    params: &TrainParams,
    seed: u64,
) -> Result<MlpModel, MlpError> {
    if xs.is_empty() {
        return Err(MlpError::EmptyTrainingSet);
    }
    let d = xs[0].len();
    if let Some(bad) = xs.iter().find(|x| x.len() != d) {
        return Err(MlpError::LengthMismatch { expected: d, got: bad.len() });
    }
    let pos = ys.iter().filter(|&&y| y >= 0.5).count();
    if pos == 0 || pos == ys.len() {
        return Err(MlpError::SingleClass);
    }
    let ones;
    let ws = match weights {
        Some(w) => w,
        None => {
            ones = vec![1.0; xs.len()];
            &ones
        }
    };
    let mut model = MlpModel::random(d, params.hidden, params.init_range, seed);
    let mut loss = f64::NAN;
    for _ in 0..params.epochs {
        let (l, g) = model.loss_and_gradient(xs, ys, ws);
        loss = l;
        model.step(&g, params.learning_rate, params.weight_decay);
    }
    let (final_loss, _) = model.loss_and_gradient(xs, ys, ws);
    if !model.is_finite() || !final_loss.is_finite() {
        return Err(MlpError::NonFinite);
    }
    log::debug!("mlp trained: {} epochs, loss {loss:.5} -> {final_loss:.5}", params.epochs);
    model.training = TrainingMeta {
        seed,
        epochs: params.epochs,
        learning_rate: params.learning_rate,
        final_loss: Some(final_loss),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_scores_half() {
        let m = MlpModel::zeros(3, 4);
        assert_eq!(m.predict(&[1.0, -2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch() {
        let m = MlpModel::zeros(3, 4);
        assert_eq!(m.predict(&[1.0]), Err(MlpError::LengthMismatch { expected: 3, got: 1 }));
    }

    #[test]
    fn single_hidden_unit_is_monotone_on_positive_path() {
        let mut m = MlpModel::zeros(2, 1);
        m.w1 = vec![1.5, 0.0];
        m.w2 = vec![2.0];
        let mut prev = 0.0;
        for i in -20..=20 {
            let s = m.predict(&[i as f64 * 0.5, 0.3]).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn linearly_separable_toy_set() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..20 {
            let a = i as f64 / 10.0;
            xs.push(vec![a + 0.5, a * 0.3]);
            ys.push(1.0);
            xs.push(vec![-a - 0.5, a * 0.3 - 1.0]);
            ys.push(0.0);
        }
        let m = train(&xs, &ys, None, &TrainParams::default(), 42).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| (m.forward(x) >= 0.5) == (y == 1.0))
            .count();
        assert_eq!(correct, xs.len());
        assert!(m.training.final_loss.unwrap() < 0.69);
    }

    #[test]
    fn single_class_and_empty_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        assert_eq!(train(&xs, &[1.0, 1.0], None, &TrainParams::default(), 1), Err(MlpError::SingleClass));
        assert_eq!(train(&[], &[], None, &TrainParams::default(), 1), Err(MlpError::EmptyTrainingSet));
    }

    #[test]
    fn json_round_trip_is_bit_stable() {
        let m = MlpModel::random(5, 3, 0.1, 9);
        let back: MlpModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        let x = [0.1, -0.7, 3.3, 1e-3, 42.0];
        assert_eq!(m.predict(&x).unwrap().to_bits(), back.predict(&x).unwrap().to_bits());
    }

    #[test]
    fn standardizer_guards_zero_spread() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.apply(&[1.0, 3.0]), vec![0.0, 0.0]);
    }
}
