//! Feed-forward softmax classifier trained with Adam on mean cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_data, FitStatus, Pmf, TrainOptions};
use crate::domain::N_CATEGORIES;
use crate::rng::StreamRng;
use crate::{stream, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpArchitecture {
    fn default() -> Self {
        Self {
            hidden: vec![32, 16],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out x n_in`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.n_in).zip(&self.biases)) {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
    pub seed: u64,
    pub status: FitStatus,
}

/// Per-layer activation buffers reused across samples.
struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Glorot-uniform hidden layers; the output layer starts at zero so the
    /// untrained network predicts the uniform distribution.
    pub fn init(input_dim: usize, n_classes: usize, arch: &MlpArchitecture, rng: &mut StreamRng) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 || arch.hidden.contains(&0) {
            return Err(Error::invalid("MLP layer sizes must be positive with at least two classes"));
        }
        let mut sizes = vec![input_dim];
        sizes.extend(&arch.hidden);
        sizes.push(n_classes);
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let weights = if i + 1 == n_layers {
                    vec![0.0; n_in * n_out]
                } else {
                    let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                    (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect()
                };
                DenseLayer { n_in, n_out, weights, biases: vec![0.0; n_out] }
            })
            .collect();
        Ok(Self {
            input_dim,
            layers,
            activation: arch.activation,
            seed: 0,
            status: FitStatus { converged: false, iterations: 0, objective: 0.0, n_samples: 0 },
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::n_params).sum()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Flat parameters: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            p.extend(&l.weights);
            p.extend(&l.biases);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.n_params(), "parameter vector length");
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
    }

    fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.input_dim]];
        acts.extend(self.layers.iter().map(|l| vec![0.0; l.n_out]));
        let deltas = self.layers.iter().map(|l| vec![0.0; l.n_out]).collect();
        Workspace { acts, deltas }
    }

    /// Fills `ws.acts`; the last entry holds the output logits.
    fn forward(&self, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            let out = &mut tail[0];
            layer.forward(&head[i], out);
            if i < last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
    }

    /// Cross-entropy of one sample; accumulates its gradient into `grad`.
    fn backprop(&self, x: &[f64], label: usize, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        self.forward(x, ws);
        let n_layers = self.layers.len();
        let logits = &ws.acts[n_layers];
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let out = &mut ws.deltas[n_layers - 1];
        let mut sum_exp = 0.0;
        for (d, z) in out.iter_mut().zip(logits) {
            *d = (z - max).exp();
            sum_exp += *d;
        }
        let loss = max + sum_exp.ln() - logits[label];
        out.iter_mut().for_each(|d| *d /= sum_exp);
        out[label] -= 1.0;

        let mut base = grad.len();
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            let input = &ws.acts[i];
            base -= layer.n_params();
            let (gw, gb) = grad[base..base + layer.n_params()].split_at_mut(layer.weights.len());
            let delta = &ws.deltas[i];
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
                gw[o * layer.n_in..(o + 1) * layer.n_in]
                    .iter_mut()
                    .zip(input)
                    .for_each(|(g, a)| *g += d * a);
            }
            if i > 0 {
                let (lower, upper) = ws.deltas.split_at_mut(i);
                let prev = &mut lower[i - 1];
                let delta = &upper[0];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.n_in..(o + 1) * layer.n_in];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
                }
                for (p, a) in prev.iter_mut().zip(&ws.acts[i]) {
                    *p *= self.activation.derivative(*a);
                }
            }
        }
        loss
    }

    /// Mean cross-entropy over `rows` and its gradient (overwrites `grad`).
    pub fn loss_and_gradient(&self, x: &[Vec<f64>], labels: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ws = self.workspace();
        let mut loss = 0.0;
        for (row, &y) in x.iter().zip(labels) {
            loss += self.backprop(row, y, &mut ws, grad);
        }
        let n = labels.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        loss / n
    }

    /// Mean cross-entropy over the given rows.
    pub fn mean_loss(&self, x: &[Vec<f64>], labels: &[usize]) -> f64 {
        let mut ws = self.workspace();
        let mut loss = 0.0;
        for (row, &y) in x.iter().zip(labels) {
            self.forward(row, &mut ws);
            let logits = &ws.acts[self.layers.len()];
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - logits[y];
        }
        loss / labels.len() as f64
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!("MLP expects {} features, got {}", self.input_dim, x.len())));
        }
        let mut ws = self.workspace();
        self.forward(x, &mut ws);
        Ok(ws.acts.pop().expect("output layer"))
    }
}

/// Softmax of the network output, shifted by the maximum logit.
pub fn mlp_predict(model: &MlpModel, x: &[f64]) -> Result<Pmf> {
    let logits = model.logits(x)?;
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    Pmf::from_weights(weights)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on mean cross-entropy with early stopping on a held-out
/// fraction. Every random draw comes from a stream seeded by `opts.seed`.
pub fn mlp_fit(x: &[Vec<f64>], labels: &[usize], arch: &MlpArchitecture, opts: &TrainOptions) -> Result<MlpModel> {
    opts.validate()?;
    let dim = check_training_data(x, labels, N_CATEGORIES)?;
    let mut rng = stream!(opts.seed, "mlp");
    let mut model = MlpModel::init(dim, N_CATEGORIES, arch, &mut rng)?;
    model.seed = opts.seed;

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((labels.len() as f64) * opts.validation_fraction).round() as usize;
    let n_val = n_val.min(labels.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_x: Vec<Vec<f64>> = val_idx.iter().map(|&i| x[i].clone()).collect();
    let val_y: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();

    let batch = if opts.batch_size == 0 { train_idx.len() } else { opts.batch_size };
    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    let mut adam = Adam::new(params.len());
    let mut ws = model.workspace();

    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut prev_loss = f64::INFINITY;
    let mut converged = false;
    let mut epochs = 0;

    while epochs < opts.max_iter {
        let lr = opts.learning_rate / (1.0 + opts.lr_decay * epochs as f64);
        epochs += 1;
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                epoch_loss += model.backprop(&x[i], labels[i], &mut ws, &mut grad);
            }
            let scale = 1.0 / chunk.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut params, &grad, lr);
            model.set_params(&params);
        }
        epoch_loss /= train_idx.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numeric(format!("MLP training loss became {epoch_loss} at epoch {epochs}")));
        }

        if val_y.is_empty() {
            if (prev_loss - epoch_loss).abs() <= opts.tolerance * epoch_loss.abs().max(1.0) {
                converged = true;
                break;
            }
            prev_loss = epoch_loss;
            continue;
        }
        let val_loss = model.mean_loss(&val_x, &val_y);
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("MLP validation loss became {val_loss} at epoch {epochs}")));
        }
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience.max(1) {
                converged = true;
                break;
            }
        }
    }
    if !val_y.is_empty() {
        model.set_params(&best.1);
    }

    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
    let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    model.status = FitStatus {
        converged,
        iterations: epochs,
        objective: model.mean_loss(&train_x, &train_y),
        n_samples: labels.len(),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(seed: u64, sizes: &[usize]) -> MlpModel {
        let arch = MlpArchitecture { hidden: sizes.to_vec(), activation: Activation::Tanh };
        let mut rng = stream!(seed, "test-mlp");
        let mut m = MlpModel::init(3, 5, &arch, &mut rng).unwrap();
        let p: Vec<f64> = (0..m.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p);
        m
    }

    #[test]
    fn untrained_network_is_uniform() {
        let mut rng = stream!(1, "init");
        let m = MlpModel::init(8, N_CATEGORIES, &MlpArchitecture::default(), &mut rng).unwrap();
        let p = mlp_predict(&m, &[0.3; 8]).unwrap();
        for &v in p.probs() {
            assert!((v - 1.0 / 84.0).abs() < 1e-15);
        }
    }

    #[test]
    fn extreme_logit_is_stable() {
        let mut rng = stream!(1, "init");
        let mut m = MlpModel::init(2, N_CATEGORIES, &MlpArchitecture::default(), &mut rng).unwrap();
        m.layers.last_mut().unwrap().biases[17] = 1000.0;
        let p = mlp_predict(&m, &[0.1, 0.2]).unwrap();
        assert!(p.prob(17) >= 1.0 - 1e-12);
        assert!(p.probs().iter().all(|v| v.is_finite()));
        let q = mlp_predict(&m, &[0.1, 0.2]).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn params_roundtrip() {
        let m = small_model(3, &[4]);
        let mut n = m.clone();
        n.set_params(&m.params());
        assert_eq!(m, n);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let arch = MlpArchitecture { hidden: vec![6], activation: Activation::Relu };
        let mut rng = stream!(9, "relu");
        let mut m = MlpModel::init(3, 4, &arch, &mut rng).unwrap();
        let p: Vec<f64> = (0..m.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_params(&p);
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![0.1 * i as f64, -0.3, 0.7 - 0.05 * i as f64]).collect();
        let y = vec![0, 1, 2, 3, 1, 0];
        let mut g = vec![0.0; m.n_params()];
        m.loss_and_gradient(&x, &y, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = m.clone();
            let mut pp = p.clone();
            pp[i] += h;
            plus.set_params(&pp);
            let mut minus = m.clone();
            pp[i] -= 2.0 * h;
            minus.set_params(&pp);
            let fd = (plus.mean_loss(&x, &y) - minus.mean_loss(&x, &y)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let x: Vec<Vec<f64>> = (0..60).map(|i| vec![(i as f64 * 0.13).sin(), (i as f64 * 0.29).cos()]).collect();
        let y: Vec<usize> = (0..60).map(|i| 30 + i % 4).collect();
        let opts = TrainOptions { max_iter: 20, seed: 11, ..TrainOptions::mlp() };
        let arch = MlpArchitecture { hidden: vec![8], activation: Activation::Tanh };
        let a = mlp_fit(&x, &y, &arch, &opts).unwrap();
        let b = mlp_fit(&x, &y, &arch, &opts).unwrap();
        assert_eq!(a, b);
        let c = mlp_fit(&x, &y, &arch, &TrainOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dimension_mismatch() {
        let m = small_model(1, &[2]);
        assert!(mlp_predict(&m, &[1.0]).is_err());
    }
}
