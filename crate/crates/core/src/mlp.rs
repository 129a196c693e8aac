//! Fully connected ReLU network trained with minibatch RMSprop on MSE,
//! with early stopping on a validation set.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{stream_rng, Dataset, SplitIndices, Standardizer};
use crate::error::{Error, Result};

const RMS_DECAY: f64 = 0.9;
const RMS_EPS: f64 = 1e-8;
const NETWORK_FORMAT_VERSION: u32 = 1;
const MLP_STREAM: u64 = 0x6d6c_7000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], lr: 0.001, max_epochs: 1000, patience: 10, batch: 32, seed: 0 }
    }
}

/// `weights[l]` maps layer `l` to layer `l+1` and has shape `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format_version: u32,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpNetwork {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::invalid(format!("bad layer sizes {layer_sizes:?}")));
        }
        let weights = layer_sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = layer_sizes[1..].iter().map(|&s| DVector::zeros(s)).collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for w in &mut net.weights {
            let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer: weights (column-major) then biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.len();
            w.as_mut_slice().copy_from_slice(&v[at..at + nw]);
            at += nw;
            let nb = b.len();
            b.as_mut_slice().copy_from_slice(&v[at..at + nb]);
            at += nb;
        }
    }

    /// Output for a batch stored one sample per column (`d × B`).
    fn forward_cols(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(x.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error over the rows of `x` and its gradient in
    /// [`to_flat`](Self::to_flat) order.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_rows(x, y)?;
        let xt = x.transpose();
        Ok(self.loss_grad_cols(&xt, y))
    }

    fn loss_grad_cols(&self, xt: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
        let nb = xt.ncols() as f64;
        let acts = self.forward_cols(xt);
        let out = acts.last().unwrap();
        let mut delta = DMatrix::from_fn(1, xt.ncols(), |_, j| out[(0, j)] - y[j]);
        let loss = delta.norm_squared() / nb;
        delta *= 2.0 / nb;
        let nl = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); nl];
        let mut gb = vec![DVector::zeros(0); nl];
        for l in (0..nl).rev() {
            gw[l] = &delta * acts[l].transpose();
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                back.zip_apply(&acts[l], |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
        }
        let mut flat = Vec::with_capacity(self.num_params());
        for (w, b) in gw.iter().zip(&gb) {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        (loss, flat)
    }

    fn check_rows(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.ncols() });
        }
        if y.len() != x.nrows() {
            return Err(Error::LengthMismatch { expected: x.nrows(), found: y.len() });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            weights: self.weights.iter().map(|w| w.transpose().iter().copied().collect()).collect(),
            biases: self.biases.iter().map(|b| b.iter().copied().collect()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| Error::Corrupted(e.to_string()))?;
        if file.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Version { found: file.format_version, supported: NETWORK_FORMAT_VERSION });
        }
        let mut net = Self::zeros(&file.layer_sizes).map_err(|e| Error::Corrupted(e.to_string()))?;
        if file.weights.len() != net.weights.len() || file.biases.len() != net.biases.len() {
            return Err(Error::Corrupted("layer count does not match layer_sizes".into()));
        }
        for (l, (w, b)) in file.weights.iter().zip(&file.biases).enumerate() {
            let (r, c) = net.weights[l].shape();
            if w.len() != r * c || b.len() != r || w.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(Error::Corrupted(format!("layer {l} has inconsistent or non-finite parameters")));
            }
            net.weights[l] = DMatrix::from_row_slice(r, c, w);
            net.biases[l] = DVector::from_column_slice(b);
        }
        Ok(net)
    }
}

pub fn forward(net: &MlpNetwork, x: &[f64]) -> Result<f64> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: x.len() });
    }
    let acts = net.forward_cols(&DMatrix::from_column_slice(x.len(), 1, x));
    Ok(acts.last().unwrap()[(0, 0)])
}

pub fn predict_all(net: &MlpNetwork, features: &DMatrix<f64>) -> Result<Vec<f64>> {
    if features.ncols() != net.input_dim() {
        return Err(Error::DimensionMismatch { expected: net.input_dim(), found: features.ncols() });
    }
    (0..features.nrows())
        .map(|i| forward(net, features.row(i).transpose().as_slice()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub val_losses: Vec<f64>,
}

/// Trains on already-scaled data. Returns the best-validation parameters.
pub fn fit_network(
    x_train: &DMatrix<f64>,
    y_train: &[f64],
    x_val: &DMatrix<f64>,
    y_val: &[f64],
    cfg: &MlpConfig,
) -> Result<(MlpNetwork, TrainingLog)> {
    if x_train.nrows() < 2 || x_val.nrows() < 1 {
        return Err(Error::invalid("MLP training needs >= 2 train rows and >= 1 validation row"));
    }
    if cfg.batch == 0 || cfg.max_epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch, max_epochs and lr must be positive"));
    }
    let mut sizes = vec![x_train.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut rng = stream_rng(cfg.seed, MLP_STREAM);
    let mut net = MlpNetwork::glorot(&sizes, &mut rng)?;
    net.check_rows(x_train, y_train)?;
    net.check_rows(x_val, y_val)?;

    let xt = x_train.transpose();
    let xv = x_val.transpose();
    let n = x_train.nrows();
    let mut theta = net.to_flat();
    let mut sq = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut log = TrainingLog { epochs_run: 0, best_epoch: 0, best_val_loss: f64::INFINITY, val_losses: Vec::new() };
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let xb = xt.select_columns(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_train[i]).collect();
            let (loss, g) = net.loss_grad_cols(&xb, &yb);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            for ((t, s), gi) in theta.iter_mut().zip(sq.iter_mut()).zip(&g) {
                *s = RMS_DECAY * *s + (1.0 - RMS_DECAY) * gi * gi;
                *t -= cfg.lr * gi / (s.sqrt() + RMS_EPS);
            }
            net.set_flat(&theta);
        }
        let (val, _) = net.loss_grad_cols(&xv, y_val);
        if !val.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        log.epochs_run = epoch;
        log.val_losses.push(val);
        if val < best_loss {
            best_loss = val;
            best = net.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    log.best_val_loss = best_loss;
    Ok((best, log))
}

/// Network plus the feature and target scaling it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedMlp {
    pub network: MlpNetwork,
    pub features: Standardizer,
    pub target_mean: f64,
    pub target_std: f64,
    pub log: TrainingLog,
}

impl TrainedMlp {
    pub fn predict(&self, features: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.features.transform(features)?;
        Ok(predict_all(&self.network, &z)?
            .into_iter()
            .map(|v| v * self.target_std + self.target_mean)
            .collect())
    }
}

/// Standardizes features and targets with train-row statistics, then trains
/// on the train rows with early stopping on the validation rows.
pub fn train_mlp(ds: &Dataset, split: &SplitIndices, cfg: &MlpConfig) -> Result<TrainedMlp> {
    if split.train.len() < 2 || split.validation.is_empty() {
        return Err(Error::invalid("MLP training needs >= 2 train rows and >= 1 validation row"));
    }
    let features = Standardizer::fit_rows(&ds.features, &split.train)?;
    let ytr: Vec<f64> = split.train.iter().map(|&i| ds.targets[i]).collect();
    let ys = Standardizer::fit_vector(&ytr)?;
    let scale = |idx: &[usize]| idx.iter().map(|&i| ys.transform_scalar(ds.targets[i])).collect::<Vec<_>>();
    let xtr = features.transform(&ds.feature_rows(&split.train))?;
    let xval = features.transform(&ds.feature_rows(&split.validation))?;
    let (network, log) = fit_network(&xtr, &scale(&split.train), &xval, &scale(&split.validation), cfg)?;
    Ok(TrainedMlp { network, features, target_mean: ys.means[0], target_std: ys.stddevs[0], log })
}
