use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, Activation};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scm::{ScmKind, N_OBSERVED};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Loss {
    Mse,
    /// Huber form: `0.5 e^2 / beta` for `|e| < beta`, else `|e| - 0.5 beta`.
    SmoothL1 { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LrSchedule {
    None,
    /// Multiply the learning rate by `factor` once validation loss has not
    /// improved by more than 1e-6 for more than `patience` epochs.
    PlateauHalving { patience: usize, factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    Sigmoid,
    ClampUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: Loss,
    pub weight_decay: f64,
    /// One rate per hidden layer, or empty for no dropout.
    pub dropout_rates: Vec<f64>,
    pub use_batchnorm: bool,
    pub lr_schedule: LrSchedule,
    pub output: OutputMode,
    pub seed: u64,
}

impl MlpConfig {
    pub const DEFAULT_LAYERS: [usize; 5] = [N_OBSERVED, 64, 32, 16, 1];

    /// Plain network: sigmoid output, MSE, Adam at 1e-3, 2000 epochs of
    /// batch 64.
    pub fn simple(activation: Activation) -> Self {
        Self {
            layer_sizes: Self::DEFAULT_LAYERS.to_vec(),
            activation,
            learning_rate: 1e-3,
            epochs: 2000,
            batch_size: 64,
            loss: Loss::Mse,
            weight_decay: 0.0,
            dropout_rates: Vec::new(),
            use_batchnorm: false,
            lr_schedule: LrSchedule::None,
            output: OutputMode::Sigmoid,
            seed: 0,
        }
    }

    /// Regularized network used for the mediator model: batch-norm and
    /// dropout after every hidden activation, Smooth-L1 loss, weight decay,
    /// plateau learning-rate halving and a clamped output.
    pub fn enriched(activation: Activation) -> Self {
        Self {
            epochs: 1000,
            loss: Loss::SmoothL1 { beta: 0.3 },
            weight_decay: 1e-3,
            dropout_rates: vec![0.20, 0.20, 0.15],
            use_batchnorm: true,
            lr_schedule: LrSchedule::PlateauHalving {
                patience: 5,
                factor: 0.5,
            },
            output: OutputMode::ClampUnit,
            ..Self::simple(activation)
        }
    }

    pub fn for_scm(kind: ScmKind, activation: Activation) -> Self {
        match kind {
            ScmKind::Mediator => Self::enriched(activation),
            _ => Self::simple(activation),
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes[0] != N_OBSERVED || sizes[sizes.len() - 1] != 1 {
            return Err(Error::malformed(format!(
                "layer sizes {sizes:?} must start at {N_OBSERVED} and end at 1"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::malformed("layer sizes must be positive"));
        }
        if !self.dropout_rates.is_empty() && self.dropout_rates.len() != self.hidden_layers() {
            return Err(Error::malformed(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_layers()
            )));
        }
        if self.dropout_rates.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::malformed("dropout rates must lie in [0, 1)"));
        }
        if let Activation::LeakyRelu { alpha } = self.activation {
            if !(alpha > 0.0) {
                return Err(Error::malformed("leaky-relu slope must be positive"));
            }
        }
        if let LrSchedule::PlateauHalving { patience, factor } = self.lr_schedule {
            if patience == 0 || !(factor > 0.0 && factor < 1.0) {
                return Err(Error::malformed("plateau schedule needs patience >= 1 and factor in (0, 1)"));
            }
        }
        if let Loss::SmoothL1 { beta } = self.loss {
            if !(beta > 0.0) {
                return Err(Error::malformed("smooth-l1 beta must be positive"));
            }
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || !(self.weight_decay >= 0.0) {
            return Err(Error::malformed("learning rate, batch size and weight decay must be valid"));
        }
        Ok(())
    }
}

/// Offsets of one dense layer (and its batch-norm, if any) in the flat
/// parameter vector. Weights are `[n_out][n_in]` row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
    pub gamma: Option<usize>,
    pub beta: Option<usize>,
}

fn layout(sizes: &[usize], batchnorm: bool) -> (Vec<LayerLayout>, usize) {
    let mut off = 0;
    let n_dense = sizes.len() - 1;
    let layers = (0..n_dense)
        .map(|l| {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let w = off;
            off += n_in * n_out;
            let b = off;
            off += n_out;
            let (gamma, beta) = if batchnorm && l + 1 < n_dense {
                let g = off;
                off += 2 * n_out;
                (Some(g), Some(g + n_out))
            } else {
                (None, None)
            };
            LayerLayout {
                n_in,
                n_out,
                w,
                b,
                gamma,
                beta,
            }
        })
        .collect();
    (layers, off)
}

/// Feedforward regressor from the 15 observed covariates to a probability.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output: OutputMode,
    pub batchnorm: bool,
    pub dropout: Vec<f64>,
    pub(crate) params: Vec<T>,
    pub(crate) layers: Vec<LayerLayout>,
    pub(crate) running_mean: Vec<Vec<T>>,
    pub(crate) running_var: Vec<Vec<T>>,
}

#[inline]
pub(crate) fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Dot product with four interleaved accumulators (fixed summation order).
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for j in 0..4 {
            acc[j] = acc[j] + a[4 * c + j] * b[4 * c + j];
        }
    }
    let mut tail = T::zero();
    for i in 4 * chunks..a.len() {
        tail = tail + a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// Per-batch intermediate values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct Cache<T> {
    pub batch: usize,
    /// Input of each dense layer, `batch x n_in`.
    pub inputs: Vec<Vec<T>>,
    /// Pre-activation of each dense layer, `batch x n_out`.
    pub pre: Vec<Vec<T>>,
    /// Normalized activations per hidden layer (batch-norm only).
    pub xhat: Vec<Vec<T>>,
    /// `1 / sqrt(var + eps)` per hidden unit (batch-norm only).
    pub inv_std: Vec<Vec<T>>,
    /// Batch mean and biased variance per hidden unit (train mode).
    pub batch_mean: Vec<Vec<T>>,
    pub batch_var: Vec<Vec<T>>,
    /// Dropout multipliers (`0` or `1 / (1 - p)`), empty when inactive.
    pub masks: Vec<Vec<T>>,
    pub output: Vec<T>,
    pub mode: Option<Mode>,
}

impl<T: Scalar> MlpModel<T> {
    /// Fresh model with fan-in scaled uniform initialization: weights and
    /// biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, batch-norm
    /// scale 1 and shift 0.
    pub fn init(cfg: &MlpConfig, rng: &mut impl RngCore) -> Result<Self> {
        cfg.validate()?;
        let (layers, n_params) = layout(&cfg.layer_sizes, cfg.use_batchnorm);
        let mut params = vec![T::zero(); n_params];
        for l in &layers {
            let bound = 1.0 / (l.n_in as f64).sqrt();
            for p in &mut params[l.w..l.b + l.n_out] {
                *p = T::lit((2.0 * unit_f64(rng) - 1.0) * bound);
            }
            if let Some(g) = l.gamma {
                for p in &mut params[g..g + l.n_out] {
                    *p = T::one();
                }
            }
        }
        let hidden: Vec<usize> = layers[..layers.len() - 1].iter().map(|l| l.n_out).collect();
        let (running_mean, running_var) = if cfg.use_batchnorm {
            (
                hidden.iter().map(|&n| vec![T::zero(); n]).collect(),
                hidden.iter().map(|&n| vec![T::one(); n]).collect(),
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Self {
            layer_sizes: cfg.layer_sizes.clone(),
            activation: cfg.activation,
            output: cfg.output,
            batchnorm: cfg.use_batchnorm,
            dropout: cfg.dropout_rates.clone(),
            params,
            layers,
            running_mean,
            running_var,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if batch == 0 || x.len() != batch * self.n_inputs() {
            return Err(Error::malformed(format!(
                "input of length {} is not {batch} rows of {} features",
                x.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Forward pass over a row-major `batch x 15` input, filling `cache`.
    /// Train mode normalizes with batch statistics and applies dropout
    /// drawn from `rng`; it does not touch the running statistics.
    pub(crate) fn forward_cached(
        &self,
        x: &[T],
        batch: usize,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
        cache: &mut Cache<T>,
    ) {
        let n_dense = self.layers.len();
        let n_hidden = n_dense - 1;
        cache.batch = batch;
        cache.mode = Some(mode);
        cache.inputs.resize(n_dense, Vec::new());
        cache.pre.resize(n_dense, Vec::new());
        let bn_layers = if self.batchnorm { n_hidden } else { 0 };
        for v in [
            &mut cache.xhat,
            &mut cache.inv_std,
            &mut cache.batch_mean,
            &mut cache.batch_var,
        ] {
            v.resize(bn_layers, Vec::new());
        }
        let dropout_on = mode == Mode::Train && self.dropout.iter().any(|&p| p > 0.0);
        cache.masks.resize(if dropout_on { n_hidden } else { 0 }, Vec::new());
        let mut rng = rng;

        cache.inputs[0].clear();
        cache.inputs[0].extend_from_slice(x);
        for (l, lay) in self.layers.iter().enumerate() {
            let w = &self.params[lay.w..lay.b];
            let bias = &self.params[lay.b..lay.b + lay.n_out];
            let (inputs, rest) = cache.inputs.split_at_mut(l + 1);
            let input = &inputs[l];
            let pre = &mut cache.pre[l];
            pre.clear();
            pre.reserve(batch * lay.n_out);
            for b in 0..batch {
                let row = &input[b * lay.n_in..(b + 1) * lay.n_in];
                for o in 0..lay.n_out {
                    pre.push(bias[o] + dot(row, &w[o * lay.n_in..(o + 1) * lay.n_in]));
                }
            }
            if l == n_hidden {
                cache.output.clear();
                cache.output.extend(pre.iter().map(|&z| match self.output {
                    OutputMode::Sigmoid => sigmoid(z),
                    OutputMode::ClampUnit => z.max(T::zero()).min(T::one()),
                }));
                break;
            }
            let next = &mut rest[0];
            next.clear();
            next.extend(pre.iter().map(|&z| self.activation.apply(z)));
            if self.batchnorm {
                self.batchnorm_forward(l, lay, next, batch, mode, cache_bn(&mut cache.xhat, &mut cache.inv_std, &mut cache.batch_mean, &mut cache.batch_var, l));
            }
            if dropout_on {
                let p = self.dropout[l];
                let mask = &mut cache.masks[l];
                mask.clear();
                let keep_scale = T::lit(1.0 / (1.0 - p));
                let r = rng.as_deref_mut().expect("train-mode dropout needs an rng");
                for v in next.iter_mut() {
                    let m = if unit_f64(r) < p { T::zero() } else { keep_scale };
                    mask.push(m);
                    *v = *v * m;
                }
            }
        }
    }

    fn batchnorm_forward(
        &self,
        l: usize,
        lay: &LayerLayout,
        h: &mut [T],
        batch: usize,
        mode: Mode,
        bn: BnCache<'_, T>,
    ) {
        let n = lay.n_out;
        let gamma = &self.params[lay.gamma.unwrap()..lay.gamma.unwrap() + n];
        let beta = &self.params[lay.beta.unwrap()..lay.beta.unwrap() + n];
        let eps = T::lit(BN_EPS);
        let (mean, var) = match mode {
            Mode::Train => {
                let bf = T::lit(batch as f64);
                let mut mean = vec![T::zero(); n];
                for b in 0..batch {
                    axpy(T::one(), &h[b * n..(b + 1) * n], &mut mean);
                }
                mean.iter_mut().for_each(|m| *m = *m / bf);
                let mut var = vec![T::zero(); n];
                for b in 0..batch {
                    for j in 0..n {
                        let d = h[b * n + j] - mean[j];
                        var[j] = var[j] + d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / bf);
                (mean, var)
            }
            Mode::Eval => (self.running_mean[l].clone(), self.running_var[l].clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        bn.xhat.clear();
        for b in 0..batch {
            for j in 0..n {
                let xh = (h[b * n + j] - mean[j]) * inv_std[j];
                bn.xhat.push(xh);
                h[b * n + j] = gamma[j] * xh + beta[j];
            }
        }
        *bn.inv_std = inv_std;
        *bn.mean = mean;
        *bn.var = var;
    }

    /// Folds the batch statistics of a train-mode pass into the running
    /// estimates (momentum 0.1, unbiased variance).
    pub(crate) fn update_running_stats(&mut self, cache: &Cache<T>) {
        if !self.batchnorm || cache.mode != Some(Mode::Train) || cache.batch < 2 {
            return;
        }
        let mom = T::lit(BN_MOMENTUM);
        let keep = T::one() - mom;
        let unbias = T::lit(cache.batch as f64 / (cache.batch - 1) as f64);
        for l in 0..self.running_mean.len() {
            for j in 0..self.running_mean[l].len() {
                let rm = &mut self.running_mean[l][j];
                *rm = keep * *rm + mom * cache.batch_mean[l][j];
                let rv = &mut self.running_var[l][j];
                *rv = keep * *rv + mom * cache.batch_var[l][j] * unbias;
            }
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub(crate) fn backward(&self, cache: &Cache<T>, d_out: &[T], grad: &mut [T]) {
        let batch = cache.batch;
        let n_hidden = self.layers.len() - 1;
        // d loss / d pre-activation of the current layer
        let mut dz: Vec<T> = d_out
            .iter()
            .zip(&cache.pre[n_hidden])
            .zip(&cache.output)
            .map(|((&g, &z), &y)| match self.output {
                OutputMode::Sigmoid => g * y * (T::one() - y),
                OutputMode::ClampUnit => {
                    if z >= T::zero() && z <= T::one() {
                        g
                    } else {
                        T::zero()
                    }
                }
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            let lay = self.layers[l];
            let input = &cache.inputs[l];
            {
                let (gw, gb) = grad[lay.w..lay.b + lay.n_out].split_at_mut(lay.b - lay.w);
                for b in 0..batch {
                    let row = &input[b * lay.n_in..(b + 1) * lay.n_in];
                    for o in 0..lay.n_out {
                        let d = dz[b * lay.n_out + o];
                        gb[o] = gb[o] + d;
                        axpy(d, row, &mut gw[o * lay.n_in..(o + 1) * lay.n_in]);
                    }
                }
            }
            if l == 0 {
                break;
            }
            // d loss / d input of layer l = d loss / d output of hidden layer l-1
            let w = &self.params[lay.w..lay.b];
            let mut da = vec![T::zero(); batch * lay.n_in];
            for b in 0..batch {
                let drow = &mut da[b * lay.n_in..(b + 1) * lay.n_in];
                for o in 0..lay.n_out {
                    axpy(dz[b * lay.n_out + o], &w[o * lay.n_in..(o + 1) * lay.n_in], drow);
                }
            }
            let h = l - 1;
            if let Some(mask) = cache.masks.get(h) {
                for (d, &m) in da.iter_mut().zip(mask) {
                    *d = *d * m;
                }
            }
            if self.batchnorm {
                da = self.batchnorm_backward(h, cache, &da, grad);
            }
            let pre = &cache.pre[h];
            for (d, &z) in da.iter_mut().zip(pre) {
                *d = *d * self.activation.derivative(z);
            }
            dz = da;
        }
    }

    fn batchnorm_backward(&self, h: usize, cache: &Cache<T>, dy: &[T], grad: &mut [T]) -> Vec<T> {
        let lay = self.layers[h];
        let n = lay.n_out;
        let batch = cache.batch;
        let g_off = lay.gamma.unwrap();
        let b_off = lay.beta.unwrap();
        let xhat = &cache.xhat[h];
        let inv_std = &cache.inv_std[h];
        let mut sum_dxhat = vec![T::zero(); n];
        let mut sum_dxhat_xhat = vec![T::zero(); n];
        let mut dxhat = vec![T::zero(); batch * n];
        for b in 0..batch {
            for j in 0..n {
                let i = b * n + j;
                grad[g_off + j] = grad[g_off + j] + dy[i] * xhat[i];
                grad[b_off + j] = grad[b_off + j] + dy[i];
                let d = dy[i] * self.params[g_off + j];
                dxhat[i] = d;
                sum_dxhat[j] = sum_dxhat[j] + d;
                sum_dxhat_xhat[j] = sum_dxhat_xhat[j] + d * xhat[i];
            }
        }
        match cache.mode {
            Some(Mode::Train) => {
                let bf = T::lit(batch as f64);
                for b in 0..batch {
                    for j in 0..n {
                        let i = b * n + j;
                        dxhat[i] = inv_std[j] / bf
                            * (bf * dxhat[i] - sum_dxhat[j] - xhat[i] * sum_dxhat_xhat[j]);
                    }
                }
            }
            _ => {
                for b in 0..batch {
                    for j in 0..n {
                        dxhat[b * n + j] = dxhat[b * n + j] * inv_std[j];
                    }
                }
            }
        }
        dxhat
    }

    /// Eval-mode predictions for a row-major `batch x 15` input.
    pub fn predict_batch(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(x, batch)?;
        let mut cache = Cache::default();
        self.forward_cached(x, batch, Mode::Eval, None, &mut cache);
        Ok(cache.output)
    }

    /// Prediction for one covariate vector `z1..z15`.
    pub fn forward(&self, features: &[u8]) -> Result<T> {
        let x: Vec<T> = features.iter().map(|&v| T::lit(v as f64)).collect();
        Ok(self.predict_batch(&x, 1)?[0])
    }

    /// Train-mode pass: dropout active, batch-norm on batch statistics, and
    /// running statistics updated afterwards.
    pub fn forward_train(&mut self, x: &[T], batch: usize, rng: &mut dyn RngCore) -> Result<Vec<T>> {
        self.check_input(x, batch)?;
        let mut cache = Cache::default();
        self.forward_cached(x, batch, Mode::Train, Some(rng), &mut cache);
        self.update_running_stats(&cache);
        Ok(cache.output)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
            && self.running_var.iter().flatten().all(|v| v.is_finite() && *v > T::zero())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            output: self.output,
            dropout: self.dropout.clone(),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(l, lay)| CheckpointLayer {
                    weights: f(&self.params[lay.w..lay.b]),
                    bias: f(&self.params[lay.b..lay.b + lay.n_out]),
                    batchnorm: lay.gamma.map(|g| CheckpointBatchNorm {
                        gamma: f(&self.params[g..g + lay.n_out]),
                        beta: f(&self.params[g + lay.n_out..g + 2 * lay.n_out]),
                        running_mean: f(&self.running_mean[l]),
                        running_var: f(&self.running_var[l]),
                    }),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::malformed(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let batchnorm = ck.layers.first().is_some_and(|l| l.batchnorm.is_some());
        let (layers, n_params) = layout(&ck.layer_sizes, batchnorm);
        if layers.len() != ck.layers.len() {
            return Err(Error::malformed("checkpoint layer count does not match layer sizes"));
        }
        let mut params = vec![T::zero(); n_params];
        let mut running_mean = Vec::new();
        let mut running_var = Vec::new();
        let copy = |dst: &mut [T], src: &[f64], what: &str| -> Result<()> {
            if dst.len() != src.len() {
                return Err(Error::malformed(format!(
                    "checkpoint {what} has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = T::lit(s);
            }
            Ok(())
        };
        for (lay, cl) in layers.iter().zip(&ck.layers) {
            copy(&mut params[lay.w..lay.b], &cl.weights, "weights")?;
            copy(&mut params[lay.b..lay.b + lay.n_out], &cl.bias, "bias")?;
            match (lay.gamma, &cl.batchnorm) {
                (Some(g), Some(bn)) => {
                    copy(&mut params[g..g + lay.n_out], &bn.gamma, "gamma")?;
                    copy(&mut params[g + lay.n_out..g + 2 * lay.n_out], &bn.beta, "beta")?;
                    let mut rm = vec![T::zero(); lay.n_out];
                    let mut rv = vec![T::zero(); lay.n_out];
                    copy(&mut rm, &bn.running_mean, "running mean")?;
                    copy(&mut rv, &bn.running_var, "running variance")?;
                    running_mean.push(rm);
                    running_var.push(rv);
                }
                (None, None) => {}
                _ => return Err(Error::malformed("inconsistent batch-norm layers in checkpoint")),
            }
        }
        let model = Self {
            layer_sizes: ck.layer_sizes.clone(),
            activation: ck.activation,
            output: ck.output,
            batchnorm,
            dropout: ck.dropout.clone(),
            params,
            layers,
            running_mean,
            running_var,
        };
        if !model.is_finite() {
            return Err(Error::malformed("checkpoint holds non-finite parameters"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

struct BnCache<'a, T> {
    xhat: &'a mut Vec<T>,
    inv_std: &'a mut Vec<T>,
    mean: &'a mut Vec<T>,
    var: &'a mut Vec<T>,
}

fn cache_bn<'a, T>(
    xhat: &'a mut [Vec<T>],
    inv_std: &'a mut [Vec<T>],
    mean: &'a mut [Vec<T>],
    var: &'a mut [Vec<T>],
    l: usize,
) -> BnCache<'a, T> {
    BnCache {
        xhat: &mut xhat[l],
        inv_std: &mut inv_std[l],
        mean: &mut mean[l],
        var: &mut var[l],
    }
}

pub const CHECKPOINT_FORMAT: &str = "pns-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: self-describing JSON with row-major `[n_out][n_in]`
/// weight arrays at full double precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output: OutputMode,
    #[serde(default)]
    pub dropout: Vec<f64>,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batchnorm: Option<CheckpointBatchNorm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointBatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}
