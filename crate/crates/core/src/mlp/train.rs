use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::model::{Cache, LrSchedule, Loss, MlpConfig, MlpModel, Mode};
use crate::dataset::{BoundDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::format::fmt_sig12;
use crate::oracle::SubgroupKey;
use crate::scalar::Scalar;
use crate::scm::N_OBSERVED;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Minimum absolute decrease in validation loss that counts as progress.
pub const PLATEAU_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl Loss {
    /// Mean loss over the batch.
    pub fn value<T: Scalar>(self, pred: &[T], target: &[T]) -> T {
        let n = T::lit(pred.len() as f64);
        let mut total = T::zero();
        for (&p, &t) in pred.iter().zip(target) {
            let e = p - t;
            total = total
                + match self {
                    Loss::Mse => e * e,
                    Loss::SmoothL1 { beta } => {
                        let beta = T::lit(beta);
                        if e.abs() < beta {
                            T::lit(0.5) * e * e / beta
                        } else {
                            e.abs() - T::lit(0.5) * beta
                        }
                    }
                };
        }
        total / n
    }

    /// `d value / d pred`, written into `out`.
    pub fn gradient<T: Scalar>(self, pred: &[T], target: &[T], out: &mut Vec<T>) {
        let n = T::lit(pred.len() as f64);
        out.clear();
        out.extend(pred.iter().zip(target).map(|(&p, &t)| {
            let e = p - t;
            let g = match self {
                Loss::Mse => T::lit(2.0) * e,
                Loss::SmoothL1 { beta } => {
                    let beta = T::lit(beta);
                    if e.abs() < beta {
                        e / beta
                    } else {
                        e.signum()
                    }
                }
            };
            g / n
        }));
    }
}

fn design_matrix<T: Scalar>(rows: &[LabeledExample]) -> (Vec<T>, Vec<T>) {
    let mut x = Vec::with_capacity(rows.len() * N_OBSERVED);
    for r in rows {
        x.extend(r.features().iter().map(|&v| T::lit(v as f64)));
    }
    let y = rows.iter().map(|r| T::lit(r.label)).collect();
    (x, y)
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::lit(ADAM_BETA1), T::lit(ADAM_BETA2));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let lr = T::lit(lr);
        let eps = T::lit(ADAM_EPS);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

struct Plateau {
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    /// Returns the learning rate to use for the next epoch.
    fn observe(&mut self, val_loss: f64, lr: f64, schedule: LrSchedule) -> f64 {
        let LrSchedule::PlateauHalving { patience, factor } = schedule else {
            return lr;
        };
        if val_loss < self.best - PLATEAU_THRESHOLD {
            self.best = val_loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > patience {
            self.bad_epochs = 0;
            return lr * factor;
        }
        lr
    }
}

/// Eval-mode loss of `model` on a prepared design matrix.
fn eval_loss<T: Scalar>(model: &MlpModel<T>, loss: Loss, x: &[T], y: &[T], cache: &mut Cache<T>) -> f64 {
    model.forward_cached(x, y.len(), Mode::Eval, None, cache);
    loss.value(&cache.output, y).to_f64_lossy()
}

/// Mini-batch Adam with seeded shuffling; returns the best-validation
/// parameters together with the per-epoch log.
pub fn train<T: Scalar>(cfg: &MlpConfig, train: &BoundDataset, val: &BoundDataset) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "training needs rows in both sets (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let mut model = MlpModel::<T>::init(cfg, &mut rng)?;
    let (x_train, y_train) = design_matrix::<T>(&train.rows);
    let (x_val, y_val) = design_matrix::<T>(&val.rows);

    let n_params = model.n_params();
    let mut adam = Adam::new(n_params);
    let mut grad = vec![T::zero(); n_params];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut xb: Vec<T> = Vec::with_capacity(cfg.batch_size * N_OBSERVED);
    let mut yb: Vec<T> = Vec::with_capacity(cfg.batch_size);
    let mut d_out = Vec::with_capacity(cfg.batch_size);
    let mut cache = Cache::default();
    let mut val_cache = Cache::default();
    let wd = T::lit(cfg.weight_decay);

    let mut lr = cfg.learning_rate;
    let mut plateau = Plateau {
        best: f64::INFINITY,
        bad_epochs: 0,
    };
    let mut best = (model.clone(), 0usize, f64::INFINITY);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&x_train[i * N_OBSERVED..(i + 1) * N_OBSERVED]);
                yb.push(y_train[i]);
            }
            model.forward_cached(&xb, chunk.len(), Mode::Train, Some(&mut rng), &mut cache);
            loss_sum += cfg.loss.value(&cache.output, &yb).to_f64_lossy() * chunk.len() as f64;
            cfg.loss.gradient(&cache.output, &yb, &mut d_out);
            grad.iter_mut().for_each(|g| *g = T::zero());
            model.backward(&cache, &d_out, &mut grad);
            if cfg.weight_decay > 0.0 {
                let shrink = T::one() - T::lit(lr) * wd;
                model.params.iter_mut().for_each(|p| *p = *p * shrink);
            }
            adam.step(&mut model.params, &grad, lr);
            model.update_running_stats(&cache);
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = eval_loss(&model, cfg.loss, &x_val, &y_val, &mut val_cache);
        if !train_loss.is_finite() || !val_loss.is_finite() || !model.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
        }
        lr = plateau.observe(val_loss, lr, cfg.lr_schedule);
    }

    let (model, best_epoch, best_val_loss) = best;
    Ok(TrainReport {
        model,
        log,
        best_epoch,
        best_val_loss,
    })
}

/// Eval-mode prediction for every subgroup in canonical key order.
pub fn predict_all<T: Scalar>(model: &MlpModel<T>) -> Vec<T> {
    let keys: Vec<SubgroupKey> = SubgroupKey::all().collect();
    predict_keys(model, &keys)
}

pub fn predict_keys<T: Scalar>(model: &MlpModel<T>, keys: &[SubgroupKey]) -> Vec<T> {
    const CHUNK: usize = 4096;
    let mut out = Vec::with_capacity(keys.len());
    let mut cache = Cache::default();
    let mut x = Vec::with_capacity(CHUNK * N_OBSERVED);
    for chunk in keys.chunks(CHUNK) {
        x.clear();
        for k in chunk {
            x.extend(k.features().iter().map(|&v| T::lit(v as f64)));
        }
        model.forward_cached(&x, chunk.len(), Mode::Eval, None, &mut cache);
        out.extend_from_slice(&cache.output);
    }
    out
}

/// Writes `epoch,train_loss,val_loss,lr`.
pub fn write_training_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for e in log {
            writeln!(
                w,
                "{},{},{},{}",
                e.epoch,
                fmt_sig12(e.train_loss),
                fmt_sig12(e.val_loss),
                fmt_sig12(e.lr)
            )?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

impl<T: Scalar> MlpModel<T> {
    /// Batch loss and its gradient with respect to every parameter, without
    /// updating any state. In train mode dropout masks come from
    /// `dropout_seed`, so repeated calls see the same masks.
    pub fn loss_gradient(
        &self,
        x: &[T],
        y: &[T],
        loss: Loss,
        mode: Mode,
        dropout_seed: u64,
    ) -> Result<(T, Vec<T>)> {
        if y.is_empty() || x.len() != y.len() * self.n_inputs() {
            return Err(Error::malformed(format!(
                "{} inputs do not match {} targets",
                x.len(),
                y.len()
            )));
        }
        let mut cache = Cache::default();
        let mut rng = Xoshiro256StarStar::seed_from_u64(dropout_seed);
        self.forward_cached(x, y.len(), mode, Some(&mut rng), &mut cache);
        let value = loss.value(&cache.output, y);
        let mut d_out = Vec::new();
        loss.gradient(&cache.output, y, &mut d_out);
        let mut grad = vec![T::zero(); self.n_params()];
        self.backward(&cache, &d_out, &mut grad);
        Ok((value, grad))
    }
}
