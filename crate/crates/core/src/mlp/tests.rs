use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::*;
use crate::dataset::{BoundDataset, BoundSide, LabeledExample};
use crate::oracle::SubgroupKey;
use crate::scm::{ScmKind, N_OBSERVED, N_SUBGROUPS};

fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

fn random_rows(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n * N_OBSERVED).map(|_| r.random_range(0..2) as f64).collect()
}

/// Naive reference forward pass straight from the checkpoint arrays.
fn reference_forward(ck: &Checkpoint, x: &[f64]) -> f64 {
    let mut h = x.to_vec();
    let last = ck.layers.len() - 1;
    for (l, layer) in ck.layers.iter().enumerate() {
        let n_in = ck.layer_sizes[l];
        let n_out = ck.layer_sizes[l + 1];
        let mut z = vec![0.0; n_out];
        for o in 0..n_out {
            let mut s = layer.bias[o];
            for i in 0..n_in {
                s += layer.weights[o * n_in + i] * h[i];
            }
            z[o] = s;
        }
        if l == last {
            return match ck.output {
                OutputMode::Sigmoid => 1.0 / (1.0 + (-z[0]).exp()),
                OutputMode::ClampUnit => z[0].clamp(0.0, 1.0),
            };
        }
        h = z
            .iter()
            .map(|&s| match ck.activation {
                Activation::Relu => s.max(0.0),
                Activation::LeakyRelu { alpha } => {
                    if s > 0.0 {
                        s
                    } else {
                        alpha * s
                    }
                }
                Activation::Mish => s * (1.0 + s.exp()).ln().tanh(),
            })
            .collect();
        if let Some(bn) = &layer.batchnorm {
            for j in 0..n_out {
                h[j] = bn.gamma[j] * (h[j] - bn.running_mean[j]) / (bn.running_var[j] + 1e-5).sqrt()
                    + bn.beta[j];
            }
        }
    }
    unreachable!()
}

fn perturb_bn_stats(model: &mut MlpModel<f64>, seed: u64) {
    let mut r = rng(seed);
    for l in 0..model.running_mean.len() {
        for j in 0..model.running_mean[l].len() {
            model.running_mean[l][j] = r.random_range(-0.5..0.5);
            model.running_var[l][j] = r.random_range(0.5..2.0);
        }
    }
    let layers = model.layers.clone();
    for lay in layers {
        if let (Some(g), Some(b)) = (lay.gamma, lay.beta) {
            for j in 0..lay.n_out {
                model.params[g + j] = r.random_range(0.5..1.5);
                model.params[b + j] = r.random_range(-0.3..0.3);
            }
        }
    }
}

#[test]
fn zero_parameters_give_one_half() {
    let cfg = MlpConfig::simple(Activation::Mish);
    let mut m = MlpModel::<f64>::init(&cfg, &mut rng(1)).unwrap();
    m.params_mut().iter_mut().for_each(|p| *p = 0.0);
    for key in [0u32, 1, 12345, 32767] {
        let k = SubgroupKey::new(key).unwrap();
        assert_eq!(m.forward(&k.features()).unwrap(), 0.5);
    }
}

#[test]
fn eval_forward_is_repeatable() {
    let m = MlpModel::<f64>::init(&MlpConfig::enriched(Activation::Relu), &mut rng(2)).unwrap();
    let f = SubgroupKey::new(777).unwrap().features();
    assert_eq!(m.forward(&f).unwrap().to_bits(), m.forward(&f).unwrap().to_bits());
}

#[test]
fn forward_matches_straight_line_reference() {
    for (i, cfg) in [
        MlpConfig::simple(Activation::Mish),
        MlpConfig::simple(Activation::LEAKY_DEFAULT),
        MlpConfig::enriched(Activation::Relu),
        MlpConfig::enriched(Activation::Mish),
    ]
    .iter()
    .enumerate()
    {
        let mut m = MlpModel::<f64>::init(cfg, &mut rng(10 + i as u64)).unwrap();
        perturb_bn_stats(&mut m, 99);
        let ck = m.to_checkpoint();
        let x = random_rows(50, 7);
        let batch = m.predict_batch(&x, 50).unwrap();
        for b in 0..50 {
            let want = reference_forward(&ck, &x[b * N_OBSERVED..(b + 1) * N_OBSERVED]);
            assert_abs_diff_eq!(batch[b], want, epsilon = 1e-12);
        }
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let m = MlpModel::<f64>::init(&MlpConfig::simple(Activation::Relu), &mut rng(3)).unwrap();
    assert!(m.forward(&[1, 0, 1]).is_err());
    assert!(m.predict_batch(&[0.0; 31], 2).is_err());
}

#[test]
fn config_validation() {
    let mut cfg = MlpConfig::simple(Activation::Relu);
    cfg.layer_sizes = vec![14, 8, 1];
    assert!(cfg.validate().is_err());
    let mut cfg = MlpConfig::enriched(Activation::Relu);
    cfg.dropout_rates = vec![0.2, 1.0, 0.1];
    assert!(cfg.validate().is_err());
    cfg.dropout_rates = vec![0.2];
    assert!(cfg.validate().is_err());
    let mut cfg = MlpConfig::enriched(Activation::Relu);
    cfg.lr_schedule = LrSchedule::PlateauHalving {
        patience: 0,
        factor: 0.5,
    };
    assert!(cfg.validate().is_err());
    assert!(MlpConfig::for_scm(ScmKind::Mediator, Activation::Mish).use_batchnorm);
    assert!(!MlpConfig::for_scm(ScmKind::Direct, Activation::Mish).use_batchnorm);
}

/// Max relative error between analytic and central-difference gradients.
fn gradient_error(model: &mut MlpModel<f64>, loss: Loss, mode: Mode, seed: u64) -> f64 {
    let x = random_rows(4, seed);
    let mut r = rng(seed + 1);
    let y: Vec<f64> = (0..4).map(|_| r.random_range(0.0..1.0)).collect();
    let (_, grad) = model.loss_gradient(&x, &y, loss, mode, 5).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..model.n_params() {
        let orig = model.params[i];
        model.params[i] = orig + h;
        let (up, _) = model.loss_gradient(&x, &y, loss, mode, 5).unwrap();
        model.params[i] = orig - h;
        let (down, _) = model.loss_gradient(&x, &y, loss, mode, 5).unwrap();
        model.params[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn gradients_match_finite_differences_plain() {
    for act in [Activation::Relu, Activation::LEAKY_DEFAULT, Activation::Mish] {
        for loss in [Loss::Mse, Loss::SmoothL1 { beta: 0.3 }] {
            let mut cfg = MlpConfig::simple(act);
            cfg.loss = loss;
            let mut m = MlpModel::<f64>::init(&cfg, &mut rng(21)).unwrap();
            let err = gradient_error(&mut m, loss, Mode::Eval, 31);
            assert!(err < 1e-4, "{act} {loss:?}: {err}");
        }
    }
}

#[test]
fn gradients_match_finite_differences_batchnorm() {
    for act in [Activation::Relu, Activation::LEAKY_DEFAULT, Activation::Mish] {
        for mode in [Mode::Eval, Mode::Train] {
            let mut cfg = MlpConfig::enriched(act);
            cfg.output = OutputMode::Sigmoid;
            if mode == Mode::Train {
                cfg.dropout_rates.clear();
            }
            let mut m = MlpModel::<f64>::init(&cfg, &mut rng(41)).unwrap();
            perturb_bn_stats(&mut m, 8);
            let err = gradient_error(&mut m, Loss::SmoothL1 { beta: 0.3 }, mode, 51);
            assert!(err < 1e-4, "{act} {mode:?}: {err}");
        }
    }
}

#[test]
fn gradients_with_fixed_dropout_masks() {
    let mut cfg = MlpConfig::enriched(Activation::Mish);
    cfg.output = OutputMode::Sigmoid;
    let mut m = MlpModel::<f64>::init(&cfg, &mut rng(61)).unwrap();
    let err = gradient_error(&mut m, Loss::Mse, Mode::Train, 71);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn clamp_output_gradient_vanishes_outside_unit_interval() {
    let mut cfg = MlpConfig::simple(Activation::Relu);
    cfg.output = OutputMode::ClampUnit;
    let mut m = MlpModel::<f64>::init(&cfg, &mut rng(3)).unwrap();
    let out_bias = m.layers.last().unwrap().b;
    m.params[out_bias] = 50.0;
    let x = random_rows(3, 4);
    let (_, g) = m.loss_gradient(&x, &[0.1, 0.2, 0.3], Loss::Mse, Mode::Eval, 0).unwrap();
    assert!(g.iter().all(|&v| v == 0.0));
}

#[test]
fn loss_values() {
    let p = [0.5, 0.1];
    let t = [0.0, 0.1];
    assert_abs_diff_eq!(Loss::Mse.value(&p, &t), 0.125);
    // 0.5 above beta: |e| - beta/2 = 0.35; zero error contributes 0
    assert_abs_diff_eq!(Loss::SmoothL1 { beta: 0.3 }.value(&p, &t), 0.175, epsilon = 1e-15);
    // inside beta: 0.5 * 0.01 / 0.3
    assert_abs_diff_eq!(
        Loss::SmoothL1 { beta: 0.3 }.value(&[0.2], &[0.1]),
        0.5 * 0.01 / 0.3,
        epsilon = 1e-15
    );
}

fn dataset(labels: impl Fn(SubgroupKey) -> f64, keys: impl Iterator<Item = u32>) -> BoundDataset {
    BoundDataset {
        side: BoundSide::Lower,
        rows: keys
            .map(|c| {
                let key = SubgroupKey::new(c).unwrap();
                LabeledExample {
                    key,
                    label: labels(key),
                }
            })
            .collect(),
        threshold: 1,
        scm: ScmKind::Confounder,
    }
}

#[test]
fn constant_labels_are_learned() {
    let train_set = dataset(|_| 0.37, (0..400u32).map(|i| i * 81 % 32768));
    let val = dataset(|_| 0.37, (0..100u32).map(|i| i * 313 + 7));
    let mut cfg = MlpConfig::simple(Activation::Mish);
    cfg.epochs = 60;
    let report = train::<f64>(&cfg, &train_set, &val).unwrap();
    let mae: f64 = val
        .rows
        .iter()
        .map(|r| (report.model.forward(&r.features()).unwrap() - 0.37).abs())
        .sum::<f64>()
        / val.len() as f64;
    assert!(mae < 0.01, "mae {mae}");
    assert!(report.log[99.min(report.log.len() - 1)].train_loss < report.log[0].train_loss);
}

#[test]
fn training_is_bit_reproducible() {
    let labels = |k: SubgroupKey| 0.2 + 0.5 * (k.get(0) as u8 as f64) * 0.7 + 0.1 * k.get(3) as u8 as f64;
    let train_set = dataset(labels, (0..300u32).map(|i| i * 97 % 32768));
    let val = dataset(labels, (0..60u32).map(|i| i * 211 + 3));
    let mut cfg = MlpConfig::enriched(Activation::Mish);
    cfg.epochs = 8;
    let a = train::<f64>(&cfg, &train_set, &val).unwrap();
    let b = train::<f64>(&cfg, &train_set, &val).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    cfg.seed = 1;
    let c = train::<f64>(&cfg, &train_set, &val).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn weight_decay_shrinks_parameters_outside_adam() {
    let labels = |k: SubgroupKey| 0.3 + 0.4 * k.get(2) as u8 as f64;
    let train_set = dataset(labels, (0..50u32).map(|i| i * 31));
    let val = dataset(labels, (0..10u32).map(|i| i * 401 + 5));
    let mut cfg = MlpConfig::simple(Activation::Relu);
    cfg.epochs = 1;
    cfg.batch_size = 64;
    let plain = train::<f64>(&cfg, &train_set, &val).unwrap().model;
    cfg.weight_decay = 0.1;
    let decayed = train::<f64>(&cfg, &train_set, &val).unwrap().model;
    let init = MlpModel::<f64>::init(&cfg, &mut rng(cfg.seed)).unwrap();
    for ((a, b), p0) in decayed.params().iter().zip(plain.params()).zip(init.params()) {
        assert_abs_diff_eq!(a - b, -cfg.learning_rate * 0.1 * p0, epsilon = 1e-15);
    }
}

#[test]
fn plateau_schedule_reduces_learning_rate() {
    // Validation labels disagree with training labels, so validation loss stalls.
    let train_set = dataset(|_| 0.9, (0..64u32).map(|i| i * 5));
    let val = dataset(|_| 0.1, (0..16u32).map(|i| i * 1000 + 1));
    let mut cfg = MlpConfig::enriched(Activation::Relu);
    cfg.epochs = 40;
    let report = train::<f64>(&cfg, &train_set, &val).unwrap();
    let last = report.log.last().unwrap().lr;
    assert!(last < cfg.learning_rate, "lr stayed at {last}");
    let best = report
        .log
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best, report.best_val_loss);
    assert_eq!(report.log[report.best_epoch - 1].val_loss, best);
}

#[test]
fn predictions_cover_all_keys_in_unit_interval() {
    for cfg in [MlpConfig::simple(Activation::Mish), MlpConfig::enriched(Activation::Mish)] {
        let mut m = MlpModel::<f64>::init(&cfg, &mut rng(4)).unwrap();
        for p in m.params_mut() {
            *p *= 40.0;
        }
        let preds = predict_all(&m);
        assert_eq!(preds.len(), N_SUBGROUPS);
        assert!(preds.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn single_precision_model_tracks_double() {
    let cfg = MlpConfig::simple(Activation::Mish);
    let m64 = MlpModel::<f64>::init(&cfg, &mut rng(9)).unwrap();
    let m32 = MlpModel::<f32>::from_checkpoint(&m64.to_checkpoint()).unwrap();
    let f = SubgroupKey::new(4242).unwrap().features();
    assert_abs_diff_eq!(m32.forward(&f).unwrap() as f64, m64.forward(&f).unwrap(), epsilon = 1e-5);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let mut m = MlpModel::<f64>::init(&MlpConfig::enriched(Activation::LeakyRelu { alpha: 0.05 }), &mut rng(5)).unwrap();
    perturb_bn_stats(&mut m, 6);
    m.save(&path).unwrap();
    let back = MlpModel::<f64>::load(&path).unwrap();
    assert_eq!(back, m);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"pns-mlp\""));
    assert!(text.contains("leakyrelu(0.05)"));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let m = MlpModel::<f64>::init(&MlpConfig::simple(Activation::Relu), &mut rng(5)).unwrap();
    let mut ck = m.to_checkpoint();
    ck.layers[1].bias.pop();
    assert!(MlpModel::<f64>::from_checkpoint(&ck).is_err());
    let mut ck = m.to_checkpoint();
    ck.version = 9;
    assert!(MlpModel::<f64>::from_checkpoint(&ck).is_err());
}

#[test]
fn train_mode_updates_running_statistics() {
    let mut m = MlpModel::<f64>::init(&MlpConfig::enriched(Activation::Relu), &mut rng(5)).unwrap();
    let before = m.running_mean.clone();
    let x = random_rows(8, 1);
    m.forward_train(&x, 8, &mut rng(0)).unwrap();
    assert_ne!(before, m.running_mean);
    assert!(m.is_finite());
}
