//! Mini-batch training and the gradient-check harness.

pub mod gradcheck;
mod optim;

pub use gradcheck::{grad_check, layer_checks, BlockCheck, GradCheckReport};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedExample;
use crate::error::{Error, Result};
use crate::eval;
use crate::fusion::{Dropout, FusionModel, ModelGrads};
use crate::nn::params::{add_scaled, global_norm, scale_all};
use crate::nn::ParamSet;
use crate::numcore::Rng;

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln probs[label]`, with the probability floored at 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::Argument(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    if p.is_nan() {
        return Ok(f64::NAN);
    }
    Ok(-p.max(PROB_FLOOR).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout_rate: f64,
    /// Epochs without a validation improvement before stopping. 0 disables.
    pub early_stop_patience: usize,
    pub clip_norm: f64,
    /// Optional per-class loss weights.
    pub class_weights: Option<Vec<f64>>,
    /// `k` of the validation top-k accuracy used for model selection.
    pub eval_k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout_rate: 0.0,
            early_stop_patience: 5,
            clip_norm: 5.0,
            class_weights: None,
            eval_k: 3,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if self.eval_k == 0 || self.eval_k > num_classes {
            return bad(format!("eval_k must be in 1..={num_classes}, got {}", self.eval_k));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != num_classes {
                return bad(format!("class_weights has {} entries, model has {num_classes} classes", w.len()));
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return bad("class_weights must be finite and non-negative".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_topk: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_topk: f64,
    pub k: usize,
}

impl TrainReport {
    /// Equality ignoring wall-clock times.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        self.best_epoch == other.best_epoch
            && self.best_val_topk.to_bits() == other.best_val_topk.to_bits()
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_topk.to_bits() == b.val_topk.to_bits()
            })
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("epoch\ttrain_loss\tval_top{}\twall_secs\tbest\n", self.k);
        for e in &self.epochs {
            let best = if e.epoch == self.best_epoch { "*" } else { "" };
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.3}\t{best}", e.epoch, e.train_loss, e.val_topk, e.wall_secs);
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

fn check_dims(model: &FusionModel, set: &[EncodedExample], name: &str) -> Result<()> {
    let cfg = model.config();
    let v = model.variant();
    for ex in set {
        let err = |what: &str, want: usize, got: usize| {
            Error::shape("train", format!("{name} {what} {got}"), format!("model expects {want}"))
                .with_example(&ex.id)
        };
        if v.uses_tabular() {
            if ex.numerical.len() != cfg.num_feature_dim {
                return Err(err("numerical dim", cfg.num_feature_dim, ex.numerical.len()));
            }
            if ex.categorical.len() != cfg.cat_feature_dim {
                return Err(err("categorical dim", cfg.cat_feature_dim, ex.categorical.len()));
            }
        }
        if v.uses_text() {
            if ex.seq.vectors.cols() != cfg.embed_dim {
                return Err(err("embedding dim", cfg.embed_dim, ex.seq.vectors.cols()));
            }
            if ex.seq.real_len() == 0 {
                return Err(Error::NoAttendablePositions(ex.seq.len()).with_example(&ex.id));
            }
        }
        if ex.label >= cfg.num_classes {
            return Err(err("label", cfg.num_classes, ex.label));
        }
    }
    Ok(())
}

fn first_bad_block(grads: &ModelGrads) -> String {
    grads
        .blocks("")
        .into_iter()
        .find(|b| b.data.iter().any(|v| !v.is_finite()))
        .map(|b| b.name)
        .unwrap_or_else(|| "<loss>".into())
}

/// Top-k accuracy of `model` over `set`.
pub fn evaluate_topk(model: &FusionModel, set: &[EncodedExample], k: usize) -> Result<f64> {
    let preds = set
        .par_iter()
        .map(|ex| model.predict_topk(&ex.input(), k).map(|p| p.top_k))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = set.iter().map(|e| e.label).collect();
    eval::topk_accuracy(&preds, &labels)
}

/// Trains `model` and returns the checkpoint with the best validation top-k
/// accuracy (earliest on ties) together with the per-epoch report.
pub fn train(
    model: FusionModel,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainReport)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument("training and validation splits must be non-empty".into()));
    }
    cfg.validate(model.config().num_classes)?;
    check_dims(&model, train_set, "train")?;
    check_dims(&model, val_set, "validation")?;

    let mut model = model;
    let mut opt = optim::make(cfg.optimizer, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = model.clone();
    let mut best_val = evaluate_topk(&model, val_set, cfg.eval_k)?;
    let mut best_epoch = 0;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let seeds: Vec<u64> = batch.iter().map(|_| rng.next_u64()).collect();
            let dropout_rate = cfg.dropout_rate;
            let weights = cfg.class_weights.as_deref();
            let current = &model;
            let results = batch
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &seed)| {
                    let ex = &train_set[i];
                    let w = weights.map_or(1.0, |w| w[ex.label]);
                    let dropout = (dropout_rate > 0.0).then_some(Dropout { rate: dropout_rate, seed });
                    current
                        .loss_and_grads(&ex.input(), ex.label, w, dropout)
                        .map_err(|e| e.with_example(&ex.id))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut total = model.zero_grads();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                add_scaled(&mut total, g, 1.0);
            }
            scale_all(&mut total, 1.0 / batch.len() as f64);
            if !batch_loss.is_finite() || !total.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_no,
                    block: first_bad_block(&total),
                });
            }
            let norm = global_norm(&total);
            if norm > cfg.clip_norm {
                scale_all(&mut total, cfg.clip_norm / norm);
            }
            opt.step(&mut model, &total);
            loss_sum += batch_loss;
        }

        let val = evaluate_topk(&model, val_set, cfg.eval_k)?;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_topk: val,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        if val > best_val {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    Ok((
        best,
        TrainReport {
            epochs: records,
            best_epoch,
            best_val_topk: best_val,
            k: cfg.eval_k,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddedSequence;
    use crate::fusion::{ModelConfig, Variant};
    use crate::nn::params::flatten;
    use crate::nn::Activation;
    use crate::numcore::Tensor2D;

    fn toy_config(num: usize) -> ModelConfig {
        ModelConfig {
            num_feature_dim: num,
            cat_feature_dim: 2,
            embed_dim: 2,
            lstm_hidden: 2,
            mlp_hidden: 8,
            num_classes: 2,
            max_seq_len: 2,
            hidden_activation: Activation::Relu,
            seed: 3,
        }
    }

    /// Two Gaussian blobs, far apart along every axis.
    fn separable(n: usize, seed: u64) -> Vec<EncodedExample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let centre = if label == 0 { -2.0 } else { 2.0 };
                EncodedExample {
                    id: format!("t{i}"),
                    numerical: (0..3).map(|_| centre + rng.normal(0.0, 0.3)).collect(),
                    categorical: if label == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                    seq: EmbeddedSequence {
                        vectors: Tensor2D::zeros(2, 2),
                        mask: vec![true, false],
                        oov_count: 1,
                    },
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = vec![1.0 / 13.0; 13];
        assert!((cross_entropy(&uniform, 4).unwrap() - 13f64.ln()).abs() < 1e-12);
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn separable_toy_trains_to_perfect_accuracy() {
        let data = separable(64, 1);
        let val = separable(32, 2);
        let model = FusionModel::build(&toy_config(3), Variant::Mlp, &mut Rng::new(5)).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 8,
            learning_rate: 1e-2,
            eval_k: 1,
            early_stop_patience: 0,
            ..TrainConfig::default()
        };
        let (best, report) = train(model, &data, &val, &cfg).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.train_loss).collect();
        assert!(losses.windows(2).take(4).all(|w| w[1] < w[0]), "{losses:?}");
        assert_eq!(evaluate_topk(&best, &data, 1).unwrap(), 1.0);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = separable(20, 1);
        let model = FusionModel::build(&toy_config(3), Variant::Mlp, &mut Rng::new(5)).unwrap();
        let before = flatten(&model);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 0.0,
            eval_k: 1,
            ..TrainConfig::default()
        };
        let (after, _) = train(model, &data, &data, &cfg).unwrap();
        let after = flatten(&after);
        assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn same_seed_same_report() {
        let data = separable(30, 1);
        let val = separable(10, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            dropout_rate: 0.2,
            eval_k: 1,
            ..TrainConfig::default()
        };
        let run = || {
            let m = FusionModel::build(&toy_config(3), Variant::Fusion, &mut Rng::new(5)).unwrap();
            train(m, &data, &val, &cfg).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert!(r1.same_run(&r2));
        assert_eq!(flatten(&m1), flatten(&m2));
    }

    #[test]
    fn small_step_decreases_frozen_batch_loss() {
        let data = separable(16, 4);
        let model = FusionModel::build(&toy_config(3), Variant::Fusion, &mut Rng::new(2)).unwrap();
        let batch_loss = |m: &FusionModel| -> f64 {
            data.iter()
                .map(|e| cross_entropy(&m.forward(&e.input()).unwrap().0, e.label).unwrap())
                .sum::<f64>()
                / data.len() as f64
        };
        let mut total = model.zero_grads();
        for e in &data {
            let (_, g) = model.loss_and_grads(&e.input(), e.label, 1.0, None).unwrap();
            add_scaled(&mut total, &g, 1.0 / data.len() as f64);
        }
        let before = batch_loss(&model);
        let mut stepped = model.clone();
        Sgd { lr: 1e-4 }.step(&mut stepped, &total);
        assert!(batch_loss(&stepped) < before);
    }

    #[test]
    fn early_stopping_returns_best_checkpoint() {
        let data = separable(40, 1);
        let val = separable(20, 3);
        let model = FusionModel::build(&toy_config(3), Variant::Mlp, &mut Rng::new(9)).unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 5e-2,
            eval_k: 1,
            early_stop_patience: 2,
            ..TrainConfig::default()
        };
        let (best, report) = train(model, &data, &val, &cfg).unwrap();
        let max = report.epochs.iter().map(|e| e.val_topk).fold(0.0, f64::max);
        assert!(report.best_val_topk >= max);
        assert_eq!(evaluate_topk(&best, &val, 1).unwrap(), report.best_val_topk);
    }

    #[test]
    fn nan_parameters_abort_with_block_name() {
        let data = separable(8, 1);
        let mut model = FusionModel::build(&toy_config(3), Variant::Mlp, &mut Rng::new(9)).unwrap();
        model.head.bias[0] = f64::NAN;
        let cfg = TrainConfig {
            eval_k: 1,
            ..TrainConfig::default()
        };
        let err = train(model, &data, &data, &cfg).unwrap_err();
        match err {
            Error::NonFinite { epoch, batch, block } => {
                assert_eq!((epoch, batch), (1, 0));
                assert!(!block.is_empty());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_reported_up_front() {
        let data = separable(8, 1);
        let model = FusionModel::build(&toy_config(4), Variant::Mlp, &mut Rng::new(9)).unwrap();
        let err = train(model, &data, &data, &TrainConfig { eval_k: 1, ..TrainConfig::default() })
            .unwrap_err()
            .to_string();
        assert!(err.contains("numerical"), "{err}");
    }

    #[test]
    fn tsv_has_one_line_per_epoch() {
        let r = TrainReport {
            epochs: vec![
                EpochRecord { epoch: 1, train_loss: 2.0, val_topk: 0.5, wall_secs: 0.1 },
                EpochRecord { epoch: 2, train_loss: 1.0, val_topk: 0.7, wall_secs: 0.1 },
            ],
            best_epoch: 2,
            best_val_topk: 0.7,
            k: 3,
        };
        let tsv = r.to_tsv();
        assert_eq!(tsv.lines().count(), 3);
        assert!(tsv.lines().nth(2).unwrap().ends_with('*'));
    }
}
