//! Central-difference gradient checks for every layer and every model variant.
//!
//! Layer checks use a random linear read-out `L = r . y` so that every output
//! contributes; model checks use the real cross-entropy loss.

use std::fmt;

use serde::Serialize;

use super::cross_entropy;
use crate::embed::EmbeddedSequence;
use crate::error::Result;
use crate::fusion::{random_input, FusionModel, ModelConfig, ModelInput, Variant};
use crate::nn::{classifier_forward, cross_entropy_logit_grad, Activation, BiLstmEncoder, DenseLayer, FeedforwardAttention, LstmCell, ParamSet};
use crate::numcore::{dot, Rng, Tensor2D};

pub const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    /// Index, analytic and numeric value of the worst entry.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub name: String,
    pub seed: u64,
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err() < tolerance
    }

    pub fn failing(&self, tolerance: f64) -> Vec<&BlockCheck> {
        self.blocks.iter().filter(|b| !(b.max_rel_err < tolerance)).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (seed {}): max rel err {:.3e}", self.name, self.seed, self.max_rel_err())?;
        for b in &self.blocks {
            writeln!(f, "  {:<36} n={:<5} max rel err {:.3e}", b.name, b.len, b.max_rel_err)?;
        }
        Ok(())
    }
}

fn compare(name: String, analytic: &[f64], numeric: &[f64]) -> BlockCheck {
    assert_eq!(analytic.len(), numeric.len(), "{name}: gradient length mismatch");
    let mut worst = (0, 0.0, 0.0);
    let mut max = 0.0;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let e = rel_err(*a, *n);
        if e > max || e.is_nan() {
            max = e;
            worst = (i, *a, *n);
        }
    }
    BlockCheck {
        name,
        len: analytic.len(),
        max_rel_err: max,
        worst,
    }
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn set_param<P: ParamSet>(p: &mut P, block: usize, i: usize, v: f64) {
    p.blocks_mut("")[block].data[i] = v;
}

/// Numerical gradient of `loss` w.r.t. every parameter of `params`, compared
/// block by block against `analytic` (which must list the same blocks).
fn check_params<P: ParamSet + Clone, G: ParamSet>(
    params: &P,
    analytic: &G,
    prefix: &str,
    loss: impl Fn(&P) -> f64,
) -> Vec<BlockCheck> {
    let mut work = params.clone();
    let names: Vec<(String, usize)> = params
        .blocks(prefix)
        .iter()
        .map(|b| (b.name.clone(), b.data.len()))
        .collect();
    let analytic = analytic.blocks("");
    let mut out = Vec::with_capacity(names.len());
    for (bi, (name, len)) in names.into_iter().enumerate() {
        let numeric: Vec<f64> = (0..len)
            .map(|i| {
                let orig = work.blocks("")[bi].data[i];
                let g = central(
                    |v| {
                        set_param(&mut work, bi, i, v);
                        loss(&work)
                    },
                    orig,
                );
                set_param(&mut work, bi, i, orig);
                g
            })
            .collect();
        out.push(compare(name, analytic[bi].data, &numeric));
    }
    out
}

/// Numerical gradient w.r.t. a plain input vector.
fn check_input(name: &str, x: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> BlockCheck {
    let mut work = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let g = central(
                |v| {
                    work[i] = v;
                    loss(&work)
                },
                x[i],
            );
            work[i] = x[i];
            g
        })
        .collect();
    compare(name.to_string(), analytic, &numeric)
}

fn randn(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
}

fn randn_2d(rng: &mut Rng, r: usize, c: usize) -> Tensor2D {
    Tensor2D::from_fn(r, c, |_, _| rng.normal(0.0, 1.0))
}

fn dims(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

pub fn check_dense(activation: Activation, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (n_in, n_out) = (dims(&mut rng, 2, 8), dims(&mut rng, 2, 8));
    let mut layer = DenseLayer::init(n_in, n_out, activation, &mut rng);
    layer.bias = randn(&mut rng, n_out);
    let x = randn(&mut rng, n_in);
    let r = randn(&mut rng, n_out);
    let (_, cache) = layer.forward(&x)?;
    let (dx, grads) = layer.backward(&cache, &r)?;
    let mut blocks = check_params(&layer, &grads, "", |l| dot(&r, &l.forward(&x).unwrap().0));
    blocks.push(check_input("input.x", &x, &dx, |x| dot(&r, &layer.forward(x).unwrap().0)));
    Ok(GradCheckReport {
        name: format!("dense[{}]", activation.name()),
        seed,
        blocks,
    })
}

pub fn check_lstm_step(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (d, h) = (dims(&mut rng, 2, 8), dims(&mut rng, 2, 8));
    let cell = LstmCell::init(d, h, &mut rng);
    let (h_prev, c_prev, x) = (randn(&mut rng, h), randn(&mut rng, h), randn(&mut rng, d));
    let (rh, rc) = (randn(&mut rng, h), randn(&mut rng, h));
    let read = |cell: &LstmCell, hp: &[f64], cp: &[f64], x: &[f64]| {
        let (h_t, c_t, _) = cell.step(hp, cp, x).unwrap();
        dot(&rh, &h_t) + dot(&rc, &c_t)
    };
    let (_, _, cache) = cell.step(&h_prev, &c_prev, &x)?;
    let mut grads = cell.zeros_like();
    let (dh_prev, dc_prev, dx) = cell.step_backward(&cache, &rh, &rc, &mut grads)?;
    let mut blocks = check_params(&cell, &grads, "", |c| read(c, &h_prev, &c_prev, &x));
    blocks.push(check_input("input.h_prev", &h_prev, &dh_prev, |v| read(&cell, v, &c_prev, &x)));
    blocks.push(check_input("input.c_prev", &c_prev, &dc_prev, |v| read(&cell, &h_prev, v, &x)));
    blocks.push(check_input("input.x", &x, &dx, |v| read(&cell, &h_prev, &c_prev, v)));
    Ok(GradCheckReport {
        name: "lstm_step".into(),
        seed,
        blocks,
    })
}

pub fn check_bilstm(seed: u64, t_len: usize) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (d, h) = (dims(&mut rng, 2, 6), dims(&mut rng, 2, 4));
    let enc = BiLstmEncoder::init(d, h, &mut rng);
    let x = randn_2d(&mut rng, t_len, d);
    let r = randn_2d(&mut rng, t_len, 2 * h);
    let read = |e: &BiLstmEncoder, x: &Tensor2D| dot(r.data(), e.forward(x).unwrap().0.data());
    let (_, cache) = enc.forward(&x)?;
    let (dx, grads) = enc.backward(&cache, &r)?;
    let mut blocks = check_params(&enc, &grads, "", |e| read(e, &x));
    blocks.push(check_input("input.x", x.data(), dx.data(), |v| {
        read(&enc, &Tensor2D::new(t_len, d, v.to_vec()).unwrap())
    }));
    Ok(GradCheckReport {
        name: format!("bilstm[T={t_len}]"),
        seed,
        blocks,
    })
}

pub fn check_attention(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (t_len, n) = (dims(&mut rng, 2, 5), dims(&mut rng, 2, 8));
    let mut attn = FeedforwardAttention::init(n, &mut rng);
    attn.b = rng.normal(0.0, 0.5);
    let h = randn_2d(&mut rng, t_len, n);
    let mut mask = vec![true; t_len];
    mask[t_len - 1] = t_len < 3;
    let r = randn(&mut rng, n);
    let read = |a: &FeedforwardAttention, h: &Tensor2D| dot(&r, &a.forward(h, &mask).unwrap().0);
    let (_, _, cache) = attn.forward(&h, &mask)?;
    let (dh, grads) = attn.backward(&cache, &r)?;
    let mut blocks = check_params(&attn, &grads, "", |a| read(a, &h));
    blocks.push(check_input("input.h", h.data(), dh.data(), |v| {
        read(&attn, &Tensor2D::new(t_len, n, v.to_vec()).unwrap())
    }));
    Ok(GradCheckReport {
        name: "attention".into(),
        seed,
        blocks,
    })
}

pub fn check_head(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (n, k) = (dims(&mut rng, 2, 8), dims(&mut rng, 2, 8));
    let mut head = DenseLayer::init(n, k, Activation::Identity, &mut rng);
    head.bias = randn(&mut rng, k);
    let c = randn(&mut rng, n);
    let label = rng.below(k);
    let loss = |h: &DenseLayer, c: &[f64]| cross_entropy(&classifier_forward(h, c).unwrap().0, label).unwrap();
    let (probs, cache) = classifier_forward(&head, &c)?;
    let dlogits = cross_entropy_logit_grad(&probs, label)?;
    let (dc, grads) = head.backward(&cache, &dlogits)?;
    let mut blocks = check_params(&head, &grads, "", |h| loss(h, &c));
    blocks.push(check_input("input.c", &c, &dc, |v| loss(&head, v)));
    Ok(GradCheckReport {
        name: "classifier_head".into(),
        seed,
        blocks,
    })
}

/// Every layer-level check for one seed.
pub fn layer_checks(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for act in [Activation::Sigmoid, Activation::Tanh, Activation::Relu, Activation::Identity] {
        out.push(check_dense(act, seed)?);
    }
    out.push(check_lstm_step(seed)?);
    out.push(check_bilstm(seed, 3)?);
    out.push(check_attention(seed)?);
    out.push(check_head(seed)?);
    Ok(out)
}

/// A small random model configuration: every dimension at most 8, T at most 5.
pub fn small_config(seed: u64) -> ModelConfig {
    let mut rng = Rng::new(seed ^ 0x5eed);
    ModelConfig {
        num_feature_dim: dims(&mut rng, 2, 8),
        cat_feature_dim: dims(&mut rng, 2, 8),
        embed_dim: dims(&mut rng, 2, 6),
        lstm_hidden: dims(&mut rng, 2, 4),
        mlp_hidden: dims(&mut rng, 2, 8),
        num_classes: dims(&mut rng, 3, 8),
        max_seq_len: dims(&mut rng, 2, 5),
        hidden_activation: Activation::Relu,
        seed,
    }
}

/// Full-loss check of `model` on one example.
pub fn check_model(
    model: &FusionModel,
    num: &[f64],
    cat: &[f64],
    seq: &EmbeddedSequence,
    label: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let input = ModelInput {
        numerical: num,
        categorical: cat,
        seq,
    };
    let (_, grads) = model.loss_and_grads(&input, label, 1.0, None)?;
    let blocks = check_params(model, &grads, "", |m| {
        cross_entropy(&m.forward(&input).unwrap().0, label).unwrap()
    });
    Ok(GradCheckReport {
        name: model.variant().to_string(),
        seed,
        blocks,
    })
}

/// Builds a small random model of `variant` from `seed` and checks the
/// gradient of its cross-entropy loss on one random example.
pub fn grad_check(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    let cfg = small_config(seed);
    let mut rng = Rng::new(seed);
    let mut model = FusionModel::build(&cfg, variant, &mut rng)?;
    // zero biases with an all-zero one-hot input put ReLUs exactly on the kink
    for b in model.blocks_mut("") {
        if b.name.ends_with("bias") {
            b.data.iter_mut().for_each(|v| *v = rng.normal(0.0, 0.5));
        }
    }
    let (num, cat, seq) = random_input(&cfg, &mut rng);
    let label = rng.below(cfg.num_classes);
    check_model(&model, &num, &cat, &seq, label, seed)
}
