//! The attention fusion network and its two single-source baselines.
//!
//! Branch outputs are concatenated in the fixed order
//! `[numerical, categorical, text]` and fed to a linear softmax head. Each
//! MLP branch is two hidden layers; the text branch is a BiLSTM followed by
//! feed-forward attention.

mod format;

pub use format::{from_bytes, load, save, to_bytes, FORMAT_VERSION};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddedSequence;
use crate::error::{Error, Result};
use crate::nn::params::join;
use crate::nn::{
    classifier_forward, cross_entropy_logit_grad, Activation, AttentionCache, AttentionGrads,
    BiLstmCache, BiLstmEncoder, BiLstmGrads, Block, BlockMut, DenseCache, DenseGrads, DenseLayer,
    FeedforwardAttention, ParamSet,
};
use crate::numcore::{Rng, Tensor1D, Tensor2D};

pub const CONCAT_ORDER: &str = "numerical,categorical,text";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Fusion,
    Mlp,
    Text,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Fusion, Variant::Mlp, Variant::Text];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Fusion => "fusion",
            Variant::Mlp => "mlp",
            Variant::Text => "text",
        }
    }

    pub fn uses_tabular(self) -> bool {
        matches!(self, Variant::Fusion | Variant::Mlp)
    }

    pub fn uses_text(self) -> bool {
        matches!(self, Variant::Fusion | Variant::Text)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(Variant::Fusion),
            "mlp" => Ok(Variant::Mlp),
            "text" => Ok(Variant::Text),
            other => Err(Error::Argument(format!(
                "unknown variant {other:?} (expected fusion, mlp or text)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_feature_dim: usize,
    pub cat_feature_dim: usize,
    pub embed_dim: usize,
    /// Hidden size per LSTM direction.
    pub lstm_hidden: usize,
    /// Width of both hidden layers in each MLP branch.
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub max_seq_len: usize,
    pub hidden_activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_feature_dim: 20,
            cat_feature_dim: 12,
            embed_dim: 300,
            lstm_hidden: 64,
            mlp_hidden: 64,
            num_classes: 13,
            max_seq_len: 100,
            hidden_activation: Activation::Relu,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_feature_dim", self.num_feature_dim),
            ("cat_feature_dim", self.cat_feature_dim),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        Ok(())
    }

    pub fn head_input_dim(&self, variant: Variant) -> usize {
        let mut d = 0;
        if variant.uses_tabular() {
            d += 2 * self.mlp_hidden;
        }
        if variant.uses_text() {
            d += 2 * self.lstm_hidden;
        }
        d
    }
}

/// Two hidden dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBranch {
    pub layers: [DenseLayer; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: [DenseGrads; 2],
}

impl MlpBranch {
    fn init(input: usize, hidden: usize, act: Activation, rng: &mut Rng) -> Self {
        let first = DenseLayer::init(input, hidden, act, rng);
        let second = DenseLayer::init(hidden, hidden, act, rng);
        Self {
            layers: [first, second],
        }
    }

    fn zeros(input: usize, hidden: usize, act: Activation) -> Self {
        Self {
            layers: [
                DenseLayer::zeros(input, hidden, act),
                DenseLayer::zeros(hidden, hidden, act),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[1].output_dim()
    }

    fn forward(&self, x: &[f64]) -> Result<(Tensor1D, [DenseCache; 2])> {
        let (h1, c1) = self.layers[0].forward(x)?;
        let (h2, c2) = self.layers[1].forward(&h1)?;
        Ok((h2, [c1, c2]))
    }

    fn backward_into(&self, caches: &[DenseCache; 2], up: &[f64], grads: &mut MlpGrads) -> Result<Tensor1D> {
        let [g0, g1] = &mut grads.layers;
        let d1 = self.layers[1].backward_into(&caches[1], up, g1)?;
        self.layers[0].backward_into(&caches[0], &d1, g0)
    }

    fn zeros_like(&self) -> MlpGrads {
        MlpGrads {
            layers: [
                DenseGrads::zeros_like(&self.layers[0]),
                DenseGrads::zeros_like(&self.layers[1]),
            ],
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.layers[0].output_dim() != self.layers[1].input_dim() {
            return Err(Error::shape(
                "MlpBranch",
                format!("{name}.0 out {}", self.layers[0].output_dim()),
                format!("{name}.1 in {}", self.layers[1].input_dim()),
            ));
        }
        Ok(())
    }
}

macro_rules! mlp_blocks {
    ($ty:ty) => {
        impl ParamSet for $ty {
            fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
                let mut out = self.layers[0].blocks(&join(prefix, "0"));
                out.extend(self.layers[1].blocks(&join(prefix, "1")));
                out
            }

            fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
                let [a, b] = &mut self.layers;
                let mut out = a.blocks_mut(&join(prefix, "0"));
                out.extend(b.blocks_mut(&join(prefix, "1")));
                out
            }
        }
    };
}

mlp_blocks!(MlpBranch);
mlp_blocks!(MlpGrads);

/// BiLSTM encoder followed by attention pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct TextBranch {
    pub encoder: BiLstmEncoder,
    pub attention: FeedforwardAttention,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextGrads {
    pub encoder: BiLstmGrads,
    pub attention: AttentionGrads,
}

macro_rules! text_blocks {
    ($ty:ty) => {
        impl ParamSet for $ty {
            fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
                let mut out = self.encoder.blocks(&join(prefix, "encoder"));
                out.extend(self.attention.blocks(&join(prefix, "attention")));
                out
            }

            fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
                let mut out = self.encoder.blocks_mut(&join(prefix, "encoder"));
                out.extend(self.attention.blocks_mut(&join(prefix, "attention")));
                out
            }
        }
    };
}

text_blocks!(TextBranch);
text_blocks!(TextGrads);

impl TextBranch {
    fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.attention.dim() != self.encoder.output_dim() {
            return Err(Error::shape(
                "TextBranch",
                format!("encoder out {}", self.encoder.output_dim()),
                format!("attention dim {}", self.attention.dim()),
            ));
        }
        Ok(())
    }
}

/// Inputs for one example. Branches a variant does not use are ignored.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub numerical: &'a [f64],
    pub categorical: &'a [f64],
    pub seq: &'a EmbeddedSequence,
}

/// Inverted dropout on the branch outputs, training only.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub probs: Tensor1D,
    pub top_k: Vec<usize>,
}

pub struct ForwardCache {
    num: Option<[DenseCache; 2]>,
    cat: Option<[DenseCache; 2]>,
    text: Option<(BiLstmCache, AttentionCache)>,
    head: DenseCache,
    dropout_mask: Option<Tensor1D>,
    widths: [usize; 3],
    pub probs: Tensor1D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub mlp_num: Option<MlpGrads>,
    pub mlp_cat: Option<MlpGrads>,
    pub text: Option<TextGrads>,
    pub head: DenseGrads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    variant: Variant,
    pub mlp_num: Option<MlpBranch>,
    pub mlp_cat: Option<MlpBranch>,
    pub text: Option<TextBranch>,
    pub head: DenseLayer,
}

impl FusionModel {
    /// Initializes every parameter from `rng` in block order.
    pub fn build(config: &ModelConfig, variant: Variant, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let act = config.hidden_activation;
        let (mlp_num, mlp_cat) = if variant.uses_tabular() {
            (
                Some(MlpBranch::init(config.num_feature_dim, config.mlp_hidden, act, rng)),
                Some(MlpBranch::init(config.cat_feature_dim, config.mlp_hidden, act, rng)),
            )
        } else {
            (None, None)
        };
        let text = variant.uses_text().then(|| TextBranch {
            encoder: BiLstmEncoder::init(config.embed_dim, config.lstm_hidden, rng),
            attention: FeedforwardAttention::init(2 * config.lstm_hidden, rng),
        });
        let head = DenseLayer::init(
            config.head_input_dim(variant),
            config.num_classes,
            Activation::Identity,
            rng,
        );
        Self::from_parts(config.clone(), variant, mlp_num, mlp_cat, text, head)
    }

    /// All-zero parameters with the right shapes.
    pub fn zeros(config: &ModelConfig, variant: Variant) -> Result<Self> {
        config.validate()?;
        let act = config.hidden_activation;
        let tab = variant.uses_tabular();
        Self::from_parts(
            config.clone(),
            variant,
            tab.then(|| MlpBranch::zeros(config.num_feature_dim, config.mlp_hidden, act)),
            tab.then(|| MlpBranch::zeros(config.cat_feature_dim, config.mlp_hidden, act)),
            variant.uses_text().then(|| TextBranch {
                encoder: BiLstmEncoder::zeros(config.embed_dim, config.lstm_hidden),
                attention: FeedforwardAttention::zeros(2 * config.lstm_hidden),
            }),
            DenseLayer::zeros(config.head_input_dim(variant), config.num_classes, Activation::Identity),
        )
    }

    /// Assembles a model from explicit parts, checking every shape against
    /// `config` and each other.
    pub fn from_parts(
        config: ModelConfig,
        variant: Variant,
        mlp_num: Option<MlpBranch>,
        mlp_cat: Option<MlpBranch>,
        text: Option<TextBranch>,
        head: DenseLayer,
    ) -> Result<Self> {
        config.validate()?;
        let want_tab = variant.uses_tabular();
        if mlp_num.is_some() != want_tab || mlp_cat.is_some() != want_tab || text.is_some() != variant.uses_text() {
            return Err(Error::Config(format!("branches present do not match variant {variant}")));
        }
        let mut head_in = 0;
        for (name, branch, input) in [
            ("mlp_num", &mlp_num, config.num_feature_dim),
            ("mlp_cat", &mlp_cat, config.cat_feature_dim),
        ] {
            if let Some(b) = branch {
                b.validate(name)?;
                if b.input_dim() != input || b.output_dim() != config.mlp_hidden {
                    return Err(Error::shape(
                        "FusionModel",
                        format!("{name} expected {input} -> {}", config.mlp_hidden),
                        format!("{} -> {}", b.input_dim(), b.output_dim()),
                    ));
                }
                head_in += b.output_dim();
            }
        }
        if let Some(t) = &text {
            t.validate()?;
            if t.encoder.input_dim() != config.embed_dim || t.encoder.hidden_dim() != config.lstm_hidden {
                return Err(Error::shape(
                    "FusionModel",
                    format!("encoder expected {} -> {}", config.embed_dim, config.lstm_hidden),
                    format!("{} -> {}", t.encoder.input_dim(), t.encoder.hidden_dim()),
                ));
            }
            head_in += t.encoder.output_dim();
        }
        if head.input_dim() != head_in || head.output_dim() != config.num_classes {
            return Err(Error::shape(
                "FusionModel head",
                format!("expected {head_in} -> {}", config.num_classes),
                format!("{} -> {}", head.input_dim(), head.output_dim()),
            ));
        }
        if head.activation != Activation::Identity {
            return Err(Error::Config("head must use the identity activation".into()));
        }
        Ok(Self {
            config,
            variant,
            mlp_num,
            mlp_cat,
            text,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn head_input_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn forward(&self, input: &ModelInput<'_>) -> Result<(Tensor1D, ForwardCache)> {
        self.forward_with(input, None)
    }

    pub fn forward_with(&self, input: &ModelInput<'_>, dropout: Option<Dropout>) -> Result<(Tensor1D, ForwardCache)> {
        let mut concat = Vec::with_capacity(self.head.input_dim());
        let mut widths = [0; 3];
        let num = match &self.mlp_num {
            Some(b) => {
                let (out, cache) = b
                    .forward(input.numerical)
                    .map_err(|e| branch_err("numerical", e))?;
                widths[0] = out.len();
                concat.extend(out);
                Some(cache)
            }
            None => None,
        };
        let cat = match &self.mlp_cat {
            Some(b) => {
                let (out, cache) = b
                    .forward(input.categorical)
                    .map_err(|e| branch_err("categorical", e))?;
                widths[1] = out.len();
                concat.extend(out);
                Some(cache)
            }
            None => None,
        };
        let text = match &self.text {
            Some(t) => {
                let (h, enc_cache) = t.encoder.forward(&input.seq.vectors)?;
                let (a, _, attn_cache) = t.attention.forward(&h, &input.seq.mask)?;
                widths[2] = a.len();
                concat.extend(a);
                Some((enc_cache, attn_cache))
            }
            None => None,
        };
        let dropout_mask = match dropout {
            Some(d) if d.rate > 0.0 => {
                let mut rng = Rng::new(d.seed);
                let keep = 1.0 - d.rate;
                let mask: Tensor1D = (0..concat.len())
                    .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                concat.iter_mut().zip(&mask).for_each(|(c, m)| *c *= m);
                Some(mask)
            }
            _ => None,
        };
        let (probs, head) = classifier_forward(&self.head, &concat)?;
        Ok((
            probs.clone(),
            ForwardCache {
                num,
                cat,
                text,
                head,
                dropout_mask,
                widths,
                probs,
            },
        ))
    }

    /// Gradients of `weight * -ln probs[label]` for the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, label: usize, weight: f64) -> Result<ModelGrads> {
        let mut dlogits = cross_entropy_logit_grad(&cache.probs, label)?;
        if weight != 1.0 {
            dlogits.iter_mut().for_each(|g| *g *= weight);
        }
        let mut grads = self.zero_grads();
        let mut dc = self.head.backward_into(&cache.head, &dlogits, &mut grads.head)?;
        if let Some(mask) = &cache.dropout_mask {
            dc.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        let [wn, wc, _] = cache.widths;
        let (d_num, rest) = dc.split_at(wn);
        let (d_cat, d_text) = rest.split_at(wc);
        if let (Some(b), Some(c), Some(g)) = (&self.mlp_num, &cache.num, &mut grads.mlp_num) {
            b.backward_into(c, d_num, g)?;
        }
        if let (Some(b), Some(c), Some(g)) = (&self.mlp_cat, &cache.cat, &mut grads.mlp_cat) {
            b.backward_into(c, d_cat, g)?;
        }
        if let (Some(t), Some((enc_c, attn_c)), Some(g)) = (&self.text, &cache.text, &mut grads.text) {
            let dh = t.attention.backward_into(attn_c, d_text, &mut g.attention)?;
            // embeddings are frozen; the input gradient is dropped
            t.encoder.backward_into(enc_c, &dh, &mut g.encoder)?;
        }
        Ok(grads)
    }

    /// Cross-entropy loss and its gradients for one example.
    pub fn loss_and_grads(
        &self,
        input: &ModelInput<'_>,
        label: usize,
        weight: f64,
        dropout: Option<Dropout>,
    ) -> Result<(f64, ModelGrads)> {
        let (probs, cache) = self.forward_with(input, dropout)?;
        let loss = weight * crate::train::cross_entropy(&probs, label)?;
        let grads = self.backward(&cache, label, weight)?;
        Ok((loss, grads))
    }

    pub fn predict_topk(&self, input: &ModelInput<'_>, k: usize) -> Result<Prediction> {
        let (probs, _) = self.forward(input)?;
        let top_k = top_k_indices(&probs, k)?;
        Ok(Prediction { probs, top_k })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            mlp_num: self.mlp_num.as_ref().map(|b| b.zeros_like()),
            mlp_cat: self.mlp_cat.as_ref().map(|b| b.zeros_like()),
            text: self.text.as_ref().map(|t| TextGrads {
                encoder: t.encoder.zeros_like(),
                attention: t.attention.zeros_like(),
            }),
            head: DenseGrads::zeros_like(&self.head),
        }
    }
}

fn branch_err(branch: &str, e: Error) -> Error {
    match e {
        Error::Shape { op, left, right } => Error::Shape {
            op,
            left: format!("{branch} branch: {left}"),
            right,
        },
        other => other,
    }
}

macro_rules! model_blocks {
    ($ty:ty) => {
        impl ParamSet for $ty {
            fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
                let mut out = Vec::new();
                if let Some(b) = &self.mlp_num {
                    out.extend(b.blocks(&join(prefix, "mlp_num")));
                }
                if let Some(b) = &self.mlp_cat {
                    out.extend(b.blocks(&join(prefix, "mlp_cat")));
                }
                if let Some(t) = &self.text {
                    out.extend(t.blocks(prefix));
                }
                out.extend(self.head.blocks(&join(prefix, "head")));
                out
            }

            fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
                let mut out = Vec::new();
                if let Some(b) = &mut self.mlp_num {
                    out.extend(b.blocks_mut(&join(prefix, "mlp_num")));
                }
                if let Some(b) = &mut self.mlp_cat {
                    out.extend(b.blocks_mut(&join(prefix, "mlp_cat")));
                }
                if let Some(t) = &mut self.text {
                    out.extend(t.blocks_mut(prefix));
                }
                out.extend(self.head.blocks_mut(&join(prefix, "head")));
                out
            }
        }
    };
}

model_blocks!(FusionModel);
model_blocks!(ModelGrads);

/// Indices of the `k` largest probabilities, descending; ties go to the
/// lower class index.
pub fn top_k_indices(probs: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > probs.len() {
        return Err(Error::Argument(format!(
            "k = {k} out of range 1..={}",
            probs.len()
        )));
    }
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<FusionModel> {
    FusionModel::build(config, Variant::Fusion, rng)
}

pub fn build_mlp_only(config: &ModelConfig) -> Result<FusionModel> {
    FusionModel::build(config, Variant::Mlp, &mut Rng::new(config.seed))
}

pub fn build_text_only(config: &ModelConfig) -> Result<FusionModel> {
    FusionModel::build(config, Variant::Text, &mut Rng::new(config.seed))
}

/// One random example matching `config`, with the last sequence position
/// masked out. Used by gradient checks and tests.
pub fn random_input(config: &ModelConfig, rng: &mut Rng) -> (Tensor1D, Tensor1D, EmbeddedSequence) {
    let num = (0..config.num_feature_dim).map(|_| rng.normal(0.0, 1.0)).collect();
    let cat = (0..config.cat_feature_dim)
        .map(|_| if rng.bernoulli(0.4) { 1.0 } else { 0.0 })
        .collect();
    let t = config.max_seq_len;
    let real = if t > 1 { t - 1 } else { 1 };
    let vectors = Tensor2D::from_fn(t, config.embed_dim, |r, _| {
        if r < real {
            rng.normal(0.0, 1.0)
        } else {
            0.0
        }
    });
    let mask = (0..t).map(|r| r < real).collect();
    (
        num,
        cat,
        EmbeddedSequence {
            vectors,
            mask,
            oov_count: 0,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::{fill, flatten};

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_feature_dim: 5,
            cat_feature_dim: 4,
            embed_dim: 3,
            lstm_hidden: 2,
            mlp_hidden: 6,
            num_classes: 13,
            max_seq_len: 4,
            hidden_activation: Activation::Relu,
            seed: 1,
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = build(&cfg, &mut Rng::new(1)).unwrap();
        let b = build(&cfg, &mut Rng::new(1)).unwrap();
        let (fa, fb) = (flatten(&a), flatten(&b));
        assert!(fa.iter().zip(&fb).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn head_dim_arithmetic() {
        let cfg = ModelConfig {
            num_feature_dim: 100,
            cat_feature_dim: 20,
            lstm_hidden: 64,
            mlp_hidden: 64,
            embed_dim: 8,
            ..ModelConfig::default()
        };
        let m = build(&cfg, &mut Rng::new(2)).unwrap();
        assert_eq!(m.head_input_dim(), 256);
        assert_eq!(build_text_only(&cfg).unwrap().head_input_dim(), 128);
        assert_eq!(build_mlp_only(&cfg).unwrap().head_input_dim(), 128);
    }

    #[test]
    fn head_mismatch_rejected() {
        let cfg = small_config();
        let m = build(&cfg, &mut Rng::new(3)).unwrap();
        let bad_head = DenseLayer::zeros(m.head_input_dim() + 1, cfg.num_classes, Activation::Identity);
        let err = FusionModel::from_parts(cfg, Variant::Fusion, m.mlp_num, m.mlp_cat, m.text, bad_head);
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ModelConfig {
            num_classes: 1,
            ..small_config()
        };
        assert!(matches!(build(&cfg, &mut Rng::new(1)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_is_uniform() {
        let cfg = small_config();
        let mut m = build(&cfg, &mut Rng::new(4)).unwrap();
        fill(&mut m, 0.0);
        let (num, cat, seq) = random_input(&cfg, &mut Rng::new(5));
        let (p, _) = m
            .forward(&ModelInput {
                numerical: &num,
                categorical: &cat,
                seq: &seq,
            })
            .unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 13.0).abs() < 1e-15));
    }

    #[test]
    fn all_masked_text_errors() {
        let cfg = small_config();
        let m = build(&cfg, &mut Rng::new(4)).unwrap();
        let (num, cat, mut seq) = random_input(&cfg, &mut Rng::new(5));
        seq.mask.fill(false);
        let err = m
            .forward(&ModelInput {
                numerical: &num,
                categorical: &cat,
                seq: &seq,
            })
            .err()
            .unwrap();
        assert!(matches!(err, Error::NoAttendablePositions(_)));
    }

    #[test]
    fn mlp_only_ignores_text() {
        let cfg = small_config();
        let m = build_mlp_only(&cfg).unwrap();
        let (num, cat, seq) = random_input(&cfg, &mut Rng::new(6));
        let (_, _, seq2) = random_input(&cfg, &mut Rng::new(7));
        let p1 = m.predict_topk(&ModelInput { numerical: &num, categorical: &cat, seq: &seq }, 3).unwrap();
        let p2 = m.predict_topk(&ModelInput { numerical: &num, categorical: &cat, seq: &seq2 }, 3).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn topk_tie_break_and_range() {
        assert_eq!(top_k_indices(&[0.5, 0.3, 0.1, 0.1], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_k_indices(&[0.1, 0.1, 0.1, 0.7], 2).unwrap(), vec![3, 0]);
        let mut all = top_k_indices(&[0.2, 0.1, 0.4, 0.3], 4).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(top_k_indices(&[0.5, 0.5], 0).is_err());
        assert!(top_k_indices(&[0.5, 0.5], 3).is_err());
    }

    #[test]
    fn block_order_matches_grads() {
        let cfg = small_config();
        for v in Variant::ALL {
            let m = FusionModel::build(&cfg, v, &mut Rng::new(1)).unwrap();
            let g = m.zero_grads();
            let mb: Vec<_> = m.blocks("").into_iter().map(|b| (b.name, b.shape)).collect();
            let gb: Vec<_> = g.blocks("").into_iter().map(|b| (b.name, b.shape)).collect();
            assert_eq!(mb, gb);
        }
    }
}
