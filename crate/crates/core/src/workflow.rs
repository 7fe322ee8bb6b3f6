//! File-level glue shared by the command line and the Python bindings:
//! split, fit features, encode, and the sidecar that lets a saved model be
//! reused on raw inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{encode_examples, split, EncodedExample, Example, FeaturePipeline, CLASS_NAMES};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::class_name;
use crate::fusion::{FusionModel, ModelConfig, ModelInput};
use crate::nn::Activation;
use crate::numcore::Rng;
use crate::textprep;
use crate::train::{self, TrainConfig, TrainReport};

pub const SIDECAR_VERSION: u32 = 1;

pub struct Prepared {
    pub pipeline: FeaturePipeline,
    pub train: Vec<EncodedExample>,
    pub val: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
    pub raw_test: Vec<Example>,
}

/// Stratified split, feature fitting on the training split, and encoding of
/// all three splits.
pub fn prepare(
    examples: &[Example],
    table: &EmbeddingTable,
    fractions: [f64; 3],
    split_seed: u64,
    max_seq_len: usize,
) -> Result<Prepared> {
    let (tr, va, te) = split(examples, fractions, split_seed)?;
    let pipeline = FeaturePipeline::fit(&tr)?;
    let enc = |s: &[Example]| encode_examples(s, &pipeline, table, max_seq_len);
    Ok(Prepared {
        train: enc(&tr)?,
        val: enc(&va)?,
        test: enc(&te)?,
        raw_test: te,
        pipeline,
    })
}

/// Model dimensions implied by a fitted pipeline and an embedding table.
pub fn model_config(
    pipeline: &FeaturePipeline,
    table: &EmbeddingTable,
    max_seq_len: usize,
    lstm_hidden: usize,
    mlp_hidden: usize,
    hidden_activation: Activation,
    seed: u64,
) -> ModelConfig {
    ModelConfig {
        num_feature_dim: pipeline.num_dim(),
        cat_feature_dim: pipeline.cat_dim(),
        embed_dim: table.dim(),
        lstm_hidden,
        mlp_hidden,
        num_classes: CLASS_NAMES.len(),
        max_seq_len,
        hidden_activation,
        seed,
    }
}

/// Everything besides the weights needed to run a saved model on raw
/// inputs. Stored as JSON next to the model file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub pipeline: FeaturePipeline,
    pub embeddings: Option<PathBuf>,
    pub vocab_limit: usize,
    pub max_seq_len: usize,
    pub split: [f64; 3],
    pub split_seed: u64,
}

/// `0` means no limit.
pub fn vocab_limit(limit: usize) -> usize {
    if limit == 0 {
        usize::MAX
    } else {
        limit
    }
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".pipeline.json");
    PathBuf::from(s)
}

impl Sidecar {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text)?;
        if s.version != SIDECAR_VERSION {
            return Err(Error::Argument(format!(
                "{}: sidecar version {} not supported (expected {SIDECAR_VERSION})",
                path.display(),
                s.version
            )));
        }
        Ok(s)
    }
}

/// Data and model settings for one training run from files.
#[derive(Clone, Debug)]
pub struct TrainJob {
    pub variant: crate::fusion::Variant,
    pub embeddings: PathBuf,
    pub vocab_limit: usize,
    pub max_seq_len: usize,
    pub lstm_hidden: usize,
    pub mlp_hidden: usize,
    pub activation: Activation,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub train: TrainConfig,
}

pub struct TrainedRun {
    pub model: FusionModel,
    pub report: TrainReport,
    pub prepared: Prepared,
}

/// Splits, fits and trains. The model is seeded from `job.train.seed`.
pub fn run_training(examples: &[Example], table: &EmbeddingTable, job: &TrainJob) -> Result<TrainedRun> {
    let prepared = prepare(examples, table, job.split, job.split_seed, job.max_seq_len)?;
    let seed = job.train.seed;
    let cfg = model_config(
        &prepared.pipeline,
        table,
        job.max_seq_len,
        job.lstm_hidden,
        job.mlp_hidden,
        job.activation,
        seed,
    );
    let model = FusionModel::build(&cfg, job.variant, &mut Rng::new(seed))?;
    let (model, report) = train::train(model, &prepared.train, &prepared.val, &job.train)?;
    Ok(TrainedRun { model, report, prepared })
}

/// Output paths written by [`save_run`].
pub struct RunPaths {
    pub model: PathBuf,
    pub sidecar: PathBuf,
    pub report: PathBuf,
    pub test_split: PathBuf,
}

pub fn append_ext(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes the model, its sidecar, the per-epoch TSV and the raw test split.
pub fn save_run(run: &TrainedRun, job: &TrainJob, out: &Path) -> Result<RunPaths> {
    crate::fusion::save(&run.model, out)?;
    let side = Sidecar {
        version: SIDECAR_VERSION,
        pipeline: run.prepared.pipeline.clone(),
        embeddings: Some(job.embeddings.clone()),
        vocab_limit: job.vocab_limit,
        max_seq_len: job.max_seq_len,
        split: job.split,
        split_seed: job.split_seed,
    };
    let paths = RunPaths {
        model: out.to_path_buf(),
        sidecar: sidecar_path(out),
        report: append_ext(out, ".report.tsv"),
        test_split: append_ext(out, ".test.jsonl"),
    };
    side.save(&paths.sidecar)?;
    run.report.write_tsv(&paths.report)?;
    crate::data::write_jsonl(&paths.test_split, &run.prepared.raw_test)?;
    Ok(paths)
}

/// A loaded model with its feature pipeline and embeddings, for raw inputs.
pub struct Predictor {
    pub model: FusionModel,
    pub pipeline: FeaturePipeline,
    pub table: EmbeddingTable,
}

impl Predictor {
    pub fn new(model: FusionModel, pipeline: FeaturePipeline, table: EmbeddingTable) -> Result<Self> {
        let cfg = model.config();
        let v = model.variant();
        if v.uses_tabular() && (pipeline.num_dim() != cfg.num_feature_dim || pipeline.cat_dim() != cfg.cat_feature_dim) {
            return Err(Error::shape(
                "Predictor",
                format!("pipeline {}+{}", pipeline.num_dim(), pipeline.cat_dim()),
                format!("model {}+{}", cfg.num_feature_dim, cfg.cat_feature_dim),
            ));
        }
        if v.uses_text() && table.dim() != cfg.embed_dim {
            return Err(Error::shape(
                "Predictor",
                format!("embedding dim {}", table.dim()),
                format!("model embed_dim {}", cfg.embed_dim),
            ));
        }
        Ok(Self { model, pipeline, table })
    }

    /// Loads `model`, its sidecar, and the embeddings (`embeddings` wins over
    /// the path recorded in the sidecar).
    pub fn load(model: &Path, embeddings: Option<&Path>) -> Result<Self> {
        let m = crate::fusion::load(model)?;
        let side = Sidecar::load(sidecar_path(model))?;
        let vec_path = embeddings
            .map(Path::to_path_buf)
            .or(side.embeddings.clone())
            .ok_or_else(|| Error::Argument("no embeddings path given or recorded".into()))?;
        let table = EmbeddingTable::load_vec_file(&vec_path, vocab_limit(side.vocab_limit))?;
        Self::new(m, side.pipeline, table)
    }

    pub fn encode(&self, examples: &[Example]) -> Result<Vec<EncodedExample>> {
        encode_examples(examples, &self.pipeline, &self.table, self.model.config().max_seq_len)
    }

    /// Top-k `(class name, probability)` pairs, most probable first.
    pub fn predict(
        &self,
        text: &str,
        numerical: &[f64],
        categorical: &[(String, String)],
        k: usize,
    ) -> Result<Vec<(String, f64)>> {
        let cfg = self.model.config();
        let (num, cat) = if self.model.variant().uses_tabular() {
            self.pipeline.transform_raw(numerical, categorical)?
        } else {
            (vec![], vec![])
        };
        let tokens = textprep::preprocess(text, cfg.max_seq_len)?;
        let seq = self.table.embed_sequence(&tokens, cfg.max_seq_len)?;
        let input = ModelInput {
            numerical: &num,
            categorical: &cat,
            seq: &seq,
        };
        let pred = self.model.predict_topk(&input, k)?;
        Ok(pred
            .top_k
            .iter()
            .map(|&c| (class_name(c, cfg.num_classes), pred.probs[c]))
            .collect())
    }
}
