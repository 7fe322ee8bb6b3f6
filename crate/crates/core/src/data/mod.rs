//! Dataset schema, JSON-lines IO, feature encoding, splitting and the
//! synthetic generator.

mod features;
mod split;
pub mod synthetic;

pub use features::{fit_transform_features, FeaturePipeline, FeatureScaler, OneHotEncoder};
pub use split::split;
pub use synthetic::{generate_synthetic, Manifest, SyntheticConfig, SyntheticDataset};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbeddedSequence, EmbeddingTable};
use crate::error::{Error, Result};
use crate::textprep;

/// The 13 inquiry topics, in index order. "Other" is last.
pub const CLASS_NAMES: [&str; 13] = [
    "Cost Explanation",
    "Decline Follow Up",
    "Early Payoff",
    "Edit Offer if Already Accepted",
    "Funds ETA",
    "How to Enroll",
    "Increase Options",
    "Minimum Repayment Requirement",
    "Not Eligible for Renewal",
    "Renewal Eligibility",
    "No Credit Check",
    "Plan Completed",
    "Other",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

#[derive(Clone, Copy, Debug, Default)]
pub struct ClassVocabulary;

impl ClassVocabulary {
    pub fn names(&self) -> &'static [&'static str] {
        &CLASS_NAMES
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        CLASS_NAMES.iter().position(|c| *c == name)
    }

    pub fn name(&self, idx: usize) -> Option<&'static str> {
        CLASS_NAMES.get(idx).copied()
    }

    pub fn len(&self) -> usize {
        NUM_CLASSES
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One labeled inquiry as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub numerical: Vec<f64>,
    pub categorical: Vec<(String, String)>,
    pub label: String,
}

impl Example {
    pub fn label_index(&self) -> Option<usize> {
        ClassVocabulary.index_of(&self.label)
    }
}

pub fn parse_jsonl(reader: impl BufRead, source: &str) -> Result<Vec<Example>> {
    let mut out: Vec<Example> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: source.to_string(),
            line: line_no,
            msg,
        };
        let ex: Example = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if ex.label_index().is_none() {
            return Err(perr(format!("unknown label {:?}", ex.label)));
        }
        if ex.numerical.iter().any(|v| !v.is_finite()) {
            return Err(perr("non-finite numerical value".into()));
        }
        if let Some(first) = out.first() {
            if first.numerical.len() != ex.numerical.len() {
                return Err(perr(format!(
                    "numerical has {} entries, earlier records have {}",
                    ex.numerical.len(),
                    first.numerical.len()
                )));
            }
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// An example after feature encoding and embedding lookup; what the model
/// consumes.
#[derive(Clone, Debug)]
pub struct EncodedExample {
    pub id: String,
    pub numerical: Vec<f64>,
    pub categorical: Vec<f64>,
    pub seq: EmbeddedSequence,
    pub label: usize,
}

impl EncodedExample {
    pub fn input(&self) -> crate::fusion::ModelInput<'_> {
        crate::fusion::ModelInput {
            numerical: &self.numerical,
            categorical: &self.categorical,
            seq: &self.seq,
        }
    }
}

/// Normalizes, tokenizes and embeds the text of each example and applies the
/// fitted feature pipeline.
pub fn encode_examples(
    examples: &[Example],
    pipeline: &FeaturePipeline,
    table: &EmbeddingTable,
    max_seq_len: usize,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|ex| {
            let label = ex
                .label_index()
                .ok_or_else(|| Error::Argument(format!("unknown label {:?}", ex.label)).with_example(&ex.id))?;
            let (numerical, categorical) = pipeline.transform(ex).map_err(|e| e.with_example(&ex.id))?;
            let tokens = textprep::preprocess(&ex.text, max_seq_len)?;
            let seq = table.embed_sequence(&tokens, max_seq_len)?;
            Ok(EncodedExample {
                id: ex.id.clone(),
                numerical,
                categorical,
                seq,
                label,
            })
        })
        .collect()
}
