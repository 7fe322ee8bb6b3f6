//! Model file: a UTF-8 header of `key=value` lines terminated by `end`,
//! followed by every parameter block in header order as little-endian `f64`.
//!
//! ```text
//! fusenet-model
//! format_version=1
//! variant=fusion
//! num_feature_dim=20
//! ...
//! concat_order=numerical,categorical,text
//! blocks=27
//! block=mlp_num.0.weights 20 64
//! ...
//! end
//! <binary payload>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{FusionModel, ModelConfig, Variant, CONCAT_ORDER};
use crate::error::{Error, Result};
use crate::nn::{Activation, ParamSet};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "fusenet-model";
const END: &str = "end";

pub fn to_bytes(model: &FusionModel) -> Vec<u8> {
    let cfg = model.config();
    let blocks = model.blocks("");
    let mut header = String::new();
    let _ = writeln!(header, "{MAGIC}");
    let _ = writeln!(header, "format_version={FORMAT_VERSION}");
    let _ = writeln!(header, "variant={}", model.variant());
    let _ = writeln!(header, "num_feature_dim={}", cfg.num_feature_dim);
    let _ = writeln!(header, "cat_feature_dim={}", cfg.cat_feature_dim);
    let _ = writeln!(header, "embed_dim={}", cfg.embed_dim);
    let _ = writeln!(header, "lstm_hidden={}", cfg.lstm_hidden);
    let _ = writeln!(header, "mlp_hidden={}", cfg.mlp_hidden);
    let _ = writeln!(header, "num_classes={}", cfg.num_classes);
    let _ = writeln!(header, "max_seq_len={}", cfg.max_seq_len);
    let _ = writeln!(header, "hidden_activation={}", cfg.hidden_activation.name());
    let _ = writeln!(header, "seed={}", cfg.seed);
    let _ = writeln!(header, "concat_order={CONCAT_ORDER}");
    let _ = writeln!(header, "blocks={}", blocks.len());
    for b in &blocks {
        let _ = writeln!(header, "block={} {} {}", b.name, b.shape.0, b.shape.1);
    }
    let _ = writeln!(header, "{END}");

    let mut bytes = header.into_bytes();
    for b in &blocks {
        for v in b.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<FusionModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<FusionModel> {
    let mut lines = Vec::new();
    let mut pos = 0;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| corrupt("truncated header (no `end` line)"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + nl])
            .map_err(|_| corrupt("header is not valid UTF-8"))?;
        pos += nl + 1;
        if line == END {
            break;
        }
        lines.push(line);
    }
    let payload = &bytes[pos..];

    let mut iter = lines.into_iter();
    if iter.next() != Some(MAGIC) {
        return Err(corrupt(format!("missing `{MAGIC}` magic line")));
    }
    let mut fields: HashMap<&str, &str> = HashMap::new();
    let mut block_specs = Vec::new();
    for line in iter {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("header line {line:?} is not key=value")))?;
        if key == "block" {
            block_specs.push(parse_block_spec(value)?);
        } else if fields.insert(key, value).is_some() {
            return Err(corrupt(format!("duplicate header field `{key}`")));
        }
    }

    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| corrupt(format!("missing header field `{key}`")))
    };
    let num = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| corrupt(format!("header field `{key}` is not a count")))
    };

    let found: u32 = get("format_version")?
        .parse()
        .map_err(|_| corrupt("header field `format_version` is not an integer"))?;
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    let variant: Variant = get("variant")?
        .parse()
        .map_err(|_| corrupt("header field `variant` is invalid"))?;
    if get("concat_order")? != CONCAT_ORDER {
        return Err(corrupt(format!(
            "header field `concat_order` must be {CONCAT_ORDER}"
        )));
    }
    let hidden_activation = Activation::from_name(get("hidden_activation")?)
        .ok_or_else(|| corrupt("header field `hidden_activation` is invalid"))?;
    let config = ModelConfig {
        num_feature_dim: num("num_feature_dim")?,
        cat_feature_dim: num("cat_feature_dim")?,
        embed_dim: num("embed_dim")?,
        lstm_hidden: num("lstm_hidden")?,
        mlp_hidden: num("mlp_hidden")?,
        num_classes: num("num_classes")?,
        max_seq_len: num("max_seq_len")?,
        hidden_activation,
        seed: get("seed")?
            .parse()
            .map_err(|_| corrupt("header field `seed` is not an integer"))?,
    };
    let declared = num("blocks")?;
    if declared != block_specs.len() {
        return Err(corrupt(format!(
            "header field `blocks` says {declared}, {} block lines present",
            block_specs.len()
        )));
    }

    let mut model = FusionModel::zeros(&config, variant)
        .map_err(|e| corrupt(format!("config rejected: {e}")))?;
    let expected_len: usize = block_specs.iter().map(|(_, r, c)| r * c * 8).sum();
    if payload.len() != expected_len {
        return Err(corrupt(format!(
            "payload is {} bytes, header declares {expected_len} (truncated or corrupt file)",
            payload.len()
        )));
    }
    let targets = model.blocks_mut("");
    if targets.len() != block_specs.len() {
        return Err(corrupt(format!(
            "variant {variant} has {} parameter blocks, file lists {}",
            targets.len(),
            block_specs.len()
        )));
    }
    let mut offset = 0;
    for (target, (name, rows, cols)) in targets.into_iter().zip(&block_specs) {
        if &target.name != name || target.shape != (*rows, *cols) {
            return Err(corrupt(format!(
                "block `{name}` ({rows}x{cols}) does not match expected `{}` ({}x{})",
                target.name, target.shape.0, target.shape.1
            )));
        }
        for v in target.data.iter_mut() {
            let raw: [u8; 8] = payload[offset..offset + 8].try_into().unwrap();
            *v = f64::from_le_bytes(raw);
            offset += 8;
            if !v.is_finite() {
                return Err(corrupt(format!("block `{name}` contains a non-finite value")));
            }
        }
    }
    Ok(model)
}

fn parse_block_spec(value: &str) -> Result<(String, usize, usize)> {
    let parts: Vec<&str> = value.split(' ').collect();
    match parts.as_slice() {
        [name, r, c] => match (r.parse(), c.parse()) {
            (Ok(r), Ok(c)) => Ok((name.to_string(), r, c)),
            _ => Err(corrupt(format!("block line {value:?} has a bad shape"))),
        },
        _ => Err(corrupt(format!("block line {value:?} is not `name rows cols`"))),
    }
}
