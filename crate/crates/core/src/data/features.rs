use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};

/// Per-column standardization fitted on the training split. Constant columns
/// (std == 0) scale to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[&[f64]]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Argument("cannot fit a scaler on zero rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::shape("FeatureScaler::fit", dim, r.len()));
            }
            mean.iter_mut().zip(r.iter()).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::shape("FeatureScaler::transform", self.dim(), x.len()));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }
}

/// One-hot blocks per categorical feature, features and categories in sorted
/// order. Unseen categories and absent features encode as an all-zero block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    pub features: BTreeMap<String, BTreeMap<String, usize>>,
}

impl OneHotEncoder {
    pub fn fit(examples: &[Example]) -> Self {
        let mut features: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        for ex in examples {
            for (name, value) in &ex.categorical {
                features
                    .entry(name.clone())
                    .or_default()
                    .insert(value.clone(), 0);
            }
        }
        for cats in features.values_mut() {
            for (i, idx) in cats.values_mut().enumerate() {
                *idx = i;
            }
        }
        Self { features }
    }

    pub fn dim(&self) -> usize {
        self.features.values().map(|c| c.len()).sum()
    }

    pub fn transform(&self, categorical: &[(String, String)]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut offset = 0;
        for (name, cats) in &self.features {
            for (n, v) in categorical {
                if n == name {
                    if let Some(i) = cats.get(v) {
                        out[offset + i] = 1.0;
                    }
                }
            }
            offset += cats.len();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub scaler: FeatureScaler,
    pub encoder: OneHotEncoder,
}

impl FeaturePipeline {
    /// Fits on the training split only.
    pub fn fit(train: &[Example]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Argument("cannot fit features on an empty training split".into()));
        }
        let rows: Vec<&[f64]> = train.iter().map(|e| e.numerical.as_slice()).collect();
        Ok(Self {
            scaler: FeatureScaler::fit(&rows)?,
            encoder: OneHotEncoder::fit(train),
        })
    }

    pub fn num_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn cat_dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn transform_raw(&self, numerical: &[f64], categorical: &[(String, String)]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.scaler.transform(numerical)?, self.encoder.transform(categorical)))
    }

    pub fn transform(&self, ex: &Example) -> Result<(Vec<f64>, Vec<f64>)> {
        self.transform_raw(&ex.numerical, &ex.categorical)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub type EncodedFeatures = Vec<(Vec<f64>, Vec<f64>)>;

/// Fits on `train`, then transforms `train` followed by each of `others`.
pub fn fit_transform_features(
    train: &[Example],
    others: &[&[Example]],
) -> Result<(FeaturePipeline, Vec<EncodedFeatures>)> {
    let pipeline = FeaturePipeline::fit(train)?;
    let mut out = Vec::with_capacity(1 + others.len());
    for split in std::iter::once(train).chain(others.iter().copied()) {
        out.push(split.iter().map(|e| pipeline.transform(e)).collect::<Result<Vec<_>>>()?);
    }
    Ok((pipeline, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(num: &[f64], cats: &[(&str, &str)]) -> Example {
        Example {
            id: "x".into(),
            text: String::new(),
            numerical: num.to_vec(),
            categorical: cats.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            label: "Other".into(),
        }
    }

    #[test]
    fn two_point_standardization() {
        let train = [ex(&[1.0, 5.0], &[]), ex(&[3.0, 5.0], &[])];
        let (_, out) = fit_transform_features(&train, &[]).unwrap();
        assert_eq!(out[0][0].0, vec![-1.0, 0.0]);
        assert_eq!(out[0][1].0, vec![1.0, 0.0]);
    }

    #[test]
    fn unseen_category_is_zero_block() {
        let train = [
            ex(&[0.0], &[("plan", "basic"), ("region", "west")]),
            ex(&[1.0], &[("plan", "pro"), ("region", "east")]),
        ];
        let test = [ex(&[0.5], &[("plan", "enterprise"), ("region", "east")])];
        let (p, out) = fit_transform_features(&train, &[&test]).unwrap();
        assert_eq!(p.cat_dim(), 4);
        // blocks: plan{basic, pro}, region{east, west}
        assert_eq!(out[0][0].1, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(out[1][0].1, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn scaled_columns_have_unit_moments() {
        let mut rng = crate::numcore::Rng::new(12);
        let train: Vec<Example> = (0..200)
            .map(|_| ex(&[rng.normal(3.0, 2.0), rng.uniform(-10.0, 40.0), 7.0], &[]))
            .collect();
        let (_, out) = fit_transform_features(&train, &[]).unwrap();
        for col in 0..2 {
            let vals: Vec<f64> = out[0].iter().map(|(n, _)| n[col]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        assert!(out[0].iter().all(|(n, _)| n[2] == 0.0));
    }

    #[test]
    fn empty_train_errors() {
        assert!(fit_transform_features(&[], &[]).is_err());
    }
}
