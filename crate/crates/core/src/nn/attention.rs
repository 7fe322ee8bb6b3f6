//! Feed-forward attention: `psi_t = tanh(w . h_t + b)`, `alpha = softmax(psi)`
//! over unmasked positions, `a = sum_t alpha_t h_t`.

use super::params::{join, Block, BlockMut, ParamSet};
use crate::error::{Error, Result};
use crate::numcore::{dot, Rng, Tensor1D, Tensor2D};

#[derive(Clone, Debug, PartialEq)]
pub struct FeedforwardAttention {
    pub w: Tensor1D,
    pub b: f64,
}

pub type AttentionGrads = FeedforwardAttention;

#[derive(Clone, Debug)]
pub struct AttentionCache {
    h: Tensor2D,
    psi: Tensor1D,
    alphas: Tensor1D,
    mask: Vec<bool>,
}

impl FeedforwardAttention {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w: vec![0.0; dim],
            b: 0.0,
        }
    }

    /// Glorot-uniform over a `dim x 1` projection, zero bias.
    pub fn init(dim: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / (dim + 1) as f64).sqrt();
        Self {
            w: rng.vec_uniform(dim, -limit, limit),
            b: 0.0,
        }
    }

    pub fn zeros_like(&self) -> AttentionGrads {
        Self::zeros(self.dim())
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn forward(&self, h: &Tensor2D, mask: &[bool]) -> Result<(Tensor1D, Tensor1D, AttentionCache)> {
        if h.cols() != self.dim() || mask.len() != h.rows() {
            return Err(Error::shape(
                "attention_forward",
                format!("w len {}", self.dim()),
                format!("H {}x{}, mask len {}", h.rows(), h.cols(), mask.len()),
            ));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::NoAttendablePositions(mask.len()));
        }
        let psi: Tensor1D = (0..h.rows())
            .map(|t| if mask[t] { (dot(&self.w, h.row(t)) + self.b).tanh() } else { 0.0 })
            .collect();
        let max = psi
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(p, _)| *p)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut alphas: Tensor1D = psi
            .iter()
            .zip(mask)
            .map(|(p, m)| if *m { (p - max).exp() } else { 0.0 })
            .collect();
        let sum: f64 = alphas.iter().sum();
        alphas.iter_mut().for_each(|a| *a /= sum);

        let mut a = vec![0.0; self.dim()];
        for (t, &alpha) in alphas.iter().enumerate() {
            if mask[t] {
                for (acc, v) in a.iter_mut().zip(h.row(t)) {
                    *acc += alpha * v;
                }
            }
        }
        let cache = AttentionCache {
            h: h.clone(),
            psi,
            alphas: alphas.clone(),
            mask: mask.to_vec(),
        };
        Ok((a, alphas, cache))
    }

    /// Returns `dH`; parameter gradients are added into `grads`.
    pub fn backward_into(&self, cache: &AttentionCache, da: &[f64], grads: &mut AttentionGrads) -> Result<Tensor2D> {
        if da.len() != self.dim() || cache.h.cols() != self.dim() {
            return Err(Error::shape(
                "attention_backward",
                format!("dim {}", self.dim()),
                format!("upstream len {}", da.len()),
            ));
        }
        let t_len = cache.h.rows();
        // d alpha_t = da . h_t ; softmax backward restricted to unmasked rows
        let d_alpha: Tensor1D = (0..t_len)
            .map(|t| if cache.mask[t] { dot(da, cache.h.row(t)) } else { 0.0 })
            .collect();
        let weighted: f64 = cache.alphas.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
        let mut dh = Tensor2D::zeros(t_len, self.dim());
        for t in 0..t_len {
            if !cache.mask[t] {
                continue;
            }
            let alpha = cache.alphas[t];
            let d_psi = alpha * (d_alpha[t] - weighted);
            let psi = cache.psi[t];
            let d_score = d_psi * (1.0 - psi * psi);
            for (g, v) in grads.w.iter_mut().zip(cache.h.row(t)) {
                *g += d_score * v;
            }
            grads.b += d_score;
            for ((out, w), d) in dh.row_mut(t).iter_mut().zip(&self.w).zip(da) {
                *out = alpha * d + d_score * w;
            }
        }
        Ok(dh)
    }

    pub fn backward(&self, cache: &AttentionCache, da: &[f64]) -> Result<(Tensor2D, AttentionGrads)> {
        let mut grads = self.zeros_like();
        let dh = self.backward_into(cache, da, &mut grads)?;
        Ok((dh, grads))
    }
}

impl AttentionCache {
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }
}

impl ParamSet for FeedforwardAttention {
    fn blocks(&self, prefix: &str) -> Vec<Block<'_>> {
        vec![
            Block {
                name: join(prefix, "w"),
                shape: (1, self.w.len()),
                data: &self.w,
            },
            Block {
                name: join(prefix, "b"),
                shape: (1, 1),
                data: std::slice::from_ref(&self.b),
            },
        ]
    }

    fn blocks_mut(&mut self, prefix: &str) -> Vec<BlockMut<'_>> {
        let n = self.w.len();
        vec![
            BlockMut {
                name: join(prefix, "w"),
                shape: (1, n),
                data: &mut self.w,
            },
            BlockMut {
                name: join(prefix, "b"),
                shape: (1, 1),
                data: std::slice::from_mut(&mut self.b),
            },
        ]
    }
}
