//! Differentiable layers with exact analytic backward passes.

mod attention;
mod dense;
mod lstm;
pub mod params;

pub use attention::{AttentionCache, AttentionGrads, FeedforwardAttention};
pub use dense::{Activation, DenseCache, DenseGrads, DenseLayer};
pub use lstm::{BiLstmCache, BiLstmEncoder, BiLstmGrads, LstmCell, LstmGrads, LstmStepCache};
pub use params::{Block, BlockMut, ParamSet};

use crate::error::{Error, Result};
use crate::numcore::{softmax, Tensor1D};

/// Softmax head: `probs = softmax(W^T c + b)`. The layer must use the
/// identity activation.
pub fn classifier_forward(head: &DenseLayer, c: &[f64]) -> Result<(Tensor1D, DenseCache)> {
    if head.activation != Activation::Identity {
        return Err(Error::Argument(format!(
            "classifier head must be linear, got {}",
            head.activation.name()
        )));
    }
    let (logits, cache) = head.forward(c)?;
    Ok((softmax(&logits)?, cache))
}

/// Gradient of `-ln probs[label]` w.r.t. the logits: `probs - onehot(label)`.
pub fn cross_entropy_logit_grad(probs: &[f64], label: usize) -> Result<Tensor1D> {
    if label >= probs.len() {
        return Err(Error::Argument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let mut g = probs.to_vec();
    g[label] -= 1.0;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor2D;

    #[test]
    fn zero_head_is_uniform() {
        let head = DenseLayer::zeros(5, 13, Activation::Identity);
        let (p, _) = classifier_forward(&head, &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 13.0).abs() < 1e-15));
    }

    #[test]
    fn forced_logits() {
        let head = DenseLayer::new(
            Tensor2D::zeros(1, 2),
            vec![3f64.ln(), 1f64.ln()],
            Activation::Identity,
        )
        .unwrap();
        let (p, _) = classifier_forward(&head, &[0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn nonlinear_head_rejected() {
        let head = DenseLayer::zeros(2, 3, Activation::Relu);
        assert!(classifier_forward(&head, &[0.0, 0.0]).is_err());
        assert!(cross_entropy_logit_grad(&[0.5, 0.5], 2).is_err());
    }
}
