//! Label-smoothing cross entropy (value-only wrapper; the tape op carries
//! the adjoint).

use crate::autodiff::kernels;
use crate::error::Result;
use crate::tensor::Tensor;

/// Mean over the batch of `-sum_k q_k log p_k` with
/// `q = (1-eps)*onehot + eps/K` and `p = softmax(logits)`.
pub fn label_smoothing_ce(logits: &Tensor, targets: &[usize], epsilon: f64) -> Result<f64> {
    kernels::label_smoothing_ce(logits, targets, epsilon).map(|(loss, _)| loss)
}
