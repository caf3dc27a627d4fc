use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Nearest-codeword assignment for a sequence of encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationResult {
    /// Selected codewords, `[T_d, D_c]`.
    pub embeddings: Tensor,
    pub indices: Vec<usize>,
    /// The encoder outputs that were quantized, `[T_d, D_c]`.
    pub encoded: Tensor,
}

/// Index of the nearest row of `codebook` (flat `[K, D]`) to `v` in
/// Euclidean distance. Ties go to the lowest index.
pub fn nearest(codebook: &[f64], dim: usize, v: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in codebook.chunks_exact(dim).enumerate() {
        let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Indices of the nearest codewords for every row of `rows` (flat, width
/// `dim`).
pub fn nearest_all(codebook: &[f64], dim: usize, rows: &[f64]) -> Vec<usize> {
    rows.chunks_exact(dim).map(|r| nearest(codebook, dim, r)).collect()
}

/// Snap each row of `encoded` (`[T, D]`, or any shape with trailing `D`) to
/// its nearest codeword.
pub fn quantize(encoded: &Tensor, codebook: &Tensor) -> Result<QuantizationResult> {
    if codebook.rank() != 2 || codebook.shape()[0] == 0 {
        return Err(Error::Config(format!(
            "codebook must be a non-empty [K, D] table, got {:?}",
            codebook.shape()
        )));
    }
    let dim = codebook.shape()[1];
    if encoded.rank() == 0 || encoded.last_dim() != dim {
        return Err(Error::dim(format!(
            "encoder output {:?} does not match codebook dim {}",
            encoded.shape(),
            dim
        )));
    }
    let indices = nearest_all(codebook.data(), dim, encoded.data());
    let mut q = Vec::with_capacity(encoded.numel());
    for &i in &indices {
        q.extend_from_slice(codebook.row(i));
    }
    Ok(QuantizationResult {
        embeddings: Tensor::new(encoded.shape(), q)?,
        indices,
        encoded: encoded.clone(),
    })
}
