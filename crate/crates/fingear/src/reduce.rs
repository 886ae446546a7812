//! Deterministic dimensionality reduction for embedding vectors.
//!
//! The default reducer is a principal-component projection of
//! unit-normalized vectors (cosine-equivalent geometry) computed through the
//! Gram matrix, which keeps the eigenproblem at `n x n` for the usual case
//! of few points in a high-dimensional embedding space. A
//! neighborhood-preserving reducer can be plugged in behind [`Reducer`].

use nalgebra::DMatrix;

/// Anything that maps a batch of vectors to a lower-dimensional batch.
pub trait Reducer {
    fn reduce(&self, vectors: &[Vec<f64>], reduced_dim: usize) -> Vec<Vec<f64>>;
}

/// The default principal-component reducer.
#[derive(Debug, Clone, Copy, Default)]
pub struct PcaReducer;

impl Reducer for PcaReducer {
    fn reduce(&self, vectors: &[Vec<f64>], reduced_dim: usize) -> Vec<Vec<f64>> {
        reduce_dims(vectors, reduced_dim)
    }
}

/// Project `vectors` to `reduced_dim` principal components.
///
/// Inputs with fewer than two vectors, or whose dimension does not exceed
/// `reduced_dim`, pass through unchanged. A degenerate batch (all vectors
/// identical) maps every point to the origin.
pub fn reduce_dims(vectors: &[Vec<f64>], reduced_dim: usize) -> Vec<Vec<f64>> {
    let n = vectors.len();
    if n < 2 {
        return vectors.to_vec();
    }
    let dim = vectors[0].len();
    if dim <= reduced_dim {
        return vectors.to_vec();
    }

    // Unit-normalize, then center.
    let unit: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                v.clone()
            }
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for v in &unit {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = unit
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    // Gram matrix G = X X^T (n x n).
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            gram[(i, j)] = dot;
            gram[(j, i)] = dot;
        }
    }

    let total_var: f64 = (0..n).map(|i| gram[(i, i)]).sum();
    if total_var < 1e-12 {
        return vec![vec![0.0; reduced_dim]; n];
    }

    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    // Scores: column j of the output is u_j * sqrt(lambda_j).
    let mut out = vec![vec![0.0; reduced_dim]; n];
    for (col, &e) in order.iter().take(reduced_dim).enumerate() {
        let lambda = eig.eigenvalues[e].max(0.0);
        if lambda <= 1e-15 {
            continue;
        }
        let scale = lambda.sqrt();
        let mut column: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, e)] * scale).collect();
        // Deterministic sign: the largest-magnitude entry is positive.
        let pivot = column
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.abs()
                    .partial_cmp(&b.1.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .unwrap_or(0);
        if column[pivot] < 0.0 {
            for v in &mut column {
                *v = -*v;
            }
        }
        for i in 0..n {
            out[i][col] = column[i];
        }
    }
    out
}
