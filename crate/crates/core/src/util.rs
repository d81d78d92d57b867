//! Small helpers shared across modules.

use sha2::{Digest, Sha256};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable `log(sum(exp(x)))`. Returns `-inf` when every term is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Sum of per-chunk partial results in chunk order.
///
/// Chunks have a fixed size independent of the thread pool, so the
/// reduction order (and therefore the floating point result) is the same on
/// every machine.
pub fn chunked_sum<T, F>(items: &[T], chunk: usize, f: F) -> f64
where
    T: Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    use rayon::prelude::*;
    let partials: Vec<f64> = items.par_chunks(chunk.max(1)).map(&f).collect();
    partials.iter().sum()
}
