//! Minimal deterministic differentiable-computation layer.
//!
//! Graphs are built per sample on a [`Tape`] that borrows a [`ParamStore`];
//! [`Tape::backward`] accumulates parameter gradients into a [`GradStore`].
//! Everything is `f64` and single-threaded within a graph.

mod gradcheck;
mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{Adam, AdamConfig, Sgd};
pub use params::{GradStore, Param, ParamId, ParamStore};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Exact GELU, `x * Phi(x)` with the erf-based normal CDF.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_activations() {
        assert_eq!(gelu(0.0), 0.0);
        // 1 * Phi(1), Phi(1) = 0.8413447460685429
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-12);
        assert!((gelu(-1.0) - (-0.158_655_253_931_457_05)).abs() < 1e-12);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_equal_logits_is_uniform() {
        let p = softmax(&[3.0; 4]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let q = softmax(&[1000.0, -1000.0, 0.0]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
