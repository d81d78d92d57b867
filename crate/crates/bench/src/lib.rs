//! Shared fixtures for the benchmarks.

use r2sl_core::dataset::{synthesize, SynthOutput, SynthSpec};
use r2sl_core::Result;

/// Peaked three-state synthetic dataset of `n` records.
pub fn synthetic(n: usize, seed: u64) -> Result<SynthOutput> {
    let spec = SynthSpec::peaked(3, 200, 400, (8, 12, 10, 20), 0.8, vec![0.4, 1.0, 2.0], vec![0.5, 1.0, 1.6], n, seed);
    synthesize(&spec)
}
