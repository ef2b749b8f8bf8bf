//! Shared fixtures for the acceptance gate in `tests/acceptance.rs`.

use adb_core::boundary::euclidean;
use adb_core::data_io::{synthetic_centers, SyntheticConfig};
use adb_core::Result;

pub const NOISE_SIGMA: f64 = 1.0;

/// Eight well-separated Gaussian classes, 200 points each, in 16 dimensions.
pub fn benchmark_config() -> SyntheticConfig {
    SyntheticConfig {
        n_classes: 8,
        per_class: 200,
        dim: 16,
        centroid_scale: 5.0,
        noise_sigma: NOISE_SIGMA,
        seed: 11,
    }
}

/// Smallest pairwise distance between the class centers `cfg` draws.
pub fn min_centroid_gap(cfg: &SyntheticConfig) -> Result<f64> {
    let centers = synthetic_centers(cfg)?;
    let mut gap = f64::INFINITY;
    for (i, a) in centers.iter().enumerate() {
        for b in &centers[i + 1..] {
            gap = gap.min(euclidean(a, b));
        }
    }
    Ok(gap)
}
