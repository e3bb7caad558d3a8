//! Drift-based non-conformity energies, anomaly maps and image scores.

pub mod map;
pub mod views;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::ZERO_NORM;

pub use map::{assemble_map, gaussian_blur, gaussian_kernel, GaussianSpec, MapConfig, Upsample};
pub use views::{aggregate_views, AffineTransform, View, ViewWeighting};

/// How a patch's drift is turned into an energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonConformity {
    /// `|f̃ - f|² (1 - cos(f̃, f))`
    #[default]
    Product,
    /// `|f̃ - f|²`
    L2,
    /// `1 - cos(f̃, f)`
    CosDis,
}

/// `1 - cos(a, b)` evaluated as `|â - b̂|² / 2`, which keeps precision for
/// nearly parallel vectors. Degenerate (zero) vectors count as parallel.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < ZERO_NORM || nb < ZERO_NORM {
        return 0.0;
    }
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x / na - y / nb;
            d * d
        })
        .sum();
    (0.5 * sq).clamp(0.0, 2.0)
}

pub fn nonconformity_energy(original: &[f64], optimized: &[f64], metric: NonConformity) -> Result<f64> {
    if original.len() != optimized.len() {
        return Err(Error::DimensionMismatch {
            expected: original.len(),
            found: optimized.len(),
        });
    }
    let l2 = || {
        original
            .iter()
            .zip(optimized)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
    };
    Ok(match metric {
        NonConformity::Product => {
            let d2 = l2();
            if d2 == 0.0 {
                0.0
            } else {
                d2 * cosine_distance(optimized, original)
            }
        }
        NonConformity::L2 => l2(),
        NonConformity::CosDis => cosine_distance(optimized, original),
    })
}

/// One energy per query patch from original and optimized features.
pub fn patch_energies(
    original: ArrayView2<'_, f32>,
    optimized: ArrayView2<'_, f64>,
    metric: NonConformity,
) -> Result<Vec<f64>> {
    if original.dim() != optimized.dim() {
        return Err(Error::ShapeMismatch(format!(
            "original {:?} vs optimized {:?}",
            original.dim(),
            optimized.dim()
        )));
    }
    let mut f = vec![0.0; original.ncols()];
    original
        .rows()
        .into_iter()
        .zip(optimized.rows())
        .map(|(o, t)| {
            for (dst, &v) in f.iter_mut().zip(o.iter()) {
                *dst = v as f64;
            }
            nonconformity_energy(&f, t.as_slice().expect("standard layout"), metric)
        })
        .collect()
}

/// Max-pooled image score over raw patch energies.
pub fn image_score(energies: &[f64]) -> Result<f64> {
    energies
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or(Error::EmptyInput)
}

/// Per-image result: patch energies, dense map and image score.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyOutput {
    pub image_id: String,
    pub grid: (usize, usize),
    pub patch_energies: Vec<f64>,
    pub map: Array2<f32>,
    /// Max over raw patch energies.
    pub image_score: f64,
    /// Max over the final (upsampled, possibly smoothed) map.
    pub image_score_smoothed: f64,
    pub map_config: MapConfig,
}

impl AnomalyOutput {
    pub fn new(
        image_id: impl Into<String>,
        grid: (usize, usize),
        patch_energies: Vec<f64>,
        map_config: MapConfig,
    ) -> Result<Self> {
        if let Some(i) = patch_energies.iter().position(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "patch energy {i} is negative or non-finite"
            )));
        }
        let map = assemble_map(&patch_energies, grid, &map_config)?;
        Self::with_map(image_id, grid, patch_energies, map, map_config)
    }

    /// Use an already fused map (e.g. from test-time augmentation).
    pub fn with_map(
        image_id: impl Into<String>,
        grid: (usize, usize),
        patch_energies: Vec<f64>,
        map: Array2<f64>,
        map_config: MapConfig,
    ) -> Result<Self> {
        let image_score = image_score(&patch_energies)?;
        let image_score_smoothed = map.iter().copied().fold(0.0, f64::max);
        let mut out = Array2::<f32>::zeros(map.dim());
        Zip::from(&mut out).and(&map).for_each(|o, &v| *o = v as f32);
        Ok(AnomalyOutput {
            image_id: image_id.into(),
            grid,
            patch_energies,
            map: out,
            image_score,
            image_score_smoothed,
            map_config,
        })
    }
}
