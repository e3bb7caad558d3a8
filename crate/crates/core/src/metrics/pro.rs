//! Per-region overlap (PRO) integrated over a bounded false-positive range.

use std::cmp::Ordering;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::Mask;

/// Where the binarization thresholds are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Thresholds {
    /// Nearest-rank quantiles of the pooled map values at `n` evenly spaced levels.
    Quantiles(usize),
    /// Every distinct map value.
    AllDistinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProConfig {
    pub fpr_limit: f64,
    pub thresholds: Thresholds,
}

impl Default for ProConfig {
    fn default() -> Self {
        ProConfig {
            fpr_limit: 0.3,
            thresholds: Thresholds::Quantiles(200),
        }
    }
}

/// 8-connected labelling of a binary mask. Returns per-pixel labels
/// (0 = background, components numbered from 1) and the component count.
pub fn connected_components(mask: &Array2<u8>) -> (Array2<u32>, usize) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut next = 0u32;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask[[y, x]] == 0 || labels[[y, x]] != 0 {
                continue;
            }
            next += 1;
            labels[[y, x]] = next;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let ny = cy as isize + dy;
                        let nx = cx as isize + dx;
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask[[ny, nx]] != 0 && labels[[ny, nx]] == 0 {
                            labels[[ny, nx]] = next;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Trapezoidal area of a nondecreasing `(fpr, value)` curve on `[0, limit]`.
pub(crate) fn area_up_to(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for pair in points.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_at = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_at) / 2.0;
            break;
        }
    }
    area
}

/// Normalized PRO area for FPR in `[0, fpr_limit]`, pooling all images.
pub fn pro(maps: &[Array2<f32>], masks: &[Mask], config: &ProConfig) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} maps for {} masks",
            maps.len(),
            masks.len()
        )));
    }
    if !(config.fpr_limit > 0.0 && config.fpr_limit <= 1.0) {
        return Err(Error::InvalidConfig(format!("fpr limit {} outside (0, 1]", config.fpr_limit)));
    }

    // Pixel records: (value, component id or None for normal pixels).
    let mut pixels: Vec<(f32, Option<usize>)> = Vec::new();
    let mut component_sizes: Vec<usize> = Vec::new();
    for (map, mask) in maps.iter().zip(masks) {
        if map.dim() != mask.0.dim() {
            return Err(Error::ShapeMismatch(format!(
                "map {:?} vs mask {:?}",
                map.dim(),
                mask.0.dim()
            )));
        }
        let (labels, count) = connected_components(&mask.0);
        let base = component_sizes.len();
        component_sizes.extend(std::iter::repeat_n(0, count));
        for (&v, &lab) in map.iter().zip(labels.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteScalar { index: pixels.len() });
            }
            if lab == 0 {
                pixels.push((v, None));
            } else {
                let c = base + lab as usize - 1;
                component_sizes[c] += 1;
                pixels.push((v, Some(c)));
            }
        }
    }
    if component_sizes.is_empty() {
        return Err(Error::NoAnomalousPixels);
    }
    let n_normal = pixels.iter().filter(|p| p.1.is_none()).count();
    if n_normal == 0 {
        return Err(Error::SingleClass);
    }

    pixels.sort_unstable_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let mut thresholds: Vec<f32> = match config.thresholds {
        Thresholds::AllDistinct => pixels.iter().map(|p| p.0).collect(),
        Thresholds::Quantiles(n) => {
            if n < 2 {
                return Err(Error::InvalidConfig("need at least two quantile levels".into()));
            }
            let last = (pixels.len() - 1) as f64;
            (0..n)
                .map(|k| {
                    let q = k as f64 / (n - 1) as f64;
                    // Descending storage: quantile q sits at position (1 - q) * last.
                    pixels[((1.0 - q) * last).round() as usize].0
                })
                .collect()
        }
    };
    thresholds.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    thresholds.dedup();

    let n_components = component_sizes.len() as f64;
    let mut overlap_sum = 0.0;
    let mut false_pos = 0usize;
    let mut curve = Vec::with_capacity(thresholds.len() + 1);
    curve.push((0.0, 0.0));
    let mut k = 0;
    for &t in &thresholds {
        while k < pixels.len() && pixels[k].0 >= t {
            match pixels[k].1 {
                None => false_pos += 1,
                Some(c) => overlap_sum += 1.0 / component_sizes[c] as f64,
            }
            k += 1;
        }
        curve.push((false_pos as f64 / n_normal as f64, overlap_sum / n_components));
    }
    Ok(area_up_to(&curve, config.fpr_limit) / config.fpr_limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eight_connectivity() {
        let m = array![[1u8, 0, 0, 1], [0, 1, 0, 0], [0, 0, 0, 1], [1, 0, 0, 1]];
        let (labels, n) = connected_components(&m);
        assert_eq!(n, 4);
        assert_eq!(labels[[0, 0]], labels[[1, 1]]);
        assert_eq!(labels[[2, 3]], labels[[3, 3]]);
        assert_ne!(labels[[0, 3]], labels[[2, 3]]);
    }

    #[test]
    fn area_clamps_at_limit() {
        let pts = [(0.0, 0.0), (0.2, 1.0), (1.0, 1.0)];
        assert!((area_up_to(&pts, 0.3) - (0.1 + 0.1)).abs() < 1e-12);
        let pts = [(0.0, 0.0), (0.6, 0.6)];
        assert!((area_up_to(&pts, 0.3) - 0.045).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted_maps() {
        let mask = array![[0u8, 0, 0, 0], [0, 1, 1, 0], [0, 1, 1, 0], [0, 0, 0, 1]];
        let map = mask.mapv(|v| v as f32);
        let inv = mask.mapv(|v| 1.0 - v as f32);
        let cfg = ProConfig::default();
        let m = Mask(mask);
        assert!((pro(&[map], &[m.clone()], &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!(pro(&[inv], &[m], &cfg).unwrap().abs() < 1.0 / 200.0);
    }

    #[test]
    fn requires_anomalies() {
        let m = Mask(Array2::zeros((3, 3)));
        assert!(matches!(
            pro(&[Array2::zeros((3, 3))], &[m], &ProConfig::default()),
            Err(Error::NoAnomalousPixels)
        ));
    }
}
