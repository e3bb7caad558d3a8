//! Fusion of anomaly maps computed on geometrically augmented query views.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2x3 affine map `(x, y) -> (a x + b y + c, d x + e y + f)` on pixel-centre
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 2],
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn invert(&self) -> Option<Self> {
        let [[a, b, c], [d, e, f]] = self.matrix;
        let det = a * e - b * d;
        if det.abs() < 1e-12 || !det.is_finite() {
            return None;
        }
        let (ia, ib, id, ie) = (e / det, -b / det, -d / det, a / det);
        Some(AffineTransform {
            matrix: [[ia, ib, -(ia * c + ib * f)], [id, ie, -(id * c + ie * f)]],
        })
    }
}

/// An anomaly map in view coordinates plus the transform taking view pixels
/// back to original-image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub map: Array2<f64>,
    pub to_original: AffineTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewWeighting {
    #[default]
    Entropy,
    Uniform,
}

/// Shannon entropy (nats) of a nonnegative map viewed as a distribution over
/// pixels. All-zero maps carry no evidence and get the maximal value `ln N`.
pub fn map_entropy(map: &Array2<f64>) -> f64 {
    let total: f64 = map.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return (map.len().max(1) as f64).ln();
    }
    -map.iter()
        .map(|&v| v.max(0.0) / total)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `w_v ∝ exp(-H_v)`, shifted by the smallest entropy so the best view gets 1.
pub fn confidence_weights(entropies: &[f64]) -> Vec<f64> {
    let min = entropies.iter().copied().fold(f64::INFINITY, f64::min);
    entropies.iter().map(|h| (-(h - min)).exp()).collect()
}

fn sample_bilinear(map: &Array2<f64>, x: f64, y: f64) -> Option<f64> {
    const EPS: f64 = 1e-9;
    let (h, w) = map.dim();
    if x < -EPS || y < -EPS || x > (w - 1) as f64 + EPS || y > (h - 1) as f64 + EPS {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = map[[y0, x0]] * (1.0 - fx) + map[[y0, x1]] * fx;
    let bottom = map[[y1, x0]] * (1.0 - fx) + map[[y1, x1]] * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Warp every view back to the `size` original frame and take the per-pixel
/// weighted mean over the views that cover each pixel. Views are reduced in
/// the given order.
pub fn aggregate_views(views: &[View], size: (usize, usize), weighting: ViewWeighting) -> Result<Array2<f64>> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let weights = match weighting {
        ViewWeighting::Uniform => vec![1.0; views.len()],
        ViewWeighting::Entropy => {
            let h: Vec<f64> = views.iter().map(|v| map_entropy(&v.map)).collect();
            confidence_weights(&h)
        }
    };
    let inverses = views
        .iter()
        .map(|v| {
            v.to_original
                .invert()
                .ok_or_else(|| Error::InvalidConfig("view transform is not invertible".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    if views.iter().any(|v| v.map.is_empty()) {
        return Err(Error::ShapeMismatch("empty view map".into()));
    }
    let (h, w) = size;
    let mut num = Array2::<f64>::zeros((h, w));
    let mut den = Array2::<f64>::zeros((h, w));
    for ((view, inv), &wv) in views.iter().zip(&inverses).zip(&weights) {
        for y in 0..h {
            for x in 0..w {
                let (u, v) = inv.apply(x as f64, y as f64);
                if let Some(val) = sample_bilinear(&view.map, u, v) {
                    num[[y, x]] += wv * val;
                    den[[y, x]] += wv;
                }
            }
        }
    }
    ndarray::Zip::from(&mut num).and(&den).for_each(|n, &d| {
        *n = if d > 0.0 { *n / d } else { 0.0 };
    });
    Ok(num)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(y, x)| (y * w + x) as f64 * 0.1)
    }

    #[test]
    fn single_identity_view_is_passthrough() {
        let m = ramp(5, 6);
        let out = aggregate_views(
            &[View {
                map: m.clone(),
                to_original: AffineTransform::identity(),
            }],
            (5, 6),
            ViewWeighting::Entropy,
        )
        .unwrap();
        assert!(out.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn identical_views_cancel() {
        let m = ramp(4, 4);
        let v = View {
            map: m.clone(),
            to_original: AffineTransform::identity(),
        };
        let out = aggregate_views(&[v.clone(), v], (4, 4), ViewWeighting::Entropy).unwrap();
        assert!(out.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn flipped_view_warps_back() {
        let m = ramp(3, 4);
        let flipped = Array2::from_shape_fn((3, 4), |(y, x)| m[[y, 3 - x]]);
        // View pixel x maps to original 3 - x.
        let t = AffineTransform {
            matrix: [[-1.0, 0.0, 3.0], [0.0, 1.0, 0.0]],
        };
        let out = aggregate_views(
            &[View {
                map: flipped,
                to_original: t,
            }],
            (3, 4),
            ViewWeighting::Uniform,
        )
        .unwrap();
        assert!(out.iter().zip(m.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn out_of_frame_pixels_are_excluded() {
        let a = Array2::from_elem((2, 4), 1.0);
        let b = Array2::from_elem((2, 4), 3.0);
        // b is shifted right by two pixels: original columns 0 and 1 are uncovered.
        let shift = AffineTransform {
            matrix: [[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]],
        };
        let out = aggregate_views(
            &[
                View {
                    map: a,
                    to_original: AffineTransform::identity(),
                },
                View {
                    map: b,
                    to_original: shift,
                },
            ],
            (2, 4),
            ViewWeighting::Uniform,
        )
        .unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn entropy_weighting_prefers_peaked_view() {
        let (h, w) = (64, 64);
        let mut peaked = Array2::<f64>::zeros((h, w));
        peaked[[10, 20]] = 1.0;
        let flat = Array2::from_elem((h, w), 1.0);
        let he = map_entropy(&flat);
        assert!((he - ((h * w) as f64).ln()).abs() < 1e-9);
        assert_eq!(map_entropy(&peaked), 0.0);
        let out = aggregate_views(
            &[
                View {
                    map: flat,
                    to_original: AffineTransform::identity(),
                },
                View {
                    map: peaked.clone(),
                    to_original: AffineTransform::identity(),
                },
            ],
            (h, w),
            ViewWeighting::Entropy,
        )
        .unwrap();
        // Flat view weight relative to peaked view is exp(-ln 4096) = 1/4096.
        let wf = 1.0 / 4096.0;
        let bound = wf / (1.0 + wf) + 1e-12;
        assert!(out.iter().zip(peaked.iter()).all(|(a, b)| (a - b).abs() <= bound));
    }

    #[test]
    fn twenty_nat_gap_is_negligible() {
        let wts = confidence_weights(&[20.0, 0.0]);
        let share = wts[0] / (wts[0] + wts[1]);
        assert!(share < 1e-6 / 1.0);
        // Fusing a constant-1 map with a one-hot map at that weight ratio.
        let fused = (wts[0] * 1.0 + wts[1] * 0.0) / (wts[0] + wts[1]);
        assert!(fused < 1e-6);
    }

    #[test]
    fn all_zero_maps_fall_back_to_uniform() {
        let z = Array2::<f64>::zeros((3, 3));
        let h = map_entropy(&z);
        assert_eq!(confidence_weights(&[h, h]), vec![1.0, 1.0]);
        assert!(matches!(aggregate_views(&[], (2, 2), ViewWeighting::Entropy), Err(Error::NoViews)));
    }

    #[test]
    fn affine_inverse_round_trips() {
        let t = AffineTransform {
            matrix: [[0.96, -0.2, 3.0], [0.25, 1.03, -2.0]],
        };
        let inv = t.invert().unwrap();
        for (x, y) in [(0.0, 0.0), (767.0, 0.0), (0.0, 767.0), (767.0, 767.0)] {
            let (u, v) = t.apply(x, y);
            let (bx, by) = inv.apply(u, v);
            assert!((bx - x).abs() < 1e-9 && (by - y).abs() < 1e-9);
        }
        let singular = AffineTransform {
            matrix: [[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]],
        };
        assert!(singular.invert().is_none());
    }
}
