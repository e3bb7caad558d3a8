//! Patch-grid to image-resolution anomaly maps: upsampling and Gaussian smoothing.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub size: usize,
    pub sigma: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { size: 7, sigma: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Output `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub upsample: Upsample,
    pub smoothing: Option<GaussianSpec>,
}

impl MapConfig {
    pub fn new(image_size: (usize, usize)) -> Self {
        MapConfig {
            image_size,
            upsample: Upsample::Bilinear,
            smoothing: Some(GaussianSpec::default()),
        }
    }

    pub fn without_smoothing(mut self) -> Self {
        self.smoothing = None;
        self
    }
}

/// Normalized 1-D Gaussian taps centred on the middle element.
pub fn gaussian_kernel(spec: GaussianSpec) -> Result<Vec<f64>> {
    if spec.size == 0 || spec.size % 2 == 0 || !(spec.sigma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "gaussian kernel needs odd size and positive sigma, got {} / {}",
            spec.size, spec.sigma
        )));
    }
    let half = (spec.size / 2) as f64;
    let mut taps: Vec<f64> = (0..spec.size)
        .map(|k| {
            let x = k as f64 - half;
            (-x * x / (2.0 * spec.sigma * spec.sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Mirror index without repeating the edge sample (`d c b | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Separable convolution with reflect padding.
pub fn gaussian_blur(map: ArrayView2<'_, f64>, spec: GaussianSpec) -> Result<Array2<f64>> {
    let taps = gaussian_kernel(spec)?;
    let half = (taps.len() / 2) as isize;
    let (h, w) = map.dim();
    let mut horizontal = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &t) in taps.iter().enumerate() {
                acc += t * map[[y, reflect(x as isize + k as isize - half, w)]];
            }
            horizontal[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for (k, &t) in taps.iter().enumerate() {
            let src = reflect(y as isize + k as isize - half, h);
            for x in 0..w {
                out[[y, x]] += t * horizontal[[src, x]];
            }
        }
    }
    Ok(out)
}

/// Half-pixel-centred source coordinate and interpolation weight per output index.
fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

pub fn upsample(grid: ArrayView2<'_, f64>, size: (usize, usize), mode: Upsample) -> Array2<f64> {
    let (gh, gw) = grid.dim();
    let (h, w) = size;
    match mode {
        Upsample::Nearest => Array2::from_shape_fn((h, w), |(y, x)| grid[[y * gh / h, x * gw / w]]),
        Upsample::Bilinear => {
            let ty = bilinear_taps(h, gh);
            let tx = bilinear_taps(w, gw);
            Array2::from_shape_fn((h, w), |(y, x)| {
                let (y0, y1, fy) = ty[y];
                let (x0, x1, fx) = tx[x];
                let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
                let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
                top * (1.0 - fy) + bottom * fy
            })
        }
    }
}

/// Reshape row-major patch energies to the grid, upsample, and optionally smooth.
pub fn assemble_map(energies: &[f64], grid: (usize, usize), config: &MapConfig) -> Result<Array2<f64>> {
    let (gh, gw) = grid;
    if gh * gw != energies.len() || energies.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} energies for a {}x{} grid",
            energies.len(),
            gh,
            gw
        )));
    }
    let (h, w) = config.image_size;
    if h < gh || w < gw {
        return Err(Error::ShapeMismatch(format!(
            "image size {h}x{w} smaller than grid {gh}x{gw}"
        )));
    }
    let patches = ArrayView2::from_shape((gh, gw), energies).expect("length checked");
    let mut map = upsample(patches, (h, w), config.upsample);
    if let Some(spec) = config.smoothing {
        map = gaussian_blur(map.view(), spec)?;
    }
    map.mapv_inplace(|v| v.max(0.0));
    Ok(map)
}
