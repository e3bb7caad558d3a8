//! Seeded synthetic patch-feature benchmark for ablations and demos.
//!
//! Normal patches come from a few correlated directions ("modes") with
//! angular noise and a per-patch norm nuisance. Anomalous images carry one
//! contiguous blob of patches that share an off-manifold direction: either a
//! blend of two modes or a mode tilted toward an unseen direction.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::pipeline::{PipelineConfig, Scorer};
use crate::scoring::image_score;
use crate::tensor_io::{FeatureGrid, Mask, ReferencePool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub modes: usize,
    pub grid: (usize, usize),
    pub reference_images: usize,
    pub normal_queries: usize,
    pub anomalous_queries: usize,
    /// Cosine between any two mode directions.
    pub mode_correlation: f64,
    /// Std of the isotropic perturbation added to a unit mode direction.
    pub noise: f64,
    /// Patch norms are `norm * g * U[1 - norm_jitter, 1 + norm_jitter]` with a
    /// per-image gain `g ~ U[1 - gain_jitter, 1 + gain_jitter]`.
    pub norm: f64,
    pub norm_jitter: f64,
    pub gain_jitter: f64,
    /// Inclusive range of anomalous blob side lengths, in patches.
    pub blob: (usize, usize),
    /// Fraction of anomalous images whose blob blends two modes.
    pub blend_fraction: f64,
    /// Angle (radians) between a tilted anomaly and its source mode.
    pub tilt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: 32,
            modes: 3,
            grid: (8, 8),
            reference_images: 1,
            normal_queries: 200,
            anomalous_queries: 200,
            mode_correlation: 0.8,
            noise: 0.02,
            norm: 20.0,
            norm_jitter: 0.05,
            gain_jitter: 0.4,
            blob: (2, 3),
            blend_fraction: 0.5,
            tilt: 0.22,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub references: Vec<FeatureGrid>,
    pub queries: Vec<FeatureGrid>,
    pub labels: Vec<bool>,
    /// Patch-resolution masks (1 = injected patch).
    pub masks: Vec<Mask>,
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| StandardNormal.sample(rng))
}

/// Orthonormal vectors by Gram-Schmidt on Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, d: usize, n: usize) -> Vec<Array1<f64>> {
    let mut out: Vec<Array1<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian(rng, d);
        for u in &out {
            let p = v.dot(u);
            v.scaled_add(-p, u);
        }
        if v.dot(&v) > 1e-6 {
            out.push(unit(v));
        }
    }
    out
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    modes: Vec<Array1<f64>>,
    /// Directions never used by normal data.
    unseen: Vec<Array1<f64>>,
}

impl Generator<'_> {
    fn patch(&mut self, direction: &Array1<f64>, gain: f64) -> Array1<f64> {
        let d = self.cfg.dim;
        let mut v = direction.clone();
        v.scaled_add(self.cfg.noise, &gaussian(&mut self.rng, d));
        let j = self.cfg.norm_jitter;
        let scale = gain * self.cfg.norm * self.rng.random_range(1.0 - j..=1.0 + j);
        unit(v) * scale
    }

    /// Mode label per patch: one vertical band per mode (so every image shows
    /// every mode) plus one rectangle of a random mode on top.
    fn layout(&mut self) -> Array2<usize> {
        let (h, w) = self.cfg.grid;
        let m = self.cfg.modes;
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut self.rng);
        let mut cuts: Vec<usize> = rand::seq::index::sample(&mut self.rng, w.max(m) - 1, m - 1)
            .into_iter()
            .map(|c| c + 1)
            .collect();
        cuts.sort_unstable();
        let mut labels = Array2::zeros((h, w));
        for x in 0..w {
            let band = cuts.partition_point(|&c| c <= x);
            labels.column_mut(x).fill(order[band]);
        }
        let mode = self.rng.random_range(0..m);
        let y0 = self.rng.random_range(0..h);
        let x0 = self.rng.random_range(0..w);
        let y1 = (y0 + self.rng.random_range(1..=(h / 2).max(1))).min(h);
        let x1 = (x0 + self.rng.random_range(1..=(w / 2).max(1))).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                labels[[y, x]] = mode;
            }
        }
        labels
    }

    fn image(&mut self, id: String, anomalous: bool) -> Result<(FeatureGrid, Mask)> {
        let (h, w) = self.cfg.grid;
        let d = self.cfg.dim;
        let layout = self.layout();
        let g = self.cfg.gain_jitter;
        let gain = self.rng.random_range(1.0 - g..=1.0 + g);
        let mut data = Array2::<f32>::zeros((h * w, d));
        for y in 0..h {
            for x in 0..w {
                let dir = self.modes[layout[[y, x]]].clone();
                let p = self.patch(&dir, gain);
                data.row_mut(y * w + x).assign(&p.mapv(|v| v as f32));
            }
        }
        let mut mask = Array2::<u8>::zeros((h, w));
        if anomalous {
            let (lo, hi) = self.cfg.blob;
            let bh = self.rng.random_range(lo..=hi).min(h);
            let bw = self.rng.random_range(lo..=hi).min(w);
            let y0 = self.rng.random_range(0..=h - bh);
            let x0 = self.rng.random_range(0..=w - bw);
            let a = self.rng.random_range(0..self.modes.len());
            let dir = if self.rng.random_bool(self.cfg.blend_fraction) {
                let mut b = self.rng.random_range(0..self.modes.len() - 1);
                if b >= a {
                    b += 1;
                }
                unit(&self.modes[a] + &self.modes[b])
            } else {
                let u = self.unseen[self.rng.random_range(0..self.unseen.len())].clone();
                unit(&self.modes[a] * self.cfg.tilt.cos() + u * self.cfg.tilt.sin())
            };
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    let p = self.patch(&dir, gain);
                    data.row_mut(y * w + x).assign(&p.mapv(|v| v as f32));
                    mask[[y, x]] = 1;
                }
            }
        }
        Ok((FeatureGrid::new(id, h, w, data)?, Mask(mask)))
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.modes < 2 || self.dim < 2 * self.modes + 2 {
            return bad("need at least two modes and dim >= 2 * modes + 2");
        }
        if !(0.0..1.0).contains(&self.mode_correlation) {
            return bad("mode correlation must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.norm_jitter) || !(0.0..1.0).contains(&self.gain_jitter) || !(self.norm > 0.0) {
            return bad("norm must be positive and jitters in [0, 1)");
        }
        if self.blob.0 == 0 || self.blob.0 > self.blob.1 {
            return bad("blob range must be nonempty and start at 1 or more");
        }
        if self.grid.0 == 0 || self.grid.1 < self.modes || self.reference_images == 0 {
            return bad("grid must be at least one row by `modes` columns and reference count positive");
        }
        Ok(())
    }
}

/// Generate a benchmark. Query ids are `normal_XXXX` / `anomalous_XXXX`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthBenchmark> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = orthonormal(&mut rng, config.dim, 2 * config.modes + 2);
    let shared = &basis[0];
    let c = config.mode_correlation;
    let modes: Vec<Array1<f64>> = (0..config.modes)
        .map(|k| shared * c.sqrt() + &basis[1 + k] * (1.0 - c).sqrt())
        .collect();
    let unseen = basis[1 + config.modes..].to_vec();
    let mut g = Generator {
        cfg: config,
        rng,
        modes,
        unseen,
    };

    let mut references = Vec::with_capacity(config.reference_images);
    for i in 0..config.reference_images {
        references.push(g.image(format!("ref_{i:04}"), false)?.0);
    }
    let mut queries = Vec::new();
    let mut labels = Vec::new();
    let mut masks = Vec::new();
    for i in 0..config.normal_queries {
        let (grid, mask) = g.image(format!("normal_{i:04}"), false)?;
        queries.push(grid);
        masks.push(mask);
        labels.push(false);
    }
    for i in 0..config.anomalous_queries {
        let (grid, mask) = g.image(format!("anomalous_{i:04}"), true)?;
        queries.push(grid);
        masks.push(mask);
        labels.push(true);
    }
    Ok(SynthBenchmark {
        references,
        queries,
        labels,
        masks,
    })
}

impl SynthBenchmark {
    /// Image-level AUROC of one method, scoring each query by its maximum patch energy.
    pub fn image_auroc(&self, config: &PipelineConfig) -> Result<f64> {
        let pool = ReferencePool::from_grids(&self.references)?;
        let scorer = Scorer::new(pool, config.clone())?;
        let scores = self
            .queries
            .iter()
            .map(|q| image_score(&scorer.patch_energies(q.features())?))
            .collect::<Result<Vec<f64>>>()?;
        auroc(&scores, &self.labels)
    }
}
