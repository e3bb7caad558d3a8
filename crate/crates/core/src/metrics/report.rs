use ndarray::Array2;
use serde::Serialize;

use super::{aupr, auroc, f1_max, pro, ProConfig};
use crate::error::{Error, Result};
use crate::tensor_io::Mask;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub image_id: String,
    pub image_score: f64,
    pub anomalous: bool,
    pub map: Option<Array2<f32>>,
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub pro: ProConfig,
    /// Min-max normalize each map before pooling pixels.
    pub normalize_maps: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelMetrics {
    pub auroc: f64,
    pub pro: f64,
    pub f1_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub image_auroc: f64,
    pub image_aupr: f64,
    pub image_f1_max: f64,
    pub pixel: Option<PixelMetrics>,
    pub n_images: usize,
    pub n_anomalous: usize,
}

fn normalized(map: &Array2<f32>) -> Array2<f32> {
    let (lo, hi) = map
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span > 0.0 {
        map.mapv(|v| (v - lo) / span)
    } else {
        map.mapv(|_| 0.0)
    }
}

pub fn evaluate(samples: &[EvalSample], options: &EvalOptions) -> Result<EvalReport> {
    let scores: Vec<f64> = samples.iter().map(|s| s.image_score).collect();
    let labels: Vec<bool> = samples.iter().map(|s| s.anomalous).collect();
    let image_auroc = auroc(&scores, &labels)?;
    let image_aupr = aupr(&scores, &labels)?;
    let image_f1_max = f1_max(&scores, &labels)?;

    let with_maps = samples.iter().filter(|s| s.map.is_some()).count();
    let pixel = if with_maps == 0 {
        None
    } else {
        if with_maps != samples.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} of {} images have anomaly maps",
                with_maps,
                samples.len()
            )));
        }
        let mut maps = Vec::with_capacity(samples.len());
        let mut masks = Vec::with_capacity(samples.len());
        for s in samples {
            let mask = s.mask.clone().ok_or_else(|| Error::MissingMask(s.image_id.clone()))?;
            let map = s.map.as_ref().expect("counted above");
            if map.dim() != mask.0.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: map {:?} vs mask {:?}",
                    s.image_id,
                    map.dim(),
                    mask.0.dim()
                )));
            }
            maps.push(if options.normalize_maps { normalized(map) } else { map.clone() });
            masks.push(mask);
        }
        let pix_scores: Vec<f64> = maps.iter().flat_map(|m| m.iter().map(|&v| v as f64)).collect();
        let pix_labels: Vec<bool> = masks.iter().flat_map(|m| m.0.iter().map(|&v| v == 1)).collect();
        if !pix_labels.iter().any(|&b| b) {
            return Err(Error::NoAnomalousPixels);
        }
        Some(PixelMetrics {
            auroc: auroc(&pix_scores, &pix_labels)?,
            pro: pro(&maps, &masks, &options.pro)?,
            f1_max: f1_max(&pix_scores, &pix_labels)?,
        })
    };
    Ok(EvalReport {
        image_auroc,
        image_aupr,
        image_f1_max,
        pixel,
        n_images: samples.len(),
        n_anomalous: labels.iter().filter(|&&b| b).count(),
    })
}

const NAME_WIDTH: usize = 28;

impl EvalReport {
    /// Two header lines in the layout image AUROC/AUPR/F1-MAX then pixel
    /// AUROC/PRO/F1-MAX.
    pub fn table_header() -> String {
        format!(
            "{:<nw$} {:^24} {:^24}\n{:<nw$} {:>7} {:>7} {:>8} {:>7} {:>7} {:>8}",
            "",
            "Image-level",
            "Pixel-level",
            "Method",
            "AUROC",
            "AUPR",
            "F1-MAX",
            "AUROC",
            "PRO",
            "F1-MAX",
            nw = NAME_WIDTH
        )
    }

    /// One table row with values in percent.
    pub fn table_row(&self, name: &str) -> String {
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let (pa, pp, pf) = match &self.pixel {
            Some(p) => (pct(p.auroc), pct(p.pro), pct(p.f1_max)),
            None => ("-".into(), "-".into(), "-".into()),
        };
        format!(
            "{:<nw$} {:>7} {:>7} {:>8} {:>7} {:>7} {:>8}",
            name,
            pct(self.image_auroc),
            pct(self.image_aupr),
            pct(self.image_f1_max),
            pa,
            pp,
            pf,
            nw = NAME_WIDTH
        )
    }

    pub fn to_table(&self, name: &str) -> String {
        format!("{}\n{}\n", Self::table_header(), self.table_row(name))
    }
}
