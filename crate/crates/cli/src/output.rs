use std::fs;
use std::path::Path;

use anoco::tensor_io::{map_to_tensor, write_atomic, write_tensor_atomic};
use anoco::{AnomalyOutput, Error, Result};
use ndarray::Array2;
use serde::Serialize;

pub fn io_err(path: &Path, e: impl Into<std::io::Error>) -> Error {
    Error::IoFailure {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    io_err(path, std::io::Error::other(e))
}

/// Serialize CSV rows in memory, then write the file atomically.
pub fn write_csv<R: Serialize>(path: &Path, header: &[&str], rows: &[R]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Serialize)]
struct PngSidecar<'a> {
    image_id: &'a str,
    min: f32,
    max: f32,
}

/// 8-bit grayscale preview, min-max scaled. The sidecar keeps the range so
/// pixel values can be mapped back to energies.
fn write_png(dir: &Path, id: &str, map: &Array2<f32>) -> Result<()> {
    let (h, w) = map.dim();
    let (lo, hi) = map
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let pixels: Vec<u8> = map
        .iter()
        .map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round() as u8 } else { 0 })
        .collect();
    let path = dir.join(format!("{id}.png"));
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| io_err(&path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| io_err(&path, std::io::Error::other(e)))?;
    }
    write_atomic(&path, &bytes)?;
    write_json(
        &dir.join(format!("{id}.json")),
        &PngSidecar {
            image_id: id,
            min: lo,
            max: hi,
        },
    )
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    image_id: &'a str,
    score: f64,
    score_smoothed: f64,
}

/// `maps/<id>.anof` (plus PNG previews when asked) and `scores.csv` sorted by id.
pub fn write_outputs(out: &Path, outputs: &[AnomalyOutput], png: bool) -> Result<()> {
    use rayon::prelude::*;
    let maps = out.join("maps");
    create_dir(&maps)?;
    outputs.par_iter().try_for_each(|o| {
        write_tensor_atomic(maps.join(format!("{}.anof", o.image_id)), &map_to_tensor(&o.map))?;
        if png {
            write_png(&maps, &o.image_id, &o.map)?;
        }
        Ok::<_, Error>(())
    })?;
    let mut rows: Vec<ScoreRow> = outputs
        .iter()
        .map(|o| ScoreRow {
            image_id: &o.image_id,
            score: o.image_score,
            score_smoothed: o.image_score_smoothed,
        })
        .collect();
    rows.sort_by(|a, b| a.image_id.cmp(b.image_id));
    write_csv(&out.join("scores.csv"), &["image_id", "score", "score_smoothed"], &rows)
}
