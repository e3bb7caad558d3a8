use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anoco::metrics::{evaluate, EvalOptions, EvalReport, EvalSample};
use anoco::scoring::{aggregate_views, assemble_map, gaussian_blur, AffineTransform, View};
use anoco::synth::{generate, SynthConfig};
use anoco::tensor_io::{file_stem, list_tensor_files, write_tensor_atomic};
use anoco::{AnomalyOutput, Error, FeatureGrid, MapConfig, Mask, Method, PipelineConfig, ReferencePool, Result, Scorer};
use log::{debug, info};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::output::{create_dir, io_err, write_csv, write_json, write_outputs};

/// Values swept in addition to any user-supplied lambdas.
pub const LAMBDA_GRID: [f64; 6] = [1e-24, 0.01, 0.1, 1.0, 10.0, 100.0];

pub fn run(cfg: &RunConfig) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| match cfg.mode {
        Mode::Score => run_score(cfg),
        Mode::Eval => run_eval(cfg),
        Mode::Ablate => run_ablate(cfg),
        Mode::SweepLambda => run_sweep_lambda(cfg),
        Mode::Synth => run_synth(cfg),
    })
}

/// Sidecar written next to each `<id>__view<k>.anof` query view.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewSidecar {
    pub view: usize,
    /// Affine map from view pixels to original-image pixels.
    pub to_original: [[f64; 3]; 2],
    /// Original image size `[H, W]`.
    pub image_size: [usize; 2],
}

struct QueryView {
    grid: FeatureGrid,
    to_original: AffineTransform,
    image_size: Option<(usize, usize)>,
}

struct Query {
    id: String,
    views: Vec<QueryView>,
}

fn split_view(stem: &str) -> Option<(&str, usize)> {
    let (base, k) = stem.rsplit_once("__view")?;
    Some((base, k.parse().ok()?))
}

fn read_sidecar(path: &Path) -> Result<ViewSidecar> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Plain `<id>.anof` files, or with `tta` the `<id>__view<k>.anof` views
/// (ordered by k) for ids that have them.
fn load_queries(dir: &Path, tta: bool) -> Result<Vec<Query>> {
    let mut plain = BTreeMap::new();
    let mut views: BTreeMap<String, BTreeMap<usize, std::path::PathBuf>> = BTreeMap::new();
    for path in list_tensor_files(dir)? {
        let stem = file_stem(&path);
        match split_view(&stem) {
            Some((base, k)) => {
                views.entry(base.to_string()).or_default().insert(k, path);
            }
            None => {
                plain.insert(stem, path);
            }
        }
    }
    let mut ids: Vec<String> = plain.keys().cloned().collect();
    if tta {
        ids.extend(views.keys().filter(|k| !plain.contains_key(*k)).cloned());
        ids.sort();
    } else if !views.is_empty() {
        info!("ignoring view files for {} ids (pass --tta to fuse them)", views.len());
    }
    if ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    ids.into_par_iter()
        .map(|id| {
            let vs = match (tta, views.get(&id)) {
                (true, Some(vs)) => vs
                    .iter()
                    .map(|(&k, path)| {
                        let side = read_sidecar(&path.with_extension("json"))?;
                        if side.view != k {
                            return Err(Error::InvalidConfig(format!(
                                "{}: sidecar says view {} but file is view {k}",
                                path.display(),
                                side.view
                            )));
                        }
                        let mut grid = FeatureGrid::load(path)?;
                        grid.image_id = id.clone();
                        Ok(QueryView {
                            grid,
                            to_original: AffineTransform {
                                matrix: side.to_original,
                            },
                            image_size: Some((side.image_size[0], side.image_size[1])),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                _ => vec![QueryView {
                    grid: FeatureGrid::load(&plain[&id])?,
                    to_original: AffineTransform::identity(),
                    image_size: None,
                }],
            };
            Ok(Query { id, views: vs })
        })
        .collect()
}

/// Pixel-centre rescale from a `from` frame to a `to` frame, applied after `t`.
fn rescaled(t: AffineTransform, from: (usize, usize), to: (usize, usize)) -> AffineTransform {
    if from == to {
        return t;
    }
    let sy = to.0 as f64 / from.0 as f64;
    let sx = to.1 as f64 / from.1 as f64;
    let [r0, r1] = t.matrix;
    AffineTransform {
        matrix: [
            [sx * r0[0], sx * r0[1], sx * r0[2] + 0.5 * sx - 0.5],
            [sy * r1[0], sy * r1[1], sy * r1[2] + 0.5 * sy - 0.5],
        ],
    }
}

fn map_config(size: (usize, usize), smoothing: bool) -> MapConfig {
    let m = MapConfig::new(size);
    if smoothing {
        m
    } else {
        m.without_smoothing()
    }
}

/// Score one query. With several views, maps are fused before smoothing and
/// the raw score is the maximum of the fused, unsmoothed map.
fn score_query(scorer: &Scorer, q: &Query, size: (usize, usize), cfg: &RunConfig) -> Result<AnomalyOutput> {
    let mc = map_config(size, cfg.smoothing);
    if let [only] = &q.views[..] {
        if only.image_size.is_none() {
            return scorer.score(&only.grid, &mc);
        }
    }
    let mut views = Vec::with_capacity(q.views.len());
    let mut first_energies = None;
    for v in &q.views {
        let e = scorer.patch_energies(v.grid.features())?;
        let vsize = v.image_size.unwrap_or(size);
        let map = assemble_map(&e, v.grid.grid(), &map_config(vsize, false))?;
        views.push(View {
            map,
            to_original: rescaled(v.to_original, vsize, size),
        });
        first_energies.get_or_insert(e);
    }
    let fused = aggregate_views(&views, size, cfg.weighting)?;
    let raw = fused.iter().copied().fold(0.0, f64::max);
    let smoothed = match mc.smoothing {
        Some(spec) => gaussian_blur(fused.view(), spec)?.mapv(|v| v.max(0.0)),
        None => fused,
    };
    let mut out = AnomalyOutput::with_map(
        q.id.clone(),
        q.views[0].grid.grid(),
        first_energies.unwrap_or_default(),
        smoothed,
        mc,
    )?;
    out.image_score = raw;
    Ok(out)
}

/// Explicit size, else the mask size, else the original image size from a
/// view sidecar, else the patch grid.
fn output_size(cfg: &RunConfig, q: &Query, mask: Option<&Mask>) -> (usize, usize) {
    cfg.image_size
        .or(mask.map(|m| m.0.dim()))
        .or(q.views[0].image_size)
        .unwrap_or(q.views[0].grid.grid())
}

fn score_all(
    scorer: &Scorer,
    queries: &[Query],
    masks: &BTreeMap<String, Mask>,
    cfg: &RunConfig,
) -> Result<Vec<AnomalyOutput>> {
    let t = Instant::now();
    let outs = queries
        .par_iter()
        .map(|q| {
            let size = output_size(cfg, q, masks.get(&q.id));
            score_query(scorer, q, size, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    info!(
        "{} scored {} images in {:.2?}",
        scorer.config().method,
        outs.len(),
        t.elapsed()
    );
    Ok(outs)
}

fn load_pool(cfg: &RunConfig) -> Result<ReferencePool> {
    let dir = cfg.refs.as_deref().expect("checked by RunConfig::resolve");
    let pool = ReferencePool::load_dir(dir)?;
    info!("reference pool: {} patches of dim {} from {} files", pool.len(), pool.dim(), pool.source_count());
    Ok(pool)
}

fn queries_dir(cfg: &RunConfig) -> &Path {
    cfg.queries.as_deref().expect("checked by RunConfig::resolve")
}

fn run_score(cfg: &RunConfig) -> Result<()> {
    let pool = load_pool(cfg)?;
    let scorer = Scorer::new(pool, cfg.pipeline.clone())?;
    let queries = load_queries(queries_dir(cfg), cfg.tta)?;
    let outs = score_all(&scorer, &queries, &BTreeMap::new(), cfg)?;
    write_outputs(&cfg.out, &outs, cfg.png)
}

fn parse_label(id: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "anomalous" | "anomaly" | "bad" => Ok(true),
        "0" | "false" | "normal" | "good" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("label '{v}' for {id} is not 0/1"))),
    }
}

#[derive(Deserialize)]
struct LabelRow {
    image_id: String,
    label: String,
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, bool>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, std::io::Error::other(e)))?;
    let mut labels = BTreeMap::new();
    for row in rdr.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let label = parse_label(&row.image_id, &row.label)?;
        labels.insert(row.image_id, label);
    }
    Ok(labels)
}

fn load_masks(dir: Option<&Path>, queries: &[Query]) -> Result<BTreeMap<String, Mask>> {
    let Some(dir) = dir else {
        return Ok(BTreeMap::new());
    };
    queries
        .par_iter()
        .filter_map(|q| {
            let path = dir.join(format!("{}.anof", q.id));
            path.is_file().then(|| Mask::load(&path).map(|m| (q.id.clone(), m)))
        })
        .collect()
}

/// Everything an evaluation needs that does not depend on the method.
struct EvalInputs {
    pool: ReferencePool,
    queries: Vec<Query>,
    labels: Vec<bool>,
    masks: BTreeMap<String, Mask>,
    pixel: bool,
}

fn eval_inputs(cfg: &RunConfig) -> Result<EvalInputs> {
    let pool = load_pool(cfg)?;
    let queries = load_queries(queries_dir(cfg), cfg.tta)?;
    let masks = load_masks(cfg.masks.as_deref(), &queries)?;
    let labels = match &cfg.labels {
        Some(path) => {
            let table = load_labels(path)?;
            queries
                .iter()
                .map(|q| {
                    table
                        .get(&q.id)
                        .copied()
                        .ok_or_else(|| Error::InvalidConfig(format!("no label for image {}", q.id)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => queries
            .iter()
            .map(|q| masks.get(&q.id).is_some_and(|m| m.0.iter().any(|&v| v == 1)))
            .collect(),
    };
    Ok(EvalInputs {
        pool,
        queries,
        labels,
        masks,
        pixel: cfg.masks.is_some(),
    })
}

fn evaluate_with(
    inputs: &EvalInputs,
    pipeline: &PipelineConfig,
    cfg: &RunConfig,
) -> Result<(Vec<AnomalyOutput>, EvalReport)> {
    let scorer = Scorer::new(inputs.pool.clone(), pipeline.clone())?;
    let outs = score_all(&scorer, &inputs.queries, &inputs.masks, cfg)?;
    let samples = outs
        .iter()
        .zip(&inputs.labels)
        .map(|(o, &anomalous)| {
            let mask = if inputs.pixel {
                match inputs.masks.get(&o.image_id) {
                    Some(m) => Some(m.clone()),
                    // Normal images may omit their all-zero mask.
                    None if !anomalous => Some(Mask(Array2::zeros(o.map.dim()))),
                    None => return Err(Error::MissingMask(o.image_id.clone())),
                }
            } else {
                None
            };
            Ok(EvalSample {
                image_id: o.image_id.clone(),
                image_score: o.image_score,
                anomalous,
                map: inputs.pixel.then(|| o.map.clone()),
                mask,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let options = EvalOptions {
        normalize_maps: cfg.normalize_maps,
        ..Default::default()
    };
    let report = evaluate(&samples, &options)?;
    Ok((outs, report))
}

#[derive(Serialize)]
struct EvalFile<'a> {
    method: Method,
    lambda: f64,
    report: &'a EvalReport,
}

fn run_eval(cfg: &RunConfig) -> Result<()> {
    let inputs = eval_inputs(cfg)?;
    let (outs, report) = evaluate_with(&inputs, &cfg.pipeline, cfg)?;
    write_outputs(&cfg.out, &outs, cfg.png)?;
    write_json(
        &cfg.out.join("eval.json"),
        &EvalFile {
            method: cfg.pipeline.method,
            lambda: cfg.pipeline.lambda,
            report: &report,
        },
    )?;
    let table = report.to_table(cfg.pipeline.method.name());
    anoco::tensor_io::write_atomic(cfg.out.join("eval.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn run_ablate(cfg: &RunConfig) -> Result<()> {
    let inputs = eval_inputs(cfg)?;
    create_dir(&cfg.out)?;
    let mut table = EvalReport::table_header();
    table.push('\n');
    let mut rows = Vec::new();
    for method in Method::ALL {
        let pipeline = PipelineConfig {
            method,
            ..cfg.pipeline.clone()
        };
        let (_, report) = evaluate_with(&inputs, &pipeline, cfg)?;
        table.push_str(&report.table_row(method.name()));
        table.push('\n');
        rows.push((method, report));
    }
    let json: Vec<EvalFile> = rows
        .iter()
        .map(|(method, report)| EvalFile {
            method: *method,
            lambda: cfg.pipeline.lambda,
            report,
        })
        .collect();
    write_json(&cfg.out.join("ablation.json"), &json)?;
    anoco::tensor_io::write_atomic(cfg.out.join("ablation.txt"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

/// The fixed grid plus user values, ascending and without duplicates.
pub fn sweep_grid(extra: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = LAMBDA_GRID.iter().chain(extra).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    metric: &'static str,
    value: f64,
}

fn report_metrics(r: &EvalReport) -> Vec<(&'static str, f64)> {
    let mut m = vec![
        ("image_auroc", r.image_auroc),
        ("image_aupr", r.image_aupr),
        ("image_f1_max", r.image_f1_max),
    ];
    if let Some(p) = &r.pixel {
        m.extend([("pixel_auroc", p.auroc), ("pixel_pro", p.pro), ("pixel_f1_max", p.f1_max)]);
    }
    m
}

fn run_sweep_lambda(cfg: &RunConfig) -> Result<()> {
    let inputs = eval_inputs(cfg)?;
    create_dir(&cfg.out)?;
    let mut rows = Vec::new();
    for lambda in sweep_grid(&cfg.lambdas) {
        let pipeline = PipelineConfig {
            lambda,
            ..cfg.pipeline.clone()
        };
        let (_, report) = evaluate_with(&inputs, &pipeline, cfg)?;
        debug!("lambda {lambda}: image auroc {}", report.image_auroc);
        rows.extend(
            report_metrics(&report)
                .into_iter()
                .map(|(metric, value)| SweepRow { lambda, metric, value }),
        );
    }
    write_csv(&cfg.out.join("sweep_lambda.csv"), &["lambda", "metric", "value"], &rows)
}

#[derive(Serialize)]
struct LabelOut<'a> {
    image_id: &'a str,
    label: u8,
}

/// Feature files, patch-resolution masks and labels for a synthetic benchmark.
fn run_synth(cfg: &RunConfig) -> Result<()> {
    let bench = generate(&SynthConfig::default(), cfg.seed)?;
    let dirs = ["refs", "queries", "masks"].map(|d| cfg.out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    let [refs, queries, masks] = &dirs;
    for g in &bench.references {
        write_tensor_atomic(refs.join(format!("{}.anof", g.image_id)), &g.to_tensor())?;
    }
    bench.queries.par_iter().zip(&bench.masks).try_for_each(|(g, m)| {
        write_tensor_atomic(queries.join(format!("{}.anof", g.image_id)), &g.to_tensor())?;
        write_tensor_atomic(masks.join(format!("{}.anof", g.image_id)), &m.to_tensor())
    })?;
    let labels: Vec<LabelOut> = bench
        .queries
        .iter()
        .zip(&bench.labels)
        .map(|(g, &l)| LabelOut {
            image_id: &g.image_id,
            label: l as u8,
        })
        .collect();
    write_csv(&cfg.out.join("labels.csv"), &["image_id", "label"], &labels)?;
    info!("wrote {} references and {} queries", bench.references.len(), bench.queries.len());
    Ok(())
}
