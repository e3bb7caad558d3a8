//! Closed-form minimizer of the anchored Laplacian energy.
//!
//! With references clamped and no query-query edges, the system
//! `(L_qq + Λ) F̃_q = Λ F_q - L_qr F_r` is diagonal, so every query patch is
//! updated independently:
//!
//! ```text
//! f̃_i = (λ_i f_i + Σ_j w_ij r_j) / (λ_i + d_i)
//! ```

use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::linalg::{sq_dist_f32, sq_dist_mixed};

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Anchor weight for each query patch.
#[derive(Debug, Clone, PartialEq)]
pub enum Lambda {
    Shared(f64),
    PerQuery(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub lambda: Lambda,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig::shared(DEFAULT_LAMBDA)
    }
}

impl AnchorConfig {
    pub fn shared(lambda: f64) -> Self {
        AnchorConfig {
            lambda: Lambda::Shared(lambda),
        }
    }

    pub fn per_query(lambdas: Vec<f64>) -> Self {
        AnchorConfig {
            lambda: Lambda::PerQuery(lambdas),
        }
    }

    pub fn at(&self, i: usize) -> f64 {
        match &self.lambda {
            Lambda::Shared(v) => *v,
            Lambda::PerQuery(v) => v[i],
        }
    }

    pub fn validate(&self, n_queries: usize) -> Result<()> {
        match &self.lambda {
            Lambda::Shared(v) => check_lambda(0, *v),
            Lambda::PerQuery(v) => {
                if v.len() != n_queries {
                    return Err(Error::ShapeMismatch(format!(
                        "{} anchor weights for {} queries",
                        v.len(),
                        n_queries
                    )));
                }
                v.iter().enumerate().try_for_each(|(i, &x)| check_lambda(i, x))
            }
        }
    }
}

fn check_lambda(index: usize, value: f64) -> Result<()> {
    // NaN fails this comparison too.
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveLambda { index, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub optimized: Array2<f64>,
    /// `f̃_i - f_i` per query patch.
    pub drift: Array2<f64>,
    pub energy_before: f64,
    pub energy_after: f64,
}

pub(crate) fn check_shapes(
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
) -> Result<()> {
    if queries.nrows() != graph.n_queries() {
        return Err(Error::ShapeMismatch(format!(
            "{} query rows for a graph over {} queries",
            queries.nrows(),
            graph.n_queries()
        )));
    }
    if refs.nrows() != graph.pool_size() {
        return Err(Error::ShapeMismatch(format!(
            "{} reference rows for a graph over a pool of {}",
            refs.nrows(),
            graph.pool_size()
        )));
    }
    if queries.ncols() != refs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: refs.ncols(),
            found: queries.ncols(),
        });
    }
    Ok(())
}

/// `Σ_edges w_ij |x_i - r_j|² + Σ_i λ_i |x_i - f_i|²` at query state `state`.
pub fn total_energy(
    state: ArrayView2<'_, f64>,
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    config: &AnchorConfig,
) -> Result<f64> {
    check_shapes(queries, refs, graph)?;
    if state.dim() != queries.dim() {
        return Err(Error::ShapeMismatch(format!(
            "state {:?} vs queries {:?}",
            state.dim(),
            queries.dim()
        )));
    }
    config.validate(queries.nrows())?;
    let active = graph.active_refs();
    let per_query: Vec<f64> = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let x = state.row(i);
            let x = x.as_slice().expect("standard layout");
            let row = graph.row(i);
            let mut e = 0.0;
            for (&c, &w) in row.cols.iter().zip(row.weights) {
                e += w * sq_dist_mixed(x, refs.row(active[c]).as_slice().expect("standard layout"));
            }
            e + config.at(i) * sq_dist_mixed(x, queries.row(i).as_slice().expect("standard layout"))
        })
        .collect();
    Ok(per_query.iter().sum())
}

/// `Σ_j w_ij |f_i - r_j|²` for every query: the energy of the unmoved state
/// (the anchor term vanishes there).
fn energy_at_queries(queries: ArrayView2<'_, f32>, refs: ArrayView2<'_, f32>, graph: &BipartiteGraph) -> f64 {
    let active = graph.active_refs();
    let per_query: Vec<f64> = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let f = queries.row(i);
            let f = f.as_slice().expect("standard layout");
            let row = graph.row(i);
            row.cols
                .iter()
                .zip(row.weights)
                .map(|(&c, &w)| w * sq_dist_f32(f, refs.row(active[c]).as_slice().expect("standard layout")))
                .sum::<f64>()
        })
        .collect();
    per_query.iter().sum()
}

/// Per-patch closed-form solve. References are summed in ascending index order.
pub fn solve_anchored(
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    config: &AnchorConfig,
) -> Result<SolveResult> {
    check_shapes(queries, refs, graph)?;
    config.validate(queries.nrows())?;
    let (nq, d) = queries.dim();
    let active = graph.active_refs();
    let degree = graph.query_degree();
    let mut optimized = Array2::<f64>::zeros((nq, d));
    let mut drift = Array2::<f64>::zeros((nq, d));
    let energies: Vec<(f64, f64)> = optimized
        .as_slice_mut()
        .expect("fresh array")
        .par_chunks_mut(d.max(1))
        .zip(drift.as_slice_mut().expect("fresh array").par_chunks_mut(d.max(1)))
        .enumerate()
        .map(|(i, (out, dr))| {
            let lambda = config.at(i);
            let f = queries.row(i);
            let f = f.as_slice().expect("standard layout");
            for (o, &v) in out.iter_mut().zip(f) {
                *o = lambda * v as f64;
            }
            let row = graph.row(i);
            for (&c, &w) in row.cols.iter().zip(row.weights) {
                let r = refs.row(active[c]);
                for (o, &v) in out.iter_mut().zip(r.iter()) {
                    *o += w * v as f64;
                }
            }
            let den = lambda + degree[i];
            for (o, (dv, &v)) in out.iter_mut().zip(dr.iter_mut().zip(f)) {
                // No edge weight: the patch stays put exactly, not up to rounding.
                *o = if degree[i] == 0.0 { v as f64 } else { *o / den };
                *dv = *o - v as f64;
            }
            let mut before = 0.0;
            let mut after = lambda * sq_dist_mixed(out, f);
            for (&c, &w) in row.cols.iter().zip(row.weights) {
                let r = refs.row(active[c]);
                let r = r.as_slice().expect("standard layout");
                before += w * sq_dist_f32(f, r);
                after += w * sq_dist_mixed(out, r);
            }
            (before, after)
        })
        .collect();
    let (energy_before, energy_after) = energies
        .iter()
        .fold((0.0, 0.0), |(b, a), &(eb, ea)| (b + eb, a + ea));
    Ok(SolveResult {
        optimized,
        drift,
        energy_before,
        energy_after,
    })
}

/// Wrap an optimized state computed elsewhere (baselines) into a result.
pub(crate) fn finish(
    optimized: Array2<f64>,
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    config: &AnchorConfig,
) -> Result<SolveResult> {
    let mut drift = optimized.clone();
    Zip::from(&mut drift).and(&queries).for_each(|o, &f| *o -= f as f64);
    let energy_before = energy_at_queries(queries, refs, graph);
    let energy_after = total_energy(optimized.view(), queries, refs, graph, config)?;
    Ok(SolveResult {
        optimized,
        drift,
        energy_before,
        energy_after,
    })
}
