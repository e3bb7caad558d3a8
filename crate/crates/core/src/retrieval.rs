//! Anchor-driven retrieval of normal reference patches.
//!
//! Each query patch picks its most similar reference (the anchor), then keeps
//! the longest prefix of the similarity-sorted pool whose members are more
//! similar to the anchor than the query itself is.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot_f32, norm_f64};
use crate::tensor_io::{FeatureGrid, ReferencePool};

/// Norms below this are treated as zero vectors with similarity 0.
pub const ZERO_NORM: f64 = 1e-12;

/// Candidates collected per query before falling back to a full sort.
const TOP_CANDIDATES: usize = 16;

/// Cosine similarity in f64. Returns 0 when either vector is (near) zero.
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = norm_f64(u);
    let nv = norm_f64(v);
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Rows scaled to unit length; near-zero rows become all zeros.
pub fn unit_rows(features: ArrayView2<'_, f32>) -> Array2<f32> {
    let mut out = features.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let n = norm_f64(row.as_slice().expect("standard layout"));
        if n < ZERO_NORM {
            row.fill(0.0);
        } else {
            let inv = 1.0 / n;
            row.mapv_inplace(|v| (v as f64 * inv) as f32);
        }
    }
    out
}

/// Reference pool prepared for repeated similarity queries.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    unit: Array2<f32>,
}

impl SimilarityIndex {
    pub fn new(pool: &ReferencePool) -> Self {
        SimilarityIndex {
            unit: unit_rows(pool.features()),
        }
    }

    pub fn len(&self) -> usize {
        self.unit.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.unit.ncols()
    }

    /// Query-to-reference cosine similarities, one row per query.
    pub fn similarities(&self, queries: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        if queries.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: queries.ncols(),
            });
        }
        let q = unit_rows(queries);
        let s = q.dot(&self.unit.t());
        // Degenerate shapes (a single reference) can come back column-major.
        let mut s = if s.is_standard_layout() { s } else { s.as_standard_layout().into_owned() };
        s.mapv_inplace(|v| v.clamp(-1.0, 1.0));
        Ok(s)
    }

    /// Similarity between two pool rows (the anchor test `a`).
    pub fn pool_similarity(&self, a: usize, b: usize) -> f32 {
        let ua = self.unit.row(a);
        let ub = self.unit.row(b);
        dot_f32(ua.as_slice().unwrap(), ub.as_slice().unwrap()).clamp(-1.0, 1.0)
    }
}

/// Descending similarity, ties by ascending reference index.
pub fn rank_order(s: &[f32], a: usize, b: usize) -> Ordering {
    s[b].partial_cmp(&s[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Per-query neighbor sets in compressed row form.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborAssignment {
    anchor_index: Vec<usize>,
    anchor_score: Vec<f64>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    similarity: Vec<f64>,
    pool_size: usize,
}

/// One query's view into a [`NeighborAssignment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborRow<'a> {
    pub anchor_index: usize,
    pub anchor_score: f64,
    /// Reference indices in rank order, anchor first.
    pub neighbors: &'a [usize],
    /// `s_ij` for each entry of `neighbors`.
    pub similarity: &'a [f64],
}

impl NeighborAssignment {
    /// Assemble from per-query `(neighbors, similarities)` lists; the first
    /// neighbor of each row is its anchor.
    pub fn from_rows(rows: Vec<(Vec<usize>, Vec<f64>)>, pool_size: usize) -> Result<Self> {
        let mut out = NeighborAssignment {
            anchor_index: Vec::with_capacity(rows.len()),
            anchor_score: Vec::with_capacity(rows.len()),
            offsets: vec![0],
            neighbors: Vec::new(),
            similarity: Vec::new(),
            pool_size,
        };
        for (i, (nbrs, sims)) in rows.into_iter().enumerate() {
            if nbrs.is_empty() || nbrs.len() != sims.len() {
                return Err(Error::InconsistentAssignment(format!(
                    "row {i} has {} neighbors and {} similarities",
                    nbrs.len(),
                    sims.len()
                )));
            }
            if let Some(&bad) = nbrs.iter().find(|&&j| j >= pool_size) {
                return Err(Error::InconsistentAssignment(format!(
                    "row {i} references {bad} outside a pool of {pool_size}"
                )));
            }
            out.anchor_index.push(nbrs[0]);
            out.anchor_score.push(sims[0]);
            out.neighbors.extend_from_slice(&nbrs);
            out.similarity.extend_from_slice(&sims);
            out.offsets.push(out.neighbors.len());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.anchor_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_index.is_empty()
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn row(&self, i: usize) -> NeighborRow<'_> {
        let r = self.offsets[i]..self.offsets[i + 1];
        NeighborRow {
            anchor_index: self.anchor_index[i],
            anchor_score: self.anchor_score[i],
            neighbors: &self.neighbors[r.clone()],
            similarity: &self.similarity[r],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = NeighborRow<'_>> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn total_edges(&self) -> usize {
        self.neighbors.len()
    }
}

#[inline(always)]
fn chunk_max(chunk: &[f32]) -> f32 {
    chunk.iter().fold(f32::NEG_INFINITY, |m, &v| if v > m { v } else { m })
}

/// Best `capacity` references of one similarity row in rank order.
fn top_candidates(s: &[f32], capacity: usize) -> Vec<usize> {
    const CHUNK: usize = 16;
    let capacity = capacity.min(s.len());
    if capacity == 0 {
        return Vec::new();
    }
    let maxima: Vec<f32> = s.chunks(CHUNK).map(chunk_max).collect();
    let mut candidates: Vec<usize> = if maxima.len() <= capacity {
        (0..s.len()).collect()
    } else {
        // At least `capacity` chunks reach `bound`, so every top entry is >= bound.
        let mut order = maxima.clone();
        let (_, &mut bound, _) =
            order.select_nth_unstable_by(capacity - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        let mut c = Vec::with_capacity(2 * capacity);
        for (ci, &m) in maxima.iter().enumerate() {
            if m >= bound {
                let base = ci * CHUNK;
                let end = (base + CHUNK).min(s.len());
                c.extend((base..end).filter(|&j| s[j] >= bound));
            }
        }
        c
    };
    candidates.sort_unstable_by(|&a, &b| rank_order(s, a, b));
    candidates.truncate(capacity);
    candidates
}

fn anchor_of(s: &[f32]) -> Result<(usize, f32)> {
    let mut best = None::<(usize, f32)>;
    for (j, &v) in s.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((j, v)),
        }
    }
    best.ok_or(Error::EmptyPool)
}

/// Anchor-consistent neighbor set for one row of query similarities.
fn consistent_row(s: &[f32], index: &SimilarityIndex) -> Result<(Vec<usize>, Vec<f64>)> {
    if s.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut order = top_candidates(s, TOP_CANDIDATES);
    let anchor = order[0];
    let s_star = s[anchor];
    let mut kept = vec![anchor];
    let mut pos = 1;
    loop {
        if pos == order.len() {
            if order.len() == s.len() {
                break;
            }
            // Prefix outgrew the candidate buffer: rank the whole pool.
            let mut full: Vec<usize> = (0..s.len()).collect();
            full.sort_unstable_by(|&a, &b| rank_order(s, a, b));
            debug_assert_eq!(&full[..order.len()], &order[..]);
            order = full;
        }
        let j = order[pos];
        if index.pool_similarity(anchor, j) > s_star {
            kept.push(j);
            pos += 1;
        } else {
            break;
        }
    }
    let sims = kept.iter().map(|&j| s[j] as f64).collect();
    Ok((kept, sims))
}

/// Most similar reference to `query`, lowest index on ties.
pub fn select_anchor(query: &[f32], index: &SimilarityIndex) -> Result<(usize, f64)> {
    if index.is_empty() {
        return Err(Error::EmptyPool);
    }
    let q = ArrayView2::from_shape((1, query.len()), query).expect("contiguous slice");
    let s = index.similarities(q)?;
    let (j, v) = anchor_of(s.row(0).as_slice().unwrap())?;
    Ok((j, v as f64))
}

/// Anchor-consistent neighbors of a single query vector.
pub fn anchor_consistent_neighbors(query: &[f32], index: &SimilarityIndex) -> Result<NeighborAssignment> {
    if index.is_empty() {
        return Err(Error::EmptyPool);
    }
    let q = ArrayView2::from_shape((1, query.len()), query).expect("contiguous slice");
    assign_features(q, index)
}

/// Anchor-consistent neighbor sets for every patch of a query grid.
pub fn assign_all(queries: &FeatureGrid, index: &SimilarityIndex) -> Result<NeighborAssignment> {
    assign_features(queries.features(), index)
}

pub fn assign_features(queries: ArrayView2<'_, f32>, index: &SimilarityIndex) -> Result<NeighborAssignment> {
    if index.is_empty() {
        return Err(Error::EmptyPool);
    }
    let s = index.similarities(queries)?;
    assign_from_similarities(s.view(), index)
}

/// Anchor-driven retrieval given a precomputed similarity matrix.
pub fn assign_from_similarities(s: ArrayView2<'_, f32>, index: &SimilarityIndex) -> Result<NeighborAssignment> {
    if s.ncols() != index.len() {
        return Err(Error::DimensionMismatch {
            expected: index.len(),
            found: s.ncols(),
        });
    }
    let s = s.as_standard_layout();
    let rows = s
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|row: ArrayView1<'_, f32>| consistent_row(row.as_slice().expect("standard layout"), index))
        .collect::<Result<Vec<_>>>()?;
    NeighborAssignment::from_rows(rows, index.len())
}

/// Plain top-`k` retrieval by query similarity, used by the ablation baselines.
pub fn top_k_neighbors(queries: ArrayView2<'_, f32>, index: &SimilarityIndex, k: usize) -> Result<NeighborAssignment> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(Error::EmptyPool);
    }
    let s = index.similarities(queries)?;
    let rows = s
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|row: ArrayView1<'_, f32>| {
            let row = row.as_slice().expect("standard layout");
            let top = top_candidates(row, k);
            let sims = top.iter().map(|&j| row[j] as f64).collect();
            (top, sims)
        })
        .collect();
    NeighborAssignment::from_rows(rows, index.len())
}
