//! Sparse bipartite query-reference graph and its Laplacian blocks.
//!
//! Only query-to-reference edges exist. References that no query selects are
//! dropped, so columns are indexed by a compact position into `active_refs`.

use std::io::{self, Write};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::norm_f64;
use crate::retrieval::NeighborAssignment;

/// Harmonic-mean norm compatibility `2|u||v| / (|u| + |v|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compatibility {
    pub value: f64,
    /// Both norms were zero; `value` is 0 instead of 0/0.
    pub both_zero: bool,
}

pub fn compatibility_from_norms(nu: f64, nv: f64) -> Compatibility {
    let sum = nu + nv;
    if sum <= 0.0 {
        return Compatibility {
            value: 0.0,
            both_zero: true,
        };
    }
    Compatibility {
        value: 2.0 * nu * nv / sum,
        both_zero: false,
    }
}

pub fn norm_compatibility(u: &[f32], v: &[f32]) -> Result<Compatibility> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(compatibility_from_norms(norm_f64(u), norm_f64(v)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    n_queries: usize,
    pool_size: usize,
    active_refs: Vec<usize>,
    ref_remap: Vec<Option<usize>>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    query_degree: Vec<f64>,
    ref_degree: Vec<f64>,
    clamped_edges: usize,
}

/// One query row of `W_qr`: compact columns ascending, with weights.
#[derive(Debug, Clone, Copy)]
pub struct GraphRow<'a> {
    pub cols: &'a [usize],
    pub weights: &'a [f64],
}

impl BipartiteGraph {
    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    /// Sorted original indices of references with at least one edge.
    pub fn active_refs(&self) -> &[usize] {
        &self.active_refs
    }

    /// Compact column for an original reference index, if it is active.
    pub fn compact_index(&self, original: usize) -> Option<usize> {
        self.ref_remap.get(original).copied().flatten()
    }

    pub fn row(&self, i: usize) -> GraphRow<'_> {
        let r = self.offsets[i]..self.offsets[i + 1];
        GraphRow {
            cols: &self.cols[r.clone()],
            weights: &self.weights[r],
        }
    }

    pub fn query_degree(&self) -> &[f64] {
        &self.query_degree
    }

    pub fn ref_degree(&self) -> &[f64] {
        &self.ref_degree
    }

    pub fn edge_count(&self) -> usize {
        self.cols.len()
    }

    /// Edges whose negative cosine was clamped to weight 0.
    pub fn clamped_edges(&self) -> usize {
        self.clamped_edges
    }

    /// `(query, original ref, weight)` triples in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_queries).flat_map(move |i| {
            let row = self.row(i);
            row.cols
                .iter()
                .zip(row.weights)
                .map(move |(&c, &w)| (i, self.active_refs[c], w))
        })
    }

    /// Coordinate-list text dump, one `query ref weight` line per edge.
    pub fn write_coo<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (i, j, w) in self.edges() {
            writeln!(out, "{i} {j} {w:e}")?;
        }
        Ok(())
    }

    /// Full Laplacian over queries then active references. Debug and test use
    /// only: quadratic in the node count.
    pub fn to_dense_laplacian(&self) -> Array2<f64> {
        let nq = self.n_queries;
        let n = nq + self.active_refs.len();
        let mut l = Array2::zeros((n, n));
        for i in 0..nq {
            let row = self.row(i);
            for (&c, &w) in row.cols.iter().zip(row.weights) {
                l[[i, nq + c]] -= w;
                l[[nq + c, i]] -= w;
                l[[i, i]] += w;
                l[[nq + c, nq + c]] += w;
            }
        }
        l
    }
}

/// Build the weighted bipartite graph `w_ij = max(s_ij, 0) * alpha_ij` over
/// the neighbor sets in `assignment`.
pub fn edge_weights(
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    assignment: &NeighborAssignment,
) -> Result<BipartiteGraph> {
    let nq = queries.nrows();
    let nr = refs.nrows();
    if assignment.len() != nq {
        return Err(Error::InconsistentAssignment(format!(
            "{} assignment rows for {} queries",
            assignment.len(),
            nq
        )));
    }
    if assignment.pool_size() != nr {
        return Err(Error::InconsistentAssignment(format!(
            "assignment built for a pool of {}, got {}",
            assignment.pool_size(),
            nr
        )));
    }
    if queries.ncols() != refs.ncols() {
        return Err(Error::DimensionMismatch {
            expected: refs.ncols(),
            found: queries.ncols(),
        });
    }

    let mut selected = vec![false; nr];
    for row in assignment.rows() {
        for &j in row.neighbors {
            selected[j] = true;
        }
    }
    let mut ref_remap = vec![None; nr];
    let mut active_refs = Vec::new();
    for (j, _) in selected.iter().enumerate().filter(|(_, &s)| s) {
        ref_remap[j] = Some(active_refs.len());
        active_refs.push(j);
    }
    let ref_norms: Vec<f64> = active_refs
        .iter()
        .map(|&j| norm_f64(refs.row(j).as_slice().expect("standard layout")))
        .collect();

    let mut offsets = Vec::with_capacity(nq + 1);
    offsets.push(0);
    let mut cols = Vec::with_capacity(assignment.total_edges());
    let mut weights = Vec::with_capacity(assignment.total_edges());
    let mut query_degree = Vec::with_capacity(nq);
    let mut ref_degree = vec![0.0; active_refs.len()];
    let mut clamped_edges = 0;
    let mut scratch: Vec<(usize, f64)> = Vec::new();

    for (i, row) in assignment.rows().enumerate() {
        let qn = norm_f64(queries.row(i).as_slice().expect("standard layout"));
        scratch.clear();
        for (&j, &s) in row.neighbors.iter().zip(row.similarity) {
            let c = ref_remap[j].expect("selected above");
            if s < 0.0 {
                clamped_edges += 1;
            }
            let alpha = compatibility_from_norms(qn, ref_norms[c]).value;
            scratch.push((c, s.max(0.0) * alpha));
        }
        scratch.sort_unstable_by_key(|&(c, _)| c);
        if scratch.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InconsistentAssignment(format!(
                "query {i} lists a reference twice"
            )));
        }
        let mut degree = 0.0;
        for &(c, w) in &scratch {
            cols.push(c);
            weights.push(w);
            degree += w;
            ref_degree[c] += w;
        }
        query_degree.push(degree);
        offsets.push(cols.len());
    }

    Ok(BipartiteGraph {
        n_queries: nq,
        pool_size: nr,
        active_refs,
        ref_remap,
        offsets,
        cols,
        weights,
        query_degree,
        ref_degree,
        clamped_edges,
    })
}

/// The two blocks the query solve needs: `L_qq = diag(D_q)` and `L_qr = -W_qr`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianBlocks {
    pub qq_diagonal: Vec<f64>,
    /// `(query, compact ref, value)` entries of `L_qr`.
    pub qr: Vec<(usize, usize, f64)>,
}

pub fn laplacian_blocks(graph: &BipartiteGraph) -> LaplacianBlocks {
    let mut qr = Vec::with_capacity(graph.edge_count());
    for i in 0..graph.n_queries() {
        let row = graph.row(i);
        qr.extend(row.cols.iter().zip(row.weights).map(|(&c, &w)| (i, c, -w)));
    }
    LaplacianBlocks {
        qq_diagonal: graph.query_degree.clone(),
        qr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{assign_features, SimilarityIndex};
    use crate::tensor_io::ReferencePool;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn random_instance(seed: u64, nq: usize, nr: usize, d: usize) -> (Array2<f32>, Array2<f32>, BipartiteGraph) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let refs = Array2::from_shape_fn((nr, d), |_| rng.random_range(-1.0f32..1.0) + 0.5);
        let qs = Array2::from_shape_fn((nq, d), |_| rng.random_range(-1.0f32..1.0) + 0.5);
        let idx = SimilarityIndex::new(&ReferencePool::new(refs.clone(), "r").unwrap());
        let a = assign_features(qs.view(), &idx).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        (qs, refs, g)
    }

    #[test]
    fn compatibility_examples() {
        assert_eq!(norm_compatibility(&[3.0, 4.0], &[0.0, 5.0]).unwrap().value, 5.0);
        let c = norm_compatibility(&[2.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((c.value - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(norm_compatibility(&[0.0, 0.0], &[1.0, 0.0]).unwrap().value, 0.0);
        let z = norm_compatibility(&[0.0], &[0.0]).unwrap();
        assert!(z.both_zero && z.value == 0.0);
    }

    #[test]
    fn single_edge_weight_and_laplacian() {
        let qs = array![[2.0f32, 0.0]];
        let refs = array![[1.0f32, 0.0]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![1.0])], 1).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        assert!((g.row(0).weights[0] - 4.0 / 3.0).abs() < 1e-12);
        let l = g.to_dense_laplacian();
        let w = 4.0 / 3.0;
        let expected = array![[w, -w], [-w, w]];
        assert!(l.iter().zip(expected.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
        let blocks = laplacian_blocks(&g);
        assert_eq!(blocks.qq_diagonal.len(), 1);
        assert!((blocks.qr[0].2 + w).abs() < 1e-12);
    }

    #[test]
    fn identical_neighbor_weight_is_norm() {
        let qs = array![[3.0f32, 4.0]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![1.0])], 1).unwrap();
        let g = edge_weights(qs.view(), qs.view(), &a).unwrap();
        assert!((g.row(0).weights[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn compaction_drops_unselected() {
        let qs = array![[1.0f32, 0.0], [0.0, 1.0]];
        let refs = array![[1.0f32, 0.1], [5.0, 5.0], [0.1, 1.0]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![0.99]), (vec![2], vec![0.99])], 3).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        assert_eq!(g.active_refs(), &[0, 2]);
        assert_eq!(g.compact_index(1), None);
        assert_eq!(g.compact_index(2), Some(1));
        let edges: Vec<_> = g.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn negative_similarity_is_clamped() {
        let qs = array![[1.0f32, 0.0]];
        let refs = array![[-1.0f32, 0.2]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![-0.98])], 1).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        assert_eq!(g.row(0).weights[0], 0.0);
        assert_eq!(g.clamped_edges(), 1);
    }

    #[test]
    fn inconsistent_assignment_rejected() {
        let qs = array![[1.0f32, 0.0], [0.0, 1.0]];
        let refs = array![[1.0f32, 0.0]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![1.0])], 1).unwrap();
        assert!(matches!(
            edge_weights(qs.view(), refs.view(), &a),
            Err(Error::InconsistentAssignment(_))
        ));
    }

    #[test]
    fn degrees_rows_and_psd() {
        for seed in 0..10 {
            let (_, _, g) = random_instance(seed, 8, 16, 6);
            let l = g.to_dense_laplacian();
            let n = l.nrows();
            for r in 0..n {
                let sum: f64 = l.row(r).sum();
                let scale = l[[r, r]].abs().max(1.0);
                assert!(sum.abs() <= 1e-6 * scale);
            }
            // L_qq 1 + L_qr 1 = 0
            let blocks = laplacian_blocks(&g);
            let mut acc = blocks.qq_diagonal.clone();
            for &(i, _, v) in &blocks.qr {
                acc[i] += v;
            }
            assert!(acc.iter().all(|v| v.abs() < 1e-9));
            for (c, &deg) in g.ref_degree().iter().enumerate() {
                let col: f64 = g.edges().filter(|&(_, j, _)| g.compact_index(j) == Some(c)).map(|e| e.2).sum();
                assert!((col - deg).abs() <= 1e-9 * deg.max(1.0));
                assert!(deg > 0.0);
            }
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let lx = l.dot(&ndarray::Array1::from(x.clone()));
                let quad: f64 = lx.iter().zip(&x).map(|(a, b)| a * b).sum();
                let nx: f64 = x.iter().map(|v| v * v).sum();
                assert!(quad >= -1e-6 * nx);
            }
        }
    }

    #[test]
    fn coo_dump_lines() {
        let (_, _, g) = random_instance(3, 4, 8, 3);
        let mut buf = Vec::new();
        g.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), g.edge_count());
        for (line, (i, j, w)) in text.lines().zip(g.edges()) {
            let parts: Vec<&str> = line.split(' ').collect();
            assert_eq!(parts[0].parse::<usize>().unwrap(), i);
            assert_eq!(parts[1].parse::<usize>().unwrap(), j);
            assert_eq!(parts[2].parse::<f64>().unwrap(), w);
        }
    }
}
