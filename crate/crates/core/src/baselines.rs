//! Ablation competitors: k-NN distances, message passing, and graph energies
//! with plain top-k retrieval with or without query-query edges.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{compatibility_from_norms, BipartiteGraph};
use crate::linalg::{norm_f64, sq_dist_mixed};
use crate::retrieval::unit_rows;
use crate::solver::{check_shapes, finish, solve_anchored, total_energy, AnchorConfig, SolveResult};

pub const DEFAULT_SHRINKAGE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMetric {
    L2,
    Mahalanobis,
}

/// Whitening transform `x -> L⁻¹ x` for `LLᵀ = Σ + ε (tr Σ / d) I`.
#[derive(Debug, Clone)]
pub struct Whitener {
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl Whitener {
    pub fn fit(pool: ArrayView2<'_, f32>, shrinkage: f64) -> Result<Self> {
        let (n, d) = pool.dim();
        if n < 2 {
            return Err(Error::PoolTooSmall {
                required: 2,
                available: n,
            });
        }
        if !(shrinkage > 0.0) {
            return Err(Error::InvalidConfig(format!("shrinkage must be positive, got {shrinkage}")));
        }
        let x = DMatrix::from_fn(n, d, |i, j| pool[[i, j]] as f64);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for j in 0..d {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let mut cov = centered.transpose() * &centered / (n - 1) as f64;
        let ridge = shrinkage * cov.trace() / d as f64;
        // An all-identical pool has zero trace; keep the system definite.
        let ridge = if ridge > 0.0 { ridge } else { shrinkage };
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        let chol = Cholesky::new(cov).ok_or(Error::SingularSystem)?;
        Ok(Whitener { mean, chol })
    }

    pub fn transform(&self, rows: ArrayView2<'_, f32>) -> Array2<f32> {
        let (n, d) = rows.dim();
        let mut out = Array2::<f32>::zeros((n, d));
        let l = self.chol.l();
        for (i, row) in rows.axis_iter(Axis(0)).enumerate() {
            let mut v = DVector::from_fn(d, |j, _| row[j] as f64 - self.mean[j]);
            l.solve_lower_triangular_mut(&mut v);
            for j in 0..d {
                out[[i, j]] = v[j] as f32;
            }
        }
        out
    }
}

/// Mean Euclidean distance to the `k` nearest rows of `pool`.
fn mean_k_smallest(query: &[f32], pool: ArrayView2<'_, f32>, k: usize) -> f64 {
    let mut best: Vec<f64> = Vec::with_capacity(k + 1);
    for row in pool.axis_iter(Axis(0)) {
        let d2: f64 = row
            .iter()
            .zip(query)
            .map(|(&a, &b)| {
                let t = a as f64 - b as f64;
                t * t
            })
            .sum();
        if best.len() == k && d2 >= best[k - 1] {
            continue;
        }
        let at = best.partition_point(|&b| b <= d2);
        best.insert(at, d2);
        best.truncate(k);
    }
    best.iter().map(|v| v.sqrt()).sum::<f64>() / k as f64
}

/// k-NN anomaly score of a single query vector.
pub fn knn_score(query: &[f32], pool: ArrayView2<'_, f32>, metric: KnnMetric, k: usize, shrinkage: f64) -> Result<f64> {
    let q = ArrayView2::from_shape((1, query.len()), query).expect("contiguous slice");
    Ok(knn_scores(q, pool, metric, k, shrinkage)?[0])
}

/// Per-query k-NN scores; Mahalanobis whitens queries and pool first.
pub fn knn_scores(
    queries: ArrayView2<'_, f32>,
    pool: ArrayView2<'_, f32>,
    metric: KnnMetric,
    k: usize,
    shrinkage: f64,
) -> Result<Vec<f64>> {
    let whitener = match metric {
        KnnMetric::L2 => None,
        KnnMetric::Mahalanobis => Some(Whitener::fit(pool, shrinkage)?),
    };
    knn_scores_with(queries, pool, whitener.as_ref(), k)
}

pub fn knn_scores_with(
    queries: ArrayView2<'_, f32>,
    pool: ArrayView2<'_, f32>,
    whitener: Option<&Whitener>,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if pool.nrows() < k {
        return Err(Error::PoolTooSmall {
            required: k,
            available: pool.nrows(),
        });
    }
    if queries.ncols() != pool.ncols() {
        return Err(Error::DimensionMismatch {
            expected: pool.ncols(),
            found: queries.ncols(),
        });
    }
    let (q, p) = match whitener {
        Some(w) => (w.transform(queries), w.transform(pool)),
        None => (queries.to_owned(), pool.to_owned()),
    };
    Ok(q.axis_iter(Axis(0))
        .into_par_iter()
        .map(|row| mean_k_smallest(row.as_slice().expect("owned rows are contiguous"), p.view(), k))
        .collect())
}

/// Update applied to each query in message passing. References stay fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationRule {
    /// `x_i <- (λ f_i + Σ w_ij r_j) / (λ + d_i)`
    #[default]
    Anchored,
    /// `x_i <- Σ w_ij r_j / d_i`
    Unanchored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassingResult {
    pub state: Array2<f64>,
    /// `total_energy` after each round (index 0 is the initial state).
    pub energies: Vec<f64>,
}

pub fn message_passing(
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    config: &AnchorConfig,
    rounds: usize,
    rule: PropagationRule,
) -> Result<MessagePassingResult> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be at least 1".into()));
    }
    check_shapes(queries, refs, graph)?;
    config.validate(queries.nrows())?;
    let d = queries.ncols();
    let active = graph.active_refs();
    let degree = graph.query_degree();
    let mut state = queries.mapv(|v| v as f64);
    let mut energies = vec![total_energy(state.view(), queries, refs, graph, config)?];
    for _ in 0..rounds {
        let prev = state.clone();
        state
            .as_slice_mut()
            .expect("fresh array")
            .par_chunks_mut(d.max(1))
            .enumerate()
            .for_each(|(i, out)| {
                let row = graph.row(i);
                let (self_weight, base): (f64, Vec<f64>) = match rule {
                    PropagationRule::Anchored => {
                        let l = config.at(i);
                        (l, queries.row(i).iter().map(|&v| l * v as f64).collect())
                    }
                    PropagationRule::Unanchored => (0.0, vec![0.0; d]),
                };
                let den = self_weight + degree[i];
                if den <= 0.0 {
                    out.copy_from_slice(prev.row(i).as_slice().expect("standard layout"));
                    return;
                }
                out.copy_from_slice(&base);
                for (&c, &w) in row.cols.iter().zip(row.weights) {
                    for (o, &v) in out.iter_mut().zip(refs.row(active[c]).iter()) {
                        *o += w * v as f64;
                    }
                }
                out.iter_mut().for_each(|o| *o /= den);
            });
        energies.push(total_energy(state.view(), queries, refs, graph, config)?);
    }
    Ok(MessagePassingResult { state, energies })
}

/// Symmetric query-query edges joining each query to its `k_intra` most
/// cosine-similar other queries, weighted `max(s, 0) * alpha`.
pub fn intra_query_edges(queries: ArrayView2<'_, f32>, k_intra: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if k_intra == 0 {
        return Err(Error::InvalidConfig("k_intra must be at least 1".into()));
    }
    let n = queries.nrows();
    let unit = unit_rows(queries);
    let sims = unit.dot(&unit.t());
    let norms: Vec<f64> = queries
        .axis_iter(Axis(0))
        .map(|r| norm_f64(r.as_slice().expect("standard layout")))
        .collect();
    let mut pairs = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| crate::retrieval::rank_order(sims.row(i).as_slice().unwrap(), a, b));
        for &j in order.iter().take(k_intra) {
            pairs.insert((i.min(j), i.max(j)));
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (a, b) in pairs {
        let s = (sims[[a, b]] as f64).clamp(-1.0, 1.0).max(0.0);
        let w = s * compatibility_from_norms(norms[a], norms[b]).value;
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    Ok(adj)
}

/// Anchored energy on the bipartite graph plus query-query edges
/// `Σ u_ik |x_i - x_k|²` (each undirected edge counted once).
pub fn nonbipartite_energy(
    state: ArrayView2<'_, f64>,
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    intra: &[Vec<(usize, f64)>],
    config: &AnchorConfig,
) -> Result<f64> {
    let mut e = total_energy(state, queries, refs, graph, config)?;
    for (i, nbrs) in intra.iter().enumerate() {
        for &(k, u) in nbrs {
            if k > i {
                let xi = state.row(i);
                let xk = state.row(k);
                e += u * xi.iter().zip(xk.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
        }
    }
    Ok(e)
}

/// Solve the anchored system with extra query-query coupling by Jacobi-
/// preconditioned conjugate gradients (one independent solve per feature column).
///
/// Reference-reference edges are omitted: both endpoints are clamped, so they
/// add a constant to the energy and leave the minimizer unchanged.
pub fn solve_nonbipartite(
    queries: ArrayView2<'_, f32>,
    refs: ArrayView2<'_, f32>,
    graph: &BipartiteGraph,
    intra: &[Vec<(usize, f64)>],
    config: &AnchorConfig,
) -> Result<SolveResult> {
    check_shapes(queries, refs, graph)?;
    config.validate(queries.nrows())?;
    let (nq, d) = queries.dim();
    if intra.len() != nq {
        return Err(Error::ShapeMismatch(format!("{} intra rows for {} queries", intra.len(), nq)));
    }
    if intra.iter().all(|e| e.is_empty()) {
        return solve_anchored(queries, refs, graph, config);
    }
    let active = graph.active_refs();
    let diag: Vec<f64> = (0..nq)
        .map(|i| config.at(i) + graph.query_degree()[i] + intra[i].iter().map(|e| e.1).sum::<f64>())
        .collect();

    // Right-hand side Λ F_q + W_qr F_r.
    let mut rhs = Array2::<f64>::zeros((nq, d));
    for i in 0..nq {
        let l = config.at(i);
        let mut out = rhs.row_mut(i);
        for (o, &v) in out.iter_mut().zip(queries.row(i).iter()) {
            *o = l * v as f64;
        }
        let row = graph.row(i);
        for (&c, &w) in row.cols.iter().zip(row.weights) {
            for (o, &v) in out.iter_mut().zip(refs.row(active[c]).iter()) {
                *o += w * v as f64;
            }
        }
    }

    let apply = |x: &Array2<f64>| -> Array2<f64> {
        let mut y = Array2::<f64>::zeros(x.dim());
        for i in 0..nq {
            let mut yi = y.row_mut(i);
            yi.zip_mut_with(&x.row(i), |a, &b| *a = diag[i] * b);
            for &(k, u) in &intra[i] {
                yi.zip_mut_with(&x.row(k), |a, &b| *a -= u * b);
            }
        }
        y
    };

    let precondition = |r: &Array2<f64>| -> Array2<f64> {
        let mut z = r.clone();
        for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
            row.mapv_inplace(|v| v / diag[i]);
        }
        z
    };

    let mut x = precondition(&rhs);
    let mut r = &rhs - &apply(&x);
    let mut z = precondition(&r);
    let mut p = z.clone();
    let col_dot = |a: &Array2<f64>, b: &Array2<f64>| -> Vec<f64> {
        (0..d).map(|j| a.column(j).dot(&b.column(j))).collect()
    };
    let rhs_norm: Vec<f64> = col_dot(&rhs, &rhs).into_iter().map(f64::sqrt).collect();
    let mut rz = col_dot(&r, &z);
    for _ in 0..(10 * nq).max(50) {
        let rr = col_dot(&r, &r);
        if rr
            .iter()
            .zip(&rhs_norm)
            .all(|(v, n)| v.sqrt() <= 1e-13 * n.max(1e-300))
        {
            break;
        }
        let ap = apply(&p);
        let pap = col_dot(&p, &ap);
        for j in 0..d {
            if pap[j] <= 0.0 || rz[j] == 0.0 {
                continue;
            }
            let alpha = rz[j] / pap[j];
            x.column_mut(j).scaled_add(alpha, &p.column(j));
            r.column_mut(j).scaled_add(-alpha, &ap.column(j));
        }
        z = precondition(&r);
        let rz_new = col_dot(&r, &z);
        for j in 0..d {
            let beta = if rz[j] == 0.0 { 0.0 } else { rz_new[j] / rz[j] };
            let zj = z.column(j).to_owned();
            let mut pj = p.column_mut(j);
            pj.mapv_inplace(|v| v * beta);
            pj += &zj;
        }
        rz = rz_new;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let mut result = finish(x, queries, refs, graph, config)?;
    let original = queries.mapv(|v| v as f64);
    result.energy_before = nonbipartite_energy(original.view(), queries, refs, graph, intra, config)?;
    result.energy_after = nonbipartite_energy(result.optimized.view(), queries, refs, graph, intra, config)?;
    Ok(result)
}

/// Squared distance from each query to its nearest active reference, for diagnostics.
pub fn nearest_active_sq_dist(state: ArrayView2<'_, f64>, refs: ArrayView2<'_, f32>, graph: &BipartiteGraph) -> Vec<f64> {
    (0..state.nrows())
        .map(|i| {
            graph
                .active_refs()
                .iter()
                .map(|&j| sq_dist_mixed(state.row(i).as_slice().unwrap(), refs.row(j).as_slice().unwrap()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::edge_weights;
    use crate::retrieval::{assign_features, NeighborAssignment, SimilarityIndex};
    use crate::scoring::{patch_energies, NonConformity};
    use crate::tensor_io::ReferencePool;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random(seed: u64, nq: usize, nr: usize, d: usize) -> (Array2<f32>, Array2<f32>, BipartiteGraph) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let refs = Array2::from_shape_fn((nr, d), |_| rng.random_range(-1.0f32..1.0) + 0.4);
        let qs = Array2::from_shape_fn((nq, d), |_| rng.random_range(-1.0f32..1.0) + 0.4);
        let idx = SimilarityIndex::new(&ReferencePool::new(refs.clone(), "r").unwrap());
        let a = assign_features(qs.view(), &idx).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        (qs, refs, g)
    }

    #[test]
    fn knn_examples() {
        let pool = array![[1.0f32, 0.0], [0.0, 0.0]];
        assert_eq!(knn_score(&[1.0, 0.0], pool.view(), KnnMetric::L2, 1, DEFAULT_SHRINKAGE).unwrap(), 0.0);
        assert_eq!(knn_score(&[3.0, 0.0], pool.view(), KnnMetric::L2, 2, DEFAULT_SHRINKAGE).unwrap(), 2.5);
        assert!(matches!(
            knn_score(&[3.0, 0.0], pool.view(), KnnMetric::L2, 3, DEFAULT_SHRINKAGE),
            Err(Error::PoolTooSmall { .. })
        ));
        let single = array![[1.0f32, 0.0]];
        assert!(matches!(
            knn_score(&[3.0, 0.0], single.view(), KnnMetric::Mahalanobis, 1, DEFAULT_SHRINKAGE),
            Err(Error::PoolTooSmall { required: 2, .. })
        ));
    }

    #[test]
    fn mahalanobis_on_whitened_pool_is_l2() {
        // Sample covariance of these rows is exactly the identity.
        let a = 1.5f32.sqrt();
        let pool = array![[a, 0.0], [-a, 0.0], [0.0, a], [0.0, -a]];
        let qs = array![[0.3f32, -2.0], [4.0, 1.0], [0.0, 0.0]];
        let l2 = knn_scores(qs.view(), pool.view(), KnnMetric::L2, 1, DEFAULT_SHRINKAGE).unwrap();
        let mh = knn_scores(qs.view(), pool.view(), KnnMetric::Mahalanobis, 1, 1e-12).unwrap();
        for (x, y) in l2.iter().zip(&mh) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
        // Default shrinkage scales distances by 1/sqrt(1 + eps).
        let shrunk = knn_scores(qs.view(), pool.view(), KnnMetric::Mahalanobis, 1, DEFAULT_SHRINKAGE).unwrap();
        for (x, y) in l2.iter().zip(&shrunk) {
            assert!((x / (1.0 + DEFAULT_SHRINKAGE).sqrt() - y).abs() < 1e-5);
        }
    }

    #[test]
    fn message_passing_matches_closed_form() {
        let (qs, refs, g) = random(5, 10, 30, 6);
        let cfg = AnchorConfig::default();
        let solved = solve_anchored(qs.view(), refs.view(), &g, &cfg).unwrap();
        let one = message_passing(qs.view(), refs.view(), &g, &cfg, 1, PropagationRule::Anchored).unwrap();
        assert_eq!(one.state, solved.optimized);
        let many = message_passing(qs.view(), refs.view(), &g, &cfg, 200, PropagationRule::Anchored).unwrap();
        for (a, b) in many.state.iter().zip(solved.optimized.iter()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        assert!(many.energies.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert!(matches!(
            message_passing(qs.view(), refs.view(), &g, &cfg, 0, PropagationRule::Anchored),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn message_passing_on_manifold_has_no_drift() {
        let qs = array![[1.0f32, 2.0], [0.5, -1.0]];
        let refs = qs.clone();
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![1.0]), (vec![1], vec![1.0])], 2).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        for rule in [PropagationRule::Anchored, PropagationRule::Unanchored] {
            for rounds in 1..4 {
                let r = message_passing(qs.view(), refs.view(), &g, &AnchorConfig::default(), rounds, rule).unwrap();
                let e = patch_energies(qs.view(), r.state.view(), NonConformity::Product).unwrap();
                assert!(e.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn unanchored_rule_moves_to_neighbor_mean() {
        let qs = array![[4.0f32, 0.0]];
        let refs = array![[1.0f32, 0.0]];
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![1.0])], 1).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        let r = message_passing(qs.view(), refs.view(), &g, &AnchorConfig::default(), 2, PropagationRule::Unanchored)
            .unwrap();
        assert!((r.state[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_intra_edges_are_noops() {
        let qs = array![[1.0f32, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.5]];
        let refs = array![[1.0f32, 0.2, 0.1], [0.1, 1.0, 0.3], [0.2, 0.1, 1.0]];
        let idx = SimilarityIndex::new(&ReferencePool::new(refs.clone(), "r").unwrap());
        let a = assign_features(qs.view(), &idx).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        let intra = intra_query_edges(qs.view(), 2).unwrap();
        assert!(intra.iter().flatten().all(|e| e.1 == 0.0));
        let cfg = AnchorConfig::default();
        let bip = solve_anchored(qs.view(), refs.view(), &g, &cfg).unwrap();
        let non = solve_nonbipartite(qs.view(), refs.view(), &g, &intra, &cfg).unwrap();
        for (x, y) in bip.optimized.iter().zip(non.optimized.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn single_patch_has_no_intra_edges() {
        let qs = array![[1.0f32, 0.5]];
        let refs = array![[1.0f32, 0.0], [0.0, 1.0]];
        let idx = SimilarityIndex::new(&ReferencePool::new(refs.clone(), "r").unwrap());
        let a = assign_features(qs.view(), &idx).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        let intra = intra_query_edges(qs.view(), 5).unwrap();
        assert!(intra[0].is_empty());
        let cfg = AnchorConfig::default();
        let bip = solve_anchored(qs.view(), refs.view(), &g, &cfg).unwrap();
        let non = solve_nonbipartite(qs.view(), refs.view(), &g, &intra, &cfg).unwrap();
        assert_eq!(bip.optimized, non.optimized);
    }

    #[test]
    fn mutual_support_reduces_drift() {
        // Two identical anomalous queries pulled toward opposite references:
        // the query-query edge holds them together, so each moves less.
        let qs = array![[1.0f32, 0.0], [1.0, 0.0]];
        let refs = array![[1.0f32, 1.0], [1.0, -1.0]];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = NeighborAssignment::from_rows(vec![(vec![0], vec![s]), (vec![1], vec![s])], 2).unwrap();
        let g = edge_weights(qs.view(), refs.view(), &a).unwrap();
        let intra = intra_query_edges(qs.view(), 1).unwrap();
        assert!(intra[0][0].1 > 0.9);
        let cfg = AnchorConfig::default();
        let bip = solve_anchored(qs.view(), refs.view(), &g, &cfg).unwrap();
        let non = solve_nonbipartite(qs.view(), refs.view(), &g, &intra, &cfg).unwrap();
        let eb = patch_energies(qs.view(), bip.optimized.view(), NonConformity::Product).unwrap();
        let en = patch_energies(qs.view(), non.optimized.view(), NonConformity::Product).unwrap();
        for i in 0..2 {
            assert!(en[i] < eb[i], "{} !< {}", en[i], eb[i]);
            let db: f64 = bip.drift.row(i).iter().map(|v| v * v).sum();
            let dn: f64 = non.drift.row(i).iter().map(|v| v * v).sum();
            assert!(dn < db);
        }
    }

    #[test]
    fn nonbipartite_solution_is_optimal() {
        let (qs, refs, g) = random(8, 12, 24, 5);
        let intra = intra_query_edges(qs.view(), 3).unwrap();
        let cfg = AnchorConfig::shared(0.5);
        let r = solve_nonbipartite(qs.view(), refs.view(), &g, &intra, &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = r.optimized.mapv(|v| v + rng.random_range(-1e-3..1e-3));
            let e = nonbipartite_energy(p.view(), qs.view(), refs.view(), &g, &intra, &cfg).unwrap();
            assert!(e >= r.energy_after - 1e-9);
        }
        assert!(r.energy_after <= r.energy_before);
    }

    proptest! {
        #[test]
        fn l2_translation_invariant(
            q in prop::collection::vec(-3.0f32..3.0, 4),
            pool in prop::collection::vec(-3.0f32..3.0, 4 * 6),
            shift in prop::collection::vec(-10.0f32..10.0, 4),
        ) {
            let pool = Array2::from_shape_vec((6, 4), pool).unwrap();
            let a = knn_score(&q, pool.view(), KnnMetric::L2, 2, DEFAULT_SHRINKAGE).unwrap();
            let qs: Vec<f32> = q.iter().zip(&shift).map(|(x, s)| x + s).collect();
            let mut ps = pool.clone();
            for mut row in ps.axis_iter_mut(Axis(0)) {
                row.iter_mut().zip(&shift).for_each(|(x, s)| *x += s);
            }
            let b = knn_score(&qs, ps.view(), KnnMetric::L2, 2, DEFAULT_SHRINKAGE).unwrap();
            // Tolerance covers f32 rounding of the shifted inputs.
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
