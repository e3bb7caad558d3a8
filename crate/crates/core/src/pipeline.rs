//! End-to-end per-image scoring against a fixed reference pool.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    intra_query_edges, knn_scores_with, message_passing, solve_nonbipartite, PropagationRule, Whitener,
    DEFAULT_SHRINKAGE,
};
use crate::error::{Error, Result};
use crate::graph::edge_weights;
use crate::retrieval::{assign_features, top_k_neighbors, SimilarityIndex};
use crate::scoring::{patch_energies, AnomalyOutput, MapConfig, NonConformity};
use crate::solver::{solve_anchored, AnchorConfig, DEFAULT_LAMBDA};
use crate::tensor_io::{FeatureGrid, ReferencePool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Anchor-consistent retrieval, anchored bipartite solve, drift energy.
    #[default]
    Anoco,
    KnnL2,
    KnnMahalanobis,
    /// Top-k retrieval with query-query edges added to the graph.
    GraphNonbipartite,
    /// Top-k retrieval, bipartite anchored solve.
    GraphBipartiteNaive,
    /// Anchor-consistent graph, iterative propagation instead of the closed form.
    MessagePassing,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::KnnL2,
        Method::KnnMahalanobis,
        Method::GraphNonbipartite,
        Method::GraphBipartiteNaive,
        Method::MessagePassing,
        Method::Anoco,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Anoco => "anoco",
            Method::KnnL2 => "knn_l2",
            Method::KnnMahalanobis => "knn_mahalanobis",
            Method::GraphNonbipartite => "graph_nonbipartite",
            Method::GraphBipartiteNaive => "graph_bipartite_naive",
            Method::MessagePassing => "message_passing",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub lambda: f64,
    pub nonconformity: NonConformity,
    /// Neighbors averaged by the k-NN baselines.
    pub k: usize,
    /// Neighbors kept by the top-k graph baselines.
    pub k_retrieval: usize,
    /// Query-query edges per patch in the non-bipartite baseline.
    pub k_intra: usize,
    pub rounds: usize,
    pub propagation: PropagationRule,
    pub shrinkage: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::Anoco,
            lambda: DEFAULT_LAMBDA,
            nonconformity: NonConformity::Product,
            k: 1,
            k_retrieval: 5,
            k_intra: 5,
            rounds: 1,
            propagation: PropagationRule::Anchored,
            shrinkage: DEFAULT_SHRINKAGE,
        }
    }
}

impl PipelineConfig {
    pub fn with_method(method: Method) -> Self {
        PipelineConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::NonPositiveLambda {
                index: 0,
                value: self.lambda,
            });
        }
        for (name, v) in [
            ("k", self.k),
            ("k_retrieval", self.k_retrieval),
            ("k_intra", self.k_intra),
            ("rounds", self.rounds),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(Error::InvalidConfig(format!("shrinkage must be positive, got {}", self.shrinkage)));
        }
        Ok(())
    }
}

/// Scores query grids against one reference pool. Built once per pool so
/// the normalized index (and whitening for Mahalanobis) is shared.
pub struct Scorer {
    pool: ReferencePool,
    index: SimilarityIndex,
    whitener: Option<Whitener>,
    config: PipelineConfig,
}

impl Scorer {
    pub fn new(pool: ReferencePool, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        let whitener = match config.method {
            Method::KnnMahalanobis => Some(Whitener::fit(pool.features(), config.shrinkage)?),
            _ => None,
        };
        let index = SimilarityIndex::new(&pool);
        Ok(Scorer {
            pool,
            index,
            whitener,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn pool(&self) -> &ReferencePool {
        &self.pool
    }

    pub fn index(&self) -> &SimilarityIndex {
        &self.index
    }

    /// One non-negative energy per query row.
    pub fn patch_energies(&self, queries: ArrayView2<'_, f32>) -> Result<Vec<f64>> {
        if queries.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if queries.ncols() != self.pool.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.pool.dim(),
                found: queries.ncols(),
            });
        }
        let refs = self.pool.features();
        let cfg = &self.config;
        let anchor = AnchorConfig::shared(cfg.lambda);
        let metric = cfg.nonconformity;
        match cfg.method {
            Method::KnnL2 | Method::KnnMahalanobis => knn_scores_with(queries, refs, self.whitener.as_ref(), cfg.k),
            Method::Anoco => {
                let a = assign_features(queries, &self.index)?;
                let g = edge_weights(queries, refs, &a)?;
                let r = solve_anchored(queries, refs, &g, &anchor)?;
                patch_energies(queries, r.optimized.view(), metric)
            }
            Method::MessagePassing => {
                let a = assign_features(queries, &self.index)?;
                let g = edge_weights(queries, refs, &a)?;
                let r = message_passing(queries, refs, &g, &anchor, cfg.rounds, cfg.propagation)?;
                patch_energies(queries, r.state.view(), metric)
            }
            Method::GraphBipartiteNaive => {
                let a = top_k_neighbors(queries, &self.index, cfg.k_retrieval.min(self.pool.len()))?;
                let g = edge_weights(queries, refs, &a)?;
                let r = solve_anchored(queries, refs, &g, &anchor)?;
                patch_energies(queries, r.optimized.view(), metric)
            }
            Method::GraphNonbipartite => {
                let a = top_k_neighbors(queries, &self.index, cfg.k_retrieval.min(self.pool.len()))?;
                let g = edge_weights(queries, refs, &a)?;
                let intra = intra_query_edges(queries, cfg.k_intra)?;
                let r = solve_nonbipartite(queries, refs, &g, &intra, &anchor)?;
                patch_energies(queries, r.optimized.view(), metric)
            }
        }
    }

    pub fn score(&self, grid: &FeatureGrid, map_config: &MapConfig) -> Result<AnomalyOutput> {
        let energies = self.patch_energies(grid.features())?;
        AnomalyOutput::new(grid.image_id.clone(), grid.grid(), energies, map_config.clone())
    }
}
