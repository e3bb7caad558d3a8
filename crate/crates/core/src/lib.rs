//! Training-free anomaly scoring of patch features against a pool of
//! normal reference patches.
//!
//! Each query patch is linked to reference patches that agree with its most
//! similar reference, then relaxed toward them on a bipartite graph while an
//! anchor term holds it near its original value. Patches that must move far,
//! and change direction while doing so, score high.

pub mod baselines;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod retrieval;
pub mod scoring;
pub mod solver;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use graph::{edge_weights, BipartiteGraph};
pub use pipeline::{Method, PipelineConfig, Scorer};
pub use retrieval::{assign_features, NeighborAssignment, SimilarityIndex};
pub use scoring::{AnomalyOutput, MapConfig, NonConformity};
pub use solver::{solve_anchored, AnchorConfig, SolveResult};
pub use tensor_io::{FeatureGrid, Mask, ReferencePool, Tensor};
