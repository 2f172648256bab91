//! CART regression trees and Breiman random forests, together with a harness
//! that checks the finite-sample guarantees of greedy tree growth on concrete
//! datasets: the orthogonal stump expansion of a fitted tree, the
//! gain/inner-product identity, the `1/(K+3)` training-error bound against any
//! additive reference model, the per-node gain lower bound and the `q/p`
//! guarantee for `mtry` feature subsampling.
//!
//! Module map:
//!
//! - [`data`]: datasets, CSV ingestion, additive models and their total variation.
//! - [`tree`]: greedy CART growth, prediction and the stump expansion.
//! - [`prune`]: cost-complexity pruning and the weakest-link path.
//! - [`forest`]: bootstrap ensembles with per-node `mtry` subsets.
//! - [`verify`]: bound certificates, schedules and consistency experiments.

pub mod data;
pub mod error;
pub mod forest;
pub mod prune;
pub mod rng;
pub mod tree;
pub mod verify;

pub use data::{AdditiveModel, ComponentFn, Dataset, FeatureLaw, ResponseColumn, Shape};
pub use error::{Error, Result};
pub use forest::{Forest, ForestConfig, Model, ResampleMode};
pub use prune::{PruneConfig, PrunePathEntry};
pub use tree::{Mtry, Node, NodeKind, StopReason, StumpExpansion, Tree, TreeConfig};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
