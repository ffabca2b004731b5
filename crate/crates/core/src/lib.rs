//! Neural-guided symbolic search with in-situ priors and constraints.
//!
//! Expressions are generated token by token as pre-order traversals. Before
//! each token is drawn, prior logit adjustments and constraint masks are added
//! to the policy's logits, so domain knowledge shapes the search distribution
//! directly instead of filtering finished samples.

pub mod constraints;
pub mod experiment;
pub mod library;
pub mod policy;
pub mod priors;
pub mod sampler;
pub mod sr_task;
pub mod traversal;
pub mod units;

pub use constraints::{Constraint, ConstraintError, ConstraintSet, ConstraintSpec, Mask};
pub use library::{Library, LibraryError, TokenId, TokenSpec};
pub use policy::{Policy, PolicyConfig, Trainer, TrainerConfig};
pub use priors::{Prior, PriorSet, PriorSpec};
pub use sampler::{SampleError, SampleRecord, Sampler};
pub use traversal::{TraversalError, TraversalState};
pub use experiment::{ExperimentConfig, ExperimentError, Method, RunRecord};
pub use sr_task::{Benchmark, BenchmarkRegistry, Dataset, RegressionTask};
