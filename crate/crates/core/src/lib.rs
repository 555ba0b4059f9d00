//! Goal-oriented data discovery.
//!
//! Given an input table, a repository of candidate tables and a black-box
//! utility task, the search engine selects a small set of join augmentations
//! that raises the task utility to a threshold, spending as few task
//! evaluations as possible.

pub mod baselines;
pub mod bench;
pub mod clustering;
pub mod discovery;
pub mod error;
pub mod pipeline;
pub mod profiles;
pub mod repository;
pub mod scoring;
pub mod search;
pub mod tasks;

pub use baselines::{run_strategy, Strategy};
pub use discovery::{Augmentation, CandidateColumns, JoinIndex, JoinPath};
pub use error::{Error, Result};
pub use pipeline::{prepare, run_prepared, PipelineConfig, Prepared};
pub use profiles::{ProfileRegistry, ProfileVector};
pub use repository::{Column, DType, Repository, Table};
pub use search::{run_metam, Mechanism, Problem, QueryRecord, SearchConfig, Solution, StopReason, SubsetOracle};
pub use tasks::{TaskConfig, TaskKind, UtilityTask};
