//! Streaming recommenders scaled out by splitting and replication.
//!
//! Every `(user, item)` rating is routed to exactly one worker of an
//! `n_i x (n_i + w)` grid. Items are split `n_i` ways and replicated across the
//! user columns; users are split `n_i + w` ways and replicated across the item
//! rows. Replicas are independent: each worker owns its model and never talks
//! to the others.
//!
//! Two incremental recommenders run on the workers:
//!
//! * [`isgd`]: incremental matrix factorization over a positive-only boolean
//!   rating matrix, one SGD step per event.
//! * [`cosine`]: item-based collaborative filtering with an incrementally
//!   maintained cosine similarity.
//!
//! Quality is measured prequentially ([`eval`]): each event is first used to
//! test the current top-N list and only then to train. [`forgetting`] bounds
//! per-worker state with LFU/LRU sweeps, [`engine`] runs the whole pipeline on
//! threads and [`ingest`] turns MovieLens/Netflix dumps (or a synthetic
//! generator) into an ordered event stream.

pub mod config;
pub mod cosine;
pub mod engine;
pub mod eval;
pub mod forgetting;
pub mod ingest;
pub mod isgd;
pub mod model;
pub mod rng;
pub mod router;
pub mod synthetic;
pub mod validate;

mod topn;

pub use config::{derive_cluster_size, Algorithm, ConfigError, EngineConfig, ItemId, RatingEvent, UserId};
pub use cosine::SimilarityModel;
pub use engine::{run, run_reference, EngineError, EvalRecord, Worker};
pub use eval::{MetricsReport, StateSnapshot};
pub use forgetting::{ForgettingKind, ForgettingPolicy, SweepReport, Usage};
pub use isgd::FactorModel;
pub use model::{StateSize, StreamingRecommender, WorkerModel};
pub use rng::StreamRng;
pub use router::RoutingPlan;
