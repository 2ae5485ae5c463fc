use thiserror::Error;

use crate::config::{Algorithm, EngineConfig, ItemId, RatingEvent, UserId};
use crate::cosine::SimilarityModel;
use crate::forgetting::{sweep, ForgettingPolicy, SweepReport};
use crate::isgd::{FactorModel, IsgdParams};
use crate::rng::StreamRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("vector length {found} does not match latent dimension {expected}")]
    Dimension { expected: usize, found: usize },
}

/// Entry counts of one worker's state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateSize {
    pub users: usize,
    pub items: usize,
    pub pairs: usize,
}

impl StateSize {
    pub fn total(&self) -> usize {
        self.users + self.items + self.pairs
    }
}

/// A model that can be driven test-then-train, one event at a time.
pub trait StreamingRecommender {
    /// Top-`n` list for the user from the current state.
    fn recommend(&self, user_id: UserId, n: usize) -> Vec<ItemId>;
    /// Folds the event into the model.
    fn learn(&mut self, event: &RatingEvent);
    fn state_size(&self) -> StateSize;
    fn forget(&mut self, policy: &ForgettingPolicy, event_time_now: i64) -> SweepReport;
}

/// Matrix factorization worker: the factors plus the worker's own generator.
#[derive(Debug, Clone)]
pub struct IsgdRecommender {
    pub model: FactorModel,
    pub rng: StreamRng,
}

impl IsgdRecommender {
    pub fn new(params: IsgdParams, rng: StreamRng) -> Self {
        IsgdRecommender { model: FactorModel::new(params), rng }
    }
}

impl StreamingRecommender for IsgdRecommender {
    fn recommend(&self, user_id: UserId, n: usize) -> Vec<ItemId> {
        self.model.recommend(user_id, n)
    }

    fn learn(&mut self, event: &RatingEvent) {
        self.model.ensure_vectors(&mut self.rng, event.user_id, event.item_id);
        self.model.train(event.user_id, event.item_id, event.timestamp).expect("vectors exist after ensure_vectors");
    }

    fn state_size(&self) -> StateSize {
        StateSize { users: self.model.user_count(), items: self.model.item_count(), pairs: 0 }
    }

    fn forget(&mut self, policy: &ForgettingPolicy, now: i64) -> SweepReport {
        sweep(policy, &mut self.model, now)
    }
}

/// Cosine similarity worker.
#[derive(Debug, Clone)]
pub struct DicsRecommender {
    pub model: SimilarityModel,
    pub neighbors_k: usize,
}

impl DicsRecommender {
    pub fn new(neighbors_k: usize) -> Self {
        DicsRecommender { model: SimilarityModel::new(), neighbors_k }
    }
}

impl StreamingRecommender for DicsRecommender {
    fn recommend(&self, user_id: UserId, n: usize) -> Vec<ItemId> {
        self.model.recommend(user_id, n, self.neighbors_k)
    }

    fn learn(&mut self, event: &RatingEvent) {
        self.model.update(event.user_id, event.item_id, event.rating, event.timestamp);
    }

    fn state_size(&self) -> StateSize {
        StateSize { users: self.model.user_count(), items: self.model.item_count(), pairs: self.model.pair_count() }
    }

    fn forget(&mut self, policy: &ForgettingPolicy, now: i64) -> SweepReport {
        sweep(policy, &mut self.model, now)
    }
}

/// The model owned by one worker, chosen by [`EngineConfig::algo`].
#[derive(Debug, Clone)]
pub enum WorkerModel {
    Isgd(Box<IsgdRecommender>),
    Dics(DicsRecommender),
}

impl WorkerModel {
    pub fn new(config: &EngineConfig, worker_id: usize) -> Self {
        match config.algo {
            Algorithm::Isgd => WorkerModel::Isgd(Box::new(IsgdRecommender::new(
                IsgdParams::from(config),
                StreamRng::for_worker(config.seed, worker_id),
            ))),
            Algorithm::Dics => WorkerModel::Dics(DicsRecommender::new(config.neighbors_k)),
        }
    }

    pub fn as_factor(&self) -> Option<&FactorModel> {
        match self {
            WorkerModel::Isgd(r) => Some(&r.model),
            WorkerModel::Dics(_) => None,
        }
    }

    pub fn as_similarity(&self) -> Option<&SimilarityModel> {
        match self {
            WorkerModel::Dics(r) => Some(&r.model),
            WorkerModel::Isgd(_) => None,
        }
    }
}

impl StreamingRecommender for WorkerModel {
    fn recommend(&self, user_id: UserId, n: usize) -> Vec<ItemId> {
        match self {
            WorkerModel::Isgd(r) => r.recommend(user_id, n),
            WorkerModel::Dics(r) => r.recommend(user_id, n),
        }
    }

    fn learn(&mut self, event: &RatingEvent) {
        match self {
            WorkerModel::Isgd(r) => r.learn(event),
            WorkerModel::Dics(r) => r.learn(event),
        }
    }

    fn state_size(&self) -> StateSize {
        match self {
            WorkerModel::Isgd(r) => r.state_size(),
            WorkerModel::Dics(r) => r.state_size(),
        }
    }

    fn forget(&mut self, policy: &ForgettingPolicy, now: i64) -> SweepReport {
        match self {
            WorkerModel::Isgd(r) => r.forget(policy, now),
            WorkerModel::Dics(r) => r.forget(policy, now),
        }
    }
}
