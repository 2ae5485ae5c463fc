//! Fixtures shared by the benchmarks.

use streamrec::isgd::{FactorModel, IsgdParams};
use streamrec::synthetic::SyntheticConfig;
use streamrec::{EngineConfig, RatingEvent, SimilarityModel, StreamRng};

/// A seeded stream with MovieLens-like skew.
pub fn stream(users: usize, items: usize, events: usize) -> Vec<RatingEvent> {
    SyntheticConfig { users, items, events, item_zipf: 0.9, user_zipf: 0.5, seed: 17, ..Default::default() }.events()
}

/// A factor model trained on `events` in order.
pub fn trained_factors(events: &[RatingEvent]) -> FactorModel {
    let mut model = FactorModel::new(IsgdParams::from(&EngineConfig::default()));
    let mut rng = StreamRng::new(17);
    for e in events {
        model.ensure_vectors(&mut rng, e.user_id, e.item_id);
        model.train(e.user_id, e.item_id, e.timestamp).expect("vectors exist");
    }
    model
}

/// A similarity model fed `events` in order.
pub fn trained_similarity(events: &[RatingEvent]) -> SimilarityModel {
    let mut model = SimilarityModel::new();
    for e in events {
        model.update(e.user_id, e.item_id, e.rating, e.timestamp);
    }
    model
}

/// The user with the most events, i.e. the most expensive one to score.
pub fn busiest_user(events: &[RatingEvent]) -> u64 {
    let mut counts = std::collections::HashMap::new();
    for e in events {
        *counts.entry(e.user_id).or_insert(0usize) += 1;
    }
    counts.into_iter().max_by_key(|&(u, c)| (c, std::cmp::Reverse(u))).map_or(0, |(u, _)| u)
}
