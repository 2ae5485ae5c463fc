//! Incremental SGD matrix factorization over a positive-only rating matrix.
//!
//! Every rating is a positive interaction, so the prediction error for an
//! observed pair is `1 - U_u . I_i` and one gradient step is taken per event:
//!
//! ```text
//! U_u <- U_u + eta * (err * I_i - lambda * U_u)
//! I_i <- I_i + eta * (err * U_u - lambda * I_i)
//! ```
//!
//! By default both updates read the pre-update vectors. With
//! `sequential_update` the item step reads the already-updated user vector.

use std::collections::{HashMap, HashSet};

use crate::config::{EngineConfig, ItemId, UserId};
use crate::forgetting::{Forgettable, SweepReport, Usage};
use crate::model::ModelError;
use crate::rng::StreamRng;
use crate::topn::top_n;

/// Standard deviation of the Normal(0, 0.1) vector initialization.
pub const INIT_STD_DEV: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsgdParams {
    pub k: usize,
    pub eta: f64,
    pub lambda: f64,
    pub sequential_update: bool,
    pub rank_by_distance_to_one: bool,
}

impl Default for IsgdParams {
    fn default() -> Self {
        IsgdParams { k: 10, eta: 0.05, lambda: 0.01, sequential_update: false, rank_by_distance_to_one: false }
    }
}

impl From<&EngineConfig> for IsgdParams {
    fn from(c: &EngineConfig) -> Self {
        IsgdParams {
            k: c.k,
            eta: c.eta,
            lambda: c.lambda,
            sequential_update: c.sequential_update,
            rank_by_distance_to_one: c.rank_by_distance_to_one,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One worker's latent factors plus the bookkeeping forgetting needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    params: IsgdParams,
    user_vectors: HashMap<UserId, Vec<f64>>,
    item_vectors: HashMap<ItemId, Vec<f64>>,
    seen: HashMap<UserId, HashSet<ItemId>>,
    user_usage: HashMap<UserId, Usage>,
    item_usage: HashMap<ItemId, Usage>,
}

impl FactorModel {
    pub fn new(params: IsgdParams) -> Self {
        FactorModel {
            params,
            user_vectors: HashMap::new(),
            item_vectors: HashMap::new(),
            seen: HashMap::new(),
            user_usage: HashMap::new(),
            item_usage: HashMap::new(),
        }
    }

    pub fn params(&self) -> &IsgdParams {
        &self.params
    }

    /// Creates whichever of the two vectors is missing (user first, then item).
    pub fn ensure_vectors(&mut self, rng: &mut StreamRng, user_id: UserId, item_id: ItemId) {
        let k = self.params.k;
        self.user_vectors.entry(user_id).or_insert_with(|| rng.normal_vec(k, INIT_STD_DEV));
        self.item_vectors.entry(item_id).or_insert_with(|| rng.normal_vec(k, INIT_STD_DEV));
    }

    pub fn predict(&self, user_id: UserId, item_id: ItemId) -> Result<f64, ModelError> {
        let u = self.user_vectors.get(&user_id).ok_or(ModelError::UnknownUser(user_id))?;
        let i = self.item_vectors.get(&item_id).ok_or(ModelError::UnknownItem(item_id))?;
        Ok(dot(u, i))
    }

    /// One SGD step on the observed pair. Both vectors must already exist.
    pub fn train(&mut self, user_id: UserId, item_id: ItemId, timestamp: i64) -> Result<(), ModelError> {
        let IsgdParams { eta, lambda, sequential_update, .. } = self.params;
        let u = self.user_vectors.get_mut(&user_id).ok_or(ModelError::UnknownUser(user_id))?;
        let i = self.item_vectors.get_mut(&item_id).ok_or(ModelError::UnknownItem(item_id))?;
        let err = 1.0 - dot(u, i);
        for (uc, ic) in u.iter_mut().zip(i.iter_mut()) {
            let (u_old, i_old) = (*uc, *ic);
            *uc = u_old + eta * (err * i_old - lambda * u_old);
            let u_src = if sequential_update { *uc } else { u_old };
            *ic = i_old + eta * (err * u_src - lambda * i_old);
        }
        self.seen.entry(user_id).or_default().insert(item_id);
        Usage::touch(&mut self.user_usage, user_id, timestamp);
        Usage::touch(&mut self.item_usage, item_id, timestamp);
        Ok(())
    }

    /// Top-`n` unseen worker-local items for the user. Unknown users get nothing.
    pub fn recommend(&self, user_id: UserId, n: usize) -> Vec<ItemId> {
        let Some(u) = self.user_vectors.get(&user_id) else {
            return Vec::new();
        };
        let seen = self.seen.get(&user_id);
        let by_distance = self.params.rank_by_distance_to_one;
        let scored: Vec<(ItemId, f64)> = self
            .item_vectors
            .iter()
            .filter(|(id, _)| seen.is_none_or(|s| !s.contains(id)))
            .map(|(&id, v)| {
                let score = dot(u, v);
                (id, if by_distance { -(1.0 - score).abs() } else { score })
            })
            .collect();
        top_n(scored, n)
    }

    pub fn user_vector(&self, user_id: UserId) -> Option<&[f64]> {
        self.user_vectors.get(&user_id).map(Vec::as_slice)
    }

    pub fn item_vector(&self, item_id: ItemId) -> Option<&[f64]> {
        self.item_vectors.get(&item_id).map(Vec::as_slice)
    }

    /// Overwrites a user vector; the length must equal `k`.
    pub fn set_user_vector(&mut self, user_id: UserId, v: Vec<f64>) -> Result<(), ModelError> {
        self.check_len(&v)?;
        self.user_vectors.insert(user_id, v);
        Ok(())
    }

    /// Overwrites an item vector; the length must equal `k`.
    pub fn set_item_vector(&mut self, item_id: ItemId, v: Vec<f64>) -> Result<(), ModelError> {
        self.check_len(&v)?;
        self.item_vectors.insert(item_id, v);
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<(), ModelError> {
        if v.len() != self.params.k {
            return Err(ModelError::Dimension { expected: self.params.k, found: v.len() });
        }
        Ok(())
    }

    pub fn seen_items(&self, user_id: UserId) -> Option<&HashSet<ItemId>> {
        self.seen.get(&user_id)
    }

    pub fn user_ids(&self) -> impl Iterator<Item = UserId> + '_ {
        self.user_vectors.keys().copied()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.item_vectors.keys().copied()
    }

    pub fn user_count(&self) -> usize {
        self.user_vectors.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_vectors.len()
    }
}

impl Forgettable for FactorModel {
    fn user_usage(&self) -> &HashMap<UserId, Usage> {
        &self.user_usage
    }

    fn item_usage(&self) -> &HashMap<ItemId, Usage> {
        &self.item_usage
    }

    fn evict(&mut self, users: &[UserId], items: &[ItemId]) -> SweepReport {
        let mut report = SweepReport::default();
        for u in users {
            let had_vector = self.user_vectors.remove(u).is_some();
            self.seen.remove(u);
            if self.user_usage.remove(u).is_some() || had_vector {
                report.users_evicted += 1;
            }
        }
        let mut gone = HashSet::with_capacity(items.len());
        for i in items {
            let had_vector = self.item_vectors.remove(i).is_some();
            if self.item_usage.remove(i).is_some() || had_vector {
                report.items_evicted += 1;
                gone.insert(*i);
            }
        }
        if !gone.is_empty() {
            self.seen.retain(|_, s| {
                s.retain(|i| !gone.contains(i));
                !s.is_empty()
            });
        }
        report
    }
}
