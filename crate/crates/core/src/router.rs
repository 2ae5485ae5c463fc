//! Rating routing over an `n_i x n_u` worker grid, `n_u = n_i + w`.
//!
//! Worker `r * n_u + c` sits in item row `r = item mod n_i` and user column
//! `c = user mod n_u`. An item's replicas are its whole row, a user's replicas
//! its whole column, and the pair lands on the one cell where they cross.

use crate::config::{derive_cluster_size, ConfigError, ItemId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoutingPlan {
    n_i: usize,
    n_u: usize,
    n_c: usize,
}

impl RoutingPlan {
    pub fn new(n_i: usize, w: usize) -> Result<Self, ConfigError> {
        if n_i == 0 {
            return Err(ConfigError::Constraint("n_i must be >= 1".into()));
        }
        Ok(RoutingPlan { n_i, n_u: n_i + w, n_c: derive_cluster_size(n_i, w) })
    }

    /// Item splits (grid rows).
    pub fn n_i(&self) -> usize {
        self.n_i
    }

    /// User splits (grid columns).
    pub fn n_u(&self) -> usize {
        self.n_u
    }

    /// Workers.
    pub fn n_c(&self) -> usize {
        self.n_c
    }

    #[inline]
    pub fn item_hash(&self, item_id: ItemId) -> usize {
        (item_id % self.n_i as u64) as usize
    }

    #[inline]
    pub fn user_hash(&self, user_id: UserId) -> usize {
        (user_id % self.n_u as u64) as usize
    }

    /// The single worker that owns the `(user, item)` pair.
    #[inline]
    pub fn route(&self, user_id: UserId, item_id: ItemId) -> usize {
        self.item_hash(item_id) * self.n_u + self.user_hash(user_id)
    }

    /// Workers holding a replica of the item, ascending.
    pub fn item_replica_set(&self, item_id: ItemId) -> Vec<usize> {
        let row = self.item_hash(item_id) * self.n_u;
        (0..self.n_u).map(|x| row + x).collect()
    }

    /// Workers holding a replica of the user, ascending.
    pub fn user_replica_set(&self, user_id: UserId) -> Vec<usize> {
        let col = self.user_hash(user_id);
        (0..self.n_i).map(|y| col + y * self.n_u).collect()
    }
}
