//! Seeded synthetic rating streams with popularity skew and taste groups.
//!
//! Users and items are drawn from Zipf distributions. Every user belongs to a
//! taste group; with probability `taste_affinity` an event picks from the
//! group's own (rotated) popularity ranking instead of the global one, which
//! gives the stream learnable co-occurrence structure. A user never rates the
//! same item twice unless 32 redraws all collide.
//!
//! With `concurrent_sessions > 0` users behave like rating-site visitors
//! instead: a fixed number of sessions is open at any time, each event comes
//! from a uniformly chosen open session, and a session closes after a
//! geometric number of ratings (mean `events / users`). User ids are handed
//! out in arrival order and wrap around once all `users` have appeared.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::config::RatingEvent;
use crate::ingest::{preprocess, RawRating};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    /// Zipf exponent of item popularity.
    pub item_zipf: f64,
    /// Zipf exponent of user activity.
    pub user_zipf: f64,
    pub taste_groups: usize,
    /// Probability that an event follows the user's group ranking.
    pub taste_affinity: f64,
    /// Open user sessions; 0 draws every event's user independently.
    pub concurrent_sessions: usize,
    pub seed: u64,
    pub start_time: i64,
    /// Mean gap between consecutive events, seconds.
    pub mean_gap_secs: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 500,
            items: 100,
            events: 5000,
            item_zipf: 1.0,
            user_zipf: 0.8,
            taste_groups: 8,
            taste_affinity: 0.7,
            concurrent_sessions: 0,
            seed: 1,
            start_time: 1_000_000_000,
            mean_gap_secs: 60,
        }
    }
}

impl SyntheticConfig {
    fn group_of(&self, user: u64) -> u64 {
        user.wrapping_mul(0x9E37_79B9_7F4A_7C15) % self.taste_groups.max(1) as u64
    }

    /// Five-star ratings in time order.
    pub fn raw(&self) -> Vec<RawRating> {
        assert!(self.users > 0 && self.items > 0, "synthetic stream needs users and items");
        let mut rng = StreamRng::new(self.seed);
        let users = Zipf::new(self.users as f64, self.user_zipf).expect("valid user zipf");
        let items = Zipf::new(self.items as f64, self.item_zipf).expect("valid item zipf");
        let groups = self.taste_groups.max(1) as u64;
        let n_items = self.items as u64;
        let mut rated: HashMap<u64, HashSet<u64>> = HashMap::new();
        let mut t = self.start_time;
        let mut out = Vec::with_capacity(self.events);
        let mut sessions: Vec<u64> = Vec::new();
        let mut next_user = 0u64;
        let close_p = (self.users as f64 / self.events.max(1) as f64).clamp(1e-9, 1.0);
        for _ in 0..self.events {
            let user = if self.concurrent_sessions == 0 {
                users.sample(&mut rng) as u64 - 1
            } else {
                while sessions.len() < self.concurrent_sessions {
                    sessions.push(next_user % self.users as u64);
                    next_user += 1;
                }
                let slot = rng.random_range(0..sessions.len());
                let user = sessions[slot];
                if rng.random_bool(close_p) {
                    sessions.swap_remove(slot);
                }
                user
            };
            let offset = self.group_of(user) * n_items / groups;
            let seen = rated.entry(user).or_default();
            let mut item = 0;
            for _ in 0..32 {
                let rank = items.sample(&mut rng) as u64 - 1;
                item = if rng.random_bool(self.taste_affinity) { (rank + offset) % n_items } else { rank };
                if !seen.contains(&item) {
                    break;
                }
            }
            seen.insert(item);
            t += rng.random_range(0..=2 * self.mean_gap_secs) as i64;
            out.push(RawRating { user_id: user, item_id: item, rating: 5.0, timestamp: t });
        }
        out
    }

    /// The preprocessed event stream.
    pub fn events(&self) -> Vec<RatingEvent> {
        preprocess(self.raw(), 5.0)
    }
}
