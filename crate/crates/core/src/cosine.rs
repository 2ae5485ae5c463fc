//! Incremental item-based cosine similarity.
//!
//! For every item the model keeps the running rating sum, and for every
//! co-rated pair the running sum of `min(r_up, r_uq)` over shared raters, so
//!
//! ```text
//! sim(p, q) = pair_min_sum(p, q) / (sqrt(item_sum(p)) * sqrt(item_sum(q)))
//! ```
//!
//! is always current after a single O(|history(u)|) update per event. Under
//! binary ratings this is exactly the batch cosine of the two item columns.

use std::collections::HashMap;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::config::{ItemId, UserId};
use crate::forgetting::{Forgettable, SweepReport, Usage};
use crate::topn::top_n;

/// One worker's similarity state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimilarityModel {
    item_sum: FxHashMap<ItemId, f64>,
    /// Symmetric: `neighbors[p][q] == neighbors[q][p]` is the pair min-sum of
    /// every co-rated pair, so each stored pair appears under both items.
    neighbors: FxHashMap<ItemId, FxHashMap<ItemId, f64>>,
    pair_count: usize,
    history: FxHashMap<UserId, Vec<(ItemId, f64)>>,
    user_usage: HashMap<UserId, Usage>,
    item_usage: HashMap<ItemId, Usage>,
}

impl SimilarityModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cosine similarity of two distinct items; 0 when either item or the pair is unknown.
    pub fn similarity(&self, p: ItemId, q: ItemId) -> f64 {
        let Some(&shared) = self.neighbors.get(&p).and_then(|n| n.get(&q)) else {
            return 0.0;
        };
        match (self.item_sum.get(&p), self.item_sum.get(&q)) {
            (Some(&sp), Some(&sq)) if sp > 0.0 && sq > 0.0 => shared / (sp.sqrt() * sq.sqrt()),
            _ => 0.0,
        }
    }

    /// Folds one rating into the sums. A repeated `(user, item)` only refreshes usage.
    pub fn update(&mut self, user_id: UserId, item_id: ItemId, rating: f64, timestamp: i64) {
        Usage::touch(&mut self.user_usage, user_id, timestamp);
        Usage::touch(&mut self.item_usage, item_id, timestamp);

        let hist = self.history.entry(user_id).or_default();
        if hist.iter().any(|&(i, _)| i == item_id) {
            return;
        }
        if !hist.is_empty() {
            let own = self.neighbors.entry(item_id).or_default();
            for &(q, r_q) in hist.iter() {
                let slot = own.entry(q).or_insert_with(|| {
                    self.pair_count += 1;
                    0.0
                });
                *slot += rating.min(r_q);
            }
            for &(q, r_q) in hist.iter() {
                *self.neighbors.entry(q).or_default().entry(item_id).or_insert(0.0) += rating.min(r_q);
            }
        }
        *self.item_sum.entry(item_id).or_insert(0.0) += rating;
        hist.push((item_id, rating));
    }

    /// The `neighbors_k` most similar items the user rated, as `(item, sim, rating)`,
    /// best first. Items with zero similarity never qualify.
    fn neighborhood(&self, user_id: UserId, p: ItemId, neighbors_k: usize) -> Vec<(ItemId, f64, f64)> {
        let Some(hist) = self.history.get(&user_id) else {
            return Vec::new();
        };
        let mut hood: Vec<(ItemId, f64, f64)> = hist
            .iter()
            .filter(|&&(q, _)| q != p)
            .map(|&(q, r)| (q, self.similarity(p, q), r))
            .filter(|&(_, s, _)| s > 0.0)
            .collect();
        hood.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hood.truncate(neighbors_k);
        hood
    }

    /// Similarity-weighted average of the user's ratings over the item's
    /// `neighbors_k` nearest rated neighbors; 0 when none is similar at all.
    pub fn estimate(&self, user_id: UserId, p: ItemId, neighbors_k: usize) -> f64 {
        let hood = self.neighborhood(user_id, p, neighbors_k);
        let weight: f64 = hood.iter().map(|x| x.1).sum();
        if weight == 0.0 {
            return 0.0;
        }
        hood.iter().map(|x| x.1 * x.2).sum::<f64>() / weight
    }

    /// Candidate scores: for every unrated item sharing a rater with the user's
    /// history, the sum of its `neighbors_k` largest similarities to that history.
    pub fn candidate_scores(&self, user_id: UserId, neighbors_k: usize) -> Vec<(ItemId, f64)> {
        let Some(hist) = self.history.get(&user_id) else {
            return Vec::new();
        };
        // sim(p, q) = shared / sqrt(s_q) / sqrt(s_p); the 1/sqrt(s_p) factor is
        // common to all of p's terms, so top-k selection runs on the partial
        // values and the factor is applied once per candidate.
        let k = neighbors_k;
        let mut slot_of: FxHashMap<ItemId, usize> = FxHashMap::default();
        let mut ids: Vec<ItemId> = Vec::new();
        let mut filled: Vec<usize> = Vec::new();
        let mut best: Vec<f64> = Vec::new();
        // smallest kept value of each full slot
        let mut floor: Vec<f64> = Vec::new();
        for &(q, _) in hist {
            let (Some(partners), Some(&sq)) = (self.neighbors.get(&q), self.item_sum.get(&q)) else { continue };
            if sq <= 0.0 {
                continue;
            }
            let inv_q = 1.0 / sq.sqrt();
            for (&p, &shared) in partners {
                if shared <= 0.0 {
                    continue;
                }
                let v = shared * inv_q;
                let slot = *slot_of.entry(p).or_insert_with(|| {
                    ids.push(p);
                    filled.push(0);
                    floor.push(0.0);
                    best.resize(best.len() + k, 0.0);
                    ids.len() - 1
                });
                let top = &mut best[slot * k..(slot + 1) * k];
                if filled[slot] < k {
                    top[filled[slot]] = v;
                    filled[slot] += 1;
                    if filled[slot] == k {
                        floor[slot] = top.iter().copied().fold(f64::INFINITY, f64::min);
                    }
                } else if k > 0 && v > floor[slot] {
                    let at = top.iter().position(|&x| x == floor[slot]).expect("floor is kept");
                    top[at] = v;
                    floor[slot] = top.iter().copied().fold(f64::INFINITY, f64::min);
                }
            }
        }
        let rated: FxHashSet<ItemId> = hist.iter().map(|x| x.0).collect();
        ids.into_iter()
            .enumerate()
            .filter(|(_, p)| !rated.contains(p))
            .filter_map(|(slot, p)| {
                let sp = *self.item_sum.get(&p)?;
                (sp > 0.0).then(|| (p, best[slot * k..slot * k + filled[slot]].iter().sum::<f64>() / sp.sqrt()))
            })
            .collect()
    }

    /// Top-`n` unrated items by summed neighbor similarity, ties by ascending id.
    pub fn recommend(&self, user_id: UserId, n: usize, neighbors_k: usize) -> Vec<ItemId> {
        top_n(self.candidate_scores(user_id, neighbors_k), n)
    }

    pub fn item_sum(&self, item_id: ItemId) -> Option<f64> {
        self.item_sum.get(&item_id).copied()
    }

    pub fn pair_min_sum(&self, p: ItemId, q: ItemId) -> Option<f64> {
        self.neighbors.get(&p)?.get(&q).copied()
    }

    pub fn history(&self, user_id: UserId) -> Option<&[(ItemId, f64)]> {
        self.history.get(&user_id).map(Vec::as_slice)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.item_sum.keys().copied()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.history.keys().copied()
    }

    /// Stored pairs as `((low id, high id), min-sum)`.
    pub fn pairs(&self) -> impl Iterator<Item = ((ItemId, ItemId), f64)> + '_ {
        self.neighbors.iter().flat_map(|(&p, n)| n.iter().filter(move |(&q, _)| p < q).map(move |(&q, &v)| ((p, q), v)))
    }

    pub fn user_count(&self) -> usize {
        self.history.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_sum.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut directed = 0usize;
        for (&p, partners) in &self.neighbors {
            if partners.is_empty() {
                return Err(format!("item {p} has an empty neighbor map"));
            }
            for (&q, &m) in partners {
                directed += 1;
                if p == q {
                    return Err(format!("item {p} paired with itself"));
                }
                let (Some(&sp), Some(&sq)) = (self.item_sum.get(&p), self.item_sum.get(&q)) else {
                    return Err(format!("pair ({p},{q}) references a missing item"));
                };
                if m > sp.min(sq) {
                    return Err(format!("pair ({p},{q}) min-sum {m} exceeds min({sp},{sq})"));
                }
                if self.neighbors.get(&q).and_then(|n| n.get(&p)) != Some(&m) {
                    return Err(format!("pair ({p},{q}) is not stored symmetrically"));
                }
            }
        }
        if directed != 2 * self.pair_count {
            return Err(format!("pair count {} but {directed} directed entries", self.pair_count));
        }
        for (&u, hist) in &self.history {
            let mut seen = FxHashSet::default();
            for &(i, _) in hist {
                if !self.item_sum.contains_key(&i) {
                    return Err(format!("history of user {u} references missing item {i}"));
                }
                if !seen.insert(i) {
                    return Err(format!("history of user {u} repeats item {i}"));
                }
            }
        }
        Ok(())
    }
}

impl Forgettable for SimilarityModel {
    fn user_usage(&self) -> &HashMap<UserId, Usage> {
        &self.user_usage
    }

    fn item_usage(&self) -> &HashMap<ItemId, Usage> {
        &self.item_usage
    }

    fn evict(&mut self, users: &[UserId], items: &[ItemId]) -> SweepReport {
        let mut report = SweepReport::default();
        for u in users {
            let had_history = self.history.remove(u).is_some();
            if self.user_usage.remove(u).is_some() || had_history {
                report.users_evicted += 1;
            }
        }
        let mut gone = FxHashSet::default();
        for &i in items {
            let had_sum = self.item_sum.remove(&i).is_some();
            if self.item_usage.remove(&i).is_some() || had_sum {
                report.items_evicted += 1;
                gone.insert(i);
            }
            let Some(partners) = self.neighbors.remove(&i) else { continue };
            for p in partners.into_keys() {
                report.pairs_evicted += 1;
                self.pair_count -= 1;
                if let Some(back) = self.neighbors.get_mut(&p) {
                    back.remove(&i);
                    if back.is_empty() {
                        self.neighbors.remove(&p);
                    }
                }
            }
        }
        if !gone.is_empty() {
            for hist in self.history.values_mut() {
                hist.retain(|(i, _)| !gone.contains(i));
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forgetting::{sweep, ForgettingPolicy};
    use proptest::prelude::*;

    fn feed(events: &[(u64, u64)]) -> SimilarityModel {
        let mut m = SimilarityModel::new();
        for (t, &(u, i)) in events.iter().enumerate() {
            m.update(u, i, 1.0, t as i64);
        }
        m
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(feed(&[(1, 10), (1, 20)]).similarity(10, 20), 1.0);
        // p rated by {1,2}, q rated by {1,3}: one shared rater over sqrt(2)*sqrt(2)
        let m = feed(&[(1, 10), (2, 10), (1, 20), (3, 20)]);
        assert!((m.similarity(10, 20) - 0.5).abs() < 1e-15);
        assert_eq!(feed(&[(1, 10), (2, 20)]).similarity(10, 20), 0.0);
        assert_eq!(SimilarityModel::new().similarity(1, 2), 0.0);
    }

    #[test]
    fn update_examples() {
        let m = feed(&[(1, 5)]);
        assert_eq!(m.item_sum(5), Some(1.0));
        assert_eq!(m.pair_count(), 0);
        assert_eq!(m.history(1), Some(&[(5, 1.0)][..]));

        let m = feed(&[(1, 5), (1, 6)]);
        assert_eq!(m.pair_min_sum(5, 6), Some(1.0));
        assert_eq!(m.item_sum(6), Some(1.0));

        let dup = feed(&[(1, 5), (1, 6), (1, 6), (1, 5)]);
        assert_eq!(dup.item_sum(5), Some(1.0));
        assert_eq!(dup.item_sum(6), Some(1.0));
        assert_eq!(dup.pair_min_sum(6, 5), Some(1.0));
        assert_eq!(dup.item_usage()[&6].frequency, 2);
    }

    #[test]
    fn estimate_examples() {
        // p=1 shares raters with a=2 and b=3; user 9 rated a and b
        let m = feed(&[(9, 2), (9, 3), (1, 1), (1, 2), (4, 1), (4, 3), (5, 3), (6, 3)]);
        assert!(m.similarity(1, 2) > m.similarity(1, 3));
        assert_eq!(m.estimate(9, 1, 10), 1.0);
        assert_eq!(m.estimate(9, 1, 1), 1.0);
        assert_eq!(m.estimate(9, 77, 10), 0.0);
        assert_eq!(m.estimate(1234, 1, 10), 0.0);
    }

    #[test]
    fn estimate_weights_by_similarity() {
        let mut m = SimilarityModel::new();
        // non-binary ratings make the weighting visible
        m.update(1, 10, 1.0, 0);
        m.update(1, 20, 1.0, 0);
        m.update(2, 10, 1.0, 0);
        m.update(2, 30, 1.0, 0);
        m.update(3, 30, 1.0, 0);
        m.update(9, 20, 0.5, 0);
        m.update(9, 30, 1.0, 0);
        let (s20, s30) = (m.similarity(10, 20), m.similarity(10, 30));
        let expected = (s20 * 0.5 + s30 * 1.0) / (s20 + s30);
        assert!((m.estimate(9, 10, 10) - expected).abs() < 1e-15);
        let top1 = if s20 >= s30 { 0.5 } else { 1.0 };
        assert_eq!(m.estimate(9, 10, 1), top1);
    }

    #[test]
    fn recommend_ranks_by_similarity_sum() {
        assert!(SimilarityModel::new().recommend(1, 10, 10).is_empty());
        let m = feed(&[(1, 1), (1, 2), (2, 1), (2, 3), (3, 1), (3, 3), (4, 3), (5, 2), (9, 1)]);
        let scores: HashMap<_, _> = m.candidate_scores(9, 10).into_iter().collect();
        assert!(scores[&3] > scores[&2], "{scores:?}");
        assert_eq!(m.recommend(9, 1, 10), vec![3]);
        assert_eq!(m.recommend(9, 10, 10), vec![3, 2]);
        // nothing co-rated with item 4
        let lonely = feed(&[(1, 1), (2, 4), (9, 4)]);
        assert!(lonely.recommend(9, 10, 10).is_empty());
    }

    #[test]
    fn recommend_excludes_history() {
        let m = feed(&[(1, 1), (1, 2), (1, 3), (2, 1), (2, 2)]);
        assert!(m.recommend(2, 10, 10).iter().all(|i| ![1, 2].contains(i)));
    }

    #[test]
    fn sweep_cascades() {
        let mut m = feed(&[(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]);
        let before_23 = m.pair_min_sum(2, 3);
        // item 1 has frequency 1, user 3 too
        let r = sweep(&ForgettingPolicy::lfu(1, 2), &mut m, 10);
        assert_eq!(r, SweepReport { users_evicted: 1, items_evicted: 1, pairs_evicted: 2 });
        assert_eq!(m.item_sum(1), None);
        assert_eq!(m.pair_min_sum(1, 2), None);
        assert_eq!(m.pair_min_sum(2, 3), before_23);
        assert_eq!(m.history(1), Some(&[(2, 1.0), (3, 1.0)][..]));
        assert!(m.history(3).is_none());
        m.check_invariants().unwrap();
    }

    proptest! {
        #[test]
        fn invariants_hold_under_random_streams(
            events in prop::collection::vec((0u64..12, 0u64..15), 0..200),
            threshold in 1u64..4,
        ) {
            let mut m = feed(&events);
            m.check_invariants().unwrap();
            for ((p, q), _) in m.pairs() {
                let s = m.similarity(p, q);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
                prop_assert_eq!(s.to_bits(), m.similarity(q, p).to_bits());
            }
            sweep(&ForgettingPolicy::lfu(1, threshold), &mut m, 0);
            m.check_invariants().unwrap();
        }

        #[test]
        fn user_event_order_does_not_matter(items in prop::collection::vec(0u64..20, 1..15), seed in 0u64..1000) {
            let forward: Vec<(u64, u64)> = items.iter().map(|&i| (1, i)).collect();
            let mut shuffled = forward.clone();
            // deterministic rotation plus reversal as the permutation
            let len = shuffled.len();
            shuffled.rotate_left(seed as usize % len);
            shuffled.reverse();
            let (a, b) = (feed(&forward), feed(&shuffled));
            prop_assert_eq!(&a.item_sum, &b.item_sum);
            prop_assert_eq!(&a.neighbors, &b.neighbors);
        }
    }
}
