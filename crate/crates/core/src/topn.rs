use std::cmp::Ordering;

use crate::config::ItemId;

/// Higher score first, then lower id.
#[inline]
pub(crate) fn rank_order(a: &(ItemId, f64), b: &(ItemId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `n` best-ranked ids, best first.
pub(crate) fn top_n(mut scored: Vec<(ItemId, f64)>, n: usize) -> Vec<ItemId> {
    if n == 0 || scored.is_empty() {
        return Vec::new();
    }
    if scored.len() > n {
        scored.select_nth_unstable_by(n - 1, rank_order);
        scored.truncate(n);
    }
    scored.sort_unstable_by(rank_order);
    scored.into_iter().map(|(id, _)| id).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_break_on_id() {
        assert_eq!(top_n(vec![(9, 0.9), (3, 0.2), (4, 0.9)], 2), vec![4, 9]);
    }

    proptest! {
        #[test]
        fn matches_full_sort(scores in prop::collection::vec(-5i32..5, 0..60), n in 0usize..20) {
            let scored: Vec<(u64, f64)> = scores.iter().enumerate().map(|(i, &s)| (i as u64 * 7 % 61, s as f64)).collect();
            let mut full = scored.clone();
            full.sort_by(rank_order);
            let expect: Vec<u64> = full.into_iter().take(n).map(|x| x.0).collect();
            prop_assert_eq!(top_n(scored, n), expect);
        }
    }
}
