//! LFU and LRU eviction sweeps over per-worker model state.
//!
//! A sweep is triggered either every `c` processed events (LFU) or every `t`
//! seconds of event time (LRU). It then drops every user and item whose
//! frequency is below the LFU controller threshold, or whose last event is
//! older than the LRU controller threshold, and cascades the removal through
//! whatever structures reference the evicted entity.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::config::{ConfigError, ItemId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ForgettingKind {
    #[default]
    None,
    Lfu,
    Lru,
}

impl FromStr for ForgettingKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(ForgettingKind::None),
            "lfu" => Ok(ForgettingKind::Lfu),
            "lru" => Ok(ForgettingKind::Lru),
            other => Err(ConfigError::InvalidValue {
                key: "forgetting".into(),
                value: other.into(),
                reason: "expected one of none, lru, lfu".into(),
            }),
        }
    }
}

impl fmt::Display for ForgettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForgettingKind::None => "none",
            ForgettingKind::Lfu => "lfu",
            ForgettingKind::Lru => "lru",
        })
    }
}

/// Trigger and controller thresholds. Only the fields of the active kind matter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgettingPolicy {
    pub kind: ForgettingKind,
    /// LFU trigger: events between sweeps.
    pub lfu_trigger_count: u64,
    /// LFU controller: entities seen fewer times than this are evicted.
    pub lfu_min_frequency: u64,
    pub lfu_min_frequency_users: Option<u64>,
    pub lfu_min_frequency_items: Option<u64>,
    /// LRU trigger: event-time seconds between sweeps.
    pub lru_trigger_interval: i64,
    /// LRU controller: entities idle longer than this are evicted.
    pub lru_max_age: i64,
    pub lru_max_age_users: Option<i64>,
    pub lru_max_age_items: Option<i64>,
}

impl Default for ForgettingPolicy {
    fn default() -> Self {
        ForgettingPolicy {
            kind: ForgettingKind::None,
            lfu_trigger_count: 10_000,
            lfu_min_frequency: 2,
            lfu_min_frequency_users: None,
            lfu_min_frequency_items: None,
            lru_trigger_interval: 86_400,
            lru_max_age: 30 * 86_400,
            lru_max_age_users: None,
            lru_max_age_items: None,
        }
    }
}

impl ForgettingPolicy {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn lfu(trigger_count: u64, min_frequency: u64) -> Self {
        ForgettingPolicy {
            kind: ForgettingKind::Lfu,
            lfu_trigger_count: trigger_count,
            lfu_min_frequency: min_frequency,
            ..Self::default()
        }
    }

    pub fn lru(trigger_interval: i64, max_age: i64) -> Self {
        ForgettingPolicy {
            kind: ForgettingKind::Lru,
            lru_trigger_interval: trigger_interval,
            lru_max_age: max_age,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Constraint(m.into()));
        match self.kind {
            ForgettingKind::None => Ok(()),
            ForgettingKind::Lfu => {
                if self.lfu_trigger_count == 0 {
                    return bad("lfu trigger count must be > 0");
                }
                if self.user_min_frequency() == 0 || self.item_min_frequency() == 0 {
                    return bad("lfu minimum frequency must be > 0");
                }
                Ok(())
            }
            ForgettingKind::Lru => {
                if self.lru_trigger_interval <= 0 {
                    return bad("lru trigger interval must be > 0");
                }
                if self.user_max_age() <= 0 || self.item_max_age() <= 0 {
                    return bad("lru max age must be > 0");
                }
                Ok(())
            }
        }
    }

    pub fn user_min_frequency(&self) -> u64 {
        self.lfu_min_frequency_users.unwrap_or(self.lfu_min_frequency)
    }

    pub fn item_min_frequency(&self) -> u64 {
        self.lfu_min_frequency_items.unwrap_or(self.lfu_min_frequency)
    }

    pub fn user_max_age(&self) -> i64 {
        self.lru_max_age_users.unwrap_or(self.lru_max_age)
    }

    pub fn item_max_age(&self) -> i64 {
        self.lru_max_age_items.unwrap_or(self.lru_max_age)
    }

    /// Whether the trigger threshold has been reached.
    pub fn should_sweep(&self, events_since_last: u64, event_time_now: i64, last_sweep_time: i64) -> bool {
        match self.kind {
            ForgettingKind::None => false,
            ForgettingKind::Lfu => events_since_last >= self.lfu_trigger_count,
            ForgettingKind::Lru => event_time_now.saturating_sub(last_sweep_time) >= self.lru_trigger_interval,
        }
    }

    fn evicts(&self, usage: &Usage, min_frequency: u64, max_age: i64, now: i64) -> bool {
        match self.kind {
            ForgettingKind::None => false,
            ForgettingKind::Lfu => usage.frequency < min_frequency,
            ForgettingKind::Lru => now.saturating_sub(usage.last_seen) > max_age,
        }
    }
}

/// Access metadata kept for every stored user and item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Usage {
    /// Events touching the entity on this worker.
    pub frequency: u64,
    /// Event time of the latest such event.
    pub last_seen: i64,
}

impl Usage {
    pub(crate) fn touch(map: &mut HashMap<u64, Usage>, id: u64, timestamp: i64) {
        map.entry(id)
            .and_modify(|u| {
                u.frequency += 1;
                u.last_seen = u.last_seen.max(timestamp);
            })
            .or_insert(Usage { frequency: 1, last_seen: timestamp });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepReport {
    pub users_evicted: usize,
    pub items_evicted: usize,
    pub pairs_evicted: usize,
}

impl SweepReport {
    pub fn is_empty(&self) -> bool {
        self.users_evicted == 0 && self.items_evicted == 0 && self.pairs_evicted == 0
    }
}

/// State that can be swept. Implementors remove the given entities together
/// with everything that references them, and leave survivors untouched.
pub trait Forgettable {
    fn user_usage(&self) -> &HashMap<UserId, Usage>;
    fn item_usage(&self) -> &HashMap<ItemId, Usage>;
    fn evict(&mut self, users: &[UserId], items: &[ItemId]) -> SweepReport;
}

/// Applies the policy's controller threshold to every user and item.
pub fn sweep<M: Forgettable + ?Sized>(policy: &ForgettingPolicy, model: &mut M, event_time_now: i64) -> SweepReport {
    if policy.kind == ForgettingKind::None {
        return SweepReport::default();
    }
    let (uf, ua) = (policy.user_min_frequency(), policy.user_max_age());
    let (itf, ita) = (policy.item_min_frequency(), policy.item_max_age());
    let users: Vec<UserId> = model
        .user_usage()
        .iter()
        .filter(|(_, u)| policy.evicts(u, uf, ua, event_time_now))
        .map(|(&id, _)| id)
        .collect();
    let items: Vec<ItemId> = model
        .item_usage()
        .iter()
        .filter(|(_, u)| policy.evicts(u, itf, ita, event_time_now))
        .map(|(&id, _)| id)
        .collect();
    if users.is_empty() && items.is_empty() {
        return SweepReport::default();
    }
    model.evict(&users, &items)
}
