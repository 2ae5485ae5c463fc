//! Shared domain types and run configuration.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::forgetting::{ForgettingKind, ForgettingPolicy};

pub type UserId = u64;
pub type ItemId = u64;

/// One timestamped, binarized user-item feedback tuple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingEvent {
    /// Ordinal assigned at ingestion, strictly increasing along the stream.
    pub seq: u64,
    pub user_id: UserId,
    pub item_id: ItemId,
    /// Always 1.0 once the stream has been preprocessed.
    pub rating: f64,
    /// Event time in seconds since the epoch.
    pub timestamp: i64,
}

impl RatingEvent {
    pub fn new(seq: u64, user_id: UserId, item_id: ItemId, timestamp: i64) -> Self {
        RatingEvent { seq, user_id, item_id, rating: 1.0, timestamp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// Incremental SGD matrix factorization.
    Isgd,
    /// Incremental item cosine similarity.
    Dics,
}

impl FromStr for Algorithm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isgd" | "disgd" => Ok(Algorithm::Isgd),
            "dics" | "cosine" => Ok(Algorithm::Dics),
            other => Err(ConfigError::InvalidValue {
                key: "algo".into(),
                value: other.into(),
                reason: "expected one of isgd, dics".into(),
            }),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Isgd => f.write_str("isgd"),
            Algorithm::Dics => f.write_str("dics"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("{0}")]
    Constraint(String),
}

/// Number of workers needed for a full `n_i x (n_i + w)` grid.
pub fn derive_cluster_size(n_i: usize, w: usize) -> usize {
    n_i * (n_i + w)
}

/// Every knob of one engine run. Immutable once the run starts.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub algo: Algorithm,
    /// Replication factor: number of item splits.
    pub n_i: usize,
    /// Spare width: users are split `n_i + w` ways.
    pub w: usize,
    /// Latent dimension.
    pub k: usize,
    pub eta: f64,
    pub lambda: f64,
    /// Recommendation list size N.
    pub top_n: usize,
    /// Moving-average recall window.
    pub window: usize,
    /// Neighborhood size for the cosine estimate.
    pub neighbors_k: usize,
    pub forgetting: ForgettingPolicy,
    pub seed: u64,
    /// State snapshot period, in events.
    pub telemetry_every: u64,
    /// Capacity of each router-to-worker queue.
    pub queue_capacity: usize,
    /// Update the item vector from the already-updated user vector.
    pub sequential_update: bool,
    /// Rank ISGD candidates by `|1 - score|` ascending instead of score descending.
    pub rank_by_distance_to_one: bool,
    /// Leading fraction of the stream reported separately as warmup.
    pub warmup_fraction: f64,
    /// Cap on OS threads used for workers; `None` means one per worker.
    pub worker_threads: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            algo: Algorithm::Isgd,
            n_i: 1,
            w: 0,
            k: 10,
            eta: 0.05,
            lambda: 0.01,
            top_n: 10,
            window: 5000,
            neighbors_k: 10,
            forgetting: ForgettingPolicy::default(),
            seed: 42,
            telemetry_every: 5000,
            queue_capacity: 4096,
            sequential_update: false,
            rank_by_distance_to_one: false,
            warmup_fraction: 0.2,
            worker_threads: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    match value.trim() {
        "" | "none" => Ok(None),
        v => parse_num(key, v).map(Some),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => {
            Err(ConfigError::InvalidValue { key: key.into(), value: value.into(), reason: "expected a boolean".into() })
        }
    }
}

/// Splits flat `key = value` text into pairs. `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: idx + 1, text: raw.to_string() });
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl EngineConfig {
    pub fn n_u(&self) -> usize {
        self.n_i + self.w
    }

    pub fn n_c(&self) -> usize {
        derive_cluster_size(self.n_i, self.w)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Constraint(msg.to_string()));
        if self.n_i < 1 {
            return fail("n_i must be >= 1");
        }
        if self.k < 1 {
            return fail("k must be >= 1");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return fail("eta must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be >= 0");
        }
        if self.top_n < 1 {
            return fail("top_n must be >= 1");
        }
        if self.window < 1 {
            return fail("window must be >= 1");
        }
        if self.neighbors_k < 1 {
            return fail("neighbors_k must be >= 1");
        }
        if self.telemetry_every < 1 {
            return fail("telemetry_every must be >= 1");
        }
        if self.queue_capacity < 1 {
            return fail("queue_capacity must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1]");
        }
        if self.worker_threads == Some(0) {
            return fail("worker_threads must be >= 1");
        }
        self.forgetting.validate()
    }

    /// Assigns one field from its textual form. Accepts the canonical key
    /// names printed by [`EngineConfig::to_key_values`] and the CLI flag
    /// spellings (`ni`, `topn`, `lfu_trigger`, ...); dashes count as
    /// underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let norm = key.trim().replace('-', "_").to_ascii_lowercase();
        let fp = &mut self.forgetting;
        match norm.as_str() {
            "algo" => self.algo = value.parse()?,
            "n_i" | "ni" => self.n_i = parse_num(key, value)?,
            "w" => self.w = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "top_n" | "topn" => self.top_n = parse_num(key, value)?,
            "window" => self.window = parse_num(key, value)?,
            "neighbors_k" => self.neighbors_k = parse_num(key, value)?,
            "forgetting" => fp.kind = value.parse::<ForgettingKind>()?,
            "lfu_trigger_count" | "lfu_trigger" => fp.lfu_trigger_count = parse_num(key, value)?,
            "lfu_min_frequency" | "lfu_min_freq" => fp.lfu_min_frequency = parse_num(key, value)?,
            "lfu_min_frequency_users" | "lfu_min_freq_users" => fp.lfu_min_frequency_users = parse_opt(key, value)?,
            "lfu_min_frequency_items" | "lfu_min_freq_items" => fp.lfu_min_frequency_items = parse_opt(key, value)?,
            "lru_trigger_interval" | "lru_interval" => fp.lru_trigger_interval = parse_num(key, value)?,
            "lru_max_age" => fp.lru_max_age = parse_num(key, value)?,
            "lru_max_age_users" => fp.lru_max_age_users = parse_opt(key, value)?,
            "lru_max_age_items" => fp.lru_max_age_items = parse_opt(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "telemetry_every" => self.telemetry_every = parse_num(key, value)?,
            "queue_capacity" => self.queue_capacity = parse_num(key, value)?,
            "sequential_update" => self.sequential_update = parse_bool(key, value)?,
            "rank_by_distance_to_one" => self.rank_by_distance_to_one = parse_bool(key, value)?,
            "warmup_fraction" => self.warmup_fraction = parse_num(key, value)?,
            "worker_threads" => {
                self.worker_threads = match value.trim() {
                    "" | "auto" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Defaults overridden by every pair in `text`.
    pub fn from_key_value_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = EngineConfig::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Every effective field as canonical `(key, value)` pairs. Feeding the
    /// pairs back through [`EngineConfig::set`] reproduces `self`.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let fp = &self.forgetting;
        let opt = |v: Option<u64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let opt_i = |v: Option<i64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        vec![
            ("algo", self.algo.to_string()),
            ("n_i", self.n_i.to_string()),
            ("w", self.w.to_string()),
            ("n_c", self.n_c().to_string()),
            ("k", self.k.to_string()),
            ("eta", self.eta.to_string()),
            ("lambda", self.lambda.to_string()),
            ("top_n", self.top_n.to_string()),
            ("window", self.window.to_string()),
            ("neighbors_k", self.neighbors_k.to_string()),
            ("forgetting", fp.kind.to_string()),
            ("lfu_trigger_count", fp.lfu_trigger_count.to_string()),
            ("lfu_min_frequency", fp.lfu_min_frequency.to_string()),
            ("lfu_min_frequency_users", opt(fp.lfu_min_frequency_users)),
            ("lfu_min_frequency_items", opt(fp.lfu_min_frequency_items)),
            ("lru_trigger_interval", fp.lru_trigger_interval.to_string()),
            ("lru_max_age", fp.lru_max_age.to_string()),
            ("lru_max_age_users", opt_i(fp.lru_max_age_users)),
            ("lru_max_age_items", opt_i(fp.lru_max_age_items)),
            ("seed", self.seed.to_string()),
            ("telemetry_every", self.telemetry_every.to_string()),
            ("queue_capacity", self.queue_capacity.to_string()),
            ("sequential_update", self.sequential_update.to_string()),
            ("rank_by_distance_to_one", self.rank_by_distance_to_one.to_string()),
            ("warmup_fraction", self.warmup_fraction.to_string()),
            ("worker_threads", self.worker_threads.map_or_else(|| "auto".to_string(), |t| t.to_string())),
        ]
    }

    pub fn to_key_value_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_key_values() {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_size_examples() {
        assert_eq!(derive_cluster_size(1, 0), 1);
        assert_eq!(derive_cluster_size(2, 0), 4);
        assert_eq!(derive_cluster_size(2, 1), 6);
        assert_eq!(derive_cluster_size(4, 0), 16);
        assert_eq!(derive_cluster_size(6, 0), 36);
    }

    #[test]
    fn square_grid_without_spare_width() {
        for n in 1..64 {
            assert_eq!(derive_cluster_size(n, 0), n * n);
        }
    }

    #[test]
    fn defaults_are_valid() {
        let cfg = EngineConfig::default();
        cfg.validate().unwrap();
        assert_eq!((cfg.k, cfg.eta, cfg.lambda, cfg.top_n, cfg.window), (10, 0.05, 0.01, 10, 5000));
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = EngineConfig { n_i: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        cfg.n_i = 1;
        cfg.eta = 0.0;
        assert!(cfg.validate().is_err());
        cfg.eta = 0.05;
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn key_value_file_with_comments() {
        let text = "# experiment\nalgo = dics\nni = 2 # two item splits\n\nw=1\nforgetting = lfu\nlfu_trigger = 100\n";
        let cfg = EngineConfig::from_key_value_text(text).unwrap();
        assert_eq!(cfg.algo, Algorithm::Dics);
        assert_eq!((cfg.n_i, cfg.w, cfg.n_c()), (2, 1, 6));
        assert_eq!(cfg.forgetting.kind, ForgettingKind::Lfu);
        assert_eq!(cfg.forgetting.lfu_trigger_count, 100);
    }

    #[test]
    fn syntax_and_unknown_key_errors() {
        assert!(matches!(EngineConfig::from_key_value_text("algo dics"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(EngineConfig::from_key_value_text("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(EngineConfig::from_key_value_text("k = ten").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = EngineConfig::default();
        cfg.set("algo", "dics").unwrap();
        cfg.set("lru-max-age-items", "77").unwrap();
        cfg.set("worker_threads", "3").unwrap();
        cfg.set("sequential_update", "true").unwrap();
        let mut back = EngineConfig::default();
        for (k, v) in cfg.to_key_values() {
            if k == "n_c" {
                continue;
            }
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }
}
