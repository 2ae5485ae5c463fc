//! Self-check suites run by `streamrec validate`.
//!
//! Each suite recomputes a quantity by an independent route and compares it
//! with the production code path:
//!
//! * `routing`: enumerate both candidate lists and intersect them, for every
//!   `(u, i)` in `[0, 256)^2` and every grid in the test matrix.
//! * `isgd`: evaluate the two update formulas in closed form on random instances.
//! * `similarity`: recompute batch cosine from the raw rating prefix at
//!   regular checkpoints of a synthetic stream.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::cosine::SimilarityModel;
use crate::isgd::{FactorModel, IsgdParams};
use crate::rng::StreamRng;
use crate::router::RoutingPlan;
use crate::synthetic::SyntheticConfig;

pub const ROUTING_GRIDS: [(usize, usize); 15] = [
    (1, 0),
    (1, 1),
    (1, 2),
    (2, 0),
    (2, 1),
    (2, 2),
    (3, 0),
    (3, 1),
    (3, 2),
    (4, 0),
    (4, 1),
    (4, 2),
    (6, 0),
    (6, 1),
    (6, 2),
];
pub const ISGD_TOLERANCE: f64 = 1e-12;
pub const SIMILARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Routing,
    Isgd,
    Similarity,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Routing, Suite::Isgd, Suite::Similarity];
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Routing => "routing",
            Suite::Isgd => "isgd",
            Suite::Similarity => "similarity",
        })
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "routing" => Ok(Suite::Routing),
            "isgd" => Ok(Suite::Isgd),
            "similarity" | "dics" | "cosine" => Ok(Suite::Similarity),
            other => Err(format!("unknown suite `{other}` (expected routing, isgd, similarity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: u64,
    /// First failing case, if any.
    pub counterexample: Option<String>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    pub isgd_instances: usize,
    pub similarity_events: usize,
    pub similarity_checkpoint: usize,
    /// Added to every incremental similarity before comparison. Nonzero values
    /// simulate a broken implementation and must make the suite fail.
    pub similarity_perturbation: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 2024,
            isgd_instances: 10_000,
            similarity_events: 5000,
            similarity_checkpoint: 500,
            similarity_perturbation: 0.0,
        }
    }
}

pub fn run_suite(suite: Suite, opts: &ValidateOptions) -> SuiteReport {
    let start = Instant::now();
    let (checks, counterexample) = match suite {
        Suite::Routing => routing_suite(),
        Suite::Isgd => isgd_suite(opts.seed, opts.isgd_instances),
        Suite::Similarity => similarity_suite(
            opts.seed,
            opts.similarity_events,
            opts.similarity_checkpoint,
            opts.similarity_perturbation,
        ),
    };
    SuiteReport { suite, checks, counterexample, elapsed: start.elapsed() }
}

fn routing_suite() -> (u64, Option<String>) {
    let mut checks = 0;
    for (n_i, w) in ROUTING_GRIDS {
        let plan = RoutingPlan::new(n_i, w).expect("n_i >= 1");
        let n_u = n_i + w;
        for u in 0..256u64 {
            let user_hash = (u % n_u as u64) as usize;
            let column: HashSet<usize> = (0..n_i).map(|y| user_hash + y * n_u).collect();
            let user_set = plan.user_replica_set(u);
            if user_set.len() != n_i || user_set.iter().copied().collect::<HashSet<_>>() != column {
                return (
                    checks,
                    Some(format!("n_i={n_i} w={w} user={u}: user replicas {user_set:?}, expected {column:?}")),
                );
            }
            for i in 0..256u64 {
                let item_hash = (i % n_i as u64) as usize;
                let row: HashSet<usize> = (0..n_u).map(|x| item_hash * n_u + x).collect();
                let common: Vec<usize> = row.intersection(&column).copied().collect();
                let routed = plan.route(u, i);
                let item_set = plan.item_replica_set(i);
                checks += 1;
                if common.len() != 1 || common[0] != routed || routed >= plan.n_c() {
                    return (
                        checks,
                        Some(format!("n_i={n_i} w={w} (u={u}, i={i}): route {routed}, intersection {common:?}")),
                    );
                }
                if item_set.len() != n_u || item_set.iter().copied().collect::<HashSet<_>>() != row {
                    return (
                        checks,
                        Some(format!("n_i={n_i} w={w} item={i}: item replicas {item_set:?}, expected {row:?}")),
                    );
                }
            }
        }
    }
    (checks, None)
}

fn isgd_suite(seed: u64, instances: usize) -> (u64, Option<String>) {
    let mut rng = StreamRng::new(seed);
    for n in 0..instances {
        let k = rng.random_range(1..=16usize);
        let u: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let i: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eta = rng.random_range(1e-4..0.2);
        let lambda = rng.random_range(0.0..0.1);

        let mut err = 1.0;
        for c in 0..k {
            err -= u[c] * i[c];
        }
        let want_u: Vec<f64> = (0..k).map(|c| u[c] + eta * (err * i[c] - lambda * u[c])).collect();
        let want_i: Vec<f64> = (0..k).map(|c| i[c] + eta * (err * u[c] - lambda * i[c])).collect();

        let mut model = FactorModel::new(IsgdParams { k, eta, lambda, ..Default::default() });
        model.set_user_vector(0, u.clone()).expect("length k");
        model.set_item_vector(0, i.clone()).expect("length k");
        model.train(0, 0, 0).expect("vectors present");
        let got_u = model.user_vector(0).expect("trained");
        let got_i = model.item_vector(0).expect("trained");
        for c in 0..k {
            let du = (got_u[c] - want_u[c]).abs();
            let di = (got_i[c] - want_i[c]).abs();
            if du > ISGD_TOLERANCE || di > ISGD_TOLERANCE {
                return (
                    n as u64,
                    Some(format!(
                        "instance {n} (k={k}, eta={eta}, lambda={lambda}) component {c}: U {} vs {}, I {} vs {}",
                        got_u[c], want_u[c], got_i[c], want_i[c]
                    )),
                );
            }
        }
    }
    (instances as u64, None)
}

/// Batch cosine over binary columns: shared raters / sqrt(|raters p| * |raters q|).
fn batch_cosine(raters: &HashMap<u64, HashSet<u64>>, p: u64, q: u64) -> f64 {
    match (raters.get(&p), raters.get(&q)) {
        (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
            a.intersection(b).count() as f64 / ((a.len() * b.len()) as f64).sqrt()
        }
        _ => 0.0,
    }
}

fn similarity_suite(seed: u64, events: usize, checkpoint: usize, perturbation: f64) -> (u64, Option<String>) {
    let stream =
        SyntheticConfig { users: 500, items: 100, events, item_zipf: 1.1, seed, ..Default::default() }.events();
    let mut model = SimilarityModel::new();
    let mut raters: HashMap<u64, HashSet<u64>> = HashMap::new();
    let mut checks = 0;
    for (n, e) in stream.iter().enumerate() {
        model.update(e.user_id, e.item_id, e.rating, e.timestamp);
        raters.entry(e.item_id).or_default().insert(e.user_id);
        if (n + 1) % checkpoint.max(1) != 0 && n + 1 != stream.len() {
            continue;
        }
        let mut items: Vec<u64> = raters.keys().copied().collect();
        items.sort_unstable();
        for (a, &p) in items.iter().enumerate() {
            for &q in &items[a + 1..] {
                checks += 1;
                let want = batch_cosine(&raters, p, q);
                let got = model.similarity(p, q) + perturbation;
                if (got - want).abs() > SIMILARITY_TOLERANCE {
                    return (
                        checks,
                        Some(format!("after {} events: sim({p},{q}) = {got}, batch cosine = {want}", n + 1)),
                    );
                }
            }
        }
        if let Some(((p, q), _)) = model.pairs().find(|((p, q), _)| !raters.contains_key(p) || !raters.contains_key(q))
        {
            return (checks, Some(format!("after {} events: stored pair ({p},{q}) has an unrated item", n + 1)));
        }
    }
    (checks, None)
}
