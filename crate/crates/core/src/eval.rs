//! Prequential (test-then-train) evaluation and run telemetry.
//!
//! For every event the owning worker first asks its model for the user's
//! top-N list, scores a hit when the consumed item is in it, and only then
//! trains on the event. Hits are aggregated into a moving-average recall
//! series and a cumulative recall; per-worker state sizes are sampled every
//! `telemetry_every` events.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Duration;

use crate::config::RatingEvent;
use crate::forgetting::SweepReport;
use crate::model::{StateSize, StreamingRecommender};

/// Outcome of one prequential step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub hit: bool,
    pub rec_list_len: usize,
}

/// Recommend, score, then train. The list is fixed before the event touches the model.
pub fn prequential_step<M: StreamingRecommender + ?Sized>(model: &mut M, event: &RatingEvent, n: usize) -> Outcome {
    let list = model.recommend(event.user_id, n);
    let hit = list.contains(&event.item_id);
    model.learn(event);
    Outcome { hit, rec_list_len: list.len() }
}

/// Position `i` holds the mean of the last `min(i + 1, window)` hits.
pub fn moving_average(hits: &[bool], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(hits.len());
    let mut in_window = 0usize;
    for (i, &h) in hits.iter().enumerate() {
        in_window += h as usize;
        if i >= window && hits[i - window] {
            in_window -= 1;
        }
        out.push(in_window as f64 / (i + 1).min(window) as f64);
    }
    out
}

/// Per-event evaluation result, produced by the worker that owns the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalRecord {
    pub seq: u64,
    pub worker: usize,
    pub hit: bool,
    pub rec_list_len: usize,
    pub latency_ns: u64,
    pub event_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSnapshot {
    pub seq: u64,
    pub worker: usize,
    pub user_entries: usize,
    pub item_entries: usize,
    pub pair_entries: usize,
}

impl StateSnapshot {
    pub fn of(seq: u64, worker: usize, size: StateSize) -> Self {
        StateSnapshot { seq, worker, user_entries: size.users, item_entries: size.items, pair_entries: size.pairs }
    }

    pub fn total(&self) -> usize {
        self.user_entries + self.item_entries + self.pair_entries
    }
}

/// One state-size row per model, worker id = position in `models`.
pub fn snapshot_state<M: StreamingRecommender>(models: &[M], seq: u64) -> Vec<StateSnapshot> {
    models.iter().enumerate().map(|(w, m)| StateSnapshot::of(seq, w, m.state_size())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRecord {
    /// Seq of the event after which the sweep ran.
    pub seq: u64,
    pub worker: usize,
    pub event_time: i64,
    pub report: SweepReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LatencySummary {
    pub p50_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(mut samples: Vec<u64>) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        let rank = |p: f64| samples[((p / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencySummary { p50_ns: rank(50.0), p95_ns: rank(95.0), p99_ns: rank(99.0), max_ns: samples[n - 1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallPoint {
    pub seq: u64,
    pub worker: usize,
    pub hit: bool,
    pub moving_avg: f64,
}

fn mean_hits(records: &[EvalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.hit).count() as f64 / records.len() as f64
}

fn recall_series(records: &[EvalRecord], window: usize) -> Vec<RecallPoint> {
    let hits: Vec<bool> = records.iter().map(|r| r.hit).collect();
    records
        .iter()
        .zip(moving_average(&hits, window))
        .map(|(r, m)| RecallPoint { seq: r.seq, worker: r.worker, hit: r.hit, moving_avg: m })
        .collect()
}

/// Everything a run measured.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub events: u64,
    pub workers: usize,
    /// Moving recall over the whole stream, in seq order.
    pub recall_series: Vec<RecallPoint>,
    /// Moving recall restarted after the warmup prefix.
    pub post_warmup_series: Vec<RecallPoint>,
    pub cumulative_recall: f64,
    pub warmup_events: u64,
    pub warmup_recall: f64,
    pub post_warmup_recall: f64,
    pub throughput_eps: f64,
    pub elapsed: Duration,
    pub latency: LatencySummary,
    pub state_snapshots: Vec<StateSnapshot>,
    pub sweep_log: Vec<SweepRecord>,
}

impl MetricsReport {
    /// Aggregates seq-ordered records. Snapshots and sweeps are sorted by `(seq, worker)`.
    pub fn build(
        records: &[EvalRecord],
        mut state_snapshots: Vec<StateSnapshot>,
        mut sweep_log: Vec<SweepRecord>,
        workers: usize,
        window: usize,
        warmup_fraction: f64,
        elapsed: Duration,
    ) -> Self {
        let events = records.len() as u64;
        let warmup = ((warmup_fraction * records.len() as f64).floor() as usize).min(records.len());
        let (head, tail) = records.split_at(warmup);
        state_snapshots.sort_by_key(|s| (s.seq, s.worker));
        sweep_log.sort_by_key(|s| (s.seq, s.worker));
        let secs = elapsed.as_secs_f64();
        MetricsReport {
            events,
            workers,
            recall_series: recall_series(records, window),
            post_warmup_series: recall_series(tail, window),
            cumulative_recall: mean_hits(records),
            warmup_events: warmup as u64,
            warmup_recall: mean_hits(head),
            post_warmup_recall: mean_hits(tail),
            throughput_eps: if secs > 0.0 { events as f64 / secs } else { 0.0 },
            elapsed,
            latency: LatencySummary::from_samples(records.iter().map(|r| r.latency_ns).collect()),
            state_snapshots,
            sweep_log,
        }
    }

    pub fn hits(&self) -> Vec<bool> {
        self.recall_series.iter().map(|p| p.hit).collect()
    }

    /// Sum over workers of each worker's latest snapshot.
    pub fn final_state(&self) -> StateSize {
        let Some(last) = self.state_snapshots.last().map(|s| s.seq) else {
            return StateSize::default();
        };
        self.state_snapshots.iter().filter(|s| s.seq == last).fold(StateSize::default(), |acc, s| StateSize {
            users: acc.users + s.user_entries,
            items: acc.items + s.item_entries,
            pairs: acc.pairs + s.pair_entries,
        })
    }

    /// Mean entry count per worker snapshot.
    pub fn mean_state_entries(&self) -> f64 {
        if self.state_snapshots.is_empty() {
            return 0.0;
        }
        self.state_snapshots.iter().map(|s| s.total() as f64).sum::<f64>() / self.state_snapshots.len() as f64
    }

    fn write_series<W: Write>(series: &[RecallPoint], mut w: W) -> io::Result<()> {
        writeln!(w, "seq,worker,hit,moving_avg")?;
        for p in series {
            writeln!(w, "{},{},{},{}", p.seq, p.worker, p.hit as u8, p.moving_avg)?;
        }
        w.flush()
    }

    pub fn write_recall_csv<W: Write>(&self, w: W) -> io::Result<()> {
        Self::write_series(&self.recall_series, w)
    }

    pub fn write_post_warmup_csv<W: Write>(&self, w: W) -> io::Result<()> {
        Self::write_series(&self.post_warmup_series, w)
    }

    pub fn write_state_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "seq,worker,user_entries,item_entries,pair_entries")?;
        for s in &self.state_snapshots {
            writeln!(w, "{},{},{},{},{}", s.seq, s.worker, s.user_entries, s.item_entries, s.pair_entries)?;
        }
        w.flush()
    }

    pub fn write_sweeps_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "seq,worker,event_time,users_evicted,items_evicted,pairs_evicted")?;
        for s in &self.sweep_log {
            let r = &s.report;
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.seq, s.worker, s.event_time, r.users_evicted, r.items_evicted, r.pairs_evicted
            )?;
        }
        w.flush()
    }

    /// `key = value` result lines, appended to the run manifest in `summary.txt`.
    pub fn summary_lines(&self) -> String {
        let fin = self.final_state();
        let evicted = self.sweep_log.iter().fold(SweepReport::default(), |a, s| SweepReport {
            users_evicted: a.users_evicted + s.report.users_evicted,
            items_evicted: a.items_evicted + s.report.items_evicted,
            pairs_evicted: a.pairs_evicted + s.report.pairs_evicted,
        });
        let rows: [(&str, String); 19] = [
            ("events", self.events.to_string()),
            ("workers", self.workers.to_string()),
            ("cumulative_recall", self.cumulative_recall.to_string()),
            ("warmup_events", self.warmup_events.to_string()),
            ("warmup_recall", self.warmup_recall.to_string()),
            ("post_warmup_recall", self.post_warmup_recall.to_string()),
            ("throughput_eps", format!("{:.3}", self.throughput_eps)),
            ("elapsed_secs", format!("{:.6}", self.elapsed.as_secs_f64())),
            ("latency_p50_ns", self.latency.p50_ns.to_string()),
            ("latency_p95_ns", self.latency.p95_ns.to_string()),
            ("latency_p99_ns", self.latency.p99_ns.to_string()),
            ("latency_max_ns", self.latency.max_ns.to_string()),
            ("sweeps", self.sweep_log.len().to_string()),
            ("users_evicted", evicted.users_evicted.to_string()),
            ("items_evicted", evicted.items_evicted.to_string()),
            ("pairs_evicted", evicted.pairs_evicted.to_string()),
            ("final_user_entries", fin.users.to_string()),
            ("final_item_entries", fin.items.to_string()),
            ("final_pair_entries", fin.pairs.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("mean_state_entries = {}\n", self.mean_state_entries()));
        s
    }

    /// Writes `recall.csv`, `recall_post_warmup.csv`, `state.csv`, `sweeps.csv`
    /// and `summary.txt` (the preamble verbatim, then the result lines).
    pub fn write_to_dir(&self, dir: &Path, summary_preamble: &str) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let open = |name: &str| fs::File::create(dir.join(name)).map(BufWriter::new);
        self.write_recall_csv(open("recall.csv")?)?;
        self.write_post_warmup_csv(open("recall_post_warmup.csv")?)?;
        self.write_state_csv(open("state.csv")?)?;
        self.write_sweeps_csv(open("sweeps.csv")?)?;
        let mut summary = open("summary.txt")?;
        summary.write_all(summary_preamble.as_bytes())?;
        if !summary_preamble.is_empty() && !summary_preamble.ends_with('\n') {
            summary.write_all(b"\n")?;
        }
        summary.write_all(b"[results]\n")?;
        summary.write_all(self.summary_lines().as_bytes())?;
        summary.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ItemId;
    use crate::forgetting::ForgettingPolicy;

    /// Recommends a fixed list and remembers what it learned.
    struct Scripted {
        list: Vec<ItemId>,
        learned: Vec<ItemId>,
    }

    impl StreamingRecommender for Scripted {
        fn recommend(&self, _: u64, n: usize) -> Vec<ItemId> {
            self.list.iter().copied().take(n).collect()
        }
        fn learn(&mut self, e: &RatingEvent) {
            self.learned.push(e.item_id);
            self.list.insert(0, e.item_id);
        }
        fn state_size(&self) -> StateSize {
            StateSize { users: 0, items: self.learned.len(), pairs: 0 }
        }
        fn forget(&mut self, _: &ForgettingPolicy, _: i64) -> SweepReport {
            SweepReport::default()
        }
    }

    #[test]
    fn hit_when_item_listed() {
        let mut m = Scripted { list: (0..10).collect(), learned: vec![] };
        let o = prequential_step(&mut m, &RatingEvent::new(0, 1, 7, 0), 10);
        assert!(o.hit);
        assert_eq!(o.rec_list_len, 10);
        assert_eq!(m.learned, vec![7]);
    }

    #[test]
    fn cold_user_misses() {
        let mut m = Scripted { list: vec![], learned: vec![] };
        let o = prequential_step(&mut m, &RatingEvent::new(0, 1, 7, 0), 10);
        assert_eq!(o, Outcome { hit: false, rec_list_len: 0 });
    }

    #[test]
    fn own_training_cannot_make_a_hit() {
        // learn() would put the item at the head of the list; the step must not see that
        let mut m = Scripted { list: vec![1, 2], learned: vec![] };
        assert!(!prequential_step(&mut m, &RatingEvent::new(0, 1, 5, 0), 10).hit);
        assert!(prequential_step(&mut m, &RatingEvent::new(1, 1, 5, 0), 10).hit);
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[true; 5], 3), vec![1.0; 5]);
        let alt: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        assert!(moving_average(&alt, 2)[1..].iter().all(|&m| m == 0.5));
        let m = moving_average(&[true, false, false, true], 3);
        assert_eq!(m[..2], [1.0, 0.5]);
        assert!((m[2] - 1.0 / 3.0).abs() < 1e-15 && (m[3] - 1.0 / 3.0).abs() < 1e-15);
        assert!(moving_average(&[], 4).is_empty());
    }

    #[test]
    fn moving_average_matches_direct_window() {
        let hits: Vec<bool> = (0..500u64).map(|i| (i * 2654435761) % 7 < 3).collect();
        for window in [1, 2, 7, 50, 1000] {
            let fast = moving_average(&hits, window);
            for (i, &v) in fast.iter().enumerate() {
                let lo = (i + 1).saturating_sub(window);
                let slice = &hits[lo..=i];
                let direct = slice.iter().filter(|&&h| h).count() as f64 / slice.len() as f64;
                assert_eq!(v, direct);
            }
        }
    }

    #[test]
    fn snapshots_count_entries() {
        let models = vec![Scripted { list: vec![], learned: vec![] }, Scripted { list: vec![], learned: vec![1, 2] }];
        let rows = snapshot_state(&models, 9);
        assert_eq!(rows[0].total(), 0);
        assert_eq!((rows[1].seq, rows[1].worker, rows[1].item_entries), (9, 1, 2));
    }

    fn rec(seq: u64, hit: bool) -> EvalRecord {
        EvalRecord { seq, worker: 0, hit, rec_list_len: 1, latency_ns: seq * 10, event_time: 0 }
    }

    #[test]
    fn report_aggregates() {
        let records: Vec<EvalRecord> = (0..10).map(|i| rec(i, i % 3 == 0)).collect();
        let r = MetricsReport::build(&records, vec![], vec![], 1, 4, 0.2, Duration::from_secs(2));
        assert_eq!(r.events, 10);
        assert!((r.cumulative_recall - 0.4).abs() < 1e-15);
        assert_eq!(r.cumulative_recall, r.recall_series.iter().filter(|p| p.hit).count() as f64 / 10.0);
        assert_eq!(r.warmup_events, 2);
        assert_eq!(r.warmup_recall, 0.5);
        assert_eq!(r.post_warmup_recall, 3.0 / 8.0);
        assert_eq!(r.post_warmup_series.len(), 8);
        assert_eq!(r.throughput_eps, 5.0);
        assert_eq!(r.latency.p50_ns, 40);
        assert_eq!(r.latency.max_ns, 90);
    }

    #[test]
    fn empty_report() {
        let r = MetricsReport::build(&[], vec![], vec![], 4, 5000, 0.2, Duration::ZERO);
        assert_eq!((r.events, r.cumulative_recall, r.throughput_eps), (0, 0.0, 0.0));
        assert_eq!(r.final_state(), StateSize::default());
    }

    #[test]
    fn csv_layout() {
        let records: Vec<EvalRecord> = (0..3).map(|i| rec(i, i == 1)).collect();
        let snaps = vec![StateSnapshot { seq: 2, worker: 0, user_entries: 1, item_entries: 2, pair_entries: 0 }];
        let r = MetricsReport::build(&records, snaps, vec![], 1, 2, 0.0, Duration::from_secs(1));
        let mut buf = Vec::new();
        r.write_recall_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "seq,worker,hit,moving_avg\n0,0,0,0\n1,0,1,0.5\n2,0,0,0.5\n");
        let mut buf = Vec::new();
        r.write_state_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "seq,worker,user_entries,item_entries,pair_entries\n2,0,1,2,0\n");
    }

    #[test]
    fn latency_percentiles() {
        let l = LatencySummary::from_samples((1..=100).collect());
        assert_eq!((l.p50_ns, l.p95_ns, l.p99_ns, l.max_ns), (50, 95, 99, 100));
    }
}
