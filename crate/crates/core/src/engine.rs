//! Shared-nothing runtime.
//!
//! The calling thread routes events into one bounded queue per worker thread
//! (it blocks when a queue is full). Worker threads own their models outright
//! and run recommend -> score -> train -> maybe-sweep per event. A sink thread
//! puts the evaluation records back into stream order and collects state
//! snapshots and sweep logs.
//!
//! When fewer OS threads than workers are allowed, worker `w` is hosted on
//! thread `w mod threads`. Each worker still sees its own events in stream
//! order, so results do not depend on the thread count.

use std::any::Any;
use std::collections::BTreeMap;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use thiserror::Error;

use crate::config::{ConfigError, EngineConfig, RatingEvent};
use crate::eval::{prequential_step, MetricsReport, StateSnapshot, SweepRecord};
use crate::forgetting::ForgettingPolicy;
use crate::model::{StreamingRecommender, WorkerModel};
use crate::router::RoutingPlan;

pub use crate::eval::EvalRecord;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "STREAMREC_THREADS";

/// Reads [`THREADS_ENV`]; unset, empty or unparsable values mean "no cap".
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t| t > 0)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("stream out of order: seq {found} follows {previous}")]
    OutOfOrder { previous: u64, found: u64, partial: Box<MetricsReport> },
    #[error("worker thread {thread} panicked: {message}")]
    WorkerPanicked { thread: usize, message: String, partial: Box<MetricsReport> },
}

impl EngineError {
    /// Metrics gathered before the run was aborted.
    pub fn partial_report(&self) -> Option<&MetricsReport> {
        match self {
            EngineError::Config(_) => None,
            EngineError::OutOfOrder { partial, .. } | EngineError::WorkerPanicked { partial, .. } => Some(partial),
        }
    }
}

/// An event on its way to the worker `route` picked for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerEnvelope {
    pub event: RatingEvent,
    pub worker: usize,
}

/// One grid cell: its model, forgetting clock and evaluation loop.
#[derive(Debug, Clone)]
pub struct Worker {
    id: usize,
    model: WorkerModel,
    policy: ForgettingPolicy,
    top_n: usize,
    events_since_sweep: u64,
    last_sweep_time: Option<i64>,
    #[cfg(test)]
    panic_at_seq: Option<u64>,
}

impl Worker {
    pub fn new(config: &EngineConfig, id: usize) -> Self {
        Worker {
            id,
            model: WorkerModel::new(config, id),
            policy: config.forgetting,
            top_n: config.top_n,
            events_since_sweep: 0,
            last_sweep_time: None,
            #[cfg(test)]
            panic_at_seq: None,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &WorkerModel {
        &self.model
    }

    /// Test-then-train on one event, then sweep if the trigger fired.
    pub fn process(&mut self, event: &RatingEvent) -> (EvalRecord, Option<SweepRecord>) {
        #[cfg(test)]
        if self.panic_at_seq == Some(event.seq) {
            panic!("injected failure at seq {}", event.seq);
        }
        let start = Instant::now();
        let outcome = prequential_step(&mut self.model, event, self.top_n);
        let sweep = self.maybe_sweep(event);
        let record = EvalRecord {
            seq: event.seq,
            worker: self.id,
            hit: outcome.hit,
            rec_list_len: outcome.rec_list_len,
            latency_ns: start.elapsed().as_nanos() as u64,
            event_time: event.timestamp,
        };
        (record, sweep)
    }

    fn maybe_sweep(&mut self, event: &RatingEvent) -> Option<SweepRecord> {
        let last = *self.last_sweep_time.get_or_insert(event.timestamp);
        self.events_since_sweep += 1;
        if !self.policy.should_sweep(self.events_since_sweep, event.timestamp, last) {
            return None;
        }
        let report = self.model.forget(&self.policy, event.timestamp);
        self.events_since_sweep = 0;
        self.last_sweep_time = Some(event.timestamp);
        Some(SweepRecord { seq: event.seq, worker: self.id, event_time: event.timestamp, report })
    }

    pub fn snapshot(&self, seq: u64) -> StateSnapshot {
        StateSnapshot::of(seq, self.id, self.model.state_size())
    }
}

enum WorkerMsg {
    Event { event: RatingEvent, worker: usize, ordinal: u64 },
    Snapshot { seq: u64 },
}

enum SinkMsg {
    Record { ordinal: u64, record: EvalRecord },
    Snapshot(StateSnapshot),
    Sweep(SweepRecord),
}

#[derive(Default)]
struct SinkOutput {
    records: Vec<EvalRecord>,
    snapshots: Vec<StateSnapshot>,
    sweeps: Vec<SweepRecord>,
    last_record_at: Option<Instant>,
}

/// Releases records strictly in ordinal order, buffering early arrivals.
fn drain_sink(rx: Receiver<SinkMsg>) -> SinkOutput {
    let mut out = SinkOutput::default();
    let mut pending: BTreeMap<u64, EvalRecord> = BTreeMap::new();
    let mut next = 0u64;
    for msg in rx {
        match msg {
            SinkMsg::Record { ordinal, record } => {
                out.last_record_at = Some(Instant::now());
                if ordinal != next {
                    pending.insert(ordinal, record);
                    continue;
                }
                out.records.push(record);
                next += 1;
                while let Some(r) = pending.remove(&next) {
                    out.records.push(r);
                    next += 1;
                }
            }
            SinkMsg::Snapshot(s) => out.snapshots.push(s),
            SinkMsg::Sweep(s) => out.sweeps.push(s),
        }
    }
    out
}

fn worker_thread(mut workers: Vec<Worker>, stride: usize, inbox: Receiver<WorkerMsg>, sink: Sender<SinkMsg>) {
    for msg in inbox {
        match msg {
            WorkerMsg::Event { event, worker, ordinal } => {
                let (record, sweep) = workers[worker / stride].process(&event);
                if let Some(s) = sweep {
                    let _ = sink.send(SinkMsg::Sweep(s));
                }
                if sink.send(SinkMsg::Record { ordinal, record }).is_err() {
                    return;
                }
            }
            WorkerMsg::Snapshot { seq } => {
                for w in &workers {
                    let _ = sink.send(SinkMsg::Snapshot(w.snapshot(seq)));
                }
            }
        }
    }
}

/// Why the router stopped early.
enum RouteStop {
    OutOfOrder { previous: u64, found: u64 },
    WorkerGone,
}

/// Drives the stream through `dispatch`, requesting a snapshot every
/// `every` events and once more at the end.
fn route_stream<I, F, S>(
    stream: I,
    plan: &RoutingPlan,
    every: u64,
    mut dispatch: F,
    mut snapshot: S,
) -> Result<(), RouteStop>
where
    I: IntoIterator<Item = RatingEvent>,
    F: FnMut(WorkerEnvelope, u64) -> bool,
    S: FnMut(u64) -> bool,
{
    let mut previous: Option<u64> = None;
    let mut ordinal = 0u64;
    for event in stream {
        if let Some(p) = previous {
            if event.seq <= p {
                return Err(RouteStop::OutOfOrder { previous: p, found: event.seq });
            }
        }
        previous = Some(event.seq);
        let worker = plan.route(event.user_id, event.item_id);
        if !dispatch(WorkerEnvelope { event, worker }, ordinal) {
            return Err(RouteStop::WorkerGone);
        }
        ordinal += 1;
        if ordinal.is_multiple_of(every) && !snapshot(event.seq) {
            return Err(RouteStop::WorkerGone);
        }
    }
    if let Some(last) = previous {
        if !ordinal.is_multiple_of(every) && !snapshot(last) {
            return Err(RouteStop::WorkerGone);
        }
    }
    Ok(())
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic payload".to_string()
    }
}

/// Runs the stream through the threaded pipeline.
pub fn run<I>(config: &EngineConfig, stream: I) -> Result<MetricsReport, EngineError>
where
    I: IntoIterator<Item = RatingEvent>,
{
    run_with(config, stream, |id| Worker::new(config, id))
}

fn run_with<I, W>(config: &EngineConfig, stream: I, make_worker: W) -> Result<MetricsReport, EngineError>
where
    I: IntoIterator<Item = RatingEvent>,
    W: Fn(usize) -> Worker,
{
    config.validate()?;
    let plan = RoutingPlan::new(config.n_i, config.w)?;
    let n_c = plan.n_c();
    let threads = config.worker_threads.unwrap_or(n_c).clamp(1, n_c);

    let mut hosted: Vec<Vec<Worker>> = (0..threads).map(|_| Vec::new()).collect();
    for id in 0..n_c {
        hosted[id % threads].push(make_worker(id));
    }

    let start = Instant::now();
    let (stop, panicked, sink_out) = thread::scope(|s| {
        let (sink_tx, sink_rx) = unbounded();
        let sink = s.spawn(move || drain_sink(sink_rx));

        let mut inboxes = Vec::with_capacity(threads);
        let mut handles = Vec::with_capacity(threads);
        for workers in hosted {
            let (tx, rx) = bounded(config.queue_capacity);
            inboxes.push(tx);
            let sink_tx = sink_tx.clone();
            handles.push(s.spawn(move || worker_thread(workers, threads, rx, sink_tx)));
        }
        drop(sink_tx);

        let stop = route_stream(
            stream,
            &plan,
            config.telemetry_every,
            |env, ordinal| {
                let msg = WorkerMsg::Event { event: env.event, worker: env.worker, ordinal };
                inboxes[env.worker % threads].send(msg).is_ok()
            },
            |seq| inboxes.iter().all(|tx| tx.send(WorkerMsg::Snapshot { seq }).is_ok()),
        )
        .err();
        drop(inboxes);

        let mut panicked = None;
        for (t, h) in handles.into_iter().enumerate() {
            if let Err(p) = h.join() {
                panicked.get_or_insert((t, panic_message(p)));
            }
        }
        let sink_out = sink.join().expect("metrics sink panicked");
        (stop, panicked, sink_out)
    });

    let elapsed = sink_out.last_record_at.map_or(Duration::ZERO, |t| t.saturating_duration_since(start));
    let report = MetricsReport::build(
        &sink_out.records,
        sink_out.snapshots,
        sink_out.sweeps,
        n_c,
        config.window,
        config.warmup_fraction,
        elapsed,
    );
    if let Some((thread, message)) = panicked {
        return Err(EngineError::WorkerPanicked { thread, message, partial: Box::new(report) });
    }
    match stop {
        Some(RouteStop::OutOfOrder { previous, found }) => {
            Err(EngineError::OutOfOrder { previous, found, partial: Box::new(report) })
        }
        // a worker thread vanished without panicking cannot happen; treat as complete
        Some(RouteStop::WorkerGone) | None => Ok(report),
    }
}

/// Single-threaded reference: same routing, same workers, no queues.
pub fn run_reference<I>(config: &EngineConfig, stream: I) -> Result<MetricsReport, EngineError>
where
    I: IntoIterator<Item = RatingEvent>,
{
    config.validate()?;
    let plan = RoutingPlan::new(config.n_i, config.w)?;
    let mut workers: Vec<Worker> = (0..plan.n_c()).map(|id| Worker::new(config, id)).collect();
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut sweeps = Vec::new();
    let start = Instant::now();
    let stop = {
        let workers = std::cell::RefCell::new(&mut workers);
        route_stream(
            stream,
            &plan,
            config.telemetry_every,
            |env, _| {
                let (record, sweep) = workers.borrow_mut()[env.worker].process(&env.event);
                records.push(record);
                sweeps.extend(sweep);
                true
            },
            |seq| {
                snapshots.extend(workers.borrow().iter().map(|w| w.snapshot(seq)));
                true
            },
        )
        .err()
    };
    let report = MetricsReport::build(
        &records,
        snapshots,
        sweeps,
        plan.n_c(),
        config.window,
        config.warmup_fraction,
        start.elapsed(),
    );
    match stop {
        Some(RouteStop::OutOfOrder { previous, found }) => {
            Err(EngineError::OutOfOrder { previous, found, partial: Box::new(report) })
        }
        _ => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Algorithm;
    use crate::synthetic::SyntheticConfig;

    fn stream(n: usize, seed: u64) -> Vec<RatingEvent> {
        SyntheticConfig { users: 60, items: 40, events: n, seed, ..Default::default() }.events()
    }

    fn cfg(algo: Algorithm, n_i: usize, w: usize) -> EngineConfig {
        EngineConfig { algo, n_i, w, telemetry_every: 100, window: 50, ..Default::default() }
    }

    #[test]
    fn empty_stream_gives_empty_report() {
        let r = run(&cfg(Algorithm::Isgd, 2, 0), Vec::new()).unwrap();
        assert_eq!(r.events, 0);
        assert!(r.state_snapshots.is_empty() && r.recall_series.is_empty());
    }

    #[test]
    fn invalid_config_rejected_up_front() {
        let bad = EngineConfig { top_n: 0, ..Default::default() };
        assert!(matches!(run(&bad, stream(10, 1)), Err(EngineError::Config(_))));
    }

    #[test]
    fn four_events_land_where_routed() {
        let events = vec![
            RatingEvent::new(0, 0, 0, 1),
            RatingEvent::new(1, 3, 1, 2),
            RatingEvent::new(2, 1, 0, 3),
            RatingEvent::new(3, 2, 1, 4),
        ];
        let plan = RoutingPlan::new(2, 0).unwrap();
        let r = run(&cfg(Algorithm::Isgd, 2, 0), events.clone()).unwrap();
        assert_eq!(r.recall_series.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        for (p, e) in r.recall_series.iter().zip(&events) {
            assert_eq!(p.worker, plan.route(e.user_id, e.item_id));
            // every worker sees its first event here
            assert!(!p.hit);
        }
    }

    #[test]
    fn repeated_pair_is_excluded_from_its_own_list() {
        let events = vec![RatingEvent::new(0, 1, 1, 0), RatingEvent::new(1, 1, 1, 1)];
        let r = run(&cfg(Algorithm::Isgd, 1, 0), events).unwrap();
        assert_eq!(r.hits(), vec![false, false]);
    }

    #[test]
    fn threaded_matches_reference() {
        for algo in [Algorithm::Isgd, Algorithm::Dics] {
            for (n_i, w) in [(1, 0), (2, 0), (2, 1), (3, 0)] {
                let c = cfg(algo, n_i, w);
                let events = stream(3000, 7);
                let a = run(&c, events.clone()).unwrap();
                let b = run_reference(&c, events).unwrap();
                assert_eq!(a.recall_series, b.recall_series, "{algo} n_i={n_i} w={w}");
                assert_eq!(a.state_snapshots, b.state_snapshots);
                assert_eq!(a.sweep_log, b.sweep_log);
            }
        }
    }

    #[test]
    fn thread_cap_does_not_change_results() {
        let mut c = cfg(Algorithm::Dics, 2, 1);
        c.forgetting = ForgettingPolicy::lfu(200, 2);
        let events = stream(4000, 3);
        let full = run(&c, events.clone()).unwrap();
        for t in [1, 2, 4] {
            c.worker_threads = Some(t);
            c.queue_capacity = 3;
            let capped = run(&c, events.clone()).unwrap();
            assert_eq!(full.recall_series, capped.recall_series);
            assert_eq!(full.state_snapshots, capped.state_snapshots);
            assert_eq!(full.sweep_log, capped.sweep_log);
        }
    }

    #[test]
    fn every_event_processed_exactly_once() {
        let c = cfg(Algorithm::Isgd, 3, 1);
        let events = stream(5000, 9);
        let r = run(&c, events.clone()).unwrap();
        assert_eq!(r.events, events.len() as u64);
        let seqs: Vec<u64> = r.recall_series.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, events.iter().map(|e| e.seq).collect::<Vec<_>>());
        let mut per_worker = vec![0usize; c.n_c()];
        r.recall_series.iter().for_each(|p| per_worker[p.worker] += 1);
        assert_eq!(per_worker.iter().sum::<usize>(), events.len());
    }

    #[test]
    fn snapshots_at_period_and_end() {
        let c = cfg(Algorithm::Isgd, 2, 0);
        let r = run(&c, stream(250, 2)).unwrap();
        let seqs: Vec<u64> = r.state_snapshots.iter().map(|s| s.seq).collect();
        assert_eq!(seqs, [99, 99, 99, 99, 199, 199, 199, 199, 249, 249, 249, 249]);
    }

    #[test]
    fn out_of_order_stream_aborts() {
        let events = vec![RatingEvent::new(5, 1, 1, 0), RatingEvent::new(5, 2, 2, 0)];
        let err = run(&cfg(Algorithm::Isgd, 1, 0), events).unwrap_err();
        assert!(matches!(err, EngineError::OutOfOrder { previous: 5, found: 5, .. }));
        assert_eq!(err.partial_report().unwrap().events, 1);
    }

    #[test]
    fn worker_panic_reports_partial_metrics() {
        let c = cfg(Algorithm::Isgd, 1, 0);
        let err = run_with(&c, stream(500, 4), |id| {
            let mut w = Worker::new(&c, id);
            w.panic_at_seq = Some(300);
            w
        })
        .unwrap_err();
        match err {
            EngineError::WorkerPanicked { message, partial, .. } => {
                assert!(message.contains("seq 300"));
                assert_eq!(partial.events, 300);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn same_seed_same_csv() {
        let c = cfg(Algorithm::Isgd, 2, 0);
        let csv = |r: &MetricsReport| {
            let mut a = Vec::new();
            r.write_recall_csv(&mut a).unwrap();
            r.write_state_csv(&mut a).unwrap();
            r.write_sweeps_csv(&mut a).unwrap();
            a
        };
        let a = run(&c, stream(2000, 5)).unwrap();
        let b = run(&c, stream(2000, 5)).unwrap();
        assert_eq!(csv(&a), csv(&b));
    }

    #[test]
    fn lfu_sweeps_fire_per_worker() {
        let mut c = cfg(Algorithm::Dics, 1, 0);
        c.forgetting = ForgettingPolicy::lfu(1000, 2);
        let r = run(&c, stream(3500, 6)).unwrap();
        assert_eq!(r.sweep_log.iter().map(|s| s.seq).collect::<Vec<_>>(), vec![999, 1999, 2999]);
    }
}
