//! Post-run verification and metrics. Every checker is a pure function of
//! its inputs; violations are data, not errors.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::block::{Block, BlockId, Level, Rank, ReplicaId};
use crate::mandator::BatchId;
use crate::netsim::{RunOutput, Scenario};
use crate::replica::ReplicaSummary;
use crate::trace::{RunTrace, TraceKind};
use crate::workload::{Records, WorkloadError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub replica: Option<ReplicaId>,
    pub round: Option<u64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    /// Precondition did not hold; the check was skipped.
    pub exempt: bool,
    pub violations: Vec<Violation>,
}

impl CheckReport {
    fn from_violations(name: &'static str, violations: Vec<Violation>) -> Self {
        CheckReport { name, passed: violations.is_empty(), exempt: false, violations }
    }

    fn exempt(name: &'static str) -> Self {
        CheckReport { name, passed: true, exempt: true, violations: Vec::new() }
    }
}

fn violation(replica: Option<ReplicaId>, round: Option<u64>, detail: String) -> Violation {
    Violation { replica, round, detail }
}

/// Committed blocks per replica in commit order.
pub fn committed_chains(trace: &RunTrace) -> BTreeMap<ReplicaId, Vec<Block>> {
    let mut out: BTreeMap<ReplicaId, Vec<Block>> = BTreeMap::new();
    for e in trace.iter() {
        if let TraceKind::Commit { block, .. } = &e.kind {
            out.entry(e.replica).or_default().push(block.clone());
        }
    }
    out
}

/// Any two replicas hold the same block at every round both committed.
/// The report names the first divergent round.
pub fn check_log_agreement(trace: &RunTrace) -> CheckReport {
    let chains = committed_chains(trace);
    let mut by_round: BTreeMap<u64, BTreeMap<BlockId, BTreeSet<ReplicaId>>> = BTreeMap::new();
    for (r, chain) in &chains {
        for b in chain {
            by_round.entry(b.round()).or_default().entry(b.id).or_default().insert(*r);
        }
    }
    let violations = by_round
        .into_iter()
        .filter(|(_, ids)| ids.len() > 1)
        .take(1)
        .map(|(round, ids)| {
            let desc: Vec<String> = ids.iter().map(|(id, rs)| format!("{id} at {rs:?}")).collect();
            violation(None, Some(round), format!("divergent blocks at round {round}: {}", desc.join(", ")))
        })
        .collect();
    CheckReport::from_violations("log-agreement", violations)
}

/// Consecutive rounds from 1, parent links, non-decreasing views, and a
/// height-1 parent for every committed height-2 block.
pub fn check_chain_discipline(trace: &RunTrace) -> CheckReport {
    let mut violations = Vec::new();
    for (r, chain) in committed_chains(trace) {
        let mut prev: Option<&Block> = None;
        for (i, b) in chain.iter().enumerate() {
            let expect_round = i as u64 + 1;
            let mut bad = |m: String| violations.push(violation(Some(r), Some(b.round()), m));
            if b.round() != expect_round {
                bad(format!("round {} where {expect_round} expected", b.round()));
            }
            if !b.verify_id() {
                bad(format!("block {} content does not match its id", b.id));
            }
            let parent_id = prev.map_or(BlockId::GENESIS, |p| p.id);
            if b.parent != parent_id {
                bad(format!("parent {} but previous committed block is {parent_id}", b.parent));
            }
            if let Some(p) = prev {
                if b.view() < p.view() {
                    bad(format!("view decreased from {} to {}", p.view(), b.view()));
                }
                if b.level == Level::Height2 && (p.level != Level::Height1 || p.view() != b.view()) {
                    bad(format!("height-2 block {} not built on a same-view height-1 block", b.id));
                }
            } else if b.level == Level::Height2 {
                bad(format!("height-2 block {} built on genesis", b.id));
            }
            prev = Some(b);
            if violations.len() > 16 {
                break;
            }
        }
    }
    CheckReport::from_violations("chain-discipline", violations)
}

/// No two distinct committed blocks share a rank, and at most one height-2
/// block is committed per view.
pub fn check_unique_rank(trace: &RunTrace) -> CheckReport {
    let mut by_rank: BTreeMap<Rank, BTreeSet<BlockId>> = BTreeMap::new();
    let mut h2_by_view: BTreeMap<u64, BTreeSet<BlockId>> = BTreeMap::new();
    for e in trace.iter() {
        if let TraceKind::Commit { block, .. } = &e.kind {
            by_rank.entry(block.rank).or_default().insert(block.id);
            if block.level == Level::Height2 {
                h2_by_view.entry(block.view()).or_default().insert(block.id);
            }
        }
    }
    let mut violations: Vec<Violation> = by_rank
        .into_iter()
        .filter(|(_, ids)| ids.len() > 1)
        .map(|(rank, ids)| violation(None, Some(rank.round), format!("{} blocks share rank {rank}", ids.len())))
        .collect();
    for (view, ids) in h2_by_view {
        if ids.len() > 1 {
            violations.push(violation(None, None, format!("{} height-2 blocks committed in view {view}", ids.len())));
        }
    }
    CheckReport::from_violations("unique-rank", violations)
}

/// Each batch executes at most once per replica, replicas execute the same
/// batch sequence up to the shorter length, and no request executed twice.
pub fn check_execution(trace: &RunTrace, errors: &[WorkloadError]) -> CheckReport {
    let mut violations: Vec<Violation> = errors
        .iter()
        .map(|e| match e {
            WorkloadError::DuplicateExecution { replica, .. } => violation(Some(*replica), None, e.to_string()),
            WorkloadError::UnknownRequest(_) => violation(None, None, e.to_string()),
        })
        .collect();
    let mut seqs: BTreeMap<ReplicaId, Vec<BatchId>> = BTreeMap::new();
    for e in trace.iter() {
        if let TraceKind::CutCommitted { batch_ids, .. } = &e.kind {
            seqs.entry(e.replica).or_default().extend(batch_ids.iter().copied());
        }
    }
    for (r, seq) in &seqs {
        let mut seen = BTreeSet::new();
        if let Some(dup) = seq.iter().find(|b| !seen.insert(**b)) {
            violations.push(violation(Some(*r), None, format!("batch {dup} executed twice")));
        }
    }
    let reps: Vec<(&ReplicaId, &Vec<BatchId>)> = seqs.iter().collect();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            let (a, b) = (reps[i].1, reps[j].1);
            if let Some(k) = a.iter().zip(b.iter()).position(|(x, y)| x != y) {
                violations.push(violation(
                    Some(*reps[j].0),
                    None,
                    format!("execution order differs from {} at position {k}", reps[i].0),
                ));
            }
        }
    }
    CheckReport::from_violations("execution", violations)
}

/// Every request submitted before `duration − drain_window` to a replica
/// that never crashed is executed at every live replica, and no live
/// replica ends in async mode. Exempt when more than `f` replicas crash or
/// the adversary is still active inside the drain window.
pub fn check_liveness(
    records: &Records,
    scenario: &Scenario,
    summaries: &[ReplicaSummary],
    crash_times: &[Option<u64>],
) -> CheckReport {
    let name = "liveness";
    let crashed = crash_times.iter().filter(|c| c.is_some()).count();
    let cutoff = scenario.duration_ms.saturating_sub(scenario.drain_window_ms());
    if crashed > scenario.f || scenario.last_disruption_ms() > cutoff {
        return CheckReport::exempt(name);
    }
    let live: Vec<usize> = (0..scenario.n).filter(|i| crash_times[*i].is_none()).collect();
    let mut violations = Vec::new();
    let mut stalled = Vec::new();
    for rec in records.iter() {
        if rec.submit_time >= cutoff || crash_times[rec.target.index()].is_some() {
            continue;
        }
        if live.iter().any(|i| rec.exec_time[*i].is_none()) {
            stalled.push(rec.request_id);
        }
    }
    if !stalled.is_empty() {
        let head: Vec<String> = stalled.iter().take(10).map(|x| x.to_string()).collect();
        violations.push(violation(None, None, format!("{} requests unexecuted, first: {}", stalled.len(), head.join(","))));
    }
    for s in summaries {
        if !s.crashed && s.is_async {
            violations.push(violation(Some(s.id), None, "ended the run in async mode".into()));
        }
    }
    CheckReport::from_violations(name, violations)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeMessages {
    pub view: u64,
    pub propose_async: u64,
    pub vote_async: u64,
    pub async_complete: u64,
    pub exit_votes: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub n: usize,
    pub committed_sync_blocks: u64,
    pub sync_max_per_block: u64,
    pub sync_mean_per_block: f64,
    pub sync_bound: u64,
    pub async_episodes: Vec<EpisodeMessages>,
    pub async_max_per_episode: u64,
    pub async_bound: u64,
    pub timeouts: u64,
    /// New-view votes outside async episodes (leader changes without fallback).
    pub view_change_votes: u64,
    pub mandator_messages: u64,
    pub repair_messages: u64,
    pub within_bounds: bool,
}

fn episode(episodes: &mut BTreeMap<u64, EpisodeMessages>, view: u64) -> &mut EpisodeMessages {
    episodes.entry(view).or_insert(EpisodeMessages {
        view,
        propose_async: 0,
        vote_async: 0,
        async_complete: 0,
        exit_votes: 0,
        total: 0,
    })
}

/// Consensus messages per committed synchronous block (its proposal and
/// votes) and per async episode (async proposals, async votes,
/// completions and exit votes; the timeouts that open an episode are
/// reported separately).
pub fn complexity_report(trace: &RunTrace, n: usize) -> ComplexityReport {
    let mut sync_counts: BTreeMap<BlockId, u64> = BTreeMap::new();
    let mut async_block_view: BTreeMap<BlockId, u64> = BTreeMap::new();
    let mut episodes: BTreeMap<u64, EpisodeMessages> = BTreeMap::new();
    let mut entered: BTreeSet<u64> = BTreeSet::new();
    let mut committed_sync: BTreeSet<BlockId> = BTreeSet::new();
    let (mut timeouts, mut mandator, mut repair) = (0, 0, 0);
    let mut new_view_votes: BTreeMap<u64, u64> = BTreeMap::new();
    let mut vote_async: Vec<BlockId> = Vec::new();
    for e in trace.iter() {
        match &e.kind {
            TraceKind::Propose { block, .. } => *sync_counts.entry(*block).or_default() += 1,
            TraceKind::Vote { view, block, block_view, .. } => {
                if view == block_view {
                    *sync_counts.entry(*block).or_default() += 1;
                } else {
                    *new_view_votes.entry(*view).or_default() += 1;
                }
            }
            TraceKind::Timeout { .. } => timeouts += 1,
            TraceKind::ProposeAsync { block, view, .. } => {
                async_block_view.insert(*block, *view);
                episode(&mut episodes, *view).propose_async += 1;
            }
            TraceKind::VoteAsync { block, .. } => vote_async.push(*block),
            TraceKind::AsyncComplete { view, .. } => episode(&mut episodes, *view).async_complete += 1,
            TraceKind::AsyncEnter { view, .. } => {
                entered.insert(*view);
            }
            TraceKind::Commit { block, .. } if block.level == Level::Sync => {
                committed_sync.insert(block.id);
            }
            TraceKind::Batch { .. }
            | TraceKind::MandatorVote { .. }
            | TraceKind::PullRequest { .. }
            | TraceKind::PullResponse { .. } => mandator += 1,
            TraceKind::BlockFetch { .. } | TraceKind::BlockResponse { .. } => repair += 1,
            _ => {}
        }
    }
    for b in vote_async {
        if let Some(v) = async_block_view.get(&b) {
            episode(&mut episodes, *v).vote_async += 1;
        }
    }
    let mut view_change_votes = 0;
    for (view, count) in new_view_votes {
        if view > 0 && entered.contains(&(view - 1)) {
            episode(&mut episodes, view - 1).exit_votes += count;
        } else {
            view_change_votes += count;
        }
    }
    for ep in episodes.values_mut() {
        ep.total = ep.propose_async + ep.vote_async + ep.async_complete + ep.exit_votes;
    }
    let per_block: Vec<u64> =
        committed_sync.iter().map(|id| sync_counts.get(id).copied().unwrap_or(0)).collect();
    let sync_max = per_block.iter().copied().max().unwrap_or(0);
    let sync_mean = if per_block.is_empty() { 0.0 } else { per_block.iter().sum::<u64>() as f64 / per_block.len() as f64 };
    let async_episodes: Vec<EpisodeMessages> = episodes.into_values().collect();
    let async_max = async_episodes.iter().map(|e| e.total).max().unwrap_or(0);
    let n64 = n as u64;
    ComplexityReport {
        n,
        committed_sync_blocks: per_block.len() as u64,
        sync_max_per_block: sync_max,
        sync_mean_per_block: sync_mean,
        sync_bound: 2 * n64,
        async_max_per_episode: async_max,
        async_episodes,
        async_bound: 6 * n64 * n64,
        timeouts,
        view_change_votes,
        mandator_messages: mandator,
        repair_messages: repair,
        within_bounds: sync_max <= 2 * n64 && async_max <= 6 * n64 * n64,
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub duration_ms: u64,
    pub submitted_requests: u64,
    pub executed_requests: u64,
    pub throughput_rps: f64,
    pub latency_median_ms: Option<u64>,
    pub latency_p99_ms: Option<u64>,
    pub committed_blocks: u64,
    pub view_changes: u64,
    pub async_episodes: u64,
    pub elected_async_episodes: u64,
}

/// Throughput counts requests executed at their submitting replica.
pub fn metrics(trace: &RunTrace, records: &Records, duration_ms: u64) -> Metrics {
    let mut latencies: Vec<u64> = records.iter().filter_map(|r| r.latency()).collect();
    latencies.sort_unstable();
    let executed = latencies.len() as u64;
    let mut blocks = BTreeSet::new();
    let mut max_view = 0;
    let mut entered = BTreeSet::new();
    let mut elected = BTreeSet::new();
    for e in trace.iter() {
        match &e.kind {
            TraceKind::Commit { block, .. } => {
                blocks.insert(block.id);
            }
            TraceKind::ViewChange { view, .. } => max_view = max_view.max(*view),
            TraceKind::AsyncEnter { view, .. } => {
                entered.insert(*view);
            }
            TraceKind::AsyncExit { view, elected: true, .. } => {
                elected.insert(*view);
            }
            _ => {}
        }
    }
    let secs = duration_ms as f64 / 1000.0;
    Metrics {
        duration_ms,
        submitted_requests: records.len() as u64,
        executed_requests: executed,
        throughput_rps: if secs > 0.0 { executed as f64 / secs } else { 0.0 },
        latency_median_ms: nearest_rank(&latencies, 50.0),
        latency_p99_ms: nearest_rank(&latencies, 99.0),
        committed_blocks: blocks.len() as u64,
        view_changes: max_view,
        async_episodes: entered.len() as u64,
        elected_async_episodes: elected.len() as u64,
    }
}

/// Requests executed at their submitting replica per 1-second bucket.
pub fn timeseries(records: &Records, duration_ms: u64) -> Vec<u64> {
    let buckets = duration_ms.div_ceil(1000).max(1) as usize;
    let mut out = vec![0u64; buckets];
    for r in records.iter() {
        if let Some(t) = r.exec_time[r.target.index()] {
            out[((t / 1000) as usize).min(buckets - 1)] += 1;
        }
    }
    out
}

pub fn timeseries_csv(series: &[u64]) -> String {
    let mut s = String::from("second,executed_requests\n");
    for (i, v) in series.iter().enumerate() {
        s.push_str(&format!("{i},{v}\n"));
    }
    s
}

/// Times of all commit events, ascending.
pub fn commit_times(trace: &RunTrace) -> Vec<u64> {
    let mut t: Vec<u64> = trace.iter().filter(|e| matches!(e.kind, TraceKind::Commit { .. })).map(|e| e.t).collect();
    t.sort_unstable();
    t
}

/// Longest interval inside `[from, to]` that contains no commit event.
pub fn longest_commit_gap(times: &[u64], from: u64, to: u64) -> (u64, u64) {
    let mut best = (from, from);
    let mut prev = from;
    for &t in times.iter().filter(|t| **t >= from && **t <= to) {
        if t - prev > best.1 - best.0 {
            best = (prev, t);
        }
        prev = t;
    }
    if to - prev > best.1 - best.0 {
        best = (prev, to);
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StallSummary {
    pub timer_ms: u64,
    pub longest_gap_start_ms: u64,
    pub longest_gap_end_ms: u64,
    pub longest_gap_ms: u64,
    /// Sum of commit-free gaps longer than one timer.
    pub total_stall_ms: u64,
    /// Requests executed within one timer after the longest gap ends.
    pub burst_requests: u64,
    /// Mean requests executed per timer-length interval over the window.
    pub mean_requests_per_timer: f64,
}

/// Commit-free intervals inside `[from, to]`.
pub fn stall_summary(trace: &RunTrace, records: &Records, timer_ms: u64, from: u64, to: u64) -> StallSummary {
    let times = commit_times(trace);
    let (start, end) = longest_commit_gap(&times, from, to);
    let mut total = 0;
    let mut prev = from;
    for &t in times.iter().filter(|t| **t >= from && **t <= to).chain(std::iter::once(&to)) {
        if t - prev > timer_ms {
            total += t - prev;
        }
        prev = t;
    }
    let exec: Vec<u64> = records.iter().filter_map(|r| r.exec_time[r.target.index()]).collect();
    let burst = exec.iter().filter(|t| **t >= end && **t <= end + timer_ms).count() as u64;
    let in_window = exec.iter().filter(|t| **t >= from && **t <= to).count() as f64;
    let intervals = ((to - from) as f64 / timer_ms.max(1) as f64).max(1.0);
    StallSummary {
        timer_ms,
        longest_gap_start_ms: start,
        longest_gap_end_ms: end,
        longest_gap_ms: end - start,
        total_stall_ms: total,
        burst_requests: burst,
        mean_requests_per_timer: in_window / intervals,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
    pub complexity: ComplexityReport,
    pub metrics: Metrics,
    pub replicas: Vec<ReplicaSummary>,
}

impl AuditReport {
    pub fn check(&self, name: &str) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn safety_passed(&self) -> bool {
        ["log-agreement", "chain-discipline", "unique-rank", "execution"]
            .iter()
            .all(|n| self.check(n).is_some_and(|c| c.passed))
    }
}

pub fn audit(run: &RunOutput) -> AuditReport {
    let checks = vec![
        check_log_agreement(&run.trace),
        check_chain_discipline(&run.trace),
        check_unique_rank(&run.trace),
        check_execution(&run.trace, &run.execution_errors),
        check_liveness(&run.records, &run.scenario, &run.summaries, &run.crash_times),
    ];
    AuditReport {
        scenario: run.scenario.name.clone(),
        seed: run.scenario.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
        complexity: complexity_report(&run.trace, run.scenario.n),
        metrics: metrics(&run.trace, &run.records, run.scenario.duration_ms),
        replicas: run.summaries.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mandator::CmndsVector;
    use crate::trace::CommitVia;
    use crate::workload::ClientArrival;

    fn chain(len: u64, proposer: u32) -> Vec<Block> {
        let mut out = Vec::new();
        let mut parent = BlockId::GENESIS;
        for r in 1..=len {
            let b = Block::new(Rank::new(0, r), Level::Sync, parent, ReplicaId(proposer), CmndsVector::zeros(3));
            parent = b.id;
            out.push(b);
        }
        out
    }

    fn trace_of(chains: &[(u32, Vec<Block>)]) -> RunTrace {
        let mut t = RunTrace::default();
        for (r, c) in chains {
            for b in c {
                t.push(0, ReplicaId(*r), TraceKind::Commit { block: b.clone(), via: CommitVia::Sync });
            }
        }
        t
    }

    #[test]
    fn agreement_passes_on_prefixes() {
        let c = chain(5, 0);
        let t = trace_of(&[(0, c.clone()), (1, c[..3].to_vec())]);
        assert!(check_log_agreement(&t).passed);
        assert!(check_chain_discipline(&t).passed);
        assert!(check_unique_rank(&t).passed);
    }

    #[test]
    fn forked_round_is_pinpointed() {
        let a = chain(4, 0);
        let mut b = a[..2].to_vec();
        let fork = Block::new(Rank::new(0, 3), Level::Sync, b[1].id, ReplicaId(1), CmndsVector::zeros(3));
        b.push(fork);
        let t = trace_of(&[(0, a), (1, b)]);
        let rep = check_log_agreement(&t);
        assert!(!rep.passed);
        assert_eq!(rep.violations[0].round, Some(3));
        assert!(!check_unique_rank(&t).passed);
    }

    #[test]
    fn round_gap_and_bad_parent_detected() {
        let mut c = chain(4, 0);
        c.remove(1);
        let rep = check_chain_discipline(&trace_of(&[(0, c)]));
        assert!(!rep.passed);
        assert_eq!(rep.violations[0].replica, Some(ReplicaId(0)));
    }

    #[test]
    fn duplicate_batch_detected() {
        let mut t = RunTrace::default();
        let ev = TraceKind::CutCommitted {
            block: BlockId(5),
            cut: CmndsVector::zeros(2),
            batch_ids: vec![BatchId(1), BatchId(2)],
            requests: 0,
        };
        t.push(0, ReplicaId(0), ev.clone());
        assert!(check_execution(&t, &[]).passed);
        t.push(1, ReplicaId(0), ev);
        assert!(!check_execution(&t, &[]).passed);
    }

    #[test]
    fn nearest_rank_examples() {
        assert_eq!(nearest_rank(&[10, 20, 30], 50.0), Some(20));
        assert_eq!(nearest_rank(&[10, 20, 30], 99.0), Some(30));
        assert_eq!(nearest_rank(&[], 50.0), None);
        assert_eq!(nearest_rank(&[7], 1.0), Some(7));
    }

    #[test]
    fn metrics_on_synthetic_records() {
        let arrivals: Vec<ClientArrival> = (0..3)
            .map(|i| ClientArrival { time: 0, client: 0, target: ReplicaId(0), first_request: i, count: 1 })
            .collect();
        let mut rec = Records::from_arrivals(&arrivals, 3);
        for (i, lat) in [10, 20, 30].iter().enumerate() {
            rec.record_execution(i as u64, ReplicaId(0), *lat).unwrap();
        }
        let m = metrics(&RunTrace::default(), &rec, 2000);
        assert_eq!(m.latency_median_ms, Some(20));
        assert_eq!(m.executed_requests, 3);
        assert!((m.throughput_rps - 1.5).abs() < 1e-9);
        let empty = metrics(&RunTrace::default(), &Records::new(3), 2000);
        assert_eq!(empty.throughput_rps, 0.0);
        assert_eq!(empty.latency_median_ms, None);
    }

    #[test]
    fn commit_gap_scan() {
        assert_eq!(longest_commit_gap(&[10, 20, 70, 80], 0, 100), (20, 70));
        assert_eq!(longest_commit_gap(&[], 5, 9), (5, 9));
    }

    #[test]
    fn timeseries_buckets() {
        let arrivals = vec![ClientArrival { time: 0, client: 0, target: ReplicaId(0), first_request: 0, count: 3 }];
        let mut rec = Records::from_arrivals(&arrivals, 1);
        rec.record_execution(0, ReplicaId(0), 500).unwrap();
        rec.record_execution(1, ReplicaId(0), 1500).unwrap();
        rec.record_execution(2, ReplicaId(0), 1999).unwrap();
        assert_eq!(timeseries(&rec, 2000), vec![1, 2]);
        assert_eq!(timeseries_csv(&[1, 2]), "second,executed_requests\n0,1\n1,2\n");
    }
}
