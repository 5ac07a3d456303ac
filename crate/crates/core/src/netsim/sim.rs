use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::queue::EventQueue;
use super::scenario::{NetworkConfig, Scenario};
use crate::block::ReplicaId;
use crate::replica::{Message, Outbox, Replica, ReplicaConfig, ReplicaSummary};
use crate::sporades::splitmix64_at;
use crate::trace::{RunTrace, TraceKind};
use crate::workload::{generate_arrivals, ClientArrival, Records, WorkloadError};

const NETWORK_STREAM: u64 = 1;
const ATTACK_STREAM: u64 = 2;
const WORKLOAD_STREAM: u64 = 3;

/// Seed of an independent random stream derived from the scenario seed.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64_at(seed, stream)
}

/// Per-message delay model. Draws come from one seeded stream in send
/// order, so identical runs see identical delays.
pub struct NetworkModel {
    cfg: NetworkConfig,
    attack_delay_ms: u64,
    rng: ChaCha8Rng,
}

impl NetworkModel {
    pub fn new(cfg: NetworkConfig, attack_delay_ms: u64, seed: u64) -> Self {
        NetworkModel { cfg, attack_delay_ms, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn delay(&mut self, from: ReplicaId, to: ReplicaId, now: u64, attacked: &BTreeSet<ReplicaId>) -> u64 {
        if from == to {
            return 0;
        }
        let base = self.cfg.base(from, to);
        let hi = if self.cfg.is_asynchronous(now) {
            ((base as f64) * self.cfg.asynchrony_factor).round() as u64
        } else {
            base + self.cfg.bounded_jitter_ms
        };
        let mut d = if hi > base { self.rng.random_range(base..=hi) } else { base };
        if attacked.contains(&from) || attacked.contains(&to) {
            d += self.attack_delay_ms;
        }
        d
    }
}

/// Uniform sample of `minority` distinct replicas.
pub fn rotate_attack(rng: &mut ChaCha8Rng, n: usize, minority: usize) -> BTreeSet<ReplicaId> {
    sample(rng, n, minority.min(n)).into_iter().map(ReplicaId::from).collect()
}

enum Event {
    Deliver { from: ReplicaId, to: ReplicaId, msg_id: u64, msg: Message },
    Timer { replica: ReplicaId, generation: u64 },
    Tick { replica: ReplicaId },
    Client { index: usize },
    Crash { replica: ReplicaId },
    AttackRotate,
    AttackEnd,
}

#[derive(Debug)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub trace: RunTrace,
    pub records: Records,
    pub summaries: Vec<ReplicaSummary>,
    /// Crash time per replica, if it crashed during the run.
    pub crash_times: Vec<Option<u64>>,
    pub execution_errors: Vec<WorkloadError>,
    pub messages_sent: u64,
}

struct Sim {
    scenario: Scenario,
    replicas: Vec<Replica>,
    crashed: Vec<Option<u64>>,
    attacked: BTreeSet<ReplicaId>,
    queue: EventQueue<Event>,
    network: NetworkModel,
    attack_rng: ChaCha8Rng,
    arrivals: Vec<ClientArrival>,
    records: Records,
    trace: RunTrace,
    execution_errors: Vec<WorkloadError>,
    next_msg: u64,
}

/// Runs `scenario` to `duration_ms`. The scenario must be valid.
pub fn run(scenario: &Scenario) -> RunOutput {
    scenario.validate().expect("run requires a validated scenario");
    let n = scenario.n;
    let replicas = (0..n)
        .map(|i| {
            let id = ReplicaId::from(i);
            Replica::new(
                id,
                ReplicaConfig {
                    n,
                    f: scenario.f,
                    timer_ms: scenario.timer_ms(),
                    fallback: scenario.fallback,
                    selective_broadcast: scenario.selective_broadcast,
                    heartbeat_ms: scenario.heartbeat_ms,
                    max_batch_requests: scenario.max_batch_requests,
                    fetch_retry_ms: scenario.fetch_retry_ms(),
                    coin_seed: scenario.coin_seed(),
                    double_execute: scenario.debug.double_execute == Some(id),
                },
            )
        })
        .collect();
    let arrivals = match &scenario.clients {
        Some(c) => generate_arrivals(c, n, stream_seed(scenario.seed, WORKLOAD_STREAM), scenario.duration_ms),
        None => Vec::new(),
    };
    let records = Records::from_arrivals(&arrivals, n);
    let mut sim = Sim {
        scenario: scenario.clone(),
        replicas,
        crashed: vec![None; n],
        attacked: BTreeSet::new(),
        queue: EventQueue::new(),
        network: NetworkModel::new(
            scenario.network.clone(),
            scenario.attack.attack_delay_ms,
            stream_seed(scenario.seed, NETWORK_STREAM),
        ),
        attack_rng: ChaCha8Rng::seed_from_u64(stream_seed(scenario.seed, ATTACK_STREAM)),
        arrivals,
        records,
        trace: RunTrace::default(),
        execution_errors: Vec::new(),
        next_msg: 0,
    };
    sim.run();
    let summaries = sim
        .replicas
        .iter()
        .map(|r| r.summary(sim.crashed[r.id().index()].is_some()))
        .collect();
    RunOutput {
        scenario: sim.scenario,
        trace: sim.trace,
        records: sim.records,
        summaries,
        crash_times: sim.crashed,
        execution_errors: sim.execution_errors,
        messages_sent: sim.next_msg,
    }
}

impl Sim {
    fn run(&mut self) {
        let n = self.scenario.n;
        let mut crashes = self.scenario.crashes.clone();
        crashes.sort_by_key(|c| (c.time_ms, c.replica));
        for c in &crashes {
            if c.time_ms == 0 {
                self.crash(0, c.replica);
            } else {
                self.queue.push(c.time_ms, Event::Crash { replica: c.replica });
            }
        }
        let attack = self.scenario.attack.clone();
        if attack.enabled && attack.minority_size > 0 {
            self.queue.push(attack.start_ms, Event::AttackRotate);
            if let Some(end) = attack.end_ms {
                self.queue.push(end, Event::AttackEnd);
            }
        }
        for i in 0..self.arrivals.len() {
            self.queue.push(self.arrivals[i].time, Event::Client { index: i });
        }
        for i in 0..n {
            let id = ReplicaId::from(i);
            if self.crashed[i].is_some() {
                continue;
            }
            let mut out = Outbox::default();
            self.replicas[i].start(0, &mut out);
            self.flush(0, id, out);
            self.queue.push(self.scenario.heartbeat_ms, Event::Tick { replica: id });
        }
        while let Some(t) = self.queue.peek_time() {
            if t > self.scenario.duration_ms {
                break;
            }
            let (now, _, ev) = self.queue.pop().expect("peeked");
            self.step(now, ev);
        }
    }

    fn alive(&self, r: ReplicaId) -> bool {
        self.crashed[r.index()].is_none()
    }

    fn crash(&mut self, now: u64, r: ReplicaId) {
        if self.crashed[r.index()].is_none() {
            self.crashed[r.index()] = Some(now);
            self.trace.push(now, r, TraceKind::Crash);
        }
    }

    fn step(&mut self, now: u64, ev: Event) {
        match ev {
            Event::Deliver { from, to, msg_id, msg } => {
                if !self.alive(to) {
                    return;
                }
                self.trace.push(now, to, TraceKind::Deliver { from, msg_id });
                let mut out = Outbox::default();
                self.replicas[to.index()].on_message(now, from, msg, &mut out);
                self.flush(now, to, out);
            }
            Event::Timer { replica, generation } => {
                if !self.alive(replica) {
                    return;
                }
                let mut out = Outbox::default();
                self.replicas[replica.index()].on_consensus_timer(now, generation, &mut out);
                self.flush(now, replica, out);
            }
            Event::Tick { replica } => {
                if !self.alive(replica) {
                    return;
                }
                let mut out = Outbox::default();
                self.replicas[replica.index()].on_tick(now, &mut out);
                self.flush(now, replica, out);
                self.queue.push(now + self.scenario.heartbeat_ms, Event::Tick { replica });
            }
            Event::Client { index } => {
                let a = self.arrivals[index].clone();
                self.trace.push(
                    now,
                    a.target,
                    TraceKind::ClientArrival { client: a.client, first_request: a.first_request, count: a.count },
                );
                if !self.alive(a.target) {
                    return;
                }
                let mut out = Outbox::default();
                self.replicas[a.target.index()].on_client_requests(now, a.requests(), &mut out);
                self.flush(now, a.target, out);
            }
            Event::Crash { replica } => self.crash(now, replica),
            Event::AttackRotate => {
                let a = &self.scenario.attack;
                if a.end_ms.is_some_and(|e| now >= e) {
                    return;
                }
                let (n, m, period) = (self.scenario.n, a.minority_size, a.rotation_period_ms);
                self.attacked = rotate_attack(&mut self.attack_rng, n, m);
                let attacked = self.attacked.iter().copied().collect();
                self.trace.push(now, ReplicaId(0), TraceKind::AttackRotate { attacked });
                if let Some(p) = period {
                    self.queue.push(now + p, Event::AttackRotate);
                }
            }
            Event::AttackEnd => {
                self.attacked.clear();
                self.trace.push(now, ReplicaId(0), TraceKind::AttackRotate { attacked: Vec::new() });
            }
        }
    }

    fn flush(&mut self, now: u64, from: ReplicaId, out: Outbox) {
        for e in out.events {
            self.trace.push(now, from, e);
        }
        for (to, msg) in out.sends {
            let msg_id = self.next_msg;
            self.next_msg += 1;
            self.trace.push(now, from, msg.trace_kind(to, msg_id));
            let d = self.network.delay(from, to, now, &self.attacked);
            self.queue.push(now + d, Event::Deliver { from, to, msg_id, msg });
        }
        if let Some(t) = out.consensus_timer {
            self.queue.push(t.deadline, Event::Timer { replica: from, generation: t.generation });
        }
        for id in out.executed {
            if let Err(e) = self.records.record_execution(id, from, now) {
                self.execution_errors.push(e);
            }
        }
    }
}
