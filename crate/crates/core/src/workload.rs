//! Open-loop Poisson clients and per-request execution bookkeeping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::ReplicaId;
use crate::mandator::RequestId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Client `i` always submits to replica `i mod n`.
    #[default]
    ClientModN,
    /// Successive submissions rotate over replicas.
    RoundRobin,
}

fn default_batch() -> u64 {
    100
}

fn default_payload() -> u64 {
    16
}

fn default_clients() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    /// Submissions per second, summed over all clients.
    pub arrival_rate: f64,
    #[serde(default = "default_batch")]
    pub client_batch_size: u64,
    #[serde(default = "default_payload")]
    pub payload_bytes: u64,
    #[serde(default = "default_clients")]
    pub num_clients: u32,
    #[serde(default)]
    pub target_policy: TargetPolicy,
    /// No submissions at or after this time; defaults to the horizon.
    #[serde(default)]
    pub stop_ms: Option<u64>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            arrival_rate: 10.0,
            client_batch_size: default_batch(),
            payload_bytes: default_payload(),
            num_clients: default_clients(),
            target_policy: TargetPolicy::default(),
            stop_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientArrival {
    pub time: u64,
    pub client: u32,
    pub target: ReplicaId,
    pub first_request: RequestId,
    pub count: u64,
}

impl ClientArrival {
    pub fn requests(&self) -> impl Iterator<Item = RequestId> {
        self.first_request..self.first_request + self.count
    }
}

/// Arrivals in `[0, horizon_ms)` with exponential gaps of mean
/// `1000 / arrival_rate` ms. Request ids are dense from 0.
pub fn generate_arrivals(cfg: &ClientConfig, n: usize, seed: u64, horizon_ms: u64) -> Vec<ClientArrival> {
    assert!(cfg.arrival_rate > 0.0 && cfg.client_batch_size >= 1 && cfg.num_clients >= 1 && n >= 1);
    let end = cfg.stop_ms.map_or(horizon_ms, |s| s.min(horizon_ms));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(cfg.arrival_rate / 1000.0).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0f64;
    let mut next_id: RequestId = 0;
    loop {
        t += gap.sample(&mut rng);
        let time = t.floor() as u64;
        if time >= end {
            break;
        }
        let k = out.len() as u64;
        let client = (k % u64::from(cfg.num_clients)) as u32;
        let target = match cfg.target_policy {
            TargetPolicy::ClientModN => ReplicaId::from(client as usize % n),
            TargetPolicy::RoundRobin => ReplicaId::from((k % n as u64) as usize),
        };
        out.push(ClientArrival { time, client, target, first_request: next_id, count: cfg.client_batch_size });
        next_id += cfg.client_batch_size;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("request {0} was never submitted")]
    UnknownRequest(RequestId),
    #[error("request {request} executed twice at {replica}")]
    DuplicateExecution { request: RequestId, replica: ReplicaId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub request_id: RequestId,
    pub target: ReplicaId,
    pub submit_time: u64,
    /// First execution time at each replica.
    pub exec_time: Vec<Option<u64>>,
}

impl RequestRecord {
    pub fn executed(&self) -> bool {
        self.exec_time[self.target.index()].is_some()
    }

    /// Execution latency at the submitting replica.
    pub fn latency(&self) -> Option<u64> {
        self.exec_time[self.target.index()].map(|t| t - self.submit_time)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Records {
    n: usize,
    records: Vec<RequestRecord>,
}

impl Records {
    pub fn new(n: usize) -> Self {
        Records { n, records: Vec::new() }
    }

    pub fn from_arrivals(arrivals: &[ClientArrival], n: usize) -> Self {
        let mut r = Records::new(n);
        for a in arrivals {
            r.submit(a);
        }
        r
    }

    pub fn submit(&mut self, a: &ClientArrival) {
        for id in a.requests() {
            assert_eq!(id as usize, self.records.len(), "request ids are dense");
            self.records.push(RequestRecord {
                request_id: id,
                target: a.target,
                submit_time: a.time,
                exec_time: vec![None; self.n],
            });
        }
    }

    pub fn get(&self, id: RequestId) -> Option<&RequestRecord> {
        self.records.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RequestRecord> {
        self.records.iter()
    }

    /// Records the first execution of `id` at `replica`; returns the latency
    /// when `replica` is the submitting replica.
    pub fn record_execution(&mut self, id: RequestId, replica: ReplicaId, time: u64) -> Result<Option<u64>, WorkloadError> {
        let rec = self.records.get_mut(id as usize).ok_or(WorkloadError::UnknownRequest(id))?;
        let slot = &mut rec.exec_time[replica.index()];
        if slot.is_some() {
            return Err(WorkloadError::DuplicateExecution { request: id, replica });
        }
        *slot = Some(time);
        Ok((replica == rec.target).then(|| time - rec.submit_time))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rate: f64) -> ClientConfig {
        ClientConfig { arrival_rate: rate, ..ClientConfig::default() }
    }

    #[test]
    fn arrival_count_near_expectation() {
        let a = generate_arrivals(&cfg(10.0), 5, 7, 10_000);
        assert!((60..=140).contains(&a.len()), "{} arrivals", a.len());
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.iter().all(|x| x.count == 100));
    }

    #[test]
    fn doubling_rate_halves_mean_gap() {
        let horizon = 2_000_000;
        let mean = |rate: f64| {
            let a = generate_arrivals(&cfg(rate), 5, 11, horizon);
            a.last().unwrap().time as f64 / a.len() as f64
        };
        let (g1, g2) = (mean(5.0), mean(10.0));
        assert!((g1 - 200.0).abs() < 10.0, "{g1}");
        assert!((g2 - 100.0).abs() < 5.0, "{g2}");
    }

    #[test]
    fn zero_horizon_is_empty() {
        assert!(generate_arrivals(&cfg(10.0), 5, 1, 0).is_empty());
    }

    #[test]
    fn targets_follow_policy() {
        let a = generate_arrivals(&ClientConfig { num_clients: 7, ..cfg(50.0) }, 5, 3, 5_000);
        for x in &a {
            assert_eq!(x.target.index(), x.client as usize % 5);
        }
        let rr = generate_arrivals(&ClientConfig { target_policy: TargetPolicy::RoundRobin, ..cfg(50.0) }, 5, 3, 5_000);
        for (k, x) in rr.iter().enumerate() {
            assert_eq!(x.target.index(), k % 5);
        }
    }

    #[test]
    fn execution_bookkeeping() {
        let a = vec![ClientArrival { time: 100, client: 0, target: ReplicaId(0), first_request: 0, count: 2 }];
        let mut r = Records::from_arrivals(&a, 3);
        assert_eq!(r.record_execution(0, ReplicaId(0), 150), Ok(Some(50)));
        assert_eq!(r.record_execution(0, ReplicaId(1), 160), Ok(None));
        assert_eq!(
            r.record_execution(0, ReplicaId(0), 170),
            Err(WorkloadError::DuplicateExecution { request: 0, replica: ReplicaId(0) })
        );
        assert_eq!(r.record_execution(9, ReplicaId(0), 170), Err(WorkloadError::UnknownRequest(9)));
        assert!(r.get(0).unwrap().executed());
        assert!(!r.get(1).unwrap().executed());
    }
}
