//! Declarative run description: topology, delay model, faults, attack
//! schedule and workload. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::block::ReplicaId;
use crate::sporades::FallbackMode;
use crate::workload::ClientConfig;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        self.start_ms <= t && t < self.end_ms
    }
}

fn default_base_delay() -> u64 {
    10
}

fn default_factor() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
    /// Per ordered pair base delay; overrides `base_delay_ms` when present.
    #[serde(default)]
    pub pair_delay_ms: Option<Vec<Vec<u64>>>,
    #[serde(default)]
    pub bounded_jitter_ms: u64,
    /// Delays before GST and inside windows are uniform in
    /// `[base, base * asynchrony_factor]`.
    #[serde(default = "default_factor")]
    pub asynchrony_factor: f64,
    #[serde(default)]
    pub gst_ms: u64,
    #[serde(default)]
    pub async_windows: Vec<Window>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            base_delay_ms: default_base_delay(),
            pair_delay_ms: None,
            bounded_jitter_ms: 0,
            asynchrony_factor: default_factor(),
            gst_ms: 0,
            async_windows: Vec::new(),
        }
    }
}

impl NetworkConfig {
    pub fn base(&self, from: ReplicaId, to: ReplicaId) -> u64 {
        match &self.pair_delay_ms {
            Some(m) => m[from.index()][to.index()],
            None => self.base_delay_ms,
        }
    }

    pub fn is_asynchronous(&self, t: u64) -> bool {
        t < self.gst_ms || self.async_windows.iter().any(|w| w.contains(t))
    }

    /// Largest delay a message sent at a synchronous instant can see,
    /// ignoring attacks.
    pub fn max_sync_delay(&self) -> u64 {
        let base = match &self.pair_delay_ms {
            Some(m) => m.iter().flatten().copied().max().unwrap_or(0),
            None => self.base_delay_ms,
        };
        base + self.bounded_jitter_ms
    }

    pub fn mean_delay(&self) -> u64 {
        self.base_delay_ms + self.bounded_jitter_ms / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrashSpec {
    pub time_ms: u64,
    pub replica: ReplicaId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub minority_size: usize,
    /// `None`: the attacked set is drawn once and kept.
    #[serde(default)]
    pub rotation_period_ms: Option<u64>,
    #[serde(default)]
    pub attack_delay_ms: u64,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default)]
    pub end_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebugConfig {
    /// Replica that executes one request twice.
    #[serde(default)]
    pub double_execute: Option<ReplicaId>,
}

fn default_heartbeat() -> u64 {
    100
}

fn default_max_batch() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub seed: u64,
    /// Shared coin seed; defaults to `seed`.
    #[serde(default)]
    pub coin_seed: Option<u64>,
    pub duration_ms: u64,
    /// Defaults to four mean one-way delays.
    #[serde(default)]
    pub timer_ms: Option<u64>,
    #[serde(default)]
    pub fallback: FallbackMode,
    #[serde(default)]
    pub selective_broadcast: bool,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_ms: u64,
    #[serde(default = "default_max_batch")]
    pub max_batch_requests: usize,
    /// Defaults to ten timer lengths.
    #[serde(default)]
    pub drain_window_ms: Option<u64>,
    /// Defaults to half a timer length.
    #[serde(default)]
    pub fetch_retry_ms: Option<u64>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub crashes: Vec<CrashSpec>,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub clients: Option<ClientConfig>,
    #[serde(default)]
    pub debug: DebugConfig,
}

impl Scenario {
    /// Minimal fault-free scenario.
    pub fn basic(n: usize, f: usize, duration_ms: u64) -> Self {
        Scenario {
            name: String::new(),
            n,
            f,
            seed: 0,
            coin_seed: None,
            duration_ms,
            timer_ms: None,
            fallback: FallbackMode::Enabled,
            selective_broadcast: false,
            heartbeat_ms: default_heartbeat(),
            max_batch_requests: default_max_batch(),
            drain_window_ms: None,
            fetch_retry_ms: None,
            network: NetworkConfig::default(),
            crashes: Vec::new(),
            attack: AttackConfig::default(),
            clients: None,
            debug: DebugConfig::default(),
        }
    }

    pub fn timer_ms(&self) -> u64 {
        self.timer_ms.unwrap_or(4 * self.network.mean_delay().max(1))
    }

    pub fn drain_window_ms(&self) -> u64 {
        self.drain_window_ms.unwrap_or(10 * self.timer_ms())
    }

    pub fn fetch_retry_ms(&self) -> u64 {
        self.fetch_retry_ms.unwrap_or((self.timer_ms() / 2).max(1))
    }

    pub fn coin_seed(&self) -> u64 {
        self.coin_seed.unwrap_or(self.seed)
    }

    pub fn from_json_str(text: &str, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
        let mut value: Value = serde_json::from_str(text)?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let s: Scenario = serde_json::from_value(value)?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &std::path::Path, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, overrides)
    }

    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
        let text = serde_json::to_string(self)?;
        Self::from_json_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.n == 0 || self.n < 2 * self.f + 1 {
            return bad(format!("n={} f={} violates n >= 2f+1", self.n, self.f));
        }
        if self.duration_ms == 0 {
            return bad("duration_ms must be positive".into());
        }
        if self.timer_ms() == 0 || self.heartbeat_ms == 0 || self.max_batch_requests == 0 {
            return bad("timer_ms, heartbeat_ms and max_batch_requests must be positive".into());
        }
        if self.network.asynchrony_factor < 1.0 || !self.network.asynchrony_factor.is_finite() {
            return bad("asynchrony_factor must be >= 1".into());
        }
        if let Some(m) = &self.network.pair_delay_ms {
            if m.len() != self.n || m.iter().any(|row| row.len() != self.n) {
                return bad("pair_delay_ms must be n x n".into());
            }
        }
        if self.network.async_windows.iter().any(|w| w.start_ms >= w.end_ms) {
            return bad("async window must have start_ms < end_ms".into());
        }
        if let Some(c) = self.crashes.iter().find(|c| c.replica.index() >= self.n) {
            return bad(format!("crash of unknown replica {}", c.replica.0));
        }
        let a = &self.attack;
        if a.enabled {
            if a.minority_size > self.f {
                return bad(format!("attack minority_size {} exceeds f={}", a.minority_size, self.f));
            }
            if a.rotation_period_ms == Some(0) {
                return bad("rotation_period_ms must be positive".into());
            }
            if a.end_ms.is_some_and(|e| e <= a.start_ms) {
                return bad("attack end_ms must follow start_ms".into());
            }
        }
        if let Some(c) = &self.clients {
            if !(c.arrival_rate > 0.0 && c.arrival_rate.is_finite()) {
                return bad("arrival_rate must be positive".into());
            }
            if c.client_batch_size == 0 || c.num_clients == 0 {
                return bad("client_batch_size and num_clients must be positive".into());
            }
        }
        if self.debug.double_execute.is_some_and(|r| r.index() >= self.n) {
            return bad("debug replica out of range".into());
        }
        Ok(())
    }

    /// Last instant at which the adversary disturbs the run.
    pub fn last_disruption_ms(&self) -> u64 {
        let mut t = self.network.gst_ms;
        for w in &self.network.async_windows {
            t = t.max(w.end_ms);
        }
        for c in &self.crashes {
            t = t.max(c.time_ms);
        }
        if self.attack.enabled && self.attack.attack_delay_ms > 0 {
            t = t.max(self.attack.end_ms.unwrap_or(u64::MAX));
        }
        t
    }
}

/// Sets dotted `key` to `raw`, parsed as JSON when possible and as a string
/// otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), ScenarioError> {
    let err = |m: &str| ScenarioError::Override(key.to_string(), m.to_string());
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment"));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), new);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| err("expected array index"))?;
                let slot = items.get_mut(idx).ok_or_else(|| err("array index out of range"))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(err("path runs through a scalar")),
        };
    }
    Ok(())
}
