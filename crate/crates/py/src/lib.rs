//! Python bindings: scenario loading, simulation runs with audit reports,
//! the coin and leader schedule, and a standalone dissemination-chain state.

use std::collections::BTreeMap;
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use msim::audit::{audit, timeseries, timeseries_csv, AuditReport};
use msim::block::{leader_of as leader_for_view, ReplicaId};
use msim::mandator::{ChainsState, CmndsVector, MandatorBatch, MandatorMessage};
use msim::netsim::{run as run_sim, RunOutput, Scenario as CoreScenario};
use msim::sporades::{common_coin_flip, CoinConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pairs(overrides: Option<BTreeMap<String, String>>) -> Vec<(String, String)> {
    overrides.unwrap_or_default().into_iter().collect()
}

/// Leader of `view` under round-robin rotation.
#[pyfunction]
fn leader_of(view: u64, n: usize) -> PyResult<u32> {
    if n == 0 {
        return Err(value_err("n must be positive"));
    }
    Ok(leader_for_view(view, n).0)
}

/// Common coin outcome for `view` under a shared seed.
#[pyfunction]
fn coin_flip(shared_seed: u64, n: usize, view: u64) -> PyResult<u32> {
    if n == 0 {
        return Err(value_err("n must be positive"));
    }
    Ok(common_coin_flip(&CoinConfig { shared_seed, n }, view).0)
}

/// A validated simulation scenario.
#[pyclass(module = "mandator_sporades", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    #[pyo3(signature = (text, overrides=None))]
    fn from_json(text: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let inner = CoreScenario::from_json_str(text, &pairs(overrides)).map_err(value_err)?;
        Ok(Scenario { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides=None))]
    fn from_file(path: std::path::PathBuf, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let inner = CoreScenario::from_path(&path, &pairs(overrides)).map_err(value_err)?;
        Ok(Scenario { inner })
    }

    /// Fault-free scenario with no client load.
    #[staticmethod]
    fn basic(n: usize, f: usize, duration_ms: u64) -> PyResult<Self> {
        let inner = CoreScenario::basic(n, f, duration_ms);
        inner.validate().map_err(value_err)?;
        Ok(Scenario { inner })
    }

    /// Copy with `key=value` overrides applied (dotted keys reach nested fields).
    fn with_overrides(&self, overrides: BTreeMap<String, String>) -> PyResult<Self> {
        let inner = self.inner.with_overrides(&pairs(Some(overrides))).map_err(value_err)?;
        Ok(Scenario { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn f(&self) -> usize {
        self.inner.f
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn duration_ms(&self) -> u64 {
        self.inner.duration_ms
    }

    #[getter]
    fn timer_ms(&self) -> u64 {
        self.inner.timer_ms()
    }

    fn __repr__(&self) -> String {
        format!("Scenario(name={:?}, n={}, f={}, seed={})", self.inner.name, self.inner.n, self.inner.f, self.inner.seed)
    }
}

/// Output of one simulation run together with its audit.
#[pyclass(module = "mandator_sporades", frozen)]
struct RunResult {
    run: RunOutput,
    report: AuditReport,
}

#[pymethods]
impl RunResult {
    /// True when every audit check passed.
    #[getter]
    fn passed(&self) -> bool {
        self.report.passed
    }

    #[getter]
    fn safety_passed(&self) -> bool {
        self.report.safety_passed()
    }

    #[getter]
    fn throughput_rps(&self) -> f64 {
        self.report.metrics.throughput_rps
    }

    #[getter]
    fn committed_blocks(&self) -> u64 {
        self.report.metrics.committed_blocks
    }

    #[getter]
    fn async_episodes(&self) -> u64 {
        self.report.metrics.async_episodes
    }

    /// Names of audit checks that failed.
    fn failed_checks(&self) -> Vec<&'static str> {
        self.report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    fn report_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.report).map_err(value_err)
    }

    fn trace_jsonl(&self) -> String {
        self.run.trace.to_jsonl()
    }

    fn timeseries_csv(&self) -> String {
        timeseries_csv(&timeseries(&self.run.records, self.run.scenario.duration_ms))
    }
}

/// Simulate `scenario` and audit the resulting trace. Releases the GIL while running.
#[pyfunction]
fn run(py: Python<'_>, scenario: &Scenario) -> RunResult {
    let s = scenario.inner.clone();
    py.detach(move || {
        let run = run_sim(&s);
        let report = audit(&run);
        RunResult { run, report }
    })
}

type BatchTuple = (u32, u64, Vec<u64>);

fn batch_tuple(b: &MandatorBatch) -> BatchTuple {
    (b.creator.0, b.round, b.requests.clone())
}

/// One replica's view of every creator's batch chain.
#[pyclass(module = "mandator_sporades")]
struct Chains {
    inner: ChainsState,
}

#[pymethods]
impl Chains {
    #[new]
    #[pyo3(signature = (n, me, quorum, selective=false))]
    fn new(n: usize, me: u32, quorum: usize, selective: bool) -> PyResult<Self> {
        if me as usize >= n || quorum == 0 || quorum > n {
            return Err(value_err("need me < n and 1 <= quorum <= n"));
        }
        Ok(Chains { inner: ChainsState::new(n, ReplicaId(me), quorum, selective) })
    }

    /// Append an own batch; returns its round and the peers to send it to.
    fn create_batch(&mut self, requests: Vec<u64>) -> PyResult<(u64, Vec<u32>)> {
        let intent = self.inner.create_batch(requests).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((intent.batch.round, intent.targets.iter().map(|r| r.0).collect()))
    }

    /// Store a peer's batch; returns the vote `(creator, round, voter)` to send back, if any.
    fn on_batch(&mut self, creator: u32, round: u64, requests: Vec<u64>) -> PyResult<Option<(u32, u64, u32)>> {
        if round == 0 || creator as usize >= self.inner.n() {
            return Err(value_err("need round >= 1 and creator < n"));
        }
        let batch = Arc::new(MandatorBatch::new(ReplicaId(creator), round, requests));
        match self.inner.on_batch(batch).map_err(|e| PyRuntimeError::new_err(e.to_string()))? {
            Some(MandatorMessage::Vote { creator, round, voter }) => Ok(Some((creator.0, round, voter.0))),
            _ => Ok(None),
        }
    }

    /// Record a vote on an own batch; returns the confirmed vector.
    fn on_vote(&mut self, voter: u32, creator: u32, round: u64) -> Vec<u64> {
        self.inner.on_vote(ReplicaId(voter), ReplicaId(creator), round)
    }

    fn ready(&self) -> bool {
        self.inner.ready()
    }

    fn confirmed(&self) -> Vec<u64> {
        self.inner.confirmed().to_vec()
    }

    fn current_cut(&self) -> Vec<u64> {
        self.inner.current_cut().as_slice().to_vec()
    }

    fn committed_cut(&self) -> Vec<u64> {
        self.inner.committed_cut().as_slice().to_vec()
    }

    fn chain_len(&self, creator: u32) -> u64 {
        self.inner.chain_len(ReplicaId(creator))
    }

    /// Commit a cut; returns newly committed batches as `(creator, round, requests)`
    /// in creator-then-round order.
    fn commit_cut(&mut self, cut: Vec<u64>) -> PyResult<Vec<BatchTuple>> {
        let batches = self.inner.commit_cut(&CmndsVector::from(cut)).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(batches.iter().map(|b| batch_tuple(b)).collect())
    }
}

#[pymodule]
fn mandator_sporades(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(leader_of, m)?)?;
    m.add_function(wrap_pyfunction!(coin_flip, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Scenario>()?;
    m.add_class::<RunResult>()?;
    m.add_class::<Chains>()?;
    Ok(())
}
