//! `msim` command line: run one scenario, sweep seeds, or compare the
//! fallback modes side by side.
//!
//! Exit codes: 0 when every audit check passes, 1 for invalid input or I/O
//! failure, 2 when an audit check reports a violation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::audit::{audit, nearest_rank, stall_summary, timeseries, timeseries_csv, AuditReport, StallSummary};
use crate::netsim::{run, RunOutput, Scenario};
use crate::sporades::FallbackMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_AUDIT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "msim", about = "Deterministic simulator and audit harness for dissemination plus dual-mode consensus")]
pub struct Cli {
    /// Suppress the one-line summaries on standard output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario once and write trace.jsonl, report.json and timeseries.csv.
    Run(Common),
    /// Run a scenario under consecutive seeds and aggregate the audits.
    Battery {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds, starting at the scenario's seed.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
    },
    /// Run a scenario with the fallback enabled and disabled on identical seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Number of consecutive seeds, starting at the scenario's seed.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        seeds: u64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Override a scenario field, e.g. `--set network.gst_ms=500`. Repeatable.
    #[arg(long = "set", value_name = "K=V", value_parser = parse_kv)]
    pub overrides: Vec<(String, String)>,
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Run(c) => cmd_run(&load(c)?, &c.out, cli.quiet),
        Command::Battery { common, seeds } => cmd_battery(&load(common)?, *seeds, &common.out, cli.quiet),
        Command::Compare { common, seeds } => cmd_compare(&load(common)?, *seeds, &common.out, cli.quiet),
    }
}

fn load(c: &Common) -> anyhow::Result<Scenario> {
    Scenario::from_path(&c.scenario, &c.overrides).with_context(|| format!("scenario {}", c.scenario.display()))
}

fn code_for(report: &AuditReport) -> i32 {
    if report.passed {
        EXIT_OK
    } else {
        EXIT_AUDIT
    }
}

/// Writes trace.jsonl, report.json and timeseries.csv into `dir`.
pub fn write_run(dir: &Path, run: &RunOutput, report: &AuditReport, with_trace: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if with_trace {
        let file = fs::File::create(dir.join("trace.jsonl")).context("creating trace.jsonl")?;
        run.trace.write_jsonl(std::io::BufWriter::new(file)).context("writing trace.jsonl")?;
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n").context("writing report.json")?;
    let csv = timeseries_csv(&timeseries(&run.records, run.scenario.duration_ms));
    fs::write(dir.join("timeseries.csv"), csv).context("writing timeseries.csv")?;
    Ok(())
}

fn ms(v: Option<u64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v}ms"))
}

fn summary_line(report: &AuditReport) -> String {
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    format!(
        "{} seed={} {} throughput={:.1} req/s p50={} p99={} commits={} async={}{}",
        report.scenario,
        report.seed,
        if report.passed { "PASS" } else { "FAIL" },
        report.metrics.throughput_rps,
        ms(report.metrics.latency_median_ms),
        ms(report.metrics.latency_p99_ms),
        report.metrics.committed_blocks,
        report.metrics.async_episodes,
        if failed.is_empty() { String::new() } else { format!(" violations={}", failed.join(",")) },
    )
}

pub fn cmd_run(scenario: &Scenario, out: &Path, quiet: bool) -> anyhow::Result<i32> {
    let output = run(scenario);
    let report = audit(&output);
    write_run(out, &output, &report, true)?;
    if !quiet {
        println!("{}", summary_line(&report));
    }
    if !report.passed {
        eprintln!("audit violation, see {}", out.join("report.json").display());
    }
    Ok(code_for(&report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
}

impl Distribution {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Distribution {
            min: v[0],
            median: v[(v.len() - 1) / 2],
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryRun {
    pub seed: u64,
    pub passed: bool,
    pub failed_checks: Vec<&'static str>,
    pub throughput_rps: f64,
    pub latency_median_ms: Option<u64>,
    pub latency_p99_ms: Option<u64>,
    pub async_episodes: u64,
    pub elected_async_episodes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatteryReport {
    pub scenario: String,
    pub runs: u64,
    pub passed: u64,
    pub pass_rate: f64,
    pub failed_seeds: Vec<u64>,
    pub async_episodes: u64,
    pub elected_async_episodes: u64,
    /// Fraction of async episodes whose exit committed an elected block.
    pub async_commit_fraction: Option<f64>,
    pub throughput_rps: Option<Distribution>,
    pub latency_median_ms: Option<Distribution>,
    pub latency_p99_ms: Option<Distribution>,
    pub per_run: Vec<BatteryRun>,
}

/// Seeds `scenario.seed, scenario.seed + 1, ...`; the coin seed follows
/// the run seed unless the scenario pins it.
pub fn battery_reports(scenario: &Scenario, seeds: u64) -> Vec<(Scenario, RunOutput, AuditReport)> {
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let mut s = scenario.clone();
            s.seed = scenario.seed.wrapping_add(i);
            let out = run(&s);
            let rep = audit(&out);
            (s, out, rep)
        })
        .collect()
}

pub fn aggregate(name: &str, reports: &[&AuditReport]) -> BatteryReport {
    let per_run: Vec<BatteryRun> = reports
        .iter()
        .map(|r| BatteryRun {
            seed: r.seed,
            passed: r.passed,
            failed_checks: r.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect(),
            throughput_rps: r.metrics.throughput_rps,
            latency_median_ms: r.metrics.latency_median_ms,
            latency_p99_ms: r.metrics.latency_p99_ms,
            async_episodes: r.metrics.async_episodes,
            elected_async_episodes: r.metrics.elected_async_episodes,
        })
        .collect();
    let passed = per_run.iter().filter(|r| r.passed).count() as u64;
    let episodes: u64 = per_run.iter().map(|r| r.async_episodes).sum();
    let elected: u64 = per_run.iter().map(|r| r.elected_async_episodes).sum();
    let f = |get: fn(&BatteryRun) -> Option<f64>| Distribution::of(&per_run.iter().filter_map(get).collect::<Vec<_>>());
    BatteryReport {
        scenario: name.to_string(),
        runs: per_run.len() as u64,
        passed,
        pass_rate: if per_run.is_empty() { 0.0 } else { passed as f64 / per_run.len() as f64 },
        failed_seeds: per_run.iter().filter(|r| !r.passed).map(|r| r.seed).collect(),
        async_episodes: episodes,
        elected_async_episodes: elected,
        async_commit_fraction: (episodes > 0).then(|| elected as f64 / episodes as f64),
        throughput_rps: f(|r| Some(r.throughput_rps)),
        latency_median_ms: f(|r| r.latency_median_ms.map(|x| x as f64)),
        latency_p99_ms: f(|r| r.latency_p99_ms.map(|x| x as f64)),
        per_run,
    }
}

/// Per-seed report.json and timeseries.csv go to `out/seed-<seed>/`; the
/// trace is kept only for seeds that fail an audit check.
pub fn cmd_battery(scenario: &Scenario, seeds: u64, out: &Path, quiet: bool) -> anyhow::Result<i32> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let results = battery_reports(scenario, seeds);
    for (s, output, rep) in &results {
        write_run(&out.join(format!("seed-{}", s.seed)), output, rep, !rep.passed)?;
    }
    let reports: Vec<&AuditReport> = results.iter().map(|(_, _, r)| r).collect();
    let agg = aggregate(&scenario.name, &reports);
    fs::create_dir_all(out)?;
    fs::write(out.join("battery.json"), serde_json::to_string_pretty(&agg)? + "\n").context("writing battery.json")?;
    if !quiet {
        println!(
            "{} runs={} passed={} async_episodes={} async_commit_fraction={}",
            agg.scenario,
            agg.runs,
            agg.passed,
            agg.async_episodes,
            agg.async_commit_fraction.map_or("n/a".to_string(), |x| format!("{x:.3}")),
        );
    }
    Ok(if agg.passed == agg.runs { EXIT_OK } else { EXIT_AUDIT })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub fallback: FallbackMode,
    pub passed: bool,
    pub throughput_rps: f64,
    pub latency_median_ms: Option<u64>,
    pub latency_p99_ms: Option<u64>,
    pub committed_blocks: u64,
    pub stall: StallSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub enabled: ModeResult,
    pub disabled: ModeResult,
    /// Enabled throughput over disabled throughput.
    pub throughput_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub scenario: String,
    pub seeds: Vec<SeedComparison>,
    pub median_throughput_ratio: Option<f64>,
    pub enabled_strictly_greater_all: bool,
}

fn mode_result(output: &RunOutput, report: &AuditReport) -> ModeResult {
    let s = &output.scenario;
    ModeResult {
        fallback: s.fallback,
        passed: report.passed,
        throughput_rps: report.metrics.throughput_rps,
        latency_median_ms: report.metrics.latency_median_ms,
        latency_p99_ms: report.metrics.latency_p99_ms,
        committed_blocks: report.metrics.committed_blocks,
        stall: stall_summary(&output.trace, &output.records, s.timer_ms(), 0, s.duration_ms),
    }
}

/// Runs both fallback modes; every run is audited.
pub fn compare_runs(scenario: &Scenario, seeds: u64) -> Vec<[(RunOutput, AuditReport); 2]> {
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let mk = |mode| {
                let mut s = scenario.clone();
                s.seed = scenario.seed.wrapping_add(i);
                s.fallback = mode;
                let out = run(&s);
                let rep = audit(&out);
                (out, rep)
            };
            [mk(FallbackMode::Enabled), mk(FallbackMode::Disabled)]
        })
        .collect()
}

pub fn compare_report(name: &str, pairs: &[[(RunOutput, AuditReport); 2]]) -> CompareReport {
    let seeds: Vec<SeedComparison> = pairs
        .iter()
        .map(|[(eo, er), (d_o, dr)]| {
            let enabled = mode_result(eo, er);
            let disabled = mode_result(d_o, dr);
            let ratio = (disabled.throughput_rps > 0.0).then(|| enabled.throughput_rps / disabled.throughput_rps);
            SeedComparison { seed: eo.scenario.seed, enabled, disabled, throughput_ratio: ratio }
        })
        .collect();
    let mut ratios: Vec<u64> = seeds.iter().filter_map(|s| s.throughput_ratio).map(|r| (r * 1e9) as u64).collect();
    ratios.sort_unstable();
    CompareReport {
        scenario: name.to_string(),
        median_throughput_ratio: nearest_rank(&ratios, 50.0).map(|r| r as f64 / 1e9),
        enabled_strictly_greater_all: seeds.iter().all(|s| s.enabled.throughput_rps > s.disabled.throughput_rps),
        seeds,
    }
}

pub fn cmd_compare(scenario: &Scenario, seeds: u64, out: &Path, quiet: bool) -> anyhow::Result<i32> {
    let pairs = compare_runs(scenario, seeds);
    for [(eo, er), (d_o, dr)] in &pairs {
        let base = out.join(format!("seed-{}", eo.scenario.seed));
        write_run(&base.join("enabled"), eo, er, true)?;
        write_run(&base.join("disabled"), d_o, dr, true)?;
    }
    let report = compare_report(&scenario.name, &pairs);
    fs::create_dir_all(out)?;
    fs::write(out.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n").context("writing compare.json")?;
    if !quiet {
        for s in &report.seeds {
            println!(
                "{} seed={} enabled={:.1} req/s (longest stall {}ms) disabled={:.1} req/s (longest stall {}ms) ratio={}",
                report.scenario,
                s.seed,
                s.enabled.throughput_rps,
                s.enabled.stall.longest_gap_ms,
                s.disabled.throughput_rps,
                s.disabled.stall.longest_gap_ms,
                s.throughput_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}")),
            );
        }
    }
    let all_pass = pairs.iter().flatten().all(|(_, r)| r.passed);
    Ok(if all_pass { EXIT_OK } else { EXIT_AUDIT })
}
