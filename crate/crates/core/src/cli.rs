//! `ghostimg` command-line front end.
//!
//! Standard output carries only `key=value` lines; data goes to files.
//! Exit codes are stable: see [`exit`].

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, ScenarioKind, SCHEMA_VERSION};
use crate::correlation::{closed_form_dii, estimate_correlation, grouped_dii};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::RealizationRng;
use crate::scenarios::{self, LenslessConfig};
use crate::source::{moment_theorem_checks, IndexQuad, SourceSpec};

pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SAMPLING: i32 = 3;
}

pub const TOOL_NAME: &str = "ghostimg";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = TOOL_NAME, about = "Incoherent-light correlation imaging simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the scenario named in a config file and write a report directory.
    Run {
        config: PathBuf,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "ghostimg-out")]
        out: PathBuf,
        /// Exit with code 3 if any propagation leg violates the sampling criterion.
        #[arg(long)]
        strict_sampling: bool,
    },
    /// Run reduced-size self-checks against a config.
    Verify {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the tool and schema versions.
    Version,
}

/// One emitted data file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub scenario: ScenarioKind,
    pub config: RunConfig,
    pub scenario_hash: String,
    pub master_seed: u64,
    pub worker_count: usize,
    pub duration_seconds: f64,
    pub outputs: Vec<OutputEntry>,
    /// SHA-256 over the `path sha256` lines of `outputs`.
    pub content_hash: String,
    pub warnings: Vec<String>,
    pub sampling_violations: Vec<String>,
}

fn kv(out: &mut dyn Write, key: &str, value: impl std::fmt::Display) {
    let v = value.to_string().replace(['\n', '\r'], " ");
    let _ = writeln!(out, "{key}={v}");
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = write!(err, "{e}");
            if code != exit::OK {
                kv(out, "status", "usage-error");
            } else {
                let _ = write!(out, "{}", e.render().to_string().lines().map(|l| format!("help={l}\n")).collect::<String>());
            }
            return code;
        }
    };
    match cli.command {
        Command::Version => {
            kv(out, "tool", TOOL_NAME);
            kv(out, "version", VERSION);
            kv(out, "schema_version", SCHEMA_VERSION);
            exit::OK
        }
        Command::Run {
            config,
            workers,
            out: dir,
            strict_sampling,
        } => cmd_run(&config, workers.unwrap_or_else(default_workers), &dir, strict_sampling, out, err),
        Command::Verify { config, workers } => cmd_verify(&config, workers.unwrap_or_else(default_workers), out, err),
    }
}

fn load(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> std::result::Result<(RunConfig, LenslessConfig), i32> {
    match RunConfig::from_path(path) {
        Ok(cfg) => {
            let l = cfg.to_lensless().expect("validated config builds");
            Ok((cfg, l))
        }
        Err(e) => {
            kv(out, "status", "config-error");
            if let Some(f) = &e.field {
                kv(out, "error_field", f);
            }
            if let Some(l) = e.line {
                kv(out, "error_line", l);
            }
            kv(out, "error", &e);
            let _ = writeln!(err, "{}: config error: {e}", path.display());
            Err(exit::CONFIG)
        }
    }
}

fn cmd_run(path: &Path, workers: usize, dir: &Path, strict: bool, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (cfg, lensless) = match load(path, out, err) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let internal = |out: &mut dyn Write, err: &mut dyn Write, e: Error| {
        kv(out, "status", "error");
        kv(out, "error", &e);
        let _ = writeln!(err, "{TOOL_NAME}: {e}");
        exit::INTERNAL
    };
    let violations = match lensless.sampling_violations() {
        Ok(v) => v,
        Err(e) => return internal(out, err, e),
    };
    for v in &violations {
        kv(out, "sampling_violation", v);
    }
    if strict && !violations.is_empty() {
        kv(out, "status", "sampling-violation");
        let _ = writeln!(err, "{TOOL_NAME}: {} sampling violation(s) under --strict-sampling", violations.len());
        return exit::SAMPLING;
    }
    match execute_run(&cfg, &lensless, workers, dir) {
        Ok(m) => {
            kv(out, "status", "ok");
            kv(out, "scenario", m.scenario.as_str());
            kv(out, "seed", m.master_seed);
            kv(out, "worker_count", m.worker_count);
            kv(out, "out_dir", dir.display());
            kv(out, "manifest", dir.join(MANIFEST_NAME).display());
            kv(out, "files", m.outputs.len());
            kv(out, "content_hash", &m.content_hash);
            kv(out, "duration_s", format!("{:.3}", m.duration_seconds));
            for w in &m.warnings {
                kv(out, "warning", w);
            }
            if let Ok(text) = std::fs::read_to_string(dir.join("report.json")) {
                if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                    if let Some(obj) = v.get("metrics").and_then(|m| m.as_object()) {
                        for (k, v) in obj {
                            kv(out, &format!("metric.{k}"), v);
                        }
                    }
                }
            }
            exit::OK
        }
        Err(e) => internal(out, err, e),
    }
}

/// Runs the scenario inside a pool of `workers` threads, writes every output
/// and the run manifest, and returns the manifest.
pub fn execute_run(cfg: &RunConfig, lensless: &LenslessConfig, workers: usize, dir: &Path) -> Result<RunManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let start = Instant::now();
    let files = pool(workers)?.install(|| write_scenario(cfg, lensless, dir))?;
    let duration_seconds = start.elapsed().as_secs_f64();

    let mut outputs = Vec::new();
    for f in &files {
        let rel = f.strip_prefix(dir).unwrap_or(f).to_string_lossy().into_owned();
        let bytes = std::fs::metadata(f).map_err(|e| Error::io(f, e))?.len();
        outputs.push(OutputEntry {
            path: rel,
            sha256: io::sha256_file(f)?,
            bytes,
        });
    }
    let mut h = Sha256::new();
    for o in &outputs {
        h.update(format!("{} {}\n", o.path, o.sha256).as_bytes());
    }
    let manifest = RunManifest {
        tool: TOOL_NAME.into(),
        version: VERSION.into(),
        scenario: cfg.scenario,
        config: cfg.clone(),
        scenario_hash: cfg.scenario_hash(),
        master_seed: cfg.seed,
        worker_count: workers,
        duration_seconds,
        outputs,
        content_hash: format!("{:x}", h.finalize()),
        warnings: lensless.warnings(),
        sampling_violations: lensless.sampling_violations()?.iter().map(|v| v.to_string()).collect(),
    };
    io::write_json_file(&dir.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

fn write_scenario(cfg: &RunConfig, l: &LenslessConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let echo = serde_json::to_value(cfg)?;
    let hash = cfg.scenario_hash();
    let report = |metrics: serde_json::Value, warnings: &[String], sampling: &[crate::propagation::SamplingViolation]| {
        serde_json::json!({
            "scenario": cfg.scenario,
            "metrics": metrics,
            "warnings": warnings,
            "sampling_violations": sampling,
            "config": echo,
        })
    };
    let report_path = dir.join("report.json");
    match cfg.scenario {
        ScenarioKind::LenslessFourier => {
            let r = scenarios::run_lensless(l)?;
            io::write_imaging_report(dir, &r, &echo)
        }
        ScenarioKind::RawCorrelation => {
            let r = scenarios::run_raw_correlation(l)?;
            let mut files = io::write_correlation(dir, "", &r.result, cfg.seed, &hash)?;
            files.extend(io::write_matrix(dir, "closed_form_dii", &r.closed_form, &r.result.grid_r, &r.result.grid_t)?);
            io::write_json_file(&report_path, &report(serde_json::to_value(&r.metrics)?, &r.warnings, &r.sampling))?;
            files.push(report_path);
            Ok(files)
        }
        ScenarioKind::CoherentControl => {
            let r = scenarios::run_coherent_control(l)?;
            let mut files = io::write_correlation(dir, "", &r.result, cfg.seed, &hash)?;
            files.extend(io::write_real_field(dir, "normalized_slice", &r.normalized_slice)?);
            let txt = dir.join("normalized_slice.txt");
            io::write_two_column(&txt, &r.normalized_slice)?;
            files.push(txt);
            io::write_json_file(&report_path, &report(serde_json::to_value(r.metrics)?, &r.warnings, &r.sampling))?;
            files.push(report_path);
            Ok(files)
        }
        ScenarioKind::DetectorIntegration => {
            let k = cfg.shots_per_gate.expect("validated");
            let r = scenarios::run_detector_integration(l, k)?;
            let mut files = io::write_correlation(dir, "integrated_", &r.integrated, cfg.seed, &hash)?;
            files.extend(io::write_correlation(dir, "single_shot_", &r.single_shot, cfg.seed, &hash)?);
            io::write_json_file(&report_path, &report(serde_json::to_value(r.metrics)?, &r.warnings, &r.sampling))?;
            files.push(report_path);
            Ok(files)
        }
    }
}

/// Outcome of one `verify` check.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((ok, detail)) => Check {
            name,
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        },
        Err(e) => Check {
            name,
            status: CheckStatus::Fail,
            detail: format!("error: {e}"),
        },
    }
}

/// Realizations used by the reduced Monte Carlo checks.
pub const VERIFY_REALIZATIONS: u64 = 2000;

fn scenario_source(cfg: &RunConfig, l: &LenslessConfig) -> Result<SourceSpec> {
    match cfg.scenario {
        ScenarioKind::CoherentControl => SourceSpec::coherent_matching(l.source.profile().clone()),
        _ => Ok(l.source.clone()),
    }
}

/// The reduced-size self-checks behind `verify`.
pub fn verify_checks(cfg: &RunConfig, l: &LenslessConfig) -> Vec<Check> {
    let mut checks = Vec::new();
    checks.push(check("sampling", || {
        let v = l.sampling_violations()?;
        Ok(match v.first() {
            None => (true, "all legs satisfy the sampling criterion".into()),
            Some(first) => (false, format!("{} violation(s); first: {first}", v.len())),
        })
    }));
    checks.push(check("moment_theorem", || {
        let source = scenario_source(cfg, l)?;
        let bright: Vec<usize> = {
            let p = source.profile();
            let half = 0.5 * p.max();
            (0..p.samples().len()).filter(|&i| p.samples()[i] >= half).collect()
        };
        let mut rng = RealizationRng::new(cfg.seed, u64::MAX);
        let mut pick = || bright[(rng.next_u64() % bright.len() as u64) as usize];
        let quads: Vec<IndexQuad> = (0..8)
            .map(|q| {
                let a = pick();
                let b = pick();
                // include the pairings where the second term is non-zero
                if q % 2 == 0 {
                    IndexQuad::new(a, a, b, b)
                } else {
                    IndexQuad::new(a, b, b, a)
                }
            })
            .collect();
        let checks = moment_theorem_checks(&source, 4000, cfg.seed, &quads)?;
        let worst = checks.iter().map(|c| c.z_score().abs()).fold(0.0, f64::max);
        Ok((checks.iter().all(|c| c.within(4.0)), format!("{} quads, max |z| = {worst:.2}", quads.len())))
    }));
    checks.push(check("kernel_composition", || {
        let dr = l.geometry.dr;
        let a = crate::propagation::composition_check(l.geometry.wavelength, 0.5 * dr, 0.5 * dr)?;
        let b = crate::propagation::composition_check(l.geometry.wavelength, 1.5 * dr, -0.5 * dr)?;
        let worst = a.rel_l2.max(b.rel_l2);
        Ok((worst <= 1e-3, format!("max relative L2 {worst:.2e}")))
    }));
    checks.push(check("mc_vs_closed_form", || {
        let source = scenario_source(cfg, l)?;
        let (arm_r, arm_t) = l.point_detector_arms()?;
        let m = cfg.realizations.min(VERIFY_REALIZATIONS);
        let mc = estimate_correlation(&source, &arm_r, &arm_t, m, cfg.seed)?;
        let groups = 10;
        if m < 2 * groups {
            return Ok((false, format!("{m} realizations are too few for a {groups}-block error estimate")));
        }
        let est = grouped_dii(&source, &arm_r, &arm_t, groups, m / groups, 1, cfg.seed)?;
        let cf = closed_form_dii(&source.g11_matrix(), &arm_r, &arm_t)?;
        let dist = mc.dii.iter().zip(&cf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let noise = est.stderr.iter().map(|s| s * s).sum::<f64>().sqrt();
        let ratio = dist / noise;
        Ok((ratio <= 3.0, format!("M = {m}, distance / noise = {ratio:.2}")))
    }));
    checks.push(match cfg.scenario {
        ScenarioKind::LenslessFourier => check("matched_pearson", || {
            let matched = l.with_geometry(l.geometry.matched());
            let (cf, dft) = scenarios::lensless_closed_form(&matched)?;
            let x_t = matched.test_position()?;
            let r = scenarios::region(&matched.grid_ref, x_t, matched.analysis_half_width);
            let p = scenarios::pearson(&cf.samples()[r.clone()], &dft.samples()[r]);
            Ok((p >= 0.98, format!("closed form vs DFT Pearson {p:.4}")))
        }),
        _ => Check {
            name: "matched_pearson",
            status: CheckStatus::Skip,
            detail: "only for lensless-fourier".into(),
        },
    });
    checks
}

fn cmd_verify(path: &Path, workers: usize, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let (cfg, l) = match load(path, out, err) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let checks = match pool(workers) {
        Ok(p) => p.install(|| verify_checks(&cfg, &l)),
        Err(e) => {
            kv(out, "status", "error");
            kv(out, "error", e);
            return exit::INTERNAL;
        }
    };
    let mut failed = Vec::new();
    for c in &checks {
        let status = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => {
                failed.push(c.name);
                "fail"
            }
            CheckStatus::Skip => "skip",
        };
        kv(out, &format!("check.{}", c.name), status);
        kv(out, &format!("check.{}.detail", c.name), &c.detail);
    }
    if failed.is_empty() {
        kv(out, "status", "ok");
        exit::OK
    } else {
        for f in &failed {
            kv(out, "failed_check", f);
            let _ = writeln!(err, "{TOOL_NAME}: check {f} failed");
        }
        kv(out, "status", "fail");
        exit::INTERNAL
    }
}
