//! The `precond-bench` command.
//!
//! Exit codes: `0` when every enabled audit and every deterministic bound
//! check passed, `1` for configuration or I/O errors, `2` for audit, bound,
//! or run failures.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Parser;
use rayon::prelude::*;

use precond_sgd::optimizer::{run, RunConfig, RunTrace};
use precond_sgd::verifier::{check_theorem_bound, fit_rate_slope, BoundVariant, TheoreticalBound};

use crate::config::{ConfigError, ConfigFile, Experiment};
use crate::report::{self, Format, ReportRow, SummaryRow};

pub const OUT_ENV: &str = "PRECOND_BENCH_OUT";
pub const DEFAULT_OUT: &str = "bench-out";

#[derive(Debug, Clone, Parser)]
#[command(name = "precond-bench", version, about = "Run seeded preconditioned-SGD experiments")]
pub struct Cli {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Replace every experiment's seed list.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seed_override: Option<Vec<u64>>,
    /// Disable runtime audits.
    #[arg(long)]
    pub no_audit: bool,
    /// Output directory (default: $PRECOND_BENCH_OUT, then ./bench-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Print experiment ids and exit.
    #[arg(long)]
    pub list_experiments: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        1
    }
}

/// Everything one invocation produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    /// Human-readable failure descriptions; nonempty means exit code 2.
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

struct Job<'a> {
    experiment: &'a Experiment,
    config: RunConfig,
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn label(exp: &Experiment, cfg: &RunConfig) -> String {
    format!("{}/{}", exp.id, cfg.algorithm)
}

/// Per-checkpoint bound margins, when the pathwise bound applies.
fn margins(exp: &Experiment, trace: &RunTrace) -> Option<Vec<f64>> {
    let bound = TheoreticalBound::for_problem(&exp.problem, trace.radius, trace.delta);
    check_theorem_bound(trace, &bound).ok()?;
    Some(
        exp.checkpoints
            .iter()
            .map(|&k| bound.evaluate(k, BoundVariant::Plain) - trace.records[k].suboptimality)
            .collect(),
    )
}

fn slope(points: Vec<(f64, f64)>) -> Option<f64> {
    fit_rate_slope(&points).ok().map(|f| f.slope)
}

pub fn list(cli: &Cli) -> Result<Vec<String>, CliError> {
    let file = ConfigFile::load(&cli.config)?;
    Ok(file
        .experiments
        .iter()
        .map(|e| format!("{}\t{:?}\t{:?}\t{}", e.id, e.family, e.space, e.algorithms.join(",")).to_lowercase())
        .collect())
}

/// Validates the whole config, runs every (experiment, algorithm, seed) in
/// parallel, then writes traces and reports sequentially.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let mut experiments = ConfigFile::load(&cli.config)?.resolve()?;
    for exp in &mut experiments {
        if let Some(seeds) = &cli.seed_override {
            exp.seeds = seeds.clone();
        }
        if cli.no_audit {
            exp.runs.iter_mut().for_each(|r| r.audit = false);
        }
    }

    let jobs: Vec<Job> = experiments
        .iter()
        .flat_map(|exp| {
            exp.runs.iter().flat_map(move |template| {
                exp.seeds.iter().map(move |&seed| Job {
                    experiment: exp,
                    config: RunConfig {
                        seed,
                        ..template.clone()
                    },
                })
            })
        })
        .collect();

    let results: Vec<_> = jobs
        .par_iter()
        .map(|job| run(&job.experiment.problem, &job.config))
        .collect();

    let out = out_dir(cli);
    let ext = cli.format.extension();
    let mut outcome = Outcome {
        out_dir: out.clone(),
        ..Outcome::default()
    };

    for (job, result) in jobs.iter().zip(results) {
        let exp = job.experiment;
        let name = label(exp, &job.config);
        let trace = match result {
            Ok(t) => t,
            Err(e) => {
                outcome.failures.push(format!("{name} seed {}: {e}", job.config.seed));
                continue;
            }
        };
        for f in &trace.audit_failures {
            outcome.failures.push(format!("{name} seed {}: {f}", job.config.seed));
        }
        let dir = out.join(exp.output.as_deref().unwrap_or(&exp.id));
        let path = dir.join(format!("{}-seed{}.{ext}", job.config.algorithm, job.config.seed));
        report::write_trace(&trace, &path, cli.format).map_err(io_err(&path))?;

        let subopts: Vec<f64> = exp.checkpoints.iter().map(|&k| trace.records[k].suboptimality).collect();
        let fit = slope(exp.checkpoints.iter().map(|&k| k as f64).zip(subopts.iter().copied()).collect());
        let margins = margins(exp, &trace);
        if let Some(m) = &margins {
            for (&k, &v) in exp.checkpoints.iter().zip(m) {
                if v < 0.0 {
                    outcome.failures.push(format!(
                        "{name} seed {}: theorem bound violated at K = {k}: margin {v:.6e}",
                        job.config.seed
                    ));
                }
            }
        }
        for (i, &k) in exp.checkpoints.iter().enumerate() {
            outcome.rows.push(ReportRow {
                experiment: name.clone(),
                seed: job.config.seed,
                k,
                suboptimality: subopts[i],
                slope: fit,
                bound_margin: margins.as_ref().map(|m| m[i]),
                audit_failures: trace.audit_failures.len(),
                wall_ms: millis(trace.wall_time),
            });
        }
    }

    outcome.summary = summarize(&experiments, &outcome.rows);
    if !outcome.rows.is_empty() {
        let path = out.join(format!("report.{ext}"));
        report::emit_report(&outcome.rows, &path, cli.format).map_err(io_err(&path))?;
        let path = out.join(format!("summary.{ext}"));
        report::emit_summary(&outcome.summary, &path, cli.format).map_err(io_err(&path))?;
    }
    Ok(outcome)
}

/// Mean suboptimality over seeds per checkpoint, and the slope of that mean.
fn summarize(experiments: &[Experiment], rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for exp in experiments {
        for cfg in &exp.runs {
            let name = label(exp, cfg);
            let means: Vec<(usize, f64)> = exp
                .checkpoints
                .iter()
                .filter_map(|&k| {
                    let vals: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.experiment == name && r.k == k)
                        .map(|r| r.suboptimality)
                        .collect();
                    (!vals.is_empty()).then(|| (k, vals.iter().sum::<f64>() / vals.len() as f64))
                })
                .collect();
            let fit = slope(means.iter().map(|&(k, m)| (k as f64, m)).collect());
            out.extend(means.into_iter().map(|(k, m)| SummaryRow {
                experiment: name.clone(),
                k,
                mean_suboptimality: m,
                slope: fit,
            }));
        }
    }
    out
}

/// Runs the command and returns the process exit code.
pub fn main_with(cli: &Cli) -> i32 {
    if cli.list_experiments {
        return match list(cli) {
            Ok(lines) => {
                lines.iter().for_each(|l| println!("{l}"));
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        };
    }
    match execute(cli) {
        Ok(outcome) => {
            for s in outcome.summary.iter().filter(|s| {
                outcome
                    .summary
                    .iter()
                    .filter(|o| o.experiment == s.experiment)
                    .all(|o| o.k <= s.k)
            }) {
                let slope = s.slope.map_or("-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{}: K = {}, mean suboptimality {:.6e}, slope {slope}",
                    s.experiment, s.k, s.mean_suboptimality
                );
            }
            for f in &outcome.failures {
                eprintln!("FAIL {f}");
            }
            println!("wrote {}", outcome.out_dir.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
