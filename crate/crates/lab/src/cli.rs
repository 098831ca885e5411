//! Argument parsing and command dispatch; `main` only maps the exit code.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use una_core::ScoreBounds;

use crate::config::{RunConfig, DEFAULTS};
use crate::error::{LabError, LabResult, EXIT_OK, EXIT_PROPERTY};
use crate::{dataset, report, run, verify};

#[derive(Debug, Parser)]
#[command(name = "una-lab", version, about = "Train and verify implicit-reward alignment objectives on enumerable toy policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy (or a reward model) and write a run directory.
    Train {
        /// Flat key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL feedback dataset, or a reward-table JSON for online losses.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory to create.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default config and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Run a property suite and print a pass/fail table.
    Verify {
        /// proofs | gradients | equivalence | oracle | all
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Directory for replay files of failed cases.
        #[arg(long, default_value = "verify-replays")]
        out: PathBuf,
        /// Multiplies every tolerance (1 = the stated tolerances).
        #[arg(long, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
    /// Summarize run directories; with several, also write a comparison CSV keyed by β.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Comparison CSV path (default: comparison.csv next to the first run).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a JSONL dataset and print its summary.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        /// Config supplying score_min / score_max.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the canonical re-serialization here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn required(v: Option<PathBuf>, flag: &str) -> LabResult<PathBuf> {
    v.ok_or_else(|| LabError::Invalid(format!("missing --{flag}")))
}

fn load_config(path: Option<&PathBuf>) -> LabResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::parse(""),
    }
}

/// Runs a parsed command, writing human output to `stdout`.
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> LabResult<i32> {
    let w = |out: &mut dyn Write, s: String| -> LabResult<()> { out.write_all(s.as_bytes()).map_err(|e| LabError::io("<stdout>", e)) };
    match cli.command {
        Command::Train { config, data, out, seed, print_defaults } => {
            if print_defaults {
                w(stdout, DEFAULTS.to_string())?;
                return Ok(EXIT_OK);
            }
            let mut cfg = RunConfig::load(&required(config, "config")?)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (data, out) = (required(data, "data")?, required(out, "out")?);
            let outcome = run::cmd_train(&cfg, &data, &out)?;
            let last = outcome.report.last();
            w(stdout, format!("{}: {} eval rows, final step {} loss {} kl {}\n", out.display(), outcome.report.records.len(), last.step, last.loss, last.kl))?;
            Ok(EXIT_OK)
        }
        Command::Verify { suite, seed, out, tolerance_scale } => {
            let s = verify::Suite::parse(&suite).ok_or_else(|| LabError::Invalid(format!("unknown suite `{suite}`")))?;
            let outcomes = verify::run_suite(s, seed, tolerance_scale, verify::thread_count())?;
            w(stdout, verify::format_table(&outcomes))?;
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).collect();
            for o in &failed {
                let path = verify::write_replay(&out, seed, o)?;
                eprintln!("FAIL {}/{}: replay {}", o.suite, o.case, path.display());
            }
            w(stdout, format!("{} passed, {} failed\n", outcomes.len() - failed.len(), failed.len()))?;
            Ok(if failed.is_empty() { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::Report { runs, out } => {
            if runs.len() == 1 {
                let s = report::cmd_report(&runs[0])?;
                w(stdout, serde_json::to_string_pretty(&s).expect("summary serializes") + "\n")?;
            } else {
                let out = out.unwrap_or_else(|| runs[0].parent().map(|p| p.join(report::COMPARISON)).unwrap_or_else(|| report::COMPARISON.into()));
                report::cmd_compare(&runs, &out)?;
                w(stdout, format!("wrote {}\n", out.display()))?;
            }
            Ok(EXIT_OK)
        }
        Command::Ingest { data, config, out } => {
            let bounds: ScoreBounds = load_config(config.as_ref())?.train.score_bounds;
            let d = dataset::ingest(&data, bounds)?;
            if let Some(out) = out {
                dataset::write_jsonl(&out, &d.records)?;
            }
            let summary = serde_json::json!({
                "records": d.records.len(),
                "pairwise": d.kind_summary.pairwise,
                "binary": d.kind_summary.binary,
                "scalar": d.kind_summary.scalar,
                "num_prompts": d.num_prompts(),
                "max_token": d.max_token(),
                "max_len": d.max_len(),
                "content_hash": d.hash_hex(),
            });
            w(stdout, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args`, runs, and reports errors as one line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { crate::error::EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, &mut std::io::stdout().lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
