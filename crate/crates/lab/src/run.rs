//! `train`: builds policies from the config, runs the trainer and writes
//! the run directory (manifest, metrics, checkpoint).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use una_core::trainer::{self, EvalObserver};
use una_core::{BtRewardModel, Error, EvalRecord, ExplicitRewardModel, FeedbackRecord, LossKind, Policy, PolicyKind, Prompt, RewardTable, TrainReport, Vocab};

use crate::checkpoint;
use crate::config::{InitChoice, ReferenceChoice, RunConfig};
use crate::dataset::{self, Dataset};
use crate::error::{LabError, LabResult};
use crate::tables::{self, BtModelJson};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const AUX: &str = "aux.csv";
pub const CHECKPOINT: &str = "policy.unap";
pub const REWARD_MODEL: &str = "reward_model.json";

pub const METRICS_HEADER: &str = "step,loss,kl,mean_r_theta_w,mean_r_theta_l,mean_s_theta_w,mean_s_theta_l,mean_explicit_reward,ms";
pub const AUX_HEADER: &str = "step,accuracy,grad_variance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `running`, `complete` or `failed`.
    pub status: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub loss_kind: String,
    pub beta: f64,
    pub data_path: String,
    /// Hex content hash of the input data.
    pub dataset_hash: String,
    pub started_unix_ms: u64,
    pub finished_unix_ms: Option<u64>,
    /// Artifact name → file name inside the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> LabResult<Self> {
        let path = dir.join(MANIFEST);
        if !path.is_file() {
            return Err(LabError::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> LabResult<()> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| LabError::io(&path, e))
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Shortest round-trip formatting; undefined values are empty cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn metrics_row(r: &EvalRecord) -> String {
    let cells = [r.loss, r.kl, r.mean_r_theta_w, r.mean_r_theta_l, r.mean_s_theta_w, r.mean_s_theta_l, r.mean_explicit_reward];
    let mut row = r.step.to_string();
    for c in cells {
        row.push(',');
        row.push_str(&fmt_f64(c));
    }
    row.push(',');
    row.push_str(&r.ms.to_string());
    row
}

/// Streams eval rows to the metrics and auxiliary CSVs as they are produced.
struct CsvObserver {
    metrics: BufWriter<File>,
    aux: BufWriter<File>,
    start: Instant,
    wall_clock: bool,
    error: Option<LabError>,
    paths: (PathBuf, PathBuf),
}

impl CsvObserver {
    fn create(dir: &Path, wall_clock: bool) -> LabResult<Self> {
        let open = |name: &str, header: &str| -> LabResult<BufWriter<File>> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| LabError::io(&path, e))?);
            writeln!(w, "{header}").map_err(|e| LabError::io(&path, e))?;
            Ok(w)
        };
        Ok(Self {
            metrics: open(METRICS, METRICS_HEADER)?,
            aux: open(AUX, AUX_HEADER)?,
            start: Instant::now(),
            wall_clock,
            error: None,
            paths: (dir.join(METRICS), dir.join(AUX)),
        })
    }

    fn write(&mut self, r: &EvalRecord) -> std::io::Result<()> {
        writeln!(self.metrics, "{}", metrics_row(r))?;
        self.metrics.flush()?;
        writeln!(self.aux, "{},{},{}", r.step, fmt_f64(r.accuracy), fmt_f64(r.grad_variance))?;
        self.aux.flush()
    }

    fn finish(self) -> LabResult<()> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

impl EvalObserver for CsvObserver {
    fn on_eval(&mut self, r: &mut EvalRecord) {
        if self.wall_clock {
            r.ms = self.start.elapsed().as_millis() as u64;
        }
        if self.error.is_none() {
            if let Err(e) = self.write(r) {
                self.error = Some(LabError::io(&self.paths.0, e));
            }
        }
    }
}

/// Training inputs resolved from the config and the data file.
pub enum Inputs {
    Offline(Dataset),
    Online { table: RewardTable, num_prompts: usize, vocab: Vocab, hash: u64 },
}

impl Inputs {
    pub fn load(cfg: &RunConfig, data: &Path) -> LabResult<Self> {
        if cfg.train.loss_kind.is_online() {
            let (table, table_prompts) = tables::load_reward_table(data)?;
            let max_token = table.entries().flat_map(|(_, t, _)| t.iter().copied()).max().unwrap_or(0) as usize;
            let max_len = table.entries().map(|(_, t, _)| t.len().saturating_sub(1)).max().unwrap_or(1);
            let vocab = Vocab::new(cfg.vocab_size.unwrap_or((max_token + 1).max(2)), cfg.max_len.unwrap_or(max_len.max(1)))?;
            let bytes = std::fs::read(data).map_err(|e| LabError::io(data, e))?;
            Ok(Inputs::Online { table, num_prompts: cfg.num_prompts.unwrap_or(table_prompts), vocab, hash: dataset::bytes_hash(&bytes) })
        } else {
            Ok(Inputs::Offline(dataset::ingest(data, cfg.train.score_bounds)?))
        }
    }

    fn hash(&self) -> u64 {
        match self {
            Inputs::Offline(d) => d.content_hash,
            Inputs::Online { hash, .. } => *hash,
        }
    }

    fn dims(&self, cfg: &RunConfig) -> LabResult<(Vocab, usize)> {
        match self {
            Inputs::Offline(d) => {
                let vocab = Vocab::new(cfg.vocab_size.unwrap_or((d.max_token() as usize + 1).max(2)), cfg.max_len.unwrap_or(d.max_len().max(1)))?;
                Ok((vocab, cfg.num_prompts.unwrap_or(d.num_prompts())))
            }
            Inputs::Online { vocab, num_prompts, .. } => Ok((*vocab, *num_prompts)),
        }
    }
}

fn build_policy(cfg: &RunConfig, vocab: Vocab, num_prompts: usize, random: Option<(f64, u64)>) -> LabResult<Policy> {
    Ok(match (cfg.policy, random) {
        (PolicyKind::Tabular, None) => Policy::tabular_uniform(vocab, num_prompts)?,
        (PolicyKind::Tabular, Some((scale, seed))) => Policy::tabular_random(vocab, num_prompts, scale, seed)?,
        (PolicyKind::Parametric, None) => Policy::parametric_zeros(vocab, num_prompts, cfg.hidden, cfg.bias)?,
        (PolicyKind::Parametric, Some((scale, seed))) => Policy::parametric_random(vocab, num_prompts, cfg.hidden, cfg.bias, scale, seed)?,
    })
}

/// Frozen reference and trainable starting policy.
pub fn build_policies(cfg: &RunConfig, vocab: Vocab, num_prompts: usize) -> LabResult<(Policy, Policy)> {
    let reference = match &cfg.reference {
        ReferenceChoice::Zeros => build_policy(cfg, vocab, num_prompts, None)?,
        ReferenceChoice::Random { scale, seed } => build_policy(cfg, vocab, num_prompts, Some((*scale, *seed)))?,
        ReferenceChoice::Checkpoint(path) => {
            let p = checkpoint::load(path)?;
            if p.vocab() != vocab || p.num_prompts() != num_prompts {
                return Err(LabError::Invalid(format!(
                    "reference checkpoint {} covers {} prompts over vocab ({}, {}), data needs {} prompts over ({}, {})",
                    path.display(),
                    p.num_prompts(),
                    p.vocab().size(),
                    p.vocab().max_len(),
                    num_prompts,
                    vocab.size(),
                    vocab.max_len()
                )));
            }
            p
        }
    }
    .frozen_copy();
    let start = match cfg.init {
        InitChoice::Reference => reference.trainable_copy(),
        InitChoice::Random { scale, seed } => {
            let arch_of_ref = reference.kind();
            if arch_of_ref != cfg.policy {
                return Err(LabError::Invalid("init = random needs the reference to use the configured policy kind".into()));
            }
            reference.with_params(build_policy(cfg, vocab, num_prompts, Some((scale, seed)))?.params().to_vec())?.trainable_copy()
        }
    };
    Ok((reference, start))
}

fn check_kind(kind: LossKind, records: &[FeedbackRecord]) -> LabResult<()> {
    match kind.feedback_kind() {
        Some(k) if records.iter().all(|r| r.kind() == k) => Ok(()),
        _ => Err(Error::KindMismatch.into()),
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: TrainReport,
    pub policy: Option<Policy>,
    pub reward_model: Option<BtRewardModel>,
}

/// Runs one training job and writes its artifacts into `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> LabResult<RunOutcome> {
    let inputs = Inputs::load(cfg, data)?;
    if let Inputs::Offline(d) = &inputs {
        check_kind(cfg.train.loss_kind, &d.records)?;
    }
    let (vocab, num_prompts) = inputs.dims(cfg)?;
    let (reference, start) = build_policies(cfg, vocab, num_prompts)?;
    if let Inputs::Online { table, .. } = &inputs {
        table.covers(num_prompts, &vocab.space())?;
    }
    cfg.train.validate()?;

    std::fs::create_dir_all(out).map_err(|e| LabError::io(out, e))?;
    let mut manifest = RunManifest {
        status: "running".into(),
        config: cfg.echo(),
        seed: cfg.train.seed,
        loss_kind: cfg.train.loss_kind.name().into(),
        beta: cfg.train.beta.value(),
        data_path: data.display().to_string(),
        dataset_hash: format!("{:016x}", inputs.hash()),
        started_unix_ms: unix_ms(),
        finished_unix_ms: None,
        artifacts: BTreeMap::new(),
        error: None,
    };
    manifest.write(out)?;

    let result = run(cfg, &inputs, &reference, &start, num_prompts, vocab, out);
    manifest.finished_unix_ms = Some(unix_ms());
    match result {
        Ok((report, policy, reward_model, artifacts)) => {
            manifest.status = "complete".into();
            manifest.artifacts = artifacts;
            manifest.write(out)?;
            Ok(RunOutcome { manifest, report, policy, reward_model })
        }
        Err(e) => {
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.write(out)?;
            Err(e)
        }
    }
}

type RunParts = (TrainReport, Option<Policy>, Option<BtRewardModel>, BTreeMap<String, String>);

fn run(cfg: &RunConfig, inputs: &Inputs, reference: &Policy, start: &Policy, num_prompts: usize, vocab: Vocab, out: &Path) -> LabResult<RunParts> {
    let mut obs = CsvObserver::create(out, cfg.wall_clock)?;
    let t = &cfg.train;
    let prompts: Vec<Prompt> = (0..num_prompts).map(Prompt::new).collect();
    let mut artifacts = BTreeMap::new();
    artifacts.insert("manifest".to_string(), MANIFEST.to_string());
    artifacts.insert("metrics".to_string(), METRICS.to_string());
    artifacts.insert("aux".to_string(), AUX.to_string());
    let (report, policy, rm) = match (inputs, t.loss_kind) {
        (Inputs::Offline(d), LossKind::RmBt) => {
            let rm0 = ExplicitRewardModel::TrainableBt(BtRewardModel::zeros(num_prompts, vocab.size()));
            let (rm, report) = trainer::train_reward_model(&rm0, t, &d.records, &mut obs)?;
            let ExplicitRewardModel::TrainableBt(m) = rm else { unreachable!("trainable model stays trainable") };
            (report, None, Some(m))
        }
        (Inputs::Offline(d), _) => {
            let report = trainer::train_offline(start, reference, t, &d.records, &mut obs)?;
            let p = report.final_policy.clone();
            (report, p, None)
        }
        (Inputs::Online { table, .. }, kind) => {
            let rm = ExplicitRewardModel::Table(table.clone());
            let report = if kind == LossKind::PgBaseline {
                trainer::train_policy_gradient_baseline(start, reference, t, &prompts, &rm, &mut obs)?
            } else {
                trainer::train_online_una(start, reference, t, &prompts, &rm, &mut obs)?
            };
            let p = report.final_policy.clone();
            (report, p, None)
        }
    };
    obs.finish()?;
    if let Some(p) = &policy {
        let mirror = checkpoint::save(&out.join(CHECKPOINT), p)?;
        artifacts.insert("checkpoint".to_string(), CHECKPOINT.to_string());
        artifacts.insert("checkpoint_mirror".to_string(), mirror.file_name().expect("file name").to_string_lossy().into_owned());
    }
    if let Some(m) = &rm {
        let path = out.join(REWARD_MODEL);
        let text = serde_json::to_string_pretty(&BtModelJson::from_model(m)).expect("model serializes");
        std::fs::write(&path, text + "\n").map_err(|e| LabError::io(&path, e))?;
        artifacts.insert("reward_model".to_string(), REWARD_MODEL.to_string());
    }
    Ok((report, policy, rm, artifacts))
}
