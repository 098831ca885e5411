//! `report`: run summaries, plot-ready long-format CSVs and β-keyed
//! comparison tables across runs.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::run::{fmt_f64, RunManifest, METRICS, METRICS_HEADER};

pub const SUMMARY: &str = "summary.json";
pub const LONG: &str = "long.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const COMPARISON_HEADER: &str = "beta,run,loss_kind,seed,final_step,final_loss,final_kl,final_mean_explicit_reward,margin_start,margin_end";

/// Metrics table read back from `metrics.csv`; empty cells are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Metrics {
    pub fn read(path: &Path) -> LabResult<Self> {
        if !path.is_file() {
            return Err(LabError::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| LabError::EmptyFile(path.to_path_buf()))?;
        if header != METRICS_HEADER {
            return Err(LabError::Parse { line: 1, message: format!("unexpected metrics header `{header}`") });
        }
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>() })
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| LabError::Parse { line: i + 2, message: e.to_string() })?;
            if row.len() != columns.len() {
                return Err(LabError::Parse { line: i + 2, message: format!("expected {} cells, found {}", columns.len(), row.len()) });
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(LabError::Invalid(format!("{}: no eval rows", path.display())));
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Vec<f64> {
        let i = self.columns.iter().position(|c| c == name).expect("known column");
        self.rows.iter().map(|r| r[i]).collect()
    }
}

fn nan_to_none(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub manifest: RunManifest,
    pub eval_rows: usize,
    pub final_step: usize,
    pub final_loss: Option<f64>,
    pub final_kl: Option<f64>,
    pub final_mean_explicit_reward: Option<f64>,
    /// `mean_r_theta_w − mean_r_theta_l` at the first and last eval.
    pub margin_start: Option<f64>,
    pub margin_end: Option<f64>,
}

pub fn summarize(run_dir: &Path) -> LabResult<Summary> {
    let manifest = RunManifest::read(run_dir)?;
    let m = Metrics::read(&run_dir.join(METRICS))?;
    let last = |c: &str| nan_to_none(*m.column(c).last().expect("non-empty"));
    let (w, l) = (m.column("mean_r_theta_w"), m.column("mean_r_theta_l"));
    let n = m.rows.len();
    Ok(Summary {
        manifest,
        eval_rows: n,
        final_step: *m.column("step").last().expect("non-empty") as usize,
        final_loss: last("loss"),
        final_kl: last("kl"),
        final_mean_explicit_reward: last("mean_explicit_reward"),
        margin_start: nan_to_none(w[0] - l[0]),
        margin_end: nan_to_none(w[n - 1] - l[n - 1]),
    })
}

/// `step,metric,value` rows, one per defined metric cell.
pub fn long_format(m: &Metrics) -> String {
    let mut out = String::from("step,metric,value\n");
    for row in &m.rows {
        for (c, v) in m.columns.iter().zip(row).skip(1) {
            if !v.is_nan() {
                out.push_str(&format!("{},{c},{}\n", row[0] as usize, fmt_f64(*v)));
            }
        }
    }
    out
}

/// Writes `summary.json` and `long.csv` into the run directory.
pub fn cmd_report(run_dir: &Path) -> LabResult<Summary> {
    if !run_dir.is_dir() {
        return Err(LabError::MissingArtifact(run_dir.to_path_buf()));
    }
    let summary = summarize(run_dir)?;
    let m = Metrics::read(&run_dir.join(METRICS))?;
    let write = |name: &str, text: String| -> LabResult<()> {
        let path = run_dir.join(name);
        std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))
    };
    write(SUMMARY, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    write(LONG, long_format(&m))?;
    Ok(summary)
}

/// One row per run, ordered by β (ties by run path).
pub fn comparison_csv(runs: &[(PathBuf, Summary)]) -> String {
    let mut sorted: Vec<&(PathBuf, Summary)> = runs.iter().collect();
    sorted.sort_by(|a, b| a.1.manifest.beta.total_cmp(&b.1.manifest.beta).then_with(|| a.0.cmp(&b.0)));
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = format!("{COMPARISON_HEADER}\n");
    for (dir, s) in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(s.manifest.beta),
            dir.display(),
            s.manifest.loss_kind,
            s.manifest.seed,
            s.final_step,
            opt(s.final_loss),
            opt(s.final_kl),
            opt(s.final_mean_explicit_reward),
            opt(s.margin_start),
            opt(s.margin_end)
        ));
    }
    out
}

/// Reports every run and writes a comparison CSV keyed by β to `out`.
pub fn cmd_compare(run_dirs: &[PathBuf], out: &Path) -> LabResult<Vec<Summary>> {
    let mut runs = Vec::new();
    for dir in run_dirs {
        runs.push((dir.clone(), cmd_report(dir)?));
    }
    std::fs::write(out, comparison_csv(&runs)).map_err(|e| LabError::io(out, e))?;
    Ok(runs.into_iter().map(|(_, s)| s).collect())
}

/// Config keys on which two runs differ.
pub fn config_differences(a: &RunManifest, b: &RunManifest) -> Vec<String> {
    let keys: BTreeSet<&String> = a.config.keys().chain(b.config.keys()).collect();
    keys.into_iter().filter(|k| a.config.get(*k) != b.config.get(*k)).cloned().collect()
}
