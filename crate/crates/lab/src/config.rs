//! Flat `key = value` run configuration. `#` starts a comment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use una_core::{Beta, CompareAs, LossKind, PolicyKind, ScoreBounds, TrainConfig};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceChoice {
    /// All-zero parameters (uniform for tabular policies).
    Zeros,
    Random { scale: f64, seed: u64 },
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitChoice {
    /// Start from a trainable copy of the reference.
    Reference,
    Random { scale: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub policy: PolicyKind,
    pub hidden: usize,
    pub bias: bool,
    pub vocab_size: Option<usize>,
    pub max_len: Option<usize>,
    pub num_prompts: Option<usize>,
    pub reference: ReferenceChoice,
    pub init: InitChoice,
    /// Stamp eval rows with elapsed milliseconds (otherwise `ms` is 0 and
    /// metrics files are byte-reproducible).
    pub wall_clock: bool,
}

pub const DEFAULTS: &str = "\
# loss_kind: una_pair_shaped | una_pair_unshaped | dpo | una_binary_mse | una_binary_bce
#            | una_score | una_online_reward | una_online_score | pg_baseline | rm_bt
loss_kind = una_pair_shaped
beta = 0.03
step_size = 0.05
steps = 1000
batch_size = 16
seed = 0
# online comparison; the una_online_* loss kinds fix it
compare_as = score_mse
# positive number or none
grad_norm_cap = 10
eval_every = 10
score_min = 1
score_max = 5
# policy-gradient baseline: exact expectation instead of sampling
pg_exact = false
# gradient estimates drawn per eval to measure estimator variance (0 = off)
variance_probe = 0
wall_clock = false
# policy: tabular | parametric
policy = tabular
hidden = 0
bias = true
# auto = inferred from the data
vocab_size = auto
max_len = auto
num_prompts = auto
# reference: zeros | random | path to a checkpoint
reference = zeros
reference_scale = 0.5
reference_seed = 0
# init: reference | random
init = reference
init_scale = 0.5
init_seed = 1
";

fn err(line: usize, message: impl Into<String>) -> LabError {
    LabError::Config { line, message: message.into() }
}

fn parse_map(text: &str) -> LabResult<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| err(i + 1, format!("expected key = value, got `{line}`")))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(err(i + 1, format!("duplicate key `{k}`")));
        }
    }
    Ok(map)
}

fn known_keys() -> Vec<String> {
    parse_map(DEFAULTS).expect("defaults parse").into_keys().collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> LabResult<Self> {
        let user = parse_map(text)?;
        let mut merged = parse_map(DEFAULTS).expect("defaults parse");
        let keys = known_keys();
        for (k, v) in user {
            if !keys.contains(&k) {
                return Err(err(v.0, format!("unknown key `{k}`")));
            }
            merged.insert(k, v);
        }
        let get = |k: &str| merged.get(k).expect("every key has a default");
        fn num<T: std::str::FromStr>(v: &(usize, String), k: &str) -> LabResult<T> {
            v.1.parse().map_err(|_| err(v.0, format!("invalid value `{}` for `{k}`", v.1)))
        }
        let boolean = |k: &str| -> LabResult<bool> {
            let v = get(k);
            match v.1.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(err(v.0, format!("`{k}` must be true or false"))),
            }
        };
        let auto = |k: &str| -> LabResult<Option<usize>> {
            let v = get(k);
            if v.1 == "auto" {
                Ok(None)
            } else {
                num(v, k).map(Some)
            }
        };
        let loss_kind = LossKind::parse(&get("loss_kind").1).ok_or_else(|| err(get("loss_kind").0, format!("unknown loss_kind `{}`", get("loss_kind").1)))?;
        let compare_as = match get("compare_as").1.as_str() {
            "reward_mse" => CompareAs::RewardMse,
            "score_mse" => CompareAs::ScoreMse,
            other => return Err(err(get("compare_as").0, format!("unknown compare_as `{other}`"))),
        };
        let beta_v: f64 = num(get("beta"), "beta")?;
        let beta = Beta::new(beta_v).map_err(|e| err(get("beta").0, e.to_string()))?;
        let grad_norm_cap = match get("grad_norm_cap").1.as_str() {
            "none" => None,
            _ => Some(num(get("grad_norm_cap"), "grad_norm_cap")?),
        };
        let score_bounds = ScoreBounds::new(num(get("score_min"), "score_min")?, num(get("score_max"), "score_max")?)
            .map_err(|e| err(get("score_max").0, e.to_string()))?;
        let train = TrainConfig {
            beta,
            step_size: num(get("step_size"), "step_size")?,
            steps: num(get("steps"), "steps")?,
            batch_size: num(get("batch_size"), "batch_size")?,
            seed: num(get("seed"), "seed")?,
            loss_kind,
            compare_as,
            grad_norm_cap,
            eval_every: num(get("eval_every"), "eval_every")?,
            score_bounds,
            pg_exact: boolean("pg_exact")?,
            variance_probe: num(get("variance_probe"), "variance_probe")?,
        };
        let policy = match get("policy").1.as_str() {
            "tabular" => PolicyKind::Tabular,
            "parametric" => PolicyKind::Parametric,
            other => return Err(err(get("policy").0, format!("unknown policy `{other}`"))),
        };
        let reference = match get("reference").1.as_str() {
            "zeros" => ReferenceChoice::Zeros,
            "random" => ReferenceChoice::Random { scale: num(get("reference_scale"), "reference_scale")?, seed: num(get("reference_seed"), "reference_seed")? },
            path => ReferenceChoice::Checkpoint(PathBuf::from(path)),
        };
        let init = match get("init").1.as_str() {
            "reference" => InitChoice::Reference,
            "random" => InitChoice::Random { scale: num(get("init_scale"), "init_scale")?, seed: num(get("init_seed"), "init_seed")? },
            other => return Err(err(get("init").0, format!("unknown init `{other}`"))),
        };
        let cfg = Self {
            train,
            policy,
            hidden: num(get("hidden"), "hidden")?,
            bias: boolean("bias")?,
            vocab_size: auto("vocab_size")?,
            max_len: auto("max_len")?,
            num_prompts: auto("num_prompts")?,
            reference,
            init,
            wall_clock: boolean("wall_clock")?,
        };
        cfg.train.validate().map_err(|e| err(0, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key with its effective value, for manifests.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("loss_kind", t.loss_kind.name().into());
        put("beta", t.beta.value().to_string());
        put("step_size", t.step_size.to_string());
        put("steps", t.steps.to_string());
        put("batch_size", t.batch_size.to_string());
        put("seed", t.seed.to_string());
        put("compare_as", match t.effective_compare() {
            CompareAs::RewardMse => "reward_mse".into(),
            CompareAs::ScoreMse => "score_mse".into(),
        });
        put("grad_norm_cap", t.grad_norm_cap.map_or("none".into(), |c| c.to_string()));
        put("eval_every", t.eval_every.to_string());
        put("score_min", t.score_bounds.min_raw().to_string());
        put("score_max", t.score_bounds.max_raw().to_string());
        put("pg_exact", t.pg_exact.to_string());
        put("variance_probe", t.variance_probe.to_string());
        put("wall_clock", self.wall_clock.to_string());
        put("policy", match self.policy {
            PolicyKind::Tabular => "tabular".into(),
            PolicyKind::Parametric => "parametric".into(),
        });
        put("hidden", self.hidden.to_string());
        put("bias", self.bias.to_string());
        put("vocab_size", opt(self.vocab_size));
        put("max_len", opt(self.max_len));
        put("num_prompts", opt(self.num_prompts));
        match &self.reference {
            ReferenceChoice::Zeros => put("reference", "zeros".into()),
            ReferenceChoice::Random { scale, seed } => {
                put("reference", "random".into());
                put("reference_scale", scale.to_string());
                put("reference_seed", seed.to_string());
            }
            ReferenceChoice::Checkpoint(p) => put("reference", p.display().to_string()),
        }
        match &self.init {
            InitChoice::Reference => put("init", "reference".into()),
            InitChoice::Random { scale, seed } => {
                put("init", "random".into());
                put("init_scale", scale.to_string());
                put("init_seed", seed.to_string());
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.train, TrainConfig { steps: 1000, ..TrainConfig::default() });
        assert_eq!(c.reference, ReferenceChoice::Zeros);
    }

    #[test]
    fn overrides_and_errors() {
        let c = RunConfig::parse("beta = 0.1 # tuned\nsteps=5\ngrad_norm_cap = none\n").unwrap();
        assert_eq!(c.train.beta.value(), 0.1);
        assert_eq!(c.train.steps, 5);
        assert_eq!(c.train.grad_norm_cap, None);
        assert!(matches!(RunConfig::parse("bogus = 1"), Err(LabError::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("steps = 1\nsteps = 2"), Err(LabError::Config { line: 2, .. })));
        assert!(RunConfig::parse("steps = 0").is_err());
        assert!(RunConfig::parse("beta = -1").is_err());
        assert!(RunConfig::parse("loss_kind = ppo").is_err());
    }
}
