//! `verify`: seeded property suites over the core crate, sharded across
//! threads and merged in case order.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};
use una_core::instances::{random_binary_batch, random_pairwise_batch, random_samples, random_scalar_batch, random_sixteen};
use una_core::losses::{self, CompareAs, DifferenceLoss, LossResult};
use una_core::oracle::{self, TabularInstance};
use una_core::reward::{normalize_score, rm_loss};
use una_core::trainer::train_policy_gradient_baseline;
use una_core::{Beta, BtRewardModel, CounterRng, ExplicitRewardModel, LossKind, Policy, RewardTable, ScoreBounds, TrainConfig, Vocab};

use crate::error::{LabError, LabResult};

pub const THREADS_ENV: &str = "UNA_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Proofs,
    Gradients,
    Equivalence,
    Oracle,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "proofs" => Suite::Proofs,
            "gradients" => Suite::Gradients,
            "equivalence" => Suite::Equivalence,
            "oracle" => Suite::Oracle,
            "all" => Suite::All,
            _ => return None,
        })
    }

    fn includes(self, name: &str) -> bool {
        self == Suite::All || self.name() == name
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Proofs => "proofs",
            Suite::Gradients => "gradients",
            Suite::Equivalence => "equivalence",
            Suite::Oracle => "oracle",
            Suite::All => "all",
        }
    }
}

/// Observed worst-case value of one property against its tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseOutcome {
    pub suite: &'static str,
    pub case: String,
    /// `true` when `observed ≤ tolerance` (or `≥` for lower-bound checks).
    pub passed: bool,
    pub observed: f64,
    pub tolerance: f64,
    /// `≤` or `≥`.
    pub relation: &'static str,
    /// Inputs of the worst case, written to the replay file on failure.
    pub replay: Value,
}

type CaseFn = fn(u64, f64) -> LabResult<Vec<CaseOutcome>>;

struct Case {
    suite: &'static str,
    run: CaseFn,
}

fn at_most(suite: &'static str, case: &str, observed: f64, tolerance: f64, replay: Value) -> CaseOutcome {
    CaseOutcome { suite, case: case.into(), passed: observed <= tolerance, observed, tolerance, relation: "<=", replay }
}

fn at_least(suite: &'static str, case: &str, observed: f64, tolerance: f64, replay: Value) -> CaseOutcome {
    CaseOutcome { suite, case: case.into(), passed: observed >= tolerance, observed, tolerance, relation: ">=", replay }
}

fn positive_vec(rng: &mut CounterRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| 10.0 * (1.0 - rng.next_f64())).collect()
}

// ---- proofs ----

fn log_sum_inequality(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut rng = CounterRng::new(seed);
    let mut worst = (f64::INFINITY, json!(null));
    for _ in 0..10_000 {
        let n = 1 + rng.below(6);
        let (a, b) = (positive_vec(&mut rng, n), positive_vec(&mut rng, n));
        let c = oracle::check_log_sum_inequality(&a, &b)?;
        if c.slack < worst.0 {
            worst = (c.slack, json!({ "a": a, "b": b }));
        }
    }
    Ok(vec![at_least("proofs", "log_sum_inequality_min_slack", worst.0, -1e-12 * scale, worst.1)])
}

fn log_sum_equality(seed: u64, _scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut rng = CounterRng::new(seed ^ 0x4551);
    let mut wrong = 0usize;
    let mut first = json!(null);
    for i in 0..10_000 {
        let n = 2 + rng.below(5);
        let b = positive_vec(&mut rng, n);
        let proportional = i % 2 == 0;
        let a: Vec<f64> = if proportional {
            let lambda = rng.uniform(0.01, 10.0);
            b.iter().map(|v| lambda * v).collect()
        } else {
            positive_vec(&mut rng, n)
        };
        let c = oracle::check_log_sum_inequality(&a, &b)?;
        if c.equality != proportional {
            if wrong == 0 {
                first = json!({ "a": a, "b": b, "proportional": proportional });
            }
            wrong += 1;
        }
    }
    Ok(vec![at_most("proofs", "log_sum_equality_iff_proportional_misses", wrong as f64, 0.0, first)])
}

fn jensen(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut rng = CounterRng::new(seed ^ 0x4a45);
    let mut worst = (f64::INFINITY, json!(null));
    for _ in 0..10_000 {
        let n = 1 + rng.below(6);
        let (w, x) = (positive_vec(&mut rng, n), positive_vec(&mut rng, n));
        let c = oracle::check_jensen(&w, &x)?;
        if c.slack < worst.0 {
            worst = (c.slack, json!({ "weights": w, "points": x }));
        }
    }
    Ok(vec![at_least("proofs", "jensen_min_slack", worst.0, -1e-12 * scale, worst.1)])
}

fn proof_instance(seed: u64, k: u64) -> LabResult<TabularInstance> {
    let beta = [0.1, 0.5, 1.0, 2.0][(k % 4) as usize];
    Ok(TabularInstance::random(seed.wrapping_mul(31).wrapping_add(k), 3, Vocab::new(4, 2)?, Beta::new(beta)?, 1.0, 1.0)?)
}

fn tilt_upper_bound(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut worst = (f64::NEG_INFINITY, json!(null));
    for k in 0..20 {
        let inst = proof_instance(seed, k)?;
        let best = oracle::evaluate_objective(&inst, &oracle::optimal_policy_closed_form(&inst)?)?;
        for j in 0..200 {
            let pi_seed = seed.wrapping_mul(1_000_003).wrapping_add(k * 1000 + j);
            let v = oracle::evaluate_objective(&inst, &oracle::random_policy_like(&inst, 2.0, pi_seed)?)?;
            if v - best > worst.0 {
                worst = (v - best, json!({ "instance": k, "policy_seed": pi_seed }));
            }
        }
    }
    Ok(vec![at_most("proofs", "objective_excess_over_tilt", worst.0, 1e-10 * scale, worst.1)])
}

fn upper_bound_value(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut worst = (0.0f64, json!(null));
    for k in 0..20 {
        let inst = proof_instance(seed, k)?;
        let lz = inst.log_partition()?;
        let bound = inst.beta().value() * lz.iter().sum::<f64>() / lz.len() as f64;
        let d = (oracle::evaluate_objective(&inst, &oracle::optimal_policy_closed_form(&inst)?)? - bound).abs();
        if d >= worst.0 {
            worst = (d, json!({ "instance": k }));
        }
    }
    Ok(vec![at_most("proofs", "optimum_minus_beta_mean_log_partition", worst.0, 1e-10 * scale, worst.1)])
}

fn tilt_reward_gap(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut worst = (0.0f64, json!(null));
    for k in 0..20 {
        let inst = proof_instance(seed, k)?;
        let d = oracle::recovered_reward_gap(&inst, &oracle::optimal_policy_closed_form(&inst)?)?.worst_deviation();
        if d >= worst.0 {
            worst = (d, json!({ "instance": k }));
        }
    }
    Ok(vec![at_most("proofs", "tilt_reward_gap_deviation", worst.0, 1e-9 * scale, worst.1)])
}

// ---- gradients ----

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn fd_error(pi: &Policy, loss: &dyn Fn(&Policy) -> una_core::Result<LossResult>) -> LabResult<f64> {
    let analytic = loss(pi)?.grad;
    let numeric = oracle::finite_diff_grad(|p| loss(&pi.with_params(p.to_vec()).expect("same shape")).map(|r| r.value).unwrap_or(f64::NAN), pi.params(), FD_EPS)?;
    Ok(oracle::max_relative_error(&analytic, &numeric, 1e-6))
}

fn gradient_case(seed: u64, scale: f64, loss_name: &'static str, parametric: bool) -> LabResult<Vec<CaseOutcome>> {
    let vocab = Vocab::new(3, 2)?;
    let table = RewardTable::from_fn(3, &vocab.space(), |x, y| 0.3 * x as f64 - 0.2 * y.content().len() as f64 + 0.1)?;
    let rm = ExplicitRewardModel::Table(table);
    let mut worst = (0.0f64, json!(null));
    for k in 0..5u64 {
        let s = seed.wrapping_mul(97).wrapping_add(k);
        let mut rng = CounterRng::new(s);
        let pairs = random_pairwise_batch(vocab, 3, 6, &mut rng)?;
        let binary = random_binary_batch(vocab, 3, 6, &mut rng);
        let scalar = random_scalar_batch(vocab, 3, 6, &mut rng)?;
        let samples = random_samples(vocab, 3, 6, &mut rng);
        let beta = Beta::new(0.5 + 0.3 * k as f64)?;
        let (pi, r) = if parametric {
            (Policy::parametric_random(vocab, 3, 4, true, 0.5, s)?, Policy::parametric_random(vocab, 3, 4, true, 0.5, s ^ 0xff)?.frozen_copy())
        } else {
            (Policy::tabular_random(vocab, 3, 1.0, s)?, Policy::tabular_random(vocab, 3, 1.0, s ^ 0xff)?.frozen_copy())
        };
        let r = &r;
        let err = match loss_name {
            "dpo" => fd_error(&pi, &|p| losses::loss_dpo(p, r, beta, &pairs))?,
            "una_pair_shaped" => fd_error(&pi, &|p| losses::loss_una_pair(p, r, beta, &pairs, true))?,
            "una_pair_unshaped" => fd_error(&pi, &|p| losses::loss_una_pair(p, r, beta, &pairs, false))?,
            "una_binary_mse" => fd_error(&pi, &|p| losses::loss_una_binary(p, r, beta, &binary, DifferenceLoss::Mse))?,
            "una_binary_bce" => fd_error(&pi, &|p| losses::loss_una_binary(p, r, beta, &binary, DifferenceLoss::Bce))?,
            "una_score" => fd_error(&pi, &|p| losses::loss_una_score(p, r, beta, &scalar, ScoreBounds::default()))?,
            "una_online_reward" => fd_error(&pi, &|p| losses::loss_una_online(p, r, beta, &rm, &samples, CompareAs::RewardMse))?,
            "una_online_score" => fd_error(&pi, &|p| losses::loss_una_online(p, r, beta, &rm, &samples, CompareAs::ScoreMse))?,
            other => unreachable!("unknown loss {other}"),
        };
        if err >= worst.0 {
            worst = (err, json!({ "loss": loss_name, "parametric": parametric, "seed": s, "beta": beta.value() }));
        }
    }
    let kind = if parametric { "parametric" } else { "tabular" };
    Ok(vec![at_most("gradients", &format!("{loss_name}/{kind}"), worst.0, FD_TOL * scale, worst.1)])
}

macro_rules! gradient_cases {
    ($($f:ident => $loss:literal, $param:literal;)*) => {
        $(fn $f(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> { gradient_case(seed, scale, $loss, $param) })*
    };
}

gradient_cases! {
    g_dpo_t => "dpo", false; g_dpo_p => "dpo", true;
    g_shaped_t => "una_pair_shaped", false; g_shaped_p => "una_pair_shaped", true;
    g_unshaped_t => "una_pair_unshaped", false; g_unshaped_p => "una_pair_unshaped", true;
    g_mse_t => "una_binary_mse", false; g_mse_p => "una_binary_mse", true;
    g_bce_t => "una_binary_bce", false; g_bce_p => "una_binary_bce", true;
    g_score_t => "una_score", false; g_score_p => "una_score", true;
    g_online_r_t => "una_online_reward", false; g_online_r_p => "una_online_reward", true;
    g_online_s_t => "una_online_score", false; g_online_s_p => "una_online_score", true;
}

fn g_rm(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let vocab = Vocab::new(4, 2)?;
    let mut worst = (0.0f64, json!(null));
    for k in 0..5u64 {
        let s = seed.wrapping_mul(89).wrapping_add(k);
        let mut rng = CounterRng::new(s);
        let batch = random_pairwise_batch(vocab, 3, 10, &mut rng)?;
        let params: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
        let model = |p: &[f64]| BtRewardModel::with_params(3, 4, p.to_vec()).map(ExplicitRewardModel::TrainableBt);
        let analytic = rm_loss(&model(&params)?, &batch)?.grad;
        let numeric = oracle::finite_diff_grad(|p| rm_loss(&model(p).expect("shape"), &batch).map(|r| r.value).unwrap_or(f64::NAN), &params, FD_EPS)?;
        let err = oracle::max_relative_error(&analytic, &numeric, 1e-6);
        if err >= worst.0 {
            worst = (err, json!({ "seed": s }));
        }
    }
    Ok(vec![at_most("gradients", "rm_loss", worst.0, FD_TOL * scale, worst.1)])
}

// ---- equivalence ----

struct EquivalenceStats {
    loss: (f64, Value),
    grad: (f64, Value),
}

fn equivalence_stats(seed: u64) -> LabResult<EquivalenceStats> {
    let mut rng = CounterRng::new(seed ^ 0x4551_5549);
    let mut stats = EquivalenceStats { loss: (0.0, json!(null)), grad: (0.0, json!(null)) };
    for t in 0..100u64 {
        let vocab = Vocab::new(2 + rng.below(4), 1 + rng.below(2))?;
        let s = rng.next_u64();
        let (pi, r) = if t % 2 == 0 {
            (Policy::tabular_random(vocab, 3, 1.5, s)?, Policy::tabular_random(vocab, 3, 1.5, s ^ 1)?.frozen_copy())
        } else {
            (Policy::parametric_random(vocab, 3, 3, true, 0.8, s)?, Policy::parametric_random(vocab, 3, 3, true, 0.8, s ^ 1)?.frozen_copy())
        };
        let beta = Beta::new(rng.uniform(0.01, 3.0))?;
        let batch = random_pairwise_batch(vocab, 3, 1 + rng.below(12), &mut rng)?;
        let a = losses::loss_dpo(&pi, &r, beta, &batch)?;
        let b = losses::loss_una_pair(&pi, &r, beta, &batch, true)?;
        let dl = (a.value - b.value).abs();
        let dg = a.grad.iter().zip(&b.grad).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let replay = json!({ "triple": t, "policy_seed": s, "beta": beta.value(), "vocab": [vocab.size(), vocab.max_len()] });
        if dl >= stats.loss.0 {
            stats.loss = (dl, replay.clone());
        }
        if dg >= stats.grad.0 {
            stats.grad = (dg, replay);
        }
    }
    Ok(stats)
}

fn equivalence(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let s = equivalence_stats(seed)?;
    Ok(vec![
        at_most("equivalence", "dpo_vs_shaped_pair_loss_delta", s.loss.0, 1e-12 * scale, s.loss.1),
        at_most("equivalence", "dpo_vs_shaped_pair_grad_delta", s.grad.0, 1e-10 * scale, s.grad.1),
    ])
}

// ---- oracle ----

/// Exact policy-gradient ascent on the regularized objective from the
/// reference, for the closed-form recovery checks.
pub fn recovery_config(beta: Beta, seed: u64) -> TrainConfig {
    TrainConfig {
        beta,
        step_size: 12.0 / beta.value(),
        steps: 5000,
        batch_size: 1,
        seed,
        loss_kind: LossKind::PgBaseline,
        grad_norm_cap: None,
        eval_every: 5000,
        pg_exact: true,
        ..TrainConfig::default()
    }
}

struct Recovery {
    tv: (f64, Value),
    gap_opt: (f64, Value),
    gap_trained: (f64, Value),
}

fn recovery(seed: u64) -> LabResult<Recovery> {
    let mut out = Recovery { tv: (0.0, json!(null)), gap_opt: (0.0, json!(null)), gap_trained: (0.0, json!(null)) };
    for beta in [0.1, 1.0] {
        for k in 0..10u64 {
            let inst_seed = seed.wrapping_add(k);
            let b = Beta::new(beta)?;
            let inst = random_sixteen(inst_seed, b)?;
            let rm = ExplicitRewardModel::Table(inst.rewards().clone());
            let cfg = recovery_config(b, inst_seed);
            let report = train_policy_gradient_baseline(&inst.reference().trainable_copy(), inst.reference(), &cfg, inst.prompts(), &rm, &mut ())?;
            let trained = report.final_policy.expect("policy trainer returns a policy");
            let opt = oracle::optimal_policy_closed_form(&inst)?;
            let replay = json!({ "instance_seed": inst_seed, "beta": beta });
            let tv = oracle::total_variation(&trained, &opt)?.into_iter().fold(0.0, f64::max);
            let g_opt = oracle::recovered_reward_gap(&inst, &opt)?.worst_deviation();
            let g_tr = oracle::recovered_reward_gap(&inst, &trained)?.worst_deviation();
            for (slot, v) in [(&mut out.tv, tv), (&mut out.gap_opt, g_opt), (&mut out.gap_trained, g_tr)] {
                if v >= slot.0 {
                    *slot = (v, replay.clone());
                }
            }
        }
    }
    Ok(out)
}

fn oracle_recovery(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let r = recovery(seed)?;
    Ok(vec![
        at_most("oracle", "closed_form_recovery_tv", r.tv.0, 1e-3 * scale, r.tv.1),
        at_most("oracle", "optimum_reward_gap_deviation", r.gap_opt.0, 1e-9 * scale, r.gap_opt.1),
        at_most("oracle", "trained_reward_gap_deviation", r.gap_trained.0, 1e-3 * scale, r.gap_trained.1),
    ])
}

fn oracle_grid(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut worst = (0.0f64, json!(null));
    for k in 0..10u64 {
        let inst = TabularInstance::random(seed.wrapping_add(k), 2, Vocab::new(2, 1)?, Beta::new(0.5)?, 1.0, 1.0)?;
        let grid = oracle::grid_argmax_two_responses(&inst, 1e-3)?;
        let opt = oracle::optimal_policy_closed_form(&inst)?;
        for x in inst.prompts() {
            let d = (grid[x.id] - opt.probs(x)?[0]).abs();
            if d >= worst.0 {
                worst = (d, json!({ "instance_seed": seed.wrapping_add(k), "prompt": x.id }));
            }
        }
    }
    Ok(vec![at_most("oracle", "grid_argmax_vs_closed_form", worst.0, 1e-3 * scale, worst.1)])
}

fn oracle_shift(seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let mut rng = CounterRng::new(seed ^ 0x5348);
    let mut worst = (0.0f64, json!(null));
    for k in 0..20 {
        let inst = proof_instance(seed, k)?;
        let offsets: Vec<f64> = (0..3).map(|_| rng.uniform(-5.0, 5.0)).collect();
        let a = oracle::optimal_policy_closed_form(&inst)?;
        let b = oracle::optimal_policy_closed_form(&oracle::shift_rewards(&inst, &offsets)?)?;
        let d = oracle::total_variation(&a, &b)?.into_iter().fold(0.0, f64::max);
        if d >= worst.0 {
            worst = (d, json!({ "instance": k, "offsets": offsets }));
        }
    }
    Ok(vec![at_most("oracle", "per_prompt_shift_tilt_change", worst.0, 1e-12 * scale, worst.1)])
}

fn oracle_normalize(_seed: u64, scale: f64) -> LabResult<Vec<CaseOutcome>> {
    let b = ScoreBounds::default();
    let err = [(1.0, 0.0), (3.0, 0.5), (5.0, 1.0)]
        .iter()
        .map(|&(raw, want)| normalize_score(raw, b).map(|s| (s - want).abs()))
        .collect::<una_core::Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(vec![at_most("oracle", "normalize_score_endpoints", err, 0.0 * scale, json!({ "bounds": [1.0, 5.0] }))])
}

fn registry() -> Vec<Case> {
    let c = |suite, run| Case { suite, run };
    vec![
        c("proofs", log_sum_inequality),
        c("proofs", log_sum_equality),
        c("proofs", jensen),
        c("proofs", tilt_upper_bound),
        c("proofs", upper_bound_value),
        c("proofs", tilt_reward_gap),
        c("gradients", g_dpo_t),
        c("gradients", g_dpo_p),
        c("gradients", g_shaped_t),
        c("gradients", g_shaped_p),
        c("gradients", g_unshaped_t),
        c("gradients", g_unshaped_p),
        c("gradients", g_mse_t),
        c("gradients", g_mse_p),
        c("gradients", g_bce_t),
        c("gradients", g_bce_p),
        c("gradients", g_score_t),
        c("gradients", g_score_p),
        c("gradients", g_online_r_t),
        c("gradients", g_online_r_p),
        c("gradients", g_online_s_t),
        c("gradients", g_online_s_p),
        c("gradients", g_rm),
        c("equivalence", equivalence),
        c("oracle", oracle_recovery),
        c("oracle", oracle_grid),
        c("oracle", oracle_shift),
        c("oracle", oracle_normalize),
    ]
}

/// Worker count from `UNA_LAB_THREADS` (default: available parallelism).
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs every case of `suite`; results are in registry order regardless of
/// scheduling. `tolerance_scale` multiplies every tolerance.
pub fn run_suite(suite: Suite, seed: u64, tolerance_scale: f64, threads: usize) -> LabResult<Vec<CaseOutcome>> {
    let cases: Vec<Case> = registry().into_iter().filter(|c| suite.includes(c.suite)).collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<LabResult<Vec<CaseOutcome>>>>> = Mutex::new((0..cases.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, cases.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(case) = cases.get(i) else { break };
                let r = (case.run)(seed, tolerance_scale);
                slots.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut out = Vec::new();
    for r in slots.into_inner().expect("no poisoned workers") {
        out.extend(r.expect("every case ran")?);
    }
    Ok(out)
}

pub fn format_table(outcomes: &[CaseOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.case.len()).max().unwrap_or(4).max(4);
    let mut out = format!("{:<12} {:<width$} {:>14} {:>3} {:>12}  result\n", "suite", "case", "observed", "", "tolerance");
    for o in outcomes {
        out.push_str(&format!(
            "{:<12} {:<width$} {:>14.6e} {:>3} {:>12.3e}  {}\n",
            o.suite,
            o.case,
            o.observed,
            o.relation,
            o.tolerance,
            if o.passed { "PASS" } else { "FAIL" }
        ));
    }
    out
}

/// Replay file for a failed case.
pub fn write_replay(dir: &Path, seed: u64, o: &CaseOutcome) -> LabResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let path = dir.join(format!("replay-{}-{}-seed{seed}.json", o.suite, o.case.replace('/', "-")));
    let doc = json!({
        "suite": o.suite,
        "case": o.case,
        "seed": seed,
        "observed": o.observed,
        "tolerance": o.tolerance,
        "relation": o.relation,
        "worst_case": o.replay,
    });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("replay serializes") + "\n").map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}
