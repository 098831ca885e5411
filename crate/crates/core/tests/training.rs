use una_core::instances::*;
use una_core::oracle::{evaluate_objective, optimal_policy_closed_form, total_variation};
use una_core::reward::{BtRewardModel, RewardTable};
use una_core::trainer::*;
use una_core::*;

fn dpo_config() -> TrainConfig {
    TrainConfig { beta: Beta::new(0.1).unwrap(), step_size: 5.0, steps: 2000, eval_every: 100, batch_size: 24, loss_kind: LossKind::Dpo, ..Default::default() }
}

#[test]
fn zero_steps_rejected_and_zero_step_size_is_identity() {
    let inst = separable_four(3).unwrap();
    let cfg = TrainConfig { steps: 0, ..dpo_config() };
    assert!(matches!(train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()), Err(Error::InvalidConfig(_))));
    let cfg = TrainConfig { steps: 1, step_size: 0.0, ..dpo_config() };
    let rep = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    assert_eq!(rep.final_policy.unwrap().params(), inst.start.params());
    assert_eq!(rep.records.len(), 2);
}

#[test]
fn separable_four_dpo_golden_margin() {
    let inst = separable_four(3).unwrap();
    let cfg = dpo_config();
    let rep = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    let pi = rep.final_policy.as_ref().unwrap();
    let margin = trainer::mean_implicit_margin(pi, &inst.reference, cfg.beta, &inst.records).unwrap();
    assert!(margin > 2.0);
    // recorded trace
    assert!((margin - 2.441_103_212_368).abs() < 1e-9, "{margin:.12}");
    assert!(rep.last().loss <= rep.first().loss);
    assert_eq!(rep.records.len(), 21);
}

#[test]
fn kind_mismatch_detected() {
    let inst = separable_four(3).unwrap();
    let cfg = TrainConfig { loss_kind: LossKind::UnaScore, ..dpo_config() };
    assert_eq!(train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()), Err(Error::KindMismatch));
    assert_eq!(Error::KindMismatch.to_string(), "kind mismatch");
}

#[test]
fn frozen_or_unfrozen_inputs_rejected() {
    let inst = separable_four(3).unwrap();
    let cfg = dpo_config();
    assert_eq!(train_offline(&inst.reference, &inst.reference, &cfg, &inst.records, &mut ()), Err(Error::FrozenPolicy));
    assert_eq!(train_offline(&inst.start, &inst.start, &cfg, &inst.records, &mut ()), Err(Error::NonFrozenReference));
}

#[test]
fn desired_only_binary_scores_increase() {
    let beta = Beta::new(0.01).unwrap();
    let inst = binary_feedback(11, beta, true).unwrap();
    let cfg = TrainConfig { beta, step_size: 0.3 / (0.01 * 0.01), steps: 2000, eval_every: 100, batch_size: 8, loss_kind: LossKind::UnaBinaryMse, ..Default::default() };
    let rep = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    for w in rep.records.windows(2) {
        assert!(w[1].mean_s_theta_w > w[0].mean_s_theta_w);
    }
    assert!(rep.records.iter().all(|r| r.mean_s_theta_l.is_nan()));
}

#[test]
fn training_is_deterministic() {
    let inst = separable_four(3).unwrap();
    let cfg = TrainConfig { batch_size: 5, steps: 300, ..dpo_config() };
    let a = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    let b = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let t = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let rm = ExplicitRewardModel::Table(t.rewards().clone());
    let cfg = TrainConfig { beta: t.beta(), loss_kind: LossKind::UnaOnlineReward, steps: 200, variance_probe: 4, ..Default::default() };
    let a = train_online_una(&t.reference().trainable_copy(), t.reference(), &cfg, t.prompts(), &rm, &mut ()).unwrap();
    let b = train_online_una(&t.reference().trainable_copy(), t.reference(), &cfg, t.prompts(), &rm, &mut ()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

fn constant_rm(inst: &TabularInstance, k: f64) -> ExplicitRewardModel {
    ExplicitRewardModel::Table(RewardTable::from_fn(inst.prompts().len(), inst.space(), |_, _| k).unwrap())
}

#[test]
fn constant_reward_online_una_returns_to_reference() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let start = Policy::tabular_random(inst.reference().vocab(), 4, 0.5, 8).unwrap();
    let cfg = TrainConfig { beta: inst.beta(), step_size: 1.0, steps: 4000, eval_every: 400, batch_size: 512, loss_kind: LossKind::UnaOnlineReward, ..Default::default() };
    let rep = train_online_una(&start, inst.reference(), &cfg, inst.prompts(), &constant_rm(&inst, 0.5), &mut ()).unwrap();
    assert!(rep.first().kl > 1e-2);
    assert!(rep.last().kl < 1e-3, "final kl {}", rep.last().kl);
}

#[test]
fn zero_reward_baseline_reduces_kl() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let start = Policy::tabular_random(inst.reference().vocab(), 4, 0.5, 8).unwrap();
    let cfg = TrainConfig { beta: inst.beta(), step_size: 1.0, steps: 500, eval_every: 100, batch_size: 16, loss_kind: LossKind::PgBaseline, ..Default::default() };
    let rep = train_policy_gradient_baseline(&start, inst.reference(), &cfg, inst.prompts(), &constant_rm(&inst, 0.0), &mut ()).unwrap();
    assert!(rep.last().kl < rep.first().kl);
}

fn online_config(kind: LossKind) -> TrainConfig {
    TrainConfig { beta: Beta::new(0.3).unwrap(), step_size: 2.0, steps: 4000, eval_every: 10, batch_size: 64, loss_kind: kind, ..Default::default() }
}

struct KlToOptimum {
    target: Policy,
    values: Vec<f64>,
}

impl EvalObserver for KlToOptimum {
    fn on_policy(&mut self, _step: usize, policy: &Policy) {
        let kl: f64 = policy.prompts().iter().map(|x| policy.kl_divergence(&self.target, x).unwrap()).sum();
        self.values.push(kl / policy.num_prompts() as f64);
    }
}

#[test]
fn prefer_token_three_online_una() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let rm = ExplicitRewardModel::Table(inst.rewards().clone());
    let opt = optimal_policy_closed_form(&inst).unwrap();
    let rep = train_online_una(&inst.reference().trainable_copy(), inst.reference(), &online_config(LossKind::UnaOnlineReward), inst.prompts(), &rm, &mut ()).unwrap();
    assert!(rep.last().mean_explicit_reward >= rep.first().mean_explicit_reward + 0.2);
    let tv = total_variation(rep.final_policy.as_ref().unwrap(), &opt).unwrap();
    assert!(tv.iter().all(|&d| d < 0.05), "{tv:?}");
}

#[test]
fn windowed_divergence_from_tilt_decreases_during_transient() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let rm = ExplicitRewardModel::Table(inst.rewards().clone());
    let mut obs = KlToOptimum { target: optimal_policy_closed_form(&inst).unwrap(), values: Vec::new() };
    let cfg = TrainConfig { steps: 2000, eval_every: 5, ..online_config(LossKind::UnaOnlineReward) };
    train_online_una(&inst.reference().trainable_copy(), inst.reference(), &cfg, inst.prompts(), &rm, &mut obs).unwrap();
    let means: Vec<f64> = obs.values.chunks_exact(50).map(|w| w.iter().sum::<f64>() / 50.0).collect();
    assert_eq!(means.len(), 8);
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn prefer_token_three_baseline_reaches_optimum() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let rm = ExplicitRewardModel::Table(inst.rewards().clone());
    let opt = optimal_policy_closed_form(&inst).unwrap();
    let rep = train_policy_gradient_baseline(&inst.reference().trainable_copy(), inst.reference(), &online_config(LossKind::PgBaseline), inst.prompts(), &rm, &mut ()).unwrap();
    let got = evaluate_objective(&inst, rep.final_policy.as_ref().unwrap()).unwrap();
    let best = evaluate_objective(&inst, &opt).unwrap();
    assert!((best - got).abs() < 0.05);
    assert!((rep.last().loss + got).abs() < 1e-12);
}

#[test]
fn online_reports_share_schema_and_grid() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let rm = ExplicitRewardModel::Table(inst.rewards().clone());
    let cfg = TrainConfig { steps: 95, eval_every: 10, variance_probe: 4, ..online_config(LossKind::UnaOnlineReward) };
    let a = train_online_una(&inst.reference().trainable_copy(), inst.reference(), &cfg, inst.prompts(), &rm, &mut ()).unwrap();
    let cfg = TrainConfig { loss_kind: LossKind::PgBaseline, ..cfg };
    let b = train_policy_gradient_baseline(&inst.reference().trainable_copy(), inst.reference(), &cfg, inst.prompts(), &rm, &mut ()).unwrap();
    let steps = |r: &TrainReport| r.records.iter().map(|e| e.step).collect::<Vec<_>>();
    assert_eq!(steps(&a), steps(&b));
    assert_eq!(steps(&a), cfg.eval_steps());
    assert!(a.records.iter().chain(&b.records).all(|r| r.kl >= 0.0 && !r.grad_variance.is_nan()));
}

#[test]
fn online_requires_full_reward_coverage() {
    let inst = prefer_token_three(Beta::new(0.3).unwrap()).unwrap();
    let mut partial = RewardTable::new();
    partial.insert(0, &Response::from_content(&[]).unwrap(), 0.0).unwrap();
    let rm = ExplicitRewardModel::Table(partial);
    let r = train_online_una(&inst.reference().trainable_copy(), inst.reference(), &online_config(LossKind::UnaOnlineReward), inst.prompts(), &rm, &mut ());
    assert!(matches!(r, Err(Error::MissingEntry { .. })));
}

fn rm_config() -> TrainConfig {
    TrainConfig { step_size: 0.5, steps: 3000, eval_every: 500, batch_size: 64, loss_kind: LossKind::RmBt, ..Default::default() }
}

#[test]
fn reward_model_training() {
    let set = separable_preferences(7, 512).unwrap();
    let rm0 = ExplicitRewardModel::TrainableBt(BtRewardModel::zeros(set.num_prompts, set.vocab_size));
    let (rm, rep) = train_reward_model(&rm0, &rm_config(), &set.records, &mut ()).unwrap();
    assert!(rep.last().accuracy >= 0.95);
    let (swapped, _) = train_reward_model(&rm0, &rm_config(), &swap_labels(&set.records), &mut ()).unwrap();
    let a = trainer::reward_margins(&rm, &set.records).unwrap();
    let b = trainer::reward_margins(&swapped, &set.records).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x + y).abs() <= 1e-6));
    let cfg = TrainConfig { steps: 1, step_size: 0.0, ..rm_config() };
    assert_eq!(train_reward_model(&rm0, &cfg, &set.records, &mut ()).unwrap().0, rm0);
    let table = ExplicitRewardModel::Table(RewardTable::new());
    assert_eq!(train_reward_model(&table, &rm_config(), &set.records, &mut ()).map(|_| ()), Err(Error::NonTrainableModel));
}

#[test]
fn realizable_scores_are_distilled() {
    let beta = Beta::new(1.0).unwrap();
    let inst = realizable_scalar(5, beta).unwrap();
    let cfg = TrainConfig { beta, step_size: 10.0, steps: 2000, eval_every: 500, batch_size: 64, loss_kind: LossKind::UnaScore, ..Default::default() };
    let rep = train_offline(&inst.start, &inst.reference, &cfg, &inst.records, &mut ()).unwrap();
    assert!(rep.last().loss < 1e-6);
}

#[test]
fn reward_model_generalizes_to_held_out_pairs() {
    // the generator is sequential, so the first 512 records are the A8 set
    let all = separable_preferences(7, 640).unwrap();
    assert_eq!(all.records[..512], separable_preferences(7, 512).unwrap().records[..]);
    let (train, test) = all.records.split_at(512);
    let rm0 = ExplicitRewardModel::TrainableBt(BtRewardModel::zeros(all.num_prompts, all.vocab_size));
    let (rm, _) = train_reward_model(&rm0, &rm_config(), train, &mut ()).unwrap();
    let agree = trainer::reward_margins(&rm, test).unwrap().iter().filter(|&&m| m > 0.0).count();
    assert!(agree as f64 / test.len() as f64 >= 0.95, "{agree}/{}", test.len());
}
