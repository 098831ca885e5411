//! Implicit-reward alignment objectives on small, exactly enumerable
//! autoregressive token policies.
//!
//! The crate is `no_std` (it needs `alloc`). Every quantity that would be
//! estimated by sampling at scale (partition values, KL divergences, the
//! KL-regularized objective) is computed here by enumerating the finite
//! response space, so the optimality relations between a policy, its frozen
//! reference and an explicit reward can be checked to machine precision.
//!
//! Layout:
//! - [`policy`]: vocabularies, responses, tabular and parametric policies.
//! - [`reward`]: implicit reward/score, explicit reward models, Bradley-Terry.
//! - [`losses`]: pairwise, binary, score and online losses with analytic gradients.
//! - [`trainer`]: offline, online and policy-gradient training loops.
//! - [`oracle`]: closed-form optimum, exact objective, inequality checks,
//!   finite-difference gradients.
//! - [`instances`]: seeded problem instances shared by tests and the CLI.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod instances;
pub mod losses;
pub mod math;
pub mod oracle;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{CompareAs, DifferenceLoss, FeedbackKind, FeedbackRecord, Label, LossResult};
pub use oracle::{GapReport, TabularInstance};
pub use policy::{Architecture, Policy, PolicyKind, Prompt, Response, ResponseSpace, TokenId, Vocab};
pub use reward::{Beta, BtRewardModel, ExplicitRewardModel, RewardTable, ScoreBounds};
pub use rng::CounterRng;
pub use trainer::{EvalObserver, EvalRecord, LossKind, TrainConfig, TrainReport};
