use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(&'static str),
    #[error("unknown prompt id {0}")]
    UnknownPrompt(usize),
    #[error("malformed response: {0}")]
    MalformedResponse(&'static str),
    #[error("policies are defined over different vocabularies or prompt sets")]
    VocabMismatch,
    #[error("policy is frozen")]
    FrozenPolicy,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("beta must be finite and strictly positive, got {0}")]
    InvalidBeta(f64),
    #[error("reference policy must be frozen")]
    NonFrozenReference,
    #[error("reward is not finite")]
    NonFiniteReward,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("feedback record has the wrong kind for this loss")]
    WrongFeedbackKind,
    #[error("reward model is not trainable")]
    NonTrainableModel,
    #[error("no reward entry for prompt {prompt}")]
    MissingEntry { prompt: usize },
    #[error("value {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("score bounds require max > min")]
    InvalidBounds,
    #[error("invalid feedback record: {0}")]
    InvalidRecord(&'static str),
    #[error("exponential tilt is not finite")]
    NonFiniteTilt,
    #[error("denominators must be strictly positive")]
    NonPositiveDenominator,
    #[error("numerators must be non-negative")]
    NegativeNumerator,
    #[error("inputs must be strictly positive")]
    NonPositiveInput,
    #[error("loss evaluation is not finite")]
    NonFiniteEvaluation,
    #[error("kind mismatch")]
    KindMismatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
}
