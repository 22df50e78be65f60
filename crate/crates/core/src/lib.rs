//! Encoder-decoder few-shot inference: objective-aligned prompts, original /
//! early-fusion / late-fusion scoring, greedy generation and an evaluation
//! harness, on a small deterministic T5-style model.

pub mod error;
pub mod fusion;
pub mod harness;
pub mod model;
pub mod parallel;
pub mod prompt;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, FormatError, Result};
pub use fusion::{FusionMode, OptionScore, ScoreNormalization};
pub use model::{Checkpoint, EncoderStates, ModelConfig};
pub use prompt::{FewShotInstance, Placement, PromptPlan, PromptTemplates};
pub use tensor::Tensor;
