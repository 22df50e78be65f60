//! Few-shot scoring and generation over one or several encoder inputs.
//!
//! * `Original`: one encoder input holding every demonstration.
//! * `Early`: each demonstration is encoded with the target input on its own;
//!   the encoder states are concatenated and the decoder cross-attends over
//!   all of them at once.
//! * `Late`: each demonstration runs through the whole model separately and
//!   the per-step output distributions are averaged with equal weight.
//!
//! The late-fusion average is taken in probability space as
//! `log Σ_j p_j(y) − log k`, summing the per-pass values in sorted order so
//! the result does not depend on the order of the inputs at all.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decoder_logits, encode, Checkpoint, EncoderStates};
use crate::parallel;
use crate::tensor::{log_softmax, log_sum_exp};
use crate::tokenizer::{self, EOS_ID};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    #[default]
    Original,
    Early,
    Late,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Original, FusionMode::Early, FusionMode::Late];

    pub fn is_fusion(self) -> bool {
        self != FusionMode::Original
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Original => "original",
            FusionMode::Early => "early",
            FusionMode::Late => "late",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(FusionMode::Original),
            "early" => Ok(FusionMode::Early),
            "late" => Ok(FusionMode::Late),
            _ => Err(Error::Argument(format!(
                "unknown mode {s:?}; expected original, early or late"
            ))),
        }
    }
}

/// Token ids for an encoder input: the text followed by eos.
pub fn encoder_ids(text: &str) -> Vec<u32> {
    let mut ids = tokenizer::encode_text(text);
    ids.push(EOS_ID);
    ids
}

/// Encodes each input independently (in parallel when enabled).
pub fn encode_inputs(ckpt: &Checkpoint, inputs: &[Vec<u32>]) -> Result<Vec<EncoderStates>> {
    parallel::try_map(inputs, |ids| encode(ckpt, ids))
}

fn check_inputs(mode: FusionMode, enc_inputs: &[EncoderStates]) -> Result<()> {
    match (mode, enc_inputs.len()) {
        (_, 0) => Err(Error::Argument(format!(
            "{mode} mode needs at least one encoder input"
        ))),
        (FusionMode::Original, n) if n != 1 => Err(Error::Argument(format!(
            "original mode takes exactly one encoder input, got {n}"
        ))),
        _ => Ok(()),
    }
}

/// `log((1/k) Σ_j exp(v_j))` with the terms in a canonical order.
fn mix_uniform(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len() as f64;
    log_sum_exp(values).expect("at least one pass") - k.ln()
}

/// Per-pass log-probability rows, one row per decoder position.
fn pass_log_probs(ckpt: &Checkpoint, enc: &EncoderStates, ids: &[u32]) -> Result<Vec<Vec<f64>>> {
    let logits = decoder_logits(ckpt, enc, ids)?;
    (0..logits.rows())
        .map(|t| log_softmax(logits.row(t)))
        .collect()
}

/// Next-token log-probabilities at every decoder position for the sequence
/// `ids`: row `t` conditions on `ids[..t]`.
pub fn position_log_probs(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc_inputs: &[EncoderStates],
    ids: &[u32],
) -> Result<Vec<Vec<f64>>> {
    check_inputs(mode, enc_inputs)?;
    match mode {
        FusionMode::Original => pass_log_probs(ckpt, &enc_inputs[0], ids),
        FusionMode::Early => {
            let parts: Vec<&EncoderStates> = enc_inputs.iter().collect();
            pass_log_probs(ckpt, &EncoderStates::concat(&parts)?, ids)
        }
        FusionMode::Late => {
            let passes = parallel::try_map(enc_inputs, |enc| pass_log_probs(ckpt, enc, ids))?;
            let (rows, vocab) = (passes[0].len(), passes[0][0].len());
            let mut terms = vec![0.0f64; passes.len()];
            Ok((0..rows)
                .map(|t| {
                    (0..vocab)
                        .map(|v| {
                            for (term, pass) in terms.iter_mut().zip(&passes) {
                                *term = pass[t][v];
                            }
                            mix_uniform(&mut terms)
                        })
                        .collect()
                })
                .collect())
        }
    }
}

/// Next-token log-probabilities after `prefix`.
pub fn next_token_dist(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc_inputs: &[EncoderStates],
    prefix: &[u32],
) -> Result<Vec<f64>> {
    let mut rows = position_log_probs(ckpt, mode, enc_inputs, prefix)?;
    Ok(rows.pop().expect("at least the start position"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalization {
    /// Raw summed negative log-likelihood.
    #[default]
    Sum,
    /// Sum divided by the number of target tokens.
    PerTokenMean,
}

impl FromStr for ScoreNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ScoreNormalization::Sum),
            "per_token_mean" => Ok(ScoreNormalization::PerTokenMean),
            _ => Err(Error::Argument(format!(
                "normalization must be sum or per_token_mean, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub option_index: usize,
    /// Nats, summed over target tokens.
    pub total_nll: f64,
    pub per_token_nll: Vec<f64>,
    pub token_count: usize,
}

impl OptionScore {
    pub fn value(&self, norm: ScoreNormalization) -> f64 {
        match norm {
            ScoreNormalization::Sum => self.total_nll,
            ScoreNormalization::PerTokenMean => self.total_nll / self.token_count as f64,
        }
    }
}

/// Teacher-forced negative log-likelihood of `target_ids` after
/// `decoder_prefix_ids`.
pub fn score_option(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc_inputs: &[EncoderStates],
    decoder_prefix_ids: &[u32],
    target_ids: &[u32],
) -> Result<OptionScore> {
    if target_ids.is_empty() {
        return Err(Error::Argument("cannot score an empty target".into()));
    }
    check_inputs(mode, enc_inputs)?;
    let mut ids = decoder_prefix_ids.to_vec();
    ids.extend_from_slice(target_ids);
    let start = decoder_prefix_ids.len();

    let per_token_nll: Vec<f64> = match mode {
        FusionMode::Late => {
            // only the target entries are needed, so mix per pass lazily
            let passes = parallel::try_map(enc_inputs, |enc| pass_log_probs(ckpt, enc, &ids))?;
            target_ids
                .iter()
                .enumerate()
                .map(|(i, &tok)| {
                    let mut terms: Vec<f64> =
                        passes.iter().map(|p| p[start + i][tok as usize]).collect();
                    -mix_uniform(&mut terms)
                })
                .collect()
        }
        _ => {
            let rows = position_log_probs(ckpt, mode, enc_inputs, &ids)?;
            target_ids
                .iter()
                .enumerate()
                .map(|(i, &tok)| -rows[start + i][tok as usize])
                .collect()
        }
    };
    let per_token_nll: Vec<f64> = per_token_nll.into_iter().map(|v| v.max(0.0)).collect();
    Ok(OptionScore {
        option_index: 0,
        total_nll: per_token_nll.iter().sum(),
        token_count: per_token_nll.len(),
        per_token_nll,
    })
}

/// Index of the lowest summed NLL; ties go to the lowest option index.
pub fn select_option(scores: &[OptionScore]) -> Result<usize> {
    select_option_with(scores, ScoreNormalization::Sum)
}

pub fn select_option_with(scores: &[OptionScore], norm: ScoreNormalization) -> Result<usize> {
    scores
        .iter()
        .min_by(|a, b| {
            a.value(norm)
                .total_cmp(&b.value(norm))
                .then(a.option_index.cmp(&b.option_index))
        })
        .map(|s| s.option_index)
        .ok_or_else(|| Error::Argument("no options to select from".into()))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding until eos or `max_new_tokens`. Eos is not returned.
pub fn greedy_generate(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc_inputs: &[EncoderStates],
    decoder_prefix_ids: &[u32],
    max_new_tokens: usize,
) -> Result<Vec<u32>> {
    if max_new_tokens == 0 {
        return Err(Error::Argument("max_new_tokens must be at least 1".into()));
    }
    let mut ids = decoder_prefix_ids.to_vec();
    let mut generated = Vec::new();
    for _ in 0..max_new_tokens {
        let dist = next_token_dist(ckpt, mode, enc_inputs, &ids)?;
        let next = argmax(&dist) as u32;
        if next == EOS_ID {
            break;
        }
        ids.push(next);
        generated.push(next);
    }
    Ok(generated)
}
