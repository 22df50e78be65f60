//! Encoder and decoder forward passes.
//!
//! Pre-norm residual blocks with RMS normalisation and no biases. Attention
//! scores are plain dot products (no 1/sqrt(d_kv) factor) plus a learned
//! relative-position bias shared by every layer of a stack. Cross-attention
//! has no positional term, so the decoder sees encoder states as an
//! unordered set of keys.

use std::sync::{Arc, OnceLock};

use log::warn;

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::position::relative_position_bucket;
use crate::error::{Error, Result};
use crate::tensor::{self, matmul, rms_norm, Tensor};
use crate::tokenizer::PAD_ID;

/// Decoder start token.
pub const DECODER_START_ID: u32 = PAD_ID;

/// Final encoder hidden states for one input sequence.
///
/// The per-layer cross-attention keys and values are computed on first use
/// and kept alongside the states for the checkpoint that produced them.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    states: Tensor,
    memory: OnceLock<Arc<CrossMemory>>,
}

#[derive(Debug)]
struct CrossMemory {
    checkpoint: u64,
    /// (keys, values) per decoder layer.
    layers: Vec<(Tensor, Tensor)>,
}

impl PartialEq for EncoderStates {
    fn eq(&self, other: &Self) -> bool {
        self.states == other.states
    }
}

impl EncoderStates {
    pub fn new(states: Tensor) -> Result<Self> {
        if states.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "encoder states must be [seq_len × d_model], got {:?}",
                states.shape()
            )));
        }
        Ok(Self {
            states,
            memory: OnceLock::new(),
        })
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    pub fn seq_len(&self) -> usize {
        self.states.shape()[0]
    }

    /// Joins several encodings along the sequence axis, in the given order.
    pub fn concat(parts: &[&EncoderStates]) -> Result<Self> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &p.states).collect();
        let joined = Self::new(tensor::concat_rows(&tensors)?)?;
        // keys and values are row-wise projections, so cached blocks join too
        let memories: Option<Vec<&Arc<CrossMemory>>> =
            parts.iter().map(|p| p.memory.get()).collect();
        if let Some(memories) = memories {
            let id = memories[0].checkpoint;
            if memories.iter().all(|m| m.checkpoint == id) {
                let layers = (0..memories[0].layers.len())
                    .map(|l| {
                        let ks: Vec<&Tensor> = memories.iter().map(|m| &m.layers[l].0).collect();
                        let vs: Vec<&Tensor> = memories.iter().map(|m| &m.layers[l].1).collect();
                        Ok((tensor::concat_rows(&ks)?, tensor::concat_rows(&vs)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let _ = joined.memory.set(Arc::new(CrossMemory {
                    checkpoint: id,
                    layers,
                }));
            }
        }
        Ok(joined)
    }

    fn memory(&self, ckpt: &Checkpoint) -> Result<Arc<CrossMemory>> {
        if let Some(m) = self.memory.get() {
            if m.checkpoint == ckpt.id() {
                return Ok(m.clone());
            }
        }
        let layers = (0..ckpt.config().n_dec_layers)
            .map(|l| {
                let prefix = format!("decoder.layer.{l}.cross_attn");
                Ok((
                    matmul(&self.states, ckpt.get(&format!("{prefix}.k")))?,
                    matmul(&self.states, ckpt.get(&format!("{prefix}.v")))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let memory = Arc::new(CrossMemory {
            checkpoint: ckpt.id(),
            layers,
        });
        let _ = self.memory.set(memory.clone());
        Ok(memory)
    }
}

fn check_tokens(tokens: &[u32], vocab_size: usize) -> Result<()> {
    match tokens.iter().position(|&t| t as usize >= vocab_size) {
        Some(index) => Err(Error::Token {
            index,
            id: tokens[index],
            vocab_size,
        }),
        None => Ok(()),
    }
}

fn embed(ckpt: &Checkpoint, tokens: &[u32]) -> Tensor {
    let table = ckpt.get("embed_tokens");
    let d = ckpt.config().d_model;
    let mut data = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        data.extend_from_slice(table.row(t as usize));
    }
    Tensor::from_kernel(vec![tokens.len(), d], data)
}

struct PositionBias<'a> {
    table: &'a Tensor,
    bidirectional: bool,
}

enum KeyValues<'a> {
    /// Normalised inputs still to be projected.
    Inputs(&'a Tensor),
    Projected(&'a Tensor, &'a Tensor),
}

/// Multi-head attention. `queries` are already normalised.
fn attention(
    cfg: &ModelConfig,
    ckpt: &Checkpoint,
    prefix: &str,
    queries: &Tensor,
    keys_values: KeyValues<'_>,
    bias: Option<PositionBias<'_>>,
    causal: bool,
) -> Result<Tensor> {
    let q = matmul(queries, ckpt.get(&format!("{prefix}.q")))?;
    let projected;
    let (k, v) = match keys_values {
        KeyValues::Inputs(x) => {
            projected = (
                matmul(x, ckpt.get(&format!("{prefix}.k")))?,
                matmul(x, ckpt.get(&format!("{prefix}.v")))?,
            );
            (&projected.0, &projected.1)
        }
        KeyValues::Projected(k, v) => (k, v),
    };
    let (nq, nk) = (queries.rows(), k.rows());
    let (heads, dkv) = (cfg.n_heads, cfg.d_kv);
    let inner = cfg.inner_dim();

    // bucket per offset (key - query), offsets span -(nq-1)..=(nk-1)
    let buckets: Option<Vec<usize>> = bias.as_ref().map(|b| {
        (-(nq as i64 - 1)..nk as i64)
            .map(|rel| {
                relative_position_bucket(
                    rel,
                    b.bidirectional,
                    cfg.rel_buckets,
                    cfg.rel_max_distance,
                )
            })
            .collect()
    });

    let mut ctx = vec![0.0f32; nq * inner];
    let mut q_h = vec![0.0f32; nq * dkv];
    let mut k_t = vec![0.0f32; dkv * nk];
    let mut v_h = vec![0.0f32; nk * dkv];
    let mut scores = vec![0.0f32; nq * nk];
    let mut probs = vec![0.0f32; nq * nk];
    let mut ctx_h = vec![0.0f32; nq * dkv];
    for h in 0..heads {
        let cols = h * dkv..(h + 1) * dkv;
        for i in 0..nq {
            q_h[i * dkv..(i + 1) * dkv].copy_from_slice(&q.row(i)[cols.clone()]);
        }
        for j in 0..nk {
            v_h[j * dkv..(j + 1) * dkv].copy_from_slice(&v.row(j)[cols.clone()]);
            for (t, &x) in k.row(j)[cols.clone()].iter().enumerate() {
                k_t[t * nk + j] = x;
            }
        }
        // each score is the q·k dot product summed over t in order
        scores.fill(0.0);
        tensor::matmul_into(&q_h, &k_t, dkv, nk, &mut scores);
        probs.fill(0.0);
        for i in 0..nq {
            let n_keys = if causal { (i + 1).min(nk) } else { nk };
            let row = &mut scores[i * nk..i * nk + n_keys];
            if let (Some(b), Some(table)) = (&bias, &buckets) {
                for (j, s) in row.iter_mut().enumerate() {
                    *s += b.table.row(table[j + nq - 1 - i])[h];
                }
            }
            // masked keys keep probability 0
            tensor::softmax_into(row, &mut probs[i * nk..i * nk + n_keys]);
        }
        ctx_h.fill(0.0);
        tensor::matmul_into(&probs, &v_h, nk, dkv, &mut ctx_h);
        for i in 0..nq {
            ctx[i * inner + h * dkv..i * inner + (h + 1) * dkv]
                .copy_from_slice(&ctx_h[i * dkv..(i + 1) * dkv]);
        }
    }
    let ctx = Tensor::from_kernel(vec![nq, inner], ctx);
    matmul(&ctx, ckpt.get(&format!("{prefix}.o")))
}

fn feed_forward(cfg: &ModelConfig, ckpt: &Checkpoint, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let mut hidden = matmul(x, ckpt.get(&format!("{prefix}.wi")))?;
    cfg.activation.apply_in_place(&mut hidden);
    matmul(&hidden, ckpt.get(&format!("{prefix}.wo")))
}

/// Runs the encoder stack over `tokens`.
///
/// Sequences longer than `max_positions` are processed in full but logged
/// as a warning; relative-position buckets saturate past the trained range.
pub fn encode(ckpt: &Checkpoint, tokens: &[u32]) -> Result<EncoderStates> {
    let cfg = ckpt.config();
    if tokens.is_empty() {
        return Err(Error::Argument(
            "cannot encode an empty token sequence".into(),
        ));
    }
    check_tokens(tokens, cfg.vocab_size)?;
    if tokens.len() > cfg.max_positions {
        warn!(
            "encoder input of {} tokens exceeds max_positions {}; relative-position extrapolation is unreliable",
            tokens.len(),
            cfg.max_positions
        );
    }

    let rel = ckpt.get("encoder.rel_bias");
    let mut x = embed(ckpt, tokens);
    for layer in 0..cfg.n_enc_layers {
        let l = format!("encoder.layer.{layer}");
        let normed = rms_norm(&x, ckpt.get(&format!("{l}.self_attn_norm")), cfg.eps)?;
        let bias = PositionBias {
            table: rel,
            bidirectional: true,
        };
        let attn = attention(
            cfg,
            ckpt,
            &format!("{l}.self_attn"),
            &normed,
            KeyValues::Inputs(&normed),
            Some(bias),
            false,
        )?;
        x = tensor::add(&x, &attn)?;
        let normed = rms_norm(&x, ckpt.get(&format!("{l}.ffn_norm")), cfg.eps)?;
        x = tensor::add(&x, &feed_forward(cfg, ckpt, &format!("{l}.ffn"), &normed)?)?;
    }
    let states = EncoderStates::new(rms_norm(&x, ckpt.get("encoder.final_norm"), cfg.eps)?)?;
    states.memory(ckpt)?;
    Ok(states)
}

/// Logits at every decoder position: row `t` is the next-token distribution
/// after the start token and `prefix[..t]`. Shape `[(len(prefix)+1) × vocab]`.
pub fn decoder_logits(ckpt: &Checkpoint, enc: &EncoderStates, prefix: &[u32]) -> Result<Tensor> {
    let cfg = ckpt.config();
    check_tokens(prefix, cfg.vocab_size)?;
    if enc.states().last_dim() != cfg.d_model {
        return Err(Error::Shape(format!(
            "encoder states have width {} but d_model is {}",
            enc.states().last_dim(),
            cfg.d_model
        )));
    }
    let mut ids = Vec::with_capacity(prefix.len() + 1);
    ids.push(DECODER_START_ID);
    ids.extend_from_slice(prefix);

    let memory = enc.memory(ckpt)?;
    let rel = ckpt.get("decoder.rel_bias");
    let mut x = embed(ckpt, &ids);
    for layer in 0..cfg.n_dec_layers {
        let l = format!("decoder.layer.{layer}");
        let normed = rms_norm(&x, ckpt.get(&format!("{l}.self_attn_norm")), cfg.eps)?;
        let bias = PositionBias {
            table: rel,
            bidirectional: false,
        };
        let attn = attention(
            cfg,
            ckpt,
            &format!("{l}.self_attn"),
            &normed,
            KeyValues::Inputs(&normed),
            Some(bias),
            true,
        )?;
        x = tensor::add(&x, &attn)?;

        let normed = rms_norm(&x, ckpt.get(&format!("{l}.cross_attn_norm")), cfg.eps)?;
        let (k, v) = &memory.layers[layer];
        let cross = attention(
            cfg,
            ckpt,
            &format!("{l}.cross_attn"),
            &normed,
            KeyValues::Projected(k, v),
            None,
            false,
        )?;
        x = tensor::add(&x, &cross)?;

        let normed = rms_norm(&x, ckpt.get(&format!("{l}.ffn_norm")), cfg.eps)?;
        x = tensor::add(&x, &feed_forward(cfg, ckpt, &format!("{l}.ffn"), &normed)?)?;
    }
    let x = rms_norm(&x, ckpt.get("decoder.final_norm"), cfg.eps)?;
    matmul(&x, ckpt.get("lm_head"))
}

/// Pre-softmax logits for the token following `prefix`.
pub fn decode_step(ckpt: &Checkpoint, enc: &EncoderStates, prefix: &[u32]) -> Result<Tensor> {
    let all = decoder_logits(ckpt, enc, prefix)?;
    let last = all.row(all.rows() - 1).to_vec();
    Tensor::new(vec![last.len()], last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_toy;

    fn toy() -> Checkpoint {
        init_toy(&ModelConfig::toy(16, 2, 2), 42).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let ckpt = toy();
        let a = encode(&ckpt, &[5]).unwrap();
        assert_eq!(a.states().shape(), &[1, 16]);
        assert!(a.states().is_finite());
        let b = encode(&ckpt, &[5]).unwrap();
        assert!(a.states().bit_eq(b.states()));
    }

    #[test]
    fn encode_rejects_bad_tokens() {
        let ckpt = toy();
        assert!(matches!(
            encode(&ckpt, &[5, 271]),
            Err(Error::Token {
                index: 1,
                id: 271,
                ..
            })
        ));
        assert!(encode(&ckpt, &[]).is_err());
        let enc = encode(&ckpt, &[5]).unwrap();
        assert!(matches!(
            decode_step(&ckpt, &enc, &[3, 9999]),
            Err(Error::Token { index: 1, .. })
        ));
    }

    #[test]
    fn token_order_matters_to_the_encoder() {
        let ckpt = toy();
        let ab = encode(&ckpt, &[5, 6]).unwrap();
        let ba = encode(&ckpt, &[6, 5]).unwrap();
        assert!(!ab.states().bit_eq(ba.states()));
    }

    #[test]
    fn all_position_logits_agree_with_single_steps() {
        let ckpt = toy();
        let enc = encode(&ckpt, &[20, 30, 40]).unwrap();
        let prefix = [50, 60, 70];
        let all = decoder_logits(&ckpt, &enc, &prefix).unwrap();
        for t in 0..=prefix.len() {
            let step = decode_step(&ckpt, &enc, &prefix[..t]).unwrap();
            assert_eq!(step.data(), all.row(t));
        }
    }

    #[test]
    fn long_inputs_are_processed() {
        let mut cfg = ModelConfig::toy(8, 2, 1);
        cfg.max_positions = 4;
        let ckpt = init_toy(&cfg, 1).unwrap();
        let enc = encode(&ckpt, &[20; 9]).unwrap();
        assert_eq!(enc.seq_len(), 9);
    }
}
