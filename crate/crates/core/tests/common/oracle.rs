//! Scalar f64 reference implementations, written without the library's
//! kernels. Only the checkpoint's tensor names and the tokenizer ids are
//! shared with the engine.

#![allow(dead_code)]

use fusicl::model::Checkpoint;
use fusicl::tokenizer::PAD_ID;

pub type Matrix = Vec<Vec<f64>>;

/// Relative-position bucket, phrased as "largest bucket whose lower
/// threshold is ≤ distance" over the logarithmic thresholds.
pub fn bucket(
    relative_position: i64,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> usize {
    let (half, offset, distance) = if bidirectional {
        let half = num_buckets / 2;
        let offset = if relative_position > 0 { half } else { 0 };
        (half, offset, relative_position.unsigned_abs() as usize)
    } else {
        let d = if relative_position < 0 {
            (-relative_position) as usize
        } else {
            0
        };
        (num_buckets, 0, d)
    };
    let exact = half / 2;
    if distance < exact {
        return offset + distance;
    }
    // bucket exact + b covers distances with
    // floor(ln(d/exact) / ln(max/exact) * (half - exact)) == b
    let ratio = (distance as f64 / exact as f64).ln() / (max_distance as f64 / exact as f64).ln();
    let b = (ratio * (half - exact) as f64).floor() as usize;
    offset + (exact + b).min(half - 1)
}

pub fn tensor(ckpt: &Checkpoint, name: &str) -> (Vec<usize>, Vec<f64>) {
    let t = ckpt.get(name);
    (
        t.shape().to_vec(),
        t.data().iter().map(|&v| v as f64).collect(),
    )
}

fn linear(x: &Matrix, ckpt: &Checkpoint, name: &str) -> Matrix {
    let (shape, w) = tensor(ckpt, name);
    let (rows_in, cols) = (shape[0], shape[1]);
    x.iter()
        .map(|row| {
            assert_eq!(row.len(), rows_in);
            (0..cols)
                .map(|j| (0..rows_in).map(|t| row[t] * w[t * cols + j]).sum())
                .collect()
        })
        .collect()
}

fn rms(x: &Matrix, ckpt: &Checkpoint, name: &str) -> Matrix {
    let (_, g) = tensor(ckpt, name);
    let eps = ckpt.config().eps as f64;
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let denom = (ms + eps).sqrt();
            row.iter().zip(&g).map(|(v, gi)| v / denom * gi).collect()
        })
        .collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn attention(
    ckpt: &Checkpoint,
    prefix: &str,
    q_in: &Matrix,
    kv_in: &Matrix,
    bias: Option<(&str, bool)>,
    causal: bool,
) -> Matrix {
    let cfg = ckpt.config();
    let q = linear(q_in, ckpt, &format!("{prefix}.q"));
    let k = linear(kv_in, ckpt, &format!("{prefix}.k"));
    let v = linear(kv_in, ckpt, &format!("{prefix}.v"));
    let rel = bias.map(|(name, bidir)| (tensor(ckpt, name).1, bidir));
    let mut ctx = vec![vec![0.0; cfg.n_heads * cfg.d_kv]; q.len()];
    for h in 0..cfg.n_heads {
        let cols = h * cfg.d_kv..(h + 1) * cfg.d_kv;
        for i in 0..q.len() {
            let keys: Vec<usize> = (0..k.len()).filter(|&j| !causal || j <= i).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| {
                    let mut s: f64 = cols.clone().map(|c| q[i][c] * k[j][c]).sum();
                    if let Some((table, bidir)) = &rel {
                        let b = bucket(
                            j as i64 - i as i64,
                            *bidir,
                            cfg.rel_buckets,
                            cfg.rel_max_distance,
                        );
                        s += table[b * cfg.n_heads + h];
                    }
                    s
                })
                .collect();
            let p = softmax(&scores);
            for c in cols.clone() {
                ctx[i][c] = keys.iter().zip(&p).map(|(&j, pj)| pj * v[j][c]).sum();
            }
        }
    }
    linear(&ctx, ckpt, &format!("{prefix}.o"))
}

fn ffn(ckpt: &Checkpoint, prefix: &str, x: &Matrix) -> Matrix {
    let act = ckpt.config().activation;
    let mut h = linear(x, ckpt, &format!("{prefix}.wi"));
    for row in &mut h {
        for v in row.iter_mut() {
            *v = match act {
                fusicl::tensor::Activation::Relu => v.max(0.0),
                fusicl::tensor::Activation::Gelu => {
                    0.5 * *v
                        * (1.0
                            + ((2.0 / std::f64::consts::PI).sqrt() * (*v + 0.044715 * v.powi(3)))
                                .tanh())
                }
            };
        }
    }
    linear(&h, ckpt, &format!("{prefix}.wo"))
}

fn embed(ckpt: &Checkpoint, ids: &[u32]) -> Matrix {
    let (shape, e) = tensor(ckpt, "embed_tokens");
    let d = shape[1];
    ids.iter()
        .map(|&t| e[t as usize * d..(t as usize + 1) * d].to_vec())
        .collect()
}

pub fn encode(ckpt: &Checkpoint, ids: &[u32]) -> Matrix {
    let mut x = embed(ckpt, ids);
    for l in 0..ckpt.config().n_enc_layers {
        let p = format!("encoder.layer.{l}");
        let n = rms(&x, ckpt, &format!("{p}.self_attn_norm"));
        x = add(
            &x,
            &attention(
                ckpt,
                &format!("{p}.self_attn"),
                &n,
                &n,
                Some(("encoder.rel_bias", true)),
                false,
            ),
        );
        let n = rms(&x, ckpt, &format!("{p}.ffn_norm"));
        x = add(&x, &ffn(ckpt, &format!("{p}.ffn"), &n));
    }
    rms(&x, ckpt, "encoder.final_norm")
}

/// Logits for the token after `prefix`, decoding from the start token.
pub fn next_logits(ckpt: &Checkpoint, enc: &Matrix, prefix: &[u32]) -> Vec<f64> {
    let mut ids = vec![PAD_ID];
    ids.extend_from_slice(prefix);
    let mut x = embed(ckpt, &ids);
    for l in 0..ckpt.config().n_dec_layers {
        let p = format!("decoder.layer.{l}");
        let n = rms(&x, ckpt, &format!("{p}.self_attn_norm"));
        x = add(
            &x,
            &attention(
                ckpt,
                &format!("{p}.self_attn"),
                &n,
                &n,
                Some(("decoder.rel_bias", false)),
                true,
            ),
        );
        let n = rms(&x, ckpt, &format!("{p}.cross_attn_norm"));
        x = add(
            &x,
            &attention(ckpt, &format!("{p}.cross_attn"), &n, enc, None, false),
        );
        let n = rms(&x, ckpt, &format!("{p}.ffn_norm"));
        x = add(&x, &ffn(ckpt, &format!("{p}.ffn"), &n));
    }
    let x = rms(&x, ckpt, "decoder.final_norm");
    linear(&x[x.len() - 1..].to_vec(), ckpt, "lm_head").remove(0)
}
