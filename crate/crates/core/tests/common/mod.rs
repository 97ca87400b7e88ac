//! Shared fixtures and index-level reference implementations for the
//! integration tests. The references use plain nested loops and never call
//! into the tape.

#![allow(dead_code)]

use tegaarec::data::{ItemId, Session, SessionStore, UserId};
use tegaarec::model::{FusionSlots, LayerSlots, MhgatSlots, Model};

pub type Mat = Vec<Vec<f64>>;

pub fn param(model: &Model, slot: usize) -> Mat {
    let t = model.params.get(slot);
    let (r, c) = (t.rows(), t.cols());
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn vector(model: &Model, slot: usize) -> Vec<f64> {
    model.params.get(slot).data().to_vec()
}

fn affine(x: &[f64], w: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for c in 0..cols {
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate() {
            acc += xi * w[i][c];
        }
        if let Some(b) = b {
            acc += b[c];
        }
        out[c] = acc;
    }
    out
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &x in v {
        if x > m {
            m = x;
        }
    }
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn mhgat(model: &Model, s: &MhgatSlots, query: &[f64], rows: &Mat) -> Vec<f64> {
    let d = model.config.dim;
    let heads = model.config.heads;
    let dk = d / heads;
    let wq = param(model, s.query);
    let wk = param(model, s.key);
    let q = affine(query, &wq, None);
    let keys: Mat = rows.iter().map(|r| affine(r, &wk, None)).collect();
    let mut concat = vec![0.0; d];
    for h in 0..heads {
        let mut scores = Vec::with_capacity(rows.len());
        for k in &keys {
            let mut dot = 0.0;
            for j in h * dk..(h + 1) * dk {
                dot += q[j] * k[j];
            }
            scores.push(dot / (dk as f64).sqrt());
        }
        let a = softmax(&scores);
        for j in h * dk..(h + 1) * dk {
            let mut acc = 0.0;
            for (r, row) in rows.iter().enumerate() {
                acc += a[r] * row[j];
            }
            concat[j] = acc;
        }
    }
    affine(&concat, &param(model, s.out), Some(&vector(model, s.out_bias)))
}

pub fn tensor_fusion(model: &Model, s: &FusionSlots, h_s: &[f64], emb: &[f64]) -> Vec<f64> {
    let mut joined = h_s.to_vec();
    joined.extend_from_slice(emb);
    affine(&joined, &param(model, s.weight), Some(&vector(model, s.bias)))
        .into_iter()
        .map(|v| if v > 0.0 { v } else { 0.0 })
        .collect()
}

/// `scores[j]` is the dot product of `h` with item `j + 1`.
pub fn score_items(model: &Model, h: &[f64]) -> Vec<f64> {
    let table = param(model, model.params.layout.item_embedding);
    (1..table.len())
        .map(|i| {
            let mut acc = 0.0;
            for (a, b) in table[i].iter().zip(h) {
                acc += a * b;
            }
            acc
        })
        .collect()
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (0..x.len())
        .map(|j| (x[j] - mean) / (var + eps).sqrt() * gain[j] + bias[j])
        .collect()
}

fn encoder_layer(model: &Model, l: &LayerSlots, x: &Mat) -> Mat {
    let d = model.config.dim;
    let heads = model.config.heads;
    let dk = d / heads;
    let eps = model.config.layer_norm_eps;
    let proj = |w: usize, b: usize| -> Mat {
        let (w, b) = (param(model, w), vector(model, b));
        x.iter().map(|r| affine(r, &w, Some(&b))).collect()
    };
    let (q, k, v) = (proj(l.wq, l.bq), proj(l.wk, l.bk), proj(l.wv, l.bv));
    let n = x.len();
    let mut concat = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|t| {
                    let mut dot = 0.0;
                    for j in h * dk..(h + 1) * dk {
                        dot += q[i][j] * k[t][j];
                    }
                    dot / (dk as f64).sqrt()
                })
                .collect();
            let a = softmax(&scores);
            for j in h * dk..(h + 1) * dk {
                concat[i][j] = (0..n).map(|t| a[t] * v[t][j]).sum();
            }
        }
    }
    let (wo, bo) = (param(model, l.wo), vector(model, l.bo));
    let (g1, b1) = (vector(model, l.ln1_gain), vector(model, l.ln1_bias));
    let (f1, fb1) = (param(model, l.ff1), vector(model, l.ff1_bias));
    let (f2, fb2) = (param(model, l.ff2), vector(model, l.ff2_bias));
    let (g2, b2) = (vector(model, l.ln2_gain), vector(model, l.ln2_bias));
    (0..n)
        .map(|i| {
            let attn = affine(&concat[i], &wo, Some(&bo));
            let r1: Vec<f64> = (0..d).map(|j| x[i][j] + attn[j]).collect();
            let x1 = layer_norm(&r1, &g1, &b1, eps);
            let hidden: Vec<f64> = affine(&x1, &f1, Some(&fb1)).into_iter().map(|v| v.max(0.0)).collect();
            let ff = affine(&hidden, &f2, Some(&fb2));
            let r2: Vec<f64> = (0..d).map(|j| x1[j] + ff[j]).collect();
            layer_norm(&r2, &g2, &b2, eps)
        })
        .collect()
}

pub fn sinusoid(pos: usize, j: usize, dim: usize) -> f64 {
    let angle = pos as f64 / 10000f64.powf((2 * (j / 2)) as f64 / dim as f64);
    if j % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

pub fn transformer_encoder(model: &Model, items: &[ItemId]) -> Mat {
    let c = &model.config;
    let start = items.len().saturating_sub(c.max_len);
    let table = param(model, model.params.layout.item_embedding);
    let mut x: Mat = items[start..]
        .iter()
        .enumerate()
        .map(|(pos, it)| {
            let mut row = table[it.0 as usize].clone();
            if c.ablations.with_pe {
                for (j, v) in row.iter_mut().enumerate() {
                    *v += sinusoid(pos, j, c.dim);
                }
            }
            row
        })
        .collect();
    for l in &model.params.layout.layers {
        x = encoder_layer(model, l, &x);
    }
    x
}

pub fn ids(v: &[u64]) -> Vec<ItemId> {
    v.iter().map(|&i| ItemId(i)).collect()
}

/// Store from `(user, week, items)` triples; indices follow week order.
pub fn store(rows: &[(u64, i64, Vec<u64>)], edges: &[(u64, u64)]) -> SessionStore {
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(|r| (r.0, r.1));
    let mut sessions = Vec::new();
    let mut last: Option<u64> = None;
    let mut index = 0;
    for (u, w, items) in sorted {
        index = if last == Some(u) { index + 1 } else { 1 };
        last = Some(u);
        sessions.push(Session {
            owner: UserId(u),
            index,
            week: w,
            items: ids(&items),
        });
    }
    SessionStore::from_sessions(sessions, edges.iter().map(|&(a, b)| (UserId(a), UserId(b)))).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
