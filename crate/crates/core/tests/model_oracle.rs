//! The tape-based model against a loop-by-loop reimplementation of the same
//! network, plus structural properties of the loss and its gradients.

mod common;

use common::*;
use tunesmith_core::model::{
    backward, forward_loss, joint_loss_and_gradients, Example, Mode, ModelConfig, ModelParams,
};

type M = Vec<Vec<f64>>;

fn get(p: &ModelParams, name: &str) -> M {
    p.get(name).unwrap().to_rows()
}

fn matmul(a: &M, b: &M) -> M {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for t in 0..k {
                out[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    out
}

fn affine(p: &ModelParams, x: &M, w: &str, b: &str) -> M {
    let bias = &get(p, b)[0];
    let mut y = matmul(x, &get(p, w));
    for row in &mut y {
        for (v, c) in row.iter_mut().zip(bias) {
            *v += c;
        }
    }
    y
}

fn layer_norm(p: &ModelParams, x: &M, prefix: &str) -> M {
    let g = &get(p, &format!("{prefix}.g"))[0];
    let b = &get(p, &format!("{prefix}.b"))[0];
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            row.iter().enumerate().map(|(c, v)| (v - mean) / (var + 1e-5).sqrt() * g[c] + b[c]).collect()
        })
        .collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Multi-head attention with an `allowed(i, j)` predicate instead of a mask matrix.
fn mha(
    p: &ModelParams,
    heads: usize,
    prefix: &str,
    q_in: &M,
    kv_in: &M,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> (M, M) {
    let q = affine(p, q_in, &format!("{prefix}.wq"), &format!("{prefix}.bq"));
    let k = affine(p, kv_in, &format!("{prefix}.wk"), &format!("{prefix}.bk"));
    let v = affine(p, kv_in, &format!("{prefix}.wv"), &format!("{prefix}.bv"));
    let d = q[0].len();
    let dk = d / heads;
    let (n, m) = (q.len(), k.len());
    let mut ctx = vec![vec![0.0; d]; n];
    let mut avg = vec![vec![0.0; m]; n];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..n {
            let scores: Vec<Option<f64>> = (0..m)
                .map(|j| {
                    allowed(i, j).then(|| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                })
                .collect();
            let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().flatten().map(|s| (s - max).exp()).sum();
            for j in 0..m {
                let a = scores[j].map_or(0.0, |s| (s - max).exp() / z);
                avg[i][j] += a / heads as f64;
                for c in cols.clone() {
                    ctx[i][c] += a * v[j][c];
                }
            }
        }
    }
    (affine(p, &ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo")), avg)
}

fn feed_forward(p: &ModelParams, x: &M, prefix: &str) -> M {
    let mut h = affine(p, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
    for row in &mut h {
        for v in row.iter_mut() {
            *v = v.max(0.0);
        }
    }
    affine(p, &h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

fn embed(p: &ModelParams, stack: &str, ids: &[usize], positions: &[usize], d: usize) -> M {
    let table = get(p, &format!("{stack}.embed"));
    ids.iter()
        .zip(positions)
        .map(|(&id, &pos)| {
            (0..d)
                .map(|i| {
                    let pair = (i - i % 2) as f64;
                    let angle = pos as f64 / 10000f64.powf(pair / d as f64);
                    let pe = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                    table[id][i] * (d as f64).sqrt() + pe
                })
                .collect()
        })
        .collect()
}

fn sentence_of(ids: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut s = 0;
    for &t in ids {
        out.push(s);
        if t == SEP {
            s += 1;
        }
    }
    out
}

fn stacks(mode: Mode) -> (&'static str, &'static str) {
    match mode {
        Mode::Lyric2Lyric => ("lyric.enc", "lyric.dec"),
        Mode::Melody2Melody => ("melody.enc", "melody.dec"),
        Mode::Lyric2Melody => ("lyric.enc", "melody.dec"),
        Mode::Melody2Lyric => ("melody.enc", "lyric.dec"),
    }
}

/// Returns (summed NLL, token count, optional per-example L_att, last-layer attention).
fn oracle_example(p: &ModelParams, cfg: &ModelConfig, mode: Mode, ex: &Example) -> (f64, usize, Option<f64>, M) {
    let (enc_s, dec_s) = stacks(mode);
    let d = cfg.hidden;
    let src_pos: Vec<usize> = (0..ex.source.len()).collect();
    let mut h = embed(p, enc_s, &ex.source, &src_pos, d);
    for l in 0..cfg.layers {
        let pre = format!("{enc_s}.layer{l}");
        let n = layer_norm(p, &h, &format!("{pre}.ln1"));
        h = add(&h, &mha(p, cfg.heads, &format!("{pre}.self"), &n, &n, &|_, _| true).0);
        let n = layer_norm(p, &h, &format!("{pre}.ln2"));
        h = add(&h, &feed_forward(p, &n, &format!("{pre}.ff")));
    }
    let enc = layer_norm(p, &h, &format!("{enc_s}.ln"));

    let src_sent = sentence_of(&ex.source);
    let tgt_sent = ex.target_sentence_ids.clone();
    let mut h = embed(p, dec_s, &ex.decoder_input, &ex.target_positions, d);
    let mut attn = Vec::new();
    for l in 0..cfg.layers {
        let pre = format!("{dec_s}.layer{l}");
        let n = layer_norm(p, &h, &format!("{pre}.ln1"));
        h = add(&h, &mha(p, cfg.heads, &format!("{pre}.self"), &n, &n, &|i, j| j <= i).0);
        let n = layer_norm(p, &h, &format!("{pre}.ln2"));
        let (c, a) = mha(p, cfg.heads, &format!("{pre}.cross"), &n, &enc, &|i, j| tgt_sent[i] == src_sent[j]);
        h = add(&h, &c);
        attn = a;
        let n = layer_norm(p, &h, &format!("{pre}.ln3"));
        h = add(&h, &feed_forward(p, &n, &format!("{pre}.ff")));
    }
    let h = layer_norm(p, &h, &format!("{dec_s}.ln"));
    let logits = affine(p, &h, &format!("{dec_s}.out.w"), &format!("{dec_s}.out.b"));
    let mut nll = 0.0;
    for (row, &t) in logits.iter().zip(&ex.target) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        nll += lse - row[t];
    }
    let l_att = ex.attention_target.as_ref().map(|t| {
        // mean |A - u| inside each sentence block, then averaged over sentences
        let sentences = tgt_sent.last().unwrap() + 1;
        let mut total = 0.0;
        for s in 0..sentences {
            let mut sum = 0.0;
            let mut cells = 0;
            for i in 0..attn.len() {
                for j in 0..attn[0].len() {
                    if tgt_sent[i] == s && src_sent[j] == s {
                        sum += (attn[i][j] - t.u[(i, j)]).abs();
                        cells += 1;
                    }
                }
            }
            total += sum / cells as f64;
        }
        total / sentences as f64
    });
    (nll, ex.target.len(), l_att, attn)
}

fn oracle_loss(p: &ModelParams, cfg: &ModelConfig, mode: Mode, batch: &[Example]) -> (f64, Vec<M>) {
    let mut nll = 0.0;
    let mut tokens = 0;
    let mut atts = Vec::new();
    let mut attn = Vec::new();
    for ex in batch {
        let (n, t, a, m) = oracle_example(p, cfg, mode, ex);
        nll += n;
        tokens += t;
        atts.extend(a);
        attn.push(m);
    }
    let mut loss = nll / tokens as f64;
    if !atts.is_empty() {
        loss += cfg.alpha * atts.iter().sum::<f64>() / atts.len() as f64;
    }
    (loss, attn)
}

#[test]
fn forward_matches_loop_oracle_on_every_mode() {
    let cfg = tiny_config(2, 16, 2, 32);
    let p = ModelParams::init(&cfg, 21).unwrap();
    for (mode, batch) in four_batches() {
        let r = forward_loss(&p, &cfg, mode, &batch).unwrap();
        let (loss, attn) = oracle_loss(&p, &cfg, mode, &batch);
        assert!((r.loss - loss).abs() < 1e-9, "{mode}: {} vs {loss}", r.loss);
        for (a, b) in r.attention.iter().zip(&attn) {
            assert!(a.max_abs_diff(&tunesmith_core::tensor::Matrix::from_rows(b)) < 1e-9);
        }
    }
}

#[test]
fn uniform_output_gives_log_vocab_nll() {
    let mut cfg = tiny_config(1, 8, 2, 16);
    cfg.alpha = 0.0;
    let mut p = ModelParams::init(&cfg, 2).unwrap();
    for name in ["melody.dec.out.w", "melody.dec.out.b"] {
        p.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let batches = four_batches();
    let r = forward_loss(&p, &cfg, Mode::Lyric2Melody, &batches[2].1).unwrap();
    assert!((r.nll - (10f64).ln()).abs() < 1e-12);
    assert_eq!(r.loss, r.nll);
    assert!(r.l_att.is_some(), "regularizer is still reported with alpha = 0");
}

#[test]
fn attention_rows_normalized_and_cross_sentence_zero() {
    let cfg = tiny_config(2, 16, 2, 32);
    let p = ModelParams::init(&cfg, 3).unwrap();
    for (mode, batch) in four_batches() {
        let r = forward_loss(&p, &cfg, mode, &batch).unwrap();
        for (a, ex) in r.attention.iter().zip(&batch) {
            let src = sentence_of(&ex.source);
            for i in 0..a.rows {
                assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..a.cols {
                    if ex.target_sentence_ids[i] != src[j] {
                        assert_eq!(a[(i, j)], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn cross_modal_modes_touch_only_their_stacks() {
    let cfg = tiny_config(2, 16, 2, 32);
    let p = ModelParams::init(&cfg, 4).unwrap();
    for (mode, batch) in four_batches() {
        let (enc, dec) = stacks(mode);
        let (_, grads) = backward(&p, &cfg, mode, &batch).unwrap();
        for (i, g) in grads.grads.iter().enumerate() {
            let stack = p.stack_of(i);
            let zero = g.data.iter().all(|&v| v == 0.0);
            if stack != enc && stack != dec {
                assert!(zero, "{mode} leaked gradient into {}", p.names()[i]);
            }
        }
        let touched = |s: &str| {
            grads.grads.iter().enumerate().any(|(i, g)| p.stack_of(i) == s && g.data.iter().any(|&v| v != 0.0))
        };
        assert!(touched(enc) && touched(dec));
    }
}

#[test]
fn joint_loss_is_sum_of_terms() {
    let cfg = tiny_config(2, 16, 2, 32);
    let p = ModelParams::init(&cfg, 5).unwrap();
    let batches = four_batches();
    let terms: Vec<(Mode, &[Example])> = batches.iter().map(|(m, b)| (*m, b.as_slice())).collect();
    let (total, reports, _, _) = joint_loss_and_gradients(&p, &cfg, &terms, None).unwrap();
    let separate: f64 = batches.iter().map(|(m, b)| forward_loss(&p, &cfg, *m, b).unwrap().loss).sum();
    assert!((total - separate).abs() < 1e-9);
    assert_eq!(reports.len(), 4);
}

#[test]
fn alpha_zero_is_pure_nll() {
    let mut cfg = tiny_config(1, 8, 1, 8);
    cfg.alpha = 0.0;
    let p = ModelParams::init(&cfg, 6).unwrap();
    let batches = four_batches();
    let r = forward_loss(&p, &cfg, Mode::Melody2Lyric, &batches[3].1).unwrap();
    assert_eq!(r.loss, r.nll);
    cfg.alpha = 0.5;
    let r2 = forward_loss(&p, &cfg, Mode::Melody2Lyric, &batches[3].1).unwrap();
    assert!((r2.loss - r2.nll - 0.5 * r2.l_att.unwrap()).abs() < 1e-12);
    assert!(r2.l_att.unwrap() >= 0.0 && r2.l_att.unwrap() <= 1.0);
}

#[test]
fn overlong_input_is_rejected() {
    let mut cfg = tiny_config(1, 8, 1, 8);
    cfg.max_len = 4;
    let p = ModelParams::init(&cfg, 7).unwrap();
    let batches = four_batches();
    assert!(matches!(
        forward_loss(&p, &cfg, Mode::Lyric2Melody, &batches[2].1),
        Err(tunesmith_core::Error::TooLong { .. })
    ));
}
