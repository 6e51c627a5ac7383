//! The generation network: a small pre-LayerNorm causal transformer with
//! learned token/position embeddings, a soft-prompt prefix, a logit head
//! and a value head, all stored in one flat `Vec<f64>`.
//!
//! Forward passes cache every intermediate needed by the handwritten
//! backward pass; `backward` accumulates parameter gradients into a flat
//! buffer with the same layout as the parameters. Keeping both passes in
//! plain code (rather than an autodiff framework) is what makes the
//! finite-difference gradient check meaningful.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};

use super::{ArchConfig, BOS_TOKEN, SOFT_PROMPT_LEN, VOCAB_SIZE};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub off: usize,
    pub len: usize,
}

impl Span {
    fn slice<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.len]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockSpans {
    pub ln1_g: Span,
    pub ln1_b: Span,
    pub wq: Span,
    pub bq: Span,
    pub wk: Span,
    pub bk: Span,
    pub wv: Span,
    pub bv: Span,
    pub wo: Span,
    pub bo: Span,
    pub ln2_g: Span,
    pub ln2_b: Span,
    pub w1: Span,
    pub b1: Span,
    pub w2: Span,
    pub b2: Span,
}

/// Where each named tensor lives inside the flat parameter vector.
/// Weight matrices are row-major `[fan_in][fan_out]` so activations
/// multiply on the left.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: Span,
    pub pos_emb: Span,
    pub soft_prompt: Span,
    pub blocks: Vec<BlockSpans>,
    pub lnf_g: Span,
    pub lnf_b: Span,
    pub out_w: Span,
    pub out_b: Span,
    pub val_w: Span,
    pub val_b: Span,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Layout {
        let d = arch.width;
        let f = 4 * d;
        let p_max = arch.context_positions();
        let mut off = 0usize;
        let mut take = |len: usize| {
            let s = Span { off, len };
            off += len;
            s
        };
        let tok_emb = take(VOCAB_SIZE * d);
        let pos_emb = take(p_max * d);
        let soft_prompt = take(SOFT_PROMPT_LEN * d);
        let blocks = (0..arch.layers)
            .map(|_| BlockSpans {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let out_w = take(d * VOCAB_SIZE);
        let out_b = take(VOCAB_SIZE);
        let val_w = take(d);
        let val_b = take(1);
        Layout {
            tok_emb,
            pos_emb,
            soft_prompt,
            blocks,
            lnf_g,
            lnf_b,
            out_w,
            out_b,
            val_w,
            val_b,
            total: off,
        }
    }

    /// Named shapes, in layout order, for checkpoint metadata.
    pub fn shapes(&self, arch: &ArchConfig) -> Vec<(String, Vec<usize>)> {
        let d = arch.width;
        let f = 4 * d;
        let mut out = vec![
            ("tok_emb".to_string(), vec![VOCAB_SIZE, d]),
            ("pos_emb".to_string(), vec![arch.context_positions(), d]),
            ("soft_prompt".to_string(), vec![SOFT_PROMPT_LEN, d]),
        ];
        for l in 0..arch.layers {
            for (name, shape) in [
                ("ln1_g", vec![d]),
                ("ln1_b", vec![d]),
                ("wq", vec![d, d]),
                ("bq", vec![d]),
                ("wk", vec![d, d]),
                ("bk", vec![d]),
                ("wv", vec![d, d]),
                ("bv", vec![d]),
                ("wo", vec![d, d]),
                ("bo", vec![d]),
                ("ln2_g", vec![d]),
                ("ln2_b", vec![d]),
                ("w1", vec![d, f]),
                ("b1", vec![f]),
                ("w2", vec![f, d]),
                ("b2", vec![d]),
            ] {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out.push(("lnf_g".to_string(), vec![d]));
        out.push(("lnf_b".to_string(), vec![d]));
        out.push(("out_w".to_string(), vec![d, VOCAB_SIZE]));
        out.push(("out_b".to_string(), vec![VOCAB_SIZE]));
        out.push(("val_w".to_string(), vec![d]));
        out.push(("val_b".to_string(), vec![1]));
        out
    }
}

fn view2(p: &[f64], s: Span, r: usize, c: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((r, c), s.slice(p)).expect("span matches shape")
}

fn view1(p: &[f64], s: Span) -> ArrayView1<'_, f64> {
    ArrayView1::from_shape(s.len, s.slice(p)).expect("span matches shape")
}

fn acc(grad: &mut [f64], s: Span, local: &[f64]) {
    debug_assert_eq!(s.len, local.len());
    for (g, l) in grad[s.off..s.off + s.len].iter_mut().zip(local) {
        *g += l;
    }
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let x2 = x * x;
    let u = GELU_C * (x + GELU_A * x * x2);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x2)
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

/// y[i] = g ⊙ (x[i] − mean) / sqrt(var + eps) + b, per row.
fn layernorm(x: &Array2<f64>, g: ArrayView1<f64>, b: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (rows, d) = x.dim();
    let mut xhat = Array2::zeros((rows, d));
    let mut y = Array2::zeros((rows, d));
    let mut rstd = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[(i, j)] = h;
            y[(i, j)] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Standard layernorm backward; returns dx and accumulates dg/db.
fn layernorm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    g: ArrayView1<f64>,
    dg: &mut [f64],
    db: &mut [f64],
) -> Array2<f64> {
    let (rows, d) = dy.dim();
    let mut dx = Array2::zeros((rows, d));
    for i in 0..rows {
        let mut m1 = 0.0; // mean(dy ⊙ g)
        let mut m2 = 0.0; // mean(dy ⊙ g ⊙ xhat)
        for j in 0..d {
            let dxhat = dy[(i, j)] * g[j];
            m1 += dxhat;
            m2 += dxhat * cache.xhat[(i, j)];
            dg[j] += dy[(i, j)] * cache.xhat[(i, j)];
            db[j] += dy[(i, j)];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            let dxhat = dy[(i, j)] * g[j];
            dx[(i, j)] = cache.rstd[i] * (dxhat - m1 - cache.xhat[(i, j)] * m2);
        }
    }
    dx
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    x.dot(&w) + &b
}

struct BlockCache {
    ln1: LnCache,
    xh1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    att: Vec<Array2<f64>>, // per-head post-softmax probabilities, S×S
    att_out: Array2<f64>,  // concatenated head outputs before Wo
    ln2: LnCache,
    xh2: Array2<f64>,
    h_pre: Array2<f64>,
    h_act: Array2<f64>,
}

/// Everything a loss needs from one context: per-position logits and
/// value predictions, plus the caches for `backward`.
pub(crate) struct NetOutput {
    pub logits: Array2<f64>,
    pub values: Vec<f64>,
    tokens: Vec<u8>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    h_final: Array2<f64>,
}

impl NetOutput {
    pub fn seq_len(&self) -> usize {
        self.values.len()
    }
}

/// Runs the network over soft prompt + BOS + `prefix` (the residues
/// generated so far). Row `SOFT_PROMPT_LEN + t` of the output holds the
/// next-token distribution and value after consuming `prefix[..t]`.
pub(crate) fn forward(arch: &ArchConfig, params: &[f64], prefix: &[u8]) -> NetOutput {
    let layout = Layout::new(arch);
    let d = arch.width;
    let heads = arch.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut tokens = Vec::with_capacity(prefix.len() + 1);
    tokens.push(BOS_TOKEN);
    tokens.extend_from_slice(prefix);
    let s_len = SOFT_PROMPT_LEN + tokens.len();
    assert!(
        s_len <= arch.context_positions(),
        "context of {s_len} exceeds the {} learned positions",
        arch.context_positions()
    );

    let tok_emb = view2(params, layout.tok_emb, VOCAB_SIZE, d);
    let pos_emb = view2(params, layout.pos_emb, arch.context_positions(), d);
    let soft = view2(params, layout.soft_prompt, SOFT_PROMPT_LEN, d);

    let mut x = Array2::zeros((s_len, d));
    for i in 0..s_len {
        let base = if i < SOFT_PROMPT_LEN {
            soft.row(i)
        } else {
            tok_emb.row(tokens[i - SOFT_PROMPT_LEN] as usize)
        };
        for j in 0..d {
            x[(i, j)] = base[j] + pos_emb[(i, j)];
        }
    }
    let mut blocks = Vec::with_capacity(arch.layers);
    for b in &layout.blocks {
        let x_in = x.clone();
        let (xh1, ln1) = layernorm(&x, view1(params, b.ln1_g), view1(params, b.ln1_b));
        let q = linear(&xh1, view2(params, b.wq, d, d), view1(params, b.bq));
        let k = linear(&xh1, view2(params, b.wk, d, d), view1(params, b.bk));
        let v = linear(&xh1, view2(params, b.wv, d, d), view1(params, b.bv));

        let mut att = Vec::with_capacity(heads);
        let mut att_out = Array2::zeros((s_len, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t());
            scores *= scale;
            // Causal mask + row softmax.
            let mut probs = Array2::zeros((s_len, s_len));
            for i in 0..s_len {
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    max = max.max(scores[(i, j)]);
                }
                let mut z = 0.0;
                for j in 0..=i {
                    let e = (scores[(i, j)] - max).exp();
                    probs[(i, j)] = e;
                    z += e;
                }
                for j in 0..=i {
                    probs[(i, j)] /= z;
                }
            }
            let oh = probs.dot(&vh);
            att_out.slice_mut(cols).assign(&oh);
            att.push(probs);
        }
        let proj = linear(&att_out, view2(params, b.wo, d, d), view1(params, b.bo));
        let x_mid = &x_in + &proj;

        let (xh2, ln2) = layernorm(&x_mid, view1(params, b.ln2_g), view1(params, b.ln2_b));
        let h_pre = linear(&xh2, view2(params, b.w1, d, 4 * d), view1(params, b.b1));
        let h_act = h_pre.mapv(gelu);
        let mlp = linear(&h_act, view2(params, b.w2, 4 * d, d), view1(params, b.b2));
        x = &x_mid + &mlp;

        blocks.push(BlockCache {
            ln1,
            xh1,
            q,
            k,
            v,
            att,
            att_out,
            ln2,
            xh2,
            h_pre,
            h_act,
        });
    }

    let (h_final, lnf) = layernorm(&x, view1(params, layout.lnf_g), view1(params, layout.lnf_b));
    let logits = linear(
        &h_final,
        view2(params, layout.out_w, d, VOCAB_SIZE),
        view1(params, layout.out_b),
    );
    let val_w = view1(params, layout.val_w);
    let val_b = params[layout.val_b.off];
    let values: Vec<f64> = (0..s_len)
        .map(|i| h_final.row(i).dot(&val_w) + val_b)
        .collect();

    NetOutput {
        logits,
        values,
        tokens,
        blocks,
        lnf,
        h_final,
    }
}

/// Accumulates dLoss/dparams into `grad` given upstream gradients on the
/// logits and value outputs of a cached forward pass.
pub(crate) fn backward(
    arch: &ArchConfig,
    params: &[f64],
    out: &NetOutput,
    dlogits: &Array2<f64>,
    dvalues: &[f64],
    grad: &mut [f64],
) {
    let layout = Layout::new(arch);
    debug_assert_eq!(grad.len(), layout.total);
    let d = arch.width;
    let heads = arch.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let s_len = out.seq_len();

    // Output heads.
    let out_w = view2(params, layout.out_w, d, VOCAB_SIZE);
    let val_w = view1(params, layout.val_w);
    let mut dh_final = dlogits.dot(&out_w.t());
    for (i, dv) in dvalues.iter().enumerate() {
        if *dv != 0.0 {
            for j in 0..d {
                dh_final[(i, j)] += dv * val_w[j];
            }
            let row = out.h_final.row(i);
            let slice = &mut grad[layout.val_w.off..layout.val_w.off + d];
            for j in 0..d {
                slice[j] += dv * row[j];
            }
            grad[layout.val_b.off] += dv;
        }
    }
    let d_out_w = out.h_final.t().dot(dlogits);
    acc(grad, layout.out_w, d_out_w.as_slice().unwrap());
    let d_out_b = dlogits.sum_axis(Axis(0));
    acc(grad, layout.out_b, d_out_b.as_slice().unwrap());

    // Final layernorm.
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    let mut dx = layernorm_backward(&dh_final, &out.lnf, view1(params, layout.lnf_g), &mut dg, &mut db);
    acc(grad, layout.lnf_g, &dg);
    acc(grad, layout.lnf_b, &db);

    for (b, cache) in layout.blocks.iter().zip(&out.blocks).rev() {
        // x = x_mid + mlp(ln2(x_mid))
        let dmlp = dx.clone();
        let mut dx_mid = dx;

        let w2 = view2(params, b.w2, 4 * d, d);
        let dh_act = dmlp.dot(&w2.t());
        let d_w2 = cache.h_act.t().dot(&dmlp);
        acc(grad, b.w2, d_w2.as_slice().unwrap());
        acc(grad, b.b2, dmlp.sum_axis(Axis(0)).as_slice().unwrap());

        let mut dh_pre = dh_act;
        dh_pre.zip_mut_with(&cache.h_pre, |g, &x| *g *= gelu_prime(x));

        let w1 = view2(params, b.w1, d, 4 * d);
        let dxh2 = dh_pre.dot(&w1.t());
        let d_w1 = cache.xh2.t().dot(&dh_pre);
        acc(grad, b.w1, d_w1.as_slice().unwrap());
        acc(grad, b.b1, dh_pre.sum_axis(Axis(0)).as_slice().unwrap());

        let mut dg2 = vec![0.0; d];
        let mut db2 = vec![0.0; d];
        let dmid_ln = layernorm_backward(&dxh2, &cache.ln2, view1(params, b.ln2_g), &mut dg2, &mut db2);
        acc(grad, b.ln2_g, &dg2);
        acc(grad, b.ln2_b, &db2);
        dx_mid += &dmid_ln;

        // x_mid = x_in + Wo(attention(ln1(x_in)))
        let dproj = dx_mid.clone();
        let mut dx_in = dx_mid;

        let wo = view2(params, b.wo, d, d);
        let datt_out = dproj.dot(&wo.t());
        let d_wo = cache.att_out.t().dot(&dproj);
        acc(grad, b.wo, d_wo.as_slice().unwrap());
        acc(grad, b.bo, dproj.sum_axis(Axis(0)).as_slice().unwrap());

        let mut dq = Array2::zeros((s_len, d));
        let mut dk = Array2::zeros((s_len, d));
        let mut dv = Array2::zeros((s_len, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let probs = &cache.att[h];
            let vh = cache.v.slice(cols);
            let doh = datt_out.slice(cols);

            let dp = doh.dot(&vh.t());
            let dvh = probs.t().dot(&doh);
            dv.slice_mut(cols).assign(&dvh);

            // Row-wise softmax backward over the causal support.
            let mut dscores = Array2::zeros((s_len, s_len));
            for i in 0..s_len {
                let mut dot = 0.0;
                for j in 0..=i {
                    dot += dp[(i, j)] * probs[(i, j)];
                }
                for j in 0..=i {
                    dscores[(i, j)] = probs[(i, j)] * (dp[(i, j)] - dot);
                }
            }
            dscores *= scale;

            let kh = cache.k.slice(cols);
            let qh = cache.q.slice(cols);
            dq.slice_mut(cols).assign(&dscores.dot(&kh));
            dk.slice_mut(cols).assign(&dscores.t().dot(&qh));
        }

        let wq = view2(params, b.wq, d, d);
        let wk = view2(params, b.wk, d, d);
        let wv = view2(params, b.wv, d, d);
        let mut dxh1 = dq.dot(&wq.t());
        dxh1 += &dk.dot(&wk.t());
        dxh1 += &dv.dot(&wv.t());
        for (w_span, b_span, dmat) in [(b.wq, b.bq, &dq), (b.wk, b.bk, &dk), (b.wv, b.bv, &dv)] {
            let dw = cache.xh1.t().dot(dmat);
            acc(grad, w_span, dw.as_slice().unwrap());
            acc(grad, b_span, dmat.sum_axis(Axis(0)).as_slice().unwrap());
        }

        let mut dg1 = vec![0.0; d];
        let mut db1 = vec![0.0; d];
        let din_ln = layernorm_backward(&dxh1, &cache.ln1, view1(params, b.ln1_g), &mut dg1, &mut db1);
        acc(grad, b.ln1_g, &dg1);
        acc(grad, b.ln1_b, &db1);
        dx_in += &din_ln;
        dx = dx_in;
    }

    // Embedding gradients: soft prompt rows, then BOS + generated tokens.
    for i in 0..s_len {
        let row = dx.row(i);
        let pos_off = layout.pos_emb.off + i * d;
        for j in 0..d {
            grad[pos_off + j] += row[j];
        }
        if i < SOFT_PROMPT_LEN {
            let off = layout.soft_prompt.off + i * d;
            for j in 0..d {
                grad[off + j] += row[j];
            }
        } else {
            let tok = out.tokens[i - SOFT_PROMPT_LEN] as usize;
            let off = layout.tok_emb.off + tok * d;
            for j in 0..d {
                grad[off + j] += row[j];
            }
        }
    }
}

/// Stable log-softmax over one logit row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Shannon entropy of softmax(logits), in nats.
pub fn entropy_from_logits(logits: &[f64]) -> f64 {
    let lp = log_softmax(logits);
    -lp.iter().map(|l| l.exp() * l).sum::<f64>()
}
