//! Building blocks with explicit forward caches and backward passes.
//! Gradients accumulate into a [`Grads`] buffer keyed by parameter name.

use crate::numkit::ops::{attention_backward, attention_with_weights, gemm};
use crate::numkit::{Grads, ParamStore, Tensor};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// `x W + b` with `b` broadcast over rows.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[x.rows(), w.cols()]);
    for i in 0..x.rows() {
        out.row_mut(i).copy_from_slice(b.data());
    }
    gemm(x, false, w, false, 1.0, 1.0, out.data_mut());
    out
}

/// `x W` without a bias.
pub fn project(x: &Tensor, w: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[x.rows(), w.cols()]);
    gemm(x, false, w, false, 1.0, 0.0, out.data_mut());
    out
}

/// Accumulate weight/bias gradients and return `dx`.
pub fn linear_backward(x: &Tensor, w_name: &str, b_name: &str, p: &ParamStore, dy: &Tensor, g: &mut Grads) -> Tensor {
    add_col_sums(dy, g.get_mut(b_name).data_mut());
    project_backward(x, w_name, p, dy, g)
}

/// Backward of [`project`]: accumulate the weight gradient and return `dx`.
pub fn project_backward(x: &Tensor, w_name: &str, p: &ParamStore, dy: &Tensor, g: &mut Grads) -> Tensor {
    gemm(x, true, dy, false, 1.0, 1.0, g.get_mut(w_name).data_mut());
    let w = p.get(w_name);
    let mut dx = Tensor::zeros(&[dy.rows(), w.rows()]);
    gemm(dy, false, w, true, 1.0, 0.0, dx.data_mut());
    dx
}

pub fn add_col_sums(x: &Tensor, acc: &mut [f64]) {
    for i in 0..x.rows() {
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn gelu_tensor(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    y
}

/// `dy * gelu'(x)`
pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
        *d *= gelu_grad(xi);
    }
    dx
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Tensor,
    rstd: Vec<f64>,
}

/// Row-wise layer normalization with learned gain and shift.
pub fn layer_norm(x: &Tensor, gain: &Tensor, shift: &Tensor) -> (Tensor, LnCache) {
    let (n, d) = (x.rows(), x.cols());
    let mut xhat = Tensor::zeros(&[n, d]);
    let mut y = Tensor::zeros(&[n, d]);
    let mut rstd = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        let (xh, yr) = (xhat.row_mut(i), y.row_mut(i));
        for (j, &v) in row.iter().enumerate() {
            let h = (v - mean) * r;
            xh[j] = h;
            yr[j] = h * gain.data()[j] + shift.data()[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward(
    cache: &LnCache,
    gain_name: &str,
    shift_name: &str,
    p: &ParamStore,
    dy: &Tensor,
    g: &mut Grads,
) -> Tensor {
    let (n, d) = (dy.rows(), dy.cols());
    let gain = p.get(gain_name).data();
    {
        let gg = g.get_mut(gain_name).data_mut();
        for i in 0..n {
            for ((acc, a), b) in gg.iter_mut().zip(dy.row(i)).zip(cache.xhat.row(i)) {
                *acc += a * b;
            }
        }
    }
    add_col_sums(dy, g.get_mut(shift_name).data_mut());
    let mut dx = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let xh = cache.xhat.row(i);
        let dxhat: Vec<f64> = dy.row(i).iter().zip(gain).map(|(a, b)| a * b).collect();
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            dx.row_mut(i)[j] = r * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

/// Parameter names of one multi-head attention layer. Keys carry no bias:
/// softmax is invariant to it, so its gradient is identically zero.
#[derive(Debug, Clone)]
pub struct AttnNames {
    pub wq: String,
    pub bq: String,
    pub wk: String,
    pub wv: String,
    pub bv: String,
    pub wo: String,
    pub bo: String,
}

impl AttnNames {
    pub fn new(prefix: &str) -> Self {
        let n = |s: &str| format!("{prefix}.{s}");
        Self {
            wq: n("wq"),
            bq: n("bq"),
            wk: n("wk"),
            wv: n("wv"),
            bv: n("bv"),
            wo: n("wo"),
            bo: n("bo"),
        }
    }

    /// Each projection weight with its bias, if it has one.
    pub fn weights(&self) -> [(&str, Option<&str>); 4] {
        [
            (&self.wq, Some(&self.bq)),
            (&self.wk, None),
            (&self.wv, Some(&self.bv)),
            (&self.wo, Some(&self.bo)),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    xq: Tensor,
    xkv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    segs: usize,
    /// Attention weight matrices, indexed by `sample * heads + head`.
    pub weights: Vec<Tensor>,
    /// Head outputs concatenated, before the output projection.
    pub heads_out: Tensor,
}

fn rows_block(t: &Tensor, r0: usize, nr: usize, c0: usize, nc: usize) -> Tensor {
    let mut out = Tensor::zeros(&[nr, nc]);
    for i in 0..nr {
        out.row_mut(i).copy_from_slice(&t.row(r0 + i)[c0..c0 + nc]);
    }
    out
}

fn set_rows_block(t: &mut Tensor, r0: usize, c0: usize, block: &Tensor) {
    for i in 0..block.rows() {
        t.row_mut(r0 + i)[c0..c0 + block.cols()].copy_from_slice(block.row(i));
    }
}

/// Multi-head attention: `xq` supplies queries, `xkv` keys and values. Both
/// hold `segs` samples stacked row-wise; attention never crosses samples.
pub fn mha(
    p: &ParamStore,
    names: &AttnNames,
    heads: usize,
    segs: usize,
    xq: &Tensor,
    xkv: &Tensor,
) -> (Tensor, AttnCache) {
    let q = linear(xq, p.get(&names.wq), p.get(&names.bq));
    let k = project(xkv, p.get(&names.wk));
    let v = linear(xkv, p.get(&names.wv), p.get(&names.bv));
    let d = q.cols();
    let dh = d / heads;
    let (lq, lk) = (xq.rows() / segs, xkv.rows() / segs);
    let mut heads_out = Tensor::zeros(&[xq.rows(), d]);
    let mut weights = Vec::with_capacity(segs * heads);
    for s in 0..segs {
        for h in 0..heads {
            let (o, w) = attention_with_weights(
                &rows_block(&q, s * lq, lq, h * dh, dh),
                &rows_block(&k, s * lk, lk, h * dh, dh),
                &rows_block(&v, s * lk, lk, h * dh, dh),
            )
            .expect("head shapes agree by construction");
            set_rows_block(&mut heads_out, s * lq, h * dh, &o);
            weights.push(w);
        }
    }
    let out = linear(&heads_out, p.get(&names.wo), p.get(&names.bo));
    (
        out,
        AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            segs,
            weights,
            heads_out,
        },
    )
}

/// Returns `(d xq, d xkv)`.
pub fn mha_backward(
    p: &ParamStore,
    names: &AttnNames,
    cache: &AttnCache,
    d_out: &Tensor,
    g: &mut Grads,
) -> (Tensor, Tensor) {
    let d_heads = linear_backward(&cache.heads_out, &names.wo, &names.bo, p, d_out, g);
    let d = cache.q.cols();
    let segs = cache.segs;
    let heads = cache.weights.len() / segs;
    let dh = d / heads;
    let (lq, lk) = (cache.q.rows() / segs, cache.k.rows() / segs);
    let mut dq = Tensor::zeros(&[cache.q.rows(), d]);
    let mut dk = Tensor::zeros(&[cache.k.rows(), d]);
    let mut dv = Tensor::zeros(&[cache.v.rows(), d]);
    for s in 0..segs {
        for h in 0..heads {
            let (a, b, c) = attention_backward(
                &rows_block(&cache.q, s * lq, lq, h * dh, dh),
                &rows_block(&cache.k, s * lk, lk, h * dh, dh),
                &rows_block(&cache.v, s * lk, lk, h * dh, dh),
                &cache.weights[s * heads + h],
                &rows_block(&d_heads, s * lq, lq, h * dh, dh),
            );
            set_rows_block(&mut dq, s * lq, h * dh, &a);
            set_rows_block(&mut dk, s * lk, h * dh, &b);
            set_rows_block(&mut dv, s * lk, h * dh, &c);
        }
    }
    let dxq = linear_backward(&cache.xq, &names.wq, &names.bq, p, &dq, g);
    let mut dxkv = project_backward(&cache.xkv, &names.wk, p, &dk, g);
    dxkv.add_assign(&linear_backward(&cache.xkv, &names.wv, &names.bv, p, &dv, g));
    (dxq, dxkv)
}

/// Parameter names of a pre-norm self-attention block.
#[derive(Debug, Clone)]
pub struct BlockNames {
    pub ln1: (String, String),
    pub attn: AttnNames,
    pub ln2: (String, String),
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
}

impl BlockNames {
    pub fn new(prefix: &str) -> Self {
        let n = |s: &str| format!("{prefix}.{s}");
        Self {
            ln1: (n("ln1.g"), n("ln1.b")),
            attn: AttnNames::new(&n("attn")),
            ln2: (n("ln2.g"), n("ln2.b")),
            w1: n("mlp.w1"),
            b1: n("mlp.b1"),
            w2: n("mlp.w2"),
            b2: n("mlp.b2"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    h2: Tensor,
    pre_act: Tensor,
    act: Tensor,
}

/// `x + attn(ln1(x))`, then `+ mlp(ln2(.))`, over `segs` stacked samples.
pub fn block(p: &ParamStore, names: &BlockNames, heads: usize, segs: usize, x: &Tensor) -> (Tensor, BlockCache) {
    let (h1, ln1) = layer_norm(x, p.get(&names.ln1.0), p.get(&names.ln1.1));
    let (a, attn) = mha(p, &names.attn, heads, segs, &h1, &h1);
    let mut x1 = x.clone();
    x1.add_assign(&a);
    let (h2, ln2) = layer_norm(&x1, p.get(&names.ln2.0), p.get(&names.ln2.1));
    let pre_act = linear(&h2, p.get(&names.w1), p.get(&names.b1));
    let act = gelu_tensor(&pre_act);
    let m = linear(&act, p.get(&names.w2), p.get(&names.b2));
    x1.add_assign(&m);
    (
        x1,
        BlockCache {
            ln1,
            attn,
            ln2,
            h2,
            pre_act,
            act,
        },
    )
}

pub fn block_backward(p: &ParamStore, names: &BlockNames, cache: &BlockCache, dy: &Tensor, g: &mut Grads) -> Tensor {
    let d_act = linear_backward(&cache.act, &names.w2, &names.b2, p, dy, g);
    let d_pre = gelu_backward(&cache.pre_act, &d_act);
    let d_h2 = linear_backward(&cache.h2, &names.w1, &names.b1, p, &d_pre, g);
    let mut dx1 = layer_norm_backward(&cache.ln2, &names.ln2.0, &names.ln2.1, p, &d_h2, g);
    dx1.add_assign(dy);
    let (dq, dkv) = mha_backward(p, &names.attn, &cache.attn, &dx1, g);
    let mut d_h1 = dq;
    d_h1.add_assign(&dkv);
    let mut dx = layer_norm_backward(&cache.ln1, &names.ln1.0, &names.ln1.1, p, &d_h1, g);
    dx.add_assign(&dx1);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Key biases shift every score of a row equally, so their true gradient
    /// is zero and both estimates are pure roundoff.
    pub(crate) fn assert_grads_agree(r: &GradCheckReport, tol: f64) {
        for t in &r.tensors {
            assert!(t.max_rel_error <= tol, "{:#?}", t);
        }
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    fn block_params(d: usize, rng: &mut ChaCha8Rng) -> (ParamStore, BlockNames) {
        let names = BlockNames::new("b");
        let mut ps = ParamStore::new();
        ps.insert(&names.ln1.0, rand_tensor(rng, &[d], 1.0)).unwrap();
        ps.insert(&names.ln1.1, rand_tensor(rng, &[d], 0.2)).unwrap();
        ps.insert(&names.ln2.0, rand_tensor(rng, &[d], 1.0)).unwrap();
        ps.insert(&names.ln2.1, rand_tensor(rng, &[d], 0.2)).unwrap();
        for (w, b) in names.attn.weights() {
            ps.insert(w, rand_tensor(rng, &[d, d], 0.6)).unwrap();
            if let Some(b) = b {
                ps.insert(b, rand_tensor(rng, &[d], 0.1)).unwrap();
            }
        }
        ps.insert(&names.w1, rand_tensor(rng, &[d, 2 * d], 0.6)).unwrap();
        ps.insert(&names.b1, rand_tensor(rng, &[2 * d], 0.1)).unwrap();
        ps.insert(&names.w2, rand_tensor(rng, &[2 * d, d], 0.6)).unwrap();
        ps.insert(&names.b2, rand_tensor(rng, &[d], 0.1)).unwrap();
        (ps, names)
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn block_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 8;
        let (mut ps, names) = block_params(d, &mut rng);
        ps.insert("x", rand_tensor(&mut rng, &[5, d], 1.0)).unwrap();
        ps.insert("proj", rand_tensor(&mut rng, &[5, d], 1.0)).unwrap();
        let names2 = names.clone();
        let value = move |p: &ParamStore| {
            let (y, _) = block(p, &names, 2, 1, p.get("x"));
            Ok(y.data().iter().zip(p.get("proj").data()).map(|(a, b)| a * b).sum::<f64>())
        };
        let grad = move |p: &ParamStore| {
            let (y, cache) = block(p, &names2, 2, 1, p.get("x"));
            let loss = y.data().iter().zip(p.get("proj").data()).map(|(a, b)| a * b).sum::<f64>();
            let mut g = Grads::zeros_like(p);
            let dx = block_backward(p, &names2, &cache, p.get("proj"), &mut g);
            *g.get_mut("x") = dx;
            *g.get_mut("proj") = y;
            Ok((loss, g))
        };
        let r = grad_check(&(value, grad), &ps, &GradCheckOptions::default()).unwrap();
        assert_grads_agree(&r, 1e-5);
    }

    #[test]
    fn stacked_samples_do_not_interact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 8;
        let (ps, names) = block_params(d, &mut rng);
        let a = rand_tensor(&mut rng, &[3, d], 1.0);
        let b = rand_tensor(&mut rng, &[3, d], 1.0);
        let mut both = Tensor::zeros(&[6, d]);
        set_rows_block(&mut both, 0, 0, &a);
        set_rows_block(&mut both, 3, 0, &b);
        let (y, _) = block(&ps, &names, 2, 2, &both);
        let (ya, _) = block(&ps, &names, 2, 1, &a);
        let (yb, _) = block(&ps, &names, 2, 1, &b);
        assert!(rows_block(&y, 0, 3, 0, d).max_abs_diff(&ya) < 1e-13);
        assert!(rows_block(&y, 3, 3, 0, d).max_abs_diff(&yb) < 1e-13);
    }

    #[test]
    fn cross_attention_gradients_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let names = AttnNames::new("x");
        let mut ps = ParamStore::new();
        for (w, b) in names.weights() {
            ps.insert(w, rand_tensor(&mut rng, &[d, d], 0.7)).unwrap();
            if let Some(b) = b {
                ps.insert(b, rand_tensor(&mut rng, &[d], 0.2)).unwrap();
            }
        }
        ps.insert("q_in", rand_tensor(&mut rng, &[4, d], 1.0)).unwrap();
        ps.insert("kv_in", rand_tensor(&mut rng, &[3, d], 1.0)).unwrap();
        let n2 = names.clone();
        let value = move |p: &ParamStore| {
            let (y, _) = mha(p, &names, 3, 1, p.get("q_in"), p.get("kv_in"));
            Ok(y.data().iter().enumerate().map(|(i, v)| (i as f64 * 0.37).cos() * v).sum::<f64>())
        };
        let grad = move |p: &ParamStore| {
            let (y, cache) = mha(p, &n2, 3, 1, p.get("q_in"), p.get("kv_in"));
            let w: Vec<f64> = (0..y.len()).map(|i| (i as f64 * 0.37).cos()).collect();
            let loss = y.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let dy = Tensor::new(y.shape().to_vec(), w).unwrap();
            let mut g = Grads::zeros_like(p);
            let (dq, dkv) = mha_backward(p, &n2, &cache, &dy, &mut g);
            *g.get_mut("q_in") = dq;
            *g.get_mut("kv_in") = dkv;
            Ok((loss, g))
        };
        let r = grad_check(&(value, grad), &ps, &GradCheckOptions::default()).unwrap();
        assert_grads_agree(&r, 1e-5);
    }
}
