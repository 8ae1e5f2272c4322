//! Dense kernels and their analytic gradients.
//!
//! Every function here is pure. Backward rules take the cached forward
//! outputs they need rather than recomputing them.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probability floor applied before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

fn require_2d(t: &Tensor, what: &str) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "{what} must be 2-D, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// `c = alpha * op(a) * op(b) + beta * c` where `op` optionally transposes.
///
/// `c` must already hold `rows(op(a)) * cols(op(b))` values.
pub fn gemm(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool, alpha: f64, beta: f64, c: &mut [f64]) {
    let (ar, ac) = (a.rows(), a.cols());
    let (br, bc) = (b.rows(), b.cols());
    let (m, k, rsa, csa) = if trans_a {
        (ac, ar, 1isize, ac as isize)
    } else {
        (ar, ac, ac as isize, 1isize)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (bc, br, 1isize, bc as isize)
    } else {
        (br, bc, bc as isize, 1isize)
    };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!(c.len(), m * n, "gemm output size");
    // SAFETY: strides describe in-bounds row-major views of `a`, `b` and `c`,
    // whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data().as_ptr(),
            rsa,
            csa,
            b.data().as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of a `[m, k]` and `[k, n]` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_2d(a, "left operand")?;
    require_2d(b, "right operand")?;
    if a.cols() != b.rows() {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[a.rows(), b.cols()]);
    gemm(a, false, b, false, 1.0, 0.0, out.data_mut());
    Ok(out)
}

/// `a^T b`
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[a.cols(), b.cols()]);
    gemm(a, true, b, false, 1.0, 0.0, out.data_mut());
    out
}

/// `a b^T`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(&[a.rows(), b.rows()]);
    gemm(a, false, b, true, 1.0, 0.0, out.data_mut());
    out
}

/// Gradients of `C = A B` given `dC`: returns `(dA, dB) = (dC B^T, A^T dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> (Tensor, Tensor) {
    (matmul_nt(dc, b), matmul_tn(a, dc))
}

/// In-place numerically stable softmax of a slice.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::Dimension(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    let mut buf = vec![0.0; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[base + j * inner];
            }
            softmax_in_place(&mut buf);
            for (j, b) in buf.iter().enumerate() {
                data[base + j * inner] = *b;
            }
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: given `p = softmax(z)` and `dL/dp`,
/// returns `dL/dz`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

fn one_hot_index(gt: &[f64]) -> Result<usize> {
    let mut idx = None;
    for (i, &g) in gt.iter().enumerate() {
        if g == 1.0 {
            if idx.is_some() {
                return Err(Error::Input("ground truth has several hot entries".into()));
            }
            idx = Some(i);
        } else if g != 0.0 {
            return Err(Error::Input(format!("ground truth entry {g} is not 0 or 1")));
        }
    }
    idx.ok_or_else(|| Error::Input("ground truth has no hot entry".into()))
}

/// `-log(max(probs[gt], 1e-12))` for a one-hot `gt`.
pub fn cross_entropy(probs: &[f64], gt: &[f64]) -> Result<f64> {
    if probs.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "cross entropy over {} probabilities with a {}-way target",
            probs.len(),
            gt.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("probabilities sum to {sum}")));
    }
    let label = one_hot_index(gt)?;
    Ok(cross_entropy_index(probs, label))
}

/// Cross entropy against a class index; no validation.
pub fn cross_entropy_index(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(LOG_CLAMP).ln()
}

/// `d/dp` of [`cross_entropy_index`]. Zero below the clamp.
pub fn cross_entropy_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    if probs[label] > LOG_CLAMP {
        g[label] = -1.0 / probs[label];
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; a zero-norm operand is an error.
pub fn cosine_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "cosine similarity of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    let (np, nq) = (norm(p), norm(q));
    if np == 0.0 || nq == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    Ok((dot / (np * nq)).clamp(-1.0, 1.0))
}

/// Cosine similarity with its gradients `(s, ds/dp, ds/dq)`.
pub fn cosine_similarity_grad(p: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    cosine_similarity(p, q)?;
    let (np, nq) = (norm(p), norm(q));
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let s = dot / (np * nq);
    let dp = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| qi / (np * nq) - s * pi / (np * np))
        .collect();
    let dq = p
        .iter()
        .zip(q)
        .map(|(pi, qi)| pi / (np * nq) - s * qi / (nq * nq))
        .collect();
    Ok((s, dp, dq))
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(d)) V`.
pub fn attention(queries: &Tensor, keys: &Tensor, values: &Tensor) -> Result<Tensor> {
    Ok(attention_with_weights(queries, keys, values)?.0)
}

/// Attention output together with the row-stochastic weight matrix.
pub fn attention_with_weights(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
) -> Result<(Tensor, Tensor)> {
    require_2d(queries, "queries")?;
    require_2d(keys, "keys")?;
    require_2d(values, "values")?;
    if queries.cols() != keys.cols() {
        return Err(Error::Dimension(format!(
            "query width {:?} differs from key width {:?}",
            queries.shape(),
            keys.shape()
        )));
    }
    if keys.rows() != values.rows() || keys.cols() != values.cols() {
        return Err(Error::Dimension(format!(
            "keys {:?} and values {:?} disagree",
            keys.shape(),
            values.shape()
        )));
    }
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let mut scores = Tensor::zeros(&[queries.rows(), keys.rows()]);
    gemm(queries, false, keys, true, scale, 0.0, scores.data_mut());
    for i in 0..scores.rows() {
        softmax_in_place(scores.row_mut(i));
    }
    let mut out = Tensor::zeros(&[queries.rows(), values.cols()]);
    gemm(&scores, false, values, false, 1.0, 0.0, out.data_mut());
    Ok((out, scores))
}

/// Gradients of attention w.r.t. queries, keys and values.
pub fn attention_backward(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    weights: &Tensor,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let scale = 1.0 / (queries.cols() as f64).sqrt();
    let d_values = matmul_tn(weights, d_out);
    let d_weights = matmul_nt(d_out, values);
    let mut d_scores = Tensor::zeros(&[weights.rows(), weights.cols()]);
    for i in 0..weights.rows() {
        let row = softmax_backward(weights.row(i), d_weights.row(i));
        d_scores.row_mut(i).copy_from_slice(&row);
    }
    let mut d_queries = Tensor::zeros(&[queries.rows(), queries.cols()]);
    gemm(&d_scores, false, keys, false, scale, 0.0, d_queries.data_mut());
    let mut d_keys = Tensor::zeros(&[keys.rows(), keys.cols()]);
    gemm(&d_scores, true, queries, false, scale, 0.0, d_keys.data_mut());
    (d_queries, d_keys, d_values)
}
