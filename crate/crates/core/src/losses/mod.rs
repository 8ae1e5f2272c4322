//! Answer cross-entropy, counterfactual cross-entropy terms, the
//! temperature-scaled contrastive term, and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AnswerDistribution;
use crate::numkit::ops::{cosine_similarity, cosine_similarity_grad, cross_entropy_grad, cross_entropy_index};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the positive-sample cross-entropy.
    pub alpha: f64,
    /// Weight of the negative-sample cross-entropy.
    pub beta: f64,
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta: 1.0,
            lambda: 0.01,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    /// All counterfactual terms switched off.
    pub fn answer_only() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
            lambda: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.tau)));
        }
        Ok(())
    }

    /// True when only the answer loss contributes.
    pub fn is_answer_only(&self) -> bool {
        self.alpha == 0.0 && self.beta == 0.0 && self.lambda == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_qa: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_con: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `total` recomputed from the four terms.
    pub fn recompute(&self, w: &LossWeights) -> f64 {
        weighted_sum(self.l_qa, self.l_pos, self.l_neg, self.l_con, w)
    }
}

fn weighted_sum(l_qa: f64, l_pos: f64, l_neg: f64, l_con: f64, w: &LossWeights) -> f64 {
    l_qa + w.alpha * l_pos + w.beta * l_neg + w.lambda * l_con
}

pub fn one_hot(label: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

fn check_batch(preds: &[AnswerDistribution], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Input("loss over an empty batch".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} labels",
            preds.len(),
            labels.len()
        )));
    }
    for (p, &y) in preds.iter().zip(labels) {
        if y >= p.len() {
            return Err(Error::Dimension(format!("label {y} outside an answer set of {}", p.len())));
        }
    }
    Ok(())
}

/// Mean cross-entropy of predictions against ground-truth labels.
pub fn loss_qa(preds: &[AnswerDistribution], labels: &[usize]) -> Result<f64> {
    check_batch(preds, labels)?;
    Ok(preds
        .iter()
        .zip(labels)
        .map(|(p, &y)| cross_entropy_index(p.probs(), y))
        .sum::<f64>()
        / preds.len() as f64)
}

/// Cross-entropy of predictions on positive samples against the original labels.
pub fn loss_pos(preds: &[AnswerDistribution], labels: &[usize]) -> Result<f64> {
    loss_qa(preds, labels)
}

/// Cross-entropy of predictions on negative samples against the original labels.
pub fn loss_neg(preds: &[AnswerDistribution], labels: &[usize]) -> Result<f64> {
    loss_qa(preds, labels)
}

/// `-log(e^a / (e^a + e^b))` with `a = s+/tau`, `b = s-/tau`, plus the
/// softmax weight of the negative term.
fn two_way_nce(s_pos: f64, s_neg: f64, tau: f64) -> (f64, f64) {
    let (a, b) = (s_pos / tau, s_neg / tau);
    if a >= b {
        let e = (b - a).exp();
        (e.ln_1p(), e / (1.0 + e))
    } else {
        let e = (a - b).exp();
        ((b - a) + e.ln_1p(), 1.0 / (1.0 + e))
    }
}

/// Contrastive loss pulling `p` toward `p_pos` and away from `p_neg` in
/// cosine similarity, at temperature `tau`.
pub fn loss_con(p: &AnswerDistribution, p_pos: &AnswerDistribution, p_neg: &AnswerDistribution, tau: f64) -> Result<f64> {
    con_from_similarities(
        cosine_similarity(p.probs(), p_pos.probs())?,
        cosine_similarity(p.probs(), p_neg.probs())?,
        tau,
    )
}

/// The contrastive loss as a function of the two similarities.
pub fn con_from_similarities(s_pos: f64, s_neg: f64, tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    Ok(two_way_nce(s_pos, s_neg, tau).0)
}

/// Gradients of [`loss_con`] with respect to the three probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConGrad {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

pub fn loss_con_grad(p: &[f64], p_pos: &[f64], p_neg: &[f64], tau: f64) -> Result<ConGrad> {
    let (s_pos, dpa, dpp) = cosine_similarity_grad(p, p_pos)?;
    let (s_neg, dna, dnn) = cosine_similarity_grad(p, p_neg)?;
    let (loss, w_neg) = two_way_nce(s_pos, s_neg, tau);
    let g_pos = -w_neg / tau;
    let g_neg = w_neg / tau;
    Ok(ConGrad {
        loss,
        d_anchor: dpa.iter().zip(&dna).map(|(a, b)| g_pos * a + g_neg * b).collect(),
        d_pos: dpp.iter().map(|x| g_pos * x).collect(),
        d_neg: dnn.iter().map(|x| g_neg * x).collect(),
    })
}

pub fn total_loss(l_qa: f64, l_pos: f64, l_neg: f64, l_con: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        l_qa,
        l_pos,
        l_neg,
        l_con,
        total: weighted_sum(l_qa, l_pos, l_neg, l_con, w),
    }
}

/// Predictions for one batch. `pos`/`neg` hold one entry per usable
/// sample, in batch order.
pub struct BatchPredictions<'a> {
    pub orig: &'a [AnswerDistribution],
    pub pos: &'a [AnswerDistribution],
    pub neg: &'a [AnswerDistribution],
    pub labels: &'a [usize],
    pub usable: &'a [bool],
}

/// `dL/dprobs` for each of the three prediction sets, shaped like the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub d_orig: Vec<Vec<f64>>,
    pub d_pos: Vec<Vec<f64>>,
    pub d_neg: Vec<Vec<f64>>,
}

/// The full weighted objective over a batch, with gradients. The answer term
/// averages over every sample; the counterfactual and contrastive terms
/// average over usable samples only and are zero when there are none.
pub fn batch_objective(b: &BatchPredictions<'_>, w: &LossWeights) -> Result<(LossBreakdown, BatchGrads)> {
    w.validate()?;
    check_batch(b.orig, b.labels)?;
    let n = b.orig.len();
    let m = b.usable.iter().filter(|&&u| u).count();
    if b.usable.len() != n || b.pos.len() != m || b.neg.len() != m {
        return Err(Error::Dimension(format!(
            "batch of {n} with {} usable flags ({m} set), {} positives, {} negatives",
            b.usable.len(),
            b.pos.len(),
            b.neg.len()
        )));
    }
    let k = b.orig[0].len();
    let mut g = BatchGrads {
        d_orig: vec![vec![0.0; k]; n],
        d_pos: vec![vec![0.0; k]; m],
        d_neg: vec![vec![0.0; k]; m],
    };
    let mut l_qa = 0.0;
    for i in 0..n {
        l_qa += cross_entropy_index(b.orig[i].probs(), b.labels[i]);
        for (d, x) in g.d_orig[i].iter_mut().zip(cross_entropy_grad(b.orig[i].probs(), b.labels[i])) {
            *d = x / n as f64;
        }
    }
    l_qa /= n as f64;

    let (mut l_pos, mut l_neg, mut l_con) = (0.0, 0.0, 0.0);
    if m > 0 {
        let mf = m as f64;
        for (j, i) in (0..n).filter(|&i| b.usable[i]).enumerate() {
            let y = b.labels[i];
            l_pos += cross_entropy_index(b.pos[j].probs(), y);
            l_neg += cross_entropy_index(b.neg[j].probs(), y);
            for (d, x) in g.d_pos[j].iter_mut().zip(cross_entropy_grad(b.pos[j].probs(), y)) {
                *d += w.alpha * x / mf;
            }
            for (d, x) in g.d_neg[j].iter_mut().zip(cross_entropy_grad(b.neg[j].probs(), y)) {
                *d += w.beta * x / mf;
            }
            let c = loss_con_grad(b.orig[i].probs(), b.pos[j].probs(), b.neg[j].probs(), w.tau)?;
            l_con += c.loss;
            let s = w.lambda / mf;
            for (d, x) in g.d_orig[i].iter_mut().zip(&c.d_anchor) {
                *d += s * x;
            }
            for (d, x) in g.d_pos[j].iter_mut().zip(&c.d_pos) {
                *d += s * x;
            }
            for (d, x) in g.d_neg[j].iter_mut().zip(&c.d_neg) {
                *d += s * x;
            }
        }
        l_pos /= mf;
        l_neg /= mf;
        l_con /= mf;
    }
    let breakdown = total_loss(l_qa, l_pos, l_neg, l_con, w);
    if !breakdown.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {breakdown:?}")));
    }
    Ok((breakdown, g))
}

#[cfg(test)]
mod tests;
