use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{derived_rng, prepare_samples, Augmentation, Sample, Stream};
use super::train::TrainState;
use crate::error::{Error, Result};
use crate::model::AnswerDistribution;
use crate::numkit::cosine_similarity;
use crate::synthgen::{AnswerSet, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Token-level ROUGE-L from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<RougeScore> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Input("ROUGE-L needs nonempty candidate and reference".into()));
    }
    let c: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let lcs = lcs_len(&c, &r) as f64;
    let precision = lcs / c.len() as f64;
    let recall = lcs / r.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(RougeScore { precision, recall, f1 })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

impl CategoryMetrics {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
        self.accuracy = self.correct as f64 / self.count as f64;
    }
}

/// Accuracy overall, on open questions, on yes/no questions and per
/// category, plus mean ROUGE-L F1 of the predicted answer strings. Open or
/// binary accuracy is absent when the dataset has no such questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub accuracy_all: f64,
    pub accuracy_open: Option<f64>,
    pub accuracy_binary: Option<f64>,
    pub per_category: BTreeMap<String, CategoryMetrics>,
    pub rouge_l_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<AuditReport>,
}

/// Score any predictor over every record of `ds`.
pub fn evaluate_with<F>(ds: &Dataset, text_len: usize, mut predict: F) -> Result<Metrics>
where
    F: FnMut(&Sample<'_>) -> Result<AnswerDistribution>,
{
    if ds.is_empty() {
        return Err(Error::Input("evaluation on an empty dataset".into()));
    }
    let answers = AnswerSet::from_answers(ds.meta.answers.clone());
    let samples = prepare_samples(ds, &ds.token_vocab()?, text_len)?;
    let mut all = CategoryMetrics::default();
    let (mut open, mut binary) = (CategoryMetrics::default(), CategoryMetrics::default());
    let mut per_category: BTreeMap<String, CategoryMetrics> = BTreeMap::new();
    let mut rouge = Vec::with_capacity(samples.len());
    for s in &samples {
        let p = predict(s)?;
        if p.len() != answers.len() {
            return Err(Error::Config(format!(
                "predictor returned {} answers, dataset has {}",
                p.len(),
                answers.len()
            )));
        }
        let guess = p.argmax();
        let hit = guess == s.label;
        all.add(hit);
        if s.category == "binary" {
            binary.add(hit);
        } else {
            open.add(hit);
        }
        per_category.entry(s.category.clone()).or_default().add(hit);
        rouge.push(rouge_l(&answers.tokens(guess), &answers.tokens(s.label))?.f1);
    }
    // Summed in sorted order so the mean does not depend on record order.
    rouge.sort_by(f64::total_cmp);
    Ok(Metrics {
        count: all.count,
        accuracy_all: all.accuracy,
        accuracy_open: (open.count > 0).then_some(open.accuracy),
        accuracy_binary: (binary.count > 0).then_some(binary.accuracy),
        per_category,
        rouge_l_f1: rouge.iter().sum::<f64>() / all.count as f64,
        similarity: None,
    })
}

/// Score a trained model. Samples are scored one at a time, so the result
/// does not depend on record order.
pub fn evaluate(ds: &Dataset, state: &TrainState) -> Result<Metrics> {
    state.check_compatible(ds)?;
    evaluate_with(ds, state.model.config().text_len, |s| state.predict(s))
}

const HIST_BINS: usize = 20;
const HIST_RANGE: (f64, f64) = (-2.0, 2.0);

/// Distribution of `s(P, P+) - s(P, P-)` over contrastive-usable samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub usable: usize,
    pub skipped: usize,
    /// Share of usable samples with a strictly positive margin.
    pub positive_fraction: f64,
    pub mean_margin: f64,
    pub min_margin: f64,
    pub max_margin: f64,
    /// Counts over equal-width bins spanning [-2, 2].
    pub histogram: Vec<usize>,
}

/// Summary statistics of a set of margins.
pub fn summarize_margins(margins: &[f64], skipped: usize) -> Result<AuditReport> {
    if margins.is_empty() {
        return Err(Error::Input("no contrastive-usable samples to audit".into()));
    }
    let mut histogram = vec![0usize; HIST_BINS];
    let width = (HIST_RANGE.1 - HIST_RANGE.0) / HIST_BINS as f64;
    for &m in margins {
        if !(HIST_RANGE.0..=HIST_RANGE.1).contains(&m) {
            return Err(Error::Numeric(format!("margin {m} outside [-2, 2]")));
        }
        let bin = (((m - HIST_RANGE.0) / width) as usize).min(HIST_BINS - 1);
        histogram[bin] += 1;
    }
    let n = margins.len() as f64;
    Ok(AuditReport {
        usable: margins.len(),
        skipped,
        positive_fraction: margins.iter().filter(|&&m| m > 0.0).count() as f64 / n,
        mean_margin: margins.iter().sum::<f64>() / n,
        min_margin: margins.iter().copied().fold(f64::INFINITY, f64::min),
        max_margin: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        histogram,
    })
}

/// Margins of every contrastive-usable sample under `state`. The text
/// rewrite of sample `i` draws from a stream keyed by `(seed, i)`.
pub fn audit_margins(ds: &Dataset, state: &TrainState, aug: &Augmentation, seed: u64) -> Result<(Vec<f64>, usize)> {
    state.check_compatible(ds)?;
    let vocab = ds.token_vocab()?;
    let text_len = state.model.config().text_len;
    let samples = prepare_samples(ds, &vocab, text_len)?;
    let mut margins = Vec::new();
    let mut skipped = 0;
    for (i, s) in samples.iter().enumerate() {
        let t = aug.question_triple(&s.question, &mut derived_rng(seed, Stream::Audit, 0, i))?;
        if !t.contrastive_usable {
            skipped += 1;
            continue;
        }
        let (pv, nv) = aug.video_pair(s.video_id, s.video)?;
        let m = &state.model;
        let p = m.forward(&state.params, s.video, &s.ids)?;
        let pp = m.forward(&state.params, &pv, &vocab.encode(&t.positive.tokens, text_len))?;
        let pn = m.forward(&state.params, &nv, &vocab.encode(&t.negative.tokens, text_len))?;
        margins.push(cosine_similarity(p.probs(), pp.probs())? - cosine_similarity(p.probs(), pn.probs())?);
    }
    Ok((margins, skipped))
}

pub fn similarity_audit(ds: &Dataset, state: &TrainState, aug: &Augmentation, seed: u64) -> Result<AuditReport> {
    let (margins, skipped) = audit_margins(ds, state, aug, seed)?;
    summarize_margins(&margins, skipped)
}
