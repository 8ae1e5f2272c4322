//! Post-hoc checks of rewritten questions, written independently of the
//! rewrite code so they can audit it.

use super::detect::EventSpan;
use super::lexicon::{SwapTable, SynonymLexicon};
use super::question::MASK_TOKEN;
use super::transform::{Edit, EditOp};

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// A positive may differ from the original only inside event spans, and each
/// replaced phrase must share a lexicon group with its replacement.
pub fn verify_positive(
    original: &[String],
    positive: &[String],
    edits: &[Edit],
    events: &[EventSpan],
    lexicon: &SynonymLexicon,
) -> Result<(), String> {
    let mut edits: Vec<&Edit> = edits.iter().collect();
    edits.sort_by_key(|e| e.src.0);
    let (mut i, mut j) = (0usize, 0usize);
    for e in edits {
        if e.op != EditOp::Synonym {
            return Err(format!("unexpected {:?} edit in a positive", e.op));
        }
        if !events.iter().any(|ev| ev.start <= e.src.0 && e.src.1 <= ev.end) {
            return Err(format!("edit {:?} lies outside every event span", e.src));
        }
        let (from, to) = (split(&e.from), split(&e.to));
        if original.get(e.src.0..e.src.1) != Some(from.as_slice()) {
            return Err(format!("edit source {:?} does not match the original", e.src));
        }
        if positive.get(e.dst.0..e.dst.1) != Some(to.as_slice()) {
            return Err(format!("edit target {:?} does not match the positive", e.dst));
        }
        if from == to {
            return Err(format!("edit at {:?} replaced a phrase by itself", e.src));
        }
        match (lexicon.group_of(&from), lexicon.group_of(&to)) {
            (Some(a), Some(b)) if a == b => {}
            _ => return Err(format!("{:?} and {:?} are not lexicon synonyms", e.from, e.to)),
        }
        if original[i..e.src.0] != positive[j..e.dst.0] {
            return Err(format!("tokens before {:?} changed", e.src));
        }
        i = e.src.1;
        j = e.dst.1;
    }
    if original[i..] != positive[j..] {
        return Err("trailing tokens changed".into());
    }
    Ok(())
}

/// Rebuild the mask-then-swap negative from scratch and compare.
pub fn verify_mask_then_swap(
    original: &[String],
    negative: &[String],
    events: &[EventSpan],
    table: &SwapTable,
) -> Result<(), String> {
    let mut spans: Vec<(usize, usize)> = events.iter().map(|e| (e.start, e.end)).collect();
    spans.sort_unstable();
    let mut expected: Vec<String> = Vec::new();
    let mut i = 0;
    for (s, e) in spans {
        expected.extend(original[i..s].iter().cloned());
        expected.push(MASK_TOKEN.to_string());
        i = e;
    }
    expected.extend(original[i..].iter().cloned());
    let swapped: Vec<String> = expected
        .iter()
        .map(|t| table.image(t).map_or_else(|| t.clone(), str::to_string))
        .collect();
    if swapped != negative {
        return Err(format!(
            "negative {:?} differs from rebuilt {:?}",
            negative.join(" "),
            swapped.join(" ")
        ));
    }
    let masks = negative.iter().filter(|t| *t == MASK_TOKEN).count();
    if masks != events.len() {
        return Err(format!("{masks} masks for {} events", events.len()));
    }
    Ok(())
}
