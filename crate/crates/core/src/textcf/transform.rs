//! Synonym substitution, event masking and temporal swapping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detect::{EventSpan, TemporalMarker};
use super::lexicon::{SwapTable, SynonymLexicon};
use super::question::{QuestionRecord, MASK_TOKEN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Synonym,
    Mask,
    Swap,
}

/// One rewrite: tokens `src` of the input became tokens `dst` of the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub op: EditOp,
    pub src: (usize, usize),
    pub dst: (usize, usize),
    pub from: String,
    pub to: String,
}

/// Result of a rewrite with the edits that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub record: QuestionRecord,
    pub edits: Vec<Edit>,
}

impl Rewrite {
    pub fn is_identity(&self) -> bool {
        self.edits.is_empty()
    }
}

struct Replacement {
    start: usize,
    end: usize,
    with: Vec<String>,
    op: EditOp,
}

/// Apply sorted, disjoint replacements, recomputing output positions.
fn apply(q: &QuestionRecord, mut reps: Vec<Replacement>) -> Rewrite {
    reps.sort_by_key(|r| r.start);
    let mut out = Vec::with_capacity(q.tokens.len());
    let mut edits = Vec::with_capacity(reps.len());
    let mut pos = 0;
    for r in reps {
        out.extend_from_slice(&q.tokens[pos..r.start]);
        let dst_start = out.len();
        out.extend(r.with.iter().cloned());
        edits.push(Edit {
            op: r.op,
            src: (r.start, r.end),
            dst: (dst_start, out.len()),
            from: q.tokens[r.start..r.end].join(" "),
            to: r.with.join(" "),
        });
        pos = r.end;
    }
    out.extend_from_slice(&q.tokens[pos..]);
    Rewrite {
        record: q.with_tokens(out),
        edits,
    }
}

/// Replace each lexicon-covered verb phrase and object noun inside the event
/// spans by a different member of its synonym group, drawn uniformly.
pub fn synonym_substitute<R: Rng + ?Sized>(
    q: &QuestionRecord,
    events: &[EventSpan],
    lexicon: &SynonymLexicon,
    rng: &mut R,
) -> Rewrite {
    let mut reps = Vec::new();
    for ev in events {
        let mut units = vec![(ev.verb_index, ev.verb_index + ev.verb_len)];
        units.extend(ev.object_indices.iter().map(|&i| (i, i + 1)));
        for (s, e) in units {
            let Some(gid) = lexicon.group_of(&q.tokens[s..e]) else {
                continue;
            };
            let group = lexicon.group(gid);
            let others: Vec<&Vec<String>> =
                group.iter().filter(|p| p.as_slice() != &q.tokens[s..e]).collect();
            let pick = others[rng.gen_range(0..others.len())];
            reps.push(Replacement {
                start: s,
                end: e,
                with: pick.clone(),
                op: EditOp::Synonym,
            });
        }
    }
    apply(q, reps)
}

/// Replace every event span by a single mask token.
pub fn mask_events(q: &QuestionRecord, events: &[EventSpan]) -> Result<Rewrite> {
    let mut sorted: Vec<&EventSpan> = events.iter().collect();
    sorted.sort_by_key(|e| e.start);
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Consistency(format!(
                "event spans [{}, {}) and [{}, {}) overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    if let Some(bad) = sorted.iter().find(|e| e.end > q.tokens.len() || e.start >= e.end) {
        return Err(Error::Consistency(format!(
            "event span [{}, {}) invalid for {} tokens",
            bad.start,
            bad.end,
            q.tokens.len()
        )));
    }
    Ok(apply(
        q,
        sorted
            .into_iter()
            .map(|e| Replacement {
                start: e.start,
                end: e.end,
                with: vec![MASK_TOKEN.to_string()],
                op: EditOp::Mask,
            })
            .collect(),
    ))
}

/// Replace each marker token by its image under the swap table.
pub fn swap_temporal(q: &QuestionRecord, markers: &[TemporalMarker], table: &SwapTable) -> Result<Rewrite> {
    let mut reps = Vec::with_capacity(markers.len());
    for m in markers {
        let tok = q.tokens.get(m.token_index).ok_or_else(|| {
            Error::Consistency(format!("marker index {} out of range", m.token_index))
        })?;
        let img = table.image(tok).ok_or_else(|| {
            Error::Consistency(format!("token {tok:?} at {} is not in the swap table", m.token_index))
        })?;
        reps.push(Replacement {
            start: m.token_index,
            end: m.token_index + 1,
            with: vec![img.to_string()],
            op: EditOp::Swap,
        });
    }
    Ok(apply(q, reps))
}
