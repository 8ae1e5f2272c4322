//! Closed-vocabulary event and temporal-marker detection.
//!
//! An event is either `verb-phrase [determiner] object` or
//! `ordinal action-noun` ("first action"). Matching is left-to-right greedy,
//! preferring the longest verb phrase at each position.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::lexicon::{SwapTable, TemporalKind};
use super::question::QuestionRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    VerbObject,
    OrdinalAction,
}

/// Half-open token span `[start, end)` describing one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    pub start: usize,
    pub end: usize,
    /// First token of the head: the verb phrase, or the ordinal.
    pub verb_index: usize,
    pub verb_len: usize,
    pub object_indices: Vec<usize>,
    pub kind: EventKind,
}

impl EventSpan {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, idx: usize) -> bool {
        (self.start..self.end).contains(&idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalMarker {
    pub token_index: usize,
    pub kind: TemporalKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventVocab {
    /// Verb phrases, each one or more tokens.
    pub verbs: Vec<Vec<String>>,
    pub objects: BTreeSet<String>,
    pub determiners: BTreeSet<String>,
    pub ordinals: BTreeSet<String>,
    pub action_nouns: BTreeSet<String>,
}

fn set(words: &[&str]) -> BTreeSet<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl EventVocab {
    pub fn new<V: AsRef<str>, O: AsRef<str>>(verbs: &[V], objects: &[O]) -> Result<Self> {
        if verbs.is_empty() || objects.is_empty() {
            return Err(Error::Input("event vocabularies must be nonempty".into()));
        }
        Ok(Self {
            verbs: verbs
                .iter()
                .map(|v| v.as_ref().split_whitespace().map(str::to_lowercase).collect())
                .collect(),
            objects: objects.iter().map(|o| o.as_ref().to_lowercase()).collect(),
            determiners: set(&["the", "a", "an", "this", "that", "his", "her", "their"]),
            ordinals: set(&["first", "last", "second", "third", "final"]),
            action_nouns: set(&["action", "operation", "activity", "step"]),
        })
    }

    /// Length of the longest verb phrase starting at `pos`, if any.
    fn verb_at(&self, tokens: &[String], pos: usize) -> Option<usize> {
        self.verbs
            .iter()
            .filter(|v| tokens.get(pos..pos + v.len()) == Some(v.as_slice()))
            .map(Vec::len)
            .max()
    }

    /// The span matched starting exactly at `pos`, if any.
    fn match_at(&self, tokens: &[String], pos: usize) -> Option<EventSpan> {
        if let Some(vl) = self.verb_at(tokens, pos) {
            let mut j = pos + vl;
            if tokens.get(j).is_some_and(|t| self.determiners.contains(t)) {
                j += 1;
            }
            if tokens.get(j).is_some_and(|t| self.objects.contains(t)) {
                return Some(EventSpan {
                    start: pos,
                    end: j + 1,
                    verb_index: pos,
                    verb_len: vl,
                    object_indices: vec![j],
                    kind: EventKind::VerbObject,
                });
            }
        }
        if self.ordinals.contains(&tokens[pos])
            && tokens.get(pos + 1).is_some_and(|t| self.action_nouns.contains(t))
        {
            return Some(EventSpan {
                start: pos,
                end: pos + 2,
                verb_index: pos,
                verb_len: 1,
                object_indices: vec![pos + 1],
                kind: EventKind::OrdinalAction,
            });
        }
        None
    }
}

/// Non-overlapping event spans in order of start index.
pub fn detect_events(q: &QuestionRecord, vocab: &EventVocab) -> Vec<EventSpan> {
    let tokens = &q.tokens;
    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match vocab.match_at(tokens, i) {
            Some(span) => {
                i = span.end;
                spans.push(span);
            }
            None => i += 1,
        }
    }
    spans
}

/// One marker per token that is a key of `table`, in index order.
pub fn detect_temporal_markers(q: &QuestionRecord, table: &SwapTable) -> Vec<TemporalMarker> {
    q.tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| table.contains(t))
        .filter_map(|(i, t)| {
            TemporalKind::from_token(t).map(|kind| TemporalMarker {
                token_index: i,
                kind,
            })
        })
        .collect()
}
