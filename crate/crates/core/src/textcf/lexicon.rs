//! Synonym groups and the temporal swap table, both loaded from TSV.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::question::tokenize;
use crate::error::{Error, Result};

const BUILTIN_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const BUILTIN_SWAP_TABLE: &str = include_str!("../../data/swap_table.tsv");

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Groups of interchangeable phrases; a phrase is one or more tokens.
#[derive(Debug, Clone, Default)]
pub struct SynonymLexicon {
    groups: Vec<Vec<Vec<String>>>,
    index: HashMap<Vec<String>, usize>,
    max_phrase_len: usize,
}

impl SynonymLexicon {
    pub fn empty() -> Self {
        Self::default()
    }

    /// One group per line, phrases separated by tabs. Blank lines and `#`
    /// comments are skipped.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lex = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let phrases: Vec<Vec<String>> = line
                .split('\t')
                .map(tokenize)
                .filter(|p| !p.is_empty())
                .collect();
            lex.add_group(phrases)
                .map_err(|e| Error::Input(format!("lexicon line {}: {e}", lineno + 1)))?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_tsv(&read_text(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse_tsv(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn add_group(&mut self, phrases: Vec<Vec<String>>) -> Result<()> {
        if phrases.len() < 2 {
            return Err(Error::Input("a synonym group needs at least two phrases".into()));
        }
        let id = self.groups.len();
        for p in &phrases {
            if self.index.contains_key(p) || phrases.iter().filter(|q| *q == p).count() > 1 {
                return Err(Error::Input(format!("phrase {:?} listed twice", p.join(" "))));
            }
        }
        for p in &phrases {
            self.max_phrase_len = self.max_phrase_len.max(p.len());
            self.index.insert(p.clone(), id);
        }
        self.groups.push(phrases);
        Ok(())
    }

    pub fn group_of(&self, phrase: &[String]) -> Option<usize> {
        self.index.get(phrase).copied()
    }

    pub fn group(&self, id: usize) -> &[Vec<String>] {
        &self.groups[id]
    }

    pub fn groups(&self) -> &[Vec<Vec<String>>] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn max_phrase_len(&self) -> usize {
        self.max_phrase_len
    }

    /// Every token appearing in any phrase.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().flatten().flatten().map(String::as_str)
    }
}

/// Temporal relation a marker token expresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemporalKind {
    Before,
    After,
    First,
    Last,
    While,
    Then,
}

impl TemporalKind {
    pub fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "before" | "earlier" | "prior" => Self::Before,
            "after" | "later" | "following" => Self::After,
            "first" | "initial" | "initially" => Self::First,
            "last" | "final" | "finally" => Self::Last,
            "while" | "during" | "meanwhile" => Self::While,
            "then" | "next" | "afterwards" => Self::Then,
            _ => return None,
        })
    }
}

/// Involutive token map: `image(image(t)) == t` for every key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SwapTable {
    map: BTreeMap<String, String>,
}

impl SwapTable {
    /// Two tab-separated columns per line; each line contributes both directions.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut table = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            if cols.len() != 2 {
                return Err(Error::Input(format!(
                    "swap table line {}: expected 2 columns, got {}",
                    lineno + 1,
                    cols.len()
                )));
            }
            table
                .add_pair(cols[0], cols[1])
                .map_err(|e| Error::Input(format!("swap table line {}: {e}", lineno + 1)))?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_tsv(&read_text(path)?)
    }

    pub fn builtin() -> Self {
        Self::parse_tsv(BUILTIN_SWAP_TABLE).expect("bundled swap table is valid")
    }

    pub fn add_pair(&mut self, a: &str, b: &str) -> Result<()> {
        let (a, b) = (a.to_lowercase(), b.to_lowercase());
        if a == b {
            return Err(Error::Input(format!("{a:?} cannot swap with itself")));
        }
        for t in [&a, &b] {
            if t.split_whitespace().count() != 1 {
                return Err(Error::Input(format!("{t:?} is not a single token")));
            }
            if TemporalKind::from_token(t).is_none() {
                return Err(Error::Input(format!("{t:?} is not a known temporal term")));
            }
            if self.map.contains_key(t) {
                return Err(Error::Input(format!("{t:?} appears in two pairs")));
            }
        }
        self.map.insert(a.clone(), b.clone());
        self.map.insert(b, a);
        Ok(())
    }

    pub fn image(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.map.contains_key(token)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}
