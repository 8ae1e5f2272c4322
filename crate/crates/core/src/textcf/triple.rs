use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::detect::{detect_events, detect_temporal_markers, EventVocab};
use super::lexicon::{SwapTable, SynonymLexicon};
use super::question::QuestionRecord;
use super::transform::{mask_events, swap_temporal, synonym_substitute, Edit};
use crate::error::{Error, Result};

/// How the negative question is built. Positives always use synonym substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TextVariant {
    /// Mask events.
    #[serde(rename = "f_q1")]
    MaskEvents,
    /// Swap temporal terms.
    #[serde(rename = "f_q2")]
    SwapTime,
    /// Mask events, then swap the temporal terms that remain.
    #[serde(rename = "f_q3")]
    MaskThenSwap,
}

impl TextVariant {
    pub const ALL: [TextVariant; 3] = [Self::MaskEvents, Self::SwapTime, Self::MaskThenSwap];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MaskEvents => "f_q1",
            Self::SwapTime => "f_q2",
            Self::MaskThenSwap => "f_q3",
        }
    }
}

impl fmt::Display for TextVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TextVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown text variant {s:?} (expected f_q1, f_q2 or f_q3)")))
    }
}

/// Everything the text rewrites need.
#[derive(Debug, Clone)]
pub struct TextAugmenter {
    pub vocab: EventVocab,
    pub lexicon: SynonymLexicon,
    pub swap_table: SwapTable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTriple {
    pub original: QuestionRecord,
    pub positive: QuestionRecord,
    pub negative: QuestionRecord,
    pub contrastive_usable: bool,
    pub positive_edits: Vec<Edit>,
    pub negative_edits: Vec<Edit>,
}

pub fn make_question_triple<R: Rng + ?Sized>(
    q: &QuestionRecord,
    variant: TextVariant,
    aug: &TextAugmenter,
    rng: &mut R,
) -> Result<QuestionTriple> {
    let events = detect_events(q, &aug.vocab);
    let positive = synonym_substitute(q, &events, &aug.lexicon, rng);
    let (negative, negative_edits) = match variant {
        TextVariant::MaskEvents => {
            let r = mask_events(q, &events)?;
            (r.record, r.edits)
        }
        TextVariant::SwapTime => {
            let markers = detect_temporal_markers(q, &aug.swap_table);
            let r = swap_temporal(q, &markers, &aug.swap_table)?;
            (r.record, r.edits)
        }
        TextVariant::MaskThenSwap => {
            let masked = mask_events(q, &events)?;
            let markers = detect_temporal_markers(&masked.record, &aug.swap_table);
            let swapped = swap_temporal(&masked.record, &markers, &aug.swap_table)?;
            let mut edits = masked.edits;
            edits.extend(swapped.edits);
            (swapped.record, edits)
        }
    };
    let contrastive_usable = negative.tokens != q.tokens && negative.tokens != positive.record.tokens;
    Ok(QuestionTriple {
        original: q.clone(),
        positive: positive.record,
        negative,
        contrastive_usable,
        positive_edits: positive.edits,
        negative_edits,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub positive: Vec<Edit>,
    pub negative: Vec<Edit>,
}

/// One line of augmented-triple JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub original: String,
    pub positive: String,
    pub negative: String,
    pub contrastive_usable: bool,
    pub answer_label: usize,
    pub category: String,
    pub variant: TextVariant,
    pub provenance: Provenance,
}

impl QuestionTriple {
    pub fn to_record(&self, variant: TextVariant) -> TripleRecord {
        TripleRecord {
            original: self.original.canonical(),
            positive: self.positive.canonical(),
            negative: self.negative.canonical(),
            contrastive_usable: self.contrastive_usable,
            answer_label: self.original.answer_label,
            category: self.original.category.clone(),
            variant,
            provenance: Provenance {
                positive: self.positive_edits.clone(),
                negative: self.negative_edits.clone(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textcf::question::MASK_TOKEN;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn augmenter() -> TextAugmenter {
        TextAugmenter {
            vocab: EventVocab::new(&["open", "close", "take"], &["microwave", "milk", "cup"]).unwrap(),
            lexicon: SynonymLexicon::parse_tsv("open\tturn on\n").unwrap(),
            swap_table: SwapTable::builtin(),
        }
    }

    #[test]
    fn paired_example_under_mask_then_swap() {
        let q = QuestionRecord::parse("what did he do after open the microwave", 4, "after").unwrap();
        let t = make_question_triple(&q, TextVariant::MaskThenSwap, &augmenter(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.positive.canonical(), "what did he do after turn on the microwave");
        assert_eq!(t.negative.canonical(), "what did he do before [MASK]");
        assert!(t.contrastive_usable);
        for r in [&t.positive, &t.negative] {
            assert_eq!(r.answer_label, 4);
            assert_eq!(r.category, "after");
        }
    }

    #[test]
    fn swap_only_without_markers_is_unusable() {
        let q = QuestionRecord::parse("did he open the microwave", 0, "binary").unwrap();
        let t = make_question_triple(&q, TextVariant::SwapTime, &augmenter(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!t.contrastive_usable);
        assert_eq!(t.negative.tokens, q.tokens);
    }

    #[test]
    fn mask_only_keeps_markers() {
        let q = QuestionRecord::parse("take the cup before close the milk", 0, "x").unwrap();
        let t = make_question_triple(&q, TextVariant::MaskEvents, &augmenter(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.negative.tokens, [MASK_TOKEN, "before", MASK_TOKEN]);
    }

    #[test]
    fn unknown_variant_is_config_error() {
        assert!(matches!("f_q9".parse::<TextVariant>(), Err(Error::Config(_))));
        assert_eq!("f_q2".parse::<TextVariant>().unwrap(), TextVariant::SwapTime);
    }

    #[test]
    fn same_seed_same_triple() {
        let aug = TextAugmenter {
            lexicon: SynonymLexicon::builtin(),
            ..augmenter()
        };
        let q = QuestionRecord::parse("what did he do after take the cup", 1, "after").unwrap();
        let a = make_question_triple(&q, TextVariant::MaskThenSwap, &aug, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = make_question_triple(&q, TextVariant::MaskThenSwap, &aug, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
