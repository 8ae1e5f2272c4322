//! Text counterfactuals: paraphrased positives and event-masked /
//! time-swapped negatives.

pub mod detect;
pub mod lexicon;
pub mod question;
pub mod transform;
pub mod triple;
pub mod verify;

pub use detect::{detect_events, detect_temporal_markers, EventKind, EventSpan, EventVocab, TemporalMarker};
pub use lexicon::{SwapTable, SynonymLexicon, TemporalKind};
pub use question::{tokenize, QuestionRecord, MASK_TOKEN};
pub use transform::{mask_events, swap_temporal, synonym_substitute, Edit, EditOp, Rewrite};
pub use triple::{make_question_triple, QuestionTriple, TextAugmenter, TextVariant, TripleRecord};

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const WORDS: &[&str] = &[
        "what", "did", "the", "person", "do", "after", "before", "first", "last", "action",
        "open", "close", "take", "put", "wash", "milk", "cup", "bowl", "microwave", "then",
        "while", "a", "and",
    ];

    fn augmenter() -> TextAugmenter {
        TextAugmenter {
            vocab: EventVocab::new(
                &["open", "close", "take", "put", "wash"],
                &["milk", "cup", "bowl", "microwave"],
            )
            .unwrap(),
            lexicon: SynonymLexicon::builtin(),
            swap_table: SwapTable::builtin(),
        }
    }

    fn question() -> impl Strategy<Value = QuestionRecord> {
        prop::collection::vec(0usize..WORDS.len(), 1..16).prop_map(|idx| {
            let text: Vec<&str> = idx.iter().map(|&i| WORDS[i]).collect();
            QuestionRecord::parse(&text.join(" "), 7, "cat").unwrap()
        })
    }

    proptest! {
        #[test]
        fn positives_pass_reverse_lookup(q in question(), seed in any::<u64>()) {
            let aug = augmenter();
            let t = make_question_triple(&q, TextVariant::MaskThenSwap, &aug, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let events = detect_events(&q, &aug.vocab);
            prop_assert_eq!(
                verify::verify_positive(&q.tokens, &t.positive.tokens, &t.positive_edits, &events, &aug.lexicon),
                Ok(())
            );
        }

        #[test]
        fn mask_then_swap_negatives_rebuild(q in question(), seed in any::<u64>()) {
            let aug = augmenter();
            let t = make_question_triple(&q, TextVariant::MaskThenSwap, &aug, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let events = detect_events(&q, &aug.vocab);
            prop_assert_eq!(
                verify::verify_mask_then_swap(&q.tokens, &t.negative.tokens, &events, &aug.swap_table),
                Ok(())
            );
            if t.contrastive_usable {
                prop_assert_ne!(&t.positive.tokens, &t.negative.tokens);
            }
        }

        #[test]
        fn swap_is_involution(q in question()) {
            let table = SwapTable::builtin();
            let once = swap_temporal(&q, &detect_temporal_markers(&q, &table), &table).unwrap();
            prop_assert_eq!(once.record.tokens.len(), q.tokens.len());
            let twice = swap_temporal(&once.record, &detect_temporal_markers(&once.record, &table), &table).unwrap();
            prop_assert_eq!(twice.record.tokens, q.tokens);
        }

        #[test]
        fn label_and_category_preserved(q in question(), v in 0usize..3, seed in any::<u64>()) {
            let t = make_question_triple(&q, TextVariant::ALL[v], &augmenter(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for r in [&t.original, &t.positive, &t.negative] {
                prop_assert_eq!(r.answer_label, 7);
                prop_assert_eq!(&r.category, "cat");
            }
        }
    }
}
