use super::*;
use crate::textcf::{make_question_triple, QuestionRecord, TextVariant};
use crate::videocf::{mask, retain, select_region, VideoVariant};
use std::path::Path;

fn quiet_world() -> WorldSpec {
    WorldSpec {
        noise_level: 0.0,
        max_distractors: 0,
        ..WorldSpec::default()
    }
}

fn ev(world: &WorldSpec, verb: &str, object: &str) -> Event {
    Event {
        verb: world.verbs.iter().position(|v| v == verb).unwrap(),
        object: world.objects.iter().position(|o| o == object).unwrap(),
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn episodes_are_deterministic_and_never_repeat_adjacent_events() {
    let world = WorldSpec::default();
    let a = generate_episode(&world, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = generate_episode(&world, 5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a, b);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let ep = generate_episode(&world, 5, &mut rng).unwrap();
        assert_eq!(ep.events.len(), 5);
        assert!(ep.events.windows(2).all(|w| w[0] != w[1]));
    }
    assert!(matches!(generate_episode(&world, 1, &mut rng), Err(Error::Input(_))));
}

#[test]
fn first_event_is_uniform() {
    let world = WorldSpec::default();
    let n = world.num_events();
    let draws = 10_000;
    let mut counts = vec![0usize; n];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..draws {
        counts[generate_episode(&world, 2, &mut rng).unwrap().events[0].index(&world)] += 1;
    }
    let expected = draws as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.1% point of chi-square with 24 degrees of freedom.
    assert!(chi2 < 51.18, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn event_index_round_trips() {
    let world = WorldSpec::default();
    for i in 0..world.num_events() {
        assert_eq!(Event::from_index(i, &world).index(&world), i);
    }
    assert_eq!(world.event_name(ev(&world, "close", "milk")), "close milk");
}

#[test]
fn glyphs_are_distinct() {
    let world = WorldSpec::default();
    let gs: Vec<Vec<f64>> = (0..world.num_events())
        .map(|i| glyph(&world, Event::from_index(i, &world)))
        .collect();
    let size = gs[0].len();
    for i in 0..gs.len() {
        for j in i + 1..gs.len() {
            let hamming = gs[i].iter().zip(&gs[j]).filter(|(a, b)| a != b).count();
            assert!(hamming * 4 >= size, "glyphs {i} and {j} differ in only {hamming} of {size} pixels");
        }
    }
}

#[test]
fn noiseless_frame_is_the_glyph_in_the_center() {
    let world = quiet_world();
    let e = ev(&world, "take", "cup");
    let ep = Episode {
        events: vec![e, ev(&world, "wash", "cup")],
        seed: 1,
    };
    let r = render_episode(&ep, &world).unwrap();
    let g = glyph(&world, e);
    let rect = world.glyph_rect();
    let f0 = r.video.frame(0);
    for row in 0..world.height {
        for col in 0..world.width {
            let want = if rect.contains(row, col) {
                g[(row - rect.row0) * world.glyph_size + col - rect.col0]
            } else {
                0.0
            };
            assert_eq!(f0[row * world.width + col], want);
        }
    }
    assert!(r.glyph_boxes.iter().all(|b| *b == rect));
    let center = VideoVariant::Center.fixed_rect(world.height, world.width).unwrap();
    assert!(rect.row0 >= center.row0 && rect.row1 <= center.row1);
    assert!(rect.col0 >= center.col0 && rect.col1 <= center.col1);
}

#[test]
fn frames_follow_event_order() {
    let world = quiet_world();
    let events = vec![ev(&world, "open", "milk"), ev(&world, "close", "milk"), ev(&world, "put", "bowl")];
    let r = render_episode(&Episode { events: events.clone(), seed: 0 }, &world).unwrap();
    let g = world.glyph_rect();
    for f in 0..world.frames {
        let e = events[event_of_frame(f, world.frames, 3)];
        let pattern = glyph(&world, e);
        let frame = r.video.frame(f);
        let got: Vec<f64> = (g.row0..g.row1)
            .flat_map(|row| (g.col0..g.col1).map(move |col| (row, col)))
            .map(|(row, col)| frame[row * world.width + col])
            .collect();
        assert_eq!(got, pattern, "frame {f}");
    }
    assert_eq!((0..8).map(|f| event_of_frame(f, 8, 3)).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1, 1, 2, 2]);
}

#[test]
fn distractors_stay_out_of_the_center() {
    let world = WorldSpec {
        noise_level: 0.0,
        max_distractors: 3,
        ..WorldSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut outside_energy = 0.0;
    for _ in 0..20 {
        let ep = generate_episode(&world, 4, &mut rng).unwrap();
        let r = render_episode(&ep, &world).unwrap();
        let region = select_region(VideoVariant::Center, world.height, world.width, world.frames, None).unwrap();
        let masked = mask(&r.video, &region, 0.0).unwrap();
        outside_energy += masked.data().iter().sum::<f64>();
        // Keeping the center keeps exactly the glyph layer.
        let quiet = render_episode(&ep, &quiet_world()).unwrap();
        assert_eq!(retain(&r.video, &region, 0.0).unwrap(), quiet.video);
    }
    assert!(outside_energy > 0.0);
}

#[test]
fn center_mask_of_a_clean_render_is_empty() {
    let world = quiet_world();
    let ep = generate_episode(&world, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let r = render_episode(&ep, &world).unwrap();
    let region = select_region(VideoVariant::Center, world.height, world.width, world.frames, None).unwrap();
    assert!(mask(&r.video, &region, 0.0).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn noise_stays_in_range() {
    let world = WorldSpec {
        noise_level: 0.3,
        ..WorldSpec::default()
    };
    let ep = generate_episode(&world, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let r = render_episode(&ep, &world).unwrap();
    assert!(r.video.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert_eq!(r, render_episode(&ep, &world).unwrap());
}

#[test]
fn world_validation() {
    assert!(WorldSpec::default().validate().is_ok());
    let bad = [
        WorldSpec { height: 62, ..WorldSpec::default() },
        WorldSpec { glyph_size: 40, ..WorldSpec::default() },
        WorldSpec { objects: vec!["milk".into(), "milk".into()], ..WorldSpec::default() },
        WorldSpec { objects: vec!["milk carton".into()], ..WorldSpec::default() },
        WorldSpec { noise_level: 1.0, ..WorldSpec::default() },
        WorldSpec { distractor_size: 20, max_distractors: 2, ..WorldSpec::default() },
    ];
    for w in bad {
        assert!(matches!(w.validate(), Err(Error::Config(_))), "{w:?}");
    }
    let ep = Episode {
        events: vec![Event { verb: 0, object: 0 }, Event { verb: 1, object: 0 }, Event { verb: 0, object: 0 }],
        seed: 0,
    };
    let short = WorldSpec { frames: 2, ..WorldSpec::default() };
    assert!(matches!(render_episode(&ep, &short), Err(Error::Config(_))));
}

#[test]
fn after_open_milk_is_close_milk() {
    let world = WorldSpec::default();
    let ep = Episode {
        events: vec![ev(&world, "open", "milk"), ev(&world, "close", "milk"), ev(&world, "take", "cup")],
        seed: 0,
    };
    let answers = AnswerSet::for_world(&world);
    let q = tokens("what did the person do after open the milk");
    assert_eq!(answer_from_episode(&ep, &world, &q), answers.label("close milk"));
    let q = tokens("what did the person do before take the cup");
    assert_eq!(answer_from_episode(&ep, &world, &q), answers.label("close milk"));
    assert_eq!(
        answer_from_episode(&ep, &world, &tokens("what was the last action")),
        answers.label("take cup")
    );
    assert_eq!(
        answer_from_episode(&ep, &world, &tokens("did the person wash the bowl")),
        Some(answers.no())
    );
    assert_eq!(answer_from_episode(&ep, &world, &tokens("what did the person do after take the cup")), None);
    assert_eq!(answers.len(), 27);
    assert_eq!(answers.answers()[answers.yes()], "yes");
}

#[test]
fn generated_answers_match_a_rescan_of_the_episode() {
    let world = WorldSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..300 {
        let k = rng.gen_range(2..=5);
        let ep = generate_episode(&world, k, &mut rng).unwrap();
        for d in generate_qa(&ep, &world, 5, &mut rng) {
            assert_eq!(answer_from_episode(&ep, &world, &d.tokens), Some(d.answer_label), "{:?}", d.tokens);
            seen.insert(d.category);
        }
    }
    assert_eq!(seen.len(), QaCategory::ALL.len());
}

#[test]
fn generated_questions_support_the_text_rewrites() {
    let world = WorldSpec::default();
    let aug = world.augmenter(SynonymLexicon::builtin(), SwapTable::builtin()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let ep = generate_episode(&world, 4, &mut rng).unwrap();
        for d in generate_qa(&ep, &world, 5, &mut rng) {
            let q = QuestionRecord::from_tokens(d.tokens.clone(), d.answer_label, d.category.as_str()).unwrap();
            let masked = make_question_triple(&q, TextVariant::MaskEvents, &aug, &mut rng).unwrap();
            // "first action" and "last action" count as events too.
            assert!(masked.contrastive_usable, "{:?}", d.tokens);
            let swapped = make_question_triple(&q, TextVariant::SwapTime, &aug, &mut rng).unwrap();
            assert_eq!(swapped.contrastive_usable, !d.category.is_binary(), "{:?}", d.tokens);
        }
    }
}

#[test]
fn vocabulary_covers_generated_and_rewritten_tokens() {
    let world = WorldSpec::default();
    let vocab = TokenVocab::build(&world, &SynonymLexicon::builtin(), &SwapTable::builtin());
    assert_eq!(&vocab.tokens()[..3], &["[PAD]", "[UNK]", "[MASK]"]);
    assert_eq!(vocab.id("[MASK]"), MASK_ID);
    assert_eq!(vocab.id("zebra"), UNK_ID);
    let ds = generate_dataset(&world, &GenConfig { num_qa: 200, ..GenConfig::default() }).unwrap();
    for r in &ds.records {
        assert!(r.question_tokens.iter().all(|t| vocab.id(t) != UNK_ID), "{:?}", r.question_tokens);
    }
    for t in SynonymLexicon::builtin().tokens() {
        assert_ne!(vocab.id(t), UNK_ID);
    }
    let ids = vocab.encode(&tokens("did the person open the milk"), 8);
    assert_eq!(ids.len(), 8);
    assert_eq!(&ids[6..], &[0, 0]);
}

fn small_dataset(num_qa: usize) -> Dataset {
    generate_dataset(&WorldSpec::default(), &GenConfig { num_qa, seed: 13, ..GenConfig::default() }).unwrap()
}

#[test]
fn dataset_generation_is_deterministic_and_consistent() {
    let a = small_dataset(50);
    assert_eq!(a, small_dataset(50));
    assert_eq!(a.len(), 50);
    assert_eq!(a.videos.len(), 13);
    a.verify_answers().unwrap();
    for r in &a.records {
        let v = a.video(r).unwrap();
        assert_eq!((v.frames(), v.channels(), v.height(), v.width()), (8, 1, 64, 64));
        let k = a.meta.episodes[&r.video_id].events.len();
        assert!((3..=5).contains(&k));
    }
    assert_eq!(a.bboxes_of("ep00000").len(), 8);
    // A different seed gives different episodes.
    let b = generate_dataset(&WorldSpec::default(), &GenConfig { num_qa: 50, seed: 14, ..GenConfig::default() }).unwrap();
    assert_ne!(a.meta.episodes, b.meta.episodes);
}

#[test]
fn gen_config_validation() {
    let world = WorldSpec::default();
    for g in [
        GenConfig { num_qa: 0, ..GenConfig::default() },
        GenConfig { min_events: 1, ..GenConfig::default() },
        GenConfig { min_events: 4, max_events: 3, ..GenConfig::default() },
        GenConfig { max_events: 9, ..GenConfig::default() },
    ] {
        assert!(matches!(generate_dataset(&world, &g), Err(Error::Config(_))), "{g:?}");
    }
}

#[test]
fn dataset_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(30);
    write_dataset(&ds, dir.path()).unwrap();
    for f in ["dataset.json", "qa.jsonl", "frames.bin", "bboxes.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, ds);
}

fn expect_format_error(dir: &Path, needle: &str) {
    match read_dataset(dir) {
        Err(e @ Error::Format { .. }) => assert!(e.to_string().contains(needle), "{e}"),
        other => panic!("expected a format error mentioning {needle:?}, got {other:?}"),
    }
}

#[test]
fn damaged_datasets_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(10);
    write_dataset(&ds, dir.path()).unwrap();

    let qa = dir.path().join("qa.jsonl");
    let text = std::fs::read_to_string(&qa).unwrap();
    std::fs::write(&qa, text.replacen("\"ep00000\"}", "\"ep99999\"}", 1)).unwrap();
    expect_format_error(dir.path(), "ep99999");
    std::fs::write(&qa, &text).unwrap();

    let meta = dir.path().join("dataset.json");
    let m = std::fs::read_to_string(&meta).unwrap();
    std::fs::write(&meta, m.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
    expect_format_error(dir.path(), "version");
    std::fs::write(&meta, &m).unwrap();

    std::fs::remove_file(dir.path().join("frames.bin")).unwrap();
    expect_format_error(dir.path(), "frames.bin");
}

#[test]
fn full_size_dataset_loads_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(2000);
    write_dataset(&ds, dir.path()).unwrap();
    let t = std::time::Instant::now();
    let back = read_dataset(dir.path()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 5.0, "{:?}", t.elapsed());
    assert_eq!(back.len(), 2000);
}
