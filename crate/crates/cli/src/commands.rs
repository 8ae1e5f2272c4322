use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use cfcon_core::numkit::GradCheckOptions;
use cfcon_core::synthgen::{generate_dataset, read_dataset, write_dataset};
use cfcon_core::textcf::{make_question_triple, SwapTable, SynonymLexicon, TextAugmenter};
use cfcon_core::trainkit::{
    dataset_grad_check, evaluate, format_table, run_ablation, similarity_audit, start_state, train, Augmentation,
};
use cfcon_core::videocf::{make_video_pair, read_bboxes, select_region};
use cfcon_core::{
    Dataset, FrameGrid, GenConfig, QuestionRecord, TensorFile, TextVariant, TrainConfig, TrainState, VideoVariant,
    WorldSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{
    AblateArgs, AugmentTextArgs, AugmentVideoArgs, AuditArgs, Command, ConfigArgs, EvalArgs, GenDataArgs,
    GradcheckArgs, UsageError,
};

pub fn run(cmd: Command, sets: &[(String, String)]) -> Result<ExitCode> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::AugmentText(a) => augment_text(a),
        Command::AugmentVideo(a) => augment_video(a),
        Command::Train(a) => train_cmd(&a, sets),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a, sets),
        Command::Audit(a) => audit(a, sets),
        Command::Ablate(a) => ablate(a, sets),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Configuration file (or defaults) with overrides applied. Without a file,
/// `--stage 2` starts from the stage-2 defaults.
fn load_config(a: &ConfigArgs, sets: &[(String, String)]) -> Result<TrainConfig> {
    let base = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None if sets.iter().any(|(k, v)| k == "stage" && v.trim() == "2") => TrainConfig {
            stage: 2,
            epochs: 5,
            ..TrainConfig::default()
        },
        None => TrainConfig::default(),
    };
    base.with_overrides(sets).map_err(|e| usage(e.to_string()))
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| usage(format!("missing --{flag}")))
}

fn load_dataset(p: &Path) -> Result<Dataset> {
    read_dataset(p).with_context(|| format!("reading dataset {}", p.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_world(p: &Option<PathBuf>) -> Result<WorldSpec> {
    let w = match p {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing world {}", p.display()))?
        }
        None => WorldSpec::default(),
    };
    w.validate()?;
    Ok(w)
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let world = load_world(&a.world)?;
    let d = GenConfig::default();
    let gen = GenConfig {
        num_qa: a.num_qa.unwrap_or(d.num_qa),
        qa_per_episode: a.qa_per_episode.unwrap_or(d.qa_per_episode),
        min_events: a.min_events.unwrap_or(d.min_events),
        max_events: a.max_events.unwrap_or(d.max_events),
        seed: a.seed.unwrap_or(d.seed),
    };
    let ds = generate_dataset(&world, &gen)?;
    write_dataset(&ds, &a.out)?;
    let counts: std::collections::BTreeMap<&str, usize> =
        ds.category_counts().into_iter().map(|(c, n)| (c.as_str(), n)).collect();
    print_json(&serde_json::json!({
        "records": ds.len(),
        "episodes": ds.videos.len(),
        "answers": ds.meta.answers.len(),
        "categories": counts,
    }))
}

/// One input question; dataset records and hand-written lines both fit.
#[derive(Deserialize)]
struct QuestionLine {
    #[serde(default, alias = "question_tokens")]
    tokens: Option<Vec<String>>,
    #[serde(default, alias = "raw", alias = "text")]
    question: Option<String>,
    #[serde(default)]
    answer_label: usize,
    #[serde(default)]
    category: String,
}

impl QuestionLine {
    fn record(self) -> cfcon_core::Result<QuestionRecord> {
        match (self.tokens, self.question) {
            (Some(t), _) => QuestionRecord::from_tokens(t, self.answer_label, self.category),
            (None, Some(q)) => QuestionRecord::parse(&q, self.answer_label, self.category),
            (None, None) => Err(cfcon_core::Error::Input("line has neither tokens nor question".into())),
        }
    }
}

fn augment_text(a: AugmentTextArgs) -> Result<()> {
    let variant: TextVariant = a.variant.parse().map_err(|e: cfcon_core::Error| usage(e.to_string()))?;
    let world = load_world(&a.world)?;
    let lexicon = match &a.lexicon {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::builtin(),
    };
    let swap = match &a.swap_table {
        Some(p) => SwapTable::load(p)?,
        None => SwapTable::builtin(),
    };
    let aug: TextAugmenter = world.augmenter(lexicon, swap)?;
    let file = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let mut n = 0u64;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", a.input.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let q = serde_json::from_str::<QuestionLine>(&line)
            .map_err(anyhow::Error::from)
            .and_then(|l| Ok(l.record()?))
            .with_context(|| format!("{} line {}", a.input.display(), i + 1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(n);
        let t = make_question_triple(&q, variant, &aug, &mut rng)?;
        writeln!(out, "{}", serde_json::to_string(&t.to_record(variant))?)?;
        n += 1;
    }
    out.flush()?;
    Ok(())
}

fn augment_video(a: AugmentVideoArgs) -> Result<()> {
    let variant: VideoVariant = a.variant.parse().map_err(|e: cfcon_core::Error| usage(e.to_string()))?;
    let (video, video_id, mut boxes) = match (&a.input, &a.dataset) {
        (Some(p), _) => {
            let f = TensorFile::read(p)?;
            let (name, t) = match &a.tensor {
                Some(n) => f
                    .tensors
                    .iter()
                    .find(|(m, _)| m == n)
                    .ok_or_else(|| anyhow!("{} has no tensor {n:?}", p.display()))?,
                None if f.tensors.len() == 1 => &f.tensors[0],
                None => return Err(usage(format!("{} holds {} tensors; pick one with --tensor", p.display(), f.tensors.len()))),
            };
            let id = a.video_id.clone().unwrap_or_else(|| name.clone());
            (FrameGrid::new(t.clone())?, id, None)
        }
        (None, Some(dir)) => {
            let ds = load_dataset(dir)?;
            let id = a.video_id.clone().ok_or_else(|| usage("--dataset needs --video-id"))?;
            let v = ds.videos.get(&id).ok_or_else(|| anyhow!("dataset has no video {id:?}"))?.clone();
            let b = ds.bboxes_of(&id);
            (v, id, (!b.is_empty()).then_some(b))
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    if let Some(p) = &a.bboxes {
        boxes = Some(read_bboxes(p)?.remove(&video_id).unwrap_or_default());
    }
    let (pos, neg) = make_video_pair(&video, variant, boxes.as_deref(), a.fill)?;
    let region = select_region(variant, video.height(), video.width(), video.frames(), boxes.as_deref())?;
    let selected: Vec<usize> = (0..video.frames()).map(|n| region.selected_pixels(n)).collect();
    let mut f = TensorFile::new(serde_json::json!({
        "video_id": video_id,
        "variant": variant,
        "fill": a.fill,
        "selected_pixels": selected,
    }));
    f.push("positive", pos.into_tensor());
    f.push("negative", neg.into_tensor());
    f.write(&a.out)?;
    let hw = (video.height() * video.width()) as f64;
    print_json(&serde_json::json!({
        "video_id": video_id,
        "variant": variant,
        "frames": video.frames(),
        "selected_fraction": selected.iter().map(|&s| s as f64 / hw).collect::<Vec<_>>(),
    }))
}

fn train_cmd(a: &ConfigArgs, sets: &[(String, String)]) -> Result<()> {
    let cfg = load_config(a, sets)?;
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset")?)?;
    let mut state = start_state(&ds, &cfg)?;
    let report = train(&ds, &mut state, &cfg)?;
    for e in &report.epochs {
        eprintln!(
            "stage {} epoch {}: loss {:.6} (qa {:.6}, con {:.6}) train accuracy {:.4}",
            e.stage, e.epoch, e.total, e.l_qa, e.l_con, e.train_accuracy
        );
    }
    let eval_ds = match &cfg.paths.eval_dataset {
        Some(p) => load_dataset(p)?,
        None => ds.clone(),
    };
    let mut metrics = evaluate(&eval_ds, &state)?;
    if cfg.stage == 2 {
        let aug = Augmentation::new(&ds, &cfg)?;
        metrics.similarity = Some(similarity_audit(&ds, &state, &aug, cfg.seed)?);
    }
    if let Some(dir) = &cfg.paths.metrics_dir {
        write_json(&dir.join(format!("metrics-stage{}.json", cfg.stage)), &metrics)?;
    }
    print_json(&metrics)
}

fn eval(a: EvalArgs) -> Result<()> {
    let state = TrainState::load(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset)?;
    let metrics = evaluate(&ds, &state)?;
    if let Some(p) = &a.out {
        write_json(p, &metrics)?;
    }
    print_json(&metrics)
}

fn gradcheck(a: GradcheckArgs, sets: &[(String, String)]) -> Result<()> {
    let cfg = load_config(&a.config, sets)?;
    cfg.weights.validate()?;
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let ds = match &cfg.paths.dataset {
        Some(p) => load_dataset(p)?,
        None => generate_dataset(
            &WorldSpec::default(),
            &GenConfig {
                num_qa: a.samples,
                seed: cfg.seed,
                ..GenConfig::default()
            },
        )?,
    };
    let opts = GradCheckOptions {
        eps: a.eps,
        max_coords: (a.coords > 0).then_some(a.coords),
        seed: cfg.seed,
    };
    let (report, usable) = dataset_grad_check(&ds, &cfg, a.samples, &opts)?;
    for t in &report.tensors {
        println!("{:<28} {:>6} coords  max rel err {:.3e}", t.name, t.coords_checked, t.max_rel_error);
    }
    let worst = report.max_rel_error();
    println!(
        "{} tensors, {} samples ({} with counterfactual pairs): max rel err {:.3e} (tolerance {:.1e})",
        report.tensors.len(),
        a.samples,
        usable,
        worst,
        a.tol
    );
    if worst.is_nan() || worst > a.tol {
        bail!("gradient check failed: max relative error {worst:.3e} exceeds {:.1e}", a.tol);
    }
    Ok(())
}

fn audit(a: AuditArgs, sets: &[(String, String)]) -> Result<()> {
    let cfg = load_config(&a.config, sets)?;
    let ds = load_dataset(required(&cfg.paths.dataset, "dataset")?)?;
    let state = TrainState::load(required(&cfg.paths.checkpoint_in, "checkpoint")?)?;
    let aug = Augmentation::new(&ds, &cfg)?;
    let report = similarity_audit(&ds, &state, &aug, cfg.seed)?;
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    print_json(&report)
}

fn ablate(a: AblateArgs, sets: &[(String, String)]) -> Result<()> {
    let cfg = load_config(&a.config, sets)?;
    let train_ds = load_dataset(required(&cfg.paths.dataset, "dataset")?)?;
    let test_ds = load_dataset(required(&cfg.paths.eval_dataset, "eval-dataset")?)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let report = run_ablation(&train_ds, &test_ds, &cfg, a.stage2_epochs, Some(&a.out))?;
    print!("{}", format_table(&report));
    Ok(())
}
