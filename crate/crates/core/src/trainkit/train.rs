use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::data::{derived_rng, prepare_samples, Augmentation, Batch, Sample, Stream};
use crate::error::{Error, Result};
use crate::losses::{batch_objective, BatchPredictions, LossBreakdown, LossWeights};
use crate::model::{AnswerDistribution, ForwardCache, Model};
use crate::numkit::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::numkit::{adam_step, AdamState, Grads, ParamStore, Tensor, TensorFile};
use crate::synthgen::Dataset;

const ADAM_M: &str = "adam.m:";
const ADAM_V: &str = "adam.v:";

/// Model, parameters and optimizer state, as stored in a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub params: ParamStore,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub stage: u8,
    /// Answer strings and token vocabulary the model was trained against.
    pub answers: Vec<String>,
    pub vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    stage: u8,
    epochs_done: usize,
    adam_t: u64,
    answers: Vec<String>,
    vocab: Vec<String>,
}

impl TrainState {
    /// Freshly initialized model sized for `ds`.
    pub fn init(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let model = Model::new(cfg.model_config(ds))?;
        let params = model.init_params();
        Ok(Self {
            model,
            params,
            adam: AdamState::new(),
            epochs_done: 0,
            stage: 0,
            answers: ds.meta.answers.clone(),
            vocab: ds.meta.vocab.clone(),
        })
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let meta = CheckpointMeta {
            stage: self.stage,
            epochs_done: self.epochs_done,
            adam_t: self.adam.t,
            answers: self.answers.clone(),
            vocab: self.vocab.clone(),
        };
        let mut f = self.model.to_tensor_file(&self.params, serde_json::to_value(meta)?)?;
        for (name, t) in &self.adam.m {
            f.push(format!("{ADAM_M}{name}"), t.clone());
        }
        for (name, t) in &self.adam.v {
            f.push(format!("{ADAM_V}{name}"), t.clone());
        }
        Ok(f)
    }

    pub fn from_tensor_file(f: &TensorFile, path: &Path) -> Result<Self> {
        let (model, params) = Model::from_tensor_file(f, path)?;
        let extra = f.meta.get("extra").cloned().unwrap_or_default();
        let meta: CheckpointMeta = serde_json::from_value(extra)
            .map_err(|e| Error::format(path, format!("checkpoint lacks training metadata: {e}")))?;
        let mut adam = AdamState::new();
        adam.t = meta.adam_t;
        for (name, t) in &f.tensors {
            if let Some(n) = name.strip_prefix(ADAM_M) {
                adam.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = name.strip_prefix(ADAM_V) {
                adam.v.insert(n.to_string(), t.clone());
            }
        }
        Ok(Self {
            model,
            params,
            adam,
            epochs_done: meta.epochs_done,
            stage: meta.stage,
            answers: meta.answers,
            vocab: meta.vocab,
        })
    }

    /// Written to a sibling temporary file first, so an interrupted write
    /// never replaces a good checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        self.to_tensor_file()?.write(&tmp)?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }

    /// The checkpoint must have been trained on this dataset's label space,
    /// vocabulary and frame geometry.
    pub fn check_compatible(&self, ds: &Dataset) -> Result<()> {
        if self.answers != ds.meta.answers {
            return Err(Error::Config(format!(
                "answer set mismatch: checkpoint has {} answers, dataset has {}",
                self.answers.len(),
                ds.meta.answers.len()
            )));
        }
        if self.vocab != ds.meta.vocab {
            return Err(Error::Config("token vocabulary of checkpoint and dataset differ".into()));
        }
        let (c, w) = (self.model.config(), &ds.meta.world);
        if (c.n_frames, c.channels, c.height, c.width) != (w.frames, w.channels, w.height, w.width) {
            return Err(Error::Config(format!(
                "checkpoint expects {}x{}x{}x{} videos, dataset has {}x{}x{}x{}",
                c.n_frames, c.channels, c.height, c.width, w.frames, w.channels, w.height, w.width
            )));
        }
        Ok(())
    }

    /// Prediction for one sample.
    pub fn predict(&self, s: &Sample<'_>) -> Result<AnswerDistribution> {
        self.model.forward(&self.params, s.video, &s.ids)
    }
}

fn forward(
    model: &Model,
    p: &ParamStore,
    videos: &[&crate::videocf::FrameGrid],
    ids: &[Vec<usize>],
) -> Result<(Vec<AnswerDistribution>, Option<ForwardCache>)> {
    if videos.is_empty() {
        return Ok((Vec::new(), None));
    }
    let ids: Vec<&[usize]> = ids.iter().map(Vec::as_slice).collect();
    let (out, cache) = model.forward_batch(p, videos, &ids)?;
    Ok((out, Some(cache)))
}

struct BatchForward {
    orig: (Vec<AnswerDistribution>, Option<ForwardCache>),
    pos: (Vec<AnswerDistribution>, Option<ForwardCache>),
    neg: (Vec<AnswerDistribution>, Option<ForwardCache>),
}

fn forward_all(model: &Model, p: &ParamStore, b: &Batch<'_>) -> Result<BatchForward> {
    let pos_refs: Vec<_> = b.pos_videos.iter().collect();
    let neg_refs: Vec<_> = b.neg_videos.iter().collect();
    Ok(BatchForward {
        orig: forward(model, p, &b.videos, &b.ids)?,
        pos: forward(model, p, &pos_refs, &b.pos_ids)?,
        neg: forward(model, p, &neg_refs, &b.neg_ids)?,
    })
}

fn objective(f: &BatchForward, b: &Batch<'_>, w: &LossWeights) -> Result<(LossBreakdown, crate::losses::BatchGrads)> {
    batch_objective(
        &BatchPredictions {
            orig: &f.orig.0,
            pos: &f.pos.0,
            neg: &f.neg.0,
            labels: &b.labels,
            usable: &b.usable,
        },
        w,
    )
}

/// The weighted objective of one batch.
pub fn batch_loss(model: &Model, p: &ParamStore, b: &Batch<'_>, w: &LossWeights) -> Result<LossBreakdown> {
    Ok(objective(&forward_all(model, p, b)?, b, w)?.0)
}

/// The weighted objective, its parameter gradients, and the predictions on
/// the original samples.
pub fn batch_loss_and_grads(
    model: &Model,
    p: &ParamStore,
    b: &Batch<'_>,
    w: &LossWeights,
) -> Result<(LossBreakdown, Grads, Vec<AnswerDistribution>)> {
    let f = forward_all(model, p, b)?;
    let (breakdown, d) = objective(&f, b, w)?;
    let mut g = Grads::zeros_like(p);
    for ((_, cache), dp) in [(&f.orig, &d.d_orig), (&f.pos, &d.d_pos), (&f.neg, &d.d_neg)] {
        if let Some(c) = cache {
            model.backward_batch(p, c, dp, &mut g)?;
        }
    }
    Ok((breakdown, g, f.orig.0))
}

/// Finite-difference check of the full weighted objective on one batch.
pub fn objective_grad_check(
    model: &Model,
    p: &ParamStore,
    b: &Batch<'_>,
    w: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let value = |q: &ParamStore| Ok(batch_loss(model, q, b, w)?.total);
    let grad = |q: &ParamStore| {
        let (l, g, _) = batch_loss_and_grads(model, q, b, w)?;
        Ok((l.total, g))
    };
    grad_check(&(value, grad), p, opts)
}

/// Finite-difference check of the full objective on the first `n` samples
/// of `ds`, with counterfactuals drawn the way the first stage-2 epoch draws
/// them. The model comes from `cfg.paths.checkpoint_in` when set, else from
/// a fresh initialization. Returns the report and the number of samples with
/// a usable counterfactual pair.
pub fn dataset_grad_check(
    ds: &Dataset,
    cfg: &TrainConfig,
    n: usize,
    opts: &GradCheckOptions,
) -> Result<(GradCheckReport, usize)> {
    if n == 0 || n > ds.len() {
        return Err(Error::Input(format!("need 1..={} samples, asked for {n}", ds.len())));
    }
    let state = match &cfg.paths.checkpoint_in {
        Some(p) => TrainState::load(p)?,
        None => TrainState::init(ds, cfg)?,
    };
    state.check_compatible(ds)?;
    let vocab = ds.token_vocab()?;
    let text_len = state.model.config().text_len;
    let samples = prepare_samples(ds, &vocab, text_len)?;
    let picked: Vec<&Sample<'_>> = samples.iter().take(n).collect();
    let aug = Augmentation::new(ds, cfg)?;
    let mut rngs: Vec<_> = (0..n).map(|i| derived_rng(cfg.seed, Stream::Augment, 0, i)).collect();
    let batch = Batch::counterfactual(&picked, &aug, &vocab, text_len, &mut rngs)?;
    let report = objective_grad_check(&state.model, &state.params, &batch, &cfg.weights, opts)?;
    Ok((report, batch.num_usable()))
}

/// One optimizer step's losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub stage: u8,
    pub epoch: usize,
    pub step: usize,
    pub batch: usize,
    pub usable: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Epoch means of the step losses, plus accuracy of the original-sample
/// predictions seen during the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub stage: u8,
    pub epoch: usize,
    pub steps: usize,
    pub l_qa: f64,
    pub l_pos: f64,
    pub l_neg: f64,
    pub l_con: f64,
    pub total: f64,
    pub train_accuracy: f64,
    pub usable_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
}

struct MetricsSink {
    steps: BufWriter<File>,
    epochs: BufWriter<File>,
    dir: PathBuf,
}

impl MetricsSink {
    fn open(dir: &Path, stage: u8) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: String| -> Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?))
        };
        Ok(Self {
            steps: open(format!("steps-stage{stage}.jsonl"))?,
            epochs: open(format!("epochs-stage{stage}.jsonl"))?,
            dir: dir.to_path_buf(),
        })
    }

    fn line<T: Serialize>(w: &mut BufWriter<File>, dir: &Path, row: &T) -> Result<()> {
        let mut s = serde_json::to_string(row)?;
        s.push('\n');
        w.write_all(s.as_bytes()).map_err(|e| Error::io(dir, e))
    }

    fn step(&mut self, row: &StepRow) -> Result<()> {
        Self::line(&mut self.steps, &self.dir, row)
    }

    fn epoch(&mut self, row: &EpochRow) -> Result<()> {
        Self::line(&mut self.epochs, &self.dir, row)?;
        self.steps.flush().map_err(|e| Error::io(&self.dir, e))?;
        self.epochs.flush().map_err(|e| Error::io(&self.dir, e))
    }
}

fn params_finite(p: &ParamStore) -> bool {
    p.iter().all(|(_, t)| t.data().iter().all(|x| x.is_finite()))
}

/// Set up the state a run starts from: a checkpoint if one is given, else a
/// fresh model.
pub fn start_state(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let state = match &cfg.paths.checkpoint_in {
        Some(p) => TrainState::load(p)?,
        None => TrainState::init(ds, cfg)?,
    };
    state.check_compatible(ds)?;
    Ok(state)
}

/// Answer-loss-only training.
pub fn train_stage1(ds: &Dataset, state: &mut TrainState, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.stage != 1 {
        return Err(Error::Config(format!("stage-1 training called with stage {}", cfg.stage)));
    }
    run(ds, state, cfg, None)
}

/// Training on the full weighted objective with counterfactual triples.
pub fn train_stage2(ds: &Dataset, state: &mut TrainState, cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.stage != 2 {
        return Err(Error::Config(format!("stage-2 training called with stage {}", cfg.stage)));
    }
    let aug = Augmentation::new(ds, cfg)?;
    if cfg.reset_optimizer {
        state.adam = AdamState::new();
    }
    run(ds, state, cfg, Some(&aug))
}

/// Dispatch on `cfg.stage`.
pub fn train(ds: &Dataset, state: &mut TrainState, cfg: &TrainConfig) -> Result<TrainReport> {
    match cfg.stage {
        1 => train_stage1(ds, state, cfg),
        _ => train_stage2(ds, state, cfg),
    }
}

fn run(ds: &Dataset, state: &mut TrainState, cfg: &TrainConfig, aug: Option<&Augmentation>) -> Result<TrainReport> {
    cfg.validate()?;
    state.check_compatible(ds)?;
    if ds.is_empty() {
        return Err(Error::Input("training on an empty dataset".into()));
    }
    let vocab = ds.token_vocab()?;
    let text_len = state.model.config().text_len;
    let samples = prepare_samples(ds, &vocab, text_len)?;
    let weights = if aug.is_some() { cfg.weights } else { LossWeights::answer_only() };
    let adam_cfg = cfg.adam();
    let mut sink = match &cfg.paths.metrics_dir {
        Some(d) => Some(MetricsSink::open(d, cfg.stage)?),
        None => None,
    };
    state.stage = cfg.stage;
    let mut report = TrainReport::default();
    for _ in 0..cfg.epochs {
        let epoch = state.epochs_done;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, Stream::Shuffle, epoch, 0));
        let aug_epoch = if cfg.freeze_augmentation { 0 } else { epoch };
        let mut sums = [0.0; 5];
        let (mut correct, mut usable, mut steps) = (0usize, 0usize, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let picked: Vec<&Sample<'_>> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = match aug {
                Some(a) => {
                    let mut rngs: Vec<_> = chunk
                        .iter()
                        .map(|&i| derived_rng(cfg.seed, Stream::Augment, aug_epoch, i))
                        .collect();
                    Batch::counterfactual(&picked, a, &vocab, text_len, &mut rngs)?
                }
                None => Batch::plain(&picked),
            };
            let (loss, grads, preds) = batch_loss_and_grads(&state.model, &state.params, &batch, &weights)
                .map_err(|e| abort(e, epoch, step, cfg))?;
            state.params.set_grads(grads)?;
            adam_step(&mut state.params, &mut state.adam, &adam_cfg)?;
            correct += preds.iter().zip(&batch.labels).filter(|(p, &y)| p.argmax() == y).count();
            usable += batch.num_usable();
            for (s, v) in sums.iter_mut().zip([loss.l_qa, loss.l_pos, loss.l_neg, loss.l_con, loss.total]) {
                *s += v;
            }
            steps += 1;
            let row = StepRow {
                stage: cfg.stage,
                epoch,
                step,
                batch: batch.len(),
                usable: batch.num_usable(),
                loss,
            };
            if let Some(s) = sink.as_mut() {
                s.step(&row)?;
            }
            report.steps.push(row);
        }
        if !params_finite(&state.params) {
            return Err(abort(Error::Numeric("parameters became non-finite".into()), epoch, steps, cfg));
        }
        let n = steps as f64;
        let row = EpochRow {
            stage: cfg.stage,
            epoch,
            steps,
            l_qa: sums[0] / n,
            l_pos: sums[1] / n,
            l_neg: sums[2] / n,
            l_con: sums[3] / n,
            total: sums[4] / n,
            train_accuracy: correct as f64 / samples.len() as f64,
            usable_fraction: usable as f64 / samples.len() as f64,
        };
        if let Some(s) = sink.as_mut() {
            s.epoch(&row)?;
        }
        report.epochs.push(row);
        state.epochs_done += 1;
        if let Some(p) = &cfg.paths.checkpoint_out {
            state.save(p)?;
        }
    }
    Ok(report)
}

fn abort(e: Error, epoch: usize, step: usize, cfg: &TrainConfig) -> Error {
    match e {
        Error::Numeric(m) => {
            let kept = match &cfg.paths.checkpoint_out {
                Some(p) => format!("; last good checkpoint kept at {}", p.display()),
                None => String::new(),
            };
            Error::Numeric(format!("training aborted at epoch {epoch}, step {step}: {m}{kept}"))
        }
        other => other,
    }
}

/// Parameters that differ between two stores, by name.
pub fn changed_params(a: &ParamStore, b: &ParamStore) -> Vec<String> {
    a.iter()
        .filter(|(n, t)| b.try_get(n).map(Tensor::data) != Some(t.data()))
        .map(|(n, _)| n.to_string())
        .collect()
}
