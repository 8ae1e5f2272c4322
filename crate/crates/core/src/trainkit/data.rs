use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::synthgen::{Dataset, TokenVocab};
use crate::textcf::{make_question_triple, QuestionRecord, QuestionTriple, SwapTable, SynonymLexicon, TextAugmenter, TextVariant};
use crate::videocf::{make_video_pair, read_bboxes, BBoxRecord, FrameGrid, VideoVariant};

/// Separate random streams so that shuffling never depends on augmentation.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stream {
    Shuffle = 1,
    Augment = 2,
    Audit = 3,
}

/// A generator keyed by `(seed, stream, epoch, index)`.
pub(crate) fn derived_rng(seed: u64, stream: Stream, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | ((epoch as u64 & 0xff_ffff) << 32) | (index as u64 & 0xffff_ffff));
    rng
}

/// Load a lexicon and swap table from the given paths, or the bundled ones.
pub fn text_resources(cfg: &TrainConfig) -> Result<(SynonymLexicon, SwapTable)> {
    let lexicon = match &cfg.paths.lexicon {
        Some(p) => SynonymLexicon::load(p)?,
        None => SynonymLexicon::builtin(),
    };
    let swap = match &cfg.paths.swap_table {
        Some(p) => SwapTable::load(p)?,
        None => SwapTable::builtin(),
    };
    Ok((lexicon, swap))
}

/// Everything needed to build counterfactual triples for a dataset.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub text: TextAugmenter,
    pub text_variant: TextVariant,
    pub video_variant: VideoVariant,
    pub fill: f64,
    bboxes: BTreeMap<String, Vec<BBoxRecord>>,
}

impl Augmentation {
    /// Fails up front when the hand-object variant lacks boxes for any video.
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        let (lexicon, swap) = text_resources(cfg)?;
        let text = ds.meta.world.augmenter(lexicon, swap)?;
        let mut bboxes: BTreeMap<String, Vec<BBoxRecord>> = BTreeMap::new();
        if cfg.video_variant == VideoVariant::HandObject {
            let records: Vec<BBoxRecord> = match &cfg.paths.bboxes {
                Some(p) => read_bboxes(p)?.into_values().flatten().collect(),
                None => ds.bboxes.clone(),
            };
            for r in records {
                bboxes.entry(r.video_id.clone()).or_default().push(r);
            }
            if let Some(id) = ds.videos.keys().find(|id| !bboxes.contains_key(*id)) {
                return Err(Error::Config(format!(
                    "video variant f_v4 needs bounding boxes, none given for video {id}"
                )));
            }
        }
        Ok(Self {
            text,
            text_variant: cfg.text_variant,
            video_variant: cfg.video_variant,
            fill: cfg.fill,
            bboxes,
        })
    }

    pub fn question_triple(&self, q: &QuestionRecord, rng: &mut ChaCha8Rng) -> Result<QuestionTriple> {
        make_question_triple(q, self.text_variant, &self.text, rng)
    }

    /// `(positive, negative)` videos.
    pub fn video_pair(&self, video_id: &str, v: &FrameGrid) -> Result<(FrameGrid, FrameGrid)> {
        let boxes = self.bboxes.get(video_id).map(Vec::as_slice);
        make_video_pair(v, self.video_variant, boxes, self.fill)
    }
}

/// One QA record resolved against its video and encoded for the model.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub video_id: &'a str,
    pub video: &'a FrameGrid,
    pub question: QuestionRecord,
    pub ids: Vec<usize>,
    pub label: usize,
    pub category: String,
}

pub fn prepare_samples<'a>(ds: &'a Dataset, vocab: &TokenVocab, text_len: usize) -> Result<Vec<Sample<'a>>> {
    ds.records
        .iter()
        .map(|r| {
            let question = QuestionRecord::from_tokens(r.question_tokens.clone(), r.answer_label, r.category.as_str())?;
            Ok(Sample {
                video_id: &r.video_id,
                video: ds.video(r)?,
                ids: vocab.encode(&question.tokens, text_len),
                question,
                label: r.answer_label,
                category: r.category.as_str().to_string(),
            })
        })
        .collect()
}

/// Model inputs for one batch: the originals plus, for usable samples, the
/// counterfactual pairs.
pub struct Batch<'a> {
    pub videos: Vec<&'a FrameGrid>,
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub usable: Vec<bool>,
    pub pos_videos: Vec<FrameGrid>,
    pub pos_ids: Vec<Vec<usize>>,
    pub neg_videos: Vec<FrameGrid>,
    pub neg_ids: Vec<Vec<usize>>,
}

impl<'a> Batch<'a> {
    /// Originals only; every sample is marked unusable.
    pub fn plain(samples: &[&Sample<'a>]) -> Self {
        Self {
            videos: samples.iter().map(|s| s.video).collect(),
            ids: samples.iter().map(|s| s.ids.clone()).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
            usable: vec![false; samples.len()],
            pos_videos: Vec::new(),
            pos_ids: Vec::new(),
            neg_videos: Vec::new(),
            neg_ids: Vec::new(),
        }
    }

    /// Originals plus counterfactuals. `rngs[i]` drives the text rewrite of sample `i`.
    pub fn counterfactual(
        samples: &[&Sample<'a>],
        aug: &Augmentation,
        vocab: &TokenVocab,
        text_len: usize,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Self> {
        let mut b = Self::plain(samples);
        for (i, s) in samples.iter().enumerate() {
            let t = aug.question_triple(&s.question, &mut rngs[i])?;
            if !t.contrastive_usable {
                continue;
            }
            let (pv, nv) = aug.video_pair(s.video_id, s.video)?;
            b.usable[i] = true;
            b.pos_videos.push(pv);
            b.neg_videos.push(nv);
            b.pos_ids.push(vocab.encode(&t.positive.tokens, text_len));
            b.neg_ids.push(vocab.encode(&t.negative.tokens, text_len));
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn num_usable(&self) -> usize {
        self.pos_videos.len()
    }
}
