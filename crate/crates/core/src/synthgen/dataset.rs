use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::qa::{answer_from_episode, generate_qa, AnswerSet, QaCategory, QaRecord};
use super::{generate_episode, render_episode, Episode, WorldSpec};
use crate::error::{Error, Result};
use crate::model::{pad_tokens, PAD_ID};
use crate::numkit::TensorFile;
use crate::textcf::{SwapTable, SynonymLexicon, MASK_TOKEN};
use crate::videocf::{read_bboxes, write_bboxes, BBoxRecord, FrameGrid};

pub const DATASET_VERSION: u32 = 1;
pub const UNK_ID: usize = 1;
pub const MASK_ID: usize = 2;

const META_FILE: &str = "dataset.json";
const QA_FILE: &str = "qa.jsonl";
const FRAMES_FILE: &str = "frames.bin";
const BBOX_FILE: &str = "bboxes.jsonl";

/// Closed token vocabulary with reserved pad, unknown and mask ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TokenVocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[PAD_ID] != "[PAD]" || tokens[UNK_ID] != "[UNK]" || tokens[MASK_ID] != MASK_TOKEN {
            return Err(Error::Input("vocabulary must start with [PAD], [UNK], [MASK]".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Every word the generator or the rewrite tables can produce.
    pub fn build(world: &WorldSpec, lexicon: &SynonymLexicon, swap: &SwapTable) -> Self {
        let mut words: BTreeSet<String> = BTreeSet::new();
        let templates = "what did the person do after before was first last action yes no";
        words.extend(templates.split_whitespace().map(String::from));
        for w in world.verbs.iter().chain(&world.objects) {
            words.extend(w.split_whitespace().map(String::from));
        }
        words.extend(lexicon.tokens().map(String::from));
        words.extend(swap.keys().map(String::from));
        let mut tokens = vec!["[PAD]".to_string(), "[UNK]".to_string(), MASK_TOKEN.to_string()];
        tokens.extend(words.into_iter().filter(|w| w != MASK_TOKEN));
        Self::new(tokens).expect("specials first, words deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Ids padded or truncated to `len`.
    pub fn encode(&self, tokens: &[String], len: usize) -> Vec<usize> {
        let ids: Vec<usize> = tokens.iter().map(|t| self.id(t)).collect();
        pad_tokens(&ids, len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub num_qa: usize,
    pub qa_per_episode: usize,
    pub min_events: usize,
    pub max_events: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            num_qa: 2000,
            qa_per_episode: 4,
            min_events: 3,
            max_events: 5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self, world: &WorldSpec) -> Result<()> {
        if self.num_qa == 0 || self.qa_per_episode == 0 {
            return Err(Error::Config("num_qa and qa_per_episode must be positive".into()));
        }
        if self.min_events < 2 || self.max_events < self.min_events {
            return Err(Error::Config(format!(
                "event range {}..={} must start at 2 or more and be nonempty",
                self.min_events, self.max_events
            )));
        }
        if self.max_events > world.frames {
            return Err(Error::Config(format!(
                "{} events do not fit in {} frames",
                self.max_events, world.frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub world: WorldSpec,
    pub gen: GenConfig,
    pub answers: Vec<String>,
    pub vocab: Vec<String>,
    pub episodes: BTreeMap<String, Episode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<QaRecord>,
    pub videos: BTreeMap<String, FrameGrid>,
    pub bboxes: Vec<BBoxRecord>,
}

impl Dataset {
    pub fn answer_set(&self) -> AnswerSet {
        AnswerSet::from_answers(self.meta.answers.clone())
    }

    pub fn token_vocab(&self) -> Result<TokenVocab> {
        TokenVocab::new(self.meta.vocab.clone())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn video(&self, record: &QaRecord) -> Result<&FrameGrid> {
        self.videos
            .get(&record.frames_ref)
            .ok_or_else(|| Error::Consistency(format!("no frames for reference {:?}", record.frames_ref)))
    }

    /// Boxes of one video, grouped for region selection.
    pub fn bboxes_of(&self, video_id: &str) -> Vec<BBoxRecord> {
        self.bboxes.iter().filter(|b| b.video_id == video_id).cloned().collect()
    }

    /// Records per category.
    pub fn category_counts(&self) -> BTreeMap<QaCategory, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.category).or_insert(0) += 1;
        }
        m
    }

    /// Recompute every answer from its episode and compare.
    pub fn verify_answers(&self) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            let ep = self
                .meta
                .episodes
                .get(&r.video_id)
                .ok_or_else(|| Error::Consistency(format!("record {i} names unknown episode {}", r.video_id)))?;
            let expected = answer_from_episode(ep, &self.meta.world, &r.question_tokens);
            if expected != Some(r.answer_label) {
                return Err(Error::Consistency(format!(
                    "record {i} ({:?}) has label {} but the episode gives {expected:?}",
                    r.question_tokens.join(" "),
                    r.answer_label
                )));
            }
        }
        Ok(())
    }
}

/// Build episodes, renderings and questions. Episode `i` draws from its own
/// random stream, so the result does not depend on generation order.
pub fn generate_dataset(world: &WorldSpec, gen: &GenConfig) -> Result<Dataset> {
    world.validate()?;
    gen.validate(world)?;
    let n_episodes = gen.num_qa.div_ceil(gen.qa_per_episode);
    let mut episodes = BTreeMap::new();
    let mut records = Vec::with_capacity(gen.num_qa);
    let mut videos = BTreeMap::new();
    let mut bboxes = Vec::new();
    for i in 0..n_episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(gen.seed);
        rng.set_stream(i as u64);
        let k = rng.gen_range(gen.min_events..=gen.max_events);
        let ep = generate_episode(world, k, &mut rng)?;
        let id = format!("ep{i:05}");
        let count = gen.qa_per_episode.min(gen.num_qa - records.len());
        for d in generate_qa(&ep, world, count, &mut rng) {
            records.push(QaRecord {
                video_id: id.clone(),
                question_tokens: d.tokens,
                answer_label: d.answer_label,
                category: d.category,
                frames_ref: id.clone(),
            });
        }
        let r = render_episode(&ep, world)?;
        for (f, b) in r.glyph_boxes.iter().enumerate() {
            bboxes.push(BBoxRecord {
                video_id: id.clone(),
                frame_index: f,
                boxes: vec![[b.row0, b.row1, b.col0, b.col1]],
            });
        }
        videos.insert(id.clone(), r.video);
        episodes.insert(id, ep);
    }
    let vocab = TokenVocab::build(world, &SynonymLexicon::builtin(), &SwapTable::builtin());
    Ok(Dataset {
        meta: DatasetMeta {
            version: DATASET_VERSION,
            world: world.clone(),
            gen: gen.clone(),
            answers: AnswerSet::for_world(world).answers().to_vec(),
            vocab: vocab.tokens().to_vec(),
            episodes,
        },
        records,
        videos,
        bboxes,
    })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta_path = dir.join(META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&ds.meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let mut qa = String::new();
    for r in &ds.records {
        qa.push_str(&serde_json::to_string(r)?);
        qa.push('\n');
    }
    let qa_path = dir.join(QA_FILE);
    std::fs::write(&qa_path, qa).map_err(|e| Error::io(&qa_path, e))?;
    let mut frames = TensorFile::new(serde_json::json!({ "content": "frames" }));
    for (id, v) in &ds.videos {
        frames.push(id.clone(), v.tensor().clone());
    }
    frames.write(&dir.join(FRAMES_FILE))?;
    write_bboxes(&dir.join(BBOX_FILE), &ds.bboxes)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&meta_path, e.to_string()))?;
    let version = raw.get("version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(DATASET_VERSION)) {
        return Err(Error::format(
            &meta_path,
            format!("dataset version {version:?} (expected {DATASET_VERSION})"),
        ));
    }
    let meta: DatasetMeta = serde_json::from_value(raw).map_err(|e| Error::format(&meta_path, e.to_string()))?;

    let qa_path = dir.join(QA_FILE);
    let file = std::fs::File::open(&qa_path).map_err(|e| Error::io(&qa_path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&qa_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: QaRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(&qa_path, format!("line {}: {e}", i + 1)))?;
        if r.answer_label >= meta.answers.len() {
            return Err(Error::format(
                &qa_path,
                format!("line {}: label {} outside the answer set", i + 1, r.answer_label),
            ));
        }
        records.push(r);
    }

    let frames_path = dir.join(FRAMES_FILE);
    let frames = TensorFile::read(&frames_path)?;
    let mut videos = BTreeMap::new();
    for (id, t) in frames.tensors {
        let v = FrameGrid::new(t).map_err(|e| Error::format(&frames_path, format!("tensor {id}: {e}")))?;
        videos.insert(id, v);
    }
    if let Some(r) = records.iter().find(|r| !videos.contains_key(&r.frames_ref)) {
        return Err(Error::format(
            &frames_path,
            format!("no tensor named {:?} for video {}", r.frames_ref, r.video_id),
        ));
    }

    let bbox_path = dir.join(BBOX_FILE);
    let bboxes = if bbox_path.exists() {
        read_bboxes(&bbox_path)?.into_values().flatten().collect()
    } else {
        Vec::new()
    };
    Ok(Dataset {
        meta,
        records,
        videos,
        bboxes,
    })
}
