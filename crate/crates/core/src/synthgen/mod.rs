//! Deterministic synthetic egocentric QA: multi-event symbolic videos whose
//! interaction glyphs sit in the frame center, plus temporal questions.

mod dataset;
mod qa;

pub use dataset::{
    generate_dataset, read_dataset, write_dataset, Dataset, DatasetMeta, GenConfig, TokenVocab, DATASET_VERSION,
    MASK_ID, UNK_ID,
};
pub use qa::{answer_from_episode, generate_qa, AnswerSet, QaCategory, QaDraft, QaRecord};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;
use crate::textcf::{EventVocab, TextAugmenter};
use crate::textcf::{SwapTable, SynonymLexicon};
use crate::videocf::{FrameGrid, Rect, VideoVariant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub verbs: Vec<String>,
    pub objects: Vec<String>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Frames per episode.
    pub frames: usize,
    /// Side of the square event glyph.
    pub glyph_size: usize,
    /// Side of the square distractor patches.
    pub distractor_size: usize,
    /// Upper bound on distractors per frame (drawn uniformly from 0..=max).
    /// Off by default: border clutter that differs per episode lets a model
    /// recognize the episode from a center-masked video.
    pub max_distractors: usize,
    pub noise_level: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            verbs: ["open", "close", "take", "put", "wash"].map(String::from).to_vec(),
            objects: ["milk", "microwave", "cup", "bowl", "drawer"].map(String::from).to_vec(),
            height: 64,
            width: 64,
            channels: 1,
            frames: 8,
            glyph_size: 24,
            distractor_size: 12,
            max_distractors: 0,
            noise_level: 0.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.verbs.is_empty() || self.objects.is_empty() {
            return bad("world needs at least one verb and one object".into());
        }
        if self.verbs.len() * self.objects.len() < 2 {
            return bad("world needs at least two distinct events".into());
        }
        for w in self.verbs.iter().chain(&self.objects) {
            if w.trim().is_empty() || w.to_lowercase() != *w {
                return bad(format!("vocabulary entry {w:?} must be nonempty lowercase"));
            }
        }
        if let Some(o) = self.objects.iter().find(|o| o.split_whitespace().count() != 1) {
            return bad(format!("object {o:?} must be a single token"));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.verbs.iter().chain(&self.objects).find(|w| !seen.insert(w.as_str())) {
            return bad(format!("duplicate vocabulary entry {dup:?}"));
        }
        if self.height == 0 || self.width == 0 || self.channels == 0 || self.frames == 0 {
            return bad("frame dimensions and frame count must be positive".into());
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) {
            return bad(format!("frame size {}x{} must be divisible by 4", self.height, self.width));
        }
        if self.glyph_size == 0 || 2 * self.glyph_size > self.height.min(self.width) {
            return bad(format!(
                "glyph of side {} does not fit the {}x{} center region",
                self.glyph_size,
                self.height / 2,
                self.width / 2
            ));
        }
        if self.max_distractors > 0
            && (self.distractor_size == 0 || 4 * self.distractor_size > self.height.min(self.width))
        {
            return bad(format!(
                "distractor of side {} does not fit the border strips",
                self.distractor_size
            ));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return bad(format!("noise level {} outside [0, 1)", self.noise_level));
        }
        Ok(())
    }

    pub fn num_events(&self) -> usize {
        self.verbs.len() * self.objects.len()
    }

    /// `"verb object"` for event index `e` (verb-major order).
    pub fn event_name(&self, e: Event) -> String {
        format!("{} {}", self.verbs[e.verb], self.objects[e.object])
    }

    /// Top-left corner of the event glyph.
    pub fn glyph_origin(&self) -> (usize, usize) {
        let center = VideoVariant::Center
            .fixed_rect(self.height, self.width)
            .expect("center region is fixed");
        (
            center.row0 + (center.row1 - center.row0 - self.glyph_size) / 2,
            center.col0 + (center.col1 - center.col0 - self.glyph_size) / 2,
        )
    }

    pub fn glyph_rect(&self) -> Rect {
        let (r, c) = self.glyph_origin();
        Rect::new(r, r + self.glyph_size, c, c + self.glyph_size)
    }

    /// Event detection and rewrite resources matching this world's vocabulary.
    pub fn augmenter(&self, lexicon: SynonymLexicon, swap_table: SwapTable) -> Result<TextAugmenter> {
        Ok(TextAugmenter {
            vocab: EventVocab::new(&self.verbs, &self.objects)?,
            lexicon,
            swap_table,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub verb: usize,
    pub object: usize,
}

impl Event {
    pub fn index(self, world: &WorldSpec) -> usize {
        self.verb * world.objects.len() + self.object
    }

    pub fn from_index(i: usize, world: &WorldSpec) -> Self {
        Self {
            verb: i / world.objects.len(),
            object: i % world.objects.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub events: Vec<Event>,
    /// Seeds the distractors and noise of the rendering.
    pub seed: u64,
}

/// Uniform events with no immediate repeats.
pub fn generate_episode<R: Rng + ?Sized>(world: &WorldSpec, k: usize, rng: &mut R) -> Result<Episode> {
    if k < 2 {
        return Err(Error::Input(format!("an episode needs at least 2 events, got {k}")));
    }
    let n = world.num_events();
    let mut events: Vec<Event> = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = match events.last() {
            None => rng.gen_range(0..n),
            Some(prev) => {
                let p = prev.index(world);
                let j = rng.gen_range(0..n - 1);
                if j >= p {
                    j + 1
                } else {
                    j
                }
            }
        };
        events.push(Event::from_index(idx, world));
    }
    Ok(Episode {
        events,
        seed: rng.gen(),
    })
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// The binary pattern of an event, `channels x glyph_size x glyph_size`,
/// keyed by the verb and object strings.
pub fn glyph(world: &WorldSpec, e: Event) -> Vec<f64> {
    let key = format!("{}\u{0}{}", world.verbs[e.verb], world.objects[e.object]);
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()));
    let g = world.glyph_size;
    (0..world.channels * g * g)
        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
        .collect()
}

/// A rendered episode with the glyph box of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendering {
    pub video: FrameGrid,
    pub glyph_boxes: Vec<Rect>,
}

/// Which event frame `f` shows: events split the frames in order.
pub fn event_of_frame(frame: usize, frames: usize, k: usize) -> usize {
    frame * k / frames
}

struct Layers {
    glyphs: Vec<f64>,
    distractors: Vec<f64>,
}

fn stamp(layer: &mut [f64], world: &WorldSpec, frame: usize, top: usize, left: usize, side: usize, pattern: &[f64]) {
    let (c, h, w) = (world.channels, world.height, world.width);
    for ch in 0..c {
        for i in 0..side {
            for j in 0..side {
                let dst = ((frame * c + ch) * h + top + i) * w + left + j;
                let v = pattern[(ch * side + i) * side + j];
                layer[dst] = layer[dst].max(v);
            }
        }
    }
}

fn render_layers(ep: &Episode, world: &WorldSpec, rng: &mut ChaCha8Rng) -> Result<Layers> {
    world.validate()?;
    let k = ep.events.len();
    if k == 0 || k > world.frames {
        return Err(Error::Config(format!(
            "{k} events cannot each get a frame out of {}",
            world.frames
        )));
    }
    let (c, h, w, n) = (world.channels, world.height, world.width, world.frames);
    let size = n * c * h * w;
    let mut glyphs = vec![0.0; size];
    let mut distractors = vec![0.0; size];
    let patterns: Vec<Vec<f64>> = ep.events.iter().map(|&e| glyph(world, e)).collect();
    let (gr, gc) = world.glyph_origin();
    let ds = world.distractor_size;
    for f in 0..n {
        stamp(&mut glyphs, world, f, gr, gc, world.glyph_size, &patterns[event_of_frame(f, n, k)]);
        let count = rng.gen_range(0..=world.max_distractors);
        for _ in 0..count {
            let (top, left) = match rng.gen_range(0..3) {
                0 => (rng.gen_range(0..=h / 4 - ds), rng.gen_range(0..=w - ds)),
                1 => (rng.gen_range(0..=h - ds), rng.gen_range(0..=w / 4 - ds)),
                _ => (rng.gen_range(0..=h - ds), rng.gen_range(3 * w / 4..=w - ds)),
            };
            let pattern: Vec<f64> = (0..c * ds * ds)
                .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
                .collect();
            stamp(&mut distractors, world, f, top, left, ds, &pattern);
        }
    }
    Ok(Layers { glyphs, distractors })
}

/// Draw an episode: one event glyph per frame in the center, random
/// distractors in the border strips, additive noise, clamped to [0, 1].
pub fn render_episode(ep: &Episode, world: &WorldSpec) -> Result<Rendering> {
    let mut rng = ChaCha8Rng::seed_from_u64(ep.seed);
    let layers = render_layers(ep, world, &mut rng)?;
    let noise = world.noise_level;
    let data: Vec<f64> = layers
        .glyphs
        .iter()
        .zip(&layers.distractors)
        .map(|(&g, &d)| {
            let base = g.max(d);
            if noise > 0.0 {
                (base + rng.gen_range(-noise..=noise)).clamp(0.0, 1.0)
            } else {
                base
            }
        })
        .collect();
    let video = FrameGrid::new(Tensor::new(
        vec![world.frames, world.channels, world.height, world.width],
        data,
    )?)?;
    Ok(Rendering {
        video,
        glyph_boxes: vec![world.glyph_rect(); world.frames],
    })
}

#[cfg(test)]
mod tests;
