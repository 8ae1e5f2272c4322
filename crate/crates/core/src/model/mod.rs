//! Dual-stream video/text encoders, cross-attention fusion and a two-layer
//! answer classifier, with hand-written backward passes.

pub mod layers;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::ops::{gemm, softmax_backward, softmax_in_place};
use crate::numkit::{Grads, ParamStore, Tensor, TensorFile};
use crate::videocf::FrameGrid;
use layers::{
    add_col_sums, block, block_backward, gelu_backward, gelu_tensor, layer_norm, layer_norm_backward, linear,
    linear_backward, mha, mha_backward, AttnCache, AttnNames, BlockCache, BlockNames, LnCache,
};

/// Reserved token id used to pad questions to the fixed text length.
pub const PAD_ID: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub n_video_layers: usize,
    pub n_text_layers: usize,
    pub n_frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub text_len: usize,
    pub token_vocab_size: usize,
    pub answer_set_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            n_video_layers: 2,
            n_text_layers: 2,
            n_frames: 8,
            channels: 1,
            height: 64,
            width: 64,
            patch_size: 8,
            text_len: 16,
            token_vocab_size: 64,
            answer_set_size: 27,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform,
    Zeros,
    Ones,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad(format!("d = {} is not divisible by {} heads", self.d, self.heads));
        }
        if self.n_frames == 0 || self.text_len == 0 {
            return bad("n_frames and text_len must be at least 1".into());
        }
        if self.answer_set_size < 2 {
            return bad(format!("answer set needs at least 2 entries, got {}", self.answer_set_size));
        }
        if self.token_vocab_size < 2 {
            return bad("token vocabulary needs the pad id plus at least one token".into());
        }
        if self.channels == 0 || self.patch_size == 0 || self.height == 0 || self.width == 0 {
            return bad("frame dimensions and patch size must be positive".into());
        }
        if !self.height.is_multiple_of(self.patch_size) || !self.width.is_multiple_of(self.patch_size) {
            return bad(format!(
                "patch size {} does not tile {}x{} frames",
                self.patch_size, self.height, self.width
            ));
        }
        Ok(())
    }

    /// Pixels per frame, in patch order when fed to the embedding.
    pub fn frame_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn patches_per_frame(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    fn param_layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let d = self.d;
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
        push("video.patch.w".into(), vec![self.frame_dim(), d], Init::Uniform);
        push("video.patch.b".into(), vec![d], Init::Zeros);
        push("video.pos".into(), vec![self.n_frames, d], Init::Uniform);
        push("text.tok".into(), vec![self.token_vocab_size, d], Init::Uniform);
        push("text.pos".into(), vec![self.text_len, d], Init::Uniform);
        let attn = |push: &mut dyn FnMut(String, Vec<usize>, Init), a: &AttnNames| {
            for (w, b) in a.weights() {
                push(w.to_string(), vec![d, d], Init::Uniform);
                if let Some(b) = b {
                    push(b.to_string(), vec![d], Init::Zeros);
                }
            }
        };
        for (stream, n) in [("video", self.n_video_layers), ("text", self.n_text_layers)] {
            for i in 0..n {
                let b = BlockNames::new(&format!("{stream}.block{i}"));
                push(b.ln1.0.clone(), vec![d], Init::Ones);
                push(b.ln1.1.clone(), vec![d], Init::Zeros);
                attn(&mut push, &b.attn);
                push(b.ln2.0.clone(), vec![d], Init::Ones);
                push(b.ln2.1.clone(), vec![d], Init::Zeros);
                push(b.w1.clone(), vec![d, FF_MULT * d], Init::Uniform);
                push(b.b1.clone(), vec![FF_MULT * d], Init::Zeros);
                push(b.w2.clone(), vec![FF_MULT * d, d], Init::Uniform);
                push(b.b2.clone(), vec![d], Init::Zeros);
            }
            push(format!("{stream}.ln_f.g"), vec![d], Init::Ones);
            push(format!("{stream}.ln_f.b"), vec![d], Init::Zeros);
        }
        attn(&mut push, &AttnNames::new("fuse.attn"));
        push("cls.w1".into(), vec![d, d], Init::Uniform);
        push("cls.b1".into(), vec![d], Init::Zeros);
        push("cls.w2".into(), vec![d, self.answer_set_size], Init::Uniform);
        push("cls.b2".into(), vec![self.answer_set_size], Init::Zeros);
        out
    }

    /// Number of trainable scalars implied by this configuration.
    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }
}

const FF_MULT: usize = 2;

/// A probability vector over the answer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Dimension(format!("answer distribution needs K >= 2, got {}", probs.len())));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::Numeric("answer distribution has a negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("answer distribution sums to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Pad with [`PAD_ID`] or truncate to exactly `len` ids.
pub fn pad_tokens(ids: &[usize], len: usize) -> Vec<usize> {
    let mut out: Vec<usize> = ids.iter().copied().take(len).collect();
    out.resize(len, PAD_ID);
    out
}

#[derive(Debug, Clone)]
struct StreamCache {
    blocks: Vec<BlockCache>,
    ln_f: LnCache,
}

/// Cross-attention fusion intermediates.
#[derive(Debug, Clone)]
pub struct FuseCache {
    q_rows: usize,
    pub attn: AttnCache,
}

#[derive(Debug, Clone)]
struct ClsCache {
    fused: Tensor,
    pre_act: Tensor,
    act: Tensor,
}

/// Intermediates of a batched forward pass, consumed by [`Model::backward_batch`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// Every frame of the batch in patch order, one row per frame.
    frames: Tensor,
    video: StreamCache,
    text_ids: Vec<usize>,
    text: StreamCache,
    fuse: FuseCache,
    cls: ClsCache,
    probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.batch == 0
    }
}

/// Architecture description plus precomputed index tables. Parameters live
/// in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    patch_order: Vec<usize>,
    video_blocks: Vec<BlockNames>,
    text_blocks: Vec<BlockNames>,
    fuse_attn: AttnNames,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, h, w, p) = (cfg.channels, cfg.height, cfg.width, cfg.patch_size);
        let mut patch_order = Vec::with_capacity(cfg.frame_dim());
        for pr in 0..h / p {
            for pc in 0..w / p {
                for ch in 0..c {
                    for i in 0..p {
                        for j in 0..p {
                            patch_order.push(ch * h * w + (pr * p + i) * w + pc * p + j);
                        }
                    }
                }
            }
        }
        Ok(Self {
            video_blocks: (0..cfg.n_video_layers)
                .map(|i| BlockNames::new(&format!("video.block{i}")))
                .collect(),
            text_blocks: (0..cfg.n_text_layers)
                .map(|i| BlockNames::new(&format!("text.block{i}")))
                .collect(),
            fuse_attn: AttnNames::new("fuse.attn"),
            patch_order,
            cfg,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Fresh parameters: weights uniform in (-1/sqrt(d), 1/sqrt(d)), biases
    /// and shifts zero, layer-norm gains one. Deterministic in `cfg.seed`.
    pub fn init_params(&self) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let bound = 1.0 / (self.cfg.d as f64).sqrt();
        let mut ps = ParamStore::new();
        for (name, shape, init) in self.cfg.param_layout() {
            let t = match init {
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::filled(&shape, 1.0),
                Init::Uniform => {
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
                    Tensor::new(shape, data).expect("layout shapes are nonzero")
                }
            };
            ps.insert(name, t).expect("layout names are unique");
        }
        ps
    }

    fn check_params(&self, p: &ParamStore) -> Result<()> {
        for (name, shape, _) in self.cfg.param_layout() {
            match p.try_get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Dimension(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Consistency(format!("parameter {name} is missing"))),
            }
        }
        Ok(())
    }

    fn check_video(&self, v: &FrameGrid) -> Result<()> {
        let c = &self.cfg;
        let got = [v.frames(), v.channels(), v.height(), v.width()];
        let want = [c.n_frames, c.channels, c.height, c.width];
        if got != want {
            return Err(Error::Dimension(format!("video has shape {got:?}, model expects {want:?}")));
        }
        Ok(())
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        if ids.len() != self.cfg.text_len {
            return Err(Error::Dimension(format!(
                "question has {} token ids, model expects {}",
                ids.len(),
                self.cfg.text_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.cfg.token_vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} is outside the vocabulary of {}",
                self.cfg.token_vocab_size
            )));
        }
        Ok(())
    }

    fn gather_frames(&self, videos: &[&FrameGrid]) -> Tensor {
        let fd = self.cfg.frame_dim();
        let n = self.cfg.n_frames;
        let mut x = Tensor::zeros(&[videos.len() * n, fd]);
        for (b, v) in videos.iter().enumerate() {
            for f in 0..n {
                let src = v.frame(f);
                let dst = x.row_mut(b * n + f);
                for (d, &k) in dst.iter_mut().zip(&self.patch_order) {
                    *d = src[k];
                }
            }
        }
        x
    }

    fn run_stream(
        &self,
        p: &ParamStore,
        blocks: &[BlockNames],
        prefix: &str,
        segs: usize,
        x: Tensor,
    ) -> (Tensor, StreamCache) {
        let mut h = x;
        let mut caches = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (y, c) = block(p, b, self.cfg.heads, segs, &h);
            h = y;
            caches.push(c);
        }
        let (out, ln_f) = layer_norm(&h, p.get(&format!("{prefix}.ln_f.g")), p.get(&format!("{prefix}.ln_f.b")));
        (out, StreamCache { blocks: caches, ln_f })
    }

    fn stream_backward(
        &self,
        p: &ParamStore,
        blocks: &[BlockNames],
        prefix: &str,
        cache: &StreamCache,
        dy: &Tensor,
        g: &mut Grads,
    ) -> Tensor {
        let mut d = layer_norm_backward(
            &cache.ln_f,
            &format!("{prefix}.ln_f.g"),
            &format!("{prefix}.ln_f.b"),
            p,
            dy,
            g,
        );
        for (b, c) in blocks.iter().zip(&cache.blocks).rev() {
            d = block_backward(p, b, c, &d, g);
        }
        d
    }

    /// Add a position table to each stacked sample.
    fn add_positions(x: &mut Tensor, pos: &Tensor) {
        let per = pos.len();
        for chunk in x.data_mut().chunks_mut(per) {
            for (a, b) in chunk.iter_mut().zip(pos.data()) {
                *a += b;
            }
        }
    }

    /// Sum per-sample position gradients into the table gradient.
    fn sum_positions(dx: &Tensor, acc: &mut Tensor) {
        let per = acc.len();
        for chunk in dx.data().chunks(per) {
            for (a, b) in acc.data_mut().iter_mut().zip(chunk) {
                *a += b;
            }
        }
    }

    fn video_forward(&self, p: &ParamStore, frames: &Tensor, segs: usize) -> (Tensor, StreamCache) {
        let mut emb = linear(frames, p.get("video.patch.w"), p.get("video.patch.b"));
        Self::add_positions(&mut emb, p.get("video.pos"));
        self.run_stream(p, &self.video_blocks, "video", segs, emb)
    }

    fn text_forward(&self, p: &ParamStore, ids: &[usize], segs: usize) -> (Tensor, StreamCache) {
        let tok = p.get("text.tok");
        let mut x = Tensor::zeros(&[ids.len(), self.cfg.d]);
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i).copy_from_slice(tok.row(id));
        }
        Self::add_positions(&mut x, p.get("text.pos"));
        self.run_stream(p, &self.text_blocks, "text", segs, x)
    }

    fn fuse_forward(&self, p: &ParamStore, v_feats: &Tensor, q_feats: &Tensor, segs: usize) -> (Tensor, FuseCache) {
        let (a, attn) = mha(p, &self.fuse_attn, self.cfg.heads, segs, q_feats, v_feats);
        let mut r = q_feats.clone();
        r.add_assign(&a);
        let l = q_feats.rows() / segs;
        let d = q_feats.cols();
        let mut fused = Tensor::zeros(&[segs, d]);
        for s in 0..segs {
            let out = fused.row_mut(s);
            for i in 0..l {
                for (o, v) in out.iter_mut().zip(r.row(s * l + i)) {
                    *o += v;
                }
            }
            out.iter_mut().for_each(|o| *o /= l as f64);
        }
        (
            fused,
            FuseCache {
                q_rows: q_feats.rows(),
                attn,
            },
        )
    }

    /// Returns `(d v_feats, d q_feats)`.
    fn fuse_backward(&self, p: &ParamStore, cache: &FuseCache, d_fused: &Tensor, g: &mut Grads) -> (Tensor, Tensor) {
        let segs = d_fused.rows();
        let l = cache.q_rows / segs;
        let mut dr = Tensor::zeros(&[cache.q_rows, d_fused.cols()]);
        for s in 0..segs {
            for i in 0..l {
                for (a, &b) in dr.row_mut(s * l + i).iter_mut().zip(d_fused.row(s)) {
                    *a = b / l as f64;
                }
            }
        }
        let (mut dq, dv) = mha_backward(p, &self.fuse_attn, &cache.attn, &dr, g);
        dq.add_assign(&dr);
        (dv, dq)
    }

    fn classify_forward(&self, p: &ParamStore, fused: &Tensor) -> (Vec<Vec<f64>>, ClsCache) {
        let pre_act = linear(fused, p.get("cls.w1"), p.get("cls.b1"));
        let act = gelu_tensor(&pre_act);
        let logits = linear(&act, p.get("cls.w2"), p.get("cls.b2"));
        let probs = (0..logits.rows())
            .map(|i| {
                let mut z = logits.row(i).to_vec();
                softmax_in_place(&mut z);
                z
            })
            .collect();
        (
            probs,
            ClsCache {
                fused: fused.clone(),
                pre_act,
                act,
            },
        )
    }

    fn classify_backward(
        &self,
        p: &ParamStore,
        cache: &ClsCache,
        probs: &[Vec<f64>],
        d_probs: &[Vec<f64>],
        g: &mut Grads,
    ) -> Tensor {
        let k = probs[0].len();
        let mut dz = Tensor::zeros(&[probs.len(), k]);
        for (i, (pr, dp)) in probs.iter().zip(d_probs).enumerate() {
            dz.row_mut(i).copy_from_slice(&softmax_backward(pr, dp));
        }
        let d_act = linear_backward(&cache.act, "cls.w2", "cls.b2", p, &dz, g);
        let d_pre = gelu_backward(&cache.pre_act, &d_act);
        linear_backward(&cache.fused, "cls.w1", "cls.b1", p, &d_pre, g)
    }

    /// One feature row per frame.
    pub fn encode_video(&self, p: &ParamStore, v: &FrameGrid) -> Result<Tensor> {
        self.check_params(p)?;
        self.check_video(v)?;
        Ok(self.video_forward(p, &self.gather_frames(&[v]), 1).0)
    }

    /// One feature row per token position; `ids` must already be padded.
    pub fn encode_text(&self, p: &ParamStore, ids: &[usize]) -> Result<Tensor> {
        self.check_params(p)?;
        self.check_tokens(ids)?;
        Ok(self.text_forward(p, ids, 1).0)
    }

    /// Text rows attend over video rows; the result (plus the text rows) is
    /// averaged over text positions.
    pub fn fuse(&self, p: &ParamStore, v_feats: &Tensor, q_feats: &Tensor) -> Result<Vec<f64>> {
        Ok(self.fuse_detailed(p, v_feats, q_feats)?.0)
    }

    /// [`Model::fuse`] plus its intermediates, for inspection.
    pub fn fuse_detailed(&self, p: &ParamStore, v_feats: &Tensor, q_feats: &Tensor) -> Result<(Vec<f64>, FuseCache)> {
        self.check_params(p)?;
        let d = self.cfg.d;
        if v_feats.shape().len() != 2 || q_feats.shape().len() != 2 || v_feats.cols() != d || q_feats.cols() != d {
            return Err(Error::Dimension(format!(
                "fusion expects video [N x {d}] and text [l x {d}], got {:?} and {:?}",
                v_feats.shape(),
                q_feats.shape()
            )));
        }
        let (fused, cache) = self.fuse_forward(p, v_feats, q_feats, 1);
        Ok((fused.into_data(), cache))
    }

    pub fn classify(&self, p: &ParamStore, fused: &[f64]) -> Result<AnswerDistribution> {
        self.check_params(p)?;
        if fused.len() != self.cfg.d {
            return Err(Error::Dimension(format!(
                "fused feature has length {}, expected {}",
                fused.len(),
                self.cfg.d
            )));
        }
        let x = Tensor::new(vec![1, fused.len()], fused.to_vec())?;
        let (mut probs, _) = self.classify_forward(p, &x);
        AnswerDistribution::new(probs.pop().expect("one row"))
    }

    pub fn forward(&self, p: &ParamStore, v: &FrameGrid, ids: &[usize]) -> Result<AnswerDistribution> {
        let (mut out, _) = self.forward_batch(p, &[v], &[ids])?;
        Ok(out.pop().expect("one sample in, one out"))
    }

    /// Forward over a batch. Samples are stacked row-wise through every
    /// layer; only the attention scores are computed per sample.
    pub fn forward_batch(
        &self,
        p: &ParamStore,
        videos: &[&FrameGrid],
        ids: &[&[usize]],
    ) -> Result<(Vec<AnswerDistribution>, ForwardCache)> {
        self.check_params(p)?;
        if videos.len() != ids.len() {
            return Err(Error::Dimension(format!(
                "{} videos but {} questions in the batch",
                videos.len(),
                ids.len()
            )));
        }
        if videos.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        for (v, q) in videos.iter().zip(ids) {
            self.check_video(v)?;
            self.check_tokens(q)?;
        }
        let batch = videos.len();
        let frames = self.gather_frames(videos);
        let (v_feats, video) = self.video_forward(p, &frames, batch);
        let text_ids: Vec<usize> = ids.iter().flat_map(|q| q.iter().copied()).collect();
        let (q_feats, text) = self.text_forward(p, &text_ids, batch);
        let (fused, fuse) = self.fuse_forward(p, &v_feats, &q_feats, batch);
        let (probs, cls) = self.classify_forward(p, &fused);
        if let Some(b) = probs.iter().position(|pr| pr.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric(format!("non-finite prediction for batch item {b}")));
        }
        let out = probs
            .iter()
            .map(|pr| AnswerDistribution { probs: pr.clone() })
            .collect();
        Ok((
            out,
            ForwardCache {
                batch,
                frames,
                video,
                text_ids,
                text,
                fuse,
                cls,
                probs,
            },
        ))
    }

    /// Accumulate parameter gradients given `dL/dprobs` for every sample.
    /// Nothing is accumulated when every upstream gradient is zero.
    pub fn backward_batch(&self, p: &ParamStore, cache: &ForwardCache, d_probs: &[Vec<f64>], g: &mut Grads) -> Result<()> {
        if d_probs.len() != cache.batch {
            return Err(Error::Dimension(format!(
                "{} upstream gradients for {} samples",
                d_probs.len(),
                cache.batch
            )));
        }
        if let Some(dp) = d_probs.iter().find(|dp| dp.len() != self.cfg.answer_set_size) {
            return Err(Error::Dimension(format!(
                "upstream gradient has length {}, expected {}",
                dp.len(),
                self.cfg.answer_set_size
            )));
        }
        if d_probs.iter().all(|dp| dp.iter().all(|&x| x == 0.0)) {
            return Ok(());
        }
        let d_fused = self.classify_backward(p, &cache.cls, &cache.probs, d_probs, g);
        let (dv, dq) = self.fuse_backward(p, &cache.fuse, &d_fused, g);

        let d_text = self.stream_backward(p, &self.text_blocks, "text", &cache.text, &dq, g);
        Self::sum_positions(&d_text, g.get_mut("text.pos"));
        let tok = g.get_mut("text.tok");
        for (i, &id) in cache.text_ids.iter().enumerate() {
            for (a, v) in tok.row_mut(id).iter_mut().zip(d_text.row(i)) {
                *a += v;
            }
        }

        let d_video = self.stream_backward(p, &self.video_blocks, "video", &cache.video, &dv, g);
        Self::sum_positions(&d_video, g.get_mut("video.pos"));
        gemm(&cache.frames, true, &d_video, false, 1.0, 1.0, g.get_mut("video.patch.w").data_mut());
        add_col_sums(&d_video, g.get_mut("video.patch.b").data_mut());
        Ok(())
    }

    /// Pack parameters into a tensor file with this configuration in the manifest.
    pub fn to_tensor_file(&self, p: &ParamStore, extra_meta: serde_json::Value) -> Result<TensorFile> {
        self.check_params(p)?;
        let mut f = TensorFile::new(serde_json::json!({ "model": self.cfg, "extra": extra_meta }));
        for (name, t) in p.iter() {
            f.push(name, t.clone());
        }
        Ok(f)
    }

    /// Rebuild model and parameters from a tensor file. Tensors not owned by
    /// the model (optimizer state, for instance) are ignored.
    pub fn from_tensor_file(f: &TensorFile, path: &Path) -> Result<(Model, ParamStore)> {
        let cfg: ModelConfig = serde_json::from_value(
            f.meta
                .get("model")
                .cloned()
                .ok_or_else(|| Error::format(path, "manifest meta has no model configuration"))?,
        )
        .map_err(|e| Error::format(path, format!("bad model configuration: {e}")))?;
        let model = Model::new(cfg)?;
        let mut ps = ParamStore::new();
        for (name, shape, _) in model.cfg.param_layout() {
            let t = f
                .get(&name)
                .ok_or_else(|| Error::format(path, format!("checkpoint lacks parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::format(
                    path,
                    format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape()),
                ));
            }
            ps.insert(name, t.clone())?;
        }
        Ok((model, ps))
    }

    pub fn save(&self, p: &ParamStore, path: &Path) -> Result<()> {
        self.to_tensor_file(p, serde_json::Value::Null)?.write(path)
    }

    pub fn load(path: &Path) -> Result<(Model, ParamStore)> {
        Self::from_tensor_file(&TensorFile::read(path)?, path)
    }
}
