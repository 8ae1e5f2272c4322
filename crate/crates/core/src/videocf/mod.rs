//! Video counterfactuals: keep the interaction region for positives, blank it
//! for negatives.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

/// `N x C x H x W` frames with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGrid {
    tensor: Tensor,
}

impl FrameGrid {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.shape().len() != 4 {
            return Err(Error::Dimension(format!(
                "frame grid must be N x C x H x W, got {:?}",
                tensor.shape()
            )));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { tensor })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            tensor: Tensor::zeros(&[n, c, h, w]),
        }
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor {
        self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    /// Values of one frame, `C * H * W` long.
    pub fn frame(&self, n: usize) -> &[f64] {
        let sz = self.channels() * self.height() * self.width();
        &self.tensor.data()[n * sz..(n + 1) * sz]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }
}

/// Half-open pixel rectangle `[row0, row1) x [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub row0: usize,
    pub row1: usize,
    pub col0: usize,
    pub col1: usize,
}

impl Rect {
    pub fn new(row0: usize, row1: usize, col0: usize, col1: usize) -> Self {
        Self { row0, row1, col0, col1 }
    }

    pub fn area(&self) -> usize {
        self.row1.saturating_sub(self.row0) * self.col1.saturating_sub(self.col0)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row0..self.row1).contains(&r) && (self.col0..self.col1).contains(&c)
    }

    pub fn fits(&self, h: usize, w: usize) -> bool {
        self.row0 <= self.row1 && self.col0 <= self.col1 && self.row1 <= h && self.col1 <= w
    }
}

/// Which region of each frame counts as the interaction region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VideoVariant {
    /// Central quarter of the frame.
    #[serde(rename = "f_v1")]
    Center,
    /// Lower-middle quarter.
    #[serde(rename = "f_v2")]
    LowerMiddle,
    /// Lower-middle three eighths.
    #[serde(rename = "f_v3")]
    LowerMiddleWide,
    /// Union of externally supplied hand-object boxes.
    #[serde(rename = "f_v4")]
    HandObject,
}

impl VideoVariant {
    pub const ALL: [VideoVariant; 4] = [
        Self::Center,
        Self::LowerMiddle,
        Self::LowerMiddleWide,
        Self::HandObject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Center => "f_v1",
            Self::LowerMiddle => "f_v2",
            Self::LowerMiddleWide => "f_v3",
            Self::HandObject => "f_v4",
        }
    }

    /// The fixed rectangle for the geometric variants.
    pub fn fixed_rect(self, h: usize, w: usize) -> Option<Rect> {
        let cols = (w / 4, 3 * w / 4);
        match self {
            Self::Center => Some(Rect::new(h / 4, 3 * h / 4, cols.0, cols.1)),
            Self::LowerMiddle => Some(Rect::new(h / 2, h, cols.0, cols.1)),
            Self::LowerMiddleWide => Some(Rect::new(h / 4, h, cols.0, cols.1)),
            Self::HandObject => None,
        }
    }
}

impl fmt::Display for VideoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VideoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown video variant {s:?} (expected f_v1..f_v4)")))
    }
}

/// Hand-object boxes for one frame, `[row0, row1, col0, col1]` each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBoxRecord {
    pub video_id: String,
    pub frame_index: usize,
    pub boxes: Vec<[usize; 4]>,
}

/// Boxes grouped by video id.
pub type BBoxIndex = BTreeMap<String, Vec<BBoxRecord>>;

pub fn read_bboxes(path: &Path) -> Result<BBoxIndex> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut index = BBoxIndex::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: BBoxRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        index.entry(rec.video_id.clone()).or_default().push(rec);
    }
    Ok(index)
}

pub fn write_bboxes<'a>(path: &Path, records: impl IntoIterator<Item = &'a BBoxRecord>) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Per-frame rectangles selected for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    pub variant: VideoVariant,
    pub height: usize,
    pub width: usize,
    pub rects: Vec<Vec<Rect>>,
}

impl RegionSpec {
    /// Binary mask of frame `n`, row-major `H x W`.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; self.height * self.width];
        for r in &self.rects[n] {
            for row in r.row0..r.row1 {
                m[row * self.width + r.col0..row * self.width + r.col1].fill(true);
            }
        }
        m
    }

    pub fn selected_pixels(&self, n: usize) -> usize {
        self.mask(n).iter().filter(|&&b| b).count()
    }
}

/// Pick the interaction region for each of `n` frames.
pub fn select_region(
    variant: VideoVariant,
    h: usize,
    w: usize,
    n: usize,
    bboxes: Option<&[BBoxRecord]>,
) -> Result<RegionSpec> {
    let rects = match variant.fixed_rect(h, w) {
        Some(r) => vec![vec![r]; n],
        None => {
            let records = bboxes.ok_or_else(|| {
                Error::Config("hand-object variant needs a bounding-box file".into())
            })?;
            let mut rects = vec![Vec::new(); n];
            for rec in records {
                if rec.frame_index >= n {
                    return Err(Error::Input(format!(
                        "box record for frame {} but video has {n} frames",
                        rec.frame_index
                    )));
                }
                for b in &rec.boxes {
                    let r = Rect::new(b[0], b[1], b[2], b[3]);
                    if !r.fits(h, w) {
                        return Err(Error::Input(format!("box {b:?} outside {h}x{w} frame")));
                    }
                    rects[rec.frame_index].push(r);
                }
            }
            rects
        }
    };
    Ok(RegionSpec {
        variant,
        height: h,
        width: w,
        rects,
    })
}

fn check_region(v: &FrameGrid, region: &RegionSpec) -> Result<()> {
    if region.rects.len() != v.frames() {
        return Err(Error::Dimension(format!(
            "region covers {} frames, video has {}",
            region.rects.len(),
            v.frames()
        )));
    }
    let (h, w) = (v.height(), v.width());
    if region.height != h || region.width != w {
        return Err(Error::Dimension(format!(
            "region built for {}x{} frames, video is {h}x{w}",
            region.height, region.width
        )));
    }
    if let Some(r) = region.rects.iter().flatten().find(|r| !r.fits(h, w)) {
        return Err(Error::Dimension(format!("rectangle {r:?} outside {h}x{w} frame")));
    }
    Ok(())
}

fn apply_region(v: &FrameGrid, region: &RegionSpec, fill: f64, keep_inside: bool) -> Result<FrameGrid> {
    check_region(v, region)?;
    let (c, hw) = (v.channels(), v.height() * v.width());
    let mut out = v.clone();
    for n in 0..v.frames() {
        let m = region.mask(n);
        let frame = &mut out.data_mut()[n * c * hw..(n + 1) * c * hw];
        for ch in 0..c {
            for (px, &inside) in m.iter().enumerate() {
                if inside != keep_inside {
                    frame[ch * hw + px] = fill;
                }
            }
        }
    }
    Ok(out)
}

/// Keep pixels inside the region, set everything else to `fill`.
pub fn retain(v: &FrameGrid, region: &RegionSpec, fill: f64) -> Result<FrameGrid> {
    apply_region(v, region, fill, true)
}

/// Set pixels inside the region to `fill`, keep everything else.
pub fn mask(v: &FrameGrid, region: &RegionSpec, fill: f64) -> Result<FrameGrid> {
    apply_region(v, region, fill, false)
}

/// `(positive, negative)` built from one shared region.
pub fn make_video_pair(
    v: &FrameGrid,
    variant: VideoVariant,
    bboxes: Option<&[BBoxRecord]>,
    fill: f64,
) -> Result<(FrameGrid, FrameGrid)> {
    let region = select_region(variant, v.height(), v.width(), v.frames(), bboxes)?;
    Ok((retain(v, &region, fill)?, mask(v, &region, fill)?))
}
