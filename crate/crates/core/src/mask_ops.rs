//! Box IoU, candidate-mask matching and square dilation.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::scene_graph::{BBox, ObjectId, SceneGraph};

pub const DEFAULT_MIN_MATCH_IOU: f64 = 0.1;
pub const DEFAULT_DILATION_KERNEL: usize = 11;

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(ForgeError::DimensionMismatch(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    /// Rasterize `bbox` (clipped to the mask).
    pub fn from_bbox(width: usize, height: usize, bbox: &BBox) -> Self {
        let mut mask = Self::new(width, height);
        if let Some(b) = bbox.clip(width as i64, height as i64) {
            for y in b.y..b.bottom() {
                for x in b.x..b.right() {
                    mask.set(x as usize, y as usize, true);
                }
            }
        }
        mask
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Smallest box containing every set pixel.
    pub fn tight_bbox(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        (x0 != usize::MAX).then(|| BBox::new(x0 as i64, y0 as i64, (x1 - x0) as i64, (y1 - y0) as i64))
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Any non-zero pixel is foreground.
    pub fn from_gray_image(img: &GrayImage) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            bits: img.pixels().map(|p| p.0[0] != 0).collect(),
        }
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| ForgeError::image(path, e))?;
        Ok(Self::from_gray_image(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_gray_image()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| ForgeError::image(path, e))
    }
}

/// Intersection over union of two boxes; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = iou_terms(a, b);
    if union <= 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn iou_terms(a: &BBox, b: &BBox) -> (i64, i64) {
    let inter = a.intersection_area(b);
    (inter, a.area() + b.area() - inter)
}

/// Exact comparison of two IoU values as fractions.
fn cmp_iou(a: (i64, i64), b: (i64, i64)) -> Ordering {
    let lhs = if a.1 <= 0 { 0 } else { a.0 as i128 * b.1.max(1) as i128 };
    let rhs = if b.1 <= 0 { 0 } else { b.0 as i128 * a.1.max(1) as i128 };
    lhs.cmp(&rhs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelMatch {
    Matched { object_id: ObjectId, iou: f64 },
    Unmatched { best_iou: f64 },
}

impl LabelMatch {
    pub fn object_id(&self) -> Option<&ObjectId> {
        match self {
            LabelMatch::Matched { object_id, .. } => Some(object_id),
            LabelMatch::Unmatched { .. } => None,
        }
    }
}

/// Attach a predicted box to the graph object it overlaps most.
///
/// Ties go to the smaller object id. Below `min_match_iou` the candidate is
/// unmatched.
pub fn assign_label(predicted_bbox: &BBox, graph: &SceneGraph, min_match_iou: f64) -> LabelMatch {
    let mut best: Option<(&ObjectId, (i64, i64))> = None;
    for node in graph.objects.values() {
        let terms = iou_terms(predicted_bbox, &node.bbox);
        if best.is_none_or(|(_, b)| cmp_iou(terms, b) == Ordering::Greater) {
            best = Some((&node.id, terms));
        }
    }
    match best {
        Some((id, terms)) => {
            let value = if terms.1 <= 0 {
                0.0
            } else {
                terms.0 as f64 / terms.1 as f64
            };
            if value >= min_match_iou && value > 0.0 {
                LabelMatch::Matched {
                    object_id: id.clone(),
                    iou: value,
                }
            } else {
                LabelMatch::Unmatched { best_iou: value }
            }
        }
        None => LabelMatch::Unmatched { best_iou: 0.0 },
    }
}

/// One externally predicted instance mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskCandidate {
    pub provider: String,
    pub predicted_bbox: BBox,
    pub mask: BinaryMask,
    pub predicted_label: String,
    pub score: f64,
}

/// Pick the candidate whose box best overlaps `gt_bbox`.
///
/// Ties: higher score, then lexicographically smaller provider tag.
pub fn select_best_mask<'a>(candidates: &'a [MaskCandidate], gt_bbox: &BBox) -> Option<&'a MaskCandidate> {
    candidates.iter().reduce(|best, c| {
        let order = cmp_iou(
            iou_terms(&c.predicted_bbox, gt_bbox),
            iou_terms(&best.predicted_bbox, gt_bbox),
        )
        .then_with(|| c.score.total_cmp(&best.score))
        .then_with(|| best.provider.cmp(&c.provider));
        if order == Ordering::Greater {
            c
        } else {
            best
        }
    })
}

/// Dilation with a `k`×`k` square, neighborhoods clipped at the border.
///
/// The square separates into a horizontal and a vertical running window,
/// each evaluated with prefix counts, so the cost does not depend on `k`.
pub fn dilate(mask: &BinaryMask, k: usize) -> Result<BinaryMask> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(ForgeError::InvalidParameter(format!(
            "structuring element size must be odd and positive, got {k}"
        )));
    }
    let r = k / 2;
    let (w, h) = (mask.width, mask.height);
    if r == 0 || w == 0 || h == 0 {
        return Ok(mask.clone());
    }

    let mut rows = vec![false; w * h];
    let mut prefix = vec![0u32; w.max(h) + 1];
    for y in 0..h {
        let line = &mask.bits[y * w..(y + 1) * w];
        window_any(line.iter().copied(), w, r, &mut prefix, |x, v| rows[y * w + x] = v);
    }

    let mut out = vec![false; w * h];
    for x in 0..w {
        let column = (0..h).map(|y| rows[y * w + x]);
        window_any(column, h, r, &mut prefix, |y, v| out[y * w + x] = v);
    }

    Ok(BinaryMask {
        width: w,
        height: h,
        bits: out,
    })
}

fn window_any<I: Iterator<Item = bool>>(
    line: I,
    len: usize,
    r: usize,
    prefix: &mut [u32],
    mut emit: impl FnMut(usize, bool),
) {
    prefix[0] = 0;
    for (i, v) in line.enumerate() {
        prefix[i + 1] = prefix[i] + v as u32;
    }
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r + 1).min(len);
        emit(i, prefix[hi] > prefix[lo]);
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub provider: String,
    pub predicted_label: String,
    pub score: f64,
    pub bbox: BBox,
    pub mask_path: PathBuf,
}

/// Per-image candidate listing written by segmentation providers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateManifest {
    #[serde(default)]
    pub image_id: Option<String>,
    pub candidates: Vec<CandidateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCandidate {
    pub index: usize,
    pub provider: String,
    pub reason: String,
}

/// Declared boxes may differ from the mask's tight box by this many pixels
/// per edge (detector boxes are regressed separately from masks).
pub const BBOX_TOLERANCE_PX: i64 = 1;

impl CandidateManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ForgeError::parse(path, e))
    }

    /// Load every mask, relative to `base_dir`, validating each entry
    /// against the image size. Invalid entries are returned separately.
    pub fn resolve(
        &self,
        base_dir: &Path,
        width: usize,
        height: usize,
    ) -> (Vec<MaskCandidate>, Vec<RejectedCandidate>) {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for (index, entry) in self.candidates.iter().enumerate() {
            match resolve_entry(entry, base_dir, width, height) {
                Ok(c) => accepted.push(c),
                Err(reason) => rejected.push(RejectedCandidate {
                    index,
                    provider: entry.provider.clone(),
                    reason,
                }),
            }
        }
        (accepted, rejected)
    }
}

fn resolve_entry(
    entry: &CandidateEntry,
    base_dir: &Path,
    width: usize,
    height: usize,
) -> std::result::Result<MaskCandidate, String> {
    if !(0.0..=1.0).contains(&entry.score) {
        return Err(format!("score {} outside [0, 1]", entry.score));
    }
    let path = base_dir.join(&entry.mask_path);
    let mask = BinaryMask::load_png(&path).map_err(|e| e.to_string())?;
    if mask.width != width || mask.height != height {
        return Err(format!(
            "mask is {}x{}, image is {width}x{height}",
            mask.width, mask.height
        ));
    }
    let tight = mask.tight_bbox().ok_or_else(|| "mask is empty".to_string())?;
    let declared = entry
        .bbox
        .clip(width as i64, height as i64)
        .ok_or_else(|| "declared bbox lies outside the image".to_string())?;
    let off = [
        declared.x - tight.x,
        declared.y - tight.y,
        declared.right() - tight.right(),
        declared.bottom() - tight.bottom(),
    ];
    if off.iter().any(|d| d.abs() > BBOX_TOLERANCE_PX) {
        return Err(format!(
            "declared bbox {declared:?} disagrees with mask extent {tight:?}"
        ));
    }
    Ok(MaskCandidate {
        provider: entry.provider.clone(),
        predicted_bbox: declared,
        mask,
        predicted_label: entry.predicted_label.clone(),
        score: entry.score,
    })
}
