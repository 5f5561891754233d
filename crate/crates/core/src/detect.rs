//! Blood-cell detection: backend contract, classical segmentation backend,
//! oracle backend and deterministic postprocessing (score floor, class-wise
//! NMS, mapping back to source pixels).

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{luminance, rgb_to_hsv, PixelBox, RasterImage};

/// Side length of the square detector input.
pub const DETECTOR_INPUT: u32 = 320;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("detector expects a {expected}x{expected} image, got {width}x{height}")]
    WrongInputSize { expected: u32, width: u32, height: u32 },
    #[error("detector backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("box has zero area")]
    ZeroAreaBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum CellClass {
    Rbc = 0,
    Wbc = 1,
    Platelet = 2,
}

impl CellClass {
    pub const ALL: [CellClass; 3] = [CellClass::Rbc, CellClass::Wbc, CellClass::Platelet];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CellClass::Rbc),
            1 => Some(CellClass::Wbc),
            2 => Some(CellClass::Platelet),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Rbc => "RBC",
            CellClass::Wbc => "WBC",
            CellClass::Platelet => "Platelets",
        }
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<CellClass> for u8 {
    fn from(c: CellClass) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for CellClass {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        CellClass::from_code(v).ok_or_else(|| format!("unknown cell class code {v}"))
    }
}

/// Axis-aligned box with real coordinates in `[top, left, bottom, right]` order.
pub trait Rect {
    fn edges(&self) -> [f64; 4];
}

impl Rect for PixelBox {
    fn edges(&self) -> [f64; 4] {
        [self.top as f64, self.left as f64, self.bottom as f64, self.right as f64]
    }
}

/// Box in coordinates normalised to the detector input, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl NormBox {
    pub fn new(top: f64, left: f64, bottom: f64, right: f64) -> Self {
        NormBox { top, left, bottom, right }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.top)
            && (0.0..=1.0).contains(&self.left)
            && (0.0..=1.0).contains(&self.bottom)
            && (0.0..=1.0).contains(&self.right)
            && self.top < self.bottom
            && self.left < self.right
    }

    /// Normalise a pixel box against an image of the given size.
    pub fn from_pixels(b: PixelBox, width: u32, height: u32) -> Self {
        NormBox {
            top: b.top as f64 / height as f64,
            left: b.left as f64 / width as f64,
            bottom: b.bottom as f64 / height as f64,
            right: b.right as f64 / width as f64,
        }
    }

    /// Map to pixels with round-half-up, clamp to the image, and keep at least one pixel per side.
    pub fn to_pixels(&self, width: u32, height: u32) -> PixelBox {
        let (w, h) = (width as i32, height as i32);
        let round = |v: f64| (v + 0.5).floor() as i32;
        let mut top = round(self.top * height as f64).clamp(0, h);
        let mut left = round(self.left * width as f64).clamp(0, w);
        let mut bottom = round(self.bottom * height as f64).clamp(0, h);
        let mut right = round(self.right * width as f64).clamp(0, w);
        if bottom <= top {
            if top < h {
                bottom = top + 1;
            } else {
                top = h - 1;
                bottom = h;
            }
        }
        if right <= left {
            if left < w {
                right = left + 1;
            } else {
                left = w - 1;
                right = w;
            }
        }
        PixelBox::new(top, left, bottom, right)
    }
}

impl Rect for NormBox {
    fn edges(&self) -> [f64; 4] {
        [self.top, self.left, self.bottom, self.right]
    }
}

/// Intersection over union with half-open semantics.
pub fn iou<R: Rect>(a: &R, b: &R) -> Result<f64, DetectError> {
    let [at, al, ab, ar] = a.edges();
    let [bt, bl, bb, br] = b.edges();
    let area_a = (ab - at) * (ar - al);
    let area_b = (bb - bt) * (br - bl);
    if !(area_a > 0.0 && area_b > 0.0) {
        return Err(DetectError::ZeroAreaBox);
    }
    let ih = (ab.min(bb) - at.max(bt)).max(0.0);
    let iw = (ar.min(br) - al.max(bl)).max(0.0);
    let inter = ih * iw;
    if inter == 0.0 {
        return Ok(0.0);
    }
    Ok(inter / (area_a + area_b - inter))
}

/// One detector output in normalised coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub class: CellClass,
    pub score: f64,
    pub bbox: NormBox,
}

/// A postprocessed detection in source-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: CellClass,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Oracle,
    Heuristic,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DetectorDescriptor {
    pub name: String,
    pub kind: BackendKind,
    /// Whether `infer` may be called concurrently.
    pub reentrant: bool,
}

impl DetectorDescriptor {
    pub fn input_size(&self) -> (u32, u32) {
        (DETECTOR_INPUT, DETECTOR_INPUT)
    }
}

pub trait DetectorBackend: Send + Sync {
    fn descriptor(&self) -> DetectorDescriptor;

    /// Implementations may assume a 320x320 input; use [`detector_infer`] to enforce it.
    fn detect(&self, img320: &RasterImage) -> Result<Vec<RawDetection>, DetectError>;
}

/// Run a backend after validating the input size.
pub fn detector_infer(
    backend: &dyn DetectorBackend,
    img320: &RasterImage,
) -> Result<Vec<RawDetection>, DetectError> {
    if img320.width() != DETECTOR_INPUT || img320.height() != DETECTOR_INPUT {
        return Err(DetectError::WrongInputSize {
            expected: DETECTOR_INPUT,
            width: img320.width(),
            height: img320.height(),
        });
    }
    backend.detect(img320)
}

// ---------------------------------------------------------------------------
// Oracle backend

/// Replays a fixed list of detections regardless of the image content.
#[derive(Debug, Clone, Default)]
pub struct OracleDetector {
    detections: Vec<RawDetection>,
}

impl OracleDetector {
    pub fn new(detections: Vec<RawDetection>) -> Self {
        OracleDetector { detections }
    }

    /// Ground-truth annotations in pixels of a `width` x `height` image, score 1.
    pub fn from_annotations(
        objects: impl IntoIterator<Item = (CellClass, PixelBox)>,
        width: u32,
        height: u32,
    ) -> Self {
        let detections = objects
            .into_iter()
            .map(|(class, b)| RawDetection {
                class,
                score: 1.0,
                bbox: NormBox::from_pixels(b, width, height),
            })
            .collect();
        OracleDetector { detections }
    }

    pub fn detections(&self) -> &[RawDetection] {
        &self.detections
    }
}

impl DetectorBackend for OracleDetector {
    fn descriptor(&self) -> DetectorDescriptor {
        DetectorDescriptor {
            name: "oracle".into(),
            kind: BackendKind::Oracle,
            reentrant: true,
        }
    }

    fn detect(&self, _img320: &RasterImage) -> Result<Vec<RawDetection>, DetectError> {
        Ok(self.detections.clone())
    }
}

// ---------------------------------------------------------------------------
// Heuristic backend

/// Thresholds for the segmentation backend, in pixels of the 320x320 input.
///
/// Calibrated against the synthetic slide generator. Not clinically meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicDetectorConfig {
    pub min_area: u32,
    pub max_area: u32,
    pub wbc_min_area: u32,
    pub platelet_max_area: u32,
    /// Components smaller than this are treated as noise before any class rule.
    pub noise_area: u32,
    pub purple_hue: (f64, f64),
    pub purple_min_saturation: f64,
    /// Minimum luminance gap between the Otsu classes; below it the image is treated as blank.
    pub min_contrast: f64,
}

impl Default for HeuristicDetectorConfig {
    fn default() -> Self {
        HeuristicDetectorConfig {
            min_area: 40,
            max_area: 3000,
            wbc_min_area: 1200,
            platelet_max_area: 120,
            noise_area: 4,
            purple_hue: (250.0, 330.0),
            purple_min_saturation: 0.25,
            min_contrast: 12.0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicDetector {
    pub config: HeuristicDetectorConfig,
}

impl HeuristicDetector {
    pub fn new(config: HeuristicDetectorConfig) -> Self {
        HeuristicDetector { config }
    }
}

impl DetectorBackend for HeuristicDetector {
    fn descriptor(&self) -> DetectorDescriptor {
        DetectorDescriptor {
            name: "heuristic".into(),
            kind: BackendKind::Heuristic,
            reentrant: true,
        }
    }

    fn detect(&self, img320: &RasterImage) -> Result<Vec<RawDetection>, DetectError> {
        Ok(heuristic_detect_with(img320, &self.config))
    }
}

/// Global Otsu threshold over a 256-bin histogram.
///
/// Returns `t` such that values `<= t` form the lower class, or `None` when
/// the histogram has a single occupied bin.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 || hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best, mut best_t) = (-1.0f64, 0u8);
    for (t, &count) in hist.iter().enumerate().take(255) {
        w0 += count;
        sum0 += t as f64 * count as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    Some(best_t)
}

/// Per-component statistics from 8-connected labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub area: u32,
    pub bbox: PixelBox,
    pub mean_rgb: [f64; 3],
}

/// Label 8-connected foreground regions of a `width` x `height` mask.
pub fn connected_components(mask: &[bool], width: u32, height: u32, img: &RasterImage) -> Vec<Component> {
    let (w, h) = (width as usize, height as usize);
    debug_assert_eq!(mask.len(), w * h);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut sum) = (0u32, [0u64; 3]);
        let (mut top, mut left, mut bottom, mut right) = (h, w, 0usize, 0usize);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % w, idx / w);
            area += 1;
            let p = img.pixel(x as u32, y as u32);
            for c in 0..3 {
                sum[c] += p[c] as u64;
            }
            top = top.min(y);
            left = left.min(x);
            bottom = bottom.max(y + 1);
            right = right.max(x + 1);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.push(Component {
            area,
            bbox: PixelBox::new(top as i32, left as i32, bottom as i32, right as i32),
            mean_rgb: sum.map(|s| s as f64 / area as f64),
        });
    }
    out
}

pub fn heuristic_detect(img320: &RasterImage) -> Vec<RawDetection> {
    heuristic_detect_with(img320, &HeuristicDetectorConfig::default())
}

pub fn heuristic_detect_with(img: &RasterImage, cfg: &HeuristicDetectorConfig) -> Vec<RawDetection> {
    let (w, h) = (img.width(), img.height());
    let lum: Vec<u8> = img
        .rgb_pixels()
        .map(|p| luminance(p).round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut hist = [0u64; 256];
    for &l in &lum {
        hist[l as usize] += 1;
    }
    let Some(t) = otsu_threshold(&hist) else {
        return Vec::new();
    };
    let class_mean = |range: std::ops::RangeInclusive<usize>| {
        let (n, s) = range.fold((0u64, 0u64), |(n, s), i| (n + hist[i], s + hist[i] * i as u64));
        if n == 0 { 0.0 } else { s as f64 / n as f64 }
    };
    if class_mean(t as usize + 1..=255) - class_mean(0..=t as usize) < cfg.min_contrast {
        return Vec::new();
    }
    let mask: Vec<bool> = lum.iter().map(|&l| l <= t).collect();
    let mut dets = Vec::new();
    for comp in connected_components(&mask, w, h, img) {
        if comp.area < cfg.noise_area {
            continue;
        }
        let mean = comp.mean_rgb.map(|c| c.round().clamp(0.0, 255.0) as u8);
        let hsv = rgb_to_hsv(mean);
        let purple = hsv.h >= cfg.purple_hue.0
            && hsv.h <= cfg.purple_hue.1
            && hsv.s >= cfg.purple_min_saturation;
        let class = if purple && comp.area >= cfg.wbc_min_area {
            CellClass::Wbc
        } else if purple && comp.area <= cfg.platelet_max_area {
            CellClass::Platelet
        } else if (cfg.min_area..=cfg.max_area).contains(&comp.area) {
            CellClass::Rbc
        } else {
            continue;
        };
        let solidity = comp.area as f64 / comp.bbox.area() as f64;
        dets.push(RawDetection {
            class,
            score: solidity.clamp(0.0, 1.0),
            bbox: NormBox::from_pixels(comp.bbox, w, h),
        });
    }
    dets
}

// ---------------------------------------------------------------------------
// Postprocessing

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            score_floor: 0.25,
            nms_iou: 0.45,
        }
    }
}

fn rank_order(a: &RawDetection, b: &RawDetection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.top.total_cmp(&b.bbox.top))
        .then(a.bbox.left.total_cmp(&b.bbox.left))
}

/// Class-wise greedy NMS over detections already sorted by [`rank_order`].
fn nms(sorted: Vec<RawDetection>, nms_iou: f64) -> Vec<RawDetection> {
    let mut suppressed = vec![false; sorted.len()];
    let mut keep = Vec::new();
    for i in 0..sorted.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(sorted[i]);
        for j in i + 1..sorted.len() {
            if suppressed[j] || sorted[j].class != sorted[i].class {
                continue;
            }
            // Degenerate boxes never overlap anything.
            let overlap = iou(&sorted[i].bbox, &sorted[j].bbox).unwrap_or(0.0);
            if overlap > nms_iou {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Score floor, class-wise NMS, then mapping to `orig_w` x `orig_h` pixels.
/// Output is sorted by score descending.
pub fn postprocess(
    raw: &[RawDetection],
    cfg: PostprocessConfig,
    orig_w: u32,
    orig_h: u32,
) -> Vec<Detection> {
    let mut kept: Vec<RawDetection> = raw
        .iter()
        .filter(|d| d.score >= cfg.score_floor)
        .copied()
        .collect();
    kept.sort_by(rank_order);
    nms(kept, cfg.nms_iou)
        .into_iter()
        .map(|d| Detection {
            class: d.class,
            score: d.score,
            bbox: d.bbox.to_pixels(orig_w, orig_h),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// External backend

/// Parse the external detector's stdout: one `class_id score top left bottom right` line per detection.
pub fn parse_detector_output(text: &str) -> Result<Vec<RawDetection>, DetectError> {
    let bad = |line: &str, why: &str| DetectError::BackendUnavailable(format!("bad detector output line {line:?}: {why}"));
    let mut out = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(bad(line, "expected 6 fields"));
        }
        let class = fields[0]
            .parse::<u8>()
            .ok()
            .and_then(CellClass::from_code)
            .ok_or_else(|| bad(line, "unknown class id"))?;
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(line, "non-numeric field"))?;
        let det = RawDetection {
            class,
            score: nums[0],
            bbox: NormBox::new(nums[1], nums[2], nums[3], nums[4]),
        };
        if !(0.0..=1.0).contains(&det.score) || !det.bbox.is_valid() {
            return Err(bad(line, "value out of range"));
        }
        out.push(det);
    }
    Ok(out)
}

/// Format detections in the external protocol's line format.
pub fn format_detector_output(dets: &[RawDetection]) -> String {
    dets.iter()
        .map(|d| {
            format!(
                "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
                d.class.code(),
                d.score,
                d.bbox.top,
                d.bbox.left,
                d.bbox.bottom,
                d.bbox.right
            )
        })
        .collect()
}

#[cfg(feature = "external")]
pub use external::ExternalDetector;

#[cfg(feature = "external")]
mod external {
    use std::path::PathBuf;

    use super::*;
    use crate::external::run_with_ppm;

    /// Runs `program [args..] <path-to-320x320.ppm>` and reads detections from stdout.
    #[derive(Debug, Clone)]
    pub struct ExternalDetector {
        pub program: PathBuf,
        pub args: Vec<String>,
    }

    impl DetectorBackend for ExternalDetector {
        fn descriptor(&self) -> DetectorDescriptor {
            DetectorDescriptor {
                name: format!("external:{}", self.program.display()),
                kind: BackendKind::External,
                reentrant: true,
            }
        }

        fn detect(&self, img320: &RasterImage) -> Result<Vec<RawDetection>, DetectError> {
            let stdout = run_with_ppm(&self.program, &self.args, img320)
                .map_err(DetectError::BackendUnavailable)?;
            parse_detector_output(&stdout)
        }
    }
}
