//! Detection and classification evaluation.
//!
//! Detection uses COCO conventions: greedy score-ordered matching, 101-point
//! interpolated precision, IoU thresholds 0.50:0.05:0.95, equal class weight,
//! and area buckets small (< 32²), medium (32²..=96²) and large (> 96²).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::CellVerdict;
use crate::datasets::AnnotatedImage;
use crate::detect::{iou, CellClass};
use crate::imaging::PixelBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("class {0} has no ground truth instances")]
    NoGroundTruth(CellClass),
    #[error("prediction for unknown image {0:?}")]
    KeyMismatch(String),
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    EmptySet,
    #[error("prediction dump line {line}: {message}")]
    BadDump { line: usize, message: String },
}

pub const RECALL_POINTS: usize = 101;
pub const SMALL_MAX_AREA: i64 = 32 * 32;
pub const MEDIUM_MAX_AREA: i64 = 96 * 96;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaRange {
    All,
    Small,
    Medium,
    Large,
}

impl AreaRange {
    pub fn contains(self, area: i64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Small => area < SMALL_MAX_AREA,
            AreaRange::Medium => (SMALL_MAX_AREA..=MEDIUM_MAX_AREA).contains(&area),
            AreaRange::Large => area > MEDIUM_MAX_AREA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub class: CellClass,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
}

/// Predictions and ground truth keyed by image id. Ground-truth order fixes
/// the image order used to break score ties.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionDump {
    pub ground_truth: Vec<(String, Vec<(CellClass, PixelBox)>)>,
    pub predictions: HashMap<String, Vec<ScoredBox>>,
}

impl PredictionDump {
    pub fn add_ground_truth(&mut self, image: impl Into<String>, ann: &AnnotatedImage) {
        self.ground_truth.push((image.into(), ann.objects.clone()));
    }

    pub fn add_predictions(&mut self, image: impl Into<String>, dets: impl IntoIterator<Item = ScoredBox>) {
        self.predictions.entry(image.into()).or_default().extend(dets);
    }
}

/// Outcome of matching one image's predictions of one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Per prediction, in input order.
    pub pred_tp: Vec<bool>,
    /// Per ground-truth box, in input order.
    pub gt_matched: Vec<bool>,
}

/// Stable order of prediction indices by descending score.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Greedy matching for a single image and class.
pub fn match_detections(preds: &[(f64, PixelBox)], gts: &[PixelBox], iou_thresh: f64) -> Matching {
    let scores: Vec<f64> = preds.iter().map(|p| p.0).collect();
    let mut pred_tp = vec![false; preds.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in score_order(&scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let o = iou(&preds[i].1, gt).unwrap_or(0.0);
            if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
            pred_tp[i] = true;
        }
    }
    Matching { pred_tp, gt_matched }
}

/// 101-point interpolated AP from `(score, is_tp)` pairs pooled across images.
///
/// Pairs must be listed in image order then per-image input order; equal
/// scores keep that order.
pub fn average_precision(pooled: &[(f64, bool)], n_gt: usize, class: CellClass) -> Result<f64, MetricsError> {
    if n_gt == 0 {
        return Err(MetricsError::NoGroundTruth(class));
    }
    let scores: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(pooled.len());
    let mut precision = Vec::with_capacity(pooled.len());
    for i in score_order(&scores) {
        if pooled[i].1 {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // Precision envelope: best precision at any recall to the right.
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / 100.0;
        let at = recall.partition_point(|&x| x < r);
        if at < precision.len() {
            sum += precision[at];
        }
    }
    Ok(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
}

impl DetectionMetrics {
    pub fn as_array(&self) -> [Option<f64>; 6] {
        [self.ap, self.ap50, self.ap75, self.ap_s, self.ap_m, self.ap_l]
    }

    pub const NAMES: [&'static str; 6] = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub max_dets: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { max_dets: 100 }
    }
}

/// AP at one IoU threshold and area range, averaged over classes with ground truth.
pub fn dataset_ap(dump: &PredictionDump, iou_thresh: f64, range: AreaRange, cfg: EvalConfig) -> Result<Option<f64>, MetricsError> {
    for key in dump.predictions.keys() {
        if !dump.ground_truth.iter().any(|(id, _)| id == key) {
            return Err(MetricsError::KeyMismatch(key.clone()));
        }
    }
    let mut per_class = Vec::new();
    for class in CellClass::ALL {
        let mut pooled = Vec::new();
        let mut n_gt = 0;
        for (id, gt) in &dump.ground_truth {
            let gts: Vec<PixelBox> = gt
                .iter()
                .filter(|(c, b)| *c == class && range.contains(b.area()))
                .map(|(_, b)| *b)
                .collect();
            let mut preds: Vec<(f64, PixelBox)> = dump
                .predictions
                .get(id)
                .into_iter()
                .flatten()
                .filter(|p| p.class == class)
                .map(|p| (p.score, p.bbox))
                .collect();
            let keep = score_order(&preds.iter().map(|p| p.0).collect::<Vec<_>>());
            let mut capped: Vec<usize> = keep.into_iter().take(cfg.max_dets).collect();
            capped.sort_unstable();
            preds = capped.into_iter().map(|i| preds[i]).collect();
            preds.retain(|p| range.contains(p.1.area()));
            let m = match_detections(&preds, &gts, iou_thresh);
            n_gt += gts.len();
            pooled.extend(preds.iter().zip(&m.pred_tp).map(|(p, &tp)| (p.0, tp)));
        }
        match average_precision(&pooled, n_gt, class) {
            Ok(ap) => per_class.push(ap),
            Err(MetricsError::NoGroundTruth(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if per_class.is_empty() {
        return Ok(None);
    }
    Ok(Some(per_class.iter().sum::<f64>() / per_class.len() as f64))
}

fn mean_over_thresholds(dump: &PredictionDump, range: AreaRange, cfg: EvalConfig) -> Result<Option<f64>, MetricsError> {
    let mut vals = Vec::new();
    for t in iou_thresholds() {
        match dataset_ap(dump, t, range, cfg)? {
            Some(v) => vals.push(v),
            None => return Ok(None),
        }
    }
    Ok(Some(vals.iter().sum::<f64>() / vals.len() as f64))
}

/// The six COCO-style detection metrics. `None` marks a bucket with no ground truth.
pub fn coco_ap_suite(dump: &PredictionDump) -> Result<DetectionMetrics, MetricsError> {
    coco_ap_suite_with(dump, EvalConfig::default())
}

pub fn coco_ap_suite_with(dump: &PredictionDump, cfg: EvalConfig) -> Result<DetectionMetrics, MetricsError> {
    Ok(DetectionMetrics {
        ap: mean_over_thresholds(dump, AreaRange::All, cfg)?,
        ap50: dataset_ap(dump, 0.5, AreaRange::All, cfg)?,
        ap75: dataset_ap(dump, 0.75, AreaRange::All, cfg)?,
        ap_s: mean_over_thresholds(dump, AreaRange::Small, cfg)?,
        ap_m: mean_over_thresholds(dump, AreaRange::Medium, cfg)?,
        ap_l: mean_over_thresholds(dump, AreaRange::Large, cfg)?,
    })
}

// ---------------------------------------------------------------------------
// Dump and report files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpLine {
    pub image: serde_json::Value,
    pub detections: Vec<DumpDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DumpDetection {
    pub class: u8,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [i32; 4],
}

fn image_key(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parse a JSON-lines prediction dump into `image id -> detections`.
pub fn parse_prediction_dump(text: &str) -> Result<BTreeMap<String, Vec<ScoredBox>>, MetricsError> {
    let mut out: BTreeMap<String, Vec<ScoredBox>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| MetricsError::BadDump { line: i + 1, message };
        let parsed: DumpLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let key = image_key(&parsed.image).ok_or_else(|| bad("image id must be a string or number".into()))?;
        let entry = out.entry(key).or_default();
        for d in parsed.detections {
            let class = CellClass::from_code(d.class).ok_or_else(|| bad(format!("unknown class {}", d.class)))?;
            entry.push(ScoredBox { class, score: d.score, bbox: d.bbox.into() });
        }
    }
    Ok(out)
}

pub fn format_dump_line(image: &str, dets: &[ScoredBox]) -> String {
    let line = DumpLine {
        image: serde_json::Value::String(image.to_string()),
        detections: dets
            .iter()
            .map(|d| DumpDetection { class: d.class.code(), score: d.score, bbox: d.bbox.into() })
            .collect(),
    };
    serde_json::to_string(&line).expect("dump lines always serialize")
}

/// Metric report: display values ×100 plus the raw fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// Coordinate frame the box areas were measured in.
    pub frame: String,
    pub images: usize,
    pub display: DetectionMetrics,
    pub raw: DetectionMetrics,
}

impl DetectionMetrics {
    pub fn scaled(&self, k: f64) -> Self {
        let s = |v: Option<f64>| v.map(|x| x * k);
        DetectionMetrics {
            ap: s(self.ap),
            ap50: s(self.ap50),
            ap75: s(self.ap75),
            ap_s: s(self.ap_s),
            ap_m: s(self.ap_m),
            ap_l: s(self.ap_l),
        }
    }
}

impl DetectionReport {
    pub fn new(frame: impl Into<String>, images: usize, raw: DetectionMetrics) -> Self {
        DetectionReport { frame: frame.into(), images, display: raw.scaled(100.0), raw }
    }
}

// ---------------------------------------------------------------------------
// Classification

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    /// Infected, predicted infected.
    pub tp: usize,
    /// Uninfected, predicted infected.
    pub fp: usize,
    /// Infected, predicted uninfected.
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Uninfected, predicted uninfected.
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Predict infected iff `p_infected > decision_threshold`.
pub fn classification_report(
    verdicts: &[CellVerdict],
    infected: &[bool],
    decision_threshold: f64,
) -> Result<ClassificationMetrics, MetricsError> {
    if verdicts.len() != infected.len() {
        return Err(MetricsError::LengthMismatch { predictions: verdicts.len(), labels: infected.len() });
    }
    if verdicts.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut c = Confusion::default();
    for (v, &truth) in verdicts.iter().zip(infected) {
        match (truth, v.p_infected > decision_threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(ClassificationMetrics {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        confusion: c,
    })
}
