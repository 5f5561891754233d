//! Slide screening: resize, detect, crop each red cell, classify, relabel,
//! count, and render the review overlay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classifier_infer, CellVerdict, ClassifierBackend, ClassifyError, CropContext, CLASSIFIER_INPUT};
use crate::detect::{detector_infer, postprocess, CellClass, DetectError, Detection, DetectorBackend, PostprocessConfig, DETECTOR_INPUT};
use crate::hash::content_hash;
use crate::imaging::{crop, decode_any, encode_image, render_overlay, resize, ImageFormat, ImagingError, OverlayBox, OverlayLabel, OverlayStyle, RasterImage};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("slide could not be decoded: {0}")]
    EmptySlide(ImagingError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error("invalid pipeline config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinalLabel {
    #[serde(rename = "RBC")]
    Rbc,
    #[serde(rename = "WBC")]
    Wbc,
    #[serde(rename = "Platelet")]
    Platelet,
    #[serde(rename = "Malaria")]
    Malaria,
}

impl FinalLabel {
    fn overlay(self) -> OverlayLabel {
        match self {
            FinalLabel::Rbc => OverlayLabel::Rbc,
            FinalLabel::Wbc => OverlayLabel::Wbc,
            FinalLabel::Platelet => OverlayLabel::Platelet,
            FinalLabel::Malaria => OverlayLabel::Malaria,
        }
    }
}

impl From<CellClass> for FinalLabel {
    fn from(c: CellClass) -> Self {
        match c {
            CellClass::Rbc => FinalLabel::Rbc,
            CellClass::Wbc => FinalLabel::Wbc,
            CellClass::Platelet => FinalLabel::Platelet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCell {
    pub final_label: FinalLabel,
    pub det: Detection,
    pub verdict: Option<CellVerdict>,
    /// SHA-256 of the PNG-encoded 224x224 crop.
    pub crop_ref: Option<String>,
    /// Set when the mapped box is under 4 px on a side.
    #[serde(default)]
    pub low_confidence_crop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub cells: Vec<LabeledCell>,
    pub infected_count: usize,
    pub uninfected_count: usize,
    pub parasitemia_pct: f64,
    pub wbc_count: usize,
    pub platelet_count: usize,
    /// SHA-256 of the PNG-encoded overlay.
    pub overlay_ref: String,
}

impl ScreeningResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("screening results always serialize")
    }

    /// Parasitemia rounded to one decimal for display.
    pub fn parasitemia_display(&self) -> String {
        format!("{:.1}%", self.parasitemia_pct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// RBCs whose `p_infected` is strictly greater than this are relabeled.
    pub malaria_threshold: f64,
    pub score_floor: f64,
    pub nms_iou: f64,
    #[serde(skip)]
    pub overlay: OverlayStyle,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let pp = PostprocessConfig::default();
        PipelineConfig {
            malaria_threshold: 0.80,
            score_floor: pp.score_floor,
            nms_iou: pp.nms_iou,
            overlay: OverlayStyle::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.malaria_threshold > 0.0 && self.malaria_threshold < 1.0) {
            return Err(PipelineError::BadConfig(format!(
                "malaria_threshold must be in (0, 1), got {}",
                self.malaria_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(PipelineError::BadConfig(format!("score_floor must be in [0, 1], got {}", self.score_floor)));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(PipelineError::BadConfig(format!("nms_iou must be in (0, 1), got {}", self.nms_iou)));
        }
        Ok(())
    }

    pub fn postprocess(&self) -> PostprocessConfig {
        PostprocessConfig {
            score_floor: self.score_floor,
            nms_iou: self.nms_iou,
        }
    }
}

/// A classified cell image kept for later review.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCrop {
    pub crop_ref: String,
    pub image: RasterImage,
    pub png: Vec<u8>,
}

/// Everything a screening run produces: the result plus the images it references.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningOutput {
    pub result: ScreeningResult,
    pub overlay: RasterImage,
    pub overlay_png: Vec<u8>,
    pub crops: Vec<CellCrop>,
}

const MIN_CONFIDENT_SIDE: i32 = 4;

/// Counts infected and uninfected red cells and the parasitemia percentage.
pub fn quantify(cells: &[LabeledCell]) -> (usize, usize, f64) {
    let infected = cells.iter().filter(|c| c.final_label == FinalLabel::Malaria).count();
    let uninfected = cells
        .iter()
        .filter(|c| c.det.class == CellClass::Rbc && c.final_label == FinalLabel::Rbc)
        .count();
    let total = infected + uninfected;
    let pct = if total == 0 { 0.0 } else { 100.0 * infected as f64 / total as f64 };
    (infected, uninfected, pct)
}

/// Relabel rule: only RBCs, and only strictly above the threshold.
pub fn final_label(class: CellClass, verdict: Option<&CellVerdict>, threshold: f64) -> FinalLabel {
    match (class, verdict) {
        (CellClass::Rbc, Some(v)) if v.p_infected > threshold => FinalLabel::Malaria,
        (c, _) => c.into(),
    }
}

/// Run detection and classification over one slide.
pub fn run_pipeline(
    slide: &RasterImage,
    cfg: &PipelineConfig,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
) -> Result<ScreeningOutput, PipelineError> {
    cfg.validate()?;
    let (w, h) = (slide.width(), slide.height());
    let input = resize(slide, DETECTOR_INPUT, DETECTOR_INPUT);
    let raw = detector_infer(detector, &input)?;
    let detections = postprocess(&raw, cfg.postprocess(), w, h);

    let mut cells = Vec::with_capacity(detections.len());
    let mut crops: Vec<CellCrop> = Vec::new();
    for det in detections {
        if det.class != CellClass::Rbc {
            cells.push(LabeledCell {
                final_label: det.class.into(),
                det,
                verdict: None,
                crop_ref: None,
                low_confidence_crop: false,
            });
            continue;
        }
        let cell = resize(&crop(slide, det.bbox)?, CLASSIFIER_INPUT, CLASSIFIER_INPUT);
        let ctx = CropContext { source_box: Some(det.bbox) };
        let verdict = classifier_infer(classifier, &cell, &ctx)?;
        let png = encode_image(&cell, ImageFormat::Png);
        let crop_ref = content_hash(&png);
        if !crops.iter().any(|c| c.crop_ref == crop_ref) {
            crops.push(CellCrop { crop_ref: crop_ref.clone(), image: cell, png });
        }
        cells.push(LabeledCell {
            final_label: final_label(det.class, Some(&verdict), cfg.malaria_threshold),
            det,
            verdict: Some(verdict),
            crop_ref: Some(crop_ref),
            low_confidence_crop: det.bbox.width() < MIN_CONFIDENT_SIDE || det.bbox.height() < MIN_CONFIDENT_SIDE,
        });
    }

    let (infected_count, uninfected_count, parasitemia_pct) = quantify(&cells);
    let boxes: Vec<OverlayBox> = cells
        .iter()
        .map(|c| OverlayBox {
            bbox: c.det.bbox,
            label: c.final_label.overlay(),
            score: c.det.score,
        })
        .collect();
    let overlay = render_overlay(slide, &boxes, &cfg.overlay);
    let overlay_png = encode_image(&overlay, ImageFormat::Png);
    let result = ScreeningResult {
        wbc_count: cells.iter().filter(|c| c.det.class == CellClass::Wbc).count(),
        platelet_count: cells.iter().filter(|c| c.det.class == CellClass::Platelet).count(),
        cells,
        infected_count,
        uninfected_count,
        parasitemia_pct,
        overlay_ref: content_hash(&overlay_png),
    };
    Ok(ScreeningOutput {
        result,
        overlay,
        overlay_png,
        crops,
    })
}

/// Decode an encoded slide (PPM or PNG) and screen it.
pub fn screen_encoded(
    bytes: &[u8],
    cfg: &PipelineConfig,
    detector: &dyn DetectorBackend,
    classifier: &dyn ClassifierBackend,
) -> Result<ScreeningOutput, PipelineError> {
    let slide = decode_any(bytes).map_err(PipelineError::EmptySlide)?;
    run_pipeline(&slide, cfg, detector, classifier)
}
