//! Per-cell malaria classification: two-class verdicts from 224x224 crops.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::BackendKind;
use crate::imaging::{rgb_to_hsv, PixelBox, RasterImage};
use crate::hash::content_hash;

/// Side length of the square classifier input.
pub const CLASSIFIER_INPUT: u32 = 224;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("classifier expects a {expected}x{expected} image, got {width}x{height}")]
    WrongInputSize { expected: u32, width: u32, height: u32 },
    #[error("classifier backend unavailable: {0}")]
    BackendUnavailable(String),
}

/// Two-class probability distribution over infected/uninfected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub p_infected: f64,
    pub p_uninfected: f64,
}

impl CellVerdict {
    /// Panics if `p_infected` is outside `[0, 1]`.
    pub fn from_infected(p_infected: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&p_infected),
            "probability out of range: {p_infected}"
        );
        CellVerdict {
            p_infected,
            p_uninfected: 1.0 - p_infected,
        }
    }

    /// Normalise an arbitrary non-negative pair.
    pub fn from_pair(p_infected: f64, p_uninfected: f64) -> Option<Self> {
        let total = p_infected + p_uninfected;
        if !(p_infected >= 0.0 && p_uninfected >= 0.0 && total > 0.0 && total.is_finite()) {
            return None;
        }
        Some(CellVerdict::from_infected((p_infected / total).clamp(0.0, 1.0)))
    }

    pub const INFECTED: CellVerdict = CellVerdict { p_infected: 1.0, p_uninfected: 0.0 };
    pub const UNINFECTED: CellVerdict = CellVerdict { p_infected: 0.0, p_uninfected: 1.0 };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassifierDescriptor {
    pub name: String,
    pub kind: BackendKind,
    pub reentrant: bool,
}

impl ClassifierDescriptor {
    pub fn input_size(&self) -> (u32, u32) {
        (CLASSIFIER_INPUT, CLASSIFIER_INPUT)
    }
}

/// Where a crop came from. Backends that look only at pixels ignore it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CropContext {
    /// Box of the cell in the original slide, when the crop came from a slide.
    pub source_box: Option<PixelBox>,
}

pub trait ClassifierBackend: Send + Sync {
    fn descriptor(&self) -> ClassifierDescriptor;

    fn classify(&self, crop224: &RasterImage, ctx: &CropContext) -> Result<CellVerdict, ClassifyError>;
}

pub fn classifier_infer(
    backend: &dyn ClassifierBackend,
    crop224: &RasterImage,
    ctx: &CropContext,
) -> Result<CellVerdict, ClassifyError> {
    if crop224.width() != CLASSIFIER_INPUT || crop224.height() != CLASSIFIER_INPUT {
        return Err(ClassifyError::WrongInputSize {
            expected: CLASSIFIER_INPUT,
            width: crop224.width(),
            height: crop224.height(),
        });
    }
    backend.classify(crop224, ctx)
}

// ---------------------------------------------------------------------------
// Oracle

/// Returns fixture verdicts, looked up by source box first and crop content hash second.
#[derive(Debug, Clone, Default)]
pub struct OracleClassifier {
    by_box: HashMap<PixelBox, CellVerdict>,
    by_content: HashMap<String, CellVerdict>,
}

impl OracleClassifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_box(&mut self, source_box: PixelBox, verdict: CellVerdict) {
        self.by_box.insert(source_box, verdict);
    }

    pub fn insert_crop(&mut self, crop224: &RasterImage, verdict: CellVerdict) {
        self.by_content.insert(content_hash(crop224.pixels()), verdict);
    }

    pub fn len(&self) -> usize {
        self.by_box.len() + self.by_content.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ClassifierBackend for OracleClassifier {
    fn descriptor(&self) -> ClassifierDescriptor {
        ClassifierDescriptor {
            name: "oracle".into(),
            kind: BackendKind::Oracle,
            reentrant: true,
        }
    }

    fn classify(&self, crop224: &RasterImage, ctx: &CropContext) -> Result<CellVerdict, ClassifyError> {
        if let Some(v) = ctx.source_box.and_then(|b| self.by_box.get(&b)) {
            return Ok(*v);
        }
        self.by_content
            .get(&content_hash(crop224.pixels()))
            .copied()
            .ok_or_else(|| match ctx.source_box {
                Some(b) => ClassifyError::BackendUnavailable(format!(
                    "no oracle label for cell at {:?}",
                    <[i32; 4]>::from(b)
                )),
                None => ClassifyError::BackendUnavailable("no oracle label for crop".into()),
            })
    }
}

// ---------------------------------------------------------------------------
// Heuristic stain classifier

/// Chromatin gate and logistic calibration for the stain-fraction classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicClassifierConfig {
    pub hue: (f64, f64),
    pub min_saturation: f64,
    pub max_value: f64,
    /// Stain fraction at which `p_infected = 0.5`.
    pub tau: f64,
    pub scale: f64,
}

impl Default for HeuristicClassifierConfig {
    fn default() -> Self {
        HeuristicClassifierConfig {
            hue: (250.0, 330.0),
            min_saturation: 0.3,
            max_value: 0.75,
            tau: 0.01,
            scale: 0.004,
        }
    }
}

impl HeuristicClassifierConfig {
    pub fn is_chromatin(&self, rgb: [u8; 3]) -> bool {
        let hsv = rgb_to_hsv(rgb);
        hsv.h >= self.hue.0 && hsv.h <= self.hue.1 && hsv.s >= self.min_saturation && hsv.v <= self.max_value
    }

    pub fn stain_fraction(&self, img: &RasterImage) -> f64 {
        let n = img.rgb_pixels().filter(|&p| self.is_chromatin(p)).count();
        n as f64 / (img.width() as f64 * img.height() as f64)
    }

    pub fn verdict_for_fraction(&self, f: f64) -> CellVerdict {
        CellVerdict::from_infected(logistic((f - self.tau) / self.scale))
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicClassifier {
    pub config: HeuristicClassifierConfig,
}

impl HeuristicClassifier {
    pub fn new(config: HeuristicClassifierConfig) -> Self {
        HeuristicClassifier { config }
    }
}

pub fn heuristic_classify(crop224: &RasterImage) -> CellVerdict {
    let cfg = HeuristicClassifierConfig::default();
    cfg.verdict_for_fraction(cfg.stain_fraction(crop224))
}

impl ClassifierBackend for HeuristicClassifier {
    fn descriptor(&self) -> ClassifierDescriptor {
        ClassifierDescriptor {
            name: "heuristic".into(),
            kind: BackendKind::Heuristic,
            reentrant: true,
        }
    }

    fn classify(&self, crop224: &RasterImage, _ctx: &CropContext) -> Result<CellVerdict, ClassifyError> {
        Ok(self.config.verdict_for_fraction(self.config.stain_fraction(crop224)))
    }
}

// ---------------------------------------------------------------------------
// External

/// Parse `p_infected p_uninfected` from an external classifier's stdout.
pub fn parse_classifier_output(text: &str) -> Result<CellVerdict, ClassifyError> {
    let fields: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| ClassifyError::BackendUnavailable(format!("non-numeric classifier output {text:?}")))?;
    match fields.as_slice() {
        [pi, pu] => CellVerdict::from_pair(*pi, *pu)
            .ok_or_else(|| ClassifyError::BackendUnavailable(format!("invalid probabilities {text:?}"))),
        _ => Err(ClassifyError::BackendUnavailable(format!(
            "expected two probabilities, got {text:?}"
        ))),
    }
}

#[cfg(feature = "external")]
pub use external::ExternalClassifier;

#[cfg(feature = "external")]
mod external {
    use std::path::PathBuf;

    use super::*;
    use crate::external::run_with_ppm;

    /// Runs `program [args..] <path-to-224x224.ppm>` and reads `p_infected p_uninfected`.
    #[derive(Debug, Clone)]
    pub struct ExternalClassifier {
        pub program: PathBuf,
        pub args: Vec<String>,
    }

    impl ClassifierBackend for ExternalClassifier {
        fn descriptor(&self) -> ClassifierDescriptor {
            ClassifierDescriptor {
                name: format!("external:{}", self.program.display()),
                kind: BackendKind::External,
                reentrant: true,
            }
        }

        fn classify(&self, crop224: &RasterImage, _ctx: &CropContext) -> Result<CellVerdict, ClassifyError> {
            let stdout = run_with_ppm(&self.program, &self.args, crop224)
                .map_err(ClassifyError::BackendUnavailable)?;
            parse_classifier_output(&stdout)
        }
    }
}
