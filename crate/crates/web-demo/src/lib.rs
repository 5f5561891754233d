//! WebAssembly bindings for the static demo page in `www/`.
//!
//! A [`Demo`] holds one generated slide. The page re-screens it whenever a
//! control moves and paints the RGBA buffers onto canvases.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use smearscan_core::classify::{logistic, HeuristicClassifier, HeuristicClassifierConfig};
use smearscan_core::datasets::{generate_synthetic_slide, SyntheticSlide, SyntheticSlideSpec};
use smearscan_core::detect::{CellClass, HeuristicDetector};
use smearscan_core::imaging::{crop, resize, RasterImage};
use smearscan_core::pipeline::{run_pipeline, FinalLabel, PipelineConfig, ScreeningOutput};

#[derive(Debug, Serialize)]
pub struct Summary {
    pub infected: usize,
    pub uninfected: usize,
    pub parasitemia: String,
    pub wbc: usize,
    pub platelets: usize,
    pub detections: usize,
    pub truth_infected: usize,
    pub truth_rbc: usize,
}

#[derive(Debug, Serialize)]
pub struct CellProbe {
    pub index: usize,
    pub stain_fraction: f64,
    pub p_infected: f64,
    pub parasitized: bool,
}

#[wasm_bindgen]
pub struct Demo {
    slide: SyntheticSlide,
    last: Option<ScreeningOutput>,
}

fn rgba(img: &RasterImage) -> Vec<u8> {
    img.rgb_pixels().flat_map(|[r, g, b]| [r, g, b, 255]).collect()
}

fn err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

impl Demo {
    pub fn generate(seed: u64, n_rbc: usize, parasitized_pct: f64) -> Result<Demo, String> {
        let spec = SyntheticSlideSpec {
            seed,
            n_rbc: n_rbc.clamp(1, 80),
            parasitized_fraction: (parasitized_pct / 100.0).clamp(0.0, 1.0),
            ..Default::default()
        };
        let slide = generate_synthetic_slide(&spec).map_err(|e| e.to_string())?;
        Ok(Demo { slide, last: None })
    }

    pub fn run(&mut self, threshold: f64, score_floor: f64, nms_iou: f64) -> Result<Summary, String> {
        let cfg = PipelineConfig { malaria_threshold: threshold, score_floor, nms_iou, ..Default::default() };
        cfg.validate().map_err(|e| e.to_string())?;
        let out = run_pipeline(&self.slide.image, &cfg, &HeuristicDetector::default(), &HeuristicClassifier::default())
            .map_err(|e| e.to_string())?;
        let r = &out.result;
        let summary = Summary {
            infected: r.infected_count,
            uninfected: r.uninfected_count,
            parasitemia: r.parasitemia_display(),
            wbc: r.wbc_count,
            platelets: r.platelet_count,
            detections: r.cells.len(),
            truth_infected: self.slide.infected_count(),
            truth_rbc: self.slide.truth.objects.iter().filter(|o| o.0 == CellClass::Rbc).count(),
        };
        self.last = Some(out);
        Ok(summary)
    }

    /// Stain fraction and calibrated probability for every annotated RBC.
    pub fn probes(&self, tau: f64, scale: f64) -> Vec<CellProbe> {
        let cfg = HeuristicClassifierConfig { tau, scale: scale.max(1e-6), ..Default::default() };
        let mut out = Vec::new();
        for (i, (class, b)) in self.slide.truth.objects.iter().enumerate() {
            if *class != CellClass::Rbc {
                continue;
            }
            let Ok(c) = crop(&self.slide.image, *b) else { continue };
            let f = cfg.stain_fraction(&resize(&c, 224, 224));
            out.push(CellProbe {
                index: i,
                stain_fraction: f,
                p_infected: cfg.verdict_for_fraction(f).p_infected,
                parasitized: self.slide.parasitized[i],
            });
        }
        out
    }

    pub fn malaria_cells(&self) -> usize {
        self.last
            .as_ref()
            .map(|o| o.result.cells.iter().filter(|c| c.final_label == FinalLabel::Malaria).count())
            .unwrap_or(0)
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_rbc: u32, parasitized_pct: f64) -> Result<Demo, JsValue> {
        Demo::generate(seed as u64, n_rbc as usize, parasitized_pct).map_err(err)
    }

    pub fn width(&self) -> u32 {
        self.slide.image.width()
    }

    pub fn height(&self) -> u32 {
        self.slide.image.height()
    }

    #[wasm_bindgen(js_name = slideRgba)]
    pub fn slide_rgba(&self) -> Vec<u8> {
        rgba(&self.slide.image)
    }

    /// Screen the slide and return a JSON summary.
    pub fn screen(&mut self, threshold: f64, score_floor: f64, nms_iou: f64) -> Result<String, JsValue> {
        let s = self.run(threshold, score_floor, nms_iou).map_err(err)?;
        serde_json::to_string(&s).map_err(err)
    }

    /// Overlay from the last `screen` call, or the plain slide before one.
    #[wasm_bindgen(js_name = overlayRgba)]
    pub fn overlay_rgba(&self) -> Vec<u8> {
        match &self.last {
            Some(o) => rgba(&o.overlay),
            None => rgba(&self.slide.image),
        }
    }

    /// JSON array of per-RBC stain probes under the given calibration.
    #[wasm_bindgen(js_name = stainProbes)]
    pub fn stain_probes(&self, tau: f64, scale: f64) -> String {
        serde_json::to_string(&self.probes(tau, scale)).unwrap_or_else(|_| "[]".into())
    }
}

/// The classifier's calibration curve at one stain fraction.
#[wasm_bindgen(js_name = stainLogistic)]
pub fn stain_logistic(fraction: f64, tau: f64, scale: f64) -> f64 {
    logistic((fraction - tau) / scale.max(1e-6))
}
