//! Shared screening steps used by both the CLI and the device service.

use std::path::Path;

use thiserror::Error;

use smearscan_core::imaging::RasterImage;
use smearscan_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, ScreeningOutput};

use crate::backends::{BackendError, Backends};

#[derive(Debug, Error)]
pub enum ScreenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Screen one frame. `frame_path` selects oracle fixtures.
pub fn screen_frame(
    backends: &Backends,
    cfg: &PipelineConfig,
    frame_path: &Path,
    slide: &RasterImage,
) -> Result<ScreeningOutput, ScreenError> {
    let (detector, classifier) = backends.for_frame(frame_path)?;
    Ok(run_pipeline(slide, cfg, detector.as_ref(), classifier.as_ref())?)
}
