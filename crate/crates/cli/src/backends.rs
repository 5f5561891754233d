//! Backend selection for detector and classifier.

use std::path::{Path, PathBuf};

use thiserror::Error;

use smearscan_core::classify::{ClassifierBackend, HeuristicClassifier};
use smearscan_core::datasets::DatasetError;
use smearscan_core::detect::{DetectorBackend, HeuristicDetector};
use smearscan_core::fixtures::{fixture_paths, load_fixture, oracle_backends};

use crate::config::{BackendChoice, Config};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("oracle backends need a fixtures directory")]
    NoFixturesDir,
    #[error("no oracle fixture for frame {frame} (looked for {expected})")]
    MissingFixture { frame: String, expected: PathBuf },
    #[error("fixture for {frame}: {source}")]
    BadFixture { frame: String, source: DatasetError },
    #[error("{0}")]
    Unavailable(String),
}

pub type BackendPair = (Box<dyn DetectorBackend>, Box<dyn ClassifierBackend>);

#[derive(Debug, Clone, PartialEq)]
pub struct Backends {
    pub detector: BackendChoice,
    pub classifier: BackendChoice,
    pub fixtures: Option<PathBuf>,
    pub detector_command: Vec<String>,
    pub classifier_command: Vec<String>,
}

impl Backends {
    pub fn from_config(cfg: &Config) -> Self {
        Backends {
            detector: cfg.detector.backend,
            classifier: cfg.classifier.backend,
            fixtures: cfg.fixtures.path.clone(),
            detector_command: cfg.detector.command.clone(),
            classifier_command: cfg.classifier.command.clone(),
        }
    }

    /// Instantiate backends for one frame. Oracle backends replay the
    /// fixture named after the frame's file stem.
    pub fn for_frame(&self, frame_path: &Path) -> Result<BackendPair, BackendError> {
        let oracle = if self.detector == BackendChoice::Oracle || self.classifier == BackendChoice::Oracle {
            let dir = self.fixtures.as_deref().ok_or(BackendError::NoFixturesDir)?;
            let stem = frame_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let (xml, _) = fixture_paths(dir, &stem);
            if !xml.is_file() {
                return Err(BackendError::MissingFixture { frame: stem, expected: xml });
            }
            let (truth, labels) =
                load_fixture(dir, &stem).map_err(|source| BackendError::BadFixture { frame: stem.clone(), source })?;
            Some(oracle_backends(&truth, &labels))
        } else {
            None
        };
        let (oracle_det, oracle_cls) = match oracle {
            Some((d, c)) => (Some(d), Some(c)),
            None => (None, None),
        };
        let detector: Box<dyn DetectorBackend> = match self.detector {
            BackendChoice::Oracle => Box::new(oracle_det.expect("built above")),
            BackendChoice::Heuristic => Box::new(HeuristicDetector::default()),
            BackendChoice::External => external_detector(&self.detector_command)?,
        };
        let classifier: Box<dyn ClassifierBackend> = match self.classifier {
            BackendChoice::Oracle => Box::new(oracle_cls.expect("built above")),
            BackendChoice::Heuristic => Box::new(HeuristicClassifier::default()),
            BackendChoice::External => external_classifier(&self.classifier_command)?,
        };
        Ok((detector, classifier))
    }
}

#[cfg(feature = "external")]
fn external_detector(cmd: &[String]) -> Result<Box<dyn DetectorBackend>, BackendError> {
    let (program, args) = cmd.split_first().ok_or_else(|| BackendError::Unavailable("detector.command is empty".into()))?;
    Ok(Box::new(smearscan_core::detect::ExternalDetector { program: program.into(), args: args.to_vec() }))
}

#[cfg(feature = "external")]
fn external_classifier(cmd: &[String]) -> Result<Box<dyn ClassifierBackend>, BackendError> {
    let (program, args) = cmd.split_first().ok_or_else(|| BackendError::Unavailable("classifier.command is empty".into()))?;
    Ok(Box::new(smearscan_core::classify::ExternalClassifier { program: program.into(), args: args.to_vec() }))
}

#[cfg(not(feature = "external"))]
fn external_detector(_: &[String]) -> Result<Box<dyn DetectorBackend>, BackendError> {
    Err(BackendError::Unavailable("built without the `external` feature".into()))
}

#[cfg(not(feature = "external"))]
fn external_classifier(_: &[String]) -> Result<Box<dyn ClassifierBackend>, BackendError> {
    Err(BackendError::Unavailable("built without the `external` feature".into()))
}
