//! Device configuration.
//!
//! The file is TOML. Every key may be written as a table entry or a dotted
//! key, so these are equivalent:
//!
//! ```toml
//! [detector]
//! backend = "heuristic"
//! ```
//!
//! ```toml
//! detector.backend = "heuristic"
//! ```
//!
//! Recognised keys: `store.path`, `detector.backend`, `detector.score_floor`,
//! `detector.nms_iou`, `detector.command`, `classifier.backend`,
//! `classifier.command`, `pipeline.malaria_threshold`, `fixtures.path`,
//! `sync.endpoint`, `camera.kind`, `camera.path`, `server.port`,
//! `server.static_dir`. Unknown keys are rejected. Command-line flags
//! override file values.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use smearscan_core::pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    Oracle,
    Heuristic,
    External,
}

impl FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(BackendChoice::Oracle),
            "heuristic" => Ok(BackendChoice::Heuristic),
            "external" => Ok(BackendChoice::External),
            other => Err(format!("unknown backend {other:?} (oracle, heuristic, external)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraKind {
    Directory,
    File,
    Live,
}

impl FromStr for CameraKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "directory" | "directory-replay" => Ok(CameraKind::Directory),
            "file" | "single-file" => Ok(CameraKind::File),
            "live" | "live-device" => Ok(CameraKind::Live),
            other => Err(format!("unknown camera kind {other:?} (directory, file, live)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub path: PathBuf,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection { path: PathBuf::from("store") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub backend: BackendChoice,
    pub score_floor: f64,
    pub nms_iou: f64,
    /// Program run by the external backend, with arguments.
    pub command: Vec<String>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        DetectorSection { backend: BackendChoice::Heuristic, score_floor: p.score_floor, nms_iou: p.nms_iou, command: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub backend: BackendChoice,
    pub command: Vec<String>,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection { backend: BackendChoice::Heuristic, command: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub malaria_threshold: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection { malaria_threshold: PipelineConfig::default().malaria_threshold }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixturesSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncSection {
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub kind: CameraKind,
    pub path: PathBuf,
}

impl Default for CameraSection {
    fn default() -> Self {
        CameraSection { kind: CameraKind::Directory, path: PathBuf::from("frames") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection { port: 8080, static_dir: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: StoreSection,
    pub detector: DetectorSection,
    pub classifier: ClassifierSection,
    pub pipeline: PipelineSection,
    pub fixtures: FixturesSection,
    pub sync: SyncSection,
    pub camera: CameraSection,
    pub server: ServerSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            malaria_threshold: self.pipeline.malaria_threshold,
            score_floor: self.detector.score_floor,
            nms_iou: self.detector.nms_iou,
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline_config().validate().map_err(|e| ConfigError::BadConfig(e.to_string()))?;
        let needs_fixtures = self.detector.backend == BackendChoice::Oracle || self.classifier.backend == BackendChoice::Oracle;
        if needs_fixtures && self.fixtures.path.is_none() {
            return Err(ConfigError::BadConfig("oracle backends need fixtures.path".into()));
        }
        if self.detector.backend == BackendChoice::External && self.detector.command.is_empty() {
            return Err(ConfigError::BadConfig("external detector needs detector.command".into()));
        }
        if self.classifier.backend == BackendChoice::External && self.classifier.command.is_empty() {
            return Err(ConfigError::BadConfig("external classifier needs classifier.command".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.pipeline.malaria_threshold, 0.8);
        assert_eq!(cfg.detector.score_floor, 0.25);
        assert_eq!(cfg.detector.nms_iou, 0.45);
    }

    #[test]
    fn dotted_and_table_forms_agree() {
        let dotted = Config::parse("store.path = \"/data\"\nserver.port = 9000\ncamera.kind = \"file\"\n").unwrap();
        let table = Config::parse("[store]\npath = \"/data\"\n[server]\nport = 9000\n[camera]\nkind = \"file\"\n").unwrap();
        assert_eq!(dotted, table);
        assert_eq!(dotted.store.path, PathBuf::from("/data"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::parse("store.pth = \"x\"").is_err());
        assert!(Config::parse("detector.backend = \"magic\"").is_err());
        assert!(Config::parse("pipeline.malaria_threshold = 1.5").is_err());
        assert!(Config::parse("detector.backend = \"oracle\"").is_err());
        assert!(Config::parse("detector.backend = \"oracle\"\nfixtures.path = \"f\"").is_ok());
    }
}
