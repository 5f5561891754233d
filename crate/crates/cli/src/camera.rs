//! Virtual camera: replays frames from disk in place of a microscope camera.

use std::path::{Path, PathBuf};

use thiserror::Error;

use smearscan_core::imaging::{decode_any, ImagingError, RasterImage};

use crate::config::CameraKind;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("no more frames")]
    EndOfFrames,
    #[error("camera source {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("frame {path}: {source}")]
    Decode { path: PathBuf, source: ImagingError },
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone)]
pub struct Frame {
    /// File name of the frame, used to find oracle fixtures.
    pub name: String,
    pub path: PathBuf,
    pub image: RasterImage,
}

const FRAME_EXTENSIONS: [&str; 3] = ["ppm", "pnm", "png"];

#[derive(Debug, Clone)]
pub struct CameraSource {
    kind: CameraKind,
    frames: Vec<PathBuf>,
    cursor: usize,
}

impl CameraSource {
    pub fn open(kind: CameraKind, path: &Path) -> Result<Self, CameraError> {
        let io = |source| CameraError::Io { path: path.to_path_buf(), source };
        let frames = match kind {
            CameraKind::Directory => {
                let mut frames: Vec<PathBuf> = std::fs::read_dir(path)
                    .map_err(io)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        p.is_file()
                            && p.extension()
                                .and_then(|e| e.to_str())
                                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
                    })
                    .collect();
                frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
                frames
            }
            CameraKind::File => {
                std::fs::metadata(path).map_err(io)?;
                vec![path.to_path_buf()]
            }
            CameraKind::Live => {
                return Err(CameraError::Unsupported("live camera capture is not available in this build".into()))
            }
        };
        Ok(CameraSource { kind, frames, cursor: 0 })
    }

    pub fn kind(&self) -> CameraKind {
        self.kind
    }

    /// Frames left before `EndOfFrames`; `None` for a source that never runs out.
    pub fn remaining(&self) -> Option<usize> {
        match self.kind {
            CameraKind::File => None,
            _ => Some(self.frames.len() - self.cursor),
        }
    }

    fn current_path(&self) -> Result<&Path, CameraError> {
        let i = if self.kind == CameraKind::File { 0 } else { self.cursor };
        self.frames.get(i).map(PathBuf::as_path).ok_or(CameraError::EndOfFrames)
    }

    /// The frame currently on the stage, without consuming it.
    pub fn peek(&self) -> Result<Frame, CameraError> {
        load_frame(self.current_path()?)
    }

    /// Consume the current frame.
    pub fn next_frame(&mut self) -> Result<Frame, CameraError> {
        let frame = self.peek()?;
        if self.kind != CameraKind::File {
            self.cursor += 1;
        }
        Ok(frame)
    }
}

pub fn load_frame(path: &Path) -> Result<Frame, CameraError> {
    let bytes = std::fs::read(path).map_err(|source| CameraError::Io { path: path.to_path_buf(), source })?;
    let image = decode_any(&bytes).map_err(|source| CameraError::Decode { path: path.to_path_buf(), source })?;
    Ok(Frame {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        path: path.to_path_buf(),
        image,
    })
}
