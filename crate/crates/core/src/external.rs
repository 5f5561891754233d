//! Subprocess plumbing shared by the external detector and classifier adapters.

use std::path::Path;
use std::process::Command;

use crate::imaging::{encode_image, ImageFormat, RasterImage};

/// Write `img` as a temporary PPM, run `program args.. <path>`, return stdout.
pub(crate) fn run_with_ppm(program: &Path, args: &[String], img: &RasterImage) -> Result<String, String> {
    let dir = std::env::temp_dir();
    let name = format!(
        "smearscan-{}-{}.ppm",
        std::process::id(),
        crate::hash::content_hash(img.pixels())
    );
    let path = dir.join(name);
    std::fs::write(&path, encode_image(img, ImageFormat::PpmP6)).map_err(|e| e.to_string())?;
    let output = Command::new(program).args(args).arg(&path).output();
    let _ = std::fs::remove_file(&path);
    let output = output.map_err(|e| format!("cannot run {}: {e}", program.display()))?;
    if !output.status.success() {
        return Err(format!(
            "{} exited with {}: {}",
            program.display(),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    String::from_utf8(output.stdout).map_err(|_| "backend wrote non-UTF-8 output".to_string())
}
