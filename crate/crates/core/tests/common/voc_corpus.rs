//! Checks the VOC fixture corpus against hand-computed expectations.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use smearscan_core::datasets::{parse_voc_xml, DatasetError};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/voc")
}

fn error_kind(e: &DatasetError) -> &'static str {
    match e {
        DatasetError::Xml(_) => "Xml",
        DatasetError::SchemaError(_) => "SchemaError",
        DatasetError::UnknownClassName(_) => "UnknownClassName",
        DatasetError::InvertedBox(_) => "InvertedBox",
        _ => "Other",
    }
}

/// Returns one `(file, mismatch)` entry per file that disagrees.
pub fn check_corpus(dir: &Path) -> (usize, Vec<(String, String)>) {
    let expected: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("expected.json")).unwrap()).unwrap();
    let expected = expected.as_object().unwrap();
    let mut failures = Vec::new();
    for (file, want) in expected {
        let got = parse_voc_xml(&std::fs::read(dir.join(file)).unwrap());
        let problem = match (got, want.get("error").and_then(|e| e.as_str())) {
            (Err(e), Some(kind)) if error_kind(&e) == kind => None,
            (Err(e), _) => Some(format!("unexpected error {e:?}")),
            (Ok(_), Some(kind)) => Some(format!("parsed, expected {kind}")),
            (Ok(ann), None) => {
                let size = serde_json::json!([ann.width, ann.height]);
                let objects: Vec<serde_json::Value> = ann
                    .objects
                    .iter()
                    .map(|(c, b)| serde_json::json!([c.name(), [b.top, b.left, b.bottom, b.right]]))
                    .collect();
                let got = serde_json::json!({"size": size, "objects": objects});
                (&got != want).then(|| format!("got {got}, expected {want}"))
            }
        };
        if let Some(p) = problem {
            failures.push((file.clone(), p));
        }
    }
    (expected.len(), failures)
}
