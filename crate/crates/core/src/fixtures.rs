//! Oracle fixtures: ground-truth annotations plus per-cell infection labels,
//! turned into detector/classifier backends that replay them exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::classify::{CellVerdict, OracleClassifier};
use crate::datasets::{parse_voc_xml, AnnotatedImage, CellLabels, DatasetError};
use crate::detect::{CellClass, NormBox, OracleDetector};

/// Build oracle backends for one slide.
///
/// The classifier is keyed by each RBC's box after the same normalise and
/// map-back round trip the pipeline applies, so lookups hit exactly.
pub fn oracle_backends(truth: &AnnotatedImage, labels: &CellLabels) -> (OracleDetector, OracleClassifier) {
    let (w, h) = (truth.width, truth.height);
    let detector = OracleDetector::from_annotations(truth.objects.iter().copied(), w, h);
    let mut classifier = OracleClassifier::new();
    for (i, (class, b)) in truth.objects.iter().enumerate() {
        if *class != CellClass::Rbc {
            continue;
        }
        let label = labels.cells.iter().find(|c| c.index == i);
        let verdict = match label {
            Some(l) => match l.p_infected {
                Some(p) => CellVerdict::from_infected(p.clamp(0.0, 1.0)),
                None if l.parasitized => CellVerdict::INFECTED,
                None => CellVerdict::UNINFECTED,
            },
            None => CellVerdict::UNINFECTED,
        };
        let mapped = NormBox::from_pixels(*b, w, h).to_pixels(w, h);
        classifier.insert_box(mapped, verdict);
    }
    (detector, classifier)
}

/// Fixture files for an image stem inside `dir`: `<stem>.xml` and optional `<stem>.labels.json`.
pub fn fixture_paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.xml")), dir.join(format!("{stem}.labels.json")))
}

pub fn load_fixture(dir: &Path, stem: &str) -> Result<(AnnotatedImage, CellLabels), DatasetError> {
    let (xml, labels) = fixture_paths(dir, stem);
    let truth = parse_voc_xml(&fs::read(&xml)?)?;
    let labels = if labels.exists() {
        serde_json::from_slice(&fs::read(&labels)?)
            .map_err(|e| DatasetError::SchemaError(format!("{}: {e}", labels.display())))?
    } else {
        CellLabels::default()
    };
    Ok((truth, labels))
}
