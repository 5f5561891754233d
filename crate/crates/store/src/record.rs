use serde::{Deserialize, Serialize};
use smearscan_core::hash::content_hash;
use smearscan_core::pipeline::ScreeningResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SyncState {
    Pending,
    Uploading,
    Synced,
    Failed {
        attempts: u32,
        last_error: String,
        /// Earliest time the next attempt may start (RFC 3339).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retry_at: Option<String>,
        /// Set when the server holds different content under the same id.
        #[serde(default)]
        needs_review: bool,
    },
}

impl SyncState {
    pub fn name(&self) -> &'static str {
        match self {
            SyncState::Pending => "pending",
            SyncState::Uploading => "uploading",
            SyncState::Synced => "synced",
            SyncState::Failed { .. } => "failed",
        }
    }

    /// Pending -> Uploading -> {Synced, Failed}; Failed -> Uploading.
    pub fn can_transition_to(&self, next: &SyncState) -> bool {
        matches!(
            (self, next),
            (SyncState::Pending, SyncState::Uploading)
                | (SyncState::Uploading, SyncState::Synced)
                | (SyncState::Uploading, SyncState::Failed { .. })
                | (SyncState::Failed { .. }, SyncState::Uploading)
        )
    }

    pub fn attempts(&self) -> u32 {
        match self {
            SyncState::Failed { attempts, .. } => *attempts,
            _ => 0,
        }
    }

    pub fn needs_review(&self) -> bool {
        matches!(self, SyncState::Failed { needs_review: true, .. })
    }
}

/// The record body sent to the sync server. Field order is fixed so the
/// serialized bytes, and therefore their hash, are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordDocument {
    pub record_id: String,
    pub device_id: String,
    pub created_at: String,
    pub slide_blob: String,
    pub crop_blobs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay_blob: Option<String>,
    pub result: ScreeningResult,
    pub app_version: String,
}

impl RecordDocument {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("record documents always serialize")
    }

    pub fn blob_refs(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.slide_blob.as_str())
            .chain(self.crop_blobs.iter().map(String::as_str))
            .chain(self.overlay_blob.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    #[serde(flatten)]
    pub doc: RecordDocument,
    pub sync_state: SyncState,
}

impl SlideRecord {
    pub fn record_id(&self) -> &str {
        &self.doc.record_id
    }

    pub fn created_at(&self) -> &str {
        &self.doc.created_at
    }

    pub fn document_bytes(&self) -> Vec<u8> {
        self.doc.to_bytes()
    }

    pub fn document_hash(&self) -> String {
        content_hash(&self.document_bytes())
    }

    /// Sort key: creation time, then record id.
    pub fn order_key(&self) -> (&str, &str) {
        (&self.doc.created_at, &self.doc.record_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed(n: u32) -> SyncState {
        SyncState::Failed { attempts: n, last_error: "x".into(), retry_at: None, needs_review: false }
    }

    #[test]
    fn transitions() {
        use SyncState::*;
        let all = [Pending, Uploading, Synced, failed(1)];
        let allowed: Vec<(usize, usize)> = (0..4)
            .flat_map(|a| (0..4).map(move |b| (a, b)))
            .filter(|&(a, b)| all[a].can_transition_to(&all[b]))
            .collect();
        assert_eq!(allowed, vec![(0, 1), (1, 2), (1, 3), (3, 1)]);
    }

    #[test]
    fn state_json_shape() {
        assert_eq!(serde_json::to_string(&SyncState::Pending).unwrap(), r#"{"state":"pending"}"#);
        let s = serde_json::to_string(&failed(2)).unwrap();
        assert_eq!(s, r#"{"state":"failed","attempts":2,"last_error":"x","needs_review":false}"#);
        assert_eq!(serde_json::from_str::<SyncState>(&s).unwrap(), failed(2));
    }
}
