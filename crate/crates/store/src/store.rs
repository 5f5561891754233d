use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use smearscan_core::imaging::{encode_image, ImageFormat, RasterImage};
use smearscan_core::pipeline::{ScreeningOutput, ScreeningResult};

use crate::blob::BlobStore;
use crate::clock::{format_timestamp, Clock, SystemClock};
use crate::record::{RecordDocument, SlideRecord, SyncState};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const BLOB_DIR: &str = "blobs";
const DEVICE_ID_FILE: &str = "device_id";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage is full")]
    StorageFull,
    #[error("i/o failure: {0}")]
    IoFailure(io::Error),
    #[error("journal line {line} is corrupt: {message}")]
    CorruptJournal { line: usize, message: String },
    #[error("no record with id {0}")]
    UnknownRecord(String),
    #[error("illegal sync transition {from} -> {to}")]
    InvalidTransition { from: &'static str, to: &'static str },
    #[error("record references missing blob {0}")]
    MissingBlob(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StoreError::StorageFull
        } else {
            StoreError::IoFailure(e)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StateCounts {
    pub pending: usize,
    pub uploading: usize,
    pub synced: usize,
    pub failed: usize,
}

struct Inner {
    records: HashMap<String, SlideRecord>,
    journal: File,
}

/// Slide store: content-addressed blobs plus an append-only journal of
/// record snapshots, where the last line for a record id wins.
pub struct Store {
    root: PathBuf,
    blobs: BlobStore,
    device_id: String,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).field("device_id", &self.device_id).finish()
    }
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with_clock(root, Arc::new(SystemClock))
    }

    /// Open or create a store. A torn final journal line is discarded, and
    /// records left in `Uploading` by an interrupted sync become `Failed`.
    pub fn open_with_clock(root: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let blobs = BlobStore::open(root.join(BLOB_DIR))?;
        let device_id = load_device_id(&root)?;
        let path = root.join(JOURNAL_FILE);
        let mut journal = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        let records = replay(&mut journal)?;
        let store = Store {
            root,
            blobs,
            device_id,
            clock,
            inner: Mutex::new(Inner { records, journal }),
        };
        let interrupted: Vec<String> = store
            .records()
            .into_iter()
            .filter(|r| r.sync_state == SyncState::Uploading)
            .map(|r| r.doc.record_id)
            .collect();
        for id in interrupted {
            store.transition(
                &id,
                SyncState::Failed {
                    attempts: 1,
                    last_error: "upload interrupted".into(),
                    retry_at: None,
                    needs_review: false,
                },
            )?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn now(&self) -> String {
        format_timestamp(self.clock.now())
    }

    /// Save a slide with its crops and result. Everything is PNG-encoded and
    /// flushed before the journal line is written.
    pub fn save_record(
        &self,
        slide: &RasterImage,
        crops: &[RasterImage],
        result: &ScreeningResult,
    ) -> Result<SlideRecord, StoreError> {
        let crop_pngs: Vec<Vec<u8>> = crops.iter().map(|c| encode_image(c, ImageFormat::Png)).collect();
        self.save_encoded(&encode_image(slide, ImageFormat::Png), &crop_pngs, None, result)
    }

    /// Save a full pipeline output, including the overlay.
    pub fn save_screening(&self, slide: &RasterImage, output: &ScreeningOutput) -> Result<SlideRecord, StoreError> {
        let crop_pngs: Vec<Vec<u8>> = output.crops.iter().map(|c| c.png.clone()).collect();
        self.save_encoded(
            &encode_image(slide, ImageFormat::Png),
            &crop_pngs,
            Some(&output.overlay_png),
            &output.result,
        )
    }

    pub fn save_encoded(
        &self,
        slide_png: &[u8],
        crop_pngs: &[Vec<u8>],
        overlay_png: Option<&[u8]>,
        result: &ScreeningResult,
    ) -> Result<SlideRecord, StoreError> {
        let slide_blob = self.blobs.put(slide_png)?;
        let crop_blobs = crop_pngs.iter().map(|c| self.blobs.put(c)).collect::<Result<Vec<_>, _>>()?;
        let overlay_blob = overlay_png.map(|o| self.blobs.put(o)).transpose()?;
        let record = SlideRecord {
            doc: RecordDocument {
                record_id: uuid::Uuid::new_v4().to_string(),
                device_id: self.device_id.clone(),
                created_at: self.now(),
                slide_blob,
                crop_blobs,
                overlay_blob,
                result: result.clone(),
                app_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            sync_state: SyncState::Pending,
        };
        let mut inner = self.inner.lock().unwrap();
        append(&mut inner.journal, &record)?;
        inner.records.insert(record.doc.record_id.clone(), record.clone());
        Ok(record)
    }

    pub fn get(&self, record_id: &str) -> Option<SlideRecord> {
        self.inner.lock().unwrap().records.get(record_id).cloned()
    }

    pub fn blob(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        self.blobs.get(hash).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::InvalidInput => StoreError::MissingBlob(hash.to_string()),
            _ => e.into(),
        })
    }

    /// All records, oldest first.
    pub fn records(&self) -> Vec<SlideRecord> {
        let inner = self.inner.lock().unwrap();
        let mut all: Vec<SlideRecord> = inner.records.values().cloned().collect();
        all.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        all
    }

    /// Records in `Pending` or `Failed`, oldest first.
    pub fn list_pending(&self) -> Vec<SlideRecord> {
        self.records()
            .into_iter()
            .filter(|r| matches!(r.sync_state, SyncState::Pending | SyncState::Failed { .. }))
            .collect()
    }

    pub fn records_in_state(&self, state: &str) -> Vec<SlideRecord> {
        self.records().into_iter().filter(|r| r.sync_state.name() == state).collect()
    }

    pub fn counts(&self) -> StateCounts {
        let mut c = StateCounts::default();
        for r in self.inner.lock().unwrap().records.values() {
            match r.sync_state {
                SyncState::Pending => c.pending += 1,
                SyncState::Uploading => c.uploading += 1,
                SyncState::Synced => c.synced += 1,
                SyncState::Failed { .. } => c.failed += 1,
            }
        }
        c
    }

    /// Move a record along the sync state machine, journaling the new snapshot.
    pub fn transition(&self, record_id: &str, next: SyncState) -> Result<SlideRecord, StoreError> {
        let mut inner = self.inner.lock().unwrap();
        let current = inner
            .records
            .get(record_id)
            .ok_or_else(|| StoreError::UnknownRecord(record_id.to_string()))?;
        if !current.sync_state.can_transition_to(&next) {
            return Err(StoreError::InvalidTransition { from: current.sync_state.name(), to: next.name() });
        }
        let mut updated = current.clone();
        updated.sync_state = next;
        append(&mut inner.journal, &updated)?;
        inner.records.insert(record_id.to_string(), updated.clone());
        Ok(updated)
    }
}

fn append(journal: &mut File, record: &SlideRecord) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(record).expect("records always serialize");
    line.push(b'\n');
    journal.write_all(&line)?;
    journal.sync_data()?;
    Ok(())
}

fn replay(journal: &mut File) -> Result<HashMap<String, SlideRecord>, StoreError> {
    let mut bytes = Vec::new();
    journal.seek(SeekFrom::Start(0))?;
    journal.read_to_end(&mut bytes)?;
    let mut records = HashMap::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let Some(len) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // Torn final append: drop it so the next line starts cleanly.
            journal.set_len(offset as u64)?;
            journal.sync_data()?;
            break;
        };
        let line = &bytes[offset..offset + len];
        offset += len + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: SlideRecord = serde_json::from_slice(line)
            .map_err(|e| StoreError::CorruptJournal { line: line_no, message: e.to_string() })?;
        records.insert(record.doc.record_id.clone(), record);
    }
    Ok(records)
}

fn load_device_id(root: &Path) -> Result<String, StoreError> {
    let path = root.join(DEVICE_ID_FILE);
    match fs::read_to_string(&path) {
        Ok(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
        _ => {
            let id = uuid::Uuid::new_v4().to_string();
            crate::blob::write_atomic(&path, id.as_bytes())?;
            Ok(id)
        }
    }
}
