//! On-device persistence for screened slides and opportunistic upload to a
//! sync server.

pub mod backoff;
pub mod blob;
pub mod clock;
pub mod record;
pub mod server;
pub mod store;
pub mod sync;

pub use blob::BlobStore;
pub use clock::{Clock, ManualClock, SystemClock};
pub use record::{RecordDocument, SlideRecord, SyncState};
pub use store::{Store, StoreError};
pub use sync::{sync_once, HttpTransport, SyncError, SyncOptions, SyncReport, Transport};

/// Environment variable holding the bearer token for the sync endpoint.
pub const SYNC_TOKEN_ENV: &str = "MAISCOPE_SYNC_TOKEN";
