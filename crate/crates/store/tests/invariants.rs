mod common;

use std::time::Duration;

use proptest::prelude::*;
use smearscan_store::backoff::BackoffPolicy;
use smearscan_store::store::JOURNAL_FILE;
use smearscan_store::SyncState;

use common::{clock, open_store, result, slide};

fn failed(attempts: u32) -> SyncState {
    SyncState::Failed { attempts, last_error: "x".into(), retry_at: None, needs_review: false }
}

proptest! {
    #[test]
    fn backoff_is_capped_and_within_jitter(attempts in 1u32..80, key in "[a-z0-9-]{1,24}", base in 1u64..20) {
        let p = BackoffPolicy { base: Duration::from_secs(base), ..Default::default() };
        let d = p.delay(attempts, &key).as_secs_f64();
        let n = p.nominal(attempts).as_secs_f64();
        prop_assert!(d <= p.cap.as_secs_f64());
        prop_assert!(d >= n * 0.8 - 1e-9 && d <= n * 1.2 + 1e-9);
        prop_assert!(p.nominal(attempts + 1) >= p.nominal(attempts));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reopen_restores_every_state(ops in proptest::collection::vec((0usize..4, 0u8..4), 1..24)) {
        let dir = tempfile::tempdir().unwrap();
        let expected = {
            let store = open_store(dir.path(), clock());
            let mut ids = Vec::new();
            for (i, (pick, op)) in ops.iter().enumerate() {
                if ids.len() < 4 && (ids.is_empty() || *op == 0) {
                    ids.push(store.save_record(&slide(i as u32), &[], &result(1, 3)).unwrap().record_id().to_string());
                    continue;
                }
                let id = &ids[pick % ids.len()];
                let current = store.get(id).unwrap().sync_state;
                let next = match (&current, op) {
                    (SyncState::Uploading, 1) => SyncState::Synced,
                    (SyncState::Uploading, _) => failed(current.attempts() + 1),
                    _ => SyncState::Uploading,
                };
                let allowed = current.can_transition_to(&next);
                prop_assert_eq!(store.transition(id, next).is_ok(), allowed);
            }
            // Settle in-flight uploads so reopen recovery does not rewrite them.
            for r in store.records() {
                if r.sync_state == SyncState::Uploading {
                    store.transition(r.record_id(), SyncState::Synced).unwrap();
                }
            }
            store.records()
        };
        let reopened = open_store(dir.path(), clock());
        prop_assert_eq!(reopened.records(), expected);
    }

    #[test]
    fn any_torn_tail_recovers_a_prefix(saves in 1usize..5, cut in 1usize..200) {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = open_store(dir.path(), clock());
            for i in 0..saves {
                store.save_record(&slide(i as u32), &[], &result(0, 1)).unwrap();
            }
        }
        let path = dir.path().join(JOURNAL_FILE);
        let bytes = std::fs::read(&path).unwrap();
        let keep = bytes.len().saturating_sub(cut.min(bytes.len() - 1));
        std::fs::write(&path, &bytes[..keep]).unwrap();
        let complete = bytes[..keep].iter().filter(|&&b| b == b'\n').count();
        let store = open_store(dir.path(), clock());
        prop_assert_eq!(store.records().len(), complete);
        store.save_record(&slide(99), &[], &result(0, 1)).unwrap();
        prop_assert_eq!(open_store(dir.path(), clock()).records().len(), complete + 1);
    }
}
