#![allow(dead_code)]

use std::sync::Arc;

use smearscan_core::imaging::RasterImage;
use smearscan_core::pipeline::ScreeningResult;
use smearscan_store::{ManualClock, Store};

pub fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::starting_at("2024-03-01T08:00:00Z"))
}

pub fn open_store(dir: &std::path::Path, clock: Arc<ManualClock>) -> Store {
    Store::open_with_clock(dir, clock).unwrap()
}

/// A small slide whose pixels depend on `seed`.
pub fn slide(seed: u32) -> RasterImage {
    let mut px = Vec::with_capacity(8 * 8 * 3);
    for i in 0..64u32 {
        let v = seed.wrapping_mul(2654435761).wrapping_add(i * 97);
        px.extend_from_slice(&[(v >> 3) as u8, (v >> 11) as u8, (v >> 19) as u8]);
    }
    RasterImage::from_raw(8, 8, px).unwrap()
}

pub fn result(infected: usize, uninfected: usize) -> ScreeningResult {
    let total = infected + uninfected;
    ScreeningResult {
        cells: Vec::new(),
        infected_count: infected,
        uninfected_count: uninfected,
        parasitemia_pct: if total == 0 { 0.0 } else { 100.0 * infected as f64 / total as f64 },
        wbc_count: 0,
        platelet_count: 0,
        overlay_ref: String::new(),
    }
}

pub mod fault_harness;
