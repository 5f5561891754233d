//! Independent brute-force COCO evaluator used as a test oracle.
//!
//! Works on plain tuples, computes IoU in integer arithmetic and reads
//! interpolated precision straight off every prefix of the ranked list.

#![allow(dead_code)]

use smearscan_core::detect::CellClass;
use smearscan_core::imaging::PixelBox;
use smearscan_core::metrics::{PredictionDump, ScoredBox};
use smearscan_core::prng::Prng;

pub type GtImage = (String, Vec<(u8, [i32; 4])>);
pub type PredImage = (String, Vec<(u8, f64, [i32; 4])>);

fn area(b: [i32; 4]) -> i64 {
    (b[2] - b[0]) as i64 * (b[3] - b[1]) as i64
}

/// IoU as an exact fraction `(inter, union)`.
fn overlap(a: [i32; 4], b: [i32; 4]) -> (i64, i64) {
    let h = (a[2].min(b[2]) - a[0].max(b[0])).max(0) as i64;
    let w = (a[3].min(b[3]) - a[1].max(b[1])).max(0) as i64;
    let inter = h * w;
    (inter, area(a) + area(b) - inter)
}

fn in_range(range: usize, a: i64) -> bool {
    match range {
        0 => true,
        1 => a < 1024,
        2 => (1024..=9216).contains(&a),
        _ => a > 9216,
    }
}

fn class_ap(gt: &[GtImage], preds: &[PredImage], class: u8, thresh_pct: i64, range: usize, max_dets: usize) -> Option<f64> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0usize;
    for (id, objects) in gt {
        let gts: Vec<[i32; 4]> = objects.iter().filter(|o| o.0 == class && in_range(range, area(o.1))).map(|o| o.1).collect();
        n_gt += gts.len();
        let mine: Vec<(f64, [i32; 4])> = preds
            .iter()
            .filter(|p| &p.0 == id)
            .flat_map(|p| p.1.iter())
            .filter(|d| d.0 == class)
            .map(|d| (d.1, d.2))
            .collect();
        // Rank by score, earlier entries first on ties, then cap and filter.
        let mut order: Vec<usize> = (0..mine.len()).collect();
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && mine[order[j]].0 > mine[order[j - 1]].0 {
                order.swap(j, j - 1);
                j -= 1;
            }
        }
        order.truncate(max_dets);
        let mut used = vec![false; gts.len()];
        for i in order {
            let (score, b) = mine[i];
            if !in_range(range, area(b)) {
                continue;
            }
            let mut best: Option<(usize, (i64, i64))> = None;
            for (g, gb) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let (inter, uni) = overlap(b, *gb);
                // inter / uni >= thresh_pct / 100
                if inter * 100 < thresh_pct * uni {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, (bi, bu))) => inter * bu > bi * uni,
                };
                if better {
                    best = Some((g, (inter, uni)));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            ranked.push((score, best.is_some()));
        }
    }
    if n_gt == 0 {
        return None;
    }
    // Stable ranking across images: image order, then per-image rank order.
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && ranked[order[j]].0 > ranked[order[j - 1]].0 {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        tp += ranked[i].1 as usize;
        points.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let rr = r as f64 / 100.0;
        let best = points.iter().filter(|p| p.0 >= rr).map(|p| p.1).fold(0.0, f64::max);
        total += best;
    }
    Some(total / 101.0)
}

fn mean_ap(gt: &[GtImage], preds: &[PredImage], thresh_pct: i64, range: usize) -> Option<f64> {
    let vals: Vec<f64> = (0u8..3).filter_map(|c| class_ap(gt, preds, c, thresh_pct, range, 100)).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn averaged(gt: &[GtImage], preds: &[PredImage], range: usize) -> Option<f64> {
    let mut acc = Vec::new();
    for t in (50..=95).step_by(5) {
        acc.push(mean_ap(gt, preds, t, range)?);
    }
    Some(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// `[AP, AP50, AP75, AP_S, AP_M, AP_L]`.
pub fn brute_force_suite(gt: &[GtImage], preds: &[PredImage]) -> [Option<f64>; 6] {
    [
        averaged(gt, preds, 0),
        mean_ap(gt, preds, 50, 0),
        mean_ap(gt, preds, 75, 0),
        averaged(gt, preds, 1),
        averaged(gt, preds, 2),
        averaged(gt, preds, 3),
    ]
}

fn random_box(rng: &mut Prng) -> [i32; 4] {
    // Side lengths chosen to populate all three area buckets.
    let side = |rng: &mut Prng| match rng.below(3) {
        0 => 4 + rng.below(28) as i32,
        1 => 32 + rng.below(64) as i32,
        _ => 97 + rng.below(60) as i32,
    };
    let (h, w) = (side(rng), side(rng));
    let t = rng.below(300) as i32;
    let l = rng.below(300) as i32;
    [t, l, t + h, l + w]
}

fn jitter(rng: &mut Prng, b: [i32; 4]) -> [i32; 4] {
    let span = ((b[2] - b[0]).min(b[3] - b[1]) / 4).max(1) as u64;
    let mut d = || rng.below(2 * span + 1) as i32 - span as i32;
    let t = b[0] + d();
    let l = b[1] + d();
    let bt = (b[2] + d()).max(t + 1);
    let r = (b[3] + d()).max(l + 1);
    [t, l, bt, r]
}

/// Random micro-dataset: up to 5 images with up to 10 boxes each.
pub fn random_micro_dataset(seed: u64) -> (Vec<GtImage>, Vec<PredImage>) {
    let mut rng = Prng::new(seed);
    let n_images = 1 + rng.below(5) as usize;
    let mut gt = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n_images {
        let id = format!("img{i}");
        let objects: Vec<(u8, [i32; 4])> =
            (0..rng.below(11)).map(|_| (rng.below(3) as u8, random_box(&mut rng))).collect();
        let mut dets = Vec::new();
        for &(c, b) in &objects {
            if rng.below(4) == 0 {
                continue;
            }
            let class = if rng.below(8) == 0 { rng.below(3) as u8 } else { c };
            // Coarse scores so ties occur.
            dets.push((class, rng.below(6) as f64 / 5.0, jitter(&mut rng, b)));
        }
        while dets.len() < 10 && rng.below(3) == 0 {
            dets.push((rng.below(3) as u8, rng.below(6) as f64 / 5.0, random_box(&mut rng)));
        }
        dets.truncate(10);
        gt.push((id.clone(), objects));
        if rng.below(6) != 0 {
            preds.push((id, dets));
        }
    }
    (gt, preds)
}

pub fn to_dump(gt: &[GtImage], preds: &[PredImage]) -> PredictionDump {
    let class = |c: u8| CellClass::from_code(c).unwrap();
    let mut dump = PredictionDump::default();
    for (id, objects) in gt {
        dump.ground_truth.push((id.clone(), objects.iter().map(|&(c, b)| (class(c), PixelBox::from(b))).collect()));
    }
    for (id, dets) in preds {
        dump.add_predictions(
            id.clone(),
            dets.iter().map(|&(c, s, b)| ScoredBox { class: class(c), score: s, bbox: PixelBox::from(b) }),
        );
    }
    dump
}
