//! Brute-force reference implementations used by `selfcheck` and the test
//! suites. They favour obviousness over speed.

use osod_core::metrics::ApVariant;
use osod_core::BBox;

/// IoU by counting unit cells of the integer grid covered by each box.
/// Coordinates must be non-negative integers.
pub fn raster_iou(a: &BBox, b: &BBox) -> f64 {
    let cells = |bx: &BBox| (bx.x_min as i64, bx.y_min as i64, bx.x_max as i64, bx.y_max as i64);
    let (ax0, ay0, ax1, ay1) = cells(a);
    let (bx0, by0, bx1, by1) = cells(b);
    let hi_x = ax1.max(bx1);
    let hi_y = ay1.max(by1);
    let (mut inter, mut union) = (0u64, 0u64);
    for x in 0..hi_x {
        for y in 0..hi_y {
            let in_a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
            let in_b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
            inter += (in_a && in_b) as u64;
            union += (in_a || in_b) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Greedy TP flags for detections already in descending score order. Each
/// detection takes the unused ground-truth box with the highest IoU (lowest
/// index on ties).
pub fn greedy_tp(dets: &[BBox], gt: &[BBox], thr: f64) -> Vec<bool> {
    let mut used = vec![false; gt.len()];
    let mut out = Vec::with_capacity(dets.len());
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if used[j] {
                continue;
            }
            let v = d.iou(g);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, v)) if v >= thr => {
                used[j] = true;
                out.push(true);
            }
            _ => out.push(false),
        }
    }
    out
}

/// AP in percent by sweeping every distinct score threshold. `None` when
/// there is no ground truth.
pub fn sweep_ap(scores: &[f64], is_tp: &[bool], num_gt: usize, variant: ApVariant) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    // (tp count, recall, precision) at each threshold.
    let points: Vec<(usize, f64, f64)> = thresholds
        .iter()
        .map(|&s| {
            let kept = scores.iter().filter(|&&x| x >= s).count();
            let tp = scores.iter().zip(is_tp).filter(|(&x, &t)| x >= s && t).count();
            (tp, tp as f64 / num_gt as f64, tp as f64 / kept as f64)
        })
        .collect();
    let best_at = |level: f64| {
        points
            .iter()
            .filter(|p| p.1 >= level)
            .map(|p| p.2)
            .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))))
    };
    match variant {
        ApVariant::Voc07 => {
            let mut total = 0.0;
            for t in 0..=10 {
                total += best_at(t as f64 / 10.0).unwrap_or(0.0);
            }
            Some(100.0 * total / 11.0)
        }
        ApVariant::Area => {
            let mut total = 0.0;
            let mut prev_tp = 0;
            for p in &points {
                for _ in prev_tp..p.0 {
                    total += best_at(p.1).unwrap_or(0.0);
                }
                prev_tp = p.0;
            }
            Some(100.0 * total / num_gt as f64)
        }
    }
}

/// Softmax without any library help.
pub fn naive_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
