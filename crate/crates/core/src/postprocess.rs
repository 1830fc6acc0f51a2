//! Inference-time filtering: score threshold, NMS (per known class, pooled
//! for unknown) and a known-first top-N cap per image.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::taxonomy::{ClassSlot, Detection};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.05;
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_DETECTIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    pub nms_threshold: f64,
    pub max_detections: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            nms_threshold: DEFAULT_NMS_THRESHOLD,
            max_detections: DEFAULT_MAX_DETECTIONS,
        }
    }
}

/// Keeps predictions with `score >= threshold`.
pub fn score_filter(preds: &[Detection], threshold: f64) -> Vec<Detection> {
    preds.iter().filter(|d| d.score >= threshold).cloned().collect()
}

/// Indices ordered by descending score, ties by position.
fn ranked(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order
}

/// Greedy NMS over predictions of one class. Returns indices of kept
/// predictions in descending score order. A box is suppressed when its IoU
/// with an already kept box is strictly greater than `iou_threshold`.
pub fn nms_indices(preds: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in ranked(preds) {
        if keep.iter().all(|&k| preds[k].bbox.iou(&preds[i].bbox) <= iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(preds: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    debug_assert!(
        preds.windows(2).all(|w| w[0].slot == w[1].slot),
        "nms expects a single class"
    );
    nms_indices(preds, iou_threshold)
        .into_iter()
        .map(|i| preds[i].clone())
        .collect()
}

/// Fills up to `cap` slots with known predictions by descending score, then
/// tops up with the best unknown predictions.
pub fn select_top(known: &[Detection], unknown: &[Detection], cap: usize) -> Vec<Detection> {
    let mut out: Vec<Detection> = ranked(known).into_iter().take(cap).map(|i| known[i].clone()).collect();
    let room = cap - out.len();
    out.extend(ranked(unknown).into_iter().take(room).map(|i| unknown[i].clone()));
    out
}

/// Full pipeline for the predictions of one image.
pub fn postprocess_image(preds: &[Detection], cfg: &PostprocessConfig) -> Vec<Detection> {
    let kept = score_filter(preds, cfg.score_threshold);
    let mut by_slot: BTreeMap<ClassSlot, Vec<usize>> = BTreeMap::new();
    for (i, d) in kept.iter().enumerate() {
        by_slot.entry(d.slot).or_default().push(i);
    }
    let mut known_idx = Vec::new();
    let mut unknown_idx = Vec::new();
    for (slot, members) in by_slot {
        let group: Vec<Detection> = members.iter().map(|&i| kept[i].clone()).collect();
        let survivors = nms_indices(&group, cfg.nms_threshold).into_iter().map(|j| members[j]);
        match slot {
            ClassSlot::Known(_) => known_idx.extend(survivors),
            ClassSlot::Unknown => unknown_idx.extend(survivors),
        }
    }
    // Restore input order so ties in select_top resolve by original position.
    known_idx.sort_unstable();
    unknown_idx.sort_unstable();
    let known: Vec<Detection> = known_idx.iter().map(|&i| kept[i].clone()).collect();
    let unknown: Vec<Detection> = unknown_idx.iter().map(|&i| kept[i].clone()).collect();
    select_top(&known, &unknown, cfg.max_detections)
}

/// Runs [`postprocess_image`] per image. Output is grouped by ascending image
/// id.
pub fn postprocess(preds: &[Detection], cfg: &PostprocessConfig) -> Vec<Detection> {
    let mut by_image: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
    for d in preds {
        by_image.entry(d.image_id).or_default().push(d.clone());
    }
    by_image.values().flat_map(|v| postprocess_image(v, cfg)).collect()
}
