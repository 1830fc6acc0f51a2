//! Parallel drivers over images. Results match the sequential core
//! functions exactly for any worker count.

use osod_core::metrics::{
    assemble, group_by_image, match_image, EvalConfig, EvalReport, GroundTruthIndex, ImageMatches,
};
use osod_core::postprocess::{postprocess_image, PostprocessConfig};
use osod_core::taxonomy::{Dataset, Detection};
use rayon::prelude::*;

use crate::error::Result;

pub const THREADS_ENV: &str = "OSOD_THREADS";

/// Worker count: `OSOD_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` inside a pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

pub fn evaluate(dets: &[Detection], dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    for d in dets {
        dataset.categories.check_slot(d.slot)?;
    }
    let gt = GroundTruthIndex::new(dataset);
    let groups: Vec<(u64, Vec<usize>)> = group_by_image(dets).into_iter().collect();
    let matches: Vec<ImageMatches> = groups
        .par_iter()
        .map(|(id, idx)| match_image(gt.images.get(id), dets, idx, cfg))
        .collect();
    Ok(assemble(dets, &gt, matches, dataset.categories.known_ids(), cfg)?)
}

/// Per-image post-processing; output is grouped by ascending image id.
pub fn postprocess(dets: &[Detection], cfg: &PostprocessConfig) -> Vec<Detection> {
    let groups: Vec<(u64, Vec<usize>)> = group_by_image(dets).into_iter().collect();
    let per_image: Vec<Vec<Detection>> = groups
        .par_iter()
        .map(|(_, idx)| {
            let preds: Vec<Detection> = idx.iter().map(|&i| dets[i].clone()).collect();
            postprocess_image(&preds, cfg)
        })
        .collect();
    per_image.into_iter().flatten().collect()
}
