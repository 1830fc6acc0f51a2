//! Open-set detection metrics.
//!
//! All sweeps use greedy, score-ordered matching with one-to-one ground-truth
//! consumption per class. A known-class detection that misses every known
//! box of its class but lands on an unknown object is a *wilderness* false
//! positive (`FP_U`); those feed Wilderness Impact and A-OSE.
//!
//! Matching is independent per image, so [`match_image`] can run on any
//! number of threads. [`assemble`] merges the per-image rows by sorting on
//! `(score desc, detection index asc)`, which makes the result independent
//! of evaluation order.
//!
//! Crowd-flagged ground truth never enters a recall denominator. A
//! detection that can only be explained by a crowd box of its own class is
//! ignored by the PR sweep; crowd unknown boxes still produce `FP_U` for
//! known-class detections.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::BBox;
use crate::taxonomy::{ClassSlot, Dataset, Detection, TaxonomyError};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WI_IOU_THRESHOLD: f64 = 0.8;
pub const DEFAULT_WI_RECALL_LEVEL: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no known-class ground truth in the dataset")]
    NoKnownGroundTruth,
    #[error("no unknown ground truth in the dataset")]
    NoUnknownGroundTruth,
    #[error("no class reaches recall {recall_level}: {diagnostics}")]
    WiUndefined { recall_level: f64, diagnostics: String },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("embedding statistics need at least two classes")]
    SingleClass,
    #[error("embedding records are empty")]
    NoEmbeddings,
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApVariant {
    /// Mean of the interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    Voc07,
    /// Area under the monotone precision envelope.
    Area,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WiVariant {
    /// Operating point found per known class, then averaged.
    #[default]
    PerClass,
    /// One operating point over the pooled known-class detections.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AoseMode {
    /// `FP_U` events; each unknown box absorbs at most one detection per
    /// class sweep.
    #[default]
    PerClassConsumption,
    /// Every non-TP known detection overlapping an unknown box.
    RawCount,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub wi_iou_threshold: f64,
    pub wi_recall_level: f64,
    pub ap_variant: ApVariant,
    pub wi_variant: WiVariant,
    pub aose_mode: AoseMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            wi_iou_threshold: DEFAULT_WI_IOU_THRESHOLD,
            wi_recall_level: DEFAULT_WI_RECALL_LEVEL,
            ap_variant: ApVariant::default(),
            wi_variant: WiVariant::default(),
            aose_mode: AoseMode::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositiveKnown,
    FalsePositiveUnknown,
    /// Matched a crowd region of the swept class.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub bbox: BBox,
    pub crowd: bool,
}

fn best_unmatched(det: &BBox, gts: &[GtBox], used: &[bool], crowd: bool, thr: f64) -> Option<usize> {
    let mut best = None;
    let mut best_iou = f64::NEG_INFINITY;
    for (j, g) in gts.iter().enumerate() {
        if used[j] || g.crowd != crowd {
            continue;
        }
        let v = det.iou(&g.bbox);
        if v > best_iou {
            best_iou = v;
            best = Some(j);
        }
    }
    best.filter(|_| best_iou >= thr)
}

/// Greedy sweep for one class within one image.
///
/// `dets` must already be in descending score order. A detection is a TP
/// when the best unmatched, non-crowd box of the class reaches `iou_thr`;
/// otherwise it is ignored if it reaches a crowd box of the class; otherwise
/// `FP_U` when the best unmatched unknown box reaches `iou_thr`; otherwise
/// `FP_K`. Matched boxes are consumed.
pub fn greedy_match(dets: &[BBox], gt_class: &[GtBox], gt_unknown: &[GtBox], iou_thr: f64) -> Vec<MatchOutcome> {
    let mut used_class = vec![false; gt_class.len()];
    let mut used_unknown = vec![false; gt_unknown.len()];
    dets.iter()
        .map(|d| {
            if let Some(j) = best_unmatched(d, gt_class, &used_class, false, iou_thr) {
                used_class[j] = true;
                return MatchOutcome::TruePositive;
            }
            if best_unmatched(d, gt_class, &used_class, true, iou_thr).is_some() {
                return MatchOutcome::Ignored;
            }
            let unknown_hit = best_unmatched(d, gt_unknown, &used_unknown, false, iou_thr)
                .or_else(|| best_unmatched(d, gt_unknown, &used_unknown, true, iou_thr));
            if let Some(j) = unknown_hit {
                used_unknown[j] = true;
                MatchOutcome::FalsePositiveUnknown
            } else {
                MatchOutcome::FalsePositiveKnown
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TallyRow {
    pub score: f64,
    /// Position of the detection in the evaluated list; breaks score ties.
    pub order: usize,
    pub outcome: MatchOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TallyCounts {
    pub tp: usize,
    pub fp_known: usize,
    pub fp_unknown: usize,
}

impl TallyCounts {
    fn add(&mut self, outcome: MatchOutcome) {
        match outcome {
            MatchOutcome::TruePositive => self.tp += 1,
            MatchOutcome::FalsePositiveKnown => self.fp_known += 1,
            MatchOutcome::FalsePositiveUnknown => self.fp_unknown += 1,
            MatchOutcome::Ignored => {}
        }
    }
}

/// Score-ranked outcomes of one class sweep plus its recall denominator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassTally {
    pub rows: Vec<TallyRow>,
    /// Non-crowd ground-truth boxes of the class.
    pub num_gt: usize,
}

fn rank_rows(rows: &mut [TallyRow]) {
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.order.cmp(&b.order)));
}

impl ClassTally {
    pub fn new(mut rows: Vec<TallyRow>, num_gt: usize) -> Self {
        rank_rows(&mut rows);
        Self { rows, num_gt }
    }

    pub fn counts(&self) -> TallyCounts {
        let mut c = TallyCounts::default();
        for r in &self.rows {
            c.add(r.outcome);
        }
        c
    }

    /// Precision/recall after every non-ignored detection. `None` without
    /// ground truth.
    pub fn pr_curve(&self) -> Option<PrCurve> {
        if self.num_gt == 0 {
            return None;
        }
        let mut curve = PrCurve {
            num_gt: self.num_gt,
            ..PrCurve::default()
        };
        let (mut tp, mut seen) = (0usize, 0usize);
        for r in self.rows.iter().filter(|r| r.outcome != MatchOutcome::Ignored) {
            seen += 1;
            let hit = r.outcome == MatchOutcome::TruePositive;
            tp += hit as usize;
            curve.recall.push(tp as f64 / self.num_gt as f64);
            curve.precision.push(tp as f64 / seen as f64);
            curve.scores.push(r.score);
            curve.is_tp.push(hit);
        }
        Some(curve)
    }

    /// Tally of the shortest score-ranked prefix whose recall reaches
    /// `recall_level`.
    pub fn prefix_at_recall(&self, recall_level: f64) -> Option<TallyCounts> {
        prefix_at_recall(self.rows.iter(), self.num_gt, recall_level)
    }
}

fn prefix_at_recall<'a>(
    rows: impl Iterator<Item = &'a TallyRow>,
    num_gt: usize,
    recall_level: f64,
) -> Option<TallyCounts> {
    if num_gt == 0 {
        return None;
    }
    let mut c = TallyCounts::default();
    for r in rows {
        c.add(r.outcome);
        if r.outcome == MatchOutcome::TruePositive && c.tp as f64 / num_gt as f64 >= recall_level {
            return Some(c);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub num_gt: usize,
}

/// AP in percent.
pub fn average_precision(curve: &PrCurve, variant: ApVariant) -> f64 {
    let n = curve.precision.len();
    if n == 0 || curve.num_gt == 0 {
        return 0.0;
    }
    match variant {
        ApVariant::Voc07 => {
            // Interpolated precision at r is the max precision at recall >= r.
            let mut envelope = curve.precision.clone();
            for i in (0..n - 1).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut total = 0.0;
            for t in 0..=10 {
                let level = t as f64 / 10.0;
                let idx = curve.recall.partition_point(|&r| r < level);
                if idx < n {
                    total += envelope[idx];
                }
            }
            100.0 * total / 11.0
        }
        ApVariant::Area => {
            let mut envelope = curve.precision.clone();
            for i in (0..n - 1).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            // Each TP raises recall by exactly 1 / num_gt.
            let total: f64 = envelope
                .iter()
                .zip(&curve.is_tp)
                .filter(|(_, &tp)| tp)
                .map(|(p, _)| *p)
                .sum();
            100.0 * total / curve.num_gt as f64
        }
    }
}

/// `100 * (P_K / P_{K+U} - 1)` on a tally with at least one TP.
pub fn wi_precision_ratio(c: &TallyCounts) -> f64 {
    let (tp, fk, fu) = (c.tp as f64, c.fp_known as f64, c.fp_unknown as f64);
    let p_known = tp / (tp + fk);
    let p_open = tp / (tp + fk + fu);
    100.0 * (p_known / p_open - 1.0)
}

/// `100 * FP_U / (TP_K + FP_K)`.
pub fn wi_identity(c: &TallyCounts) -> f64 {
    let denom = (c.tp + c.fp_known) as f64;
    if denom == 0.0 {
        0.0
    } else {
        100.0 * c.fp_unknown as f64 / denom
    }
}

/// Ground truth of one image, split per known slot plus the merged unknown
/// class. Boxes are ordered by annotation id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageGt {
    pub known: Vec<Vec<GtBox>>,
    pub unknown: Vec<GtBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthIndex {
    pub images: BTreeMap<u64, ImageGt>,
    pub known_gt_counts: Vec<usize>,
    pub unknown_gt_count: usize,
}

impl GroundTruthIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let k = dataset.categories.num_known();
        let mut images: BTreeMap<u64, ImageGt> = dataset
            .images
            .iter()
            .map(|i| {
                (
                    i.id,
                    ImageGt {
                        known: vec![Vec::new(); k],
                        unknown: Vec::new(),
                    },
                )
            })
            .collect();
        let mut known_gt_counts = vec![0; k];
        let mut unknown_gt_count = 0;
        let mut anns: Vec<_> = dataset.annotations.iter().collect();
        anns.sort_by_key(|a| (a.image_id, a.id));
        for a in anns {
            let Some(slot) = dataset.categories.classify(a.category_id) else {
                continue;
            };
            let entry = images.entry(a.image_id).or_insert_with(|| ImageGt {
                known: vec![Vec::new(); k],
                unknown: Vec::new(),
            });
            let g = GtBox {
                bbox: a.bbox,
                crowd: a.iscrowd,
            };
            match slot {
                ClassSlot::Known(c) => {
                    entry.known[c].push(g);
                    known_gt_counts[c] += !a.iscrowd as usize;
                }
                ClassSlot::Unknown => {
                    entry.unknown.push(g);
                    unknown_gt_count += !a.iscrowd as usize;
                }
            }
        }
        Self {
            images,
            known_gt_counts,
            unknown_gt_count,
        }
    }

    pub fn num_known(&self) -> usize {
        self.known_gt_counts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedRow {
    pub index: usize,
    pub slot: ClassSlot,
    /// Outcome at the main IoU threshold.
    pub outcome: MatchOutcome,
    /// Outcome at the WI threshold; known slots only.
    pub wi_outcome: Option<MatchOutcome>,
    /// Non-TP known detection overlapping any unknown box at the main
    /// threshold.
    pub raw_open_error: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageMatches {
    pub rows: Vec<MatchedRow>,
}

/// Groups detection indices per image (ascending image id).
pub fn group_by_image(dets: &[Detection]) -> BTreeMap<u64, Vec<usize>> {
    let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        map.entry(d.image_id).or_default().push(i);
    }
    map
}

/// Matches the detections of one image (given by index into `dets`).
pub fn match_image(gt: Option<&ImageGt>, dets: &[Detection], indices: &[usize], cfg: &EvalConfig) -> ImageMatches {
    let empty = ImageGt::default();
    let gt = gt.unwrap_or(&empty);
    let mut by_slot: BTreeMap<ClassSlot, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        by_slot.entry(dets[i].slot).or_default().push(i);
    }
    let mut rows = Vec::with_capacity(indices.len());
    for (slot, mut members) in by_slot {
        members.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
        let boxes: Vec<BBox> = members.iter().map(|&i| dets[i].bbox).collect();
        match slot {
            ClassSlot::Known(c) => {
                let class_gt = gt.known.get(c).map(Vec::as_slice).unwrap_or(&[]);
                let main = greedy_match(&boxes, class_gt, &gt.unknown, cfg.iou_threshold);
                let wi = greedy_match(&boxes, class_gt, &gt.unknown, cfg.wi_iou_threshold);
                for (j, &index) in members.iter().enumerate() {
                    let raw_open_error = matches!(
                        main[j],
                        MatchOutcome::FalsePositiveKnown | MatchOutcome::FalsePositiveUnknown
                    ) && gt.unknown.iter().any(|g| boxes[j].iou(&g.bbox) >= cfg.iou_threshold);
                    rows.push(MatchedRow {
                        index,
                        slot,
                        outcome: main[j],
                        wi_outcome: Some(wi[j]),
                        raw_open_error,
                    });
                }
            }
            ClassSlot::Unknown => {
                let main = greedy_match(&boxes, &gt.unknown, &[], cfg.iou_threshold);
                for (j, &index) in members.iter().enumerate() {
                    rows.push(MatchedRow {
                        index,
                        slot,
                        outcome: main[j],
                        wi_outcome: None,
                        raw_open_error: false,
                    });
                }
            }
        }
    }
    ImageMatches { rows }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub slot: usize,
    pub category_id: u64,
    pub num_gt: usize,
    pub num_detections: usize,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    pub counts: TallyCounts,
    /// Per-class WI at the configured recall level, if reached.
    pub wi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub config: EvalConfig,
    /// Mean AP over known classes with ground truth, percent.
    pub map_known: f64,
    /// Scaled by 100; `None` when no operating point reaches the recall
    /// level.
    pub wilderness_impact: Option<f64>,
    pub aose: usize,
    pub unknown_ap: Option<f64>,
    pub unknown_recall: Option<f64>,
    pub num_unknown_gt: usize,
    pub per_class: Vec<ClassReport>,
    /// Curves of known classes with ground truth, keyed by slot.
    pub known_curves: Vec<(usize, PrCurve)>,
    pub unknown_curve: Option<PrCurve>,
    pub notes: Vec<String>,
}

/// Merges per-image matches into tallies and computes every metric.
pub fn assemble(
    dets: &[Detection],
    gt: &GroundTruthIndex,
    matches: impl IntoIterator<Item = ImageMatches>,
    known_ids: &[u64],
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricError> {
    let k = gt.num_known();
    let mut main: Vec<Vec<TallyRow>> = vec![Vec::new(); k];
    let mut wi_rows: Vec<Vec<TallyRow>> = vec![Vec::new(); k];
    let mut unknown_rows = Vec::new();
    let mut raw_open_errors = 0usize;
    for m in matches {
        for r in m.rows {
            let row = TallyRow {
                score: dets[r.index].score,
                order: r.index,
                outcome: r.outcome,
            };
            match r.slot {
                ClassSlot::Known(c) => {
                    main[c].push(row);
                    if let Some(o) = r.wi_outcome {
                        wi_rows[c].push(TallyRow { outcome: o, ..row });
                    }
                    raw_open_errors += r.raw_open_error as usize;
                }
                ClassSlot::Unknown => unknown_rows.push(row),
            }
        }
    }
    if gt.known_gt_counts.iter().all(|&n| n == 0) {
        return Err(MetricError::NoKnownGroundTruth);
    }

    let main: Vec<ClassTally> = main
        .into_iter()
        .zip(&gt.known_gt_counts)
        .map(|(rows, &n)| ClassTally::new(rows, n))
        .collect();
    let wi_tallies: Vec<ClassTally> = wi_rows
        .into_iter()
        .zip(&gt.known_gt_counts)
        .map(|(rows, &n)| ClassTally::new(rows, n))
        .collect();
    let unknown = ClassTally::new(unknown_rows, gt.unknown_gt_count);

    let mut notes = Vec::new();
    let mut per_class = Vec::with_capacity(k);
    let mut known_curves = Vec::new();
    let mut ap_sum = 0.0;
    let mut ap_n = 0usize;
    for (c, tally) in main.iter().enumerate() {
        let curve = tally.pr_curve();
        let ap = curve.as_ref().map(|cv| average_precision(cv, cfg.ap_variant));
        if let Some(v) = ap {
            ap_sum += v;
            ap_n += 1;
        } else {
            notes.push(format!("class {} has no ground truth; excluded from mAP", known_ids[c]));
        }
        let wi = wi_tallies[c]
            .prefix_at_recall(cfg.wi_recall_level)
            .map(|p| wi_identity(&p));
        per_class.push(ClassReport {
            slot: c,
            category_id: known_ids[c],
            num_gt: tally.num_gt,
            num_detections: tally.rows.len(),
            ap,
            counts: tally.counts(),
            wi,
        });
        if let Some(cv) = curve {
            known_curves.push((c, cv));
        }
    }
    let map_known = ap_sum / ap_n as f64;

    let wilderness_impact = match cfg.wi_variant {
        WiVariant::PerClass => {
            let reached: Vec<f64> = per_class.iter().filter_map(|c| c.wi).collect();
            if reached.is_empty() {
                None
            } else {
                Some(reached.iter().sum::<f64>() / reached.len() as f64)
            }
        }
        WiVariant::Pooled => {
            let mut pooled: Vec<TallyRow> = wi_tallies.iter().flat_map(|t| t.rows.iter().copied()).collect();
            rank_rows(&mut pooled);
            let total_gt = gt.known_gt_counts.iter().sum();
            prefix_at_recall(pooled.iter(), total_gt, cfg.wi_recall_level).map(|p| wi_identity(&p))
        }
    };
    if wilderness_impact.is_none() {
        notes.push(format!("WI undefined: {}", wi_diagnostics(&wi_tallies, known_ids)));
    }

    let aose = match cfg.aose_mode {
        AoseMode::PerClassConsumption => main.iter().map(|t| t.counts().fp_unknown).sum(),
        AoseMode::RawCount => raw_open_errors,
    };

    let unknown_curve = unknown.pr_curve();
    let unknown_ap = unknown_curve.as_ref().map(|cv| average_precision(cv, cfg.ap_variant));
    let unknown_recall = (unknown.num_gt > 0).then(|| 100.0 * unknown.counts().tp as f64 / unknown.num_gt as f64);
    if unknown.num_gt == 0 {
        notes.push(String::from("no unknown ground truth; U-AP and U-Recall undefined"));
    }

    Ok(EvalReport {
        config: *cfg,
        map_known,
        wilderness_impact,
        aose,
        unknown_ap,
        unknown_recall,
        num_unknown_gt: unknown.num_gt,
        per_class,
        known_curves,
        unknown_curve,
        notes,
    })
}

fn wi_diagnostics(tallies: &[ClassTally], known_ids: &[u64]) -> String {
    let mut parts = Vec::new();
    for (c, t) in tallies.iter().enumerate() {
        let tp = t.counts().tp;
        let recall = if t.num_gt == 0 {
            0.0
        } else {
            tp as f64 / t.num_gt as f64
        };
        parts.push(format!("{}: recall {:.4} over {} gt", known_ids[c], recall, t.num_gt));
    }
    parts.join("; ")
}

fn validate_detections(dets: &[Detection], dataset: &Dataset) -> Result<(), MetricError> {
    for d in dets {
        dataset.categories.check_slot(d.slot)?;
    }
    Ok(())
}

/// Sequential end-to-end evaluation.
pub fn evaluate(dets: &[Detection], dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport, MetricError> {
    validate_detections(dets, dataset)?;
    let gt = GroundTruthIndex::new(dataset);
    let groups = group_by_image(dets);
    let matches = groups
        .iter()
        .map(|(id, idx)| match_image(gt.images.get(id), dets, idx, cfg));
    assemble(dets, &gt, matches, dataset.categories.known_ids(), cfg)
}

/// Known-class mAP in percent.
pub fn map_known(
    dets: &[Detection],
    dataset: &Dataset,
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<f64, MetricError> {
    let cfg = EvalConfig {
        iou_threshold,
        ap_variant: variant,
        ..EvalConfig::default()
    };
    Ok(evaluate(dets, dataset, &cfg)?.map_known)
}

fn unknown_only(dets: &[Detection]) -> Vec<Detection> {
    dets.iter().filter(|d| d.is_unknown()).cloned().collect()
}

fn unknown_tally(dets: &[Detection], dataset: &Dataset, iou_threshold: f64) -> Result<ClassTally, MetricError> {
    let gt = GroundTruthIndex::new(dataset);
    if gt.unknown_gt_count == 0 {
        return Err(MetricError::NoUnknownGroundTruth);
    }
    let dets = unknown_only(dets);
    let cfg = EvalConfig {
        iou_threshold,
        ..EvalConfig::default()
    };
    let rows = group_by_image(&dets)
        .iter()
        .flat_map(|(id, idx)| match_image(gt.images.get(id), &dets, idx, &cfg).rows)
        .map(|r| TallyRow {
            score: dets[r.index].score,
            order: r.index,
            outcome: r.outcome,
        })
        .collect();
    Ok(ClassTally::new(rows, gt.unknown_gt_count))
}

/// Class-agnostic AP of unknown-slot detections against the merged unknown
/// ground truth, percent.
pub fn unknown_ap(
    dets: &[Detection],
    dataset: &Dataset,
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<f64, MetricError> {
    let tally = unknown_tally(dets, dataset, iou_threshold)?;
    let curve = tally.pr_curve().ok_or(MetricError::NoUnknownGroundTruth)?;
    Ok(average_precision(&curve, variant))
}

/// Percent of merged unknown ground truth matched by an unknown detection.
pub fn unknown_recall(dets: &[Detection], dataset: &Dataset, iou_threshold: f64) -> Result<f64, MetricError> {
    let tally = unknown_tally(dets, dataset, iou_threshold)?;
    Ok(100.0 * tally.counts().tp as f64 / tally.num_gt as f64)
}

/// WI scaled by 100 at the first prefix reaching `recall_level`.
pub fn wilderness_impact(
    dets: &[Detection],
    dataset: &Dataset,
    iou_threshold: f64,
    recall_level: f64,
    variant: WiVariant,
) -> Result<f64, MetricError> {
    let cfg = EvalConfig {
        wi_iou_threshold: iou_threshold,
        wi_recall_level: recall_level,
        wi_variant: variant,
        ..EvalConfig::default()
    };
    let report = evaluate(dets, dataset, &cfg)?;
    report.wilderness_impact.ok_or_else(|| {
        let diagnostics = report
            .per_class
            .iter()
            .map(|c| format!("{}: tp {} of {} gt", c.category_id, c.counts.tp, c.num_gt))
            .collect::<Vec<_>>()
            .join("; ");
        MetricError::WiUndefined {
            recall_level,
            diagnostics,
        }
    })
}

/// Absolute open-set error: known-class detections landing on unknown
/// objects.
pub fn aose(dets: &[Detection], dataset: &Dataset, iou_threshold: f64, mode: AoseMode) -> Result<usize, MetricError> {
    validate_detections(dets, dataset)?;
    let gt = GroundTruthIndex::new(dataset);
    let cfg = EvalConfig {
        iou_threshold,
        ..EvalConfig::default()
    };
    let known: Vec<Detection> = dets.iter().filter(|d| !d.is_unknown()).cloned().collect();
    let rows = group_by_image(&known)
        .iter()
        .flat_map(|(id, idx)| match_image(gt.images.get(id), &known, idx, &cfg).rows)
        .collect::<Vec<_>>();
    Ok(match mode {
        AoseMode::PerClassConsumption => rows
            .iter()
            .filter(|r| r.outcome == MatchOutcome::FalsePositiveUnknown)
            .count(),
        AoseMode::RawCount => rows.iter().filter(|r| r.raw_open_error).count(),
    })
}

/// Percent of ground-truth boxes covered by at least one box (any class,
/// no one-to-one consumption). Inputs are `(image_id, box)` pairs.
pub fn class_agnostic_recall(
    boxes: &[(u64, BBox)],
    gt: &[(u64, BBox)],
    iou_threshold: f64,
) -> Result<f64, MetricError> {
    if gt.is_empty() {
        return Err(MetricError::EmptyGroundTruth);
    }
    let mut by_image: BTreeMap<u64, Vec<&BBox>> = BTreeMap::new();
    for (id, b) in boxes {
        by_image.entry(*id).or_default().push(b);
    }
    let covered = gt
        .iter()
        .filter(|(id, g)| {
            by_image
                .get(id)
                .is_some_and(|bs| bs.iter().any(|b| b.iou(g) >= iou_threshold))
        })
        .count();
    Ok(100.0 * covered as f64 / gt.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub class: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    /// Mean over classes of the mean squared distance to the class centroid.
    pub intra_class_variance: f64,
    /// Mean Euclidean distance over centroid pairs.
    pub inter_class_distance: f64,
    /// Per-class mean squared distance, sorted by class label.
    pub per_class_variance: Vec<(String, f64)>,
}

pub fn embedding_stats(records: &[EmbeddingRecord]) -> Result<EmbeddingStats, MetricError> {
    let dim = records.first().ok_or(MetricError::NoEmbeddings)?.vector.len();
    let mut classes: BTreeMap<&str, Vec<&[f64]>> = BTreeMap::new();
    for r in records {
        if r.vector.len() != dim {
            return Err(MetricError::DimensionMismatch {
                expected: dim,
                got: r.vector.len(),
            });
        }
        classes.entry(r.class.as_str()).or_default().push(&r.vector);
    }
    if classes.len() < 2 {
        return Err(MetricError::SingleClass);
    }
    let mut centroids = Vec::with_capacity(classes.len());
    let mut per_class_variance = Vec::with_capacity(classes.len());
    for (name, members) in &classes {
        let mut c = vec![0.0; dim];
        for v in members {
            for (ci, x) in c.iter_mut().zip(v.iter()) {
                *ci += x;
            }
        }
        for ci in &mut c {
            *ci /= members.len() as f64;
        }
        let var = members.iter().map(|v| squared_distance(v, &c)).sum::<f64>() / members.len() as f64;
        per_class_variance.push((String::from(*name), var));
        centroids.push(c);
    }
    let intra = per_class_variance.iter().map(|(_, v)| v).sum::<f64>() / per_class_variance.len() as f64;
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            pair_sum += libm::sqrt(squared_distance(&centroids[i], &centroids[j]));
            pairs += 1;
        }
    }
    Ok(EmbeddingStats {
        intra_class_variance: intra,
        inter_class_distance: pair_sum / pairs as f64,
        per_class_variance,
    })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::{Annotation, CategorySpace, ImageRecord};
    use alloc::vec;

    fn gt(b: BBox) -> GtBox {
        GtBox { bbox: b, crowd: false }
    }

    const A: BBox = BBox {
        x_min: 0.,
        y_min: 0.,
        x_max: 10.,
        y_max: 10.,
    };
    const B: BBox = BBox {
        x_min: 20.,
        y_min: 20.,
        x_max: 30.,
        y_max: 30.,
    };
    const C: BBox = BBox {
        x_min: 40.,
        y_min: 0.,
        x_max: 50.,
        y_max: 10.,
    };

    #[test]
    fn greedy_examples() {
        use MatchOutcome::*;
        assert_eq!(greedy_match(&[A], &[gt(A)], &[], 0.5), vec![TruePositive]);
        assert_eq!(greedy_match(&[A], &[], &[gt(A)], 0.5), vec![FalsePositiveUnknown]);
        assert_eq!(
            greedy_match(&[A, A], &[gt(A)], &[], 0.5),
            vec![TruePositive, FalsePositiveKnown]
        );
        // Unknown box absorbs one detection per sweep.
        assert_eq!(
            greedy_match(&[A, A], &[], &[gt(A)], 0.5),
            vec![FalsePositiveUnknown, FalsePositiveKnown]
        );
        assert_eq!(greedy_match(&[B], &[gt(A)], &[gt(C)], 0.5), vec![FalsePositiveKnown]);
    }

    #[test]
    fn greedy_prefers_unmatched_box() {
        use MatchOutcome::*;
        // Second detection overlaps the consumed box best but still reaches
        // the other box.
        let d1 = BBox::new(0., 0., 10., 10.);
        let d2 = BBox::new(1., 0., 11., 10.);
        let g2 = BBox::new(3., 0., 13., 10.);
        assert!(d2.iou(&d1) > d2.iou(&g2) && d2.iou(&g2) >= 0.5);
        assert_eq!(
            greedy_match(&[d1, d2], &[gt(d1), gt(g2)], &[], 0.5),
            vec![TruePositive, TruePositive]
        );
    }

    #[test]
    fn crowd_boxes_are_ignored_not_consumed() {
        use MatchOutcome::*;
        let crowd = GtBox { bbox: A, crowd: true };
        assert_eq!(greedy_match(&[A, A], &[crowd], &[], 0.5), vec![Ignored, Ignored]);
        assert_eq!(greedy_match(&[A], &[], &[crowd], 0.5), vec![FalsePositiveUnknown]);
    }

    fn curve(outcomes: &[bool], num_gt: usize) -> PrCurve {
        let rows = outcomes
            .iter()
            .enumerate()
            .map(|(i, &tp)| TallyRow {
                score: 1.0 - i as f64 * 0.01,
                order: i,
                outcome: if tp {
                    MatchOutcome::TruePositive
                } else {
                    MatchOutcome::FalsePositiveKnown
                },
            })
            .collect();
        ClassTally::new(rows, num_gt).pr_curve().unwrap()
    }

    #[test]
    fn ap_examples() {
        for v in [ApVariant::Voc07, ApVariant::Area] {
            assert_eq!(average_precision(&curve(&[true], 1), v), 100.0);
            assert_eq!(average_precision(&curve(&[], 3), v), 0.0);
        }
        // TP, FP, TP over 2 GT: precisions 1, 1/2, 2/3 -> area (1 + 2/3) / 2.
        let ap = average_precision(&curve(&[true, false, true], 2), ApVariant::Area);
        assert!((ap - 500.0 / 6.0).abs() < 1e-12);
        // 11-point: recall 0.5 at p=1, recall 1.0 at p=2/3 -> (6 * 1 + 5 * 2/3) / 11.
        let ap = average_precision(&curve(&[true, false, true], 2), ApVariant::Voc07);
        assert!((ap - 100.0 * (6.0 + 5.0 * 2.0 / 3.0) / 11.0).abs() < 1e-12);
        assert!(ClassTally::new(vec![], 0).pr_curve().is_none());
    }

    #[test]
    fn wi_forms() {
        let c = TallyCounts {
            tp: 2,
            fp_known: 0,
            fp_unknown: 1,
        };
        assert!((wi_identity(&c) - 50.0).abs() < 1e-12);
        assert!((wi_precision_ratio(&c) - 50.0).abs() < 1e-9);
        assert_eq!(
            wi_identity(&TallyCounts {
                tp: 3,
                fp_known: 2,
                fp_unknown: 0
            }),
            0.0
        );
    }

    fn dataset(anns: Vec<(u64, u64, BBox, bool)>) -> Dataset {
        let space = CategorySpace::new(vec![1, 2], [10, 11], None).unwrap();
        let images = (1..=5)
            .map(|id| ImageRecord {
                id,
                width: 100.,
                height: 100.,
            })
            .collect();
        let annotations = anns
            .into_iter()
            .enumerate()
            .map(|(i, (image_id, category_id, bbox, iscrowd))| Annotation {
                id: i as u64 + 1,
                image_id,
                category_id,
                bbox,
                iscrowd,
            })
            .collect();
        Dataset::new(images, annotations, space, BTreeMap::new()).unwrap()
    }

    fn det(img: u64, slot: ClassSlot, b: BBox, s: f64) -> Detection {
        Detection::new(img, slot, b, s).unwrap()
    }

    #[test]
    fn perfect_detector_identity() {
        let ds = dataset(vec![
            (1, 1, A, false),
            (1, 2, B, false),
            (2, 10, C, false),
            (3, 11, A, false),
        ]);
        let dets: Vec<Detection> = ds
            .annotations
            .iter()
            .map(|a| det(a.image_id, ds.categories.classify(a.category_id).unwrap(), a.bbox, 1.0))
            .collect();
        for ap in [ApVariant::Voc07, ApVariant::Area] {
            let cfg = EvalConfig {
                ap_variant: ap,
                ..EvalConfig::default()
            };
            let r = evaluate(&dets, &ds, &cfg).unwrap();
            assert_eq!(r.map_known, 100.0);
            assert_eq!(r.unknown_ap, Some(100.0));
            assert_eq!(r.unknown_recall, Some(100.0));
            assert_eq!(r.wilderness_impact, Some(0.0));
            assert_eq!(r.aose, 0);
        }
    }

    #[test]
    fn empty_detections() {
        let ds = dataset(vec![(1, 1, A, false), (2, 10, C, false)]);
        let r = evaluate(&[], &ds, &EvalConfig::default()).unwrap();
        assert_eq!(r.map_known, 0.0);
        assert_eq!(r.unknown_ap, Some(0.0));
        assert_eq!(r.unknown_recall, Some(0.0));
        assert_eq!(r.wilderness_impact, None);
        assert_eq!(r.aose, 0);
        assert!(r.notes.iter().any(|n| n.starts_with("WI undefined")));
    }

    #[test]
    fn map_with_missed_class() {
        // Class 1 found, class 2 missed entirely.
        let ds = dataset(vec![(1, 1, A, false), (1, 2, B, false)]);
        let dets = vec![det(1, ClassSlot::Known(0), A, 0.9)];
        assert_eq!(map_known(&dets, &ds, 0.5, ApVariant::Voc07).unwrap(), 50.0);
        assert_eq!(map_known(&dets, &ds, 0.5, ApVariant::Area).unwrap(), 50.0);
        let no_known = dataset(vec![(1, 10, A, false)]);
        assert_eq!(
            map_known(&dets, &no_known, 0.5, ApVariant::Voc07),
            Err(MetricError::NoKnownGroundTruth)
        );
    }

    #[test]
    fn class_without_gt_is_excluded_with_note() {
        let ds = dataset(vec![(1, 1, A, false)]);
        let r = evaluate(&[det(1, ClassSlot::Known(0), A, 0.9)], &ds, &EvalConfig::default()).unwrap();
        assert_eq!(r.map_known, 100.0);
        assert_eq!(r.per_class[1].ap, None);
        assert!(r.notes.iter().any(|n| n.contains("class 2")));
    }

    #[test]
    fn unknown_metrics() {
        let ds = dataset(vec![
            (1, 1, A, false),
            (2, 10, A, false),
            (2, 10, B, false),
            (3, 11, C, false),
        ]);
        let perfect = vec![
            det(2, ClassSlot::Unknown, A, 0.9),
            det(2, ClassSlot::Unknown, B, 0.8),
            det(3, ClassSlot::Unknown, C, 0.7),
        ];
        assert_eq!(unknown_ap(&perfect, &ds, 0.5, ApVariant::Voc07).unwrap(), 100.0);
        assert_eq!(unknown_recall(&perfect, &ds, 0.5).unwrap(), 100.0);
        let background = vec![det(1, ClassSlot::Unknown, C, 0.9), det(4, ClassSlot::Unknown, A, 0.9)];
        assert_eq!(unknown_ap(&background, &ds, 0.5, ApVariant::Area).unwrap(), 0.0);
        // Two of three found, one duplicated.
        let partial = vec![
            det(2, ClassSlot::Unknown, A, 0.9),
            det(2, ClassSlot::Unknown, A, 0.85),
            det(3, ClassSlot::Unknown, C, 0.7),
        ];
        let r = unknown_recall(&partial, &ds, 0.5).unwrap();
        assert!((r - 200.0 / 3.0).abs() < 1e-12);
        let none = dataset(vec![(1, 1, A, false)]);
        assert_eq!(
            unknown_recall(&partial, &none, 0.5),
            Err(MetricError::NoUnknownGroundTruth)
        );
    }

    #[test]
    fn crowd_unknown_excluded_from_recall() {
        let ds = dataset(vec![(1, 1, A, false), (2, 10, A, false), (2, 10, B, true)]);
        let dets = vec![det(2, ClassSlot::Unknown, A, 0.9), det(2, ClassSlot::Unknown, B, 0.95)];
        assert_eq!(unknown_recall(&dets, &ds, 0.5).unwrap(), 100.0);
        assert_eq!(unknown_ap(&dets, &ds, 0.5, ApVariant::Area).unwrap(), 100.0);
    }

    #[test]
    fn duplicate_unknown_detections_count_once() {
        let ds = dataset(vec![(1, 1, A, false), (2, 10, A, false)]);
        let dets = vec![det(2, ClassSlot::Unknown, A, 0.9), det(2, ClassSlot::Unknown, A, 0.8)];
        assert_eq!(unknown_recall(&dets, &ds, 0.5).unwrap(), 100.0);
    }

    #[test]
    fn wi_toy_prefix() {
        // Known GT A and C of class 1, unknown object at B. Ranked: TP, FP_U, TP.
        let ds = dataset(vec![(1, 1, A, false), (1, 1, C, false), (1, 10, B, false)]);
        let dets = vec![
            det(1, ClassSlot::Known(0), A, 0.9),
            det(1, ClassSlot::Known(0), B, 0.8),
            det(1, ClassSlot::Known(0), C, 0.7),
        ];
        let wi = wilderness_impact(&dets, &ds, 0.8, 0.8, WiVariant::PerClass).unwrap();
        assert!((wi - 50.0).abs() < 1e-12);
        let pooled = wilderness_impact(&dets, &ds, 0.8, 0.8, WiVariant::Pooled).unwrap();
        assert!((pooled - 50.0).abs() < 1e-12);
        assert_eq!(aose(&dets, &ds, 0.5, AoseMode::PerClassConsumption).unwrap(), 1);
        let clean = vec![dets[0].clone(), dets[2].clone()];
        assert_eq!(
            wilderness_impact(&clean, &ds, 0.8, 0.8, WiVariant::PerClass).unwrap(),
            0.0
        );
        let short = vec![dets[0].clone()];
        assert!(matches!(
            wilderness_impact(&short, &ds, 0.8, 0.8, WiVariant::PerClass),
            Err(MetricError::WiUndefined { .. })
        ));
    }

    #[test]
    fn aose_examples() {
        let ds = dataset(vec![(1, 1, A, false), (2, 10, B, false)]);
        let none = vec![det(1, ClassSlot::Known(0), A, 0.9)];
        assert_eq!(aose(&none, &ds, 0.5, AoseMode::default()).unwrap(), 0);
        let one = vec![det(2, ClassSlot::Known(1), B, 0.9)];
        assert_eq!(aose(&one, &ds, 0.5, AoseMode::default()).unwrap(), 1);
        let twice = vec![det(2, ClassSlot::Known(1), B, 0.9), det(2, ClassSlot::Known(1), B, 0.8)];
        assert_eq!(aose(&twice, &ds, 0.5, AoseMode::PerClassConsumption).unwrap(), 1);
        assert_eq!(aose(&twice, &ds, 0.5, AoseMode::RawCount).unwrap(), 2);
        // Different classes each consume the unknown box in their own sweep.
        let two_classes = vec![det(2, ClassSlot::Known(0), B, 0.9), det(2, ClassSlot::Known(1), B, 0.8)];
        assert_eq!(aose(&two_classes, &ds, 0.5, AoseMode::PerClassConsumption).unwrap(), 2);
    }

    #[test]
    fn out_of_range_slot_is_rejected() {
        let ds = dataset(vec![(1, 1, A, false)]);
        let bad = vec![det(1, ClassSlot::Known(7), A, 0.9)];
        assert!(matches!(
            evaluate(&bad, &ds, &EvalConfig::default()),
            Err(MetricError::Taxonomy(_))
        ));
    }

    #[test]
    fn class_agnostic_recall_examples() {
        let g = vec![(1, A), (1, B), (2, A), (2, C)];
        assert_eq!(class_agnostic_recall(&g, &g, 0.5).unwrap(), 100.0);
        assert_eq!(class_agnostic_recall(&[], &g, 0.5).unwrap(), 0.0);
        assert_eq!(class_agnostic_recall(&[(1, A), (2, C)], &g, 0.5).unwrap(), 50.0);
        assert_eq!(class_agnostic_recall(&g, &[], 0.5), Err(MetricError::EmptyGroundTruth));
    }

    fn rec(class: &str, v: &[f64]) -> EmbeddingRecord {
        EmbeddingRecord {
            class: String::from(class),
            vector: v.to_vec(),
        }
    }

    #[test]
    fn embedding_examples() {
        let recs = vec![rec("a", &[0., 0.]), rec("a", &[2., 0.]), rec("b", &[5., 0.])];
        let s = embedding_stats(&recs).unwrap();
        assert_eq!(s.per_class_variance[0], (String::from("a"), 1.0));
        assert_eq!(s.inter_class_distance, 4.0);
        assert_eq!(s.intra_class_variance, 0.5);
        let same = vec![rec("a", &[1., 1.]), rec("a", &[1., 1.]), rec("b", &[1., 1.])];
        assert_eq!(embedding_stats(&same).unwrap().intra_class_variance, 0.0);
        let moved: Vec<_> = recs
            .iter()
            .map(|r| rec(&r.class, &[r.vector[0] + 7.5, r.vector[1] - 3.0]))
            .collect();
        let m = embedding_stats(&moved).unwrap();
        assert!((m.intra_class_variance - s.intra_class_variance).abs() < 1e-12);
        assert!((m.inter_class_distance - s.inter_class_distance).abs() < 1e-12);
        assert_eq!(embedding_stats(&[rec("a", &[0.])]), Err(MetricError::SingleClass));
        assert_eq!(embedding_stats(&[]), Err(MetricError::NoEmbeddings));
        assert!(matches!(
            embedding_stats(&[rec("a", &[0.]), rec("b", &[0., 1.])]),
            Err(MetricError::DimensionMismatch { .. })
        ));
    }
}
