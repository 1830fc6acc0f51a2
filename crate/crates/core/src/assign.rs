//! Label assignment for region proposals.
//!
//! Positive proposals (max IoU to a known ground-truth box at or above the
//! positive threshold) receive a one-hot target on the matched known class.
//! Negative proposals receive a soft target split between the unknown and
//! background slots. The unknown mass combines appearance uncertainty (the
//! proposal's objectness `o`) with geometric uncertainty (`1 - u`, where `u`
//! is the max IoU to any known ground-truth box):
//!
//! ```text
//! known slots  -> 0
//! unknown      -> A(o) * G(u)
//! background   -> 1 - A(o) * G(u)
//! ```
//!
//! The default combinator is `A(o) = o`, `G(u) = 1 - u`. A top-k one-hot
//! baseline and an objectness histogram are provided for comparison.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::BBox;
use crate::taxonomy::{Annotation, CategorySpace};

pub const DEFAULT_POSITIVE_THRESHOLD: f64 = 0.5;
/// Warmup before pseudo-labels are enabled in a training loop.
pub const DEFAULT_WARMUP_ITERATIONS: u64 = 1000;
/// Shorter warmup used by the earlier unknown-probability-learning setup.
pub const SHORT_WARMUP_ITERATIONS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignError {
    #[error("{name} = {value} outside [0, 1]")]
    Domain { name: &'static str, value: f64 },
    #[error("positive threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("inputs span several images ({first} and {other})")]
    MixedImages { first: u64, other: u64 },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("histogram edges must be strictly increasing and cover [0, 1]")]
    BadEdges,
    #[error("unknown combinator label {0:?}")]
    UnknownCombinator(char),
}

fn check_unit(name: &'static str, value: f64) -> Result<(), AssignError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(AssignError::Domain { name, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub image_id: u64,
    pub bbox: BBox,
    pub objectness: f64,
}

impl Proposal {
    pub fn new(image_id: u64, bbox: BBox, objectness: f64) -> Result<Self, AssignError> {
        check_unit("objectness", objectness)?;
        Ok(Self {
            image_id,
            bbox,
            objectness,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub proposal_index: usize,
    /// Annotation id of the best-overlapping known box, `None` when nothing
    /// overlaps.
    pub matched_annotation: Option<u64>,
    /// Known slot of the matched annotation.
    pub matched_slot: Option<usize>,
    /// Max IoU over all known ground-truth boxes in the image.
    pub iou: f64,
    pub is_positive: bool,
}

/// Target distribution over the `K + 2` slots of a [`CategorySpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector(Vec<f64>);

impl LabelVector {
    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Mass on the unknown slot (second to last).
    pub fn unknown(&self) -> f64 {
        self.0[self.0.len() - 2]
    }

    pub fn background(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn known_mass(&self) -> f64 {
        self.0[..self.0.len() - 2].iter().sum()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the slot holding all the mass, if the vector is one-hot.
    pub fn hot_index(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &v) in self.0.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        hot
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AppearanceTransform {
    /// `o`
    Linear,
    /// `o^2`
    Squared,
}

impl AppearanceTransform {
    pub fn apply(self, objectness: f64) -> f64 {
        match self {
            Self::Linear => objectness,
            Self::Squared => objectness * objectness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryTransform {
    /// `1 - u`
    Linear,
    /// `(1 - u)^2`
    Squared,
    /// `sqrt(1 - u)`
    Sqrt,
}

impl GeometryTransform {
    pub fn apply(self, iou: f64) -> f64 {
        let g = 1.0 - iou;
        match self {
            Self::Linear => g,
            Self::Squared => g * g,
            Self::Sqrt => libm::sqrt(g),
        }
    }
}

/// How appearance and geometric uncertainty combine into unknown mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UncertaintyCombinator {
    pub appearance: AppearanceTransform,
    pub geometry: GeometryTransform,
}

impl UncertaintyCombinator {
    /// `o^2 (1-u)^2`
    pub const A: Self = Self::of(AppearanceTransform::Squared, GeometryTransform::Squared);
    /// `o^2 (1-u)`
    pub const B: Self = Self::of(AppearanceTransform::Squared, GeometryTransform::Linear);
    /// `o^2 sqrt(1-u)`
    pub const C: Self = Self::of(AppearanceTransform::Squared, GeometryTransform::Sqrt);
    /// `o (1-u)^2`
    pub const D: Self = Self::of(AppearanceTransform::Linear, GeometryTransform::Squared);
    /// `o (1-u)`, the default.
    pub const E: Self = Self::of(AppearanceTransform::Linear, GeometryTransform::Linear);
    /// `o sqrt(1-u)`
    pub const F: Self = Self::of(AppearanceTransform::Linear, GeometryTransform::Sqrt);

    pub const ALL: [Self; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    const fn of(appearance: AppearanceTransform, geometry: GeometryTransform) -> Self {
        Self { appearance, geometry }
    }

    pub fn from_label(label: char) -> Result<Self, AssignError> {
        match label.to_ascii_lowercase() {
            'a' => Ok(Self::A),
            'b' => Ok(Self::B),
            'c' => Ok(Self::C),
            'd' => Ok(Self::D),
            'e' => Ok(Self::E),
            'f' => Ok(Self::F),
            other => Err(AssignError::UnknownCombinator(other)),
        }
    }

    pub fn label(&self) -> char {
        let idx = Self::ALL.iter().position(|c| c == self).unwrap_or(4);
        (b'a' + idx as u8) as char
    }

    pub fn unknown_mass(&self, objectness: f64, iou: f64) -> f64 {
        self.appearance.apply(objectness) * self.geometry.apply(iou)
    }
}

impl Default for UncertaintyCombinator {
    fn default() -> Self {
        Self::E
    }
}

fn single_image(proposals: &[Proposal], gt: &[Annotation]) -> Result<Option<u64>, AssignError> {
    let mut ids = proposals
        .iter()
        .map(|p| p.image_id)
        .chain(gt.iter().map(|a| a.image_id));
    let Some(first) = ids.next() else {
        return Ok(None);
    };
    match ids.find(|&id| id != first) {
        Some(other) => Err(AssignError::MixedImages { first, other }),
        None => Ok(Some(first)),
    }
}

/// Matches each proposal of one image to its best known ground-truth box.
///
/// Annotations of non-known categories are ignored. Ties in IoU go to the
/// lowest annotation id.
pub fn match_proposals(
    proposals: &[Proposal],
    gt: &[Annotation],
    space: &CategorySpace,
    positive_threshold: f64,
) -> Result<Vec<MatchResult>, AssignError> {
    if !(positive_threshold > 0.0 && positive_threshold <= 1.0) {
        return Err(AssignError::Threshold(positive_threshold));
    }
    single_image(proposals, gt)?;
    for p in proposals {
        check_unit("objectness", p.objectness)?;
    }
    let mut known: Vec<(&Annotation, usize)> = gt
        .iter()
        .filter_map(|a| space.known_slot(a.category_id).map(|s| (a, s)))
        .collect();
    known.sort_by_key(|(a, _)| a.id);

    Ok(proposals
        .iter()
        .enumerate()
        .map(|(proposal_index, p)| {
            let mut best: Option<(&Annotation, usize)> = None;
            let mut best_iou = 0.0;
            for &(ann, slot) in &known {
                let v = p.bbox.iou(&ann.bbox);
                if v > best_iou {
                    best_iou = v;
                    best = Some((ann, slot));
                }
            }
            MatchResult {
                proposal_index,
                matched_annotation: best.map(|(a, _)| a.id),
                matched_slot: best.map(|(_, s)| s),
                iou: best_iou,
                is_positive: best.is_some() && best_iou >= positive_threshold,
            }
        })
        .collect())
}

/// Soft target for a negative proposal.
pub fn soft_label(
    objectness: f64,
    iou: f64,
    comb: UncertaintyCombinator,
    space: &CategorySpace,
) -> Result<LabelVector, AssignError> {
    check_unit("objectness", objectness)?;
    check_unit("iou", iou)?;
    let mut v = vec![0.0; space.num_slots()];
    let unknown = comb.unknown_mass(objectness, iou);
    v[space.unknown_index()] = unknown;
    v[space.background_index()] = 1.0 - unknown;
    Ok(LabelVector(v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignOptions {
    pub positive_threshold: f64,
    /// Number of warmup iterations before soft labels switch on.
    pub warmup_iterations: u64,
    /// Current training iteration. `None` means the gate is open (offline
    /// use).
    pub iteration: Option<u64>,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            positive_threshold: DEFAULT_POSITIVE_THRESHOLD,
            warmup_iterations: DEFAULT_WARMUP_ITERATIONS,
            iteration: None,
        }
    }
}

impl AssignOptions {
    fn gate_open(&self) -> bool {
        self.iteration.is_none_or(|it| it >= self.warmup_iterations)
    }
}

fn positive_label(m: &MatchResult, space: &CategorySpace) -> Option<LabelVector> {
    match (m.is_positive, m.matched_slot) {
        (true, Some(slot)) => Some(LabelVector::one_hot(space.num_slots(), slot)),
        _ => None,
    }
}

/// Assigns one target per proposal of a single image.
pub fn assign_labels(
    proposals: &[Proposal],
    gt: &[Annotation],
    comb: UncertaintyCombinator,
    space: &CategorySpace,
    opts: &AssignOptions,
) -> Result<Vec<LabelVector>, AssignError> {
    let matches = match_proposals(proposals, gt, space, opts.positive_threshold)?;
    let gate_open = opts.gate_open();
    matches
        .iter()
        .map(|m| match positive_label(m, space) {
            Some(l) => Ok(l),
            None if gate_open => soft_label(proposals[m.proposal_index].objectness, m.iou, comb, space),
            None => Ok(LabelVector::one_hot(space.num_slots(), space.background_index())),
        })
        .collect()
}

/// One-hot baseline: within one image, the `k` negatives with the highest
/// objectness become unknown and every other negative becomes background.
/// Ties keep input order.
pub fn topk_hard_labels(
    proposals: &[Proposal],
    gt: &[Annotation],
    k: usize,
    space: &CategorySpace,
    positive_threshold: f64,
) -> Result<Vec<LabelVector>, AssignError> {
    if k == 0 {
        return Err(AssignError::ZeroK);
    }
    let matches = match_proposals(proposals, gt, space, positive_threshold)?;
    let mut negatives: Vec<usize> = matches
        .iter()
        .filter(|m| !m.is_positive)
        .map(|m| m.proposal_index)
        .collect();
    negatives.sort_by(|&a, &b| proposals[b].objectness.total_cmp(&proposals[a].objectness));
    let mut unknown = vec![false; proposals.len()];
    for &i in negatives.iter().take(k) {
        unknown[i] = true;
    }
    Ok(matches
        .iter()
        .map(|m| {
            positive_label(m, space).unwrap_or_else(|| {
                let idx = if unknown[m.proposal_index] {
                    space.unknown_index()
                } else {
                    space.background_index()
                };
                LabelVector::one_hot(space.num_slots(), idx)
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    pub total: usize,
    /// Set when there were no scores; all fractions are then zero.
    pub empty: bool,
}

/// Bins scores in `[0, 1]`. Bins are half-open `[lo, hi)` except the last,
/// which is closed.
pub fn rpn_score_histogram(scores: &[f64], edges: &[f64]) -> Result<Histogram, AssignError> {
    if edges.len() < 2
        || edges.windows(2).any(|w| w[0] >= w[1] || w[0].is_nan())
        || edges[0] > 0.0
        || edges[edges.len() - 1] < 1.0
    {
        return Err(AssignError::BadEdges);
    }
    let nbins = edges.len() - 1;
    let mut counts = vec![0usize; nbins];
    for &s in scores {
        check_unit("score", s)?;
        // First edge strictly greater than s, minus one.
        let idx = edges.partition_point(|&e| e <= s).saturating_sub(1).min(nbins - 1);
        counts[idx] += 1;
    }
    let total = scores.len();
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistogramBin {
            lo: edges[i],
            hi: edges[i + 1],
            count,
            fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 },
        })
        .collect();
    Ok(Histogram {
        bins,
        total,
        empty: total == 0,
    })
}

/// `n` equal-width bins over `[0, 1]`.
pub fn uniform_edges(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}
