//! Embedded oracle comparisons. Each check names the function under test
//! and the invariant it verifies. Implementations are injectable so the
//! harness itself can be mutation-tested.

use osod_core::assign::{soft_label, UncertaintyCombinator};
use osod_core::loss::{
    central_difference, max_relative_error, smooth_l1, smooth_l1_grad, softmax_cross_entropy,
    softmax_cross_entropy_grad, LossError, RegressionPair,
};
use osod_core::metrics::{
    average_precision, greedy_match, wi_identity, wi_precision_ratio, ApVariant, ClassTally, GtBox, MatchOutcome,
    PrCurve, TallyCounts, TallyRow,
};
use osod_core::taxonomy::CategorySpace;
use osod_core::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::oracle::{greedy_tp, naive_softmax, raster_iou, sweep_ap};

pub type IouFn = fn(&BBox, &BBox) -> f64;
pub type ApFn = fn(&PrCurve, ApVariant) -> f64;
pub type GradFn = fn(&[f64], &[f64]) -> Result<Vec<f64>, LossError>;

#[derive(Clone, Copy)]
pub struct Implementations {
    pub iou: IouFn,
    pub average_precision: ApFn,
    pub softmax_cross_entropy_grad: GradFn,
}

impl Default for Implementations {
    fn default() -> Self {
        Self {
            iou: osod_core::geometry::iou,
            average_precision,
            softmax_cross_entropy_grad,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub invariant: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub detail: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tracker {
    result: CheckResult,
}

impl Tracker {
    fn new(name: &'static str, invariant: &'static str) -> Self {
        Self {
            result: CheckResult {
                name,
                invariant,
                cases: 0,
                failures: 0,
                detail: None,
            },
        }
    }

    fn case(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        self.result.cases += 1;
        if !ok {
            self.result.failures += 1;
            if self.result.detail.is_none() {
                self.result.detail = Some(detail());
            }
        }
    }
}

pub const IOU_CASES: usize = 1000;
pub const AP_CASES: usize = 200;
pub const GRAD_CASES: usize = 100;

pub fn random_int_box(rng: &mut impl Rng, hi: u32) -> BBox {
    let (a, b) = (rng.gen_range(0..=hi), rng.gen_range(0..=hi));
    let (c, d) = (rng.gen_range(0..=hi), rng.gen_range(0..=hi));
    BBox::new(a.min(b) as f64, c.min(d) as f64, a.max(b) as f64, c.max(d) as f64)
}

pub fn check_iou(iou: IouFn, seed: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new("iou", "IoU equals the rasterized overlap ratio within 1e-9");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let a = random_int_box(&mut rng, 64);
        let b = random_int_box(&mut rng, 64);
        let (got, want) = (iou(&a, &b), raster_iou(&a, &b));
        t.case((got - want).abs() <= 1e-9, || {
            format!("{a:?} vs {b:?}: {got} != {want}")
        });
    }
    t.result
}

/// One class, one image: up to 8 detections with distinct scores and up to
/// 4 ground-truth boxes.
pub struct ApInstance {
    pub dets: Vec<(BBox, f64)>,
    pub gt: Vec<BBox>,
}

pub fn random_ap_instance(rng: &mut impl Rng) -> ApInstance {
    let n_gt = rng.gen_range(1..=4);
    let n_det = rng.gen_range(0..=8);
    let gt: Vec<BBox> = (0..n_gt).map(|_| random_int_box(rng, 12)).collect();
    let mut dets: Vec<(BBox, f64)> = Vec::with_capacity(n_det);
    while dets.len() < n_det {
        let s: f64 = rng.gen();
        if dets.iter().any(|d| d.1 == s) {
            continue;
        }
        // Half the detections are jittered copies of a GT box.
        let b = if rng.gen_bool(0.5) {
            let g = gt[rng.gen_range(0..gt.len())];
            let dx = rng.gen_range(-1..=1) as f64;
            BBox::new(g.x_min + dx, g.y_min, g.x_max + dx, g.y_max)
        } else {
            random_int_box(rng, 12)
        };
        dets.push((b, s));
    }
    dets.sort_by(|a, b| b.1.total_cmp(&a.1));
    ApInstance { dets, gt }
}

/// Library path: greedy matching, tally, PR curve, AP.
pub fn library_ap(inst: &ApInstance, ap: ApFn, variant: ApVariant) -> Option<f64> {
    let boxes: Vec<BBox> = inst.dets.iter().map(|d| d.0).collect();
    let gt: Vec<GtBox> = inst.gt.iter().map(|&bbox| GtBox { bbox, crowd: false }).collect();
    let outcomes = greedy_match(&boxes, &gt, &[], 0.5);
    let rows = outcomes
        .iter()
        .enumerate()
        .map(|(order, &outcome)| TallyRow {
            score: inst.dets[order].1,
            order,
            outcome,
        })
        .collect();
    ClassTally::new(rows, inst.gt.len()).pr_curve().map(|c| ap(&c, variant))
}

pub fn oracle_ap(inst: &ApInstance, variant: ApVariant) -> Option<f64> {
    let boxes: Vec<BBox> = inst.dets.iter().map(|d| d.0).collect();
    let scores: Vec<f64> = inst.dets.iter().map(|d| d.1).collect();
    let tp = greedy_tp(&boxes, &inst.gt, 0.5);
    sweep_ap(&scores, &tp, inst.gt.len(), variant)
}

pub fn check_average_precision(ap: ApFn, seed: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new(
        "average_precision",
        "AP (voc07 and area) equals the exhaustive threshold-sweep oracle exactly",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        let inst = random_ap_instance(&mut rng);
        for variant in [ApVariant::Voc07, ApVariant::Area] {
            let (got, want) = (library_ap(&inst, ap, variant), oracle_ap(&inst, variant));
            t.case(got == want, || {
                format!("instance {i} ({variant:?}): {got:?} != {want:?}")
            });
        }
    }
    t.result
}

/// All tallies with TP in 1..=10, FP_K in 0..=9, FP_U in 0..=4.
pub fn wi_tallies() -> Vec<TallyCounts> {
    let mut out = Vec::with_capacity(500);
    for tp in 1..=10 {
        for fp_known in 0..=9 {
            for fp_unknown in 0..=4 {
                out.push(TallyCounts {
                    tp,
                    fp_known,
                    fp_unknown,
                });
            }
        }
    }
    out
}

pub fn check_wi_identity() -> CheckResult {
    let mut t = Tracker::new(
        "wilderness_impact",
        "100(P_K/P_KU - 1) equals 100 FP_U/(TP+FP_K) within 1e-9, and is 0 without FP_U",
    );
    for c in wi_tallies() {
        let (dual, direct) = (wi_precision_ratio(&c), wi_identity(&c));
        let zero_ok = c.fp_unknown > 0 || direct == 0.0;
        t.case((dual - direct).abs() <= 1e-9 && zero_ok, || {
            format!("{c:?}: {dual} vs {direct}")
        });
    }
    t.result
}

fn random_distribution(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn check_gradients(grad: GradFn, seed: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new(
        "softmax_cross_entropy_grad",
        "gradient equals softmax(o) - q within 1e-12 and central differences (h=1e-6) within relative error 1e-4",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        let k = rng.gen_range(2..=12);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let q = random_distribution(&mut rng, k);
        let g = match grad(&logits, &q) {
            Ok(g) => g,
            Err(e) => {
                t.case(false, || format!("instance {i}: {e}"));
                continue;
            }
        };
        let p = naive_softmax(&logits);
        let closed = g
            .iter()
            .zip(p.iter().zip(&q))
            .map(|(g, (p, q))| (g - (p - q)).abs())
            .fold(0.0, f64::max);
        let numeric = central_difference(|x| softmax_cross_entropy(x, &q).expect("finite loss"), &logits, 1e-6);
        let rel = max_relative_error(&g, &numeric);
        t.case(closed <= 1e-12 && rel < 1e-4, || {
            format!("instance {i}: |g-(p-q)| = {closed:e}, finite-difference rel err = {rel:e}")
        });
    }
    t.result
}

pub fn check_smooth_l1_knee() -> CheckResult {
    let mut t = Tracker::new(
        "smooth_l1",
        "smooth-L1 value and gradient are continuous across the knee |d| = beta",
    );
    for beta in [0.5, 1.0, 2.0] {
        for sign in [1.0, -1.0] {
            let eps = 1e-9;
            let pair = |d: f64| RegressionPair {
                pred: [d, 0.0, 0.0, 0.0],
                target: [0.0; 4],
            };
            let (lo, hi) = (pair(sign * (beta - eps)), pair(sign * (beta + eps)));
            let dv = (smooth_l1(&lo, beta) - smooth_l1(&hi, beta)).abs();
            let dg = (smooth_l1_grad(&lo, beta)[0] - smooth_l1_grad(&hi, beta)[0]).abs();
            t.case(dv <= 1e-8 && dg <= 1e-8, || {
                format!("beta {beta}, side {sign}: jump {dv:e} / {dg:e}")
            });
        }
    }
    t.result
}

pub fn check_soft_labels(seed: u64, cases: usize) -> CheckResult {
    let mut t = Tracker::new(
        "soft_label",
        "labels sum to 1 within 1e-12, known mass is 0, e(0.8, 0.25) = 0.6 and boundaries are exact",
    );
    let space = CategorySpace::new(vec![1, 2, 3], [], None).expect("valid space");
    let e = UncertaintyCombinator::E;
    let point = e.unknown_mass(0.8, 0.25);
    t.case((point - 0.6).abs() <= 1e-12, || format!("e(0.8, 0.25) = {point}"));
    for comb in UncertaintyCombinator::ALL {
        let (full, none) = (comb.unknown_mass(1.0, 0.0), comb.unknown_mass(0.0, 0.7));
        t.case(full == 1.0 && none == 0.0, || {
            format!("{}: boundaries {full} / {none}", comb.label())
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let (o, u): (f64, f64) = (rng.gen(), rng.gen());
        for comb in UncertaintyCombinator::ALL {
            let l = soft_label(o, u, comb, &space).expect("in-range inputs");
            let ok = (l.sum() - 1.0).abs() <= 1e-12 && l.known_mass() == 0.0;
            t.case(ok, || format!("{}({o}, {u}) sums to {}", comb.label(), l.sum()));
        }
    }
    t.result
}

pub fn run(impls: &Implementations, seed: u64) -> Vec<CheckResult> {
    vec![
        check_iou(impls.iou, seed, IOU_CASES),
        check_average_precision(impls.average_precision, seed, AP_CASES),
        check_wi_identity(),
        check_gradients(impls.softmax_cross_entropy_grad, seed, GRAD_CASES),
        check_smooth_l1_knee(),
        check_soft_labels(seed, 10_000),
    ]
}

/// Builds a curve by hand for unit tests of injected AP functions.
pub fn curve_from_flags(flags: &[bool], num_gt: usize) -> PrCurve {
    let rows = flags
        .iter()
        .enumerate()
        .map(|(order, &tp)| TallyRow {
            score: 1.0 - order as f64 / (flags.len() + 1) as f64,
            order,
            outcome: if tp {
                MatchOutcome::TruePositive
            } else {
                MatchOutcome::FalsePositiveKnown
            },
        })
        .collect();
    ClassTally::new(rows, num_gt).pr_curve().expect("num_gt > 0")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_passes_every_check() {
        for r in run(&Implementations::default(), 0) {
            assert!(r.passed(), "{r:?}");
        }
    }

    fn broken_ap(curve: &PrCurve, variant: ApVariant) -> f64 {
        // Drops the recall-0 sample point.
        match variant {
            ApVariant::Voc07 => {
                let mut total = 0.0;
                for t in 1..=10 {
                    let level = t as f64 / 10.0;
                    total += curve
                        .recall
                        .iter()
                        .zip(&curve.precision)
                        .filter(|(r, _)| **r >= level)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max);
                }
                100.0 * total / 11.0
            }
            ApVariant::Area => average_precision(curve, variant),
        }
    }

    #[test]
    fn mutated_ap_is_caught_and_named() {
        let impls = Implementations {
            average_precision: broken_ap,
            ..Implementations::default()
        };
        let failed: Vec<&str> = run(&impls, 0).iter().filter(|r| !r.passed()).map(|r| r.name).collect();
        assert_eq!(failed, ["average_precision"]);
    }

    #[test]
    fn mutated_iou_is_caught() {
        fn sloppy(a: &BBox, b: &BBox) -> f64 {
            a.intersection_area(b) / (a.area() + b.area())
        }
        assert!(!check_iou(sloppy, 1, 100).passed());
    }

    #[test]
    fn curve_helper() {
        let c = curve_from_flags(&[true, false, true], 2);
        assert_eq!(c.precision, [1.0, 0.5, 2.0 / 3.0]);
    }
}
