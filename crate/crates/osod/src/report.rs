//! Report artifacts. Numbers are written with six decimals and fields in a
//! fixed order so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use osod_core::metrics::{AoseMode, ApVariant, EmbeddingStats, EvalReport, PrCurve, WiVariant};
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::Value;

use crate::error::Result;
use crate::io::write_bytes;

pub const FORMAT_VERSION: &str = "osod-report/1";

/// Everything that determines a run, echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RunConfig {
    pub subcommand: String,
    pub inputs: BTreeMap<String, String>,
    pub space: Option<String>,
    pub thresholds: BTreeMap<String, f64>,
    pub ap_variant: Option<String>,
    pub wi_variant: Option<String>,
    pub options: BTreeMap<String, Value>,
    pub seed: Option<u64>,
    pub out: String,
}

impl RunConfig {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}

pub fn ap_variant_name(v: ApVariant) -> &'static str {
    match v {
        ApVariant::Voc07 => "voc07",
        ApVariant::Area => "area",
    }
}

pub fn wi_variant_name(v: WiVariant) -> &'static str {
    match v {
        WiVariant::PerClass => "per-class",
        WiVariant::Pooled => "pooled",
    }
}

pub fn aose_mode_name(m: AoseMode) -> &'static str {
    match m {
        AoseMode::PerClassConsumption => "consumption",
        AoseMode::RawCount => "raw",
    }
}

pub fn fixed(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:.6}");
        // Avoid "-0.000000".
        if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
            return format!("{:.6}", 0.0);
        }
        s
    } else {
        String::from("null")
    }
}

pub fn num(x: f64) -> Box<RawValue> {
    RawValue::from_string(fixed(x)).expect("valid number literal")
}

pub fn opt_num(x: Option<f64>) -> Box<RawValue> {
    x.map_or_else(|| RawValue::from_string("null".into()).expect("null literal"), num)
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(fixed).unwrap_or_default()
}

#[derive(Serialize)]
struct Summary {
    map_known: Box<RawValue>,
    wilderness_impact: Box<RawValue>,
    aose: usize,
    unknown_ap: Box<RawValue>,
    unknown_recall: Box<RawValue>,
    num_unknown_gt: usize,
    num_detections: usize,
    num_images: usize,
}

#[derive(Serialize)]
struct ClassRow {
    slot: usize,
    category_id: u64,
    name: String,
    num_gt: usize,
    num_detections: usize,
    ap: Box<RawValue>,
    tp: usize,
    fp_known: usize,
    fp_unknown: usize,
    wi: Box<RawValue>,
}

#[derive(Serialize)]
struct EmbeddingSummary {
    intra_class_variance: Box<RawValue>,
    inter_class_distance: Box<RawValue>,
    per_class_variance: BTreeMap<String, Box<RawValue>>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    format_version: &'static str,
    run_config: &'a RunConfig,
    summary: Summary,
    per_class: Vec<ClassRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embeddings: Option<EmbeddingSummary>,
    notes: &'a [String],
}

/// Inputs to the report writer beyond the metric report itself.
pub struct ReportContext<'a> {
    pub run: &'a RunConfig,
    pub names: &'a BTreeMap<u64, String>,
    pub num_detections: usize,
    pub num_images: usize,
    pub embeddings: Option<&'a EmbeddingStats>,
}

pub fn report_json(report: &EvalReport, ctx: &ReportContext) -> String {
    let body = ReportJson {
        format_version: FORMAT_VERSION,
        run_config: ctx.run,
        summary: Summary {
            map_known: num(report.map_known),
            wilderness_impact: opt_num(report.wilderness_impact),
            aose: report.aose,
            unknown_ap: opt_num(report.unknown_ap),
            unknown_recall: opt_num(report.unknown_recall),
            num_unknown_gt: report.num_unknown_gt,
            num_detections: ctx.num_detections,
            num_images: ctx.num_images,
        },
        per_class: report
            .per_class
            .iter()
            .map(|c| ClassRow {
                slot: c.slot,
                category_id: c.category_id,
                name: ctx.names.get(&c.category_id).cloned().unwrap_or_default(),
                num_gt: c.num_gt,
                num_detections: c.num_detections,
                ap: opt_num(c.ap),
                tp: c.counts.tp,
                fp_known: c.counts.fp_known,
                fp_unknown: c.counts.fp_unknown,
                wi: opt_num(c.wi),
            })
            .collect(),
        embeddings: ctx.embeddings.map(|e| EmbeddingSummary {
            intra_class_variance: num(e.intra_class_variance),
            inter_class_distance: num(e.inter_class_distance),
            per_class_variance: e.per_class_variance.iter().map(|(k, v)| (k.clone(), num(*v))).collect(),
        }),
        notes: &report.notes,
    };
    let mut s = serde_json::to_string_pretty(&body).expect("report serializes");
    s.push('\n');
    s
}

fn csv_header(run: &RunConfig) -> String {
    format!(
        "# format_version={FORMAT_VERSION}\n# run_config={}\n",
        run.to_json_line()
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(report: &EvalReport, ctx: &ReportContext) -> String {
    let mut s = csv_header(ctx.run);
    s.push_str("metric,value\n");
    let rows = [
        ("map_known", fixed(report.map_known)),
        ("wilderness_impact", csv_opt(report.wilderness_impact)),
        ("aose", report.aose.to_string()),
        ("unknown_ap", csv_opt(report.unknown_ap)),
        ("unknown_recall", csv_opt(report.unknown_recall)),
        ("num_unknown_gt", report.num_unknown_gt.to_string()),
        ("num_detections", ctx.num_detections.to_string()),
        ("num_images", ctx.num_images.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    if let Some(e) = ctx.embeddings {
        let _ = writeln!(s, "intra_class_variance,{}", fixed(e.intra_class_variance));
        let _ = writeln!(s, "inter_class_distance,{}", fixed(e.inter_class_distance));
    }
    s
}

pub fn per_class_csv(report: &EvalReport, ctx: &ReportContext) -> String {
    let mut s = csv_header(ctx.run);
    s.push_str("slot,category_id,name,num_gt,num_detections,ap,tp,fp_known,fp_unknown,wi\n");
    for c in &report.per_class {
        let name = ctx.names.get(&c.category_id).map(String::as_str).unwrap_or("");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            c.slot,
            c.category_id,
            csv_field(name),
            c.num_gt,
            c.num_detections,
            csv_opt(c.ap),
            c.counts.tp,
            c.counts.fp_known,
            c.counts.fp_unknown,
            csv_opt(c.wi)
        );
    }
    s
}

fn push_curve(s: &mut String, class: &str, category_id: &str, curve: &PrCurve) {
    for i in 0..curve.recall.len() {
        let _ = writeln!(
            s,
            "{class},{category_id},{},{},{},{},{}",
            i + 1,
            fixed(curve.scores[i]),
            fixed(curve.recall[i]),
            fixed(curve.precision[i]),
            curve.is_tp[i] as u8
        );
    }
}

pub fn pr_curves_csv(report: &EvalReport, ctx: &ReportContext) -> String {
    let mut s = csv_header(ctx.run);
    s.push_str("class,category_id,rank,score,recall,precision,is_tp\n");
    for (slot, curve) in &report.known_curves {
        let id = report.per_class[*slot].category_id;
        let name = ctx.names.get(&id).map(String::as_str).unwrap_or("");
        push_curve(&mut s, &csv_field(name), &id.to_string(), curve);
    }
    if let Some(curve) = &report.unknown_curve {
        push_curve(&mut s, "unknown", "", curve);
    }
    s
}

/// Writes report.json, report.csv, per_class.csv and pr_curves.csv.
pub fn write_report(dir: &Path, report: &EvalReport, ctx: &ReportContext) -> Result<()> {
    write_bytes(&dir.join("report.json"), report_json(report, ctx).as_bytes())?;
    write_bytes(&dir.join("report.csv"), report_csv(report, ctx).as_bytes())?;
    write_bytes(&dir.join("per_class.csv"), per_class_csv(report, ctx).as_bytes())?;
    write_bytes(&dir.join("pr_curves.csv"), pr_curves_csv(report, ctx).as_bytes())?;
    Ok(())
}

fn two(x: Option<f64>) -> String {
    x.map_or_else(|| String::from("n/a"), |v| format!("{v:.2}"))
}

/// Two-decimal summary table for the terminal.
pub fn summary_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let rows = [
        ("mAP (known)", two(Some(report.map_known))),
        ("WI", two(report.wilderness_impact)),
        ("A-OSE", report.aose.to_string()),
        ("U-AP", two(report.unknown_ap)),
        ("U-Recall", two(report.unknown_recall)),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<12} {v:>10}");
    }
    s
}
