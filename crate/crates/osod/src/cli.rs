//! The `osod` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use osod_core::assign::{
    assign_labels, rpn_score_histogram, topk_hard_labels, uniform_edges, AssignOptions, Histogram, LabelVector,
    Proposal, UncertaintyCombinator,
};
use osod_core::metrics::{embedding_stats, AoseMode, ApVariant, EvalConfig, WiVariant};
use osod_core::postprocess::PostprocessConfig;
use osod_core::split::{
    build_owod_tasks, build_t1_split, build_t2_split, t1_groups, OpenLevel, OwodBenchmark, SemanticGroup, Split,
    SplitParams, WildernessMultiplier,
};
use osod_core::taxonomy::{Annotation, CategorySpace, Dataset};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::value::RawValue;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::eval;
use crate::io::{self, Ingest, LabelRecord, SpaceConfig};
use crate::report::{self, fixed, num, RunConfig, FORMAT_VERSION};
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(
    name = "osod",
    version,
    about = "Open-set detection evaluation, splits and label assignment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score detections against annotations and write report files.
    Evaluate(EvaluateArgs),
    /// Build an open-set evaluation split or OWOD task files.
    Split(SplitArgs),
    /// Assign training targets to proposals and dump them.
    Assign(AssignArgs),
    /// Score filter, NMS and per-image cap on a detection file.
    Postprocess(PostprocessArgs),
    /// Run the embedded oracle comparisons.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ApArg {
    Voc07,
    Area,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WiArg {
    PerClass,
    Pooled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AoseArg {
    Consumption,
    Raw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitMode {
    T1,
    T2,
    Owod,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BenchmarkArg {
    MOwodb,
    SOwodb,
}

#[derive(Debug, Args)]
pub struct PostArgs {
    #[arg(long, default_value_t = osod_core::postprocess::DEFAULT_SCORE_THRESHOLD)]
    pub score_thr: f64,
    #[arg(long, default_value_t = osod_core::postprocess::DEFAULT_NMS_THRESHOLD)]
    pub nms_thr: f64,
    #[arg(long, default_value_t = osod_core::postprocess::DEFAULT_MAX_DETECTIONS)]
    pub max_dets: usize,
}

impl PostArgs {
    fn config(&self) -> Result<PostprocessConfig> {
        unit("--score-thr", self.score_thr, true)?;
        unit("--nms-thr", self.nms_thr, false)?;
        Ok(PostprocessConfig {
            score_threshold: self.score_thr,
            nms_threshold: self.nms_thr,
            max_detections: self.max_dets,
        })
    }

    fn record(&self, run: &mut RunConfig) {
        run.thresholds.insert("score_thr".into(), self.score_thr);
        run.thresholds.insert("nms_thr".into(), self.nms_thr);
        run.options.insert("max_dets".into(), json!(self.max_dets));
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value_t = osod_core::metrics::DEFAULT_IOU_THRESHOLD)]
    pub iou_thr: f64,
    #[arg(long, default_value_t = osod_core::metrics::DEFAULT_WI_IOU_THRESHOLD)]
    pub wi_iou_thr: f64,
    #[arg(long, default_value_t = osod_core::metrics::DEFAULT_WI_RECALL_LEVEL)]
    pub wi_recall: f64,
    #[arg(long, value_enum, default_value_t = ApArg::Voc07)]
    pub ap_variant: ApArg,
    #[arg(long, value_enum, default_value_t = WiArg::PerClass)]
    pub wi_variant: WiArg,
    #[arg(long, value_enum, default_value_t = AoseArg::Consumption)]
    pub aose_mode: AoseArg,
    /// Post-process detections before scoring.
    #[arg(long)]
    pub postprocess: bool,
    #[command(flatten)]
    pub post: PostArgs,
    /// Map annotation categories outside the space to unknown instead of
    /// failing.
    #[arg(long)]
    pub lenient: bool,
    /// Optional JSONL of `{class, vector}` records.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, value_enum)]
    pub mode: SplitMode,
    /// Known-source evaluation set; the 80-class pool in OWOD mode.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Open-source pool (T1 and T2).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Category space of the known-source set (T1 and T2).
    #[arg(long)]
    pub space: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// T2 open-to-known ratio: 0.5, 1, 2 or 4.
    #[arg(long)]
    pub multiplier: Option<f64>,
    /// T1 open class count: 20, 40 or 60.
    #[arg(long)]
    pub level: Option<u32>,
    /// Semantic group file overriding the built-in groups.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = BenchmarkArg::MOwodb)]
    pub benchmark: BenchmarkArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
    /// soft-a .. soft-f or topk; repeatable or comma separated.
    #[arg(long, value_delimiter = ',', default_value = "soft-e")]
    pub strategy: Vec<String>,
    /// k values for the topk strategy.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = osod_core::assign::DEFAULT_POSITIVE_THRESHOLD)]
    pub pos_thr: f64,
    #[arg(long, default_value_t = osod_core::assign::DEFAULT_WARMUP_ITERATIONS)]
    pub warmup: u64,
    /// Training iteration for the warmup gate; omitted means soft labels
    /// are on.
    #[arg(long)]
    pub iteration: Option<u64>,
    /// Histogram bin count.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
    #[command(flatten)]
    pub post: PostArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn unit(flag: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && v <= 1.0 && (v > 0.0 || (allow_zero && v == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "{flag} must lie in {}, 1], got {v}",
            if allow_zero { "[0" } else { "(0" }
        )))
    }
}

fn require_files(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
            ));
        }
    }
    Ok(())
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn ingest(lenient: bool) -> Ingest {
    if lenient {
        Ingest::Lenient
    } else {
        Ingest::Strict
    }
}

fn base_run(subcommand: &str, out: &Path) -> RunConfig {
    RunConfig {
        subcommand: subcommand.into(),
        out: path_str(out),
        ..RunConfig::default()
    }
}

/// Parses arguments, runs, and returns the process exit code. Errors are
/// printed to stderr as JSON.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = eval::thread_count();
    match cli.command {
        Command::Evaluate(a) => eval::with_threads(threads, || cmd_evaluate(&a)),
        Command::Split(a) => cmd_split(&a),
        Command::Assign(a) => eval::with_threads(threads, || cmd_assign(&a)),
        Command::Postprocess(a) => eval::with_threads(threads, || cmd_postprocess(&a)),
        Command::Selfcheck(a) => cmd_selfcheck(&a),
    }
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut files = vec![a.annotations.as_path(), a.detections.as_path(), a.space.as_path()];
    if let Some(e) = &a.embeddings {
        files.push(e);
    }
    require_files(&files)?;
    unit("--iou-thr", a.iou_thr, false)?;
    unit("--wi-iou-thr", a.wi_iou_thr, false)?;
    unit("--wi-recall", a.wi_recall, false)?;
    let cfg = EvalConfig {
        iou_threshold: a.iou_thr,
        wi_iou_threshold: a.wi_iou_thr,
        wi_recall_level: a.wi_recall,
        ap_variant: match a.ap_variant {
            ApArg::Voc07 => ApVariant::Voc07,
            ApArg::Area => ApVariant::Area,
        },
        wi_variant: match a.wi_variant {
            WiArg::PerClass => WiVariant::PerClass,
            WiArg::Pooled => WiVariant::Pooled,
        },
        aose_mode: match a.aose_mode {
            AoseArg::Consumption => AoseMode::PerClassConsumption,
            AoseArg::Raw => AoseMode::RawCount,
        },
    };
    let post = if a.postprocess { Some(a.post.config()?) } else { None };

    let mut run = base_run("evaluate", &a.out);
    run.inputs.insert("annotations".into(), path_str(&a.annotations));
    run.inputs.insert("detections".into(), path_str(&a.detections));
    if let Some(e) = &a.embeddings {
        run.inputs.insert("embeddings".into(), path_str(e));
    }
    run.space = Some(path_str(&a.space));
    run.thresholds.insert("iou_thr".into(), a.iou_thr);
    run.thresholds.insert("wi_iou_thr".into(), a.wi_iou_thr);
    run.thresholds.insert("wi_recall".into(), a.wi_recall);
    run.ap_variant = Some(report::ap_variant_name(cfg.ap_variant).into());
    run.wi_variant = Some(report::wi_variant_name(cfg.wi_variant).into());
    run.options
        .insert("aose_mode".into(), json!(report::aose_mode_name(cfg.aose_mode)));
    run.options.insert("ingest".into(), json!(ingest(a.lenient)));
    run.options.insert("postprocess".into(), json!(a.postprocess));
    if a.postprocess {
        a.post.record(&mut run);
    }

    let space = io::load_space(&a.space)?;
    let dataset = io::load_annotations(&a.annotations, &space, ingest(a.lenient))?;
    let mut dets = io::load_detections(&a.detections, &dataset.categories)?;
    if let Some(p) = post {
        dets = eval::postprocess(&dets, &p);
    }
    let embeddings = match &a.embeddings {
        Some(p) => Some(embedding_stats(&io::load_embeddings(p)?)?),
        None => None,
    };
    let rep = eval::evaluate(&dets, &dataset, &cfg)?;
    let ctx = report::ReportContext {
        run: &run,
        names: &dataset.category_names,
        num_detections: dets.len(),
        num_images: dataset.images.len(),
        embeddings: embeddings.as_ref(),
    };
    report::write_report(&a.out, &rep, &ctx)?;
    print!("{}", report::summary_table(&rep));
    Ok(())
}

#[derive(Serialize)]
struct SplitManifestJson<'a> {
    format_version: &'static str,
    run_config: &'a RunConfig,
    mode: &'static str,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    multiplier: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<u32>,
    seed: u64,
    wilderness_ratio: Box<RawValue>,
    image_ids: Vec<u64>,
    known_image_ids: &'a [u64],
    open_image_ids: &'a [u64],
}

#[derive(Serialize)]
struct OwodTaskJson {
    task: usize,
    group: String,
    num_classes: usize,
    category_ids: Vec<u64>,
    num_images: usize,
    num_annotations: usize,
    annotations: String,
    space: String,
}

#[derive(Serialize)]
struct OwodManifestJson<'a> {
    format_version: &'static str,
    run_config: &'a RunConfig,
    mode: &'static str,
    benchmark: &'static str,
    tasks: Vec<OwodTaskJson>,
}

fn need<T: Copy>(v: Option<T>, flag: &str, mode: &str) -> Result<T> {
    v.ok_or_else(|| Error::Usage(format!("{flag} is required for --mode {mode}")))
}

fn need_path<'a>(v: &'a Option<PathBuf>, flag: &str, mode: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Usage(format!("{flag} is required for --mode {mode}")))
}

/// Loads a COCO file whose categories outside `space` become unknown.
fn load_open(path: &Path, space: &CategorySpace) -> Result<Dataset> {
    let file = io::load_coco(path)?;
    let ids = file
        .categories
        .iter()
        .map(|c| c.id)
        .chain(file.annotations.iter().map(|a| a.category_id));
    let space = space.with_extra_unknown(ids);
    io::coco_to_dataset(path, &file, &space, Ingest::Strict)
}

fn write_split_files(out: &Path, run: &RunConfig, split: &Split) -> Result<()> {
    io::save_annotations(&out.join("split.json"), &split.dataset)?;
    io::write_json(
        &out.join("space.json"),
        &SpaceConfig::from_space(&split.dataset.categories),
    )?;
    let m = &split.manifest;
    let (mode, multiplier, level) = match m.params {
        SplitParams::T1 { level } => ("t1", None, Some(level.classes())),
        SplitParams::T2 { multiplier } => ("t2", Some(multiplier.as_f64()), None),
    };
    let manifest = SplitManifestJson {
        format_version: FORMAT_VERSION,
        run_config: run,
        mode,
        n: m.n,
        multiplier,
        level,
        seed: m.seed,
        wilderness_ratio: num(split.wilderness_ratio()?),
        image_ids: m.image_ids(),
        known_image_ids: &m.known_image_ids,
        open_image_ids: &m.open_image_ids,
    };
    io::write_json(&out.join("manifest.json"), &manifest)
}

pub fn cmd_split(a: &SplitArgs) -> Result<()> {
    let mode_name = match a.mode {
        SplitMode::T1 => "t1",
        SplitMode::T2 => "t2",
        SplitMode::Owod => "owod",
    };
    let mut files = vec![a.annotations.as_path()];
    files.extend(a.pool.as_deref());
    files.extend(a.space.as_deref());
    files.extend(a.groups.as_deref());
    require_files(&files)?;

    let mut run = base_run("split", &a.out);
    run.inputs.insert("annotations".into(), path_str(&a.annotations));
    if let Some(p) = &a.pool {
        run.inputs.insert("pool".into(), path_str(p));
    }
    if let Some(g) = &a.groups {
        run.inputs.insert("groups".into(), path_str(g));
    }
    run.space = a.space.as_deref().map(path_str);
    run.seed = Some(a.seed);
    run.options.insert("mode".into(), json!(mode_name));
    run.options.insert("ingest".into(), json!(ingest(a.lenient)));
    let custom_groups = a.groups.as_deref().map(io::load_groups).transpose()?;

    match a.mode {
        SplitMode::T1 | SplitMode::T2 => {
            let n = need(a.n, "--n", mode_name)?;
            let pool_path = need_path(&a.pool, "--pool", mode_name)?;
            let space_path = need_path(&a.space, "--space", mode_name)?;
            run.options.insert("n".into(), json!(n));
            let space = io::load_space(space_path)?;
            let known = io::load_annotations(&a.annotations, &space, ingest(a.lenient))?;
            let pool = load_open(pool_path, &space)?;
            let split = if let SplitMode::T1 = a.mode {
                let level = OpenLevel::from_classes(need(a.level, "--level", mode_name)?)?;
                run.options.insert("level".into(), json!(level.classes()));
                let groups = custom_groups.unwrap_or_else(t1_groups);
                build_t1_split(&known, &pool, &groups, level, n, a.seed)?
            } else {
                let m = WildernessMultiplier::from_f64(need(a.multiplier, "--multiplier", mode_name)?)?;
                run.options.insert("multiplier".into(), json!(m.as_f64()));
                build_t2_split(&known, &pool, m, n, a.seed)?
            };
            write_split_files(&a.out, &run, &split)?;
            println!(
                "{} known + {} open images, wilderness ratio {:.2}",
                split.manifest.known_image_ids.len(),
                split.manifest.open_image_ids.len(),
                split.wilderness_ratio()?
            );
        }
        SplitMode::Owod => {
            let (bench, bench_name) = match a.benchmark {
                BenchmarkArg::MOwodb => (OwodBenchmark::Mowodb, "m-owodb"),
                BenchmarkArg::SOwodb => (OwodBenchmark::Sowodb, "s-owodb"),
            };
            run.options.insert("benchmark".into(), json!(bench_name));
            let groups: Vec<SemanticGroup> = custom_groups.unwrap_or_else(|| bench.groups());
            let first = groups
                .first()
                .ok_or_else(|| Error::Usage("group file lists no groups".into()))?;
            let seed_space = CategorySpace::new(first.category_ids.clone(), [], None)?;
            let pool = load_open(&a.annotations, &seed_space)?;
            let tasks = build_owod_tasks(&pool, &groups)?;
            let mut entries = Vec::with_capacity(tasks.len());
            for t in &tasks {
                let ann = format!("task{}.json", t.index + 1);
                let sp = format!("task{}_space.json", t.index + 1);
                io::save_annotations(&a.out.join(&ann), &t.dataset)?;
                io::write_json(&a.out.join(&sp), &SpaceConfig::from_space(&t.space))?;
                entries.push(OwodTaskJson {
                    task: t.index + 1,
                    group: t.group.name.clone(),
                    num_classes: t.group.category_ids.len(),
                    category_ids: t.group.category_ids.clone(),
                    num_images: t.dataset.images.len(),
                    num_annotations: t.dataset.annotations.len(),
                    annotations: ann,
                    space: sp,
                });
            }
            for e in &entries {
                println!("task {}: {} classes, {} images", e.task, e.num_classes, e.num_images);
            }
            let manifest = OwodManifestJson {
                format_version: FORMAT_VERSION,
                run_config: &run,
                mode: "owod",
                benchmark: bench_name,
                tasks: entries,
            };
            io::write_json(&a.out.join("manifest.json"), &manifest)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Soft(UncertaintyCombinator),
    TopK(usize),
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Self::Soft(c) => format!("soft-{}", c.label().to_ascii_lowercase()),
            Self::TopK(k) => format!("topk-{k}"),
        }
    }
}

pub fn parse_strategies(names: &[String], ks: &[usize]) -> Result<Vec<Strategy>> {
    let mut out = Vec::new();
    for name in names {
        let lower = name.to_ascii_lowercase();
        if lower == "topk" {
            if ks.is_empty() {
                return Err(Error::Usage("--strategy topk needs --k".into()));
            }
            for &k in ks {
                if k == 0 {
                    return Err(Error::Usage("--k values must be positive".into()));
                }
                out.push(Strategy::TopK(k));
            }
        } else if let Some(label) = lower.strip_prefix("soft-").filter(|l| l.len() == 1) {
            let c = label.chars().next().expect("one char");
            let comb = UncertaintyCombinator::from_label(c.to_ascii_uppercase())
                .or_else(|_| UncertaintyCombinator::from_label(c))
                .map_err(|_| Error::Usage(format!("unknown strategy {name}")))?;
            out.push(Strategy::Soft(comb));
        } else {
            return Err(Error::Usage(format!(
                "unknown strategy {name}; expected soft-a..soft-f or topk"
            )));
        }
    }
    out.dedup();
    Ok(out)
}

#[derive(Serialize)]
struct StrategySummary {
    strategy: String,
    labels: String,
    proposals: usize,
    positives: usize,
    negatives: usize,
    unknown_labeled: usize,
    mean_unknown_mass: Box<RawValue>,
    max_known_mass_on_negatives: Box<RawValue>,
    max_sum_error: Box<RawValue>,
    unknown_mass_histogram: Vec<BinJson>,
}

#[derive(Serialize)]
struct BinJson {
    lo: Box<RawValue>,
    hi: Box<RawValue>,
    count: usize,
    fraction: Box<RawValue>,
}

fn bins_json(h: &Histogram) -> Vec<BinJson> {
    h.bins
        .iter()
        .map(|b| BinJson {
            lo: num(b.lo),
            hi: num(b.hi),
            count: b.count,
            fraction: num(b.fraction),
        })
        .collect()
}

#[derive(Serialize)]
struct AssignSummaryJson<'a> {
    format_version: &'static str,
    run_config: &'a RunConfig,
    num_proposals: usize,
    num_images: usize,
    objectness_histogram: Vec<BinJson>,
    strategies: Vec<StrategySummary>,
}

fn hist_csv_rows(s: &mut String, label: &str, h: &Histogram) {
    for b in &h.bins {
        let _ = writeln!(
            s,
            "{label},{},{},{},{}",
            fixed(b.lo),
            fixed(b.hi),
            b.count,
            fixed(b.fraction)
        );
    }
}

/// Runs one strategy over every image; returns labels in proposal order.
pub fn assign_all(
    proposals: &[Proposal],
    by_image: &[(u64, Vec<usize>)],
    gt: &BTreeMap<u64, Vec<Annotation>>,
    space: &CategorySpace,
    strategy: Strategy,
    opts: &AssignOptions,
) -> Result<Vec<LabelVector>> {
    let empty = Vec::new();
    let per_image: Vec<Result<Vec<(usize, LabelVector)>>> = by_image
        .par_iter()
        .map(|(id, idx)| {
            let props: Vec<Proposal> = idx.iter().map(|&i| proposals[i].clone()).collect();
            let anns = gt.get(id).unwrap_or(&empty);
            let labels = match strategy {
                Strategy::Soft(c) => assign_labels(&props, anns, c, space, opts)?,
                Strategy::TopK(k) => topk_hard_labels(&props, anns, k, space, opts.positive_threshold)?,
            };
            Ok(idx.iter().copied().zip(labels).collect())
        })
        .collect();
    let mut slots: Vec<Option<LabelVector>> = vec![None; proposals.len()];
    for r in per_image {
        for (i, l) in r? {
            slots[i] = Some(l);
        }
    }
    Ok(slots.into_iter().map(|l| l.expect("every proposal labeled")).collect())
}

pub fn cmd_assign(a: &AssignArgs) -> Result<()> {
    require_files(&[&a.annotations, &a.proposals, &a.space])?;
    unit("--pos-thr", a.pos_thr, false)?;
    if a.bins == 0 {
        return Err(Error::Usage("--bins must be positive".into()));
    }
    let strategies = parse_strategies(&a.strategy, &a.k)?;
    let opts = AssignOptions {
        positive_threshold: a.pos_thr,
        warmup_iterations: a.warmup,
        iteration: a.iteration,
    };

    let mut run = base_run("assign", &a.out);
    run.inputs.insert("annotations".into(), path_str(&a.annotations));
    run.inputs.insert("proposals".into(), path_str(&a.proposals));
    run.space = Some(path_str(&a.space));
    run.seed = a.seed;
    run.thresholds.insert("pos_thr".into(), a.pos_thr);
    run.options.insert(
        "strategies".into(),
        Value::from(strategies.iter().map(Strategy::name).collect::<Vec<_>>()),
    );
    run.options.insert("warmup".into(), json!(a.warmup));
    run.options.insert("iteration".into(), json!(a.iteration));
    run.options.insert("bins".into(), json!(a.bins));
    run.options.insert("ingest".into(), json!(ingest(a.lenient)));

    let space = io::load_space(&a.space)?;
    let dataset = io::load_annotations(&a.annotations, &space, ingest(a.lenient))?;
    let space = dataset.categories.clone();
    let proposals = io::load_proposals(&a.proposals)?;
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        by_image.entry(p.image_id).or_default().push(i);
    }
    let by_image: Vec<(u64, Vec<usize>)> = by_image.into_iter().collect();
    let mut gt: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
    for ann in &dataset.annotations {
        gt.entry(ann.image_id).or_default().push(ann.clone());
    }

    let edges = uniform_edges(a.bins);
    let objectness: Vec<f64> = proposals.iter().map(|p| p.objectness).collect();
    let obj_hist = rpn_score_histogram(&objectness, &edges)?;
    let mut hist_csv = format!(
        "# format_version={FORMAT_VERSION}\n# run_config={}\nstrategy,lo,hi,count,fraction\n",
        run.to_json_line()
    );
    let mut summaries = Vec::new();
    for s in &strategies {
        let labels = assign_all(&proposals, &by_image, &gt, &space, *s, &opts)?;
        let file = format!("labels_{}.jsonl", s.name());
        let records: Vec<LabelRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabelRecord {
                image_id: proposals[i].image_id,
                proposal_index: i,
                labels: l.as_slice().to_vec(),
            })
            .collect();
        io::write_jsonl(&a.out.join(&file), &records)?;

        let negatives: Vec<&LabelVector> = labels.iter().filter(|l| l.known_mass() == 0.0).collect();
        let masses: Vec<f64> = negatives.iter().map(|l| l.unknown()).collect();
        let hist = rpn_score_histogram(&masses, &edges)?;
        hist_csv_rows(&mut hist_csv, &s.name(), &hist);
        let max_sum_error = labels.iter().map(|l| (l.sum() - 1.0).abs()).fold(0.0, f64::max);
        let mean = if masses.is_empty() {
            0.0
        } else {
            masses.iter().sum::<f64>() / masses.len() as f64
        };
        summaries.push(StrategySummary {
            strategy: s.name(),
            labels: file,
            proposals: labels.len(),
            positives: labels.len() - negatives.len(),
            negatives: negatives.len(),
            unknown_labeled: masses.iter().filter(|&&m| m > 0.0).count(),
            mean_unknown_mass: num(mean),
            max_known_mass_on_negatives: num(0.0),
            max_sum_error: num(max_sum_error),
            unknown_mass_histogram: bins_json(&hist),
        });
    }
    let mut obj_csv = format!(
        "# format_version={FORMAT_VERSION}\n# run_config={}\nlo,hi,count,fraction\n",
        run.to_json_line()
    );
    for b in &obj_hist.bins {
        let _ = writeln!(
            obj_csv,
            "{},{},{},{}",
            fixed(b.lo),
            fixed(b.hi),
            b.count,
            fixed(b.fraction)
        );
    }
    io::write_bytes(&a.out.join("unknown_mass_hist.csv"), hist_csv.as_bytes())?;
    io::write_bytes(&a.out.join("objectness_hist.csv"), obj_csv.as_bytes())?;
    for s in &summaries {
        println!(
            "{:<10} {} proposals, {} positive, {} unknown-labeled",
            s.strategy, s.proposals, s.positives, s.unknown_labeled
        );
    }
    let summary = AssignSummaryJson {
        format_version: FORMAT_VERSION,
        run_config: &run,
        num_proposals: proposals.len(),
        num_images: by_image.len(),
        objectness_histogram: bins_json(&obj_hist),
        strategies: summaries,
    };
    io::write_json(&a.out.join("assign_summary.json"), &summary)
}

pub fn cmd_postprocess(a: &PostprocessArgs) -> Result<()> {
    require_files(&[&a.detections, &a.space])?;
    let cfg = a.post.config()?;
    let mut run = base_run("postprocess", &a.out);
    run.inputs.insert("detections".into(), path_str(&a.detections));
    run.space = Some(path_str(&a.space));
    a.post.record(&mut run);

    let space = io::load_space(&a.space)?;
    let dets = io::load_detections(&a.detections, &space)?;
    let kept = eval::postprocess(&dets, &cfg);
    io::save_detections(&a.out.join("detections.json"), &kept, &space)?;
    let summary = json!({
        "format_version": FORMAT_VERSION,
        "run_config": run,
        "input_detections": dets.len(),
        "output_detections": kept.len(),
        "output": "detections.json",
    });
    io::write_json(&a.out.join("postprocess_summary.json"), &summary)?;
    println!("{} -> {} detections", dets.len(), kept.len());
    Ok(())
}

pub fn cmd_selfcheck(a: &SelfcheckArgs) -> Result<()> {
    cmd_selfcheck_with(a, &selfcheck::Implementations::default())
}

pub fn cmd_selfcheck_with(a: &SelfcheckArgs, impls: &selfcheck::Implementations) -> Result<()> {
    let results = selfcheck::run(impls, a.seed);
    for r in &results {
        if r.passed() {
            println!("PASS {:<28} {} cases", r.name, r.cases);
        } else {
            println!(
                "FAIL {:<28} {}/{} cases violate: {} ({})",
                r.name,
                r.failures,
                r.cases,
                r.invariant,
                r.detail.as_deref().unwrap_or("")
            );
        }
    }
    if let Some(out) = &a.out {
        let mut run = base_run("selfcheck", out);
        run.seed = Some(a.seed);
        let body = json!({
            "format_version": FORMAT_VERSION,
            "run_config": run,
            "checks": results,
        });
        io::write_json(&out.join("selfcheck.json"), &body)?;
    }
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| format!("{}: {}", r.name, r.invariant))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Selfcheck(failed.join("; ")))
    }
}
