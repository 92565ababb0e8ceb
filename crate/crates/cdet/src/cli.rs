//! Command-line front end: dataset generation, training, inference,
//! evaluation, error analysis, anchor dumps, ablation runs, and latency
//! benchmarks.
//!
//! Settings resolve in precedence order: command-line flag, then config
//! file, then the CDET_SEED environment variable (seeds only), then
//! built-in defaults. Config files are TOML with [network], [train],
//! [data], and [eval] sections, any subset present, unknown keys rejected.
//! Every command prints the configuration it resolved before doing work.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::generate;
use crate::data::{
    generate_dataset, load_annotations, load_dataset, load_image, Annotation, Dataset,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, mean_average_precision, render_fp_analysis, render_pr_points, render_report,
    ClassGroups, EvalOptions,
};
use crate::microdiff::{ops, ParameterStore, Tensor};
use crate::network::{Network, NetworkConfig};
use crate::pipeline::{
    detect_dataset, infer, infer_traced, load_checkpoint, load_detections, save_checkpoint,
    save_detections, train, write_train_log, DetectionRecord, InferTrace, TrainConfig,
};

/// Environment variable consulted when neither a flag nor a config file
/// supplies a seed.
pub const SEED_ENV: &str = "CDET_SEED";

/// Evaluation knobs as they appear in the [eval] config section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    /// 11-point interpolated AP instead of the all-points integral.
    pub eleven_point: bool,
    /// Similar-class groups for false positive analysis; empty means every
    /// foreground class is similar to every other.
    pub similar_groups: Vec<Vec<usize>>,
}

impl Default for EvalSettings {
    fn default() -> EvalSettings {
        EvalSettings {
            iou_threshold: 0.5,
            eleven_point: false,
            similar_groups: Vec::new(),
        }
    }
}

/// Merged view of everything a run can configure, one optional TOML
/// section per concern.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub eval: EvalSettings,
}

/// Which config sections the file actually contained, so overrides and
/// seed fallbacks know what the file really said.
#[derive(Clone, Copy, Debug, Default)]
pub struct SectionFlags {
    pub network: bool,
    pub train: bool,
    pub data: bool,
    pub eval: bool,
    pub train_seed: bool,
    pub data_seed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedConfig {
    pub run: RunConfig,
    pub sections: SectionFlags,
}

pub fn load_run_config(path: Option<&Path>) -> Result<LoadedConfig> {
    let Some(path) = path else {
        return Ok(LoadedConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |e: toml::de::Error| Error::config(format!("{}: {e}", path.display()));
    let run: RunConfig = toml::from_str(&text).map_err(parse_err)?;
    let value: toml::Value = toml::from_str(&text).map_err(parse_err)?;
    let section = |name: &str| value.get(name).is_some();
    let has_seed = |name: &str| value.get(name).and_then(|s| s.get("seed")).is_some();
    Ok(LoadedConfig {
        run,
        sections: SectionFlags {
            network: section("network"),
            train: section("train"),
            data: section("data"),
            eval: section("eval"),
            train_seed: has_seed("train"),
            data_seed: has_seed("data"),
        },
    })
}

/// Seed precedence: explicit flag, then the config file, then CDET_SEED,
/// then zero.
pub fn resolve_seed(flag: Option<u64>, from_file: Option<u64>) -> Result<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    if let Some(seed) = from_file {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            Error::config(format!("{SEED_ENV} is not an unsigned integer: {raw:?}"))
        }),
        Err(_) => Ok(0),
    }
}

/// Prints one resolved config section as TOML, so runs are self-describing
/// and the output can be fed back in as a config file.
fn echo_section<T: Serialize>(name: &str, value: &T) {
    match toml::to_string(value) {
        Ok(body) => print!("[{name}]\n{body}"),
        Err(err) => eprintln!("could not render [{name}] config: {err}"),
    }
}

/// Anchor-refinement shape detector: synthetic data, training, two-step
/// inference, and evaluation from one binary.
#[derive(Debug, Parser)]
#[command(name = "cdet", version)]
pub struct Cli {
    /// TOML config file with [network], [train], [data], [eval] sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Cap worker threads; defaults to all available cores.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic shape dataset into a directory.
    GenData(GenDataArgs),
    /// Train a detector on a generated dataset.
    Train(TrainArgs),
    /// Detect objects in one image or a whole dataset.
    Infer(InferArgs),
    /// Score a detections file against ground truth annotations.
    Eval(EvalArgs),
    /// Break false positives down by error type.
    Analyze(AnalyzeArgs),
    /// Print every anchor record for an image size.
    Anchors(AnchorsArgs),
    /// Train all architecture variants and compare their mAP.
    Ablate(AblateArgs),
    /// Measure per-op and end-to-end inference latency.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Base seed for image generation.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of images to render.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image size as WxH.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<(usize, usize)>,
    /// Shape classes to draw from (1..=3).
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory from gen-data.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Checkpoint output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-step loss log (JSON lines); defaults to the checkpoint path
    /// with a .log extension.
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total SGD steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Images per step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Constant learning rate, replacing the schedule.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Negative-confidence threshold for anchor filtering.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Disable anchor filtering.
    #[arg(long)]
    pub no_filtering: bool,
    /// Disable the refinement cascade; the second stage matches raw
    /// anchors.
    #[arg(long)]
    pub no_cascade: bool,
    /// Disable the fusion blocks and the whole second stage (implies
    /// --no-cascade and --no-filtering).
    #[arg(long)]
    pub no_tcb: bool,
    /// Disable flip and crop augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Whether training-time filtering may also drop positive anchors the
    /// first stage scores as confident background (default true).
    #[arg(long, value_name = "BOOL")]
    pub filter_positives: Option<bool>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Trained checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Image file (PGM/PPM) or dataset directory.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Detections output file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Print cascade stage counts per image.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Detections file from infer.
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Annotations file or dataset directory.
    #[arg(long, value_name = "PATH")]
    pub annotations: PathBuf,
    /// Also write the report to this file.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Write per-class precision-recall points into this directory.
    #[arg(long, value_name = "DIR")]
    pub pr_dir: Option<PathBuf>,
    /// Matching iou threshold.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Use 11-point interpolated AP.
    #[arg(long)]
    pub eleven_point: bool,
    /// Total class count including background; inferred from the data
    /// when absent.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Similar-class groups like "1,2;3".
    #[arg(long, value_parser = parse_groups, value_name = "GROUPS")]
    pub similar: Option<GroupSpec>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Detections file from infer.
    #[arg(long, value_name = "FILE")]
    pub detections: PathBuf,
    /// Annotations file or dataset directory.
    #[arg(long, value_name = "PATH")]
    pub annotations: PathBuf,
    /// Also write the analysis to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Matching iou threshold.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Total class count including background; inferred from the data
    /// when absent.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Similar-class groups like "1,2;3".
    #[arg(long, value_parser = parse_groups, value_name = "GROUPS")]
    pub similar: Option<GroupSpec>,
}

#[derive(Args, Debug)]
pub struct AnchorsArgs {
    /// Image size as WxH; 320x320 unless a config file sets one.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<(usize, usize)>,
    /// Print only the anchor count.
    #[arg(long)]
    pub count_only: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Training dataset directory.
    #[arg(long, value_name = "DIR")]
    pub train_data: PathBuf,
    /// Held-out evaluation dataset directory.
    #[arg(long, value_name = "DIR")]
    pub test_data: PathBuf,
    /// Seeds trained per variant; the median is reported.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Base seed; runs use base, base+1, ...
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total SGD steps per run.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Images per step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Matching iou threshold for the mAP column.
    #[arg(long)]
    pub iou: Option<f64>,
    /// Whether training-time filtering may also drop positive anchors the
    /// first stage scores as confident background (default true).
    #[arg(long, value_name = "BOOL")]
    pub filter_positives: Option<bool>,
    /// Also write the comparison table to this file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Repetitions per measurement.
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Image size as WxH; defaults to the network config.
    #[arg(long, value_parser = parse_size, value_name = "WxH")]
    pub size: Option<(usize, usize)>,
    /// Seed for the synthetic inputs.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        // Ignored when a pool already exists (e.g. under a test harness).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let loaded = load_run_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(args) => run_gen_data(&loaded, &args),
        Command::Train(args) => run_train(&loaded, &args),
        Command::Infer(args) => run_infer(&args),
        Command::Eval(args) => run_eval(&loaded, &args),
        Command::Analyze(args) => run_analyze(&loaded, &args),
        Command::Anchors(args) => run_anchors(&loaded, &args),
        Command::Ablate(args) => run_ablate(&loaded, &args),
        Command::Bench(args) => run_bench(&loaded, &args),
    }
}

fn run_gen_data(loaded: &LoadedConfig, args: &GenDataArgs) -> Result<()> {
    let mut spec = loaded.run.data.clone();
    if let Some(count) = args.count {
        spec.image_count = count;
    }
    if let Some(size) = args.size {
        spec.image_size = size;
    }
    if let Some(classes) = args.classes {
        spec.num_shape_classes = classes;
    }
    spec.seed = resolve_seed(
        args.seed,
        loaded.sections.data_seed.then(|| loaded.run.data.seed),
    )?;
    spec.validate()?;
    echo_section("data", &spec);
    let annotations = generate_dataset(&spec, &args.out)?;
    if let Ok(body) = toml::to_string(&spec) {
        let path = args.out.join("spec.toml");
        fs::write(&path, format!("[data]\n{body}")).map_err(|e| Error::io(&path, e))?;
    }
    let objects: usize = annotations.iter().map(|a| a.objects.len()).sum();
    println!(
        "wrote {} images ({objects} objects) to {}",
        annotations.len(),
        args.out.display()
    );
    Ok(())
}

/// Network sized for the dataset when no [network] section pins one.
fn network_for_dataset(loaded: &LoadedConfig, dataset: &Dataset) -> Result<NetworkConfig> {
    if loaded.sections.network {
        return Ok(loaded.run.network.clone());
    }
    let ann = dataset
        .annotations
        .first()
        .ok_or_else(|| Error::config("dataset has no images"))?;
    let max_label = dataset
        .annotations
        .iter()
        .flat_map(|a| a.objects.iter().map(|o| o.class_id))
        .max()
        .unwrap_or(1);
    Ok(NetworkConfig::with_defaults(
        (ann.width, ann.height),
        (max_label + 1).max(2),
    ))
}

fn run_train(loaded: &LoadedConfig, args: &TrainArgs) -> Result<()> {
    let dataset = load_dataset(&args.data)?;
    let mut net_cfg = network_for_dataset(loaded, &dataset)?;
    let mut tc = if loaded.sections.train {
        loaded.run.train.clone()
    } else {
        TrainConfig::for_network(&net_cfg)
    };
    if let Some(theta) = args.theta {
        net_cfg.theta = theta;
        tc.theta = theta;
    }
    if args.no_filtering {
        net_cfg.filtering_enabled = false;
        tc.filtering_enabled = false;
    }
    if args.no_cascade {
        net_cfg.cascade_enabled = false;
        tc.cascade_enabled = false;
    }
    if args.no_tcb {
        // A single-stage network has nothing to cascade or filter.
        net_cfg.tcb_enabled = false;
        net_cfg.cascade_enabled = false;
        net_cfg.filtering_enabled = false;
        tc.tcb_enabled = false;
        tc.cascade_enabled = false;
        tc.filtering_enabled = false;
    }
    if let Some(steps) = args.steps {
        tc.max_steps = steps;
    }
    if let Some(batch) = args.batch {
        tc.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        tc.lr_schedule = vec![(0, lr)];
    }
    if args.no_augment {
        tc.augment = false;
    }
    if let Some(fp) = args.filter_positives {
        tc.filter_positives = fp;
    }
    tc.seed = resolve_seed(
        args.seed,
        loaded.sections.train_seed.then(|| loaded.run.train.seed),
    )?;
    net_cfg.validate()?;
    tc.validate()?;
    echo_section("network", &net_cfg);
    echo_section("train", &tc);

    let mut store = ParameterStore::new();
    let net = Network::build(net_cfg, &mut store)?;
    net.init_params(&mut store, tc.seed);
    let records = train(&net, &mut store, &dataset, &tc)?;
    save_checkpoint(&args.out, &net, &store)?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| args.out.with_extension("log"));
    write_train_log(&log_path, &records)?;
    match (records.first(), records.last()) {
        (Some(first), Some(last)) => println!(
            "trained {} steps on {} images; loss {:.6} -> {:.6}",
            records.len(),
            dataset.len(),
            first.loss.total,
            last.loss.total
        ),
        _ => println!("trained 0 steps; saved initial parameters"),
    }
    println!("checkpoint: {}", args.out.display());
    println!("train log: {}", log_path.display());
    Ok(())
}

fn print_trace(image_id: u64, trace: &InferTrace) {
    println!(
        "image {image_id}: anchors {} second-stage {} scored {} top-k {} nms {} emitted {}",
        trace.anchors_total,
        trace.entered_second_stage,
        trace.candidates_scored,
        trace.after_top_k,
        trace.after_nms,
        trace.emitted
    );
}

fn run_infer(args: &InferArgs) -> Result<()> {
    let (net, store) = load_checkpoint(&args.checkpoint)?;
    echo_section("network", &net.cfg);
    let (records, image_count) = if args.input.is_dir() {
        let dataset = load_dataset(&args.input)?;
        let count = dataset.len();
        let records = if args.trace {
            let mut out = Vec::new();
            for (image, ann) in dataset.images.iter().zip(&dataset.annotations) {
                let (dets, trace) = infer_traced(&net, &store, image)?;
                print_trace(ann.image_id, &trace);
                out.extend(dets.into_iter().map(|detection| DetectionRecord {
                    image_id: ann.image_id,
                    detection,
                }));
            }
            out
        } else {
            detect_dataset(&net, &store, &dataset)?
        };
        (records, count)
    } else {
        let image = load_image(&args.input)?;
        let (dets, trace) = infer_traced(&net, &store, &image)?;
        if args.trace {
            print_trace(0, &trace);
        }
        let records = dets
            .into_iter()
            .map(|detection| DetectionRecord {
                image_id: 0,
                detection,
            })
            .collect();
        (records, 1)
    };
    save_detections(&args.out, &records)?;
    println!(
        "wrote {} detections for {image_count} images to {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

/// Validated similar-class groups; an empty list means all classes are
/// similar.
fn build_groups(num_classes: usize, groups: &[Vec<usize>]) -> Result<ClassGroups> {
    if groups.is_empty() {
        return Ok(ClassGroups::all_similar(num_classes));
    }
    let mut seen = HashSet::new();
    for group in groups {
        for &id in group {
            if id == 0 || id >= num_classes {
                return Err(Error::config(format!(
                    "similar group class id {id} is outside 1..{num_classes}"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::config(format!(
                    "class id {id} appears in two similar groups"
                )));
            }
        }
    }
    Ok(ClassGroups::from_groups(num_classes, groups))
}

struct EvalRun {
    dets: Vec<DetectionRecord>,
    gts: Vec<Annotation>,
    num_classes: usize,
    settings: EvalSettings,
    opts: EvalOptions,
}

fn resolve_eval_run(
    loaded: &LoadedConfig,
    detections: &Path,
    annotations: &Path,
    iou: Option<f64>,
    eleven_point: bool,
    classes: Option<usize>,
    similar: Option<&GroupSpec>,
) -> Result<EvalRun> {
    let dets = load_detections(detections)?;
    let ann_path = if annotations.is_dir() {
        annotations.join("annotations.txt")
    } else {
        annotations.to_path_buf()
    };
    let gts = load_annotations(&ann_path)?;
    let num_classes = match classes {
        Some(c) => c,
        None => {
            let max_id = dets
                .iter()
                .map(|r| r.detection.class_id)
                .chain(gts.iter().flat_map(|a| a.objects.iter().map(|o| o.class_id)))
                .max()
                .unwrap_or(1);
            max_id + 1
        }
    };
    if num_classes < 2 {
        return Err(Error::config("need at least one foreground class"));
    }
    let mut settings = loaded.run.eval.clone();
    if let Some(iou) = iou {
        settings.iou_threshold = iou;
    }
    if eleven_point {
        settings.eleven_point = true;
    }
    if let Some(GroupSpec(groups)) = similar {
        settings.similar_groups = groups.clone();
    }
    if !(settings.iou_threshold > 0.0 && settings.iou_threshold <= 1.0) {
        return Err(Error::config("iou threshold must be in (0, 1]"));
    }
    let groups = build_groups(num_classes, &settings.similar_groups)?;
    let opts = EvalOptions {
        iou_threshold: settings.iou_threshold,
        eleven_point: settings.eleven_point,
        groups,
    };
    Ok(EvalRun {
        dets,
        gts,
        num_classes,
        settings,
        opts,
    })
}

fn run_eval(loaded: &LoadedConfig, args: &EvalArgs) -> Result<()> {
    let run = resolve_eval_run(
        loaded,
        &args.detections,
        &args.annotations,
        args.iou,
        args.eleven_point,
        args.classes,
        args.similar.as_ref(),
    )?;
    echo_section("eval", &run.settings);
    let report = evaluate(&run.dets, &run.gts, run.num_classes, &run.opts);
    let text = render_report(&report);
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = &args.pr_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for class in &report.per_class {
            if class.skipped {
                continue;
            }
            let path = dir.join(format!("pr_class_{}.txt", class.class_id));
            fs::write(&path, render_pr_points(&class.pr)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn run_analyze(loaded: &LoadedConfig, args: &AnalyzeArgs) -> Result<()> {
    let run = resolve_eval_run(
        loaded,
        &args.detections,
        &args.annotations,
        args.iou,
        false,
        args.classes,
        args.similar.as_ref(),
    )?;
    echo_section("eval", &run.settings);
    let report = evaluate(&run.dets, &run.gts, run.num_classes, &run.opts);
    let text = render_fp_analysis(&report);
    print!("{text}");
    if let Some(path) = &args.out {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_anchors(loaded: &LoadedConfig, args: &AnchorsArgs) -> Result<()> {
    let mut spec = loaded.run.network.anchor_spec();
    if let Some(size) = args.size {
        spec.image_size = size;
    } else if !loaded.sections.network {
        spec.image_size = (320, 320);
    }
    let grid = generate(&spec)?;
    // Config echo goes to stderr so stdout carries records only.
    eprintln!(
        "anchors: {} for {}x{}, strides {:?}, scale multiplier {}, ratios {:?}",
        grid.len(),
        spec.image_size.0,
        spec.image_size.1,
        spec.strides,
        spec.scale_multiplier,
        spec.aspect_ratios
    );
    if args.count_only {
        println!("{}", grid.len());
        return Ok(());
    }
    let mut out = String::new();
    for (b, p) in grid.boxes.iter().zip(&grid.provenance) {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.level, p.row, p.col, p.ratio_index, b.xmin, b.ymin, b.xmax, b.ymax
        );
    }
    print!("{out}");
    Ok(())
}

/// One row of the comparison ladder: the architecture switches to apply
/// and the name shown in the table.
#[derive(Clone, Copy, Debug)]
pub struct AblationVariant {
    pub name: &'static str,
    pub filtering_enabled: bool,
    pub cascade_enabled: bool,
    pub tcb_enabled: bool,
}

impl AblationVariant {
    /// Applies the switches to both configs, keeping them in agreement.
    pub fn apply(&self, cfg: &mut NetworkConfig, tc: &mut TrainConfig) {
        cfg.filtering_enabled = self.filtering_enabled;
        cfg.cascade_enabled = self.cascade_enabled;
        cfg.tcb_enabled = self.tcb_enabled;
        tc.filtering_enabled = self.filtering_enabled;
        tc.cascade_enabled = self.cascade_enabled;
        tc.tcb_enabled = self.tcb_enabled;
    }
}

/// The comparison ladder; each variant removes one more mechanism, so
/// adjacent rows differ by exactly one switch.
pub fn ablation_variants() -> [AblationVariant; 4] {
    [
        AblationVariant {
            name: "full",
            filtering_enabled: true,
            cascade_enabled: true,
            tcb_enabled: true,
        },
        AblationVariant {
            name: "no filtering",
            filtering_enabled: false,
            cascade_enabled: true,
            tcb_enabled: true,
        },
        AblationVariant {
            name: "no filtering, no cascade",
            filtering_enabled: false,
            cascade_enabled: false,
            tcb_enabled: true,
        },
        AblationVariant {
            name: "no filtering, no cascade, no tcb",
            filtering_enabled: false,
            cascade_enabled: false,
            tcb_enabled: false,
        },
    ]
}

/// mAP per variant over a set of seeds, on a shared train/test split.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: &'static str,
    pub per_seed: Vec<f64>,
    pub median: f64,
}

pub fn run_ablation(
    train_data: &Dataset,
    test_data: &Dataset,
    base_cfg: &NetworkConfig,
    base_tc: &TrainConfig,
    seeds: &[u64],
    iou_threshold: f64,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in ablation_variants() {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut cfg = base_cfg.clone();
            let mut tc = base_tc.clone();
            variant.apply(&mut cfg, &mut tc);
            tc.seed = seed;
            cfg.validate()?;
            let mut store = ParameterStore::new();
            let net = Network::build(cfg, &mut store)?;
            net.init_params(&mut store, seed);
            train(&net, &mut store, train_data, &tc)?;
            let dets = detect_dataset(&net, &store, test_data)?;
            per_seed.push(mean_average_precision(
                &dets,
                &test_data.annotations,
                net.cfg.num_classes,
                iou_threshold,
            ));
        }
        let med = median(&per_seed);
        rows.push(AblationRow {
            name: variant.name,
            per_seed,
            median: med,
        });
    }
    Ok(rows)
}

/// Fixed-width comparison table, one variant per row.
pub fn render_ablation_table(rows: &[AblationRow], iou_threshold: f64) -> String {
    let seeds = rows.first().map_or(0, |r| r.per_seed.len()).max(1);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "ablation comparison: mAP@{iou_threshold:.2}, median over {seeds} seeds"
    );
    let _ = writeln!(s, "{:<34}{:<w$}median", "variant", "per-seed", w = 8 * seeds);
    for row in rows {
        let joined: String = row.per_seed.iter().map(|v| format!("{v:7.4} ")).collect();
        let _ = writeln!(s, "{:<34}{joined:<w$}{:7.4}", row.name, row.median, w = 8 * seeds);
    }
    s
}

/// Median of an unordered sample; even counts average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn run_ablate(loaded: &LoadedConfig, args: &AblateArgs) -> Result<()> {
    if args.seeds == 0 {
        return Err(Error::config("--seeds must be at least 1"));
    }
    let train_data = load_dataset(&args.train_data)?;
    let test_data = load_dataset(&args.test_data)?;
    let mut cfg = network_for_dataset(loaded, &train_data)?;
    let mut tc = if loaded.sections.train {
        loaded.run.train.clone()
    } else {
        TrainConfig::for_network(&cfg)
    };
    if let Some(steps) = args.steps {
        tc.max_steps = steps;
    }
    if let Some(batch) = args.batch {
        tc.batch_size = batch;
    }
    if let Some(fp) = args.filter_positives {
        tc.filter_positives = fp;
    }
    let base_seed = resolve_seed(
        args.seed,
        loaded.sections.train_seed.then(|| loaded.run.train.seed),
    )?;
    let iou = args.iou.unwrap_or(loaded.run.eval.iou_threshold);
    // The ladder starts from the full architecture regardless of any
    // switches in the config file.
    let full = ablation_variants()[0];
    full.apply(&mut cfg, &mut tc);
    cfg.validate()?;
    tc.validate()?;
    echo_section("network", &cfg);
    echo_section("train", &tc);
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|i| base_seed + i).collect();
    let rows = run_ablation(&train_data, &test_data, &cfg, &tc, &seeds, iou)?;
    let table = render_ablation_table(&rows, iou);
    print!("{table}");
    if let Some(path) = &args.out {
        fs::write(path, &table).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_data(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Nearest-rank percentile of an ascending sample.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// One timed sample per rep after a warmup call, in milliseconds.
fn measure<F: FnMut()>(reps: usize, mut f: F) -> Vec<f64> {
    f();
    (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect()
}

fn bench_row(label: &str, samples: &mut [f64]) -> String {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    format!(
        "{:<30}{:>10.3}{:>10.3}{:>10.3}",
        label,
        mean,
        percentile(samples, 50.0),
        percentile(samples, 99.0)
    )
}

fn run_bench(loaded: &LoadedConfig, args: &BenchArgs) -> Result<()> {
    if args.reps == 0 {
        return Err(Error::config("--reps must be at least 1"));
    }
    let mut cfg = loaded.run.network.clone();
    if let Some(size) = args.size {
        cfg.image_size = size;
    }
    cfg.validate()?;
    let seed = resolve_seed(args.seed, None)?;
    echo_section("network", &cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = cfg.image_size;
    let s0 = cfg.strides[0];
    let (h0, w0) = (h / s0, w / s0);
    let (c_in, c_out) = (16, 24);
    let x = rand_tensor(&mut rng, &[c_in, h0, w0]);
    let wc = rand_tensor(&mut rng, &[c_out, c_in, 3, 3]);
    let bc = rand_tensor(&mut rng, &[c_out]);
    let (hd, wd) = ((h0 / 2).max(1), (w0 / 2).max(1));
    let xd = rand_tensor(&mut rng, &[c_in, hd, wd]);
    let wdk = rand_tensor(&mut rng, &[c_in, c_in, 2, 2]);
    let scale = rand_tensor(&mut rng, &[c_in]);
    let logits: Vec<f64> = (0..1024 * cfg.num_classes)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();

    let mut rows = vec![
        (
            format!("conv3x3 {c_in}->{c_out} @ {w0}x{h0}"),
            measure(args.reps, || {
                std::hint::black_box(ops::conv3x3_forward(&x, &wc, &bc, 1));
            }),
        ),
        (
            format!("deconv2x {c_in}->{c_in} @ {wd}x{hd}"),
            measure(args.reps, || {
                std::hint::black_box(ops::deconv2x_forward(&xd, &wdk));
            }),
        ),
        (
            format!("relu {c_in} @ {w0}x{h0}"),
            measure(args.reps, || {
                std::hint::black_box(ops::relu_forward(&x));
            }),
        ),
        (
            format!("l2norm {c_in} @ {w0}x{h0}"),
            measure(args.reps, || {
                std::hint::black_box(ops::l2norm_scale_forward(&x, &scale));
            }),
        ),
        (
            format!("softmax 1024x{}", cfg.num_classes),
            measure(args.reps, || {
                for chunk in logits.chunks(cfg.num_classes) {
                    std::hint::black_box(ops::softmax(chunk));
                }
            }),
        ),
    ];

    let mut store = ParameterStore::new();
    let net = Network::build(cfg.clone(), &mut store)?;
    net.init_params(&mut store, seed);
    let image = Tensor::from_data(
        &[cfg.image_channels, h, w],
        (0..cfg.image_channels * h * w)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect(),
    );
    // Surface errors once; the measured closure then runs the same pure
    // call, so unwrap cannot fire.
    infer(&net, &store, &image)?;
    rows.push((
        format!("end-to-end infer @ {w}x{h}"),
        measure(args.reps, || {
            std::hint::black_box(infer(&net, &store, &image).unwrap());
        }),
    ));

    let mut report = String::new();
    let _ = writeln!(report, "latency over {} reps (ms)", args.reps);
    let _ = writeln!(report, "{:<30}{:>10}{:>10}{:>10}", "op", "mean", "p50", "p99");
    for (label, samples) in &mut rows {
        let _ = writeln!(report, "{}", bench_row(label, samples));
    }
    print!("{report}");
    Ok(())
}

/// Parses WxH image sizes for command-line flags.
fn parse_size(raw: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = raw
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {raw:?}"))?;
    let parse = |part: &str| {
        part.trim()
            .parse::<usize>()
            .map_err(|_| format!("bad dimension {:?}", part.trim()))
    };
    let (w, h) = (parse(w)?, parse(h)?);
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

/// Similar-class groups like `1,2;3`: semicolons between groups, commas
/// between class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSpec(pub Vec<Vec<usize>>);

fn parse_groups(raw: &str) -> std::result::Result<GroupSpec, String> {
    let mut groups = Vec::new();
    for part in raw.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let mut group = Vec::new();
        for id in part.split(',') {
            let id = id.trim();
            group.push(
                id.parse::<usize>()
                    .map_err(|_| format!("bad class id {id:?}"))?,
            );
        }
        groups.push(group);
    }
    if groups.is_empty() {
        return Err("no groups given".into());
    }
    Ok(GroupSpec(groups))
}
