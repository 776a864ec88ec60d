//! Command implementations behind the `milab` binary: JSON config in,
//! files out. Every output embeds the hash of the effective config, and
//! all writes go through temp-and-rename so failures leave no partial
//! artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{stable_sigmoid, Tensor};
use crate::checkpoint;
use crate::credit::{contribution_map_from_nc, shapley_enumerate, ShapleyMode, ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport, LinearityRow};
use crate::fileio::{check_writable_dir, config_hash, write_atomic, write_atomic_set};
use crate::metrics::PrCurve;
use crate::model::{Composition, MilConfig, MilModel};
use crate::pgm::encode_pgm;
use crate::dataset_io;
use crate::synth::{generate, partition_bags, sample_bags, GenConfig, SlideDataset, Split};
use crate::train::{train, TrainConfig, TrainHistory};

pub const CHECKPOINT_FILE: &str = "checkpoint.milab";
pub const HISTORY_FILE: &str = "history.json";
pub const REPORT_FILE: &str = "report.json";
pub const VERIFICATION_FILE: &str = "shapley_verification.json";
pub const SHAPLEY_TOLERANCE: f64 = 1e-8;

pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

// ---- gen -----------------------------------------------------------------

pub fn cmd_gen(mut config: GenConfig, out_dir: &Path, seed: Option<u64>) -> Result<String> {
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    check_writable_dir(out_dir)?;
    let dataset = generate(&config)?;
    dataset_io::save(&dataset, out_dir)?;
    Ok(format!(
        "wrote {} slides, {} canonical bags, {} instances (d={}, c={}) to {}",
        dataset.slides.len(),
        dataset.slides.len() * config.bags_per_slide,
        dataset.total_instances(),
        config.instance_dim,
        config.num_classes,
        out_dir.display()
    ))
}

// ---- train ---------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCommand {
    pub dataset_dir: PathBuf,
    pub model: MilConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

#[derive(Serialize)]
struct HistoryDocument<'a> {
    config_hash: String,
    model: &'a MilConfig,
    train: &'a TrainConfig,
    dataset_dir: String,
    history: &'a TrainHistory,
}

pub fn cmd_train(mut config: TrainCommand, out_dir: &Path, seed: Option<u64>) -> Result<String> {
    if let Some(s) = seed {
        config.train.seed = s;
    }
    config.model.validate()?;
    config.train.validate()?;
    check_writable_dir(out_dir)?;
    let dataset = dataset_io::load(&config.dataset_dir)?;
    if config.model.input_dim != dataset.config.instance_dim {
        return Err(Error::Config(format!(
            "model input_dim {} does not match dataset instance_dim {}",
            config.model.input_dim, dataset.config.instance_dim
        )));
    }
    if config.model.num_classes != dataset.config.num_classes {
        return Err(Error::Config(format!(
            "model num_classes {} does not match dataset num_classes {}",
            config.model.num_classes, dataset.config.num_classes
        )));
    }

    let mut model = MilModel::init(config.model.clone(), config.train.seed)?;
    let history = if config.train.epochs == 0 {
        TrainHistory {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_accuracy: 0.0,
            stopped_early: false,
        }
    } else {
        train(&mut model, &dataset, &config.train)?
    };

    let hash = train_command_hash(&config)?;
    let mut ckpt_bytes = Vec::new();
    checkpoint::write_to(&model, &mut ckpt_bytes)?;
    let doc = HistoryDocument {
        config_hash: hash,
        model: &config.model,
        train: &config.train,
        dataset_dir: config.dataset_dir.display().to_string(),
        history: &history,
    };
    write_atomic_set(&[
        (out_dir.join(CHECKPOINT_FILE), ckpt_bytes),
        (out_dir.join(HISTORY_FILE), serde_json::to_vec_pretty(&doc)?),
    ])?;
    Ok(format!(
        "trained {} epochs (best val accuracy {:.4} at epoch {}), checkpoint at {}",
        history.epochs.len(),
        history.best_val_accuracy,
        history.best_epoch,
        out_dir.join(CHECKPOINT_FILE).display()
    ))
}

fn train_command_hash(config: &TrainCommand) -> Result<String> {
    config_hash(&json!({
        "dataset_dir": config.dataset_dir.display().to_string(),
        "model": config.model,
        "train": config.train,
    }))
}

// ---- eval ----------------------------------------------------------------

fn default_split() -> Split {
    Split::Test
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCommand {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    #[serde(default = "default_split")]
    pub split: Split,
    #[serde(default)]
    pub eval: EvalOptions,
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    config_hash: String,
    split: Split,
    #[serde(flatten)]
    report: &'a EvalReport,
}

pub fn cmd_eval(mut config: EvalCommand, out_dir: &Path, seed: Option<u64>) -> Result<String> {
    if let Some(s) = seed {
        config.eval.seed = s;
    }
    check_writable_dir(out_dir)?;
    let dataset = dataset_io::load(&config.dataset_dir)?;
    let model = checkpoint::load(&config.checkpoint)?;
    let report = evaluate(&model, &dataset, config.split, &config.eval)?;
    let hash = config_hash(&json!({
        "dataset_dir": config.dataset_dir.display().to_string(),
        "checkpoint": config.checkpoint.display().to_string(),
        "split": config.split,
        "eval": config.eval,
    }))?;

    let doc = ReportDocument {
        config_hash: hash.clone(),
        split: config.split,
        report: &report,
    };
    let mut outputs = vec![(out_dir.join(REPORT_FILE), serde_json::to_vec_pretty(&doc)?)];
    if let Some(curve) = &report.pr_additive {
        outputs.push((out_dir.join("pr_curve_additive.csv"), pr_csv(curve, &hash).into_bytes()));
    }
    if let Some(curve) = &report.pr_attention {
        outputs.push((out_dir.join("pr_curve_attention.csv"), pr_csv(curve, &hash).into_bytes()));
    }
    if !report.linearity_additive.is_empty() {
        outputs.push((
            out_dir.join("linearity_additive.csv"),
            linearity_csv(&report.linearity_additive, "sum_contributions", &hash).into_bytes(),
        ));
    }
    if !report.linearity_attention.is_empty() {
        outputs.push((
            out_dir.join("linearity_attention.csv"),
            linearity_csv(&report.linearity_attention, "median_top10_alpha", &hash).into_bytes(),
        ));
    }
    write_atomic_set(&outputs)?;

    for &cls in &report.auroc.excluded_classes {
        eprintln!(
            "warning: class {cls} has no positive or no negative slides in this split; \
             excluded from the macro AUROC"
        );
    }
    let mut summary = format!(
        "split {:?}: accuracy {:.4}, macro AUROC {:.4}",
        config.split, report.accuracy, report.auroc.value
    );
    if let Some(c) = &report.pr_additive {
        summary.push_str(&format!(", additive AUPRC {:.4} (best F1 {:.4})", c.auprc, c.best_f1));
    }
    if let Some(c) = &report.pr_attention {
        summary.push_str(&format!(", attention AUPRC {:.4} (best F1 {:.4})", c.auprc, c.best_f1));
    }
    Ok(summary)
}

fn pr_csv(curve: &PrCurve, hash: &str) -> String {
    let mut out = format!("# config {hash}\nthreshold,precision,recall\n");
    for p in &curve.points {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
    }
    out
}

fn linearity_csv(rows: &[LinearityRow], x_name: &str, hash: &str) -> String {
    let mut out = format!("# config {hash}\nslide_id,bag_index,class,{x_name},logit\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.slide_id, r.bag_index, r.class, r.x, r.logit
        ));
    }
    out
}

// ---- explain ---------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainCommand {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub slide_id: u32,
}

pub fn cmd_explain(config: ExplainCommand, out_dir: &Path, _seed: Option<u64>) -> Result<String> {
    check_writable_dir(out_dir)?;
    let dataset = dataset_io::load(&config.dataset_dir)?;
    let model = checkpoint::load(&config.checkpoint)?;
    if model.config.composition != Composition::Additive {
        return Err(Error::UnsupportedComposition);
    }
    let slide = dataset.slide(config.slide_id)?;
    let hash = config_hash(&json!({
        "dataset_dir": config.dataset_dir.display().to_string(),
        "checkpoint": config.checkpoint.display().to_string(),
        "slide_id": config.slide_id,
    }))?;

    let c = model.config.num_classes;
    let n = slide.num_instances();
    // raw contribution per class per instance, and attention, in slide order
    let mut raw = vec![vec![0.0f64; n]; c];
    let mut alpha = vec![0.0f64; n];
    for bag in partition_bags(slide)? {
        let out = model.forward(&bag.instances)?;
        let map = contribution_map_from_nc(
            out.contributions.as_ref().expect("additive model"),
            c,
        )?;
        for (local, &global) in bag.instance_ids.iter().enumerate() {
            alpha[global as usize] = out.attention[local];
            for cls in 0..c {
                raw[cls][global as usize] = map.values.at(cls, local);
            }
        }
    }

    let width = slide.grid_coords.iter().map(|&(_, col)| col).max().unwrap_or(0) + 1;
    let height = slide.grid_coords.iter().map(|&(row, _)| row).max().unwrap_or(0) + 1;
    let cell = |r: u32, col: u32| (r * width + col) as usize;

    let mut outputs: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    for cls in 0..c {
        // neutral gray background: sigmoid(0) → 128
        let mut pixels = vec![128u8; (width * height) as usize];
        for i in 0..n {
            let (r, col) = slide.grid_coords[i];
            pixels[cell(r, col)] = (stable_sigmoid(raw[cls][i]) * 255.0).round() as u8;
        }
        let comment = format!("config {hash} slide {} class {cls}", config.slide_id);
        outputs.push((
            out_dir.join(format!("heatmap_class_{cls}.pgm")),
            encode_pgm(width, height, &pixels, &comment)?,
        ));
    }

    // attention map: min-max normalized, one value per patch
    let a_min = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let a_max = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pixels = vec![0u8; (width * height) as usize];
    for i in 0..n {
        let (r, col) = slide.grid_coords[i];
        let v = if a_max > a_min {
            (alpha[i] - a_min) / (a_max - a_min)
        } else {
            0.5
        };
        pixels[cell(r, col)] = (v * 255.0).round() as u8;
    }
    let comment = format!("config {hash} slide {} attention", config.slide_id);
    outputs.push((
        out_dir.join("heatmap_attention.pgm"),
        encode_pgm(width, height, &pixels, &comment)?,
    ));

    // signed raw values for faithful replotting
    let mut csv = format!("# config {hash}\ninstance_id,row,col,instance_label,alpha");
    for cls in 0..c {
        csv.push_str(&format!(",raw_class_{cls}"));
    }
    for cls in 0..c {
        csv.push_str(&format!(",bounded_class_{cls}"));
    }
    csv.push('\n');
    for i in 0..n {
        let (r, col) = slide.grid_coords[i];
        csv.push_str(&format!(
            "{i},{r},{col},{},{}",
            slide.instance_labels[i].as_string(),
            alpha[i]
        ));
        for cls in 0..c {
            csv.push_str(&format!(",{}", raw[cls][i]));
        }
        for cls in 0..c {
            csv.push_str(&format!(",{}", stable_sigmoid(raw[cls][i])));
        }
        csv.push('\n');
    }
    outputs.push((out_dir.join("contributions.csv"), csv.into_bytes()));
    write_atomic_set(&outputs)?;

    Ok(format!(
        "wrote {c} class heatmaps, 1 attention heatmap and contributions.csv for slide {} to {}",
        config.slide_id,
        out_dir.display()
    ))
}

// ---- verify-shapley --------------------------------------------------------

fn default_n_max() -> usize {
    8
}
fn default_num_subbags() -> usize {
    5
}
fn default_background_instances() -> usize {
    256
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyShapleyCommand {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    /// Largest sub-bag size to enumerate (hard cap 12).
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_num_subbags")]
    pub num_bags: usize,
    #[serde(default = "default_background_instances")]
    pub background_instances: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Serialize)]
struct VerificationBag {
    slide_id: u32,
    n: usize,
    max_discrepancy: f64,
    efficiency_gap: f64,
}

#[derive(Serialize)]
struct VerificationDocument {
    config_hash: String,
    mode: ShapleyMode,
    n_max: usize,
    background_size: usize,
    tolerance: f64,
    bags: Vec<VerificationBag>,
    worst_discrepancy: f64,
    pass: bool,
}

pub struct VerifyOutcome {
    pub summary: String,
    pub pass: bool,
}

pub fn cmd_verify_shapley(
    mut config: VerifyShapleyCommand,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<VerifyOutcome> {
    if let Some(s) = seed {
        config.seed = s;
    }
    if config.n_max > ENUMERATION_CAP {
        return Err(Error::Config(format!(
            "n_max {} exceeds the exact-enumeration cap {ENUMERATION_CAP}; \
             the oracle never subsamples coalitions",
            config.n_max
        )));
    }
    if config.n_max < 2 || config.num_bags < 1 {
        return Err(Error::Config("n_max must be >= 2 and num_bags >= 1".into()));
    }
    check_writable_dir(out_dir)?;
    let dataset = dataset_io::load(&config.dataset_dir)?;
    let model = checkpoint::load(&config.checkpoint)?;
    if model.config.composition != Composition::Additive {
        return Err(Error::UnsupportedComposition);
    }

    // Background: instances pooled from training slides (held out from the
    // evaluated sub-bags, which come from the test split).
    let background = pool_background(&dataset, config.background_instances)?;

    let eval_ids: &[u32] = if dataset.splits.test.is_empty() {
        &dataset.splits.train
    } else {
        &dataset.splits.test
    };
    let mut bags = Vec::new();
    let mut worst = 0.0f64;
    for k in 0..config.num_bags {
        let slide = dataset.slide(eval_ids[k % eval_ids.len()])?;
        let n = 2 + (k % (config.n_max - 1)); // cycles 2..=n_max
        let n = n.min(slide.num_instances());
        let sub = sample_bags(slide, n, 1, config.seed.wrapping_add(k as u64))?;
        let report = shapley_enumerate(
            &model,
            &sub[0].instances,
            &background,
            ShapleyMode::FixedContext,
        )?;
        let disc = report.max_discrepancy.expect("fixed-context reports discrepancy");
        worst = worst.max(disc);
        bags.push(VerificationBag {
            slide_id: slide.slide_id,
            n,
            max_discrepancy: disc,
            efficiency_gap: report.efficiency_gap,
        });
    }

    let pass = worst <= SHAPLEY_TOLERANCE;
    let doc = VerificationDocument {
        config_hash: config_hash(&json!({
            "dataset_dir": config.dataset_dir.display().to_string(),
            "checkpoint": config.checkpoint.display().to_string(),
            "n_max": config.n_max,
            "num_bags": config.num_bags,
            "background_instances": config.background_instances,
            "seed": config.seed,
        }))?,
        mode: ShapleyMode::FixedContext,
        n_max: config.n_max,
        background_size: background.shape()[0],
        tolerance: SHAPLEY_TOLERANCE,
        bags,
        worst_discrepancy: worst,
        pass,
    };
    write_atomic(&out_dir.join(VERIFICATION_FILE), &serde_json::to_vec_pretty(&doc)?)?;
    Ok(VerifyOutcome {
        summary: format!(
            "{} sub-bags enumerated, worst closed-form discrepancy {:.3e} (tolerance {:.0e}): {}",
            config.num_bags,
            worst,
            SHAPLEY_TOLERANCE,
            if pass { "PASS" } else { "FAIL" }
        ),
        pass,
    })
}

fn pool_background(dataset: &SlideDataset, count: usize) -> Result<Tensor> {
    let ids: &[u32] = if dataset.splits.train.is_empty() {
        &dataset.splits.test
    } else {
        &dataset.splits.train
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    'outer: for &id in ids {
        let slide = dataset.slide(id)?;
        for i in 0..slide.num_instances() {
            rows.push(slide.instances.row(i).to_vec());
            if rows.len() == count {
                break 'outer;
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyBackground);
    }
    Tensor::from_rows(&rows)
}

/// Map an error to the documented process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::UnsupportedComposition | Error::UnsupportedVariant { .. } => 3,
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Parse { .. }
        | Error::Checkpoint(_)
        | Error::Generation(_)
        | Error::UnknownSlide(_)
        | Error::InstanceCount { .. }
        | Error::EmptyBackground
        | Error::UndefinedMetric(_) => 2,
        _ => 1,
    }
}
