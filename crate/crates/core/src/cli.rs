//! Command-line workflow: synthesize or validate a store, train, evaluate,
//! calibrate, run the pooling ablation and export activation maps.
//!
//! [`run`] returns the text a command prints so the commands can be driven
//! from tests without spawning a process.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::attribute_maps::{self, Heatmap};
use crate::evaluator::{self, GzslMetrics, Model};
use crate::feature_store::{self, Store, SynthSpec};
use crate::semantic_head::{Checkpoint, PoolMethod, PoolSpace, PoolingConfig};
use crate::trainer::{self, TrainConfig, TrainHistory};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SELAR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "selar",
    version,
    about = "Zero-shot attribute embedding head over cached local features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-attribute store.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "M", default_value_t = 4)]
        m: usize,
        #[arg(long = "D", default_value_t = 64)]
        d: usize,
        #[arg(long = "L", default_value_t = 16)]
        l: usize,
        #[arg(long = "C", default_value_t = 20)]
        c: usize,
        #[arg(long, default_value_t = 50)]
        per_class: usize,
        #[arg(long, default_value_t = 14)]
        num_seen: usize,
        #[arg(long, default_value_t = 2.0)]
        signal: f32,
        #[arg(long, default_value_t = 0.3)]
        noise: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Check a store's manifest, blobs and splits.
    Validate {
        #[arg(long)]
        store: PathBuf,
    },
    /// Train a head; writes the checkpoint plus `<out>.history.csv` and `<out>.metrics.csv`.
    Train {
        #[arg(long)]
        store: PathBuf,
        /// TOML training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// GZSL metrics of a checkpoint on the store's test splits.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        gamma: f64,
        /// Dump the per-image prediction table as CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Tune the seen-class offset on a held-out part of the test splits.
    Calibrate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        val_fraction: f64,
        #[arg(long, default_value_t = evaluator::DEFAULT_GRID_STEPS)]
        grid_steps: usize,
        /// Write the full sweep as CSV.
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
    /// Train every pooling method × space and tabulate the results.
    Ablate {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of training seeds, starting at the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Write the table at full precision as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Export the top-k attribute maps and the true-class map of one image.
    Maps {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 4)]
        topk: usize,
        #[arg(long)]
        out: PathBuf,
        /// Resample maps to this size before export.
        #[arg(long)]
        upsample: Option<usize>,
    },
}

/// Formats with 4 significant digits.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (3 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

fn metrics_line(m: &GzslMetrics) -> String {
    format!(
        "acc_u={} acc_s={} H={} S/U={}",
        sig4(m.acc_u),
        sig4(m.acc_s),
        sig4(m.h),
        m.s_over_u.map(sig4).unwrap_or_else(|| "undefined".into())
    )
}

const METRICS_HEADER: &str = "acc_u,acc_s,h,s_over_u";

/// Applies `SELAR_THREADS` to the global worker pool, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value
            .parse()
            .with_context(|| format!("{THREADS_ENV}={value:?} is not a thread count"))?;
        // A pool built earlier in the process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Synth {
            out,
            m,
            d,
            l,
            c,
            per_class,
            num_seen,
            signal,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                spatial_size: m,
                feature_depth: d,
                num_attributes: l,
                num_classes: c,
                per_class_count: per_class,
                num_seen,
                signal_strength: signal,
                noise_sigma: noise,
            };
            run_synth(&spec, &out, seed)
        }
        Command::Validate { store } => run_validate(&store),
        Command::Train { store, config, out } => run_train(&store, config.as_deref(), &out),
        Command::Eval {
            store,
            checkpoint,
            gamma,
            predictions,
        } => run_eval(&store, &checkpoint, gamma, predictions.as_deref()),
        Command::Calibrate {
            store,
            checkpoint,
            val_fraction,
            grid_steps,
            sweep,
        } => run_calibrate(
            &store,
            &checkpoint,
            val_fraction,
            grid_steps,
            sweep.as_deref(),
        ),
        Command::Ablate {
            store,
            config,
            seeds,
            csv,
        } => run_ablate(&store, config.as_deref(), seeds, csv.as_deref()),
        Command::Maps {
            store,
            checkpoint,
            index,
            topk,
            out,
            upsample,
        } => run_maps(&store, &checkpoint, index, topk, &out, upsample),
    }
}

pub fn run_synth(spec: &SynthSpec, out: &Path, seed: u64) -> Result<String> {
    let ds = feature_store::synthesize_dataset(spec, seed)?;
    let manifest = ds.write(out)?;
    Ok(format!(
        "wrote {} records ({}x{}x{}, L={}, C={}) to {}\n",
        manifest.num_records,
        manifest.spatial_size,
        manifest.spatial_size,
        manifest.feature_depth,
        manifest.num_attributes,
        manifest.num_classes,
        out.display()
    ))
}

pub fn run_validate(store: &Path) -> Result<String> {
    let manifest = feature_store::load_manifest(store)?;
    let features = feature_store::open_features(&manifest)?;
    for i in 0..features.len() {
        features.get(i)?;
    }
    let attrs = feature_store::read_attributes(&manifest)?;
    crate::semantic_head::normalize_attribute_rows(&attrs)?;
    let splits = feature_store::read_splits(&manifest)?;
    Ok(format!(
        "ok: {} ({} records, M={} D={} L={} C={}; {} seen / {} unseen classes; train {} / test seen {} / test unseen {})\n",
        manifest.dataset_name,
        manifest.num_records,
        manifest.spatial_size,
        manifest.feature_depth,
        manifest.num_attributes,
        manifest.num_classes,
        splits.seen_class_ids.len(),
        splits.unseen_class_ids.len(),
        splits.train_indices.len(),
        splits.test_seen_indices.len(),
        splits.test_unseen_indices.len()
    ))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

/// Trains on the seen-class rows of `store` and binds the result to the joint
/// label space.
pub fn fit_model(store: &Store, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let seen = trainer::seen_classifier(&store.attributes, &store.splits)?;
    let outcome = trainer::train(&store.features, &store.splits, &seen, cfg)?;
    let model = Model::new(
        outcome.weights,
        cfg.pooling,
        &store.attributes,
        &store.splits,
    )?;
    Ok((model, outcome.history))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

pub fn history_path(checkpoint: &Path) -> PathBuf {
    sibling(checkpoint, ".history.csv")
}

pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    sibling(checkpoint, ".metrics.csv")
}

pub fn run_train(store_dir: &Path, config: Option<&Path>, out: &Path) -> Result<String> {
    let cfg = load_config(config)?;
    let store = feature_store::open_store(store_dir)?;
    let (model, history) = fit_model(&store, &cfg)?;
    model.to_checkpoint().save(out)?;
    fs::write(history_path(out), history.to_csv())
        .with_context(|| format!("writing {}", history_path(out).display()))?;

    let mut text = format!("trained {} for {} epochs\n", cfg.pooling, cfg.epochs);
    if let Some(last) = history.epochs.last() {
        writeln!(
            text,
            "final epoch: loss={} train_acc={}",
            sig4(last.loss),
            sig4(last.train_acc)
        )?;
    }
    let eval = evaluator::evaluate_gzsl(&model, &store.features, &store.splits, 0.0)?;
    fs::write(
        metrics_path(out),
        format!("{METRICS_HEADER}\n{}\n", eval.metrics.csv_row()),
    )
    .with_context(|| format!("writing {}", metrics_path(out).display()))?;
    writeln!(text, "test: {}", metrics_line(&eval.metrics))?;
    writeln!(text, "checkpoint: {}", out.display())?;
    Ok(text)
}

fn open_model(store_dir: &Path, checkpoint: &Path) -> Result<(Store, Model)> {
    let store = feature_store::open_store(store_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.attributes.rows() != store.manifest().num_classes
        || ckpt.weights.cols() != store.manifest().feature_depth
    {
        bail!(
            "checkpoint shape does not match store {}",
            store_dir.display()
        );
    }
    let model = Model::from_checkpoint(&ckpt, &store.splits)?;
    Ok((store, model))
}

pub fn run_eval(
    store_dir: &Path,
    checkpoint: &Path,
    gamma: f64,
    dump: Option<&Path>,
) -> Result<String> {
    let (store, model) = open_model(store_dir, checkpoint)?;
    let eval = evaluator::evaluate_gzsl(&model, &store.features, &store.splits, gamma)?;
    if let Some(path) = dump {
        fs::write(path, eval.predictions_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(format!(
        "{} gamma={}\n{}\n{METRICS_HEADER}\n{}\n",
        model.pooling,
        sig4(gamma),
        metrics_line(&eval.metrics),
        eval.metrics.csv_row()
    ))
}

pub fn run_calibrate(
    store_dir: &Path,
    checkpoint: &Path,
    val_fraction: f64,
    grid_steps: usize,
    sweep_out: Option<&Path>,
) -> Result<String> {
    if grid_steps == 0 {
        bail!("--grid-steps must be positive");
    }
    let (store, model) = open_model(store_dir, checkpoint)?;
    let labels = store.features.labels();
    let (val_seen, test_seen) =
        evaluator::hold_out(labels, &store.splits.test_seen_indices, val_fraction)?;
    let (val_unseen, test_unseen) =
        evaluator::hold_out(labels, &store.splits.test_unseen_indices, val_fraction)?;

    let vu = evaluator::score_images(&model, &store.features, &val_unseen)?;
    let vs = evaluator::score_images(&model, &store.features, &val_seen)?;
    let all: Vec<_> = vu.iter().chain(&vs).cloned().collect();
    let grid = evaluator::gamma_grid(&all, grid_steps);
    let result = evaluator::calibrate_scores(&vu, &vs, &model.seen, &grid)?;

    let mut text = format!(
        "validation: {} seen / {} unseen images, {} offsets\n",
        val_seen.len(),
        val_unseen.len(),
        grid.len()
    );
    writeln!(text, "gamma={}", sig4(result.gamma))?;
    writeln!(
        text,
        "validation: {}",
        metrics_line(&result.metrics_at_gamma)
    )?;
    if !test_seen.is_empty() && !test_unseen.is_empty() {
        let tu = evaluator::score_images(&model, &store.features, &test_unseen)?;
        let ts = evaluator::score_images(&model, &store.features, &test_seen)?;
        let before = evaluator::metrics_from_scores(&tu, &ts, &model.seen, 0.0)?.metrics;
        let after = evaluator::metrics_from_scores(&tu, &ts, &model.seen, result.gamma)?.metrics;
        writeln!(
            text,
            "held-out test, uncalibrated: {}",
            metrics_line(&before)
        )?;
        writeln!(
            text,
            "held-out test, calibrated:   {}",
            metrics_line(&after)
        )?;
    }
    if let Some(path) = sweep_out {
        let mut csv = format!("gamma,{METRICS_HEADER}\n");
        for (gamma, m) in &result.sweep {
            writeln!(csv, "{gamma},{}", m.csv_row())?;
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(text)
}

/// One row of the pooling ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub pooling: PoolingConfig,
    /// Metrics averaged over seeds.
    pub metrics: GzslMetrics,
    pub per_seed: Vec<GzslMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    /// GAP (any space), GMP visual, GMP attribute, GMP class.
    pub rows: Vec<AblationRow>,
    /// Seed-averaged GAP metrics for the visual, attribute and class spaces.
    pub gap_by_space: Vec<(PoolSpace, GzslMetrics)>,
}

impl AblationTable {
    pub fn row(&self, pooling: PoolingConfig) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.pooling == pooling)
    }
}

fn mean_metrics(all: &[GzslMetrics]) -> GzslMetrics {
    let n = all.len() as f64;
    let defined: Vec<f64> = all.iter().filter_map(|m| m.s_over_u).collect();
    GzslMetrics {
        acc_u: all.iter().map(|m| m.acc_u).sum::<f64>() / n,
        acc_s: all.iter().map(|m| m.acc_s).sum::<f64>() / n,
        h: all.iter().map(|m| m.h).sum::<f64>() / n,
        s_over_u: (defined.len() == all.len() && !defined.is_empty())
            .then(|| defined.iter().sum::<f64>() / defined.len() as f64),
    }
}

/// Trains all six pooling configurations with identical hyperparameters for
/// seeds `cfg.seed .. cfg.seed + seeds` and averages the test metrics.
pub fn pooling_ablation(store: &Store, cfg: &TrainConfig, seeds: usize) -> Result<AblationTable> {
    if seeds == 0 {
        bail!("--seeds must be positive");
    }
    let mut results = Vec::new();
    for pooling in PoolingConfig::all() {
        let mut per_seed = Vec::with_capacity(seeds);
        for s in 0..seeds as u64 {
            let run_cfg = TrainConfig {
                pooling,
                seed: cfg.seed + s,
                ..cfg.clone()
            };
            let (model, _) = fit_model(store, &run_cfg)?;
            per_seed.push(
                evaluator::evaluate_gzsl(&model, &store.features, &store.splits, 0.0)?.metrics,
            );
        }
        results.push((pooling, per_seed));
    }
    let gap_by_space = results
        .iter()
        .filter(|(p, _)| p.method == PoolMethod::Gap)
        .map(|(p, m)| (p.space, mean_metrics(m)))
        .collect();
    let pick = |pooling: PoolingConfig, label: &str| {
        let (_, per_seed) = results
            .iter()
            .find(|(p, _)| *p == pooling)
            .expect("all configs trained");
        AblationRow {
            label: label.to_string(),
            pooling,
            metrics: mean_metrics(per_seed),
            per_seed: per_seed.clone(),
        }
    };
    Ok(AblationTable {
        rows: vec![
            pick(
                PoolingConfig::new(PoolMethod::Gap, PoolSpace::Attribute),
                "GAP  any",
            ),
            pick(
                PoolingConfig::new(PoolMethod::Gmp, PoolSpace::Visual),
                "GMP  visual",
            ),
            pick(
                PoolingConfig::new(PoolMethod::Gmp, PoolSpace::Attribute),
                "GMP  attribute",
            ),
            pick(
                PoolingConfig::new(PoolMethod::Gmp, PoolSpace::Class),
                "GMP  class",
            ),
        ],
        gap_by_space,
    })
}

pub fn run_ablate(
    store_dir: &Path,
    config: Option<&Path>,
    seeds: usize,
    csv: Option<&Path>,
) -> Result<String> {
    let cfg = load_config(config)?;
    let store = feature_store::open_store(store_dir)?;
    let table = pooling_ablation(&store, &cfg, seeds)?;
    let mut text = format!("{:<16}{:>8}{:>8}{:>8}\n", "pooling", "U", "S", "H");
    for row in &table.rows {
        writeln!(
            text,
            "{:<16}{:>8}{:>8}{:>8}",
            row.label,
            sig4(row.metrics.acc_u),
            sig4(row.metrics.acc_s),
            sig4(row.metrics.h)
        )?;
    }
    let hs: Vec<f64> = table.gap_by_space.iter().map(|(_, m)| m.h).collect();
    let spread = hs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - hs.iter().copied().fold(f64::INFINITY, f64::min);
    writeln!(text, "GAP H spread across spaces: {}", sig4(spread))?;
    if let Some(path) = csv {
        let mut out = format!("method,space,{METRICS_HEADER}\n");
        for row in &table.rows {
            writeln!(
                out,
                "{},{},{}",
                row.pooling.method,
                row.pooling.space,
                row.metrics.csv_row()
            )?;
        }
        for (space, m) in &table.gap_by_space {
            writeln!(out, "GAP,{space},{}", m.csv_row())?;
        }
        fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(text)
}

/// Top-k attribute maps and the true-class map for image `index`.
pub fn image_maps(
    store: &Store,
    model: &Model,
    index: usize,
    topk: usize,
) -> Result<(Vec<Heatmap>, Vec<String>)> {
    let (v, label) = store.features.example(index)?;
    let trace = model.forward_retaining(&v)?;
    let pos = model
        .joint
        .position(label)
        .context("label outside the joint label space")?;
    let row = model.joint.rows().row(pos);
    let top = attribute_maps::top_attributes(row, topk)?;
    let mut maps = Vec::with_capacity(topk + 1);
    let mut names = Vec::with_capacity(topk + 1);
    for a in top {
        maps.push(attribute_maps::extract_aam(&trace, a)?);
        names.push(format!("attribute_{a}"));
    }
    let local = trace.local_semantic.as_ref().expect("retained");
    maps.push(attribute_maps::compute_cam(local, row, label)?);
    names.push(store.manifest().class_names[label].clone());
    Ok((maps, names))
}

pub fn run_maps(
    store_dir: &Path,
    checkpoint: &Path,
    index: usize,
    topk: usize,
    out: &Path,
    upsample: Option<usize>,
) -> Result<String> {
    let (store, model) = open_model(store_dir, checkpoint)?;
    let (mut maps, names) = image_maps(&store, &model, index, topk)?;
    if let Some(r) = upsample {
        maps = maps
            .iter()
            .map(|h| attribute_maps::upsample_bilinear(h, r))
            .collect::<crate::Result<_>>()?;
    }
    let paths = attribute_maps::export_heatmap_grid(&maps, &names, out)?;
    let mut text = String::new();
    for (p, h) in paths.iter().zip(&maps) {
        writeln!(
            text,
            "{}  raw [{}, {}]",
            p.display(),
            sig4(h.raw_min as f64),
            sig4(h.raw_max as f64)
        )?;
    }
    Ok(text)
}
