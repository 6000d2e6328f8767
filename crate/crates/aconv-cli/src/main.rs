//! Experiment harness for adaptive-aperture convolution.
//!
//! Four subcommands drive the library's experiments and drop their results
//! as CSV artifacts plus a `manifest.json` into one output directory:
//!
//! * `filters`  — recover a standard 9×9 filter bank from a single image,
//!   dumping raw weights, envelopes, and masked kernels before and after.
//! * `variance` — measure how the envelope mask changes weight variance
//!   across kernel sizes, apertures, and weight distributions.
//! * `classify` — train ordinary and adaptive classifiers side by side and
//!   compare peak test accuracies, with a Welch t-test at the best size.
//! * `bench`    — time forward+backward steps for both layer kinds.
//!
//! The output directory is `--out` if given, else `$ACONV_OUT_DIR`, else
//! `./aconv-out`. Every error is one machine-parsable line on stderr:
//! `error: <kind>: <detail>`, with a nonzero exit code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aconv::data::{load_pgm, synth_dataset, DatasetBundle, SynthKind};
use aconv::envelope::SigmaGradMode;
use aconv::experiments::{
    comparison_csv_rows, run_classifier_comparison, run_filter_learning, run_overhead_benchmark,
    run_variance_study, BenchRow, ComparisonReport, FilterLearnConfig, VarianceRow,
    COMPARISON_CSV_HEADER,
};
use aconv::report::{
    content_hash, experiment_csv_header, experiment_csv_rows, fmt_f64, sigma_csv_rows, write_csv,
    write_manifest, SIGMA_CSV_HEADER,
};
use aconv::train::TrainConfig;
use aconv::{AconvError, Result};

#[derive(Parser)]
#[command(
    name = "aconv",
    version,
    about = "Experiments for convolution layers with learned kernel apertures"
)]
struct Cli {
    /// Output directory for artifacts (overrides ACONV_OUT_DIR; default "aconv-out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a 9x9 filter bank from one image; dump kernels before/after.
    Filters(FiltersArgs),
    /// Sweep kernel size and aperture, measuring variance preservation.
    Variance(VarianceArgs),
    /// Train ordinary vs adaptive classifiers and compare peak accuracy.
    Classify(ClassifyArgs),
    /// Time forward+backward steps for ordinary vs adaptive layers.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    /// Differentiate through the envelope normalizer.
    Normalized,
    /// Treat the normalizer as a constant in the aperture gradient.
    ScaleFrozen,
}

impl From<ModeArg> for SigmaGradMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Normalized => SigmaGradMode::Normalized,
            ModeArg::ScaleFrozen => SigmaGradMode::ScaleFrozen,
        }
    }
}

impl ModeArg {
    fn name(self) -> &'static str {
        match self {
            ModeArg::Normalized => "normalized",
            ModeArg::ScaleFrozen => "scale-frozen",
        }
    }
}

#[derive(Args)]
struct FiltersArgs {
    /// Training updates.
    #[arg(long, default_value_t = 2500)]
    iterations: usize,

    /// SGD learning rate.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,

    /// Seed for weight and aperture initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Add an identity (pass-through) target alongside the bank.
    #[arg(long)]
    include_identity: bool,

    /// Train on this grayscale PGM (min 64x64) instead of the built-in
    /// procedural texture.
    #[arg(long)]
    image: Option<PathBuf>,

    /// Aperture gradient mode.
    #[arg(long, value_enum, default_value = "normalized")]
    mode: ModeArg,
}

#[derive(Args)]
struct VarianceArgs {
    /// Kernel sizes to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 7, 9])]
    sizes: Vec<usize>,

    /// Apertures to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 5.0])]
    sigmas: Vec<f64>,

    /// Random kernels per (size, aperture, distribution) cell; at least 1000.
    #[arg(long, default_value_t = 10000)]
    samples: usize,

    /// Seed for the kernel draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    /// Bundled handwritten-digit subset.
    Digits,
    /// Synthetic blobs whose radius depends on the class.
    Blobs,
    /// Synthetic thin-vs-thick bars.
    Bars,
    /// User-supplied IDX files (see the --*-images/--*-labels flags).
    Idx,
}

impl DatasetArg {
    fn name(self) -> &'static str {
        match self {
            DatasetArg::Digits => "digits",
            DatasetArg::Blobs => "blobs",
            DatasetArg::Bars => "bars",
            DatasetArg::Idx => "idx",
        }
    }
}

#[derive(Args)]
struct ClassifyArgs {
    /// Dataset to train on.
    #[arg(long, value_enum, default_value = "digits")]
    dataset: DatasetArg,

    /// IDX training images (required with --dataset idx).
    #[arg(long)]
    train_images: Option<PathBuf>,

    /// IDX training labels (required with --dataset idx).
    #[arg(long)]
    train_labels: Option<PathBuf>,

    /// IDX test images (required with --dataset idx).
    #[arg(long)]
    test_images: Option<PathBuf>,

    /// IDX test labels (required with --dataset idx).
    #[arg(long)]
    test_labels: Option<PathBuf>,

    /// Training images per class for the synthetic datasets.
    #[arg(long, default_value_t = 100)]
    synth_per_class: usize,

    /// Kernel sizes to compare (any of 3, 5, 7, 9).
    #[arg(long, value_delimiter = ',', default_values_t = [7usize])]
    sizes: Vec<usize>,

    /// Independent training repeats per variant and size.
    #[arg(long, default_value_t = 3)]
    repeats: usize,

    /// Training epochs per repeat.
    #[arg(long, default_value_t = 15)]
    epochs: usize,

    /// Minibatch size.
    #[arg(long, default_value_t = 32)]
    batch_size: usize,

    /// SGD learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,

    /// Base seed; repeat r trains with seed + r.
    #[arg(long, default_value_t = 2024)]
    seed: u64,

    /// Train on the full dataset instead of the desk-scale subset.
    #[arg(long)]
    full_scale: bool,

    /// Stratified subset size for training (ignored with --full-scale).
    #[arg(long, default_value_t = 2000)]
    subset_train: usize,

    /// Stratified subset size for testing (ignored with --full-scale).
    #[arg(long, default_value_t = 1000)]
    subset_test: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Kernel sizes to time.
    #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 7, 9])]
    sizes: Vec<usize>,

    /// Square input sizes to time.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    input_sizes: Vec<usize>,

    /// Timed steps per configuration; 0 emits a header-only CSV.
    #[arg(long, default_value_t = 10)]
    batches: usize,

    /// Untimed warmup steps before measuring; at least 3.
    #[arg(long, default_value_t = 3)]
    warmup: usize,

    /// Seed for inputs and weights.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.detail());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = resolve_out(cli.out.as_deref())?;
    match &cli.command {
        Command::Filters(a) => cmd_filters(&out, a),
        Command::Variance(a) => cmd_variance(&out, a),
        Command::Classify(a) => cmd_classify(&out, a),
        Command::Bench(a) => cmd_bench(&out, a),
    }
}

/// `--out` wins, then `ACONV_OUT_DIR`, then `./aconv-out`. The directory is
/// created if missing.
fn resolve_out(flag: Option<&Path>) -> Result<PathBuf> {
    let dir = match flag {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os("ACONV_OUT_DIR") {
            Some(v) => PathBuf::from(v),
            None => PathBuf::from("aconv-out"),
        },
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes one CSV artifact; when `hashes` is given the file's content hash is
/// recorded for the manifest. Timing CSVs pass `None` so manifests stay
/// deterministic.
fn emit_csv(
    out: &Path,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
    hashes: Option<&mut Vec<(String, String)>>,
) -> Result<()> {
    let path = out.join(name);
    write_csv(&path, header, rows)?;
    if let Some(hashes) = hashes {
        let bytes = std::fs::read(&path)?;
        hashes.push((name.to_string(), content_hash(&[bytes])));
    }
    Ok(())
}

/// Writes `manifest.json`: the subcommand, its effective configuration, an
/// optional dataset fingerprint, and a content hash per deterministic output.
fn finish_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    dataset: Option<String>,
    hashes: &[(String, String)],
) -> Result<()> {
    let mut outputs = serde_json::Map::new();
    for (name, hash) in hashes {
        outputs.insert(name.clone(), serde_json::Value::String(hash.clone()));
    }
    let mut doc = serde_json::Map::new();
    doc.insert("command".into(), command.into());
    doc.insert("config".into(), config);
    if let Some(fp) = dataset {
        doc.insert("dataset".into(), fp.into());
    }
    doc.insert("outputs".into(), serde_json::Value::Object(outputs));
    write_manifest(out.join("manifest.json"), &serde_json::Value::Object(doc))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_filters(out: &Path, a: &FiltersArgs) -> Result<()> {
    let cfg = FilterLearnConfig {
        iterations: a.iterations,
        lr: a.lr,
        seed: a.seed,
        include_identity: a.include_identity,
        image: match &a.image {
            Some(path) => Some(load_pgm(path)?),
            None => None,
        },
        mode: a.mode.into(),
        ..FilterLearnConfig::default()
    };
    let report = run_filter_learning(&cfg)?;
    let mut hashes = Vec::new();

    let loss_rows: Vec<Vec<String>> = report
        .loss
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), fmt_f64(*l)])
        .collect();
    emit_csv(out, "loss.csv", &["iteration", "mse"], &loss_rows, Some(&mut hashes))?;

    let ncc_rows: Vec<Vec<String>> = report
        .ncc
        .iter()
        .map(|(name, v)| vec![name.clone(), fmt_f64(*v)])
        .collect();
    emit_csv(out, "ncc.csv", &["filter", "ncc"], &ncc_rows, Some(&mut hashes))?;

    let sigma_rows: Vec<Vec<String>> = report
        .before
        .w
        .iter()
        .zip(report.before.sigmas.iter().zip(&report.after.sigmas))
        .map(|((name, _), (sb, sa))| vec![name.clone(), fmt_f64(*sb), fmt_f64(*sa)])
        .collect();
    emit_csv(
        out,
        "sigmas.csv",
        &["filter", "sigma_before", "sigma_after"],
        &sigma_rows,
        Some(&mut hashes),
    )?;

    let mut kernel_rows = Vec::new();
    for (phase, snap) in [("before", &report.before), ("after", &report.after)] {
        for (kind, entries) in [("w", &snap.w), ("u", &snap.u), ("product", &snap.product)] {
            for (name, t) in entries {
                let n = t.shape()[0];
                for r in 0..n {
                    for c in 0..n {
                        kernel_rows.push(vec![
                            phase.to_string(),
                            name.clone(),
                            kind.to_string(),
                            r.to_string(),
                            c.to_string(),
                            fmt_f64(t.data()[r * n + c]),
                        ]);
                    }
                }
            }
        }
    }
    emit_csv(
        out,
        "kernels.csv",
        &["phase", "filter", "kind", "row", "col", "value"],
        &kernel_rows,
        Some(&mut hashes),
    )?;

    let config = serde_json::json!({
        "iterations": a.iterations,
        "lr": a.lr,
        "seed": a.seed,
        "include_identity": a.include_identity,
        "image": a.image.as_ref().map(|p| p.display().to_string()),
        "mode": a.mode.name(),
    });
    finish_manifest(out, "filters", config, None, &hashes)?;

    let first = report.loss.first().copied().unwrap_or(f64::NAN);
    let last = report.loss.last().copied().unwrap_or(f64::NAN);
    let worst = report.ncc.iter().fold(f64::INFINITY, |m, (_, v)| m.min(*v));
    println!(
        "filters: mse {first:.6} -> {last:.6} after {} updates; worst ncc {worst:.4}",
        a.iterations
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn cmd_variance(out: &Path, a: &VarianceArgs) -> Result<()> {
    let rows = run_variance_study(&a.sizes, &a.sigmas, a.samples, a.seed)?;
    let csv_rows: Vec<Vec<String>> = rows.iter().map(|r| r.to_csv_row()).collect();
    let mut hashes = Vec::new();
    emit_csv(out, "variance.csv", &VarianceRow::CSV_HEADER, &csv_rows, Some(&mut hashes))?;

    let config = serde_json::json!({
        "sizes": a.sizes,
        "sigmas": a.sigmas,
        "samples": a.samples,
        "seed": a.seed,
    });
    finish_manifest(out, "variance", config, None, &hashes)?;

    println!("variance: {} rows over {} sizes x {} apertures", rows.len(), a.sizes.len(), a.sigmas.len());
    println!("artifacts in {}", out.display());
    Ok(())
}

fn load_dataset(a: &ClassifyArgs) -> Result<DatasetBundle> {
    let full = match a.dataset {
        DatasetArg::Digits => DatasetBundle::builtin_digits()?,
        DatasetArg::Blobs => synth_dataset(SynthKind::Blobs, a.synth_per_class, a.seed),
        DatasetArg::Bars => synth_dataset(SynthKind::Bars, a.synth_per_class, a.seed),
        DatasetArg::Idx => {
            let need = |path: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
                path.clone().ok_or_else(|| {
                    AconvError::InvalidArgument(format!("--{flag} is required with --dataset idx"))
                })
            };
            DatasetBundle::from_idx_files(
                "idx",
                need(&a.train_images, "train-images")?,
                need(&a.train_labels, "train-labels")?,
                need(&a.test_images, "test-images")?,
                need(&a.test_labels, "test-labels")?,
            )?
        }
    };
    Ok(if a.full_scale { full } else { full.subset(a.subset_train, a.subset_test) })
}

fn cmd_classify(out: &Path, a: &ClassifyArgs) -> Result<()> {
    for &s in &a.sizes {
        if !matches!(s, 3 | 5 | 7 | 9) {
            return Err(AconvError::InvalidArgument(format!(
                "kernel size {s} is not supported: choose from 3, 5, 7, 9"
            )));
        }
    }
    let data = load_dataset(a)?;
    let cfg = TrainConfig {
        repeats: a.repeats,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let cmp = run_classifier_comparison(&data, &a.sizes, &cfg)?;
    let mut hashes = Vec::new();

    emit_csv(
        out,
        "comparison.csv",
        &COMPARISON_CSV_HEADER,
        &comparison_csv_rows(&cmp),
        Some(&mut hashes),
    )?;

    let stats_rows: Vec<Vec<String>> = cmp
        .runs
        .iter()
        .map(|run| {
            let (mean, std) = mean_std(&run.report.best_test_results);
            vec![run.variant.clone(), run.size.to_string(), fmt_f64(mean), fmt_f64(std)]
        })
        .collect();
    emit_csv(
        out,
        "stats.csv",
        &["variant", "size", "mean_peak", "std_peak"],
        &stats_rows,
        Some(&mut hashes),
    )?;

    if let Some(tt) = &cmp.ttest {
        let aconv_mean = cmp.mean_peak("aconv", cmp.best_size).unwrap_or(f64::NAN);
        let conv_mean = cmp.mean_peak("conv", cmp.best_size).unwrap_or(f64::NAN);
        let row = vec![vec![
            cmp.best_size.to_string(),
            fmt_f64(tt.t),
            fmt_f64(tt.p),
            fmt_f64(tt.df),
            fmt_f64(aconv_mean),
            fmt_f64(conv_mean),
        ]];
        emit_csv(
            out,
            "ttest.csv",
            &["best_size", "t", "p", "df", "aconv_mean", "conv_mean"],
            &row,
            Some(&mut hashes),
        )?;
    }

    let mut timing_rows = Vec::new();
    let mut aborts = Vec::new();
    for run in &cmp.runs {
        let header_owned = experiment_csv_header(&run.report);
        let header: Vec<&str> = header_owned.iter().map(|s| s.as_str()).collect();
        emit_csv(
            out,
            &format!("epochs_{}_k{}.csv", run.variant, run.size),
            &header,
            &experiment_csv_rows(&run.report),
            Some(&mut hashes),
        )?;
        if !run.report.sigma_layer_names.is_empty() {
            emit_csv(
                out,
                &format!("sigmas_{}_k{}.csv", run.variant, run.size),
                &SIGMA_CSV_HEADER,
                &sigma_csv_rows(&run.report),
                Some(&mut hashes),
            )?;
        }
        for rep in &run.report.repeats {
            timing_rows.push(vec![
                run.variant.clone(),
                run.size.to_string(),
                rep.repeat.to_string(),
                fmt_f64(rep.step_time_ms),
            ]);
            if let Some(reason) = &rep.aborted {
                aborts.push(serde_json::json!({
                    "variant": run.variant,
                    "size": run.size,
                    "repeat": rep.repeat,
                    "reason": reason,
                }));
                eprintln!(
                    "warning: {} k={} repeat {} aborted: {reason}",
                    run.variant, run.size, rep.repeat
                );
            }
        }
    }
    emit_csv(
        out,
        "timing.csv",
        &["variant", "size", "repeat", "step_time_ms"],
        &timing_rows,
        None,
    )?;

    let mut config = serde_json::json!({
        "dataset": a.dataset.name(),
        "full_scale": a.full_scale,
        "subset_train": a.subset_train,
        "subset_test": a.subset_test,
        "synth_per_class": a.synth_per_class,
        "sizes": a.sizes,
        "train": serde_json::to_value(&cfg)
            .map_err(|e| AconvError::InvalidState(format!("config serialization failed: {e}")))?,
    });
    if !aborts.is_empty() {
        config["aborts"] = serde_json::Value::Array(aborts);
    }
    finish_manifest(out, "classify", config, Some(data.fingerprint()), &hashes)?;

    print_comparison(&data, &cmp);
    println!("artifacts in {}", out.display());
    Ok(())
}

fn print_comparison(data: &DatasetBundle, cmp: &ComparisonReport) {
    println!(
        "classify: dataset {}, train {} / test {} ({} classes)",
        data.name,
        data.train_x.shape()[0],
        data.test_x.shape()[0],
        data.class_count
    );
    for run in &cmp.runs {
        let (mean, std) = mean_std(&run.report.best_test_results);
        let peaks: Vec<String> =
            run.report.best_test_results.iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "  {:<5} k={}: mean peak {mean:.4} std {std:.4}  [{}]",
            run.variant,
            run.size,
            peaks.join(" ")
        );
    }
    println!("  best adaptive size: {}", cmp.best_size);
    if let Some(tt) = &cmp.ttest {
        println!(
            "  welch t-test at k={} (adaptive vs ordinary): t={:.4}, p={:.4}, df={:.2}",
            cmp.best_size, tt.t, tt.p, tt.df
        );
    }
}

fn cmd_bench(out: &Path, a: &BenchArgs) -> Result<()> {
    let rows = run_overhead_benchmark(&a.sizes, &a.input_sizes, a.batches, a.warmup, a.seed)?;
    let csv_rows: Vec<Vec<String>> = rows.iter().map(|r| r.to_csv_row()).collect();
    // Timing data: written but never hashed into the manifest.
    emit_csv(out, "bench.csv", &BenchRow::CSV_HEADER, &csv_rows, None)?;

    let config = serde_json::json!({
        "sizes": a.sizes,
        "input_sizes": a.input_sizes,
        "batches": a.batches,
        "warmup": a.warmup,
        "seed": a.seed,
    });
    finish_manifest(out, "bench", config, None, &[])?;

    for row in &rows {
        println!(
            "  n={} input={}: ordinary {:.3} ms, adaptive {:.3} ms, ratio {:.3}",
            row.n, row.input_size, row.conv_ms, row.aconv_ms, row.ratio
        );
    }
    println!("bench: {} configurations timed", rows.len());
    println!("artifacts in {}", out.display());
    Ok(())
}
