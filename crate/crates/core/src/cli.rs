//! The `confmask` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
//! invariant violation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::conformal::{score_items, CalibConfig, CalibratedModel};
use crate::datagen::{synth_item, SynthParams};
use crate::error::Error;
use crate::inner::{FamilyKind, LambdaValue};
use crate::io::{self, load_manifest_at, DatasetManifest, ManifestEntry, MANIFEST_FILE};
use crate::mask::StructuringElement;
use crate::metrics::{
    run_protocol, summaries_to_csv, MethodSummary, ProtocolResult, PERMUTATION_PRNG,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INTERNAL,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_config_error() {
            EXIT_CONFIG
        } else {
            EXIT_DATA
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "confmask",
    version,
    about = "Conformal confidence masks with controlled accepted false positives"
)]
pub struct Cli {
    /// Worker threads; 1 runs sequentially. Defaults to available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate the shrink level on a labeled dataset.
    Calibrate(CalibrateArgs),
    /// Write confidence and uncertain masks for every entry of a dataset.
    Apply(ApplyArgs),
    /// Run the seeded 50/50 split protocol and write CSV/JSON reports.
    Eval(EvalArgs),
    /// Materialize a synthetic dataset.
    Synth(SynthArgs),
    /// Print an eval JSON report as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct FamilyArgs {
    /// Structuring element: cross4, square8 or file:<path> (JSON list of [di, dj]).
    #[arg(long, default_value = "cross4")]
    se: String,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Manifest file or dataset directory.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    tau: f64,
    #[arg(long)]
    family: FamilyKind,
    #[command(flatten)]
    family_args: FamilyArgs,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write a color overlay per entry.
    #[arg(long)]
    overlay: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    alpha: f64,
    /// One or more tolerances, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<f64>,
    /// Restrict to one family; by default threshold (when every entry has
    /// scores) and erosion are both evaluated.
    #[arg(long)]
    family: Option<FamilyKind>,
    #[command(flatten)]
    family_args: FamilyArgs,
    /// Seeds, e.g. `0..9` (both ends included), `0..=9` or `1,4,7`.
    #[arg(long, default_value = "0..9")]
    seeds: String,
    /// Output directory for report.csv and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 5.0)]
    radius_min: f64,
    #[arg(long, default_value_t = 12.0)]
    radius_max: f64,
    #[arg(long, default_value_t = 2)]
    halo_width: usize,
    #[arg(long, default_value_t = 1.5)]
    sharpness: f64,
    #[arg(long, default_value_t = 0.7)]
    fp_rate: f64,
    #[arg(long, default_value_t = 0.6)]
    noise: f64,
    #[arg(long, default_value_t = 0.8)]
    halo_logit: f64,
    /// Write binary prediction masks only, without score maps.
    #[arg(long)]
    masks_only: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// report.json written by `eval`.
    input: PathBuf,
}

/// Parses `cross4`, `square8` or `file:<path>`.
pub fn parse_se(spec: &str) -> std::result::Result<StructuringElement, Error> {
    match spec {
        "cross4" => Ok(StructuringElement::cross4()),
        "square8" => Ok(StructuringElement::square8()),
        s => match s.strip_prefix("file:") {
            Some(path) => io::load_structuring_element(path)
                .map_err(|e| Error::InvalidStructuringElement(e.to_string())),
            None => Err(Error::InvalidStructuringElement(format!(
                "unknown element {s:?} (expected cross4, square8 or file:<path>)"
            ))),
        },
    }
}

/// Parses seed lists such as `0..9`, `3` or `1,2,5..8`. Ranges include both
/// ends; `a..=b` is accepted as a synonym.
pub fn parse_seeds(spec: &str) -> std::result::Result<Vec<u64>, String> {
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| format!("invalid seed {s:?}"))
        };
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
            if a > b {
                return Err(format!("empty seed range {part:?}"));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(num(part)?);
        }
    }
    if seeds.is_empty() {
        return Err(format!("seed list {spec:?} is empty"));
    }
    Ok(seeds)
}

/// Parses arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::internal(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Apply(args) => cmd_apply(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Report(args) => cmd_report(args),
    })
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn score_histogram(scores: &[LambdaValue]) -> String {
    let mut out = String::new();
    match scores.first().map(LambdaValue::kind) {
        Some(FamilyKind::Erosion) => {
            let mut counts = std::collections::BTreeMap::new();
            for s in scores {
                if let LambdaValue::ErosionSteps(k) = s {
                    *counts.entry(*k).or_insert(0usize) += 1;
                }
            }
            for (k, c) in counts {
                writeln!(out, "  steps {k:>4}: {c}").unwrap();
            }
        }
        Some(FamilyKind::Threshold) => {
            const BINS: usize = 10;
            let mut counts = [0usize; BINS];
            let mut above = 0;
            for s in scores {
                match *s {
                    LambdaValue::ThresholdLevel(l) => {
                        let b = (((l - 0.5) / 0.5) * BINS as f64).floor() as usize;
                        counts[b.min(BINS - 1)] += 1;
                    }
                    _ => above += 1,
                }
            }
            for (b, c) in counts.iter().enumerate() {
                let lo = 0.5 + 0.5 * b as f64 / BINS as f64;
                let hi = lo + 0.5 / BINS as f64;
                let close = if b + 1 == BINS { ']' } else { ')' };
                writeln!(out, "  [{lo:.2}, {hi:.2}{close}: {c}").unwrap();
            }
            writeln!(out, "  above_max   : {above}").unwrap();
        }
        None => {}
    }
    out
}

fn cmd_calibrate(args: CalibrateArgs) -> CliResult {
    let se = match args.family {
        FamilyKind::Erosion => Some(parse_se(&args.family_args.se)?),
        FamilyKind::Threshold => None,
    };
    let config = CalibConfig::new(args.alpha, args.tau, args.family, se)?;
    let manifest = load_manifest_at(&args.manifest)?;
    if manifest.is_empty() {
        return Err(Error::EmptyCalibrationSet.into());
    }
    let items = manifest
        .load_all()?
        .par_iter()
        .map(|e| e.labeled(config.family(), config.se()))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = score_items(&items, &config)?;
    let model = CalibratedModel::from_scores(config, &scores)?;
    let mut json = model.to_json();
    json.push('\n');
    write_file(&args.out, json.as_bytes())?;
    println!("n = {}", model.n);
    println!("lambda_hat = {}", model.lambda_hat);
    println!("calibration scores:");
    print!("{}", score_histogram(&scores));
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_apply(args: ApplyArgs) -> CliResult {
    let text = fs::read_to_string(&args.model).map_err(|e| Error::Io {
        path: args.model.clone(),
        source: e,
    })?;
    let model = CalibratedModel::from_json(&text)?;
    let manifest = load_manifest_at(&args.manifest)?;
    let kind = model.config.family();
    if kind == FamilyKind::Threshold {
        if let Some(e) = manifest.entries.iter().find(|e| e.score_map_path.is_none()) {
            return Err(CliError::config(format!(
                "entry {}: score maps required for a threshold model",
                e.id
            )));
        }
    }
    create_dir(&args.out)?;
    let results = manifest
        .entries
        .par_iter()
        .map(|entry| -> CliResult<usize> {
            let loaded = manifest.load_entry(entry)?;
            let family = loaded.family(kind, model.config.se())?;
            let result = crate::conformal::apply(&model, &family)?;
            let partition_ok = result.confidence.union(&result.uncertain)? == result.prediction
                && result.confidence.intersect_count(&result.uncertain)? == 0;
            if !partition_ok {
                return Err(CliError::internal(format!(
                    "entry {}: confidence and uncertain masks do not partition the prediction",
                    entry.id
                )));
            }
            io::save_mask(
                args.out.join(format!("{}_confidence.pgm", entry.id)),
                &result.confidence,
            )?;
            io::save_mask(
                args.out.join(format!("{}_uncertain.pgm", entry.id)),
                &result.uncertain,
            )?;
            if args.overlay {
                io::save_overlay(
                    args.out.join(format!("{}_overlay.png", entry.id)),
                    &result.confidence,
                    &result.uncertain,
                    loaded.truth.as_ref(),
                )?;
            }
            Ok(result.confidence.cardinality())
        })
        .collect::<CliResult<Vec<_>>>()?;
    println!(
        "applied lambda_hat = {} ({} model) to {} entries; outputs in {}",
        model.lambda_hat,
        kind,
        results.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    alpha: f64,
    taus: &'a [f64],
    seeds: &'a [u64],
    prng: &'static str,
    summaries: &'a [MethodSummary],
    protocols: &'a [ProtocolResult],
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let seeds = parse_seeds(&args.seeds).map_err(CliError::config)?;
    let se = parse_se(&args.family_args.se)?;
    // validate every configuration before touching data
    for &tau in &args.tau {
        CalibConfig::new(args.alpha, tau, FamilyKind::Erosion, Some(se.clone()))?;
    }
    let manifest = load_manifest_at(&args.manifest)?;
    if manifest.len() < 2 {
        return Err(Error::DatasetTooSmall(manifest.len()).into());
    }
    let families = eval_families(&manifest, args.family)?;
    let loaded = manifest.load_all()?;
    let mut summaries = Vec::new();
    let mut protocols = Vec::new();
    for kind in &families {
        let se = (*kind == FamilyKind::Erosion).then(|| se.clone());
        let items = loaded
            .iter()
            .map(|e| e.labeled(*kind, se.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        for &tau in &args.tau {
            let config = CalibConfig::new(args.alpha, tau, *kind, se.clone())?;
            protocols.push(run_protocol(&items, &config, &seeds)?);
        }
    }
    for (t, &tau) in args.tau.iter().enumerate() {
        let for_tau: Vec<&ProtocolResult> =
            protocols.iter().skip(t).step_by(args.tau.len()).collect();
        debug_assert!(for_tau.iter().all(|p| p.tau == tau));
        summaries.push(for_tau[0].baseline.clone());
        summaries.extend(for_tau.iter().map(|p| p.calibrated.clone()));
    }
    create_dir(&args.out)?;
    let csv = summaries_to_csv(&summaries);
    write_file(&args.out.join("report.csv"), csv.as_bytes())?;
    let doc = EvalDocument {
        alpha: args.alpha,
        taus: &args.tau,
        seeds: &seeds,
        prng: PERMUTATION_PRNG,
        summaries: &summaries,
        protocols: &protocols,
    };
    let mut json =
        serde_json::to_string_pretty(&doc).map_err(|e| CliError::internal(e.to_string()))?;
    json.push('\n');
    write_file(&args.out.join("report.json"), json.as_bytes())?;
    print!("{}", format_table(&summaries));
    Ok(())
}

fn eval_families(
    manifest: &DatasetManifest,
    requested: Option<FamilyKind>,
) -> CliResult<Vec<FamilyKind>> {
    match requested {
        Some(FamilyKind::Threshold) if !manifest.has_scores() => {
            let id = manifest
                .entries
                .iter()
                .find(|e| e.score_map_path.is_none())
                .map(|e| e.id.clone())
                .unwrap_or_default();
            Err(Error::ScoresRequired(id).into())
        }
        Some(kind) => Ok(vec![kind]),
        None if manifest.has_scores() => Ok(vec![FamilyKind::Threshold, FamilyKind::Erosion]),
        None => Ok(vec![FamilyKind::Erosion]),
    }
}

/// Renders summary rows as a plain-text results table.
pub fn format_table(rows: &[MethodSummary]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<8} {:<10} {:>17} {:>17} {:>17}",
        "tau", "method", "EV", "CR", "ATP"
    )
    .unwrap();
    for r in rows {
        let cr = if r.method == "baseline" {
            format!("{:>17}", "---")
        } else {
            format!("{:>8.3} ± {:<6.3}", r.cr_mean, r.cr_std)
        };
        writeln!(
            out,
            "{:<8} {:<10} {:>8.3} ± {:<6.3} {} {:>8.3} ± {:<6.3}",
            r.tau, r.method, r.ev_mean, r.ev_std, cr, r.atp_mean, r.atp_std
        )
        .unwrap();
    }
    out
}

fn cmd_synth(args: SynthArgs) -> CliResult {
    let params = SynthParams {
        width: args.width,
        height: args.height,
        radius_min: args.radius_min,
        radius_max: args.radius_max,
        boundary_fp_width: args.halo_width,
        score_sharpness: args.sharpness,
        fp_rate: args.fp_rate,
        noise_std: args.noise,
        halo_logit: args.halo_logit,
        seed: args.seed,
    };
    params
        .validate()
        .map_err(|e| CliError::config(e.to_string()))?;
    for sub in ["scores", "pred", "truth"] {
        create_dir(&args.out.join(sub))?;
    }
    let entries = (0..args.count as u64)
        .into_par_iter()
        .map(|index| -> CliResult<ManifestEntry> {
            let item = synth_item(&params, index);
            let id = format!("img-{index:05}");
            let mask_rel = format!("pred/{id}.pgm");
            let truth_rel = format!("truth/{id}.pgm");
            io::save_mask(args.out.join(&mask_rel), &item.prediction())?;
            io::save_mask(args.out.join(&truth_rel), &item.truth)?;
            let score_map_path = if args.masks_only {
                None
            } else {
                let rel = format!("scores/{id}.npy");
                io::save_scoremap(args.out.join(&rel), &item.scores)?;
                Some(rel)
            };
            Ok(ManifestEntry {
                id,
                score_map_path,
                mask_path: Some(mask_rel),
                truth_path: Some(truth_rel),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    io::write_manifest(args.out.join(MANIFEST_FILE), &entries)?;
    let params_json =
        serde_json::to_string_pretty(&params).map_err(|e| CliError::internal(e.to_string()))?;
    write_file(&args.out.join("synth_params.json"), params_json.as_bytes())?;
    println!("wrote {} items to {}", entries.len(), args.out.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> CliResult {
    let text = fs::read_to_string(&args.input).map_err(|e| Error::Io {
        path: args.input.clone(),
        source: e,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::format(&args.input, e.to_string()))?;
    let rows = value
        .get("summaries")
        .and_then(|s| s.as_array())
        .ok_or_else(|| Error::format(&args.input, "missing \"summaries\" array"))?;
    let rows = rows
        .iter()
        .map(|r| {
            let num = |k: &str| r.get(k).and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
            MethodSummary {
                method: r
                    .get("method")
                    .and_then(|m| m.as_str())
                    .unwrap_or("?")
                    .to_string(),
                tau: num("tau"),
                alpha: num("alpha"),
                ev_mean: num("ev_mean"),
                ev_std: num("ev_std"),
                cr_mean: num("cr_mean"),
                cr_std: num("cr_std"),
                atp_mean: num("atp_mean"),
                atp_std: num("atp_std"),
            }
        })
        .collect::<Vec<_>>();
    if let Some(alpha) = rows.first().map(|r| r.alpha) {
        println!("confidence level 1 - alpha = {}", 1.0 - alpha);
    }
    print!("{}", format_table(&rows));
    Ok(())
}
