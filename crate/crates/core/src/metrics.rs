//! Image-level evaluation (empirical validity, contraction ratio, accepted
//! true-positive fraction) and the multi-seed split protocol.
//!
//! Each seed permutes the dataset with a ChaCha8 generator, calibrates on the
//! first half and evaluates on the second. Images with an empty prediction
//! count as valid and contribute 0 to both utility ratios.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::conformal::{conformal_quantile, score_items, CalibConfig};
use crate::error::{Error, Result};
use crate::inner::{FamilyKind, LambdaValue};
use crate::risk::{afp_ratio, LabeledPrediction};

/// Generator used to permute the dataset for each seed.
pub const PERMUTATION_PRNG: &str =
    "rand_chacha::ChaCha8Rng::seed_from_u64 + rand::seq::SliceRandom::shuffle";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageEval {
    pub afp_at_lambda_hat: f64,
    pub inner_area: usize,
    pub prediction_area: usize,
    pub tp_in_inner: usize,
    pub valid: bool,
}

impl ImageEval {
    /// Evaluates one labeled item at `lambda` against tolerance `tau`.
    pub fn compute(item: &LabeledPrediction, lambda: &LambdaValue, tau: f64) -> Result<Self> {
        let prediction_area = item.prediction().cardinality();
        let inner = item.family().inner_mask(lambda)?;
        let inner_area = inner.cardinality();
        let tp_in_inner = inner.intersect_count(item.truth())?;
        let afp = afp_ratio(inner_area - tp_in_inner, prediction_area);
        Ok(Self {
            afp_at_lambda_hat: afp,
            inner_area,
            prediction_area,
            tp_in_inner,
            valid: afp <= tau,
        })
    }

    fn contraction(&self) -> f64 {
        ratio(self.inner_area, self.prediction_area)
    }

    fn accepted_tp(&self) -> f64 {
        ratio(self.tp_in_inner, self.prediction_area)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean_of(evals: &[ImageEval], f: impl Fn(&ImageEval) -> f64) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    Ok(evals.iter().map(f).sum::<f64>() / evals.len() as f64)
}

/// Fraction of images whose accepted false-positive proportion is within tolerance.
pub fn empirical_validity(evals: &[ImageEval]) -> Result<f64> {
    mean_of(evals, |e| if e.valid { 1.0 } else { 0.0 })
}

/// Mean retained fraction of the predicted area.
pub fn contraction_ratio(evals: &[ImageEval]) -> Result<f64> {
    mean_of(evals, ImageEval::contraction)
}

/// Mean fraction of the predicted area that is both kept and correct.
pub fn accepted_tp_fraction(evals: &[ImageEval]) -> Result<f64> {
    mean_of(evals, ImageEval::accepted_tp)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub ev: f64,
    pub cr: f64,
    pub atp: f64,
    pub n_test: usize,
    pub per_image: Vec<ImageEval>,
}

impl EvalReport {
    pub fn from_evals(per_image: Vec<ImageEval>) -> Result<Self> {
        Ok(Self {
            ev: empirical_validity(&per_image)?,
            cr: contraction_ratio(&per_image)?,
            atp: accepted_tp_fraction(&per_image)?,
            n_test: per_image.len(),
            per_image,
        })
    }

    /// Evaluates every item at the same lambda.
    pub fn evaluate(items: &[&LabeledPrediction], lambda: &LambdaValue, tau: f64) -> Result<Self> {
        let evals = items
            .par_iter()
            .map(|item| ImageEval::compute(item, lambda, tau))
            .collect::<Result<Vec<_>>>()?;
        Self::from_evals(evals)
    }
}

/// Mean and sample standard deviation; the deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Seeded 50/50 split: `(calibration, test)` index lists.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let test = idx.split_off(n / 2);
    (idx, test)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRun {
    pub seed: u64,
    pub n_calibration: usize,
    pub lambda_hat: LambdaValue,
    pub baseline: EvalReport,
    pub calibrated: EvalReport,
}

/// One table row: mean and standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub tau: f64,
    pub alpha: f64,
    pub ev_mean: f64,
    pub ev_std: f64,
    pub cr_mean: f64,
    pub cr_std: f64,
    pub atp_mean: f64,
    pub atp_std: f64,
}

impl MethodSummary {
    fn from_reports<'a>(
        method: &str,
        config: &CalibConfig,
        reports: impl Iterator<Item = &'a EvalReport> + Clone,
    ) -> Self {
        let ev: Vec<f64> = reports.clone().map(|r| r.ev).collect();
        let cr: Vec<f64> = reports.clone().map(|r| r.cr).collect();
        let atp: Vec<f64> = reports.map(|r| r.atp).collect();
        let (ev_mean, ev_std) = mean_std(&ev);
        let (cr_mean, cr_std) = mean_std(&cr);
        let (atp_mean, atp_std) = mean_std(&atp);
        Self {
            method: method.to_string(),
            tau: config.tau(),
            alpha: config.alpha(),
            ev_mean,
            ev_std,
            cr_mean,
            cr_std,
            atp_mean,
            atp_std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolResult {
    pub family: FamilyKind,
    pub alpha: f64,
    pub tau: f64,
    pub prng: &'static str,
    pub seeds: Vec<u64>,
    pub baseline: MethodSummary,
    pub calibrated: MethodSummary,
    pub runs: Vec<SeedRun>,
}

/// Runs the seeded split/calibrate/evaluate protocol.
///
/// Nonconformity scores do not depend on the split, so they are computed
/// once; each seed then only selects its quantile and evaluates its test half.
pub fn run_protocol(
    dataset: &[LabeledPrediction],
    config: &CalibConfig,
    seeds: &[u64],
) -> Result<ProtocolResult> {
    if dataset.len() < 2 {
        return Err(Error::DatasetTooSmall(dataset.len()));
    }
    if seeds.is_empty() {
        return Err(Error::NoSeeds);
    }
    let scores = score_items(dataset, config)?;
    let lambda_zero = config.family().lambda_zero();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let (cal, test) = split_indices(dataset.len(), seed);
            let cal_scores: Vec<LambdaValue> = cal.iter().map(|&i| scores[i]).collect();
            let lambda_hat = conformal_quantile(&cal_scores, config.alpha())?;
            let test_items: Vec<&LabeledPrediction> = test.iter().map(|&i| &dataset[i]).collect();
            Ok(SeedRun {
                seed,
                n_calibration: cal.len(),
                lambda_hat,
                baseline: EvalReport::evaluate(&test_items, &lambda_zero, config.tau())?,
                calibrated: EvalReport::evaluate(&test_items, &lambda_hat, config.tau())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProtocolResult {
        family: config.family(),
        alpha: config.alpha(),
        tau: config.tau(),
        prng: PERMUTATION_PRNG,
        seeds: seeds.to_vec(),
        baseline: MethodSummary::from_reports("baseline", config, runs.iter().map(|r| &r.baseline)),
        calibrated: MethodSummary::from_reports(
            config.family().name(),
            config,
            runs.iter().map(|r| &r.calibrated),
        ),
        runs,
    })
}

pub const CSV_HEADER: &str = "method,tau,alpha,ev_mean,ev_std,cr_mean,cr_std,atp_mean,atp_std";

/// Renders summary rows as CSV with a fixed six-decimal format.
pub fn summaries_to_csv(rows: &[MethodSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.method,
            r.tau,
            r.alpha,
            r.ev_mean,
            r.ev_std,
            r.cr_mean,
            r.cr_std,
            r.atp_mean,
            r.atp_std
        )
        .unwrap();
    }
    out
}
