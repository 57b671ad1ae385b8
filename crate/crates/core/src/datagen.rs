//! Synthetic segmentation data with a boundary-noise predictor, and the
//! brute-force nonconformity oracle used by the tests.
//!
//! Each item is a random ellipse (the ground truth) and a sigmoid score map
//! driven by the signed distance to the ellipse boundary plus Gaussian logit
//! noise. With probability `fp_rate` an arc of a false-positive halo of
//! width `boundary_fp_width` is added just outside the boundary.
//!
//! Items are a pure function of `(seed, index)`: the generator is ChaCha8
//! seeded with `seed` on stream `index`, so items are i.i.d. for a fixed seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner::{FamilyKind, InnerFamily, LambdaValue};
use crate::mask::{BinaryMask, ScoreMap, StructuringElement};
use crate::risk::{afp_ratio, LabeledPrediction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub boundary_fp_width: usize,
    pub score_sharpness: f64,
    pub fp_rate: f64,
    /// Standard deviation of the per-pixel logit noise.
    pub noise_std: f64,
    /// Mean logit of halo pixels.
    pub halo_logit: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 48,
            height: 48,
            radius_min: 5.0,
            radius_max: 12.0,
            boundary_fp_width: 2,
            score_sharpness: 1.5,
            fp_rate: 0.7,
            noise_std: 0.6,
            halo_logit: 0.8,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::format("synth parameters", msg));
        if self.width == 0 || self.height == 0 {
            return Err(Error::ZeroDimensions {
                width: self.width,
                height: self.height,
            });
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return bad(format!(
                "invalid radius range [{}, {}]",
                self.radius_min, self.radius_max
            ));
        }
        if 2.0 * self.radius_max >= self.width.min(self.height) as f64 {
            return bad(format!(
                "radius {} does not fit a {}x{} grid",
                self.radius_max, self.width, self.height
            ));
        }
        if !(self.score_sharpness > 0.0 && self.score_sharpness.is_finite()) {
            return bad(format!(
                "score_sharpness must be positive, got {}",
                self.score_sharpness
            ));
        }
        if !(0.0..=1.0).contains(&self.fp_rate) {
            return bad(format!("fp_rate must lie in [0, 1], got {}", self.fp_rate));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite() && self.halo_logit.is_finite()) {
            return bad("noise_std and halo_logit must be finite, noise_std non-negative".into());
        }
        Ok(())
    }
}

/// One synthetic image: sigmoid scores and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthItem {
    pub scores: ScoreMap,
    pub truth: BinaryMask,
}

impl SynthItem {
    /// The predicted mask, scores cut at 0.5.
    pub fn prediction(&self) -> BinaryMask {
        self.scores.threshold(crate::inner::PREDICTION_LEVEL)
    }

    pub fn labeled(&self, kind: FamilyKind, se: &StructuringElement) -> LabeledPrediction {
        let family = match kind {
            FamilyKind::Threshold => InnerFamily::threshold(self.scores.clone()),
            FamilyKind::Erosion => InnerFamily::erosion(self.prediction(), se.clone()),
        };
        LabeledPrediction::new(family, self.truth.clone())
            .expect("generated with matching dimensions")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates item `index` of the dataset defined by `params`.
pub fn synth_item(params: &SynthParams, index: u64) -> SynthItem {
    let (w, h) = (params.width, params.height);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index);

    let a = rng.random_range(params.radius_min..=params.radius_max);
    let b = rng.random_range(params.radius_min..=params.radius_max);
    let theta = rng.random_range(0.0..PI);
    let margin = params.radius_max + params.boundary_fp_width as f64 + 1.0;
    let center = |extent: usize, rng: &mut ChaCha8Rng| {
        let (lo, hi) = (margin, extent as f64 - 1.0 - margin);
        if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            (extent as f64 - 1.0) / 2.0
        }
    };
    let cx = center(w, &mut rng);
    let cy = center(h, &mut rng);
    let (sin, cos) = theta.sin_cos();
    let signed_distance: Vec<f64> = (0..h)
        .flat_map(|i| (0..w).map(move |j| (i, j)))
        .map(|(i, j)| {
            let (dx, dy) = (j as f64 - cx, i as f64 - cy);
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
            (1.0 - rho) * a.min(b)
        })
        .collect();
    let truth =
        BinaryMask::from_fn(w, h, |i, j| signed_distance[i * w + j] >= 0.0).expect("nonzero grid");

    let halo = if params.boundary_fp_width > 0 && rng.random_bool(params.fp_rate) {
        let se = StructuringElement::cross4();
        let mut grown = truth.clone();
        for _ in 0..params.boundary_fp_width {
            grown = grown.dilate(&se);
        }
        let ring = grown.difference(&truth).expect("same grid");
        // keep an arc of the ring, by angle around the center
        let start = rng.random_range(0.0..2.0 * PI);
        let span = rng.random_range(0.25..=1.0) * 2.0 * PI;
        BinaryMask::from_fn(w, h, |i, j| {
            if !ring.get(i, j) {
                return false;
            }
            let angle = (i as f64 - cy).atan2(j as f64 - cx) + PI;
            (angle - start).rem_euclid(2.0 * PI) <= span
        })
        .expect("nonzero grid")
    } else {
        BinaryMask::empty(w, h).expect("nonzero grid")
    };

    let scores = (0..w * h)
        .map(|k| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            let noise = noise * params.noise_std;
            let logit = if halo.get(k / w, k % w) {
                params.halo_logit + noise
            } else {
                params.score_sharpness * signed_distance[k] + noise
            };
            sigmoid(logit) as f32
        })
        .collect();
    SynthItem {
        scores: ScoreMap::new(w, h, scores).expect("sigmoid lies in [0, 1]"),
        truth,
    }
}

/// Items `start .. start + count` of the dataset.
pub fn synth_items(params: &SynthParams, start: u64, count: usize) -> Vec<SynthItem> {
    use rayon::prelude::*;
    (start..start + count as u64)
        .into_par_iter()
        .map(|index| synth_item(params, index))
        .collect()
}

/// Reference nonconformity score: evaluates the accepted false-positive
/// proportion from scratch at every breakpoint, pixel by pixel, and returns
/// the first breakpoint within tolerance.
pub fn brute_force_nonconformity(item: &LabeledPrediction, tau: f64) -> LambdaValue {
    let prediction = item.prediction();
    let truth = item.truth();
    let area = prediction.iter().filter(|&p| p).count();
    for lambda in item.family().breakpoints() {
        let inner = item
            .family()
            .inner_mask(&lambda)
            .expect("breakpoint of this family");
        let accepted = inner
            .iter()
            .zip(truth.iter())
            .filter(|&(p, t)| p && !t)
            .count();
        if afp_ratio(accepted, area) <= tau {
            return lambda;
        }
    }
    unreachable!("the last breakpoint yields an empty mask")
}
