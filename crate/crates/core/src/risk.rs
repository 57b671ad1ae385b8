//! Accepted false-positive proportion and the per-image nonconformity score.

use crate::error::Result;
use crate::inner::{InnerFamily, LambdaValue};
use crate::mask::BinaryMask;

/// A prediction family paired with its ground-truth mask.
#[derive(Clone, Debug)]
pub struct LabeledPrediction {
    family: InnerFamily,
    truth: BinaryMask,
}

impl LabeledPrediction {
    pub fn new(family: InnerFamily, truth: BinaryMask) -> Result<Self> {
        family.prediction().same_dims(&truth)?;
        Ok(Self { family, truth })
    }

    pub fn family(&self) -> &InnerFamily {
        &self.family
    }

    pub fn truth(&self) -> &BinaryMask {
        &self.truth
    }

    pub fn prediction(&self) -> &BinaryMask {
        self.family.prediction()
    }

    /// False-positive pixels of the prediction, `Y_hat minus Y`.
    pub fn false_positives(&self) -> BinaryMask {
        self.prediction()
            .difference(&self.truth)
            .expect("dimensions checked at construction")
    }
}

/// `|prediction minus truth|`.
pub fn fp_count(prediction: &BinaryMask, truth: &BinaryMask) -> Result<usize> {
    Ok(prediction.cardinality() - prediction.intersect_count(truth)?)
}

/// Accepted false positives over the unshrunken prediction area; zero when
/// the prediction is empty.
pub fn afp_ratio(accepted_fp: usize, prediction_area: usize) -> f64 {
    if prediction_area == 0 {
        0.0
    } else {
        accepted_fp as f64 / prediction_area as f64
    }
}

/// The accepted false-positive proportion of `item` at `lambda`.
pub fn afp(item: &LabeledPrediction, lambda: &LambdaValue) -> Result<f64> {
    let inner = item.family.inner_mask(lambda)?;
    let accepted = fp_count(&inner, &item.truth)?;
    Ok(afp_ratio(accepted, item.prediction().cardinality()))
}

/// Smallest breakpoint whose accepted false-positive proportion is at most
/// `tau`.
///
/// Always succeeds: the last breakpoint of either family gives the empty mask.
pub fn nonconformity_score(item: &LabeledPrediction, tau: f64) -> LambdaValue {
    let area = item.prediction().cardinality();
    let lambda_zero = item.family.lambda_zero();
    if area == 0 {
        return lambda_zero;
    }
    let fp = item.false_positives();
    match &item.family {
        InnerFamily::Threshold { scores, .. } => {
            // accepted FPs at level L = FP pixels scoring >= L
            let mut fp_scores: Vec<f64> = scores
                .as_slice()
                .iter()
                .zip(fp.iter())
                .filter(|&(_, is_fp)| is_fp)
                .map(|(&s, _)| s as f64)
                .collect();
            fp_scores.sort_by(f64::total_cmp);
            let mut below = 0;
            for lambda in item.family.breakpoints() {
                let accepted = match lambda {
                    LambdaValue::ThresholdLevel(level) => {
                        while below < fp_scores.len() && fp_scores[below] < level {
                            below += 1;
                        }
                        fp_scores.len() - below
                    }
                    _ => 0,
                };
                if afp_ratio(accepted, area) <= tau {
                    return lambda;
                }
            }
            unreachable!("the above-max sentinel accepts no pixel")
        }
        InnerFamily::Erosion { base, se } => {
            let cap = item.family.erosion_cap();
            let mut mask = base.clone();
            let mut steps = 0;
            loop {
                let accepted = mask.intersect_count(&fp).expect("same grid");
                if afp_ratio(accepted, area) <= tau || mask.is_empty() || steps >= cap {
                    return LambdaValue::ErosionSteps(steps);
                }
                mask = mask.erode(se);
                steps += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{ScoreMap, StructuringElement};

    fn pixel_fp(inner: &BinaryMask, truth: &BinaryMask) -> usize {
        inner
            .iter()
            .zip(truth.iter())
            .filter(|&(p, t)| p && !t)
            .count()
    }

    #[test]
    fn fp_count_examples() {
        let m = BinaryMask::from_flags(3, 1, &[true, false, true]).unwrap();
        assert_eq!(fp_count(&m, &m).unwrap(), 0);
        let full = BinaryMask::full(2, 2).unwrap();
        let empty = BinaryMask::empty(2, 2).unwrap();
        assert_eq!(fp_count(&full, &empty).unwrap(), 4);
        assert!(fp_count(&full, &m).is_err());
    }

    #[test]
    fn afp_empty_prediction_is_zero() {
        let fam = InnerFamily::erosion(
            BinaryMask::empty(4, 4).unwrap(),
            StructuringElement::cross4(),
        );
        let item = LabeledPrediction::new(fam, BinaryMask::full(4, 4).unwrap()).unwrap();
        assert_eq!(afp(&item, &LambdaValue::ErosionSteps(0)).unwrap(), 0.0);
        assert_eq!(
            nonconformity_score(&item, 0.0),
            LambdaValue::ErosionSteps(0)
        );
    }

    #[test]
    fn afp_at_lambda_zero_is_fp_fraction() {
        // 10 predicted pixels, 3 of them outside the truth
        let pred = BinaryMask::from_fn(5, 2, |_, _| true).unwrap();
        let truth = BinaryMask::from_fn(5, 2, |i, j| !(i == 0 && j < 3)).unwrap();
        let item = LabeledPrediction::new(
            InnerFamily::erosion(pred, StructuringElement::cross4()),
            truth,
        )
        .unwrap();
        assert_eq!(afp(&item, &LambdaValue::ErosionSteps(0)).unwrap(), 0.3);
    }

    #[test]
    fn afp_on_4x4_fixture_after_one_erosion() {
        // 3x3 prediction block in a 4x4 grid; truth covers its first two rows
        let pred = BinaryMask::from_fn(4, 4, |i, j| i >= 1 && j >= 1).unwrap();
        let truth = BinaryMask::from_fn(4, 4, |i, j| (1..=2).contains(&i) && j >= 1).unwrap();
        assert_eq!(pred.cardinality(), 9);
        assert_eq!(pred.intersect_count(&truth).unwrap(), 6);
        let se = StructuringElement::cross4();
        let item = LabeledPrediction::new(
            InnerFamily::erosion(pred.clone(), se.clone()),
            truth.clone(),
        )
        .unwrap();
        // oracle: per-pixel erosion then per-pixel FP count
        let eroded = BinaryMask::from_fn(4, 4, |i, j| {
            se.offsets().iter().all(|&(di, dj)| {
                pred.get_signed(i as isize + di as isize, j as isize + dj as isize)
            })
        })
        .unwrap();
        let expected = pixel_fp(&eroded, &truth) as f64 / 9.0;
        assert_eq!(afp(&item, &LambdaValue::ErosionSteps(1)).unwrap(), expected);
    }

    #[test]
    fn score_is_lambda_zero_when_already_within_tolerance() {
        let truth = BinaryMask::from_fn(6, 6, |i, j| i < 5 && j < 5).unwrap();
        let item = LabeledPrediction::new(
            InnerFamily::erosion(
                BinaryMask::full(6, 6).unwrap(),
                StructuringElement::cross4(),
            ),
            truth,
        )
        .unwrap();
        // afp(0) = 11/36
        assert_eq!(
            nonconformity_score(&item, 0.5),
            LambdaValue::ErosionSteps(0)
        );
    }

    #[test]
    fn erosion_score_on_boundary_ring() {
        // truth is a 5x5 block; prediction adds a one-pixel Cross4 ring
        let se = StructuringElement::cross4();
        let truth =
            BinaryMask::from_fn(11, 11, |i, j| (3..8).contains(&i) && (3..8).contains(&j)).unwrap();
        let pred = truth.dilate(&se);
        let item = LabeledPrediction::new(InnerFamily::erosion(pred, se), truth).unwrap();
        // exhaustive scan oracle over the breakpoint list
        let expected = item
            .family()
            .breakpoints()
            .into_iter()
            .find(|l| {
                let inner = item.family().inner_mask(l).unwrap();
                pixel_fp(&inner, item.truth()) == 0
            })
            .unwrap();
        assert_eq!(nonconformity_score(&item, 0.0), expected);
        assert_eq!(expected, LambdaValue::ErosionSteps(1));
    }

    #[test]
    fn threshold_score_separates_fp_and_tp_levels() {
        // left half is truth and scores 0.9; right half is FP at 0.55
        let truth = BinaryMask::from_fn(4, 4, |_, j| j < 2).unwrap();
        let scores: Vec<f32> = (0..16)
            .map(|k| if k % 4 < 2 { 0.9 } else { 0.55 })
            .collect();
        let fam = InnerFamily::threshold(ScoreMap::new(4, 4, scores).unwrap());
        let item = LabeledPrediction::new(fam, truth).unwrap();
        assert_eq!(
            nonconformity_score(&item, 0.0),
            LambdaValue::ThresholdLevel(0.9f32 as f64)
        );
    }

    #[test]
    fn threshold_score_falls_back_to_sentinel() {
        // every pixel is a false positive scoring exactly 1
        let fam = InnerFamily::threshold(ScoreMap::uniform(3, 3, 1.0).unwrap());
        let item = LabeledPrediction::new(fam, BinaryMask::empty(3, 3).unwrap()).unwrap();
        assert_eq!(
            nonconformity_score(&item, 0.5),
            LambdaValue::ThresholdAboveMax
        );
        assert_eq!(afp(&item, &LambdaValue::ThresholdLevel(1.0)).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_truth_rejected() {
        let fam = InnerFamily::erosion(
            BinaryMask::full(3, 3).unwrap(),
            StructuringElement::cross4(),
        );
        assert!(LabeledPrediction::new(fam, BinaryMask::full(3, 4).unwrap()).is_err());
    }
}
