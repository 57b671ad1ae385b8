//! Nested, lambda-indexed families of inner masks over one prediction.
//!
//! Two shrinkers are provided. The threshold family keeps prediction pixels
//! whose score reaches a level in `[0.5, 1]`; the erosion family erodes the
//! predicted mask a whole number of times with a fixed structuring element.
//! Both families are nested: a larger lambda never yields a larger mask.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ScoreMap, StructuringElement};

/// Score level at which the raw prediction is cut.
pub const PREDICTION_LEVEL: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Threshold,
    Erosion,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Threshold => "threshold",
            FamilyKind::Erosion => "erosion",
        }
    }

    /// The identity shrink level.
    pub fn lambda_zero(self) -> LambdaValue {
        match self {
            FamilyKind::Threshold => LambdaValue::ThresholdLevel(PREDICTION_LEVEL),
            FamilyKind::Erosion => LambdaValue::ErosionSteps(0),
        }
    }

    /// Greatest element of the index set; its inner mask is always empty.
    pub fn lambda_max(self) -> LambdaValue {
        match self {
            FamilyKind::Threshold => LambdaValue::ThresholdAboveMax,
            FamilyKind::Erosion => LambdaValue::ErosionSteps(u32::MAX),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for FamilyKind {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "threshold" => Ok(FamilyKind::Threshold),
            "erosion" => Ok(FamilyKind::Erosion),
            other => Err(format!(
                "unknown family {other:?} (expected threshold or erosion)"
            )),
        }
    }
}

/// A shrink level.
///
/// `ThresholdAboveMax` sits above every threshold level and always yields the
/// empty mask, even when some scores equal exactly 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaValue {
    ThresholdLevel(f64),
    ThresholdAboveMax,
    ErosionSteps(u32),
}

impl LambdaValue {
    pub fn kind(&self) -> FamilyKind {
        match self {
            LambdaValue::ThresholdLevel(_) | LambdaValue::ThresholdAboveMax => {
                FamilyKind::Threshold
            }
            LambdaValue::ErosionSteps(_) => FamilyKind::Erosion,
        }
    }

    /// Checks the level range for threshold values.
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaValue::ThresholdLevel(level) if !(PREDICTION_LEVEL..=1.0).contains(&level) => {
                Err(Error::InvalidLambda(format!(
                    "threshold level {level} outside [0.5, 1]"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Total order within one variant; mixing variants is an error.
    pub fn try_cmp(&self, other: &LambdaValue) -> Result<Ordering> {
        use LambdaValue::*;
        match (self, other) {
            (ThresholdLevel(a), ThresholdLevel(b)) => Ok(a.total_cmp(b)),
            (ThresholdLevel(_), ThresholdAboveMax) => Ok(Ordering::Less),
            (ThresholdAboveMax, ThresholdLevel(_)) => Ok(Ordering::Greater),
            (ThresholdAboveMax, ThresholdAboveMax) => Ok(Ordering::Equal),
            (ErosionSteps(a), ErosionSteps(b)) => Ok(a.cmp(b)),
            _ => Err(Error::MixedVariants),
        }
    }
}

impl PartialOrd for LambdaValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.try_cmp(other).ok()
    }
}

impl serde::Serialize for LambdaValue {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            LambdaValue::ThresholdLevel(level) => serializer.serialize_f64(level),
            LambdaValue::ThresholdAboveMax => serializer.serialize_str("above_max"),
            LambdaValue::ErosionSteps(steps) => serializer.serialize_u32(steps),
        }
    }
}

impl fmt::Display for LambdaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaValue::ThresholdLevel(level) => write!(f, "{level}"),
            LambdaValue::ThresholdAboveMax => f.write_str("above_max"),
            LambdaValue::ErosionSteps(steps) => write!(f, "{steps}"),
        }
    }
}

/// The family `{I_lambda}` built over one prediction.
#[derive(Clone, Debug)]
pub enum InnerFamily {
    Threshold {
        scores: ScoreMap,
        prediction: BinaryMask,
    },
    Erosion {
        base: BinaryMask,
        se: StructuringElement,
    },
}

impl InnerFamily {
    /// Threshold family; the prediction is the score map cut at 0.5.
    pub fn threshold(scores: ScoreMap) -> Self {
        let prediction = scores.threshold(PREDICTION_LEVEL);
        InnerFamily::Threshold { scores, prediction }
    }

    pub fn erosion(base: BinaryMask, se: StructuringElement) -> Self {
        InnerFamily::Erosion { base, se }
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            InnerFamily::Threshold { .. } => FamilyKind::Threshold,
            InnerFamily::Erosion { .. } => FamilyKind::Erosion,
        }
    }

    /// The unshrunken prediction, equal to the inner mask at lambda zero.
    pub fn prediction(&self) -> &BinaryMask {
        match self {
            InnerFamily::Threshold { prediction, .. } => prediction,
            InnerFamily::Erosion { base, .. } => base,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.prediction().dims()
    }

    pub fn lambda_zero(&self) -> LambdaValue {
        self.kind().lambda_zero()
    }

    /// Number of erosion steps after which any mask on this grid is empty.
    pub fn erosion_cap(&self) -> u32 {
        let (w, h) = self.dims();
        w.max(h) as u32
    }

    fn check_variant(&self, lambda: &LambdaValue) -> Result<()> {
        if lambda.kind() != self.kind() {
            return Err(Error::VariantMismatch {
                expected: self.kind().name(),
            });
        }
        Ok(())
    }

    /// The inner mask `I_lambda`, always a subset of the prediction.
    pub fn inner_mask(&self, lambda: &LambdaValue) -> Result<BinaryMask> {
        self.check_variant(lambda)?;
        match (self, *lambda) {
            (InnerFamily::Threshold { scores, prediction }, LambdaValue::ThresholdLevel(level)) => {
                scores.threshold(level).intersection(prediction)
            }
            (InnerFamily::Threshold { prediction, .. }, LambdaValue::ThresholdAboveMax) => {
                BinaryMask::empty(prediction.width(), prediction.height())
            }
            (InnerFamily::Erosion { base, se }, LambdaValue::ErosionSteps(steps)) => {
                Ok(base.erode_n(se, steps.min(self.erosion_cap()) as usize))
            }
            _ => unreachable!("variant checked above"),
        }
    }

    /// Every lambda at which the inner mask can change, in increasing order.
    ///
    /// The first element is lambda zero and the last one yields the empty
    /// mask. For the threshold family the list is `0.5`, the distinct
    /// prediction scores above it, `1.0`, then the above-max sentinel. For
    /// erosion it is `0, 1, ..` up to the first step with an empty mask.
    pub fn breakpoints(&self) -> Vec<LambdaValue> {
        match self {
            InnerFamily::Threshold { scores, prediction } => {
                let mut levels: Vec<f64> = scores
                    .as_slice()
                    .iter()
                    .zip(prediction.iter())
                    .filter(|&(_, inside)| inside)
                    .map(|(&s, _)| s as f64)
                    .filter(|&s| s > PREDICTION_LEVEL && s < 1.0)
                    .collect();
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                let mut out = Vec::with_capacity(levels.len() + 3);
                out.push(LambdaValue::ThresholdLevel(PREDICTION_LEVEL));
                out.extend(levels.into_iter().map(LambdaValue::ThresholdLevel));
                out.push(LambdaValue::ThresholdLevel(1.0));
                out.push(LambdaValue::ThresholdAboveMax);
                out
            }
            InnerFamily::Erosion { base, se } => {
                let cap = self.erosion_cap();
                let mut out = vec![LambdaValue::ErosionSteps(0)];
                let mut mask = base.clone();
                let mut step = 0;
                while !mask.is_empty() && step < cap {
                    mask = mask.erode(se);
                    step += 1;
                    out.push(LambdaValue::ErosionSteps(step));
                }
                out
            }
        }
    }
}
