//! Split-conformal selection of the shrink level and the calibrate/apply
//! lifecycle.
//!
//! Calibration scores every labeled item with its nonconformity score and
//! picks the `ceil((n + 1)(1 - alpha))`-th smallest one. When that rank
//! exceeds `n` the greatest lambda of the family is used instead, which
//! empties every inner mask.

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inner::{FamilyKind, InnerFamily, LambdaValue};
use crate::mask::{BinaryMask, StructuringElement};
use crate::risk::{nonconformity_score, LabeledPrediction};

// Absorbs representation error in (n + 1)(1 - alpha), e.g. 10 * (1 - 0.1).
const RANK_EPSILON: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CalibConfig {
    alpha: f64,
    tau: f64,
    family: FamilyKind,
    se: Option<StructuringElement>,
}

impl CalibConfig {
    pub fn new(
        alpha: f64,
        tau: f64,
        family: FamilyKind,
        se: Option<StructuringElement>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::AlphaOutOfRange(alpha));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::TauOutOfRange(tau));
        }
        let se = match family {
            FamilyKind::Threshold => None,
            FamilyKind::Erosion => Some(se.unwrap_or_else(StructuringElement::cross4)),
        };
        Ok(Self {
            alpha,
            tau,
            family,
            se,
        })
    }

    pub fn threshold(alpha: f64, tau: f64) -> Result<Self> {
        Self::new(alpha, tau, FamilyKind::Threshold, None)
    }

    pub fn erosion(alpha: f64, tau: f64, se: StructuringElement) -> Result<Self> {
        Self::new(alpha, tau, FamilyKind::Erosion, Some(se))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    /// Structuring element; `None` for the threshold family.
    pub fn se(&self) -> Option<&StructuringElement> {
        self.se.as_ref()
    }

    /// Checks that `family` is the kind (and element) this config calibrates.
    pub fn check_family(&self, family: &InnerFamily) -> Result<()> {
        if family.kind() != self.family {
            return Err(Error::VariantMismatch {
                expected: self.family.name(),
            });
        }
        if let InnerFamily::Erosion { se, .. } = family {
            if Some(se) != self.se.as_ref() {
                return Err(Error::InvalidStructuringElement(
                    "family uses a different structuring element than the configuration".into(),
                ));
            }
        }
        Ok(())
    }
}

/// `ceil((n + 1)(1 - alpha))`, at least 1.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let raw = ((n + 1) as f64 * (1.0 - alpha) - RANK_EPSILON).ceil();
    (raw.max(1.0)) as usize
}

/// The conformal quantile of a list of same-variant scores.
pub fn conformal_quantile(scores: &[LambdaValue], alpha: f64) -> Result<LambdaValue> {
    let first = scores.first().ok_or(Error::EmptyScores)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    let kind = first.kind();
    if scores.iter().any(|s| s.kind() != kind) {
        return Err(Error::MixedVariants);
    }
    let k = quantile_rank(scores.len(), alpha);
    if k > scores.len() {
        return Ok(kind.lambda_max());
    }
    let mut sorted = scores.to_vec();
    sort_scores(&mut sorted);
    Ok(sorted[k - 1])
}

fn sort_scores(scores: &mut [LambdaValue]) {
    scores.sort_by(|a, b| a.try_cmp(b).expect("same variant"));
}

/// Nonconformity scores of all items, in item order.
pub fn score_items(items: &[LabeledPrediction], config: &CalibConfig) -> Result<Vec<LambdaValue>> {
    for item in items {
        config.check_family(item.family())?;
    }
    let tau = config.tau;
    Ok(items
        .par_iter()
        .map(|item| nonconformity_score(item, tau))
        .collect())
}

/// Hex SHA-256 over the sorted scores, one canonical value per line.
pub fn score_digest(scores: &[LambdaValue]) -> String {
    let mut sorted = scores.to_vec();
    sort_scores(&mut sorted);
    let mut hasher = Sha256::new();
    for s in &sorted {
        hasher.update(s.to_string().as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// The persisted result of a calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedModel {
    pub config: CalibConfig,
    pub lambda_hat: LambdaValue,
    pub n: usize,
    pub created_at: String,
    pub score_digest: String,
}

impl CalibratedModel {
    pub fn from_scores(config: CalibConfig, scores: &[LambdaValue]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyCalibrationSet);
        }
        let lambda_hat = conformal_quantile(scores, config.alpha)?;
        if lambda_hat.kind() != config.family {
            return Err(Error::VariantMismatch {
                expected: config.family.name(),
            });
        }
        Ok(Self {
            lambda_hat,
            n: scores.len(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            score_digest: score_digest(scores),
            config,
        })
    }

    pub fn to_json(&self) -> String {
        let lambda_hat = match self.lambda_hat {
            LambdaValue::ThresholdLevel(level) => Value::from(level),
            LambdaValue::ThresholdAboveMax => Value::from("above_max"),
            LambdaValue::ErosionSteps(steps) => Value::from(steps),
        };
        let doc = ModelDocument {
            family: self.config.family.name().to_string(),
            alpha: self.config.alpha,
            tau: self.config.tau,
            lambda_hat,
            se: self
                .config
                .se
                .as_ref()
                .map(|se| se.offsets().iter().map(|&(a, b)| [a, b]).collect()),
            n: self.n,
            score_digest: self.score_digest.clone(),
            created_at: self.created_at.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        let family: FamilyKind = doc.family.parse().map_err(Error::Model)?;
        let se = match (family, doc.se) {
            (FamilyKind::Erosion, Some(offsets)) => Some(StructuringElement::new(
                offsets.into_iter().map(|[a, b]| (a, b)),
            )?),
            (FamilyKind::Erosion, None) => {
                return Err(Error::Model("erosion model without \"se\"".into()))
            }
            (FamilyKind::Threshold, _) => None,
        };
        let config = CalibConfig::new(doc.alpha, doc.tau, family, se)?;
        let lambda_hat = match (family, &doc.lambda_hat) {
            (FamilyKind::Threshold, Value::String(s)) if s == "above_max" => {
                LambdaValue::ThresholdAboveMax
            }
            (FamilyKind::Threshold, Value::Number(x)) => {
                let level = LambdaValue::ThresholdLevel(x.as_f64().unwrap_or(f64::NAN));
                level.validate()?;
                level
            }
            (FamilyKind::Erosion, Value::Number(x)) => {
                let steps = x
                    .as_u64()
                    .and_then(|s| u32::try_from(s).ok())
                    .ok_or_else(|| Error::Model(format!("invalid erosion lambda_hat {x}")))?;
                LambdaValue::ErosionSteps(steps)
            }
            (_, other) => {
                return Err(Error::Model(format!(
                    "invalid lambda_hat {other} for {family} model"
                )))
            }
        };
        if doc.n == 0 {
            return Err(Error::Model("n must be at least 1".into()));
        }
        Ok(Self {
            config,
            lambda_hat,
            n: doc.n,
            created_at: doc.created_at,
            score_digest: doc.score_digest,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    family: String,
    alpha: f64,
    tau: f64,
    lambda_hat: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    se: Option<Vec<[i32; 2]>>,
    n: usize,
    score_digest: String,
    created_at: String,
}

/// Calibrates on labeled items.
pub fn calibrate(items: &[LabeledPrediction], config: &CalibConfig) -> Result<CalibratedModel> {
    if items.is_empty() {
        return Err(Error::EmptyCalibrationSet);
    }
    let scores = score_items(items, config)?;
    CalibratedModel::from_scores(config.clone(), &scores)
}

/// Confidence mask, uncertain region and the prediction they partition.
#[derive(Clone, Debug, PartialEq)]
pub struct ApplyResult {
    pub confidence: BinaryMask,
    pub uncertain: BinaryMask,
    pub prediction: BinaryMask,
}

/// Shrinks a new prediction to its confidence mask at the calibrated level.
pub fn apply(model: &CalibratedModel, input: &InnerFamily) -> Result<ApplyResult> {
    model.config.check_family(input)?;
    let prediction = input.prediction().clone();
    let confidence = input.inner_mask(&model.lambda_hat)?;
    let uncertain = prediction.difference(&confidence)?;
    Ok(ApplyResult {
        confidence,
        uncertain,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ScoreMap;
    use proptest::prelude::*;

    fn steps(v: &[u32]) -> Vec<LambdaValue> {
        v.iter().copied().map(LambdaValue::ErosionSteps).collect()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(
            conformal_quantile(&steps(&[1, 2, 3, 4]), 0.5).unwrap(),
            LambdaValue::ErosionSteps(3)
        );
        let nine = steps(&[5, 1, 9, 3, 7, 2, 8, 4, 6]);
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(
            conformal_quantile(&nine, 0.1).unwrap(),
            LambdaValue::ErosionSteps(9)
        );
        assert_eq!(quantile_rank(3, 0.1), 4);
        assert_eq!(
            conformal_quantile(&steps(&[1, 2, 3]), 0.1).unwrap(),
            FamilyKind::Erosion.lambda_max()
        );
        assert_eq!(
            conformal_quantile(&[LambdaValue::ThresholdLevel(0.7)], 0.1).unwrap(),
            LambdaValue::ThresholdAboveMax
        );
    }

    #[test]
    fn quantile_rank_ignores_rounding_noise() {
        // 10 * (1 - 0.7) is 3.0000000000000004 in binary floating point
        assert_eq!(quantile_rank(9, 0.7), 3);
        assert_eq!(quantile_rank(19, 0.95), 1);
        assert_eq!(quantile_rank(10, 0.7), 4);
    }

    #[test]
    fn quantile_errors() {
        assert!(matches!(
            conformal_quantile(&[], 0.1),
            Err(Error::EmptyScores)
        ));
        assert!(matches!(
            conformal_quantile(
                &[LambdaValue::ErosionSteps(1), LambdaValue::ThresholdAboveMax],
                0.1
            ),
            Err(Error::MixedVariants)
        ));
    }

    #[test]
    fn quantile_keeps_duplicates() {
        let s = steps(&[2, 2, 2, 5]);
        assert_eq!(
            conformal_quantile(&s, 0.5).unwrap(),
            LambdaValue::ErosionSteps(2)
        );
        assert_eq!(
            conformal_quantile(&s, 0.25).unwrap(),
            LambdaValue::ErosionSteps(5)
        );
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            CalibConfig::threshold(0.0, 0.1),
            Err(Error::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            CalibConfig::threshold(1.0, 0.1),
            Err(Error::AlphaOutOfRange(_))
        ));
        assert!(matches!(
            CalibConfig::threshold(0.1, 1.1),
            Err(Error::TauOutOfRange(_))
        ));
        assert!(CalibConfig::threshold(0.1, 0.0).is_ok());
        let c = CalibConfig::new(0.1, 0.0, FamilyKind::Erosion, None).unwrap();
        assert_eq!(c.se(), Some(&StructuringElement::cross4()));
    }

    fn erosion_item(pred: BinaryMask, truth: BinaryMask) -> LabeledPrediction {
        LabeledPrediction::new(
            InnerFamily::erosion(pred, StructuringElement::cross4()),
            truth,
        )
        .unwrap()
    }

    #[test]
    fn single_item_falls_back_to_greatest_lambda() {
        let m = BinaryMask::full(3, 3).unwrap();
        let cfg = CalibConfig::erosion(0.1, 0.5, StructuringElement::cross4()).unwrap();
        let model = calibrate(&[erosion_item(m.clone(), m)], &cfg).unwrap();
        assert_eq!(model.n, 1);
        assert_eq!(model.lambda_hat, FamilyKind::Erosion.lambda_max());
    }

    #[test]
    fn empty_predictions_give_lambda_zero() {
        let e = BinaryMask::empty(4, 4).unwrap();
        let items: Vec<_> = (0..20)
            .map(|_| erosion_item(e.clone(), e.clone()))
            .collect();
        let cfg = CalibConfig::erosion(0.1, 0.0, StructuringElement::cross4()).unwrap();
        assert_eq!(
            calibrate(&items, &cfg).unwrap().lambda_hat,
            LambdaValue::ErosionSteps(0)
        );
    }

    #[test]
    fn calibrate_rejects_empty_and_mismatched_sets() {
        let cfg = CalibConfig::threshold(0.1, 0.1).unwrap();
        assert!(matches!(
            calibrate(&[], &cfg),
            Err(Error::EmptyCalibrationSet)
        ));
        let m = BinaryMask::full(3, 3).unwrap();
        assert!(matches!(
            calibrate(&[erosion_item(m.clone(), m)], &cfg),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn apply_identity_and_sentinel() {
        let scores = ScoreMap::new(2, 2, vec![0.6, 0.9, 0.2, 1.0]).unwrap();
        let fam = InnerFamily::threshold(scores);
        let cfg = CalibConfig::threshold(0.1, 0.1).unwrap();
        let mut model =
            CalibratedModel::from_scores(cfg, &[LambdaValue::ThresholdLevel(0.5); 20]).unwrap();
        let r = apply(&model, &fam).unwrap();
        assert_eq!(r.confidence, r.prediction);
        assert!(r.uncertain.is_empty());
        model.lambda_hat = LambdaValue::ThresholdAboveMax;
        let r = apply(&model, &fam).unwrap();
        assert!(r.confidence.is_empty());
        assert_eq!(r.uncertain, r.prediction);
    }

    #[test]
    fn apply_two_erosions_on_5x5() {
        let se = StructuringElement::cross4();
        let pred = BinaryMask::full(5, 5).unwrap();
        let cfg = CalibConfig::erosion(0.5, 0.0, se.clone()).unwrap();
        let model = CalibratedModel::from_scores(cfg, &steps(&[2, 2, 2])).unwrap();
        assert_eq!(model.lambda_hat, LambdaValue::ErosionSteps(2));
        let r = apply(&model, &InnerFamily::erosion(pred.clone(), se.clone())).unwrap();
        // oracle: the erosion definition applied twice pixel by pixel
        let once = |m: &BinaryMask| {
            BinaryMask::from_fn(5, 5, |i, j| {
                se.offsets().iter().all(|&(di, dj)| {
                    m.get_signed(i as isize + di as isize, j as isize + dj as isize)
                })
            })
            .unwrap()
        };
        let expected = once(&once(&pred));
        assert_eq!(r.confidence, expected);
        assert_eq!(expected.cardinality(), 1);
        assert!(expected.get(2, 2));
    }

    #[test]
    fn apply_rejects_other_family() {
        let cfg = CalibConfig::threshold(0.1, 0.1).unwrap();
        let model =
            CalibratedModel::from_scores(cfg, &[LambdaValue::ThresholdLevel(0.6); 10]).unwrap();
        let fam = InnerFamily::erosion(
            BinaryMask::full(2, 2).unwrap(),
            StructuringElement::cross4(),
        );
        assert!(matches!(
            apply(&model, &fam),
            Err(Error::VariantMismatch { .. })
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let cfg = CalibConfig::threshold(0.1, 0.01).unwrap();
        let scores = [
            LambdaValue::ThresholdLevel(0.73f32 as f64),
            LambdaValue::ThresholdAboveMax,
        ];
        let model = CalibratedModel::from_scores(cfg, &scores).unwrap();
        let back = CalibratedModel::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);

        let mut m2 = model.clone();
        m2.lambda_hat = LambdaValue::ThresholdLevel(0.73f32 as f64);
        assert_eq!(CalibratedModel::from_json(&m2.to_json()).unwrap(), m2);

        let cfg = CalibConfig::erosion(0.2, 0.0, StructuringElement::square8()).unwrap();
        let model =
            CalibratedModel::from_scores(cfg, &steps(&[0, 3, 1, 1, 2, 2, 5, 1, 1])).unwrap();
        let json = model.to_json();
        let v: Value = serde_json::from_str(&json).unwrap();
        for key in [
            "family",
            "alpha",
            "tau",
            "lambda_hat",
            "se",
            "n",
            "score_digest",
            "created_at",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["family"], "erosion");
        assert_eq!(CalibratedModel::from_json(&json).unwrap(), model);
    }

    #[test]
    fn model_json_rejects_bad_documents() {
        let bad = r#"{"family":"threshold","alpha":0.1,"tau":0.1,"lambda_hat":0.2,"n":3,"score_digest":"","created_at":""}"#;
        assert!(CalibratedModel::from_json(bad).is_err());
        let bad = r#"{"family":"erosion","alpha":0.1,"tau":0.1,"lambda_hat":2,"n":3,"score_digest":"","created_at":""}"#;
        assert!(CalibratedModel::from_json(bad).is_err());
        let bad = r#"{"family":"erosion","alpha":0.0,"tau":0.1,"lambda_hat":2,"se":[[0,0],[0,1]],"n":3,"score_digest":"","created_at":""}"#;
        assert!(matches!(
            CalibratedModel::from_json(bad),
            Err(Error::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn digest_ignores_order() {
        assert_eq!(
            score_digest(&steps(&[3, 1, 2])),
            score_digest(&steps(&[1, 2, 3]))
        );
        assert_ne!(
            score_digest(&steps(&[3, 1, 2])),
            score_digest(&steps(&[1, 2, 2]))
        );
    }

    proptest! {
        #[test]
        fn quantile_matches_sort_and_index(v in proptest::collection::vec(0u32..50, 1..300), alpha in 0.01f64..0.99) {
            let scores = steps(&v);
            let k = quantile_rank(v.len(), alpha);
            let mut sorted = v.clone();
            sorted.sort();
            let expected = if k > v.len() { u32::MAX } else { sorted[k - 1] };
            prop_assert_eq!(conformal_quantile(&scores, alpha).unwrap(), LambdaValue::ErosionSteps(expected));
        }

        #[test]
        fn smaller_alpha_never_lowers_lambda(v in proptest::collection::vec(0u32..50, 1..100), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let scores = steps(&v);
            let strict = conformal_quantile(&scores, lo).unwrap();
            let loose = conformal_quantile(&scores, hi).unwrap();
            prop_assert!(strict >= loose);
        }
    }
}
