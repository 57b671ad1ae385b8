//! Conformal confidence masks for binary segmentation.
//!
//! Given a segmentation predictor's outputs (sigmoid score maps or binary
//! masks) and a labeled calibration set, `confmask` picks a single shrink
//! level so that, at confidence `1 - alpha`, the shrunken "confidence mask"
//! of a new image keeps at most a fraction `tau` of the original predicted
//! area as false positives.
//!
//! ```
//! use confmask::{calibrate, apply, CalibConfig, InnerFamily, LabeledPrediction, StructuringElement};
//! use confmask::datagen::{synth_items, SynthParams};
//! use confmask::FamilyKind;
//!
//! let se = StructuringElement::cross4();
//! let items: Vec<LabeledPrediction> = synth_items(&SynthParams::default(), 0, 100)
//!     .iter()
//!     .map(|it| it.labeled(FamilyKind::Erosion, &se))
//!     .collect();
//! let config = CalibConfig::erosion(0.1, 0.01, se.clone()).unwrap();
//! let model = calibrate(&items, &config).unwrap();
//!
//! let new = synth_items(&SynthParams::default(), 1000, 1).remove(0);
//! let out = apply(&model, &InnerFamily::erosion(new.prediction(), se)).unwrap();
//! assert!(out.confidence.is_subset_of(&out.prediction).unwrap());
//! ```

pub mod cli;
pub mod conformal;
pub mod datagen;
pub mod error;
pub mod inner;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod risk;

pub use conformal::{
    apply, calibrate, conformal_quantile, ApplyResult, CalibConfig, CalibratedModel,
};
pub use error::{Error, Result};
pub use inner::{FamilyKind, InnerFamily, LambdaValue};
pub use mask::{erode, threshold, BinaryMask, ScoreMap, StructuringElement};
pub use metrics::{
    accepted_tp_fraction, contraction_ratio, empirical_validity, run_protocol, EvalReport,
    ImageEval, MethodSummary, ProtocolResult,
};
pub use risk::{afp, fp_count, nonconformity_score, LabeledPrediction};
