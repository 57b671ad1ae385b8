//! On-disk dataset formats and overlay rendering.

mod image;
mod manifest;
mod npy;

use std::path::Path;

pub use self::image::{
    decode_gray, decode_pgm, decode_png, encode_pgm, encode_png, encode_rgb_png, load_mask,
    save_mask, GrayImage, FOREGROUND_LEVEL,
};
pub use self::manifest::{
    load_manifest, load_manifest_at, write_manifest, DatasetManifest, LoadedEntry, ManifestEntry,
    MANIFEST_FILE,
};
pub use self::npy::{decode_scoremap, encode_scoremap, load_scoremap, save_scoremap};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, StructuringElement};

/// Reads a structuring element stored as a JSON list of `[di, dj]` pairs.
pub fn load_structuring_element(path: impl AsRef<Path>) -> Result<StructuringElement> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let offsets: Vec<[i32; 2]> =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    StructuringElement::new(offsets.into_iter().map(|[a, b]| (a, b)))
}

/// RGB colors of the overlay legend.
pub mod palette {
    pub const BACKGROUND: [u8; 3] = [0, 0, 0];
    /// Ground-truth pixels outside the confidence mask (missed or rejected).
    pub const TRUTH: [u8; 3] = [46, 134, 222];
    /// False positives kept in the confidence mask.
    pub const FALSE_POSITIVE: [u8; 3] = [231, 76, 60];
    /// True positives kept in the confidence mask.
    pub const TRUE_POSITIVE: [u8; 3] = [241, 196, 15];
    /// False positives moved to the uncertain region.
    pub const REJECTED_FALSE_POSITIVE: [u8; 3] = [155, 89, 182];
    /// Confidence mask, when no ground truth is known.
    pub const CONFIDENCE: [u8; 3] = [80, 80, 80];
    /// Uncertain region, when no ground truth is known.
    pub const UNCERTAIN: [u8; 3] = [190, 190, 190];
}

/// Renders an interleaved RGB8 overlay of a confidence/uncertain split.
///
/// With ground truth each pixel gets one legend role; without it the
/// confidence mask is dark grey and the uncertain region light grey.
pub fn render_overlay(
    confidence: &BinaryMask,
    uncertain: &BinaryMask,
    truth: Option<&BinaryMask>,
) -> Result<Vec<u8>> {
    confidence.same_dims(uncertain)?;
    if let Some(t) = truth {
        confidence.same_dims(t)?;
    }
    let mut rgb = Vec::with_capacity(confidence.pixel_count() * 3);
    for i in 0..confidence.height() {
        for j in 0..confidence.width() {
            let (kept, rejected) = (confidence.get(i, j), uncertain.get(i, j));
            let color = match truth.map(|t| t.get(i, j)) {
                None if kept => palette::CONFIDENCE,
                None if rejected => palette::UNCERTAIN,
                None => palette::BACKGROUND,
                Some(true) if kept => palette::TRUE_POSITIVE,
                Some(true) => palette::TRUTH,
                Some(false) if kept => palette::FALSE_POSITIVE,
                Some(false) if rejected => palette::REJECTED_FALSE_POSITIVE,
                Some(false) => palette::BACKGROUND,
            };
            rgb.extend_from_slice(&color);
        }
    }
    Ok(rgb)
}

pub fn save_overlay(
    path: impl AsRef<Path>,
    confidence: &BinaryMask,
    uncertain: &BinaryMask,
    truth: Option<&BinaryMask>,
) -> Result<()> {
    let rgb = render_overlay(confidence, uncertain, truth)?;
    let png = encode_rgb_png(confidence.width(), confidence.height(), &rgb);
    image::write(path.as_ref(), &png)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_roles() {
        // pixels: kept TP, kept FP, rejected FP, missed truth, background
        let confidence = BinaryMask::from_flags(5, 1, &[true, true, false, false, false]).unwrap();
        let uncertain = BinaryMask::from_flags(5, 1, &[false, false, true, false, false]).unwrap();
        let truth = BinaryMask::from_flags(5, 1, &[true, false, false, true, false]).unwrap();
        let rgb = render_overlay(&confidence, &uncertain, Some(&truth)).unwrap();
        let px: Vec<[u8; 3]> = rgb.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        assert_eq!(
            px,
            vec![
                palette::TRUE_POSITIVE,
                palette::FALSE_POSITIVE,
                palette::REJECTED_FALSE_POSITIVE,
                palette::TRUTH,
                palette::BACKGROUND
            ]
        );
        let rgb = render_overlay(&confidence, &uncertain, None).unwrap();
        assert_eq!(&rgb[..3], &palette::CONFIDENCE);
        assert_eq!(&rgb[6..9], &palette::UNCERTAIN);
    }

    #[test]
    fn structuring_element_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("se.json");
        std::fs::write(&p, "[[0,0],[0,1],[0,-1]]").unwrap();
        let se = load_structuring_element(&p).unwrap();
        assert_eq!(se.offsets(), &[(0, -1), (0, 0), (0, 1)]);
        std::fs::write(&p, "[[0,1]]").unwrap();
        assert!(matches!(
            load_structuring_element(&p),
            Err(Error::InvalidStructuringElement(_))
        ));
    }
}
