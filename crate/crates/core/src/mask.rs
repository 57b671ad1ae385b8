//! Bitset masks with the binary morphology used by the inner-set families.
//!
//! Masks are stored row-major, one bit per pixel, with each row padded to a
//! whole number of `u64` words. Padding bits are always zero, which lets
//! erosion and dilation work a word at a time by shifting rows.
//!
//! Pixel coordinates are `(i, j)` = (row, column). Pixels outside the grid are
//! background for every operation.

use std::fmt;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

fn words_per_row(width: usize) -> usize {
    width.div_ceil(WORD_BITS)
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimensions { width, height });
    }
    Ok(())
}

/// A fixed-size binary mask over a `width x height` grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    stride: usize,
    words: Vec<u64>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        let stride = words_per_row(width);
        Ok(Self {
            width,
            height,
            stride,
            words: vec![0; stride * height],
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_fn(width, height, |_, _| true)
    }

    /// Builds a mask by evaluating `f(i, j)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut mask = Self::empty(width, height)?;
        for i in 0..height {
            for j in 0..width {
                if f(i, j) {
                    mask.words[i * mask.stride + j / WORD_BITS] |= 1 << (j % WORD_BITS);
                }
            }
        }
        Ok(mask)
    }

    /// Builds a mask from a row-major slice of flags.
    pub fn from_flags(width: usize, height: usize, flags: &[bool]) -> Result<Self> {
        check_dims(width, height)?;
        if flags.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                found: flags.len(),
            });
        }
        Self::from_fn(width, height, |i, j| flags[i * width + j])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Foreground flag at row `i`, column `j`.
    ///
    /// Panics if the coordinate lies outside the grid.
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(
            i < self.height && j < self.width,
            "pixel ({i}, {j}) outside {}x{} grid",
            self.width,
            self.height
        );
        self.words[i * self.stride + j / WORD_BITS] >> (j % WORD_BITS) & 1 == 1
    }

    /// Foreground flag at a signed coordinate; out-of-grid is background.
    pub fn get_signed(&self, i: isize, j: isize) -> bool {
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            return false;
        }
        self.get(i as usize, j as usize)
    }

    /// Row-major iterator over all pixel flags.
    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.height).flat_map(move |i| (0..self.width).map(move |j| self.get(i, j)))
    }

    /// Row-major flags.
    pub fn to_flags(&self) -> Vec<bool> {
        self.iter().collect()
    }

    /// Number of foreground pixels.
    pub fn cardinality(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left_width: self.width,
                left_height: self.height,
                right_width: other.width,
                right_height: other.height,
            });
        }
        Ok(())
    }

    /// Number of pixels foreground in both masks.
    pub fn intersect_count(&self, other: &BinaryMask) -> Result<usize> {
        self.same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool> {
        self.same_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0))
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(u64, u64) -> u64) -> Result<BinaryMask> {
        self.same_dims(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| op(a, b))
            .collect();
        Ok(BinaryMask { words, ..*self })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a | b)
    }

    /// Pixels of `self` that are not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> BinaryMask {
        let mut out = BinaryMask {
            words: self.words.iter().map(|w| !w).collect(),
            ..*self
        };
        out.clear_padding();
        out
    }

    /// Morphological erosion: a pixel survives iff every offset of `se`
    /// lands on an in-grid foreground pixel.
    pub fn erode(&self, se: &StructuringElement) -> BinaryMask {
        let mut out = BinaryMask::full_words(self);
        let mut shifted = vec![0u64; self.stride];
        for &(di, dj) in se.offsets() {
            for i in 0..self.height {
                let dst = &mut out.words[i * self.stride..(i + 1) * self.stride];
                let src_row = i as isize + di as isize;
                if src_row < 0 || src_row as usize >= self.height {
                    dst.fill(0);
                    continue;
                }
                let src = self.row(src_row as usize);
                shift_row(src, &mut shifted, dj as isize);
                for (d, s) in dst.iter_mut().zip(&shifted) {
                    *d &= s;
                }
            }
        }
        out.clear_padding();
        out
    }

    /// Morphological dilation: `{p : p - b in self for some b in se}`.
    pub fn dilate(&self, se: &StructuringElement) -> BinaryMask {
        let mut out = BinaryMask {
            words: vec![0; self.words.len()],
            ..*self
        };
        let mut shifted = vec![0u64; self.stride];
        for &(di, dj) in se.offsets() {
            for i in 0..self.height {
                let src_row = i as isize - di as isize;
                if src_row < 0 || src_row as usize >= self.height {
                    continue;
                }
                shift_row(self.row(src_row as usize), &mut shifted, -(dj as isize));
                let dst = &mut out.words[i * self.stride..(i + 1) * self.stride];
                for (d, s) in dst.iter_mut().zip(&shifted) {
                    *d |= s;
                }
            }
        }
        out.clear_padding();
        out
    }

    /// Erosion applied `steps` times. Stops early once the mask is empty.
    pub fn erode_n(&self, se: &StructuringElement, steps: usize) -> BinaryMask {
        let mut mask = self.clone();
        for _ in 0..steps {
            if mask.is_empty() {
                break;
            }
            mask = mask.erode(se);
        }
        mask
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    fn full_words(shape: &BinaryMask) -> BinaryMask {
        let mut out = BinaryMask {
            words: vec![u64::MAX; shape.words.len()],
            ..*shape
        };
        out.clear_padding();
        out
    }

    fn clear_padding(&mut self) {
        let tail = self.width % WORD_BITS;
        if tail == 0 {
            return;
        }
        let keep = (1u64 << tail) - 1;
        for i in 0..self.height {
            self.words[i * self.stride + self.stride - 1] &= keep;
        }
    }
}

/// Writes `dst[j] = src[j + shift]`, zero where `j + shift` leaves the row.
fn shift_row(src: &[u64], dst: &mut [u64], shift: isize) {
    let n = src.len();
    let word_shift = shift.unsigned_abs() / WORD_BITS;
    let bit_shift = (shift.unsigned_abs() % WORD_BITS) as u32;
    if shift >= 0 {
        for (k, out) in dst.iter_mut().enumerate().take(n) {
            let lo = src.get(k + word_shift).copied().unwrap_or(0);
            let hi = src.get(k + word_shift + 1).copied().unwrap_or(0);
            *out = if bit_shift == 0 {
                lo
            } else {
                (lo >> bit_shift) | (hi << (WORD_BITS as u32 - bit_shift))
            };
        }
    } else {
        for (k, out) in dst.iter_mut().enumerate().take(n) {
            let hi = k.checked_sub(word_shift).map(|x| src[x]).unwrap_or(0);
            let lo = k.checked_sub(word_shift + 1).map(|x| src[x]).unwrap_or(0);
            *out = if bit_shift == 0 {
                hi
            } else {
                (hi << bit_shift) | (lo >> (WORD_BITS as u32 - bit_shift))
            };
        }
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "BinaryMask {}x{} ({} fg)",
            self.width,
            self.height,
            self.cardinality()
        )?;
        if self.width <= 64 && self.height <= 64 {
            for i in 0..self.height {
                let row: String = (0..self.width)
                    .map(|j| if self.get(i, j) { '#' } else { '.' })
                    .collect();
                writeln!(f, "{row}")?;
            }
        }
        Ok(())
    }
}

/// Per-pixel sigmoid scores in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, scores: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if scores.len() != width * height {
            return Err(Error::BufferLength {
                expected: width * height,
                found: scores.len(),
            });
        }
        if let Some((index, &s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::ScoreOutOfRange {
                value: s as f64,
                index,
            });
        }
        Ok(Self {
            width,
            height,
            scores,
        })
    }

    pub fn uniform(width: usize, height: usize, score: f32) -> Result<Self> {
        Self::new(width, height, vec![score; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.scores[i * self.width + j]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.scores
    }

    /// Pixels whose score is at least `lambda` (inclusive).
    pub fn threshold(&self, lambda: f64) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |i, j| {
            self.get(i, j) as f64 >= lambda
        })
        .expect("score map dimensions are nonzero")
    }
}

/// Free-function form of [`ScoreMap::threshold`].
pub fn threshold(scores: &ScoreMap, lambda: f64) -> BinaryMask {
    scores.threshold(lambda)
}

/// Free-function form of [`BinaryMask::erode`].
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    mask.erode(se)
}

/// A set of `(di, dj)` offsets containing the origin.
///
/// Besides the origin at least one other offset is required, so that
/// repeated erosion empties any mask within `max(width, height)` steps.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StructuringElement {
    offsets: Vec<(i32, i32)>,
}

impl StructuringElement {
    pub fn new(offsets: impl IntoIterator<Item = (i32, i32)>) -> Result<Self> {
        let mut offsets: Vec<(i32, i32)> = offsets.into_iter().collect();
        offsets.sort_unstable();
        offsets.dedup();
        if !offsets.contains(&(0, 0)) {
            return Err(Error::InvalidStructuringElement(
                "offsets must include the origin (0, 0)".into(),
            ));
        }
        if offsets.len() < 2 {
            return Err(Error::InvalidStructuringElement(
                "at least one offset besides the origin is required".into(),
            ));
        }
        Ok(Self { offsets })
    }

    /// The 4-connected cross `{(0,0), (+-1,0), (0,+-1)}`.
    pub fn cross4() -> Self {
        Self::new([(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)]).unwrap()
    }

    /// The 3x3 square.
    pub fn square8() -> Self {
        Self::new((-1..=1).flat_map(|di| (-1..=1).map(move |dj| (di, dj)))).unwrap()
    }

    /// Sorted, deduplicated offsets.
    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    /// Largest absolute coordinate among the offsets.
    pub fn reach(&self) -> usize {
        self.offsets
            .iter()
            .map(|&(a, b)| a.unsigned_abs().max(b.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0)
    }

    /// Offsets mirrored through the origin.
    pub fn reflected(&self) -> Self {
        Self::new(self.offsets.iter().map(|&(a, b)| (-a, -b))).unwrap()
    }
}
