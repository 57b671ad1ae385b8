//! Score maps in the numpy `.npy` format.
//!
//! Reading accepts format versions 1.0 through 3.0 with a little-endian
//! `f4` or `f8` dtype in C order. Arrays must be 2-D `(height, width)`; a
//! 3-D array with a singleton leading or trailing axis is squeezed. Writing
//! always produces version 1.0 `<f4`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::ScoreMap;

const MAGIC: &[u8] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, PartialEq)]
struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Minimal reader for the python dict literal in an npy header.
struct DictParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> DictParser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> std::result::Result<(), String> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(format!(
                "malformed npy header: expected '{}' at byte {}",
                c as char, self.pos
            ))
        }
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        let quote = match self.s.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err("malformed npy header: expected string".into()),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.expect(quote)?;
        Ok(out)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len()
            && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_')
        {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn shape(&mut self) -> std::result::Result<Vec<usize>, String> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.eat(b')') {
                return Ok(dims);
            }
            let w = self.word();
            let dim = std::str::from_utf8(w)
                .ok()
                .and_then(|w| w.trim_end_matches('L').parse().ok())
                .ok_or_else(|| "malformed npy header: bad shape".to_string())?;
            dims.push(dim);
            if !self.eat(b',') {
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }

    fn header(&mut self) -> std::result::Result<Header, String> {
        let (mut descr, mut fortran_order, mut shape) = (None, None, None);
        self.expect(b'{')?;
        loop {
            if self.eat(b'}') {
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            match key.as_str() {
                "descr" => descr = Some(self.string()?),
                "fortran_order" => {
                    fortran_order = Some(match self.word() {
                        b"True" => true,
                        b"False" => false,
                        _ => return Err("malformed npy header: bad fortran_order".into()),
                    })
                }
                "shape" => shape = Some(self.shape()?),
                other => return Err(format!("malformed npy header: unexpected key {other:?}")),
            }
            if !self.eat(b',') {
                self.expect(b'}')?;
                break;
            }
        }
        Ok(Header {
            descr: descr.ok_or("npy header missing 'descr'")?,
            fortran_order: fortran_order.ok_or("npy header missing 'fortran_order'")?,
            shape: shape.ok_or("npy header missing 'shape'")?,
        })
    }
}

/// Splits an npy file into its header and raw data.
fn split_header(data: &[u8]) -> std::result::Result<(Header, &[u8]), String> {
    if data.len() < 10 || &data[..6] != MAGIC {
        return Err("bad magic: not an npy file".into());
    }
    let (len, start) = match data[6] {
        1 => (u16::from_le_bytes([data[8], data[9]]) as usize, 10),
        2 | 3 => {
            let bytes = data.get(8..12).ok_or("truncated npy header")?;
            (u32::from_le_bytes(bytes.try_into().unwrap()) as usize, 12)
        }
        v => return Err(format!("unsupported npy version {v}.{}", data[7])),
    };
    let text = data.get(start..start + len).ok_or("truncated npy header")?;
    let header = DictParser { s: text, pos: 0 }.header()?;
    Ok((header, &data[start + len..]))
}

/// Decodes a 2-D score map.
pub fn decode_scoremap(data: &[u8]) -> std::result::Result<ScoreMap, String> {
    let (header, body) = split_header(data)?;
    if header.fortran_order {
        return Err("unsupported layout: Fortran order".into());
    }
    let (height, width) = match header.shape[..] {
        [h, w] => (h, w),
        [1, h, w] => {
            log::info!(
                "squeezing leading singleton axis of npy shape {:?}",
                header.shape
            );
            (h, w)
        }
        [h, w, 1] => {
            log::info!(
                "squeezing trailing singleton axis of npy shape {:?}",
                header.shape
            );
            (h, w)
        }
        _ => {
            return Err(format!(
                "unsupported rank: shape {:?} is not 2-D",
                header.shape
            ))
        }
    };
    if width == 0 || height == 0 {
        return Err(format!("zero dimensions {width}x{height}"));
    }
    let n = width * height;
    let values: Vec<f64> = match header.descr.as_str() {
        "<f4" => read_values::<4>(body, n)?
            .map(|b| f32::from_le_bytes(b) as f64)
            .collect(),
        "<f8" => read_values::<8>(body, n)?.map(f64::from_le_bytes).collect(),
        other => {
            return Err(format!(
                "unsupported dtype {other:?} (expected '<f4' or '<f8')"
            ))
        }
    };
    if let Some((k, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(format!("score out of range: {v} at element {k}"));
    }
    let scores = values.into_iter().map(|v| v as f32).collect();
    ScoreMap::new(width, height, scores).map_err(|e| e.to_string())
}

fn read_values<const N: usize>(
    body: &[u8],
    n: usize,
) -> std::result::Result<impl Iterator<Item = [u8; N]> + '_, String> {
    if body.len() < n * N {
        return Err(format!(
            "truncated npy data: need {} bytes, have {}",
            n * N,
            body.len()
        ));
    }
    Ok(body[..n * N].chunks_exact(N).map(|c| c.try_into().unwrap()))
}

/// Encodes a score map as npy version 1.0, `<f4`, shape `(height, width)`.
pub fn encode_scoremap(scores: &ScoreMap) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}), }}",
        scores.height(),
        scores.width()
    );
    let unpadded = MAGIC.len() + 4 + dict.len() + 1;
    let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + dict.len() + 4 * scores.as_slice().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for s in scores.as_slice() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn load_scoremap(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scoremap(&data).map_err(|m| Error::format(path, m))
}

pub fn save_scoremap(path: impl AsRef<Path>, scores: &ScoreMap) -> Result<()> {
    super::image::write(path.as_ref(), &encode_scoremap(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn npy_with(header: &str, body: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(body);
        out
    }

    #[test]
    fn single_value() {
        let data = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1), }\n",
            &0.5f32.to_le_bytes(),
        );
        let s = decode_scoremap(&data).unwrap();
        assert_eq!(s.dims(), (1, 1));
        assert_eq!(s.get(0, 0), 0.5);
    }

    #[test]
    fn f8_and_singleton_axes() {
        let body: Vec<u8> = [0.25f64, 1.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        for shape in ["(1, 2)", "(1, 1, 2)", "(1, 2, 1)"] {
            let h = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape}, }}\n");
            let s = decode_scoremap(&npy_with(&h, &body)).unwrap();
            assert_eq!(s.as_slice(), &[0.25, 1.0]);
        }
    }

    #[test]
    fn rejects_out_of_range() {
        let data = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1), }\n",
            &1.5f32.to_le_bytes(),
        );
        assert!(decode_scoremap(&data)
            .unwrap_err()
            .contains("score out of range"));
        let data = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1), }\n",
            &f32::NAN.to_le_bytes(),
        );
        assert!(decode_scoremap(&data)
            .unwrap_err()
            .contains("score out of range"));
    }

    #[test]
    fn rejects_fortran_order() {
        let data = npy_with(
            "{'descr': '<f4', 'fortran_order': True, 'shape': (1, 1), }\n",
            &0.5f32.to_le_bytes(),
        );
        assert!(decode_scoremap(&data)
            .unwrap_err()
            .contains("unsupported layout"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(decode_scoremap(b"NOTNUMPY00")
            .unwrap_err()
            .contains("bad magic"));
        let be = npy_with(
            "{'descr': '>f4', 'fortran_order': False, 'shape': (1, 1), }\n",
            &[0; 4],
        );
        assert!(decode_scoremap(&be).unwrap_err().contains("dtype"));
        let rank1 = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (4,), }\n",
            &[0; 16],
        );
        assert!(decode_scoremap(&rank1).unwrap_err().contains("rank"));
        let short = npy_with(
            "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2), }\n",
            &[0; 8],
        );
        assert!(decode_scoremap(&short).unwrap_err().contains("truncated"));
        let garbled = npy_with("{'descr' '<f4'}\n", &[]);
        assert!(decode_scoremap(&garbled).unwrap_err().contains("malformed"));
    }

    #[test]
    fn header_is_aligned() {
        let s = ScoreMap::uniform(3, 7, 0.25).unwrap();
        let data = encode_scoremap(&s);
        let header_len = u16::from_le_bytes([data[8], data[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(data[10 + header_len - 1], b'\n');
        assert!(std::str::from_utf8(&data[10..10 + header_len])
            .unwrap()
            .contains("'shape': (7, 3)"));
    }

    proptest! {
        #[test]
        fn scoremap_round_trip(w in 1usize..30, h in 1usize..30, raw in proptest::collection::vec(0.0f32..=1.0, 900)) {
            let s = ScoreMap::new(w, h, raw[..w * h].to_vec()).unwrap();
            prop_assert_eq!(decode_scoremap(&encode_scoremap(&s)).unwrap(), s);
        }
    }
}
