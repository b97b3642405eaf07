//! Portable float map (PFM) images.
//!
//! Header: `PF` (RGB) or `Pf` (gray), then width and height, then a scale
//! whose sign gives the byte order (negative means little-endian), each
//! followed by a single whitespace byte. Rows are stored bottom to top as
//! 32-bit floats, RGB interleaved. Files are always written little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, CHANNELS};

use super::{read_bytes, write_bytes};

/// Raw PFM contents, rows top to bottom, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmData {
    pub fn from_image(img: &Image) -> Self {
        PfmData {
            width: img.width(),
            height: img.height(),
            channels: CHANNELS,
            data: img.to_interleaved().into_iter().map(|v| v as f32).collect(),
        }
    }

    /// Gray files are replicated into all three channels.
    pub fn into_image(self) -> Result<Image> {
        let rgb: Vec<f64> = if self.channels == 1 {
            self.data.iter().flat_map(|&v| [v as f64; 3]).collect()
        } else {
            self.data.iter().map(|&v| v as f64).collect()
        };
        Image::from_interleaved(self.width, self.height, &rgb)
    }
}

pub fn encode(pfm: &PfmData) -> Vec<u8> {
    let tag = if pfm.channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    let row = pfm.width * pfm.channels;
    out.reserve(pfm.data.len() * 4);
    for y in (0..pfm.height).rev() {
        for v in &pfm.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parse PFM bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<PfmData> {
    let bad = |msg: &str| Error::format(path, msg);
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos || pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        let t = &bytes[start..pos];
        pos += 1;
        Ok(t)
    };
    let channels = match token()? {
        b"PF" => 3,
        b"Pf" => 1,
        _ => return Err(bad("missing PF/Pf magic")),
    };
    let parse_dim = |t: &[u8]| -> Result<usize> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| bad("invalid dimension"))
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale: f64 = std::str::from_utf8(token()?)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|v: &f64| v.is_finite() && *v != 0.0)
        .ok_or_else(|| bad("invalid scale"))?;
    let little = scale < 0.0;
    let row = width * channels;
    let count = row
        .checked_mul(height)
        .filter(|c| c.checked_mul(4).is_some())
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = &bytes[pos..];
    if body.len() != count * 4 {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            count * 4,
            body.len()
        )));
    }
    let mut data = vec![0.0f32; count];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (file_row, col) = (i / row, i % row);
        data[(height - 1 - file_row) * row + col] = v;
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

/// Read a PFM file as raw data.
pub fn read_pfm_any(path: impl AsRef<Path>) -> Result<PfmData> {
    let path = path.as_ref();
    decode(&read_bytes(path)?, path)
}

/// Read a PFM file as an RGB image.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<Image> {
    read_pfm_any(path)?.into_image()
}

/// Write an RGB image (values rounded to 32-bit floats).
pub fn write_pfm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_bytes(path.as_ref(), &encode(&PfmData::from_image(img)))
}

pub fn write_pfm_data(path: impl AsRef<Path>, pfm: &PfmData) -> Result<()> {
    write_bytes(path.as_ref(), &encode(pfm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.pfm")
    }

    #[test]
    fn header_and_row_order() {
        let pfm = PfmData {
            width: 1,
            height: 2,
            channels: 1,
            data: vec![1.0, 2.0],
        };
        let bytes = encode(&pfm);
        assert!(bytes.starts_with(b"Pf\n1 2\n-1.0\n"));
        // bottom row first
        assert_eq!(
            &bytes[bytes.len() - 8..bytes.len() - 4],
            &2.0f32.to_le_bytes()
        );
        assert_eq!(decode(&bytes, p()).unwrap(), pfm);
    }

    #[test]
    fn reads_big_endian() {
        let mut bytes = b"PF\n1 1\n1.0\n".to_vec();
        for v in [0.5f32, -1.25, 3.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let d = decode(&bytes, p()).unwrap();
        assert_eq!(d.data, vec![0.5, -1.25, 3.0]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode(b"P6\n1 1\n-1.0\n0000", p()).is_err());
        assert!(decode(b"PF\n2 1\n-1.0\n000", p()).is_err());
        assert!(decode(b"PF\n0 1\n-1.0\n", p()).is_err());
        assert!(decode(b"PF\n1 1\n0\n000000000000", p()).is_err());
        assert!(decode(b"PF\n1", p()).is_err());
    }

    #[test]
    fn gray_replicates_channels() {
        let pfm = PfmData {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![0.25, 0.75],
        };
        let img = pfm.into_image().unwrap();
        for c in 0..3 {
            assert_eq!(img.channel(c), &[0.25, 0.75]);
        }
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(w in 1usize..6, h in 1usize..6, bits in prop::collection::vec(any::<u32>(), 90)) {
            let data: Vec<f32> = bits.iter().take(w * h * 3).map(|&b| f32::from_bits(b)).collect();
            let pfm = PfmData { width: w, height: h, channels: 3, data };
            let back = decode(&encode(&pfm), p()).unwrap();
            let a: Vec<u32> = pfm.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
