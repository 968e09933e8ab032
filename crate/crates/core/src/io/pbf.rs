//! The PBF1 container: `"PBF1"`, little-endian `u32` width, height and frame
//! count, then the frames' packed rows back to back.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::BinaryFrame;

pub const PBF_MAGIC: [u8; 4] = *b"PBF1";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbfFile {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<BinaryFrame>,
}

fn frame_bytes(width: usize, height: usize) -> Option<usize> {
    BinaryFrame::row_bytes_for(width).checked_mul(height)
}

pub fn encode_frames(width: usize, height: usize, frames: &[BinaryFrame]) -> Result<Vec<u8>> {
    let dim = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{what} {v} does not fit in u32")))
    };
    let (w, h, n) = (dim(width, "width")?, dim(height, "height")?, dim(frames.len(), "frame count")?);
    let per = frame_bytes(width, height)
        .ok_or_else(|| Error::DimensionOverflow(format!("{width}x{height} frame size")))?;
    let total = per
        .checked_mul(frames.len())
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimensionOverflow(format!("{} frames of {width}x{height}", frames.len())))?;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&PBF_MAGIC);
    for v in [w, h, n] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, f) in frames.iter().enumerate() {
        if f.width() != width || f.height() != height {
            return Err(crate::error::mismatch(
                format!("{width}x{height}"),
                format!("{}x{} (frame {i})", f.width(), f.height()),
            ));
        }
        out.extend_from_slice(f.packed());
    }
    Ok(out)
}

pub fn decode_frames(bytes: &[u8]) -> Result<PbfFile> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if found != PBF_MAGIC {
        return Err(Error::BadMagic { expected: PBF_MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, available: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("four bytes")) as usize;
    let (width, height, count) = (word(0), word(1), word(2));
    let per = frame_bytes(width, height)
        .ok_or_else(|| Error::DimensionOverflow(format!("{width}x{height} frame size")))?;
    let needed = per
        .checked_mul(count)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::DimensionOverflow(format!("{count} frames of {width}x{height}")))?;
    if bytes.len() < needed {
        return Err(Error::Truncated { needed, available: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(Error::InvalidInput(format!(
            "{} trailing bytes after {count} frames",
            bytes.len() - needed
        )));
    }
    let payload = &bytes[HEADER_LEN..];
    let frames = if per == 0 {
        (0..count).map(|_| BinaryFrame::new(width, height)).collect()
    } else {
        payload
            .par_chunks(per)
            .map(|chunk| BinaryFrame::from_packed(width, height, chunk.to_vec()))
            .collect::<Result<Vec<_>>>()?
    };
    Ok(PbfFile { width, height, frames })
}

pub fn write_frames(path: &Path, width: usize, height: usize, frames: &[BinaryFrame]) -> Result<()> {
    fs::write(path, encode_frames(width, height, frames)?)?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<PbfFile> {
    decode_frames(&fs::read(path)?)
}

/// Width, height and frame count from the header alone.
pub fn read_header(path: &Path) -> Result<(usize, usize, usize)> {
    use std::io::Read;
    let mut head = Vec::with_capacity(HEADER_LEN);
    fs::File::open(path)?.take(HEADER_LEN as u64).read_to_end(&mut head)?;
    if head.len() >= 4 && head[..4] != PBF_MAGIC {
        let found: [u8; 4] = head[..4].try_into().expect("four bytes");
        return Err(Error::BadMagic { expected: PBF_MAGIC, found });
    }
    if head.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, available: head.len() });
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().expect("four bytes")) as usize;
    Ok((word(0), word(1), word(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = BinaryFrame::from_bits(9, 1, &[true; 9]).unwrap();
        let bytes = encode_frames(9, 1, &[f.clone()]).unwrap();
        assert_eq!(&bytes[..4], b"PBF1");
        assert_eq!(&bytes[4..16], &[9, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..], &[0xFF, 0x80]);
        assert_eq!(decode_frames(&bytes).unwrap().frames, vec![f]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_frames(b"PBF2xxxxxxxxxxxx"), Err(Error::BadMagic { .. })));
        let mut ok = encode_frames(8, 2, &[BinaryFrame::new(8, 2)]).unwrap();
        ok.pop();
        assert!(matches!(decode_frames(&ok), Err(Error::Truncated { .. })));
        let mut huge = b"PBF1".to_vec();
        for v in [u32::MAX, u32::MAX, u32::MAX] {
            huge.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_frames(&huge), Err(Error::DimensionOverflow(_))));
    }
}
