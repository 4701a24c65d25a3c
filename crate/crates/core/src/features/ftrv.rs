//! FTRV: binary container for feature videos.
//!
//! Little-endian layout: magic `FTRV`, version byte `1`, `u32` L, H, W, D,
//! `u32` reference-frame index, `u8` mask flag, `u32` metadata length and
//! that many bytes of UTF-8, then `L·H·W·D` `f32` values (frame-major,
//! row-major, channel-last), then `H·W` mask bytes when the flag is set.
//! A step archive is a plain concatenation of FTRV records.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};
use thiserror::Error;

use super::FeatureVideo;

pub const MAGIC: &[u8; 4] = b"FTRV";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 * 5 + 1 + 4;

#[derive(Debug, Error)]
pub enum FtrvError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic {0:?}, expected \"FTRV\"")]
    BadMagic([u8; 4]),
    #[error("unsupported FTRV version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated {what}: need {need} bytes, {have} available")]
    Truncated { what: &'static str, need: usize, have: usize },
    #[error("declared shape {0:?} overflows")]
    ShapeOverflow([u32; 4]),
    #[error("invalid feature video: {0}")]
    Invalid(String),
}

/// Serializes one record.
pub fn encode_ftrv(fv: &FeatureVideo, out: &mut impl Write) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_u8(VERSION)?;
    for v in [fv.frames, fv.height, fv.width, fv.channels, fv.reference] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    out.write_u8(fv.mask.is_some() as u8)?;
    out.write_u32::<LittleEndian>(fv.metadata.len() as u32)?;
    out.write_all(fv.metadata.as_bytes())?;
    let mut buf = vec![0u8; 4 * fv.data.len()];
    LittleEndian::write_f32_into(&fv.data, &mut buf);
    out.write_all(&buf)?;
    if let Some(m) = &fv.mask {
        out.write_all(&m.iter().map(|&b| b as u8).collect::<Vec<_>>())?;
    }
    Ok(())
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], FtrvError> {
    if bytes.len() < n {
        return Err(FtrvError::Truncated { what, need: n, have: bytes.len() });
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

/// Parses one record from the front of `bytes`, advancing it.
pub fn decode_ftrv(bytes: &mut &[u8]) -> Result<FeatureVideo, FtrvError> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(FtrvError::BadMagic(bytes[..4].try_into().expect("four bytes")));
    }
    if bytes.len() >= 5 && bytes[4] != VERSION {
        return Err(FtrvError::UnsupportedVersion(bytes[4]));
    }
    let header = take(bytes, HEADER_LEN, "header")?;
    let u = |k: usize| LittleEndian::read_u32(&header[5 + 4 * k..]);
    let dims = [u(0), u(1), u(2), u(3)];
    let reference = u(4) as usize;
    let has_mask = match header[25] {
        0 => false,
        1 => true,
        f => return Err(FtrvError::Invalid(format!("mask flag {f}"))),
    };
    let meta_len = LittleEndian::read_u32(&header[26..]) as usize;
    let meta = take(bytes, meta_len, "metadata")?;
    let metadata = String::from_utf8(meta.to_vec()).map_err(|_| FtrvError::Invalid("metadata is not UTF-8".into()))?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .and_then(|c| c.checked_mul(4).map(|_| c))
        .ok_or(FtrvError::ShapeOverflow(dims))?;
    let payload = take(bytes, count * 4, "payload")?;
    let mut data = vec![0f32; count];
    LittleEndian::read_f32_into(payload, &mut data);
    let (h, w) = (dims[1] as usize, dims[2] as usize);
    let mask = if has_mask {
        let m = take(bytes, h * w, "mask")?;
        Some(m.iter().map(|&b| b != 0).collect())
    } else {
        None
    };
    let fv = FeatureVideo {
        frames: dims[0] as usize,
        height: h,
        width: w,
        channels: dims[3] as usize,
        data,
        reference,
        mask,
        metadata,
    };
    fv.validate().map_err(FtrvError::Invalid)?;
    Ok(fv)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FtrvError + '_ {
    move |source| FtrvError::Io { path: path.display().to_string(), source }
}

pub fn write_ftrv(fv: &FeatureVideo, path: impl AsRef<Path>) -> Result<(), FtrvError> {
    write_step_archive(std::slice::from_ref(fv), path)
}

pub fn read_ftrv(path: impl AsRef<Path>) -> Result<FeatureVideo, FtrvError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut slice = bytes.as_slice();
    let fv = decode_ftrv(&mut slice)?;
    if !slice.is_empty() {
        return Err(FtrvError::Invalid(format!("{} trailing bytes after the record", slice.len())));
    }
    Ok(fv)
}

pub fn write_step_archive(steps: &[FeatureVideo], path: impl AsRef<Path>) -> Result<(), FtrvError> {
    let path = path.as_ref();
    for fv in steps {
        fv.validate().map_err(FtrvError::Invalid)?;
    }
    let mut w = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    for fv in steps {
        encode_ftrv(fv, &mut w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_step_archive(path: impl AsRef<Path>) -> Result<Vec<FeatureVideo>, FtrvError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut slice = bytes.as_slice();
    let mut out = Vec::new();
    while !slice.is_empty() {
        out.push(decode_ftrv(&mut slice)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn video(l: usize, h: usize, w: usize, d: usize, seed: u32) -> FeatureVideo {
        let data = (0..l * h * w * d).map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) as f32) * 1e-9 - 2.0).collect();
        FeatureVideo::new(l, h, w, d, data).unwrap()
    }

    fn bytes(fv: &FeatureVideo) -> Vec<u8> {
        let mut b = Vec::new();
        encode_ftrv(fv, &mut b).unwrap();
        b
    }

    #[test]
    fn round_trip_with_mask_and_metadata() {
        let mut fv = video(2, 4, 4, 3, 1);
        fv.reference = 1;
        fv.metadata = "layer=3 step=20 model=ünïcode".into();
        fv.mask = Some((0..16).map(|i| i % 3 == 0).collect());
        let b = bytes(&fv);
        let back = decode_ftrv(&mut b.as_slice()).unwrap();
        assert_eq!(back, fv);
        assert_eq!(&b[..5], b"FTRV\x01");
    }

    #[test]
    fn bad_magic() {
        let mut b = bytes(&video(1, 2, 2, 1, 0));
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_ftrv(&mut b.as_slice()), Err(FtrvError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn missing_frame_is_truncation() {
        let fv = video(10, 3, 3, 2, 0);
        let b = bytes(&fv);
        let short = &b[..b.len() - 3 * 3 * 2 * 4];
        assert!(matches!(decode_ftrv(&mut &short[..]), Err(FtrvError::Truncated { what: "payload", .. })));
        assert!(matches!(decode_ftrv(&mut &b[..10]), Err(FtrvError::Truncated { what: "header", .. })));
    }

    #[test]
    fn overflowing_shape() {
        let mut b = bytes(&video(1, 1, 1, 1, 0));
        for k in 0..4 {
            b[5 + 4 * k..9 + 4 * k].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        let r = decode_ftrv(&mut b.as_slice());
        assert!(matches!(r, Err(FtrvError::ShapeOverflow(_)) | Err(FtrvError::Truncated { .. })));
    }

    #[test]
    fn invalid_reference_rejected() {
        let mut b = bytes(&video(2, 1, 1, 1, 0));
        b[21..25].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(decode_ftrv(&mut b.as_slice()), Err(FtrvError::Invalid(_))));
    }

    #[test]
    fn archive_and_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let steps = vec![video(2, 3, 2, 2, 1), video(2, 3, 2, 2, 2), video(2, 3, 2, 2, 3)];
        write_step_archive(&steps, dir.path().join("a.ftrs")).unwrap();
        assert_eq!(read_step_archive(dir.path().join("a.ftrs")).unwrap(), steps);
        write_ftrv(&steps[0], dir.path().join("x.ftrv")).unwrap();
        assert_eq!(read_ftrv(dir.path().join("x.ftrv")).unwrap(), steps[0]);
        assert!(read_ftrv(dir.path().join("a.ftrs")).is_err());
        assert!(matches!(read_ftrv(dir.path().join("missing")), Err(FtrvError::Io { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn lossless_for_random_shapes(l in 1usize..=16, h in 1usize..=88, w in 1usize..=160, d in 1usize..=64, seed in any::<u32>()) {
            let fv = video(l, h, w, d, seed);
            let b = bytes(&fv);
            prop_assert_eq!(b.len(), HEADER_LEN + 4 * l * h * w * d);
            let back = decode_ftrv(&mut b.as_slice()).unwrap();
            prop_assert!(back.data.iter().zip(&fv.data).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(back, fv);
        }
    }
}
