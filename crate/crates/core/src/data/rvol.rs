//! RVOL: a 20-byte little-endian header followed by `D*H*W` f32 values,
//! W fastest.
//!
//! ```text
//! 0  magic   "RVOL"
//! 4  version u16 (1)
//! 6  dtype   u16 (1 = f32)
//! 8  D, H, W u32 each
//! 20 payload
//! ```

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::{Volume3D, VolumeKind};
use crate::tensor::DType;

pub const RVOL_MAGIC: &[u8; 4] = b"RVOL";
pub const RVOL_VERSION: u16 = 1;
pub const RVOL_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RvolHeader {
    pub version: u16,
    pub dtype: DType,
    pub dims: [usize; 3],
}

impl RvolHeader {
    pub fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.dtype.size()
    }
}

fn format_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.into(),
    }
}

pub fn parse_header(bytes: &[u8], path: &Path) -> Result<RvolHeader> {
    if bytes.len() < RVOL_HEADER_LEN {
        return Err(format_err(
            path,
            bytes.len(),
            format!("truncated header: expected {RVOL_HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..4] != RVOL_MAGIC {
        return Err(format_err(path, 0, format!("bad magic {:?}, expected \"RVOL\"", &bytes[..4])));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != RVOL_VERSION {
        return Err(format_err(path, 4, format!("unsupported version {version}")));
    }
    let code = u16_at(6);
    let dtype = match DType::from_code(code) {
        Some(DType::F32) => DType::F32,
        _ => return Err(format_err(path, 6, format!("dtype code {code} is not f32 (1)"))),
    };
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32_at(8 + 4 * i) as usize;
        if *d == 0 {
            return Err(format_err(path, 8 + 4 * i, "zero dimension"));
        }
    }
    Ok(RvolHeader { version, dtype, dims })
}

/// Reads only the header.
pub fn read_rvol_header(path: &Path) -> Result<RvolHeader> {
    let mut buf = Vec::with_capacity(RVOL_HEADER_LEN);
    File::open(path)
        .and_then(|f| f.take(RVOL_HEADER_LEN as u64).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    parse_header(&buf, path)
}

pub fn encode_rvol(v: &Volume3D) -> Vec<u8> {
    let mut out = Vec::with_capacity(RVOL_HEADER_LEN + 4 * v.voxels().len());
    out.extend_from_slice(RVOL_MAGIC);
    out.extend_from_slice(&RVOL_VERSION.to_le_bytes());
    out.extend_from_slice(&DType::F32.code().to_le_bytes());
    for d in v.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for x in v.voxels() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_rvol(bytes: &[u8], path: &Path, kind: VolumeKind) -> Result<Volume3D> {
    let header = parse_header(bytes, path)?;
    let expected = header.payload_len();
    let found = bytes.len() - RVOL_HEADER_LEN;
    if found != expected {
        let what = if found < expected { "truncated payload" } else { "trailing bytes after payload" };
        return Err(format_err(
            path,
            RVOL_HEADER_LEN + found.min(expected),
            format!("{what}: expected {expected} payload bytes, found {found}"),
        ));
    }
    let voxels = bytes[RVOL_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume3D::new(header.dims, voxels, kind).map_err(|e| format_err(path, RVOL_HEADER_LEN, e.to_string()))
}

pub fn read_rvol(path: &Path, kind: VolumeKind) -> Result<Volume3D> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rvol(&bytes, path, kind)
}

pub fn write_rvol(path: &Path, v: &Volume3D) -> Result<()> {
    std::fs::write(path, encode_rvol(v)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: [usize; 3]) -> Volume3D {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Volume3D::from_fn(dims, VolumeKind::Intensity, |_, _, _| rng.gen_range(-1e3..1e3)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        let v = random([4, 4, 4]);
        write_rvol(&p, &v).unwrap();
        let back = read_rvol(&p, VolumeKind::Intensity).unwrap();
        let bits = |v: &Volume3D| v.voxels().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&v));
        assert_eq!(back.dims(), [4, 4, 4]);
    }

    #[test]
    fn header_layout_is_fixed() {
        let v = random([2, 3, 5]);
        let b = encode_rvol(&v);
        assert_eq!(&b[..4], b"RVOL");
        assert_eq!(&b[4..8], &[1, 0, 1, 0]);
        assert_eq!(&b[8..20], &[2, 0, 0, 0, 3, 0, 0, 0, 5, 0, 0, 0]);
        assert_eq!(b.len(), 20 + 4 * 30);
        assert_eq!(&b[20..24], &v.voxels()[0].to_le_bytes());
        // W fastest
        assert_eq!(&b[24..28], &v.at(0, 0, 1).to_le_bytes());
    }

    #[test]
    fn header_only_inspection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rvol");
        write_rvol(&p, &random([3, 7, 2])).unwrap();
        let h = read_rvol_header(&p).unwrap();
        assert_eq!(h.dims, [3, 7, 2]);
        let size = std::fs::metadata(&p).unwrap().len() as usize;
        assert_eq!(size, RVOL_HEADER_LEN + h.payload_len());
    }

    #[test]
    fn truncated_payload_reports_counts() {
        let b = encode_rvol(&random([2, 2, 2]));
        let err = decode_rvol(&b[..b.len() - 5], Path::new("t.rvol"), VolumeKind::Intensity).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 32") && msg.contains("found 27"), "{msg}");
        assert!(matches!(err, Error::Format { offset: 47, .. }));
    }

    #[test]
    fn bad_magic_and_dtype() {
        let mut b = encode_rvol(&random([1, 1, 1]));
        b[6] = 2;
        assert!(matches!(
            decode_rvol(&b, Path::new("d"), VolumeKind::Intensity),
            Err(Error::Format { offset: 6, .. })
        ));
        b[0] = b'Q';
        assert!(matches!(
            decode_rvol(&b, Path::new("m"), VolumeKind::Intensity),
            Err(Error::Format { offset: 0, .. })
        ));
        assert!(matches!(
            decode_rvol(&b[..10], Path::new("h"), VolumeKind::Intensity),
            Err(Error::Format { offset: 10, .. })
        ));
    }

    #[test]
    fn mask_values_are_checked_on_read() {
        let v = Volume3D::new([1, 1, 2], vec![0.0, 3.0], VolumeKind::Intensity).unwrap();
        let b = encode_rvol(&v);
        assert!(decode_rvol(&b, Path::new("s"), VolumeKind::Mask).is_err());
    }
}
