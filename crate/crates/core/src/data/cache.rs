//! Binary cache of preprocessed samples.
//!
//! ```text
//! magic "SVPP", version u16, config_len u32, config JSON,
//! n u32, image_size u32, then per sample:
//!   id_len u16, id, label u8, 5 x f64 features, 4 x 3*P*P f32 images
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::{Image2D, OSClass, PreprocessConfig, Sample, SupplementalFeatures};

pub const CACHE_MAGIC: &[u8; 4] = b"SVPP";
pub const CACHE_VERSION: u16 = 1;

pub fn encode_cache(cfg: &PreprocessConfig, samples: &[Sample]) -> Result<Vec<u8>> {
    let size = samples.first().map_or(cfg.size, |s| s.images[0].size);
    let json = serde_json::to_string(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    out.extend_from_slice(&(size as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&(s.id.len() as u16).to_le_bytes());
        out.extend_from_slice(s.id.as_bytes());
        out.push(s.label.index() as u8);
        for f in s.features.to_array() {
            out.extend_from_slice(&f.to_le_bytes());
        }
        for img in &s.images {
            if img.size != size {
                return Err(Error::Dimension(format!("{}: mixed image sizes in cache", s.id)));
            }
            for v in &img.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn fail(&self, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason,
        }
    }
}

pub fn decode_cache(bytes: &[u8], path: &Path) -> Result<(PreprocessConfig, Vec<Sample>)> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4)? != CACHE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: "bad magic, expected \"SVPP\"".into(),
        });
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(c.fail(format!("unsupported cache version {version}")));
    }
    let len = c.u32()? as usize;
    let cfg: PreprocessConfig = serde_json::from_slice(c.take(len)?)?;
    let n = c.u32()? as usize;
    let size = c.u32()? as usize;
    let plane = Image2D::CHANNELS * size * size;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let id_len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let id = String::from_utf8(c.take(id_len)?.to_vec()).map_err(|e| c.fail(e.to_string()))?;
        let label = OSClass::from_index(c.take(1)?[0] as usize).ok_or_else(|| c.fail("bad class label".into()))?;
        let mut f = [0f64; 5];
        for v in &mut f {
            *v = f64::from_le_bytes(c.take(8)?.try_into().unwrap());
        }
        let mut image = || -> Result<Image2D> {
            let raw = c.take(4 * plane)?;
            Image2D::new(size, raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect())
        };
        let images = [image()?, image()?, image()?, image()?];
        samples.push(Sample {
            id,
            label,
            images,
            features: SupplementalFeatures {
                s_total: f[0],
                s1: f[1],
                s2: f[2],
                s3: f[3],
                s_age: f[4],
            },
        });
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes".into()));
    }
    Ok((cfg, samples))
}

pub fn write_cache(path: &Path, cfg: &PreprocessConfig, samples: &[Sample]) -> Result<()> {
    std::fs::write(path, encode_cache(cfg, samples)?).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<(PreprocessConfig, Vec<Sample>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cache(&bytes, path)
}
