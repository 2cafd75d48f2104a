//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        4 bytes  "SVCK"
//! version      u16
//! dtype        u16      1 = f32, 2 = f64
//! config_len   u32
//! config       config_len bytes of UTF-8 JSON
//! digest       32 bytes SHA-256 of the config bytes
//! rng.seed     32 bytes
//! rng.stream   u64
//! rng.word_pos u128
//! n_params     u32
//! per parameter:
//!   name_len u16, name bytes, ndim u8, dims u32 * ndim, values
//! ```

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SVCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    /// JSON describing everything needed to rebuild the model.
    pub config_json: String,
    pub rng: RngState,
    pub params: ModelParams<T>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                reason: format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    fn fail(&self, offset: usize, reason: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason,
        }
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn config_digest(&self) -> [u8; 32] {
        Sha256::digest(self.config_json.as_bytes()).into()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&T::DTYPE.code().to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&self.config_digest());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic = r.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(r.fail(0, format!("bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}")));
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(4, format!("unsupported checkpoint version {version}")));
        }
        let dtype = r.u16("dtype")?;
        if DType::from_code(dtype) != Some(T::DTYPE) {
            return Err(r.fail(6, format!("dtype code {dtype} does not match {:?}", T::DTYPE)));
        }
        let len = r.u32("config length")? as usize;
        let config_start = r.pos;
        let config_json = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|e| r.fail(config_start, format!("config is not UTF-8: {e}")))?
            .to_string();
        let digest_at = r.pos;
        let digest: [u8; 32] = r.take(32, "config digest")?.try_into().unwrap();
        if digest != <[u8; 32]>::from(Sha256::digest(config_json.as_bytes())) {
            return Err(r.fail(digest_at, "config digest mismatch".into()));
        }
        let rng = RngState {
            seed: r.take(32, "rng seed")?.try_into().unwrap(),
            stream: r.u64("rng stream")?,
            word_pos: r.u128("rng position")?,
        };
        let n = r.u32("parameter count")? as usize;
        let mut names = Vec::with_capacity(n);
        let mut tensors = Vec::with_capacity(n);
        let width = T::DTYPE.size();
        for _ in 0..n {
            let name_len = r.u16("name length")? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|e| r.fail(at, format!("parameter name is not UTF-8: {e}")))?
                .to_string();
            let ndim = r.u8("rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let at = r.pos;
            let raw = r.take(numel * width, &format!("values of `{name}`"))?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::new(shape, data).map_err(|e| r.fail(at, e.to_string()))?;
            names.push(name);
            tensors.push(t);
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_json,
            rng,
            params: ModelParams::from_parts(names, tensors)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
