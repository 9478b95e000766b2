//! Model checkpoints: little-endian `"BMP1"`, version, projection seed, Adam
//! step, matrix count, then each matrix as `name_len u32, name, rows u32,
//! cols u32, f64 data`, followed by first and second Adam moments for every
//! matrix in the same order.

use std::fs;
use std::path::Path;

use crate::numerics::{DenseMatrix, ParamSet};
use crate::{Error, Result};

use super::{ContextProjection, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BMP1";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Model {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let ps = &self.params;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.projection.seed().to_le_bytes());
        out.extend_from_slice(&ps.step().to_le_bytes());
        out.extend_from_slice(&(ps.len() as u32).to_le_bytes());
        for id in ps.ids() {
            let name = ps.name(id).as_bytes();
            let m = ps.value(id);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            put_f64s(&mut out, m.as_slice());
        }
        for id in ps.ids() {
            let (first, second) = ps.moments(id);
            put_f64s(&mut out, first.as_slice());
            put_f64s(&mut out, second.as_slice());
        }
        out
    }

    /// Restore a checkpoint written for a model with configuration `config`.
    /// Shape disagreements are reported as shape errors.
    pub fn from_checkpoint_bytes(bytes: &[u8], config: ModelConfig) -> Result<Self> {
        let template = Model::new(config.clone(), 0, 0)?;
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: "bad magic, expected \"BMP1\"".into(),
            });
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let projection_seed = r.u64("projection seed")?;
        let step = r.u64("adam step")?;
        let count = r.u32("matrix count")? as usize;
        if count != template.params.len() {
            return Err(Error::shape("checkpoint matrix count", template.params.len(), count));
        }
        let mut params = ParamSet::new();
        for expected in template.params.ids() {
            let name_len = r.u32("name length")? as usize;
            let name_offset = r.pos as u64;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| Error::Format {
                    offset: name_offset,
                    message: "matrix name is not UTF-8".into(),
                })?
                .to_owned();
            if name != template.params.name(expected) {
                return Err(Error::Format {
                    offset: name_offset,
                    message: format!(
                        "expected matrix {:?}, found {name:?}",
                        template.params.name(expected)
                    ),
                });
            }
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let want = template.params.value(expected).shape();
            if (rows, cols) != want {
                return Err(Error::shape(
                    "checkpoint",
                    format!("{name} {}x{}", want.0, want.1),
                    format!("{name} {rows}x{cols}"),
                ));
            }
            let data = r.f64s(rows * cols, &name)?;
            params.add(name, DenseMatrix::from_vec(rows, cols, data)?);
        }
        for id in template.params.ids() {
            let (rows, cols) = params.value(id).shape();
            let first = DenseMatrix::from_vec(rows, cols, r.f64s(rows * cols, "first moment")?)?;
            let second = DenseMatrix::from_vec(rows, cols, r.f64s(rows * cols, "second moment")?)?;
            params.restore_moments(id, first, second)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        params.set_step(step);
        let projection = ContextProjection::new(projection_seed, config.d_c, config.d_v + config.d_l);
        Ok(Model {
            config,
            params,
            projection,
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<u64> {
        let bytes = self.to_checkpoint_bytes();
        fs::write(path, &bytes)?;
        Ok(bytes.len() as u64)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>, config: ModelConfig) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?, config)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
