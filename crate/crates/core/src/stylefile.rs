//! `SSV1` style files: `magic, u32 count, u32 style_dim`, then
//! `count × 18 × style_dim` little-endian f32 residuals.

use crate::error::{CodecError, Result};
use crate::style::{StyleVectorSet, NUM_TOKENS};
use crate::weights::Reader;

pub const STYLE_MAGIC: &[u8; 4] = b"SSV1";

#[derive(Clone, Debug, PartialEq)]
pub struct StyleFile {
    pub dim: usize,
    pub sets: Vec<StyleVectorSet>,
}

impl StyleFile {
    pub fn new(dim: usize, sets: Vec<StyleVectorSet>) -> Result<Self> {
        if let Some(s) = sets.iter().find(|s| s.dim() != dim) {
            return Err(CodecError::Shape(format!(
                "set of dimension {} in a {dim}-dimensional file",
                s.dim()
            )));
        }
        Ok(Self { dim, sets })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.sets.len() * NUM_TOKENS * self.dim * 4);
        out.extend_from_slice(STYLE_MAGIC);
        out.extend_from_slice(&(self.sets.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for s in &self.sets {
            for v in s.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4).ok() != Some(STYLE_MAGIC.as_slice()) {
            return Err(CodecError::Format("not a style file (bad magic)".into()));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(CodecError::Format("style dimension is zero".into()));
        }
        let per = NUM_TOKENS * dim;
        if (count as u64) * (per as u64) * 4 != r.remaining() as u64 {
            return Err(CodecError::Format(format!(
                "{count} sets of dimension {dim} need {} data bytes, file has {}",
                count * per * 4,
                r.remaining()
            )));
        }
        let mut sets = Vec::with_capacity(count);
        for _ in 0..count {
            let data = (0..per).map(|_| r.f32()).collect::<Result<_>>()?;
            sets.push(StyleVectorSet::new(dim, data)?);
        }
        Ok(Self { dim, sets })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
