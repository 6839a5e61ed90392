//! Codec configuration, the full set of learned parameters, and the `SFW1`
//! weight file.

use sha2::{Digest, Sha256};

use crate::entropy::{FactorizedPriorParams, Support, DEFAULT_PRECISION_BITS, DELTA_MIN};
use crate::error::{CodecError, Result};
use crate::numeric::{Matrix, SeededRng};
use crate::params::{Params, TensorList, TensorStore, WeightInit};
use crate::style::{AverageVector, DEFAULT_STYLE_DIM, NUM_TOKENS};
use crate::transformer::{CrossLayerL2, CrossLayerL3, HyperDecoder, HyperEncoder, HEADS};

pub const WEIGHT_MAGIC: &[u8; 4] = b"SFW1";
pub const WEIGHT_VERSION: u8 = 1;
pub const HYPER_DIM: usize = 16;
pub const DEFAULT_PIXEL_COUNT: u64 = 1024 * 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub tokens: usize,
    pub style_dim: usize,
    pub hyper_dim: usize,
    pub heads: usize,
    /// Widths of the two intermediate hyper-transformer stages.
    pub stages: [usize; 2],
    pub style_support: Support,
    pub hyper_support: Support,
    pub precision_bits: u32,
    pub pixel_count: u64,
    pub delta_min: f32,
}

impl CodecConfig {
    /// 512-wide styles, stages 128 and 48.
    pub fn full() -> Self {
        Self::for_dim(DEFAULT_STYLE_DIM)
    }

    /// 64-wide styles for quick experiments.
    pub fn fast() -> Self {
        Self::for_dim(64)
    }

    /// Preset stages for 512 and 64; otherwise D/4 and 3D/32, rounded up to
    /// multiples of 4 and at least the hyperprior width.
    pub fn for_dim(style_dim: usize) -> Self {
        let stages = match style_dim {
            DEFAULT_STYLE_DIM => [128, 48],
            64 => [40, 24],
            d => {
                let round = |v: usize| (v.div_ceil(HEADS) * HEADS).max(HYPER_DIM);
                [round(d / 4), round(d * 3 / 32)]
            }
        };
        Self::with_dim(style_dim, stages)
    }

    pub fn with_dim(style_dim: usize, stages: [usize; 2]) -> Self {
        Self {
            tokens: NUM_TOKENS,
            style_dim,
            hyper_dim: HYPER_DIM,
            heads: HEADS,
            stages,
            style_support: Support::STYLE,
            hyper_support: Support::HYPER,
            precision_bits: DEFAULT_PRECISION_BITS,
            pixel_count: DEFAULT_PIXEL_COUNT,
            delta_min: DELTA_MIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CodecError::Config(m));
        if self.tokens != NUM_TOKENS {
            return bad(format!("tokens must be {NUM_TOKENS}, got {}", self.tokens));
        }
        if self.heads != HEADS {
            return bad(format!("heads must be {HEADS}, got {}", self.heads));
        }
        for (what, w) in [
            ("style_dim", self.style_dim),
            ("hyper_dim", self.hyper_dim),
            ("stage 1", self.stages[0]),
            ("stage 2", self.stages[1]),
        ] {
            if w == 0 || w % HEADS != 0 {
                return bad(format!(
                    "{what} = {w} must be a positive multiple of {HEADS}"
                ));
            }
        }
        if !(1..=24).contains(&self.precision_bits) {
            return bad(format!(
                "precision_bits {} outside 1..=24",
                self.precision_bits
            ));
        }
        let widest = self.style_support.len().max(self.hyper_support.len()) + 1;
        if widest as u64 > 1u64 << self.precision_bits {
            return bad(format!(
                "{}-bit tables cannot hold {widest} slots",
                self.precision_bits
            ));
        }
        if self.pixel_count == 0 {
            return bad("pixel_count must be positive".into());
        }
        if self.delta_min != DELTA_MIN {
            return bad(format!(
                "delta_min must be {DELTA_MIN}, got {}",
                self.delta_min
            ));
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) {
        for v in [
            self.tokens,
            self.style_dim,
            self.hyper_dim,
            self.heads,
            self.stages[0],
            self.stages[1],
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for s in [self.style_support, self.hyper_support] {
            out.extend_from_slice(&s.min.to_le_bytes());
            out.extend_from_slice(&s.max.to_le_bytes());
        }
        out.extend_from_slice(&self.precision_bits.to_le_bytes());
        out.extend_from_slice(&self.pixel_count.to_le_bytes());
        out.extend_from_slice(&self.delta_min.to_le_bytes());
    }

    fn read(r: &mut Reader) -> Result<Self> {
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let style_support = Support::new(r.i32()?, r.i32()?)?;
        let hyper_support = Support::new(r.i32()?, r.i32()?)?;
        let cfg = Self {
            tokens: dims[0],
            style_dim: dims[1],
            hyper_dim: dims[2],
            heads: dims[3],
            stages: [dims[4], dims[5]],
            style_support,
            hyper_support,
            precision_bits: r.u32()?,
            pixel_count: r.u64()?,
            delta_min: r.f32()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every learned component of the codec.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel {
    pub hyper_encoder: HyperEncoder,
    pub hyper_decoder: HyperDecoder,
    pub cross_l2: CrossLayerL2,
    pub cross_l3: CrossLayerL3,
    pub prior: FactorizedPriorParams,
}

impl CodecModel {
    pub fn init(cfg: &CodecConfig, rng: &mut SeededRng, init: WeightInit) -> Result<Self> {
        let (d, h) = (cfg.style_dim, cfg.hyper_dim);
        let n = cfg.tokens * h;
        Ok(Self {
            hyper_encoder: HyperEncoder::init(rng, d, cfg.stages, h, init)?,
            hyper_decoder: HyperDecoder::init(rng, d, cfg.stages, h, init)?,
            cross_l2: CrossLayerL2::init(rng, d, init)?,
            cross_l3: CrossLayerL3::init(rng, d, init)?,
            prior: FactorizedPriorParams::new(vec![0.0; n], vec![1.0; n])?,
        })
    }

    fn load(cfg: &CodecConfig, store: &mut TensorStore) -> Result<Self> {
        let (d, h) = (cfg.style_dim, cfg.hyper_dim);
        let loc = store.take("prior.loc", cfg.tokens, h)?;
        let scale = store.take("prior.scale", cfg.tokens, h)?;
        Ok(Self {
            hyper_encoder: HyperEncoder::load("hyper_enc", store, d, cfg.stages, h)?,
            hyper_decoder: HyperDecoder::load("hyper_dec", store, d, cfg.stages, h)?,
            cross_l2: CrossLayerL2::load("cross2", store, d)?,
            cross_l3: CrossLayerL3::load("cross3", store, d)?,
            prior: FactorizedPriorParams::new(loc.into_data(), scale.into_data())
                .map_err(|e| CodecError::Format(format!("prior: {e}")))?,
        })
    }

    pub fn tensors(&self, tokens: usize) -> TensorList {
        let mut out = TensorList::new();
        self.hyper_encoder.export("hyper_enc", &mut out);
        self.hyper_decoder.export("hyper_dec", &mut out);
        self.cross_l2.export("cross2", &mut out);
        self.cross_l3.export("cross3", &mut out);
        let h = self.prior.len() / tokens;
        for (name, v) in [
            ("prior.loc", self.prior.loc()),
            ("prior.scale", self.prior.scale()),
        ] {
            out.push((
                name.into(),
                Matrix::from_vec(tokens, h, v.to_vec()).expect("prior shape"),
            ));
        }
        out
    }
}

/// Configuration, average latent and model, plus the SHA-256 of their
/// serialized form.
#[derive(Clone, Debug)]
pub struct Weights {
    pub config: CodecConfig,
    pub average: AverageVector,
    pub model: CodecModel,
    sha256: [u8; 32],
}

impl Weights {
    pub fn new(config: CodecConfig, average: AverageVector, model: CodecModel) -> Result<Self> {
        config.validate()?;
        if average.values().len() != config.style_dim {
            return Err(CodecError::Config(format!(
                "average vector has {} entries for style_dim {}",
                average.values().len(),
                config.style_dim
            )));
        }
        let mut w = Self {
            config,
            average,
            model,
            sha256: [0; 32],
        };
        let body = w.body_bytes();
        w.sha256 = Sha256::digest(&body).into();
        Ok(w)
    }

    /// Deterministic weights from a seed.
    pub fn generate(config: CodecConfig, seed: u64, init: WeightInit) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let average = AverageVector::new(
            (0..config.style_dim)
                .map(|_| rng.symmetric_f32(1.0))
                .collect(),
        )?;
        let model = CodecModel::init(&config, &mut rng, init)?;
        Self::new(config, average, model)
    }

    pub fn sha256(&self) -> &[u8; 32] {
        &self.sha256
    }

    /// First 8 bytes of the file hash; binds streams to these weights.
    pub fn digest(&self) -> [u8; 8] {
        self.sha256[..8].try_into().expect("8 bytes")
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.push(WEIGHT_VERSION);
        self.config.write(&mut out);
        for v in self.average.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tensors = self.model.tensors(self.config.tokens);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, m) in &tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(2);
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
            out.extend_from_slice(&m.to_le_bytes());
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.sha256);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 1 + 32 {
            return Err(CodecError::Format("weight file too short".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let computed: [u8; 32] = Sha256::digest(body).into();
        if computed != trailer {
            return Err(CodecError::DigestMismatch {
                stream: hex(trailer),
                weights: hex(&computed),
            });
        }
        let mut r = Reader::new(body);
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(CodecError::Format("not a weight file (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != WEIGHT_VERSION {
            return Err(CodecError::Format(format!(
                "unsupported weight file version {version}"
            )));
        }
        let config = CodecConfig::read(&mut r)?;
        let average = AverageVector::new(
            (0..config.style_dim)
                .map(|_| r.f32())
                .collect::<Result<_>>()?,
        )?;
        let count = r.u32()?;
        let mut store = TensorStore::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CodecError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = match r.u8()? {
                1 => (1, r.u32()? as usize),
                2 => (r.u32()? as usize, r.u32()? as usize),
                n => {
                    return Err(CodecError::Format(format!(
                        "tensor {name} has {n} dimensions"
                    )))
                }
            };
            let n = rows
                .checked_mul(cols)
                .filter(|n| n * 4 <= r.remaining())
                .ok_or_else(|| CodecError::Format(format!("tensor {name} overruns the file")))?;
            let data = (0..n).map(|_| r.f32()).collect::<Result<_>>()?;
            store.insert(name, Matrix::from_vec(rows, cols, data)?)?;
        }
        if r.remaining() != 0 {
            return Err(CodecError::Format("trailing bytes after tensors".into()));
        }
        let model = CodecModel::load(&config, &mut store)?;
        store.finish()?;
        Self::new(config, average, model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CodecError::Truncated(format!(
                "need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = Weights::generate(CodecConfig::fast(), 7, WeightInit::default()).unwrap();
        let b = Weights::generate(CodecConfig::fast(), 7, WeightInit::default()).unwrap();
        let c = Weights::generate(CodecConfig::fast(), 8, WeightInit::default()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn round_trip() {
        let w = Weights::generate(CodecConfig::fast(), 3, WeightInit::Random).unwrap();
        let bytes = w.to_bytes();
        let back = Weights::from_bytes(&bytes).unwrap();
        assert_eq!(back.config, w.config);
        assert_eq!(back.model, w.model);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn default_config_dimensions() {
        let cfg = CodecConfig::full();
        assert_eq!((cfg.tokens, cfg.hyper_dim, cfg.heads), (18, 16, 4));
        assert_eq!(cfg.style_dim, 512);
    }

    #[test]
    fn tampering_is_detected() {
        let bytes = Weights::generate(CodecConfig::fast(), 1, WeightInit::default())
            .unwrap()
            .to_bytes();
        for pos in [0, 5, 40, bytes.len() / 2, bytes.len() - 1] {
            let mut t = bytes.clone();
            t[pos] ^= 0x10;
            assert!(
                matches!(
                    Weights::from_bytes(&t),
                    Err(CodecError::DigestMismatch { .. })
                ),
                "byte {pos}"
            );
        }
        assert!(Weights::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn zero_residual_blocks() {
        let w = Weights::generate(CodecConfig::fast(), 1, WeightInit::ZeroResidual).unwrap();
        for b in &w.model.hyper_encoder.blocks {
            assert!(b.attention.wo.data().iter().all(|&v| v == 0.0));
            assert!(b.ffn.output.weight.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn bad_config_rejected() {
        let mut cfg = CodecConfig::fast();
        cfg.style_dim = 30;
        assert!(Weights::generate(cfg, 1, WeightInit::default()).is_err());
        let mut cfg = CodecConfig::fast();
        cfg.precision_bits = 8;
        assert!(cfg.validate().is_err());
    }
}
