//! The `SFC1` container and the layer-by-layer codec pipeline.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `SFC1` |
//! | 4 | 1 | version (1) |
//! | 5 | 8 | weight digest |
//! | 13 | 36 | 3 × (u32 hyper_len, u32 style_len, u32 crc32) |
//! | 49 | … | per present layer: hyper payload, then style payload |
//!
//! A layer is absent when its whole entry is zero; absent layers may only
//! follow present ones. The CRC covers the layer's hyper and style payloads.

use sha2::{Digest, Sha256};

use crate::entropy::{
    quantize, BinModel, FrequencyTable, GaussianParams, QuantizedSymbols, Support,
};
use crate::error::{CodecError, Result};
use crate::numeric::Matrix;
use crate::rangecoder::{RangeDecoder, RangeEncoder};
use crate::style::{LayerId, StyleVectorSet, NUM_TOKENS, TOKENS_PER_LAYER};
use crate::weights::{hex, Reader, Weights};

pub const STREAM_MAGIC: &[u8; 4] = b"SFC1";
pub const STREAM_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 8 + 3 * 12;
/// Fraction of escaped symbols above which the model is considered badly scaled.
pub const ESCAPE_FLOOD_RATIO: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegmentEntry {
    pub hyper_len: u32,
    pub style_len: u32,
    pub crc32: u32,
}

impl SegmentEntry {
    pub fn is_absent(&self) -> bool {
        *self == Self::default()
    }

    pub fn payload_len(&self) -> usize {
        self.hyper_len as usize + self.style_len as usize
    }
}

/// One coded layer: the hyperprior sub-stream and the style sub-stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSegment {
    pub hyper: Vec<u8>,
    pub style: Vec<u8>,
}

impl LayerSegment {
    pub fn crc32(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.hyper);
        h.update(&self.style);
        h.finalize()
    }

    fn entry(&self) -> SegmentEntry {
        SegmentEntry {
            hyper_len: self.hyper.len() as u32,
            style_len: self.style.len() as u32,
            crc32: self.crc32(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScalableBitstream {
    pub digest: [u8; 8],
    /// Present layers in order; 1 to 3 entries.
    pub layers: Vec<LayerSegment>,
}

/// Header fields only; no payload validation beyond lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u8,
    pub digest: [u8; 8],
    pub entries: [SegmentEntry; 3],
}

impl StreamHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r
            .take(4)
            .map_err(|_| CodecError::Format("stream shorter than its magic".into()))?;
        if magic != STREAM_MAGIC {
            return Err(CodecError::Format("not a style stream (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != STREAM_VERSION {
            return Err(CodecError::Format(format!(
                "unsupported stream version {version}"
            )));
        }
        let digest = r.take(8)?.try_into().expect("8 bytes");
        let mut entries = [SegmentEntry::default(); 3];
        for e in &mut entries {
            *e = SegmentEntry {
                hyper_len: r.u32()?,
                style_len: r.u32()?,
                crc32: r.u32()?,
            };
        }
        let present = entries.iter().take_while(|e| !e.is_absent()).count();
        if present == 0 {
            return Err(CodecError::Format("stream has no layers".into()));
        }
        if entries[present..].iter().any(|e| !e.is_absent()) {
            return Err(CodecError::Format(
                "layer present after an absent layer".into(),
            ));
        }
        if let Some(i) = entries[..present]
            .iter()
            .position(|e| e.hyper_len == 0 || e.style_len == 0)
        {
            return Err(CodecError::Format(format!(
                "layer {} has an empty sub-stream",
                i + 1
            )));
        }
        Ok(Self {
            version,
            digest,
            entries,
        })
    }

    pub fn layer_count(&self) -> usize {
        self.entries.iter().take_while(|e| !e.is_absent()).count()
    }

    pub fn payload_len(&self) -> usize {
        self.entries.iter().map(SegmentEntry::payload_len).sum()
    }

    pub fn stream_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }
}

impl ScalableBitstream {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn entries(&self) -> [SegmentEntry; 3] {
        let mut e = [SegmentEntry::default(); 3];
        for (slot, layer) in e.iter_mut().zip(&self.layers) {
            *slot = layer.entry();
        }
        e
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload_len());
        out.extend_from_slice(STREAM_MAGIC);
        out.push(STREAM_VERSION);
        out.extend_from_slice(&self.digest);
        for e in self.entries() {
            out.extend_from_slice(&e.hyper_len.to_le_bytes());
            out.extend_from_slice(&e.style_len.to_le_bytes());
            out.extend_from_slice(&e.crc32.to_le_bytes());
        }
        for l in &self.layers {
            out.extend_from_slice(&l.hyper);
            out.extend_from_slice(&l.style);
        }
        out
    }

    pub fn payload_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.hyper.len() + l.style.len())
            .sum()
    }

    /// Parses one stream from the front of `bytes`, returning it and the
    /// number of bytes it occupied. Checksums are verified.
    pub fn parse_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let header = StreamHeader::parse(bytes)?;
        let len = header.stream_len();
        if bytes.len() < len {
            return Err(CodecError::Truncated(format!(
                "stream needs {len} bytes, {} available",
                bytes.len()
            )));
        }
        let mut pos = HEADER_LEN;
        let mut layers = Vec::new();
        for (i, e) in header.entries[..header.layer_count()].iter().enumerate() {
            let hyper = bytes[pos..pos + e.hyper_len as usize].to_vec();
            pos += e.hyper_len as usize;
            let style = bytes[pos..pos + e.style_len as usize].to_vec();
            pos += e.style_len as usize;
            let seg = LayerSegment { hyper, style };
            let computed = seg.crc32();
            if computed != e.crc32 {
                return Err(CodecError::Checksum {
                    layer: i as u8 + 1,
                    stored: e.crc32,
                    computed,
                });
            }
            layers.push(seg);
        }
        Ok((
            Self {
                digest: header.digest,
                layers,
            },
            len,
        ))
    }

    /// Parses exactly one stream.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (s, used) = Self::parse_prefix(bytes)?;
        if used != bytes.len() {
            return Err(CodecError::Format(format!(
                "{} trailing bytes after stream",
                bytes.len() - used
            )));
        }
        Ok(s)
    }

    /// Parses a file of concatenated streams.
    pub fn parse_all(mut bytes: &[u8]) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let (s, used) = Self::parse_prefix(bytes)?;
            out.push(s);
            bytes = &bytes[used..];
        }
        Ok(out)
    }
}

/// Keeps layers ≤ `k` and rewrites the segment table.
pub fn truncate_to_layer(bs: &ScalableBitstream, k: LayerId) -> ScalableBitstream {
    let keep = (k.index() as usize).min(bs.layers.len());
    ScalableBitstream {
        digest: bs.digest,
        layers: bs.layers[..keep].to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRate {
    pub layer: LayerId,
    pub hyper_bits: u64,
    pub style_bits: u64,
    /// Model estimate for the hyperprior symbols; only known at encode time.
    pub estimated_hyper_bits: Option<f64>,
    pub estimated_style_bits: Option<f64>,
    pub symbols: usize,
}

impl LayerRate {
    pub fn total_bits(&self) -> u64 {
        self.hyper_bits + self.style_bits
    }

    pub fn estimated_bits(&self) -> Option<f64> {
        Some(self.estimated_hyper_bits? + self.estimated_style_bits?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRates {
    pub layers: Vec<LayerRate>,
    pub pixel_count: u64,
}

impl LayerRates {
    pub fn total_bits(&self) -> u64 {
        self.layers.iter().map(LayerRate::total_bits).sum()
    }

    pub fn bpp(&self, bits: u64) -> f64 {
        bits as f64 / self.pixel_count as f64
    }

    pub fn total_bpp(&self) -> f64 {
        self.bpp(self.total_bits())
    }

    /// Bits needed to decode layers 1..=k, for each k.
    pub fn cumulative_bits(&self) -> Vec<u64> {
        self.layers
            .iter()
            .scan(0, |acc, l| {
                *acc += l.total_bits();
                Some(*acc)
            })
            .collect()
    }

    pub fn estimated_bits(&self) -> Option<f64> {
        self.layers.iter().map(LayerRate::estimated_bits).sum()
    }

    pub fn symbols(&self) -> usize {
        self.layers.iter().map(|l| l.symbols).sum()
    }
}

/// Per-layer measured rates from segment lengths.
pub fn measure_rates(bs: &ScalableBitstream, pixel_count: u64) -> LayerRates {
    rates_from_entries(&bs.entries(), pixel_count)
}

pub fn rates_from_entries(entries: &[SegmentEntry; 3], pixel_count: u64) -> LayerRates {
    let layers = entries
        .iter()
        .zip(LayerId::ALL)
        .take_while(|(e, _)| !e.is_absent())
        .map(|(e, layer)| LayerRate {
            layer,
            hyper_bits: e.hyper_len as u64 * 8,
            style_bits: e.style_len as u64 * 8,
            estimated_hyper_bits: None,
            estimated_style_bits: None,
            symbols: 0,
        })
        .collect();
    LayerRates {
        layers,
        pixel_count,
    }
}

#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub stream: ScalableBitstream,
    pub rates: LayerRates,
    pub escapes: usize,
    /// SHA-256 over the Gaussian parameters of all layers, as derived.
    pub param_digest: [u8; 32],
}

impl EncodeOutput {
    pub fn escape_flood(&self) -> bool {
        self.escapes as f64 > ESCAPE_FLOOD_RATIO * self.rates.symbols() as f64
    }
}

#[derive(Clone, Debug)]
pub struct DecodeOutput {
    /// Residual styles; layers beyond the decoded depth are zero.
    pub styles: StyleVectorSet,
    /// Quantized style symbols, zero beyond the decoded depth.
    pub symbols: QuantizedSymbols,
    pub hyper: QuantizedSymbols,
    pub layers: LayerId,
    pub param_digest: [u8; 32],
}

/// Parameter derivation shared by encoder and decoder.
struct Derivation<'w> {
    weights: &'w Weights,
    hyper: Matrix,
    styles: Matrix,
    pmf: Vec<f64>,
    param_hash: Sha256,
}

impl<'w> Derivation<'w> {
    fn new(weights: &'w Weights) -> Self {
        let cfg = &weights.config;
        Self {
            weights,
            hyper: Matrix::zeros(NUM_TOKENS, cfg.hyper_dim),
            styles: Matrix::zeros(NUM_TOKENS, cfg.style_dim),
            pmf: Vec::new(),
            param_hash: Sha256::new(),
        }
    }

    fn hyper_table(&mut self, index: usize) -> Result<FrequencyTable> {
        let cfg = &self.weights.config;
        self.weights
            .model
            .prior
            .model(index)
            .fill_pmf(cfg.hyper_support, &mut self.pmf);
        FrequencyTable::for_support(&self.pmf, cfg.hyper_support, cfg.precision_bits)
    }

    fn style_table(&mut self, params: &GaussianParams, index: usize) -> Result<FrequencyTable> {
        let cfg = &self.weights.config;
        params
            .model(index)
            .fill_pmf(cfg.style_support, &mut self.pmf);
        FrequencyTable::for_support(&self.pmf, cfg.style_support, cfg.precision_bits)
    }

    /// Gaussian parameters of layer `k`, given hyperpriors and styles of
    /// layers ≤ k and < k respectively.
    fn params(&mut self, k: LayerId) -> Result<GaussianParams> {
        let model = &self.weights.model;
        let d = self.weights.config.style_dim;
        let prefix = k.prefix_len();
        let all = model
            .hyper_decoder
            .forward(&self.hyper.slice_rows(0, prefix), k)?;
        let span = (prefix - TOKENS_PER_LAYER) * d..prefix * d;
        let base =
            GaussianParams::new(all.mu()[span.clone()].to_vec(), all.delta()[span].to_vec())?;
        let layer = |l: LayerId| {
            let t = l.tokens();
            self.styles.slice_rows(t.start, t.end)
        };
        let params = match k {
            LayerId::Basic => base,
            LayerId::Middle => model.cross_l2.forward(&base, &layer(LayerId::Basic))?,
            LayerId::Enhanced => {
                model
                    .cross_l3
                    .forward(&base, &layer(LayerId::Basic), &layer(LayerId::Middle))?
            }
        };
        self.param_hash.update(params.to_le_bytes());
        Ok(params)
    }

    fn set_hyper(&mut self, k: LayerId, values: &[i32]) {
        set_rows(&mut self.hyper, k, values);
    }

    fn set_styles(&mut self, k: LayerId, values: &[i32]) {
        set_rows(&mut self.styles, k, values);
    }
}

fn set_rows(m: &mut Matrix, k: LayerId, values: &[i32]) {
    let cols = m.cols();
    let start = k.tokens().start * cols;
    for (dst, &v) in m.data_mut()[start..start + values.len()]
        .iter_mut()
        .zip(values)
    {
        *dst = v as f32;
    }
}

/// Model bits for a symbol: the continuous bin mass inside the support, the
/// exact table cost of the escape path outside it.
fn model_bits(model: &impl BinModel, table: &FrequencyTable, support: Support, v: i32) -> f64 {
    if support.contains(v) {
        -model.bin_prob(v).log2()
    } else {
        table.cost_bits(v).expect("escape slot present")
    }
}

fn check_dims(styles: &StyleVectorSet, weights: &Weights) -> Result<()> {
    if styles.dim() != weights.config.style_dim {
        return Err(CodecError::Config(format!(
            "styles have dimension {}, weights expect {}",
            styles.dim(),
            weights.config.style_dim
        )));
    }
    Ok(())
}

pub fn encode(styles: &StyleVectorSet, weights: &Weights) -> Result<EncodeOutput> {
    check_dims(styles, weights)?;
    let cfg = &weights.config;
    let (d, h) = (cfg.style_dim, cfg.hyper_dim);
    let q = quantize(styles.data(), NUM_TOKENS, d)?;
    let q_matrix = Matrix::from_vec(NUM_TOKENS, d, q.to_f32())?;
    let hyper = weights.model.hyper_encoder.forward(&q_matrix)?;
    let hq = quantize(hyper.data(), NUM_TOKENS, h)?;

    let mut der = Derivation::new(weights);
    let mut layers = Vec::with_capacity(3);
    let mut rates = Vec::with_capacity(3);
    let mut escapes = 0;
    for k in LayerId::ALL {
        let t = k.tokens();
        let hvals = hq.rows_slice(t.start, t.end);
        let mut enc = RangeEncoder::new();
        let mut est_hyper = 0.0;
        for (j, &v) in hvals.iter().enumerate() {
            let index = t.start * h + j;
            let table = der.hyper_table(index)?;
            escapes += enc.encode_value(&table, v)? as usize;
            est_hyper += model_bits(
                &weights.model.prior.model(index),
                &table,
                cfg.hyper_support,
                v,
            );
        }
        let hyper_bytes = enc.finish();
        der.set_hyper(k, hvals);

        let params = der.params(k)?;
        let svals = q.rows_slice(t.start, t.end);
        let mut enc = RangeEncoder::new();
        let mut est_style = 0.0;
        for (j, &v) in svals.iter().enumerate() {
            let table = der.style_table(&params, j)?;
            escapes += enc.encode_value(&table, v)? as usize;
            est_style += model_bits(&params.model(j), &table, cfg.style_support, v);
        }
        let style_bytes = enc.finish();
        der.set_styles(k, svals);

        rates.push(LayerRate {
            layer: k,
            hyper_bits: hyper_bytes.len() as u64 * 8,
            style_bits: style_bytes.len() as u64 * 8,
            estimated_hyper_bits: Some(est_hyper),
            estimated_style_bits: Some(est_style),
            symbols: hvals.len() + svals.len(),
        });
        layers.push(LayerSegment {
            hyper: hyper_bytes,
            style: style_bytes,
        });
    }
    Ok(EncodeOutput {
        stream: ScalableBitstream {
            digest: weights.digest(),
            layers,
        },
        rates: LayerRates {
            layers: rates,
            pixel_count: cfg.pixel_count,
        },
        escapes,
        param_digest: der.param_hash.finalize().into(),
    })
}

/// Decodes layers 1..=`upto`.
pub fn decode(bs: &ScalableBitstream, weights: &Weights, upto: LayerId) -> Result<DecodeOutput> {
    if bs.digest != weights.digest() {
        return Err(CodecError::DigestMismatch {
            stream: hex(&bs.digest),
            weights: hex(&weights.digest()),
        });
    }
    if bs.layers.len() < upto.index() as usize {
        return Err(CodecError::Truncated(format!(
            "stream holds {} layer(s), {} requested",
            bs.layers.len(),
            upto.index()
        )));
    }
    let cfg = &weights.config;
    let (d, h) = (cfg.style_dim, cfg.hyper_dim);
    let mut hq = vec![0i32; NUM_TOKENS * h];
    let mut sq = vec![0i32; NUM_TOKENS * d];
    let mut der = Derivation::new(weights);
    for (k, seg) in LayerId::ALL
        .into_iter()
        .zip(&bs.layers)
        .take(upto.index() as usize)
    {
        let t = k.tokens();
        let mut dec = RangeDecoder::new(&seg.hyper);
        let hvals = &mut hq[t.start * h..t.end * h];
        for (j, v) in hvals.iter_mut().enumerate() {
            let table = der.hyper_table(t.start * h + j)?;
            *v = dec.decode_value(&table)?;
        }
        dec.finish()?;
        der.set_hyper(k, hvals);

        let params = der.params(k)?;
        let mut dec = RangeDecoder::new(&seg.style);
        let svals = &mut sq[t.start * d..t.end * d];
        for (j, v) in svals.iter_mut().enumerate() {
            let table = der.style_table(&params, j)?;
            *v = dec.decode_value(&table)?;
        }
        dec.finish()?;
        der.set_styles(k, svals);
    }
    let symbols = QuantizedSymbols::new(NUM_TOKENS, d, sq)?;
    Ok(DecodeOutput {
        styles: StyleVectorSet::new(d, symbols.to_f32())?,
        symbols,
        hyper: QuantizedSymbols::new(NUM_TOKENS, h, hq)?,
        layers: upto,
        param_digest: der.param_hash.finalize().into(),
    })
}
