//! Quantization and the probability models for style and hyperprior symbols.
//!
//! Style symbols use a conditional Gaussian integrated over unit bins, with
//! (μ, δ) predicted per coordinate by the entropy transformers. Hyperprior
//! symbols use a fixed per-(token, channel) discretized logistic. Both models
//! feed [`FrequencyTable`]s that the range coder consumes; encoder and decoder
//! build those tables from identical f64 arithmetic.

mod table;

pub use table::{build_frequency_table, FrequencyTable};

use crate::error::{CodecError, Result};
use crate::numeric::SeededRng;

/// Floor on the Gaussian standard deviation.
pub const DELTA_MIN: f32 = 0.01;
/// Floor on the logistic scale of the factorized prior.
pub const SCALE_MIN: f32 = 0.01;
/// Floor on any bin probability returned by the continuous models.
pub const P_MIN: f64 = 1.0 / (1u64 << 24) as f64;

/// Default precision of frequency tables used by the codec.
pub const DEFAULT_PRECISION_BITS: u32 = 18;

/// Bins whose nearest edge is further than this many standard deviations from
/// μ carry less than `P_MIN` mass and are clamped without evaluating the CDF.
const GAUSSIAN_CUTOFF_SIGMAS: f64 = 7.0;

/// Inclusive window of symbol values a table can represent directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Support {
    pub min: i32,
    pub max: i32,
}

impl Support {
    pub const STYLE: Support = Support {
        min: -255,
        max: 255,
    };
    pub const HYPER: Support = Support {
        min: -127,
        max: 127,
    };

    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > max {
            return Err(CodecError::Config(format!("empty support [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn contains(&self, v: i32) -> bool {
        v >= self.min && v <= self.max
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.max as i64 - self.min as i64 + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i32> {
        self.min..=self.max
    }
}

/// Integer symbols laid out row-major like the tensor they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedSymbols {
    rows: usize,
    cols: usize,
    values: Vec<i32>,
}

impl QuantizedSymbols {
    pub fn new(rows: usize, cols: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(CodecError::Shape(format!(
                "{rows}x{cols} symbols need {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[i32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Rows `start..end` as a flat slice.
    pub fn rows_slice(&self, start: usize, end: usize) -> &[i32] {
        &self.values[start * self.cols..end * self.cols]
    }

    /// Positions whose value falls outside `support`; these take the escape path.
    pub fn escapes(&self, support: Support) -> impl Iterator<Item = usize> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(move |(_, v)| !support.contains(**v))
            .map(|(i, _)| i)
    }

    /// Symbols as f32, the form decoded layers are fed back in.
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Round to nearest, ties away from zero.
pub fn quantize_value(x: f32) -> Result<i32> {
    if !x.is_finite() {
        return Err(CodecError::Precondition(format!("cannot quantize {x}")));
    }
    let r = x.round();
    if r < i32::MIN as f32 || r >= i32::MAX as f32 {
        return Err(CodecError::Precondition(format!(
            "{x} does not fit a 32-bit symbol"
        )));
    }
    Ok(r as i32)
}

pub fn quantize(x: &[f32], rows: usize, cols: usize) -> Result<QuantizedSymbols> {
    let values = x
        .iter()
        .map(|&v| quantize_value(v))
        .collect::<Result<Vec<_>>>()?;
    QuantizedSymbols::new(rows, cols, values)
}

/// Additive uniform noise on [-0.5, 0.5), the training-time stand-in for rounding.
pub fn noise_relax(x: &[f32], rng: &mut SeededRng) -> Vec<f32> {
    x.iter().map(|&v| v + (rng.unit_f32() - 0.5)).collect()
}

/// Per-coordinate mean and standard deviation of the conditional Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    mu: Vec<f32>,
    delta: Vec<f32>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f32>, delta: Vec<f32>) -> Result<Self> {
        if mu.len() != delta.len() {
            return Err(CodecError::Shape(format!(
                "{} means vs {} deviations",
                mu.len(),
                delta.len()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Precondition("non-finite mean".into()));
        }
        if let Some(d) = delta.iter().find(|d| !(d.is_finite() && **d >= DELTA_MIN)) {
            return Err(CodecError::Precondition(format!(
                "deviation {d} below floor {DELTA_MIN}"
            )));
        }
        Ok(Self { mu, delta })
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn mu(&self) -> &[f32] {
        &self.mu
    }

    pub fn delta(&self) -> &[f32] {
        &self.delta
    }

    pub fn model(&self, i: usize) -> GaussianBin {
        GaussianBin::new(self.mu[i], self.delta[i])
    }

    /// Bytes of all parameters, for symmetry checks between encoder and decoder.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.mu
            .iter()
            .chain(&self.delta)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }
}

/// Per-(token, channel) discretized logistic for hyperprior symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPriorParams {
    loc: Vec<f32>,
    scale: Vec<f32>,
}

impl FactorizedPriorParams {
    pub fn new(loc: Vec<f32>, scale: Vec<f32>) -> Result<Self> {
        if loc.len() != scale.len() {
            return Err(CodecError::Shape(format!(
                "{} locations vs {} scales",
                loc.len(),
                scale.len()
            )));
        }
        if loc.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Precondition("non-finite prior location".into()));
        }
        if let Some(s) = scale.iter().find(|s| !(s.is_finite() && **s >= SCALE_MIN)) {
            return Err(CodecError::Precondition(format!(
                "prior scale {s} below floor {SCALE_MIN}"
            )));
        }
        Ok(Self { loc, scale })
    }

    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    pub fn loc(&self) -> &[f32] {
        &self.loc
    }

    pub fn scale(&self) -> &[f32] {
        &self.scale
    }

    pub fn model(&self, i: usize) -> LogisticBin {
        LogisticBin::new(self.loc[i], self.scale[i])
    }
}

/// A univariate model that assigns probability mass to unit-width integer bins.
pub trait BinModel {
    /// Unclamped mass of the interval `[lo, hi]`.
    fn interval_mass(&self, lo: f64, hi: f64) -> f64;

    /// Mass of the bin centred on `t`, floored at [`P_MIN`]. `t` may be
    /// fractional, which is how the noise-relaxed rate is evaluated.
    fn bin_prob_at(&self, t: f64) -> f64 {
        self.interval_mass(t - 0.5, t + 0.5).max(P_MIN)
    }

    fn bin_prob(&self, k: i32) -> f64 {
        self.bin_prob_at(k as f64)
    }

    /// Floored bin probabilities for every symbol of `support`, in order.
    fn fill_pmf(&self, support: Support, out: &mut Vec<f64>) {
        out.clear();
        out.extend(support.iter().map(|k| self.bin_prob(k)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBin {
    mu: f64,
    delta: f64,
}

impl GaussianBin {
    pub fn new(mu: f32, delta: f32) -> Self {
        Self {
            mu: mu as f64,
            delta: delta as f64,
        }
    }
}

/// Standard normal CDF.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

impl BinModel for GaussianBin {
    fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        let a = (lo - self.mu) / self.delta;
        let b = (hi - self.mu) / self.delta;
        // difference of upper tails keeps precision when both ends are far right
        if a > 0.0 {
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        }
    }

    fn fill_pmf(&self, support: Support, out: &mut Vec<f64>) {
        out.clear();
        let reach = GAUSSIAN_CUTOFF_SIGMAS * self.delta + 0.5;
        let (lo, hi) = (self.mu - reach, self.mu + reach);
        out.extend(support.iter().map(|k| {
            let kf = k as f64;
            if kf < lo || kf > hi {
                P_MIN
            } else {
                self.bin_prob(k)
            }
        }));
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticBin {
    loc: f64,
    scale: f64,
}

impl LogisticBin {
    pub fn new(loc: f32, scale: f32) -> Self {
        Self {
            loc: loc as f64,
            scale: scale as f64,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl BinModel for LogisticBin {
    fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        let a = (lo - self.loc) / self.scale;
        let b = (hi - self.loc) / self.scale;
        if a > 0.0 {
            sigmoid(-a) - sigmoid(-b)
        } else {
            sigmoid(b) - sigmoid(a)
        }
    }
}

/// `Φ((k+½−μ)/δ) − Φ((k−½−μ)/δ)`, floored at [`P_MIN`].
pub fn gaussian_bin_prob(mu: f32, delta: f32, k: i32) -> Result<f64> {
    if delta.is_nan() || delta < DELTA_MIN {
        return Err(CodecError::Precondition(format!(
            "deviation {delta} below floor {DELTA_MIN}"
        )));
    }
    Ok(GaussianBin::new(mu, delta).bin_prob(k))
}

/// `σ((k+½−loc)/s) − σ((k−½−loc)/s)`, floored at [`P_MIN`].
pub fn logistic_bin_prob(loc: f32, scale: f32, k: i32) -> Result<f64> {
    if scale.is_nan() || scale < SCALE_MIN {
        return Err(CodecError::Precondition(format!(
            "scale {scale} below floor {SCALE_MIN}"
        )));
    }
    Ok(LogisticBin::new(loc, scale).bin_prob(k))
}

/// Σ −log₂ p over `symbols`, with `pmf(i, s)` giving the model probability of
/// symbol `s` at position `i`.
pub fn estimate_bits(symbols: &[i32], pmf: impl Fn(usize, i32) -> f64) -> Result<f64> {
    let mut bits = 0.0;
    for (i, &s) in symbols.iter().enumerate() {
        let p = pmf(i, s);
        if !p.is_finite() || p <= 0.0 {
            return Err(CodecError::Model(format!(
                "symbol {s} at position {i} has probability {p}"
            )));
        }
        bits -= p.log2();
    }
    Ok(bits)
}

/// Noise-relaxed rate: Σ −log₂ of the Gaussian bin mass centred on each
/// continuous value.
pub fn relaxed_bits(values: &[f32], params: &GaussianParams) -> Result<f64> {
    if values.len() != params.len() {
        return Err(CodecError::Shape(format!(
            "{} values for {} parameter pairs",
            values.len(),
            params.len()
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| -params.model(i).bin_prob_at(v as f64).log2())
        .sum())
}
