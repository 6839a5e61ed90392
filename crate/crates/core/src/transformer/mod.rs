//! Style transformer blocks, the layered sequence mask, and the two entropy
//! transformers built from them.

mod cross;
mod hyper;

pub use cross::{CrossLayerL2, CrossLayerL3, CrossPath, FuseConv};
pub use hyper::{HyperDecoder, HyperEncoder};

use crate::error::{CodecError, Result};
use crate::numeric::{
    layer_norm, matmul, relu, softmax_in_place, Matrix, SeededRng, LAYER_NORM_EPS,
};
use crate::params::{fan_in_matrix, join, Params, TensorList, TensorStore, WeightInit};
use crate::style::{LayerId, NUM_TOKENS};

/// Attention logit bias on disallowed pairs. Large enough that the masked
/// softmax weight underflows to exactly zero, finite so no NaN appears.
pub const MASK_BIAS: f32 = -1e9;

/// Number of attention heads.
pub const HEADS: usize = 4;

/// Which (query, key) token pairs may attend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredSequenceMask {
    allow: [[bool; NUM_TOKENS]; NUM_TOKENS],
}

impl LayeredSequenceMask {
    /// Token i may attend to token j iff layer(j) ≤ layer(i).
    pub fn layered() -> Self {
        let mut allow = [[false; NUM_TOKENS]; NUM_TOKENS];
        for (i, row) in allow.iter_mut().enumerate() {
            for (j, a) in row.iter_mut().enumerate() {
                *a = LayerId::of_token(j) <= LayerId::of_token(i);
            }
        }
        Self { allow }
    }

    pub fn self_only() -> Self {
        let mut allow = [[false; NUM_TOKENS]; NUM_TOKENS];
        for (i, row) in allow.iter_mut().enumerate() {
            row[i] = true;
        }
        Self { allow }
    }

    #[inline]
    pub fn allows(&self, query: usize, key: usize) -> bool {
        self.allow[query][key]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn init(rng: &mut SeededRng, input: usize, output: usize) -> Self {
        Self {
            weight: fan_in_matrix(rng, input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn load(
        prefix: &str,
        store: &mut TensorStore,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.take(&join(prefix, "weight"), input, output)?,
            bias: store.take(&join(prefix, "bias"), 1, output)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        matmul(x, &self.weight)?.add_row_vector(&self.bias)
    }
}

impl Params for Linear {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Matrix::filled(1, dim, 1.0),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.take(&join(prefix, "gain"), 1, dim)?,
            bias: store.take(&join(prefix, "bias"), 1, dim)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        layer_norm(x, self.gain.data(), self.bias.data(), LAYER_NORM_EPS)
    }
}

impl Params for LayerNorm {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "gain"), self.gain.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Two-layer ReLU network, `input → input → output`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub hidden: Linear,
    pub output: Linear,
}

impl FeedForward {
    pub fn init(rng: &mut SeededRng, input: usize, output: usize, zero_output: bool) -> Self {
        let hidden = Linear::init(rng, input, input);
        let output = if zero_output {
            Linear::zeros(input, output)
        } else {
            Linear::init(rng, input, output)
        };
        Self { hidden, output }
    }

    pub fn load(
        prefix: &str,
        store: &mut TensorStore,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::load(&join(prefix, "hidden"), store, input, input)?,
            output: Linear::load(&join(prefix, "output"), store, input, output)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let h = self.hidden.forward(x)?.map(relu);
        self.output.forward(&h)
    }
}

impl Params for FeedForward {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        self.hidden.export(&join(prefix, "hidden"), out);
        self.output.export(&join(prefix, "output"), out);
    }
}

/// Multi-head scaled dot-product attention with square projections.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub heads: usize,
}

/// Per-head attention weights, `heads × queries × keys`.
pub type AttentionWeights = Vec<Matrix>;

impl Attention {
    pub fn init(rng: &mut SeededRng, dim: usize, zero_output: bool) -> Result<Self> {
        check_heads(dim)?;
        Ok(Self {
            wq: fan_in_matrix(rng, dim, dim),
            wk: fan_in_matrix(rng, dim, dim),
            wv: fan_in_matrix(rng, dim, dim),
            wo: if zero_output {
                Matrix::zeros(dim, dim)
            } else {
                fan_in_matrix(rng, dim, dim)
            },
            heads: HEADS,
        })
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        check_heads(dim)?;
        Ok(Self {
            wq: store.take(&join(prefix, "wq"), dim, dim)?,
            wk: store.take(&join(prefix, "wk"), dim, dim)?,
            wv: store.take(&join(prefix, "wv"), dim, dim)?,
            wo: store.take(&join(prefix, "wo"), dim, dim)?,
            heads: HEADS,
        })
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    /// Concatenated head outputs before the output projection, plus the
    /// attention weights of every head.
    pub fn heads_forward(
        &self,
        queries: &Matrix,
        context: &Matrix,
        mask: Option<&LayeredSequenceMask>,
    ) -> Result<(Matrix, AttentionWeights)> {
        let q = matmul(queries, &self.wq)?;
        let k = matmul(context, &self.wk)?;
        let v = matmul(context, &self.wv)?;
        Ok(scaled_dot_product(&q, &k, &v, self.heads, mask))
    }

    pub fn forward(
        &self,
        queries: &Matrix,
        context: &Matrix,
        mask: Option<&LayeredSequenceMask>,
    ) -> Result<Matrix> {
        let (heads, _) = self.heads_forward(queries, context, mask)?;
        matmul(&heads, &self.wo)
    }
}

impl Params for Attention {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "wq"), self.wq.clone()));
        out.push((join(prefix, "wk"), self.wk.clone()));
        out.push((join(prefix, "wv"), self.wv.clone()));
        out.push((join(prefix, "wo"), self.wo.clone()));
    }
}

fn check_heads(dim: usize) -> Result<()> {
    if dim == 0 || !dim.is_multiple_of(HEADS) {
        return Err(CodecError::Config(format!(
            "attention width {dim} is not divisible by {HEADS} heads"
        )));
    }
    Ok(())
}

/// `softmax(QKᵀ/√d_head + bias)·V` per head; heads are column blocks of
/// Q, K and V and are concatenated back in the same order.
pub fn scaled_dot_product(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    heads: usize,
    mask: Option<&LayeredSequenceMask>,
) -> (Matrix, AttentionWeights) {
    let (nq, nk, dim) = (q.rows(), k.rows(), q.cols());
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = Matrix::zeros(nq, dim);
    let mut weights = Vec::with_capacity(heads);
    let mut row = vec![0.0f32; nk];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut w = Matrix::zeros(nq, nk);
        for i in 0..nq {
            let qi = &q.row(i)[cols.clone()];
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                let mut acc = 0.0f32;
                for (a, b) in qi.iter().zip(kj) {
                    acc += a * b;
                }
                *s = acc * scale;
                if let Some(m) = mask {
                    if !m.allows(i, j) {
                        *s += MASK_BIAS;
                    }
                }
            }
            softmax_in_place(&mut row);
            w.row_mut(i).copy_from_slice(&row);
            let oi = &mut out.row_mut(i)[cols.clone()];
            for (j, &a) in row.iter().enumerate() {
                let vj = &v.row(j)[cols.clone()];
                for (o, &x) in oi.iter_mut().zip(vj) {
                    *o += a * x;
                }
            }
        }
        weights.push(w);
    }
    (out, weights)
}

/// Attention, residual, LN, FFN, residual, LN. When the FFN changes width,
/// the second residual goes through a learned shortcut projection.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleBlock {
    pub attention: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub shortcut: Option<Matrix>,
    pub norm2: LayerNorm,
}

impl StyleBlock {
    pub fn init(
        rng: &mut SeededRng,
        input: usize,
        output: usize,
        init: WeightInit,
    ) -> Result<Self> {
        let zero = init == WeightInit::ZeroResidual;
        Ok(Self {
            attention: Attention::init(rng, input, zero)?,
            norm1: LayerNorm::new(input),
            ffn: FeedForward::init(rng, input, output, zero),
            shortcut: (input != output).then(|| fan_in_matrix(rng, input, output)),
            norm2: LayerNorm::new(output),
        })
    }

    pub fn load(
        prefix: &str,
        store: &mut TensorStore,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            attention: Attention::load(&join(prefix, "attn"), store, input)?,
            norm1: LayerNorm::load(&join(prefix, "ln1"), store, input)?,
            ffn: FeedForward::load(&join(prefix, "ffn"), store, input, output)?,
            shortcut: if input != output {
                Some(store.take(&join(prefix, "shortcut"), input, output)?)
            } else {
                None
            },
            norm2: LayerNorm::load(&join(prefix, "ln2"), store, output)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.attention.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.norm2.gain.cols()
    }

    pub fn forward(&self, x: &Matrix, mask: Option<&LayeredSequenceMask>) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(CodecError::Shape(format!(
                "block expects width {}, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let attended = self.attention.forward(x, x, mask)?;
        let y = self.norm1.forward(&x.add(&attended)?)?;
        let skip = match &self.shortcut {
            Some(w) => matmul(&y, w)?,
            None => y.clone(),
        };
        let z = skip.add(&self.ffn.forward(&y)?)?;
        self.norm2.forward(&z)
    }
}

impl Params for StyleBlock {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        self.attention.export(&join(prefix, "attn"), out);
        self.norm1.export(&join(prefix, "ln1"), out);
        self.ffn.export(&join(prefix, "ffn"), out);
        if let Some(w) = &self.shortcut {
            out.push((join(prefix, "shortcut"), w.clone()));
        }
        self.norm2.export(&join(prefix, "ln2"), out);
    }
}

/// Self-attention block over `x`, the MHSA operation of the hyper-transformer.
pub fn mhsa(x: &Matrix, block: &StyleBlock, mask: Option<&LayeredSequenceMask>) -> Result<Matrix> {
    block.forward(x, mask)
}
