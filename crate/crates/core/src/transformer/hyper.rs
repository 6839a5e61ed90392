use super::{LayeredSequenceMask, Linear, StyleBlock};
use crate::entropy::{GaussianParams, DELTA_MIN};
use crate::error::{CodecError, Result};
use crate::numeric::{softplus, Matrix, SeededRng};
use crate::params::{fan_in_matrix, join, Params, TensorList, TensorStore, WeightInit};
use crate::style::{LayerId, NUM_TOKENS};

/// Three unmasked blocks, style width down to the hyperprior width.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperEncoder {
    pub position: Matrix,
    pub blocks: Vec<StyleBlock>,
}

fn widths(dim: usize, stages: [usize; 2], hyper: usize) -> [usize; 4] {
    [dim, stages[0], stages[1], hyper]
}

impl HyperEncoder {
    pub fn init(
        rng: &mut SeededRng,
        dim: usize,
        stages: [usize; 2],
        hyper: usize,
        init: WeightInit,
    ) -> Result<Self> {
        let w = widths(dim, stages, hyper);
        let position = fan_in_matrix(rng, NUM_TOKENS, dim);
        let blocks = (0..3)
            .map(|i| StyleBlock::init(rng, w[i], w[i + 1], init))
            .collect::<Result<_>>()?;
        Ok(Self { position, blocks })
    }

    pub fn load(
        prefix: &str,
        store: &mut TensorStore,
        dim: usize,
        stages: [usize; 2],
        hyper: usize,
    ) -> Result<Self> {
        let w = widths(dim, stages, hyper);
        let position = store.take(&join(prefix, "pos"), NUM_TOKENS, dim)?;
        let blocks = (0..3)
            .map(|i| StyleBlock::load(&join(prefix, &format!("block{i}")), store, w[i], w[i + 1]))
            .collect::<Result<_>>()?;
        Ok(Self { position, blocks })
    }

    /// Continuous hyperprior `h`, 18 × hyper width, from all 18 quantized tokens.
    pub fn forward(&self, styles: &Matrix) -> Result<Matrix> {
        if styles.shape() != self.position.shape() {
            return Err(CodecError::Shape(format!(
                "hyper encoder expects {:?}, got {:?}",
                self.position.shape(),
                styles.shape()
            )));
        }
        let mut x = styles.add(&self.position)?;
        for b in &self.blocks {
            x = b.forward(&x, None)?;
        }
        Ok(x)
    }
}

impl Params for HyperEncoder {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "pos"), self.position.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.export(&join(prefix, &format!("block{i}")), out);
        }
    }
}

/// Three masked blocks expanding hyperpriors back to style width, then
/// affine μ and δ heads.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperDecoder {
    pub position: Matrix,
    pub blocks: Vec<StyleBlock>,
    pub mu_head: Linear,
    pub delta_head: Linear,
    pub mask: LayeredSequenceMask,
}

impl HyperDecoder {
    pub fn init(
        rng: &mut SeededRng,
        dim: usize,
        stages: [usize; 2],
        hyper: usize,
        init: WeightInit,
    ) -> Result<Self> {
        let mut w = widths(dim, stages, hyper);
        w.reverse();
        let position = fan_in_matrix(rng, NUM_TOKENS, hyper);
        let blocks = (0..3)
            .map(|i| StyleBlock::init(rng, w[i], w[i + 1], init))
            .collect::<Result<_>>()?;
        Ok(Self {
            position,
            blocks,
            mu_head: Linear::init(rng, dim, dim),
            delta_head: Linear::init(rng, dim, dim),
            mask: LayeredSequenceMask::layered(),
        })
    }

    pub fn load(
        prefix: &str,
        store: &mut TensorStore,
        dim: usize,
        stages: [usize; 2],
        hyper: usize,
    ) -> Result<Self> {
        let mut w = widths(dim, stages, hyper);
        w.reverse();
        let position = store.take(&join(prefix, "pos"), NUM_TOKENS, hyper)?;
        let blocks = (0..3)
            .map(|i| StyleBlock::load(&join(prefix, &format!("block{i}")), store, w[i], w[i + 1]))
            .collect::<Result<_>>()?;
        Ok(Self {
            position,
            blocks,
            mu_head: Linear::load(&join(prefix, "mu"), store, dim, dim)?,
            delta_head: Linear::load(&join(prefix, "delta"), store, dim, dim)?,
            mask: LayeredSequenceMask::layered(),
        })
    }

    pub fn style_dim(&self) -> usize {
        self.mu_head.weight.cols()
    }

    /// Gaussian parameters for every token of layers ≤ `upto`, row-major
    /// (token, coordinate). Only the first `6·upto` rows of `hyper` are read.
    pub fn forward(&self, hyper: &Matrix, upto: LayerId) -> Result<GaussianParams> {
        let n = upto.prefix_len();
        if hyper.rows() < n {
            return Err(CodecError::Precondition(format!(
                "decoding up to layer {upto} needs {n} hyperprior tokens, got {}",
                hyper.rows()
            )));
        }
        if hyper.cols() != self.position.cols() {
            return Err(CodecError::Shape(format!(
                "hyperprior width {} vs {}",
                hyper.cols(),
                self.position.cols()
            )));
        }
        let mut x = hyper
            .slice_rows(0, n)
            .add(&self.position.slice_rows(0, n))?;
        for b in &self.blocks {
            x = b.forward(&x, Some(&self.mask))?;
        }
        let mu = self.mu_head.forward(&x)?;
        let delta = self
            .delta_head
            .forward(&x)?
            .map(|r| softplus(r) + DELTA_MIN);
        GaussianParams::new(mu.into_data(), delta.into_data())
    }
}

impl Params for HyperDecoder {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "pos"), self.position.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.export(&join(prefix, &format!("block{i}")), out);
        }
        self.mu_head.export(&join(prefix, "mu"), out);
        self.delta_head.export(&join(prefix, "delta"), out);
    }
}
