use super::{scaled_dot_product, FeedForward, LayerNorm, StyleBlock, HEADS};
use crate::entropy::{GaussianParams, DELTA_MIN};
use crate::error::{CodecError, Result};
use crate::numeric::{matmul, relu, Matrix, SeededRng};
use crate::params::{fan_in_matrix, join, Params, TensorList, TensorStore, WeightInit};
use crate::style::TOKENS_PER_LAYER;

/// Cross-attention refinement of one parameter stream (μ or δ).
///
/// `a = MHCA(base, context)`, `h = LN(a)`, `f = h + FFN(h)`,
/// `refined = base + f·W_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossPath {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub norm: LayerNorm,
    pub ffn: FeedForward,
    pub out: Matrix,
}

impl CrossPath {
    pub fn init(rng: &mut SeededRng, dim: usize) -> Self {
        Self {
            wq: fan_in_matrix(rng, dim, dim),
            wk: fan_in_matrix(rng, dim, dim),
            wv: fan_in_matrix(rng, dim, dim),
            norm: LayerNorm::new(dim),
            ffn: FeedForward::init(rng, dim, dim, false),
            out: fan_in_matrix(rng, dim, dim),
        }
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        Ok(Self {
            wq: store.take(&join(prefix, "wq"), dim, dim)?,
            wk: store.take(&join(prefix, "wk"), dim, dim)?,
            wv: store.take(&join(prefix, "wv"), dim, dim)?,
            norm: LayerNorm::load(&join(prefix, "ln"), store, dim)?,
            ffn: FeedForward::load(&join(prefix, "ffn"), store, dim, dim)?,
            out: store.take(&join(prefix, "out"), dim, dim)?,
        })
    }

    pub fn forward(&self, base: &Matrix, context: &Matrix) -> Result<Matrix> {
        let q = matmul(base, &self.wq)?;
        let k = matmul(context, &self.wk)?;
        let v = matmul(context, &self.wv)?;
        let (a, _) = scaled_dot_product(&q, &k, &v, HEADS, None);
        let h = self.norm.forward(&a)?;
        let f = h.add(&self.ffn.forward(&h)?)?;
        base.add(&matmul(&f, &self.out)?)
    }
}

impl Params for CrossPath {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "wq"), self.wq.clone()));
        out.push((join(prefix, "wk"), self.wk.clone()));
        out.push((join(prefix, "wv"), self.wv.clone()));
        self.norm.export(&join(prefix, "ln"), out);
        self.ffn.export(&join(prefix, "ffn"), out);
        out.push((join(prefix, "out"), self.out.clone()));
    }
}

fn refine(
    base: &GaussianParams,
    context: &Matrix,
    mu_path: &CrossPath,
    delta_path: &CrossPath,
) -> Result<GaussianParams> {
    let dim = context.cols();
    if base.len() != TOKENS_PER_LAYER * dim {
        return Err(CodecError::Shape(format!(
            "expected {} base parameters, got {}",
            TOKENS_PER_LAYER * dim,
            base.len()
        )));
    }
    let mu = Matrix::from_vec(TOKENS_PER_LAYER, dim, base.mu().to_vec())?;
    let delta = Matrix::from_vec(TOKENS_PER_LAYER, dim, base.delta().to_vec())?;
    let mu = mu_path.forward(&mu, context)?;
    let delta = delta_path
        .forward(&delta, context)?
        .map(|d| d.max(DELTA_MIN));
    GaussianParams::new(mu.into_data(), delta.into_data())
}

fn check_tokens(m: &Matrix, dim: usize, what: &str) -> Result<()> {
    if m.shape() != (TOKENS_PER_LAYER, dim) {
        return Err(CodecError::Shape(format!(
            "{what} should be {TOKENS_PER_LAYER}×{dim}, got {:?}",
            m.shape()
        )));
    }
    Ok(())
}

/// Refines layer-2 parameters from decoded layer-1 styles.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayerL2 {
    pub position: Matrix,
    pub context: StyleBlock,
    pub mu: CrossPath,
    pub delta: CrossPath,
}

impl CrossLayerL2 {
    pub fn init(rng: &mut SeededRng, dim: usize, init: WeightInit) -> Result<Self> {
        Ok(Self {
            position: fan_in_matrix(rng, TOKENS_PER_LAYER, dim),
            context: StyleBlock::init(rng, dim, dim, init)?,
            mu: CrossPath::init(rng, dim),
            delta: CrossPath::init(rng, dim),
        })
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        Ok(Self {
            position: store.take(&join(prefix, "pos"), TOKENS_PER_LAYER, dim)?,
            context: StyleBlock::load(&join(prefix, "context"), store, dim, dim)?,
            mu: CrossPath::load(&join(prefix, "mu"), store, dim)?,
            delta: CrossPath::load(&join(prefix, "delta"), store, dim)?,
        })
    }

    pub fn forward(&self, base: &GaussianParams, decoded_l1: &Matrix) -> Result<GaussianParams> {
        let dim = self.position.cols();
        check_tokens(decoded_l1, dim, "decoded layer 1")?;
        let ctx = self
            .context
            .forward(&decoded_l1.add(&self.position)?, None)?;
        refine(base, &ctx, &self.mu, &self.delta)
    }
}

impl Params for CrossLayerL2 {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "pos"), self.position.clone()));
        self.context.export(&join(prefix, "context"), out);
        self.mu.export(&join(prefix, "mu"), out);
        self.delta.export(&join(prefix, "delta"), out);
    }
}

/// Width-preserving 1-D convolution over the token axis, kernel 3,
/// zero padding, ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct FuseConv {
    /// Taps stacked vertically: rows `[k·dim, (k+1)·dim)` hold tap `k`,
    /// applied to token `t + k − 1`.
    pub weight: Matrix,
    pub bias: Matrix,
}

impl FuseConv {
    pub fn init(rng: &mut SeededRng, dim: usize) -> Self {
        let weight = fan_in_matrix(rng, 3 * dim, dim);
        Self {
            weight,
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.take(&join(prefix, "weight"), 3 * dim, dim)?,
            bias: store.take(&join(prefix, "bias"), 1, dim)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let (n, dim) = x.shape();
        if self.weight.shape() != (3 * dim, dim) {
            return Err(CodecError::Shape(format!("conv width {dim} mismatch")));
        }
        // im2col: each row holds [x[t-1], x[t], x[t+1]]
        let mut cols = Matrix::zeros(n, 3 * dim);
        for t in 0..n {
            let row = cols.row_mut(t);
            for k in 0..3 {
                let src = t as isize + k as isize - 1;
                if (0..n as isize).contains(&src) {
                    row[k * dim..(k + 1) * dim].copy_from_slice(x.row(src as usize));
                }
            }
        }
        Ok(matmul(&cols, &self.weight)?
            .add_row_vector(&self.bias)?
            .map(relu))
    }
}

impl Params for FuseConv {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "weight"), self.weight.clone()));
        out.push((join(prefix, "bias"), self.bias.clone()));
    }
}

/// Refines layer-3 parameters from decoded layers 1 and 2, fused by three
/// convolution blocks before the context block.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLayerL3 {
    pub position: Matrix,
    pub fuse: Vec<FuseConv>,
    pub context: StyleBlock,
    pub mu: CrossPath,
    pub delta: CrossPath,
}

impl CrossLayerL3 {
    pub fn init(rng: &mut SeededRng, dim: usize, init: WeightInit) -> Result<Self> {
        Ok(Self {
            position: fan_in_matrix(rng, 2 * TOKENS_PER_LAYER, dim),
            fuse: (0..3).map(|_| FuseConv::init(rng, dim)).collect(),
            context: StyleBlock::init(rng, dim, dim, init)?,
            mu: CrossPath::init(rng, dim),
            delta: CrossPath::init(rng, dim),
        })
    }

    pub fn load(prefix: &str, store: &mut TensorStore, dim: usize) -> Result<Self> {
        Ok(Self {
            position: store.take(&join(prefix, "pos"), 2 * TOKENS_PER_LAYER, dim)?,
            fuse: (0..3)
                .map(|i| FuseConv::load(&join(prefix, &format!("fuse{i}")), store, dim))
                .collect::<Result<_>>()?,
            context: StyleBlock::load(&join(prefix, "context"), store, dim, dim)?,
            mu: CrossPath::load(&join(prefix, "mu"), store, dim)?,
            delta: CrossPath::load(&join(prefix, "delta"), store, dim)?,
        })
    }

    pub fn forward(
        &self,
        base: &GaussianParams,
        decoded_l1: &Matrix,
        decoded_l2: &Matrix,
    ) -> Result<GaussianParams> {
        let dim = self.position.cols();
        check_tokens(decoded_l1, dim, "decoded layer 1")?;
        check_tokens(decoded_l2, dim, "decoded layer 2")?;
        let mut x = decoded_l1.vstack(decoded_l2)?.add(&self.position)?;
        for conv in &self.fuse {
            x = conv.forward(&x)?;
        }
        let ctx = self.context.forward(&x, None)?;
        refine(base, &ctx, &self.mu, &self.delta)
    }
}

impl Params for CrossLayerL3 {
    fn export(&self, prefix: &str, out: &mut TensorList) {
        out.push((join(prefix, "pos"), self.position.clone()));
        for (i, c) in self.fuse.iter().enumerate() {
            c.export(&join(prefix, &format!("fuse{i}")), out);
        }
        self.context.export(&join(prefix, "context"), out);
        self.mu.export(&join(prefix, "mu"), out);
        self.delta.export(&join(prefix, "delta"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_matrix;

    const DIM: usize = 32;

    fn base(rng: &mut SeededRng) -> GaussianParams {
        let mu = (0..6 * DIM).map(|_| rng.symmetric_f32(4.0)).collect();
        let delta = (0..6 * DIM).map(|_| 0.5 + rng.unit_f32()).collect();
        GaussianParams::new(mu, delta).unwrap()
    }

    #[test]
    fn zero_output_is_identity() {
        let mut rng = SeededRng::new(11);
        let mut l2 = CrossLayerL2::init(&mut rng, DIM, WeightInit::Random).unwrap();
        let mut l3 = CrossLayerL3::init(&mut rng, DIM, WeightInit::Random).unwrap();
        for p in [&mut l2.mu, &mut l2.delta, &mut l3.mu, &mut l3.delta] {
            p.out = Matrix::zeros(DIM, DIM);
        }
        let b = base(&mut rng);
        let d1 = seeded_matrix(&mut rng, 6, DIM, 9.0).unwrap();
        let d2 = seeded_matrix(&mut rng, 6, DIM, 9.0).unwrap();
        assert_eq!(l2.forward(&b, &d1).unwrap(), b);
        assert_eq!(l3.forward(&b, &d1, &d2).unwrap(), b);
    }

    #[test]
    fn refinement_depends_on_context() {
        let mut rng = SeededRng::new(12);
        let l2 = CrossLayerL2::init(&mut rng, DIM, WeightInit::ZeroResidual).unwrap();
        let l3 = CrossLayerL3::init(&mut rng, DIM, WeightInit::ZeroResidual).unwrap();
        let b = base(&mut rng);
        let d1 = seeded_matrix(&mut rng, 6, DIM, 9.0).unwrap();
        let d2 = seeded_matrix(&mut rng, 6, DIM, 9.0).unwrap();
        let mut d1p = d1.clone();
        d1p.set(2, 3, d1p.get(2, 3) + 4.0);
        let mut d2p = d2.clone();
        d2p.set(5, 0, d2p.get(5, 0) - 4.0);

        let r = l2.forward(&b, &d1).unwrap();
        assert_ne!(r, b);
        assert_ne!(l2.forward(&b, &d1p).unwrap(), r);

        let r3 = l3.forward(&b, &d1, &d2).unwrap();
        assert_ne!(l3.forward(&b, &d1p, &d2).unwrap(), r3);
        assert_ne!(l3.forward(&b, &d1, &d2p).unwrap(), r3);
        assert!(r3.delta().iter().all(|&d| d >= DELTA_MIN));
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = SeededRng::new(13);
        let conv = FuseConv::init(&mut rng, 4);
        let x = seeded_matrix(&mut rng, 5, 4, 1.0).unwrap();
        let y = conv.forward(&x).unwrap();
        for t in 0..5 {
            for o in 0..4 {
                let mut acc = 0.0f64;
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if !(0..5).contains(&src) {
                        continue;
                    }
                    for i in 0..4 {
                        acc += x.get(src as usize, i) as f64 * conv.weight.get(k * 4 + i, o) as f64;
                    }
                }
                assert!((y.get(t, o) as f64 - acc.max(0.0)).abs() < 1e-5);
            }
        }
    }
}
