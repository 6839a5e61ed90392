//! The 18-token extended latent and its basic/middle/enhanced grouping.

use std::fmt;

use crate::error::{CodecError, Result};
use crate::numeric::Matrix;

/// Number of style vectors in one latent.
pub const NUM_TOKENS: usize = 18;
/// Tokens per layer; the three layers split the latent 6/6/6.
pub const TOKENS_PER_LAYER: usize = 6;
/// Vector width of the full-size latent.
pub const DEFAULT_STYLE_DIM: usize = 512;

/// One of the three scalable layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerId {
    /// Tokens 0–5: contour information for landmark and parsing tasks.
    Basic = 1,
    /// Tokens 6–11: identity and attributes.
    Middle = 2,
    /// Tokens 12–17: texture and detail for human viewing.
    Enhanced = 3,
}

impl LayerId {
    pub const ALL: [LayerId; 3] = [LayerId::Basic, LayerId::Middle, LayerId::Enhanced];

    pub fn new(value: u8) -> Result<Self> {
        match value {
            1 => Ok(LayerId::Basic),
            2 => Ok(LayerId::Middle),
            3 => Ok(LayerId::Enhanced),
            v => Err(CodecError::Precondition(format!(
                "layer must be 1, 2 or 3, got {v}"
            ))),
        }
    }

    #[inline]
    pub fn index(self) -> u8 {
        self as u8
    }

    /// Token index range covered by this layer.
    pub fn tokens(self) -> std::ops::Range<usize> {
        let k = self as usize - 1;
        k * TOKENS_PER_LAYER..(k + 1) * TOKENS_PER_LAYER
    }

    /// Number of tokens in layers up to and including this one.
    pub fn prefix_len(self) -> usize {
        self as usize * TOKENS_PER_LAYER
    }

    /// Layer that owns token `index`.
    pub fn of_token(index: usize) -> LayerId {
        assert!(index < NUM_TOKENS, "token index {index} out of range");
        match index / TOKENS_PER_LAYER {
            0 => LayerId::Basic,
            1 => LayerId::Middle,
            _ => LayerId::Enhanced,
        }
    }
}

impl TryFrom<u8> for LayerId {
    type Error = CodecError;

    fn try_from(value: u8) -> Result<Self> {
        LayerId::new(value)
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// 18 residual style vectors (offsets from the average vector).
#[derive(Clone, Debug, PartialEq)]
pub struct StyleVectorSet {
    dim: usize,
    data: Vec<f32>,
}

impl StyleVectorSet {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(CodecError::Shape("style dimension must be positive".into()));
        }
        if data.len() != NUM_TOKENS * dim {
            return Err(CodecError::Shape(format!(
                "style set of dim {dim} needs {} values, got {}",
                NUM_TOKENS * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::Precondition(format!(
                "non-finite style value at token {}, channel {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; NUM_TOKENS * dim],
        }
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != NUM_TOKENS {
            return Err(CodecError::Shape(format!(
                "style set needs {NUM_TOKENS} rows, got {}",
                m.rows()
            )));
        }
        let dim = m.cols();
        Self::new(dim, m.into_data())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Contiguous view of one layer's six vectors.
    pub fn layer(&self, layer: LayerId) -> &[f32] {
        let r = layer.tokens();
        &self.data[r.start * self.dim..r.end * self.dim]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(NUM_TOKENS, self.dim, self.data.clone()).expect("shape is fixed")
    }

    /// Borrowed (L1, L2, L3) views: tokens 0–5, 6–11 and 12–17.
    pub fn group_layers(&self) -> (&[f32], &[f32], &[f32]) {
        (
            self.layer(LayerId::Basic),
            self.layer(LayerId::Middle),
            self.layer(LayerId::Enhanced),
        )
    }

    /// Zeroes every layer above `keep`.
    pub fn layer_mask(&self, keep: LayerId) -> StyleVectorSet {
        let mut out = self.clone();
        let cut = keep.prefix_len() * self.dim;
        out.data[cut..].iter_mut().for_each(|v| *v = 0.0);
        out
    }

    /// Residuals plus the average vector.
    pub fn to_absolute(&self, avg: &AverageVector) -> Result<StyleVectorSet> {
        self.check_avg(avg)?;
        let mut out = self.clone();
        for t in 0..NUM_TOKENS {
            for (v, a) in out.vector_mut(t).iter_mut().zip(&avg.values) {
                *v += a;
            }
        }
        Ok(out)
    }

    /// Absolute vectors minus the average vector.
    pub fn from_absolute(absolute: &StyleVectorSet, avg: &AverageVector) -> Result<StyleVectorSet> {
        absolute.check_avg(avg)?;
        let mut out = absolute.clone();
        for t in 0..NUM_TOKENS {
            for (v, a) in out.vector_mut(t).iter_mut().zip(&avg.values) {
                *v -= a;
            }
        }
        Ok(out)
    }

    fn check_avg(&self, avg: &AverageVector) -> Result<()> {
        if avg.values.len() != self.dim {
            return Err(CodecError::Shape(format!(
                "average vector has {} entries, styles have dim {}",
                avg.values.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// The generator's average latent w̄; residual vectors are taken against it.
#[derive(Clone, Debug, PartialEq)]
pub struct AverageVector {
    values: Vec<f32>,
}

impl AverageVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Precondition(
                "average vector must be non-empty and finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn indexed_set(dim: usize) -> StyleVectorSet {
        let data = (0..NUM_TOKENS)
            .flat_map(|i| std::iter::repeat_n(i as f32, dim))
            .collect();
        StyleVectorSet::new(dim, data).unwrap()
    }

    #[test]
    fn grouping_is_six_six_six() {
        let s = indexed_set(8);
        let (l1, l2, l3) = s.group_layers();
        assert_eq!(l1.len(), 6 * 8);
        assert_eq!(l2.len(), 6 * 8);
        assert_eq!(l3.len(), 6 * 8);
        assert!(l2[..8].iter().all(|&v| v == 6.0));
        let joined: Vec<f32> = [l1, l2, l3].concat();
        assert_eq!(joined, s.data());
    }

    #[test]
    fn token_layers() {
        for i in 0..NUM_TOKENS {
            let expected = LayerId::new((i / 6 + 1) as u8).unwrap();
            assert_eq!(LayerId::of_token(i), expected);
            assert!(expected.tokens().contains(&i));
        }
        assert!(LayerId::new(0).is_err());
        assert!(LayerId::new(4).is_err());
    }

    #[test]
    fn mask_examples() {
        let s = indexed_set(4);
        assert_eq!(s.layer_mask(LayerId::Enhanced), s);
        let m1 = s.layer_mask(LayerId::Basic);
        assert!(m1.data()[6 * 4..].iter().all(|&v| v == 0.0));
        assert_eq!(&m1.data()[..6 * 4], &s.data()[..6 * 4]);
        assert_eq!(m1, s.layer_mask(LayerId::Middle).layer_mask(LayerId::Basic));
    }

    #[test]
    fn absolute_round_trip() {
        let s = StyleVectorSet::zeros(3);
        let avg = AverageVector::new(vec![0.5, -1.0, 2.0]).unwrap();
        let abs = s.to_absolute(&avg).unwrap();
        for t in 0..NUM_TOKENS {
            assert_eq!(abs.vector(t), avg.values());
        }
        let zero = AverageVector::new(vec![0.0; 3]).unwrap();
        let x = indexed_set(3);
        assert_eq!(x.to_absolute(&zero).unwrap(), x);
        assert!(x
            .to_absolute(&AverageVector::new(vec![1.0; 4]).unwrap())
            .is_err());
    }

    #[test]
    fn rejects_bad_sets() {
        assert!(StyleVectorSet::new(4, vec![0.0; 17 * 4]).is_err());
        let mut d = vec![0.0; 18 * 4];
        d[5] = f32::INFINITY;
        assert!(StyleVectorSet::new(4, d).is_err());
    }

    proptest! {
        #[test]
        fn mask_agrees_below_and_zeroes_above(
            data in proptest::collection::vec(-50.0f32..50.0, 18 * 5),
            k in 1u8..=3,
        ) {
            let s = StyleVectorSet::new(5, data).unwrap();
            let layer = LayerId::new(k).unwrap();
            let m = s.layer_mask(layer);
            for t in 0..NUM_TOKENS {
                if LayerId::of_token(t) <= layer {
                    prop_assert_eq!(m.vector(t), s.vector(t));
                } else {
                    prop_assert!(m.vector(t).iter().all(|&v| v == 0.0));
                }
            }
        }

        #[test]
        fn absolute_inverse(
            data in proptest::collection::vec(-10.0f32..10.0, 18 * 4),
            avg in proptest::collection::vec(-3.0f32..3.0, 4),
        ) {
            let s = StyleVectorSet::new(4, data).unwrap();
            let avg = AverageVector::new(avg).unwrap();
            let back = StyleVectorSet::from_absolute(&s.to_absolute(&avg).unwrap(), &avg).unwrap();
            for (a, b) in back.data().iter().zip(s.data()) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            }
        }
    }
}
