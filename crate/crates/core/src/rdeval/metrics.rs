use crate::error::{CodecError, Result};

/// Landmark coordinates with the normalizing distance `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub normalizer: f64,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, normalizer: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(CodecError::Precondition("landmark set is empty".into()));
        }
        if !(normalizer > 0.0 && normalizer.is_finite()) {
            return Err(CodecError::Precondition(format!(
                "normalizer must be positive, got {normalizer}"
            )));
        }
        Ok(Self { points, normalizer })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NmeConvention {
    /// `‖p − p̂‖²` in the numerator.
    #[default]
    Squared,
    /// `‖p − p̂‖` in the numerator.
    Euclidean,
}

/// `(1/N) Σᵢ ‖pᵢ − p̂ᵢ‖² / d`, with `d` taken from the reference set.
pub fn nme(reference: &LandmarkSet, test: &LandmarkSet, convention: NmeConvention) -> Result<f64> {
    if reference.points.len() != test.points.len() {
        return Err(CodecError::Shape(format!(
            "{} reference vs {} test landmarks",
            reference.points.len(),
            test.points.len()
        )));
    }
    let sum: f64 = reference
        .points
        .iter()
        .zip(&test.points)
        .map(|(p, q)| {
            let sq = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            match convention {
                NmeConvention::Squared => sq,
                NmeConvention::Euclidean => sq.sqrt(),
            }
        })
        .sum();
    Ok(sum / reference.points.len() as f64 / reference.normalizer)
}

/// Pixel counts for one class `j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    /// Labeled pixels `t_j`.
    pub total: u64,
    /// `n_jj`.
    pub true_positive: u64,
    /// `Σ_{i≠j} n_ij`: pixels of other classes predicted as `j`.
    pub false_positive: u64,
    /// `Σ_{i≠j} n_ji`: pixels of `j` predicted as another class.
    pub false_negative: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationCounts {
    pub classes: Vec<ClassCounts>,
}

impl SegmentationCounts {
    /// From a square confusion matrix, `m[i][j]` = pixels of class `i`
    /// predicted as `j`.
    pub fn from_confusion(m: &[Vec<u64>]) -> Result<Self> {
        let k = m.len();
        if k == 0 || m.iter().any(|r| r.len() != k) {
            return Err(CodecError::Shape(
                "confusion matrix must be square and nonempty".into(),
            ));
        }
        let classes = (0..k)
            .map(|j| ClassCounts {
                total: m[j].iter().sum(),
                true_positive: m[j][j],
                false_positive: (0..k).filter(|&i| i != j).map(|i| m[i][j]).sum(),
                false_negative: (0..k).filter(|&i| i != j).map(|i| m[j][i]).sum(),
            })
            .collect();
        Ok(Self { classes })
    }
}

/// Frequency-weighted IoU. A class whose IoU denominator is zero contributes 0.
pub fn fwiou(c: &SegmentationCounts) -> Result<f64> {
    let total: u64 = c.classes.iter().map(|k| k.total).sum();
    if total == 0 {
        return Err(CodecError::Precondition("no labeled pixels".into()));
    }
    let weighted: f64 = c
        .classes
        .iter()
        .map(|k| {
            let denom = k.false_positive + k.false_negative + k.true_positive;
            if denom == 0 {
                0.0
            } else {
                k.total as f64 * k.true_positive as f64 / denom as f64
            }
        })
        .sum();
    Ok(weighted / total as f64)
}

/// Mean opinion score: the plain mean of all ratings.
pub fn mos(ratings: &[u8]) -> Result<f64> {
    if ratings.is_empty() {
        return Err(CodecError::Precondition("no ratings".into()));
    }
    if let Some(r) = ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(CodecError::Precondition(format!(
            "rating {r} outside 1..=5"
        )));
    }
    Ok(ratings.iter().map(|&r| r as u64).sum::<u64>() as f64 / ratings.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nme_cases() {
        let r = LandmarkSet::new(vec![[0.0, 0.0]], 25.0).unwrap();
        let t = LandmarkSet::new(vec![[3.0, 4.0]], 25.0).unwrap();
        assert_eq!(nme(&r, &t, NmeConvention::Squared).unwrap(), 1.0);
        assert_eq!(nme(&r, &t, NmeConvention::Euclidean).unwrap(), 0.2);
        assert_eq!(nme(&r, &r, NmeConvention::Squared).unwrap(), 0.0);
        let t2 = LandmarkSet::new(vec![[6.0, 8.0]], 25.0).unwrap();
        assert_eq!(nme(&r, &t2, NmeConvention::Squared).unwrap(), 4.0);
        let two = LandmarkSet::new(vec![[0.0, 0.0]; 2], 1.0).unwrap();
        assert!(nme(&r, &two, NmeConvention::Squared).is_err());
        assert!(LandmarkSet::new(vec![[0.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn fwiou_cases() {
        let perfect = SegmentationCounts::from_confusion(&[vec![5, 0], vec![0, 7]]).unwrap();
        assert_eq!(fwiou(&perfect).unwrap(), 1.0);
        let half = SegmentationCounts {
            classes: vec![ClassCounts {
                total: 10,
                true_positive: 5,
                false_positive: 0,
                false_negative: 5,
            }],
        };
        assert_eq!(fwiou(&half).unwrap(), 0.5);
        // class 2 never occurs nor is predicted: contributes 0 and weighs 0
        let absent =
            SegmentationCounts::from_confusion(&[vec![3, 1, 0], vec![1, 3, 0], vec![0, 0, 0]])
                .unwrap();
        assert!((fwiou(&absent).unwrap() - 0.6).abs() < 1e-12);
        let empty = SegmentationCounts::from_confusion(&[vec![0]]).unwrap();
        assert!(fwiou(&empty).is_err());
    }

    #[test]
    fn mos_cases() {
        assert_eq!(mos(&[5; 12]).unwrap(), 5.0);
        assert_eq!(mos(&[1, 2, 3, 4, 5]).unwrap(), 3.0);
        assert_eq!(mos(&[5, 4, 3, 2, 1]).unwrap(), 3.0);
        assert!(mos(&[]).is_err());
        assert!(mos(&[0, 3]).is_err());
        assert!(mos(&[6]).is_err());
    }
}
