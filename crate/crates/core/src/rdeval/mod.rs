//! Rate-distortion objectives and evaluation metrics.

mod distortion;
mod fixture;
mod metrics;

pub use distortion::{
    feature_cosine_distance, heatmap_mse, lpips_external, mse, Distortion, DistortionRegistry,
};
pub use fixture::{parse_confusion, parse_landmarks, parse_ratings, parse_vectors};
pub use metrics::{fwiou, mos, nme, ClassCounts, LandmarkSet, NmeConvention, SegmentationCounts};

use crate::bitstream::LayerRates;
use crate::error::{CodecError, Result};
use crate::style::LayerId;

/// Rate-distortion trade-off values used in the sweep.
pub const LAMBDA_GRID: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub lambda_lm: f64,
    pub lambda_sg: f64,
    pub lambda_id: f64,
    pub lambda_mse: f64,
    pub lambda_lpips: f64,
    pub lambda_adv: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl ObjectiveWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        let w = Self {
            lambda,
            lambda_lm: 1.0,
            lambda_sg: 1.0,
            lambda_id: 0.5,
            lambda_mse: 1.0,
            lambda_lpips: 0.8,
            lambda_adv: 0.01,
            w1: 1.5,
            w2: 2.0,
            w3: 1.5,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda,
            self.lambda_lm,
            self.lambda_sg,
            self.lambda_id,
            self.lambda_mse,
            self.lambda_lpips,
            self.lambda_adv,
            self.w1,
            self.w2,
            self.w3,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CodecError::Precondition(
                "objective weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Distortion values for one layer; `None` means not supplied.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DistortionBundle {
    pub lm: Option<f64>,
    pub sg: Option<f64>,
    pub id: Option<f64>,
    pub mse: Option<f64>,
    pub lpips: Option<f64>,
    /// Optional at every layer; only the enhanced layer uses it.
    pub adv: Option<f64>,
}

impl DistortionBundle {
    pub fn zeros() -> Self {
        Self {
            lm: Some(0.0),
            sg: Some(0.0),
            id: Some(0.0),
            mse: Some(0.0),
            lpips: Some(0.0),
            adv: None,
        }
    }
}

/// Multipliers of each input in a layer's objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Coefficients {
    /// Applied to the bits of every layer up to and including this one.
    pub rate: f64,
    pub lm: f64,
    pub sg: f64,
    pub id: f64,
    pub mse: f64,
    pub lpips: f64,
    pub adv: f64,
}

pub fn coefficients(layer: LayerId, w: &ObjectiveWeights) -> Coefficients {
    let base = Coefficients {
        rate: w.lambda,
        ..Default::default()
    };
    match layer {
        LayerId::Basic => Coefficients {
            lm: w.lambda_lm,
            sg: w.lambda_sg,
            ..base
        },
        LayerId::Middle => Coefficients {
            lm: w.w1 * w.lambda_lm,
            sg: w.w1 * w.lambda_sg,
            id: w.lambda_id,
            ..base
        },
        LayerId::Enhanced => Coefficients {
            lm: w.w2 * w.lambda_lm,
            sg: w.w2 * w.lambda_sg,
            id: w.w3 * w.lambda_id,
            mse: w.lambda_mse,
            lpips: w.lambda_lpips,
            adv: w.lambda_adv,
            ..base
        },
    }
}

fn require(v: Option<f64>, what: &str, layer: LayerId) -> Result<f64> {
    let v = v.ok_or_else(|| {
        CodecError::Precondition(format!(
            "layer {layer} objective needs the {what} distortion"
        ))
    })?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(CodecError::Precondition(format!(
            "{what} distortion {v} is invalid"
        )));
    }
    Ok(v)
}

/// Objective of one layer.
///
/// `rate_bits[i]` holds the bits of layer `i + 1`; the layers up to `layer`
/// are charged. The distortion terms are summed first (in the order lm, sg,
/// id, mse, lpips, adv, each already scaled) and the rate term is added last.
pub fn layer_objective(
    layer: LayerId,
    rate_bits: &[f64],
    d: &DistortionBundle,
    w: &ObjectiveWeights,
) -> Result<f64> {
    w.validate()?;
    let n = layer.index() as usize;
    if rate_bits.len() < n {
        return Err(CodecError::Precondition(format!(
            "layer {layer} objective needs {n} layer rates, got {}",
            rate_bits.len()
        )));
    }
    let c = coefficients(layer, w);
    let lm = require(d.lm, "landmark", layer)?;
    let sg = require(d.sg, "segmentation", layer)?;
    let task = match layer {
        LayerId::Basic => c.lm * lm + c.sg * sg,
        LayerId::Middle => {
            let id = require(d.id, "identity", layer)?;
            w.w1 * (w.lambda_lm * lm + w.lambda_sg * sg) + c.id * id
        }
        LayerId::Enhanced => {
            let id = require(d.id, "identity", layer)?;
            let mse = require(d.mse, "mse", layer)?;
            let lpips = require(d.lpips, "lpips", layer)?;
            let adv = match d.adv {
                Some(_) => require(d.adv, "adversarial", layer)?,
                None => 0.0,
            };
            w.w2 * (w.lambda_lm * lm + w.lambda_sg * sg)
                + w.w3 * w.lambda_id * id
                + c.mse * mse
                + c.lpips * lpips
                + c.adv * adv
        }
    };
    let bits: f64 = rate_bits[..n].iter().sum();
    Ok(c.rate * bits + task)
}

/// `J₁ + J₂ + J₃`, summed left to right.
pub fn scalable_objective(
    rate_bits: &[f64],
    bundles: &[DistortionBundle; 3],
    w: &ObjectiveWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for (layer, d) in LayerId::ALL.into_iter().zip(bundles) {
        total += layer_objective(layer, rate_bits, d, w)?;
    }
    Ok(total)
}

/// Measured bits per layer, in layer order.
pub fn layer_bits(rates: &LayerRates) -> Vec<f64> {
    rates.layers.iter().map(|l| l.total_bits() as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(lm: f64, sg: f64, id: f64, mse: f64, lpips: f64) -> DistortionBundle {
        DistortionBundle {
            lm: Some(lm),
            sg: Some(sg),
            id: Some(id),
            mse: Some(mse),
            lpips: Some(lpips),
            adv: None,
        }
    }

    #[test]
    fn middle_layer_hand_example() {
        let w = ObjectiveWeights::new(10.0).unwrap();
        let d = bundle(0.2, 0.2, 0.4, 0.0, 0.0);
        let j = layer_objective(LayerId::Middle, &[60.0, 40.0], &d, &w).unwrap();
        assert_eq!(j, 1000.8);
    }

    #[test]
    fn rate_only_when_distortion_free() {
        let w = ObjectiveWeights::new(15.0).unwrap();
        let bits = [10.0, 20.0, 30.0];
        for (layer, expected) in LayerId::ALL.into_iter().zip([150.0, 450.0, 900.0]) {
            let j = layer_objective(layer, &bits, &DistortionBundle::zeros(), &w).unwrap();
            assert_eq!(j, expected);
        }
        let total = scalable_objective(&bits, &[DistortionBundle::zeros(); 3], &w).unwrap();
        assert_eq!(total, 1500.0);
        let zero = scalable_objective(&[0.0; 3], &[DistortionBundle::zeros(); 3], &w).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn doubling_lambda_doubles_rate_term() {
        let d = bundle(0.3, 0.1, 0.7, 2.0, 0.25);
        let bits = [11.0, 7.0, 5.0];
        let a = ObjectiveWeights::new(5.0).unwrap();
        let b = ObjectiveWeights::new(10.0).unwrap();
        let ja = layer_objective(LayerId::Enhanced, &bits, &d, &a).unwrap();
        let jb = layer_objective(LayerId::Enhanced, &bits, &d, &b).unwrap();
        assert!(((jb - ja) - 5.0 * 23.0).abs() < 1e-9);
    }

    #[test]
    fn missing_terms_are_errors() {
        let w = ObjectiveWeights::new(5.0).unwrap();
        let d = DistortionBundle {
            lm: Some(0.1),
            sg: Some(0.1),
            ..Default::default()
        };
        assert!(layer_objective(LayerId::Basic, &[1.0], &d, &w).is_ok());
        assert!(layer_objective(LayerId::Middle, &[1.0, 1.0], &d, &w).is_err());
        assert!(layer_objective(LayerId::Middle, &[1.0], &DistortionBundle::zeros(), &w).is_err());
        let neg = DistortionBundle {
            lm: Some(-1.0),
            ..DistortionBundle::zeros()
        };
        assert!(layer_objective(LayerId::Basic, &[1.0], &neg, &w).is_err());
        assert!(ObjectiveWeights::new(-1.0).is_err());
    }

    #[test]
    fn scalable_sums_layers() {
        let w = ObjectiveWeights::new(10.0).unwrap();
        let d = bundle(0.2, 0.2, 0.4, 1.0, 0.5);
        let bits = [60.0, 40.0, 30.0];
        let parts: Vec<f64> = LayerId::ALL
            .into_iter()
            .map(|l| layer_objective(l, &bits, &d, &w).unwrap())
            .collect();
        // J1 = 600 + 0.4, J2 = 1000.8, J3 = 1300 + 2·0.4 + 1.5·0.5·0.4 + 1 + 0.8·0.5
        assert!((parts[0] - 600.4).abs() < 1e-9);
        assert!((parts[2] - 1302.5).abs() < 1e-9);
        let total = scalable_objective(&bits, &[d; 3], &w).unwrap();
        assert_eq!(total, parts[0] + parts[1] + parts[2]);
        assert!((total - 2903.7).abs() < 1e-9);
    }
}
