use std::collections::BTreeMap;

use crate::error::{CodecError, Result};

/// A distortion between reference and test features. Inputs are lists of
/// arrays: feature levels for the cosine and LPIPS-style terms, flattened
/// tensors (one or more chunks) for the squared-error terms.
pub trait Distortion: Send + Sync {
    fn name(&self) -> &'static str;
    fn evaluate(&self, reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64>;
}

fn check_pairs(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CodecError::Shape(format!(
            "{} vs {} arrays",
            a.len(),
            b.len()
        )));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(CodecError::Shape(format!(
                "array {i}: {} vs {} values",
                x.len(),
                y.len()
            )));
        }
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CodecError::Shape(format!(
            "{} vs {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Squared L2 norm of the heatmap difference (summed, not averaged).
pub fn heatmap_mse(reference: &[f64], test: &[f64]) -> Result<f64> {
    squared_distance(reference, test)
}

/// Squared L2 distance (summed, not averaged).
pub fn mse(x: &[f64], y: &[f64]) -> Result<f64> {
    squared_distance(x, y)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `Σᵢ (1 − cos(aᵢ, bᵢ))` over paired feature levels.
pub fn feature_cosine_distance(reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
    check_pairs(reference, test)?;
    let mut total = 0.0;
    for (i, (a, b)) in reference.iter().zip(test).enumerate() {
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            return Err(CodecError::Precondition(format!(
                "feature level {i} has a zero vector; cosine is undefined"
            )));
        }
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
        total += 1.0 - cos;
    }
    Ok(total)
}

/// LPIPS-style distance over externally computed features: the sum over
/// levels of the squared distance between unit-normalized feature vectors.
pub fn lpips_external(reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
    check_pairs(reference, test)?;
    let mut total = 0.0;
    for (i, (a, b)) in reference.iter().zip(test).enumerate() {
        let (na, nb) = (norm(a), norm(b));
        if na == 0.0 || nb == 0.0 {
            return Err(CodecError::Precondition(format!(
                "feature level {i} has a zero vector"
            )));
        }
        total += a
            .iter()
            .zip(b)
            .map(|(x, y)| (x / na - y / nb).powi(2))
            .sum::<f64>();
    }
    Ok(total)
}

fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

struct HeatmapMse;
struct FeatureCosine;
struct PixelMse;
struct LpipsExternal;

impl Distortion for HeatmapMse {
    fn name(&self) -> &'static str {
        "heatmap_mse"
    }
    fn evaluate(&self, reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
        check_pairs(reference, test)?;
        heatmap_mse(&flatten(reference), &flatten(test))
    }
}

impl Distortion for FeatureCosine {
    fn name(&self) -> &'static str {
        "feature_cosine"
    }
    fn evaluate(&self, reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
        feature_cosine_distance(reference, test)
    }
}

impl Distortion for PixelMse {
    fn name(&self) -> &'static str {
        "mse"
    }
    fn evaluate(&self, reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
        check_pairs(reference, test)?;
        mse(&flatten(reference), &flatten(test))
    }
}

impl Distortion for LpipsExternal {
    fn name(&self) -> &'static str {
        "lpips_external"
    }
    fn evaluate(&self, reference: &[Vec<f64>], test: &[Vec<f64>]) -> Result<f64> {
        lpips_external(reference, test)
    }
}

/// Distortions looked up by name.
pub struct DistortionRegistry {
    entries: BTreeMap<&'static str, Box<dyn Distortion>>,
}

impl Default for DistortionRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(HeatmapMse));
        r.register(Box::new(FeatureCosine));
        r.register(Box::new(PixelMse));
        r.register(Box::new(LpipsExternal));
        r
    }
}

impl DistortionRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    /// Adds or replaces the distortion under its name.
    pub fn register(&mut self, d: Box<dyn Distortion>) {
        self.entries.insert(d.name(), d);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Distortion> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            CodecError::Precondition(format!(
                "unknown distortion {name:?}; known: {}",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
