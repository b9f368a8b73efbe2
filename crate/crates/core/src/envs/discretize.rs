use crate::error::{OpeError, Result};

/// State aggregation by per-dimension scaling and rounding. The rounded
/// integer tuple is the abstract state; `id` hashes it to a stable 64-bit
/// identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    pub scales: Vec<f64>,
}

impl Discretizer {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() || scales.iter().any(|&s| !(s > 0.0)) {
            return Err(OpeError::InvalidArgument(
                "discretizer scales must be positive".into(),
            ));
        }
        Ok(Self { scales })
    }

    /// Rounded integer tuple for a feature vector.
    pub fn key(&self, features: &[f64]) -> Vec<i64> {
        assert_eq!(
            features.len(),
            self.scales.len(),
            "feature dimension {} does not match discretizer dimension {}",
            features.len(),
            self.scales.len()
        );
        features
            .iter()
            .zip(&self.scales)
            .map(|(x, s)| (x * s).round() as i64)
            .collect()
    }

    /// A representative feature vector mapping back into the cell of `key`.
    pub fn representative(&self, key: &[i64]) -> Vec<f64> {
        key.iter().zip(&self.scales).map(|(k, s)| *k as f64 / s).collect()
    }

    /// Stable FNV-1a hash of the rounded tuple.
    pub fn id(&self, features: &[f64]) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for k in self.key(features) {
            for byte in k.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        hash
    }
}

/// Abstract-state id for a feature vector under the given scales.
pub fn discretize(features: &[f64], scales: &[f64]) -> Result<u64> {
    Ok(Discretizer::new(scales.to_vec())?.id(features))
}
