use crate::error::{Error, Result};
use crate::model_mgmt::{sha256, Digest};

/// Flat model parameters tagged with a version.
///
/// Construction rejects empty and non-finite inputs, so every `ParamVector`
/// in circulation satisfies `dim() >= 1` and all values finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    version: u64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, version: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("parameter vector must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter at index {i}")));
        }
        Ok(Self { values, version })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must have dim >= 1");
        Self { values: vec![0.0; dim], version: 0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Shape { expected, actual: self.dim() });
        }
        Ok(())
    }

    /// `self - other`, keeping `self`'s version.
    pub fn delta(&self, other: &ParamVector) -> Result<ParamVector> {
        other.ensure_dim(self.dim())?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        ParamVector::new(values, self.version)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Little-endian f64 encoding of the values (no header).
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 over the little-endian value bytes.
    pub fn digest(&self) -> Digest {
        sha256(&self.to_le_bytes())
    }

    /// Raw size on the wire when sent uncompressed.
    pub fn raw_bytes(&self) -> u64 {
        8 * self.dim() as u64
    }
}
