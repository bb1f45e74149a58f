use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a MISO-FIR model: `taps` lags (0..taps-1) for each of `channels` inputs.
///
/// Parameters are laid out channel-major: all lags of channel 1, then all lags of channel 2, and
/// so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelStructure {
    pub taps: usize,
    pub channels: usize,
}

impl ModelStructure {
    pub fn new(taps: usize, channels: usize) -> Result<Self> {
        if taps == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "model structure needs taps >= 1 and channels >= 1, got taps={taps}, channels={channels}"
            )));
        }
        Ok(ModelStructure { taps, channels })
    }

    pub fn n_theta(&self) -> usize {
        self.taps * self.channels
    }

    /// Index range of the 1-based channel `j`.
    pub fn block_range(&self, j: usize) -> Result<Range<usize>> {
        if j == 0 || j > self.channels {
            return Err(Error::InvalidInput(format!(
                "channel index {j} out of range 1..={}",
                self.channels
            )));
        }
        Ok((j - 1) * self.taps..j * self.taps)
    }
}

/// Parameter vector of one condition model, tied to its structure.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: DVector<f64>,
    structure: ModelStructure,
}

impl ParameterVector {
    pub fn new(values: DVector<f64>, structure: ModelStructure) -> Result<Self> {
        if values.len() != structure.n_theta() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, structure expects {}",
                values.len(),
                structure.n_theta()
            )));
        }
        Ok(ParameterVector { values, structure })
    }

    pub fn from_slice(values: &[f64], structure: ModelStructure) -> Result<Self> {
        Self::new(DVector::from_column_slice(values), structure)
    }

    pub fn zeros(structure: ModelStructure) -> Self {
        ParameterVector {
            values: DVector::zeros(structure.n_theta()),
            structure,
        }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn structure(&self) -> ModelStructure {
        self.structure
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    /// Coefficients of the 1-based channel `j` (lags 0..n-1).
    pub fn block(&self, j: usize) -> Result<&[f64]> {
        let range = self.structure.block_range(j)?;
        Ok(&self.values.as_slice()[range])
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.values.as_slice().chunks(self.structure.taps)
    }
}

pub(crate) fn check_shared_structure<I>(structures: I) -> Result<ModelStructure>
where
    I: IntoIterator<Item = ModelStructure>,
{
    let mut iter = structures.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Precondition("at least one condition is required".into()))?;
    for (idx, s) in iter.enumerate() {
        if s != first {
            return Err(Error::Dimension(format!(
                "condition {} has structure {:?}, expected {:?}",
                idx + 2,
                s,
                first
            )));
        }
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_layout() {
        let s = ModelStructure::new(2, 2).unwrap();
        let theta = ParameterVector::from_slice(&[1.0, 2.0, 3.0, 4.0], s).unwrap();
        assert_eq!(theta.block(2).unwrap(), &[3.0, 4.0]);
        assert_eq!(theta.block(1).unwrap(), &[1.0, 2.0]);
        assert!(theta.block(0).is_err());
        assert!(theta.block(3).is_err());
        let joined: Vec<f64> = theta.blocks().flatten().copied().collect();
        assert_eq!(joined, theta.as_slice());
    }

    #[test]
    fn single_channel_block_is_whole_vector() {
        let s = ModelStructure::new(3, 1).unwrap();
        let theta = ParameterVector::from_slice(&[0.5, -1.0, 2.0], s).unwrap();
        assert_eq!(theta.block(1).unwrap(), theta.as_slice());
    }

    #[test]
    fn fifty_taps_first_block() {
        let s = ModelStructure::new(50, 4).unwrap();
        assert_eq!(s.n_theta(), 200);
        assert_eq!(s.block_range(1).unwrap(), 0..50);
        assert_eq!(s.block_range(4).unwrap(), 150..200);
    }

    #[test]
    fn length_must_match() {
        let s = ModelStructure::new(2, 2).unwrap();
        assert!(ParameterVector::from_slice(&[1.0, 2.0, 3.0], s).is_err());
        assert!(ModelStructure::new(0, 1).is_err());
    }
}
