use nalgebra::{DMatrix, DVector};

use super::dataset::ConditionDataset;
use super::structure::{ModelStructure, ParameterVector};
use crate::error::{Error, Result};

/// The `(Y, Phi)` pair of one condition under a fixed model structure.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub structure: ModelStructure,
    pub condition_name: String,
}

impl RegressionProblem {
    pub fn new(
        y: DVector<f64>,
        phi: DMatrix<f64>,
        structure: ModelStructure,
        condition_name: impl Into<String>,
    ) -> Result<Self> {
        let condition_name = condition_name.into();
        if phi.nrows() != y.len() || phi.ncols() != structure.n_theta() {
            return Err(Error::Dimension(format!(
                "{condition_name}: Phi is {}x{}, expected {}x{}",
                phi.nrows(),
                phi.ncols(),
                y.len(),
                structure.n_theta()
            )));
        }
        Ok(RegressionProblem {
            y,
            phi,
            structure,
            condition_name,
        })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn predict(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        if theta.structure() != self.structure {
            return Err(Error::Dimension(format!(
                "{}: model structure {:?} does not match problem structure {:?}",
                self.condition_name,
                theta.structure(),
                self.structure
            )));
        }
        Ok(&self.phi * theta.values())
    }

    pub fn residual_norm_sq(&self, theta: &DVector<f64>) -> f64 {
        (&self.y - &self.phi * theta).norm_squared()
    }
}

/// Builds the lag-window regression for `ds`: one row per fully populated window, i.e.
/// `M = L - n + 1` rows for `t = n..=L`, each holding `[x_j(t), x_j(t-1), ..., x_j(t-n+1)]`
/// for every channel `j` in block order.
pub fn build_regressor(ds: &ConditionDataset, structure: ModelStructure) -> Result<RegressionProblem> {
    let n = structure.taps;
    let j_count = structure.channels;
    let l = ds.sample_count();
    if ds.channel_count() != j_count {
        return Err(Error::Dimension(format!(
            "{}: dataset has {} channels, structure expects {j_count}",
            ds.name(),
            ds.channel_count()
        )));
    }
    if l < n {
        return Err(Error::InvalidInput(format!(
            "{}: series shorter than tap count ({l} samples < {n} taps)",
            ds.name()
        )));
    }
    let m = l - n + 1;
    let x = ds.inputs();
    let phi = DMatrix::from_fn(m, structure.n_theta(), |row, col| {
        let t = row + n - 1;
        let (channel, lag) = (col / n, col % n);
        x[(t - lag, channel)]
    });
    let y = ds.output().rows(n - 1, m).into_owned();
    RegressionProblem::new(y, phi, structure, ds.name())
}

/// Vertically stacks problems that share one structure.
pub fn stack_problems(problems: &[RegressionProblem], name: impl Into<String>) -> Result<RegressionProblem> {
    let structure =
        super::structure::check_shared_structure(problems.iter().map(|p| p.structure))?;
    let rows: usize = problems.iter().map(RegressionProblem::rows).sum();
    let mut phi = DMatrix::zeros(rows, structure.n_theta());
    let mut y = DVector::zeros(rows);
    let mut offset = 0;
    for p in problems {
        phi.rows_mut(offset, p.rows()).copy_from(&p.phi);
        y.rows_mut(offset, p.rows()).copy_from(&p.y);
        offset += p.rows();
    }
    RegressionProblem::new(y, phi, structure, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(x: &[f64], channels: usize, y: &[f64]) -> ConditionDataset {
        ConditionDataset::new(
            "T10-1",
            DMatrix::from_row_slice(y.len(), channels, x),
            DVector::from_column_slice(y),
        )
        .unwrap()
    }

    #[test]
    fn two_taps_single_channel() {
        let ds = dataset(&[1.0, 2.0, 3.0, 4.0], 1, &[10.0, 20.0, 30.0, 40.0]);
        let p = build_regressor(&ds, ModelStructure::new(2, 1).unwrap()).unwrap();
        assert_eq!(p.phi, DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 3.0, 2.0, 4.0, 3.0]));
        assert_eq!(p.y.as_slice(), &[20.0, 30.0, 40.0]);
    }

    #[test]
    fn one_tap_is_identity() {
        let x = [1.0, -1.0, 2.0, 0.5, 3.0, 7.0];
        let ds = dataset(&x, 2, &[1.0, 2.0, 3.0]);
        let p = build_regressor(&ds, ModelStructure::new(1, 2).unwrap()).unwrap();
        assert_eq!(&p.phi, ds.inputs());
        assert_eq!(&p.y, ds.output());
    }

    #[test]
    fn two_hundred_parameter_shape() {
        let l = 1049;
        let ds = ConditionDataset::new(
            "BR30-1",
            DMatrix::from_fn(l, 4, |t, j| (t * 4 + j) as f64),
            DVector::from_fn(l, |t, _| t as f64),
        )
        .unwrap();
        let p = build_regressor(&ds, ModelStructure::new(50, 4).unwrap()).unwrap();
        assert_eq!(p.phi.shape(), (1000, 200));
        assert_eq!(p.y.len(), 1000);
    }

    #[test]
    fn sliding_window_overlap() {
        let l = 12;
        let ds = ConditionDataset::new(
            "T10-1",
            DMatrix::from_fn(l, 2, |t, j| (t as f64 + 1.0) * if j == 0 { 1.0 } else { -3.0 }),
            DVector::zeros(l),
        )
        .unwrap();
        let n = 4;
        let p = build_regressor(&ds, ModelStructure::new(n, 2).unwrap()).unwrap();
        for r in 0..p.rows() - 1 {
            for j in 0..2 {
                for lag in 0..n - 1 {
                    assert_eq!(p.phi[(r + 1, j * n + lag + 1)], p.phi[(r, j * n + lag)]);
                }
            }
        }
    }

    #[test]
    fn short_series_rejected() {
        let ds = dataset(&[1.0, 2.0], 1, &[1.0, 2.0]);
        let err = build_regressor(&ds, ModelStructure::new(3, 1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("series shorter than tap count"));
        let err = build_regressor(&ds, ModelStructure::new(1, 2).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
