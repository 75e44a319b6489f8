use crate::error::{Error, Result};
use crate::mathcore::Matrix;

/// A mini-batch of state/action pairs, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Matrix,
    pub actions: Matrix,
}

impl Batch {
    pub fn new(states: Matrix, actions: Matrix) -> Result<Self> {
        if states.rows() != actions.rows() {
            return Err(Error::invalid(format!(
                "batch has {} states but {} actions",
                states.rows(),
                actions.rows()
            )));
        }
        Ok(Self { states, actions })
    }

    pub fn from_pairs(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Self> {
        let states: Vec<&[f64]> = pairs.iter().map(|(s, _)| s.as_slice()).collect();
        let actions: Vec<&[f64]> = pairs.iter().map(|(_, a)| a.as_slice()).collect();
        Self::new(Matrix::from_rows(&states)?, Matrix::from_rows(&actions)?)
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub(crate) fn require_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid("empty batch"))
        } else {
            Ok(())
        }
    }
}
