//! Ground-truth models used to simulate training data and to score
//! synthetic data.

use cgm_core::rng::CgmRng;
use cgm_core::{Kind, Table, Value};

use crate::error::{BenchError, Result};

/// Result of refitting a model family on new data.
pub struct Refit {
    pub model: Box<dyn ParametricModel>,
    /// `false` when the estimator stopped before meeting its tolerance.
    pub converged: bool,
}

pub trait ParametricModel: Send + Sync {
    fn header(&self) -> Vec<String>;

    fn kinds(&self) -> Vec<Kind>;

    fn sample(&self, n: usize, rng: &mut CgmRng) -> Table;

    fn log_prob(&self, row: &[Value]) -> Result<f64>;

    /// Maximum-likelihood estimate within the same family.
    fn refit(&self, data: &Table, seed: u64) -> Result<Refit>;

    fn mean_log_prob(&self, data: &Table) -> Result<f64> {
        if data.header() != self.header().as_slice() {
            return Err(BenchError::Data(cgm_core::data::column_diff(
                &self.header(),
                data.header(),
            )));
        }
        if data.n_rows() == 0 {
            return Err(BenchError::Data("cannot score an empty table".into()));
        }
        let mut total = 0.0;
        for i in 0..data.n_rows() {
            total += self.log_prob(&data.row(i))?;
        }
        Ok(total / data.n_rows() as f64)
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
