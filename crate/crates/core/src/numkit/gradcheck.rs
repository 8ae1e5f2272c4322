//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

/// A scalar objective with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParamStore) -> Result<f64>;
    fn value_and_grad(&self, params: &ParamStore) -> Result<(f64, Grads)>;
}

impl<F, G> Objective for (F, G)
where
    F: Fn(&ParamStore) -> Result<f64>,
    G: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    fn value(&self, params: &ParamStore) -> Result<f64> {
        (self.0)(params)
    }

    fn value_and_grad(&self, params: &ParamStore) -> Result<(f64, Grads)> {
        (self.1)(params)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates probed per tensor; `None` sweeps every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: Some(256),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the analytic gradient of `objective` against central differences.
pub fn grad_check(
    objective: &dyn Objective,
    params: &ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (loss, grads) = objective.value_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("objective is {loss}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads
            .get(&name)
            .ok_or_else(|| Error::Consistency(format!("objective returned no gradient for {name}")))?
            .clone();
        let n = params.get(&name).len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut check = TensorCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &i in &coords {
            let orig = params.get(&name).data()[i];
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig + opts.eps;
            let plus = objective.value(&work)?;
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig - opts.eps;
            let minus = objective.value(&work)?;
            work.get_mut(&name).expect("cloned").data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "objective non-finite while perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data()[i];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_analytic = a;
                check.worst_numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport { tensors: report })
}
