use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::distributions::crm_poisson_log_pmf_at;
use crate::error::{HcrmError, Result};
use crate::franchise::sampler::{sample_log_categorical, Model};
use crate::franchise::state::FranchiseState;
use crate::franchise::weights::dish_level_point;
use crate::levy::LevySpec;

/// Gamma(shape, rate) prior on each mass parameter, discretised on a
/// uniform grid for the posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPrior {
    pub shape: f64,
    pub rate: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_size: usize,
}

impl Default for HyperPrior {
    fn default() -> Self {
        HyperPrior {
            shape: 4.0,
            rate: 2.0,
            grid_lo: 1e-3,
            grid_hi: 20.0,
            grid_size: 200,
        }
    }
}

impl HyperPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.rate > 0.0) {
            return Err(HcrmError::Config("hyperprior shape and rate must be positive".into()));
        }
        if !(self.grid_lo > 0.0 && self.grid_hi >= self.grid_lo) || self.grid_size == 0 {
            return Err(HcrmError::Config(format!(
                "bad hyperparameter grid [{}, {}] x {}",
                self.grid_lo, self.grid_hi, self.grid_size
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        if self.grid_size == 1 {
            return vec![self.grid_lo];
        }
        let step = (self.grid_hi - self.grid_lo) / (self.grid_size - 1) as f64;
        (0..self.grid_size)
            .map(|g| self.grid_lo + step * g as f64)
            .collect()
    }

    /// Unnormalised log density.
    pub fn log_density(&self, x: f64) -> f64 {
        (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated prior")
            .sample(rng)
    }

    /// Draws from `prior × exp(log_lik)` restricted to the grid. Falls back to
    /// a prior draw when no grid point has positive finite mass.
    pub fn grid_draw<R: Rng + ?Sized, F: Fn(f64) -> f64>(&self, log_lik: F, rng: &mut R) -> f64 {
        let grid = self.grid();
        let w: Vec<f64> = grid
            .iter()
            .map(|&x| {
                let v = self.log_density(x) + log_lik(x);
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect();
        if w.iter().all(|v| !v.is_finite()) {
            log::warn!("hyperparameter grid has no mass; drawing from the prior");
            return self.sample(rng);
        }
        grid[sample_log_categorical(&w, rng)]
    }
}

/// ln of the dish-level CRM-Poisson probability of the table counts, the
/// only seating factor that depends on the base masses.
pub fn dish_level_log_likelihood(state: &FranchiseState, base: &LevySpec, object: &LevySpec) -> Result<f64> {
    let s = dish_level_point(object, state.num_restaurants())?;
    crm_poisson_log_pmf_at(base.mass, &base.unit(), s, &state.table_count_matrix()?)
}

/// Resamples every mass parameter of the base spec in turn; discounts stay
/// fixed.
pub fn resample_hyperparams<R: Rng + ?Sized>(
    state: &FranchiseState,
    model: &Model,
    prior: &HyperPrior,
    rng: &mut R,
) -> Result<LevySpec> {
    let mut base = model.base.clone();
    for q in 0..base.mass_parameters().len() {
        let current = base.clone();
        let lik = |x: f64| {
            dish_level_log_likelihood(state, &current.with_mass_parameter(q, x), &model.object)
                .unwrap_or(f64::NEG_INFINITY)
        };
        let value = prior.grid_draw(lik, rng);
        base = base.with_mass_parameter(q, value);
    }
    Ok(base)
}
