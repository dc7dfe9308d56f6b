use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{crm_poisson_log_pmf_at, poisson_log_pmf, CountMatrix};
use crate::error::{HcrmError, Result};
use crate::exp_mixture::{default_grid, fit_exp_mixture, DEFAULT_NUM_TERMS};
use crate::franchise::hyper::{resample_hyperparams, HyperPrior};
use crate::franchise::state::FranchiseState;
use crate::franchise::weights::{dish_level_point, WeightCache};
use crate::levy::{psi, BaseLaplace, LevySpec};
use crate::signed_log::log_sum_exp;

/// Likelihood of customer items given their dish.
pub trait Observation {
    /// `ln p(item | other items on dish)`; `None` is a new dish.
    fn log_predictive(&self, dish: Option<usize>, item: u32) -> f64;
    /// Joint predictive of a group of items added to one dish.
    fn log_predictive_group(&self, dish: Option<usize>, items: &[u32]) -> f64;
    fn add(&mut self, dish: usize, item: u32);
    fn remove(&mut self, dish: usize, item: u32);
    fn push_dish(&mut self);
    /// Mirrors the state's swap-removal of an empty dish.
    fn swap_remove_dish(&mut self, dish: usize);
    fn num_dishes(&self) -> usize;
    /// Marginal log-likelihood of all items under the current assignment.
    fn log_marginal(&self) -> f64;
    /// True when every predictive is zero, letting the sampler skip them.
    fn is_flat(&self) -> bool {
        false
    }
    /// Full consistency check against the seating, run after every sweep in
    /// debug builds.
    fn check_against(&self, _state: &FranchiseState) -> Result<()> {
        Ok(())
    }
}

/// The prior: every item has likelihood 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnitLikelihood {
    dishes: usize,
}

impl Observation for UnitLikelihood {
    fn log_predictive(&self, _: Option<usize>, _: u32) -> f64 {
        0.0
    }
    fn log_predictive_group(&self, _: Option<usize>, _: &[u32]) -> f64 {
        0.0
    }
    fn add(&mut self, _: usize, _: u32) {}
    fn remove(&mut self, _: usize, _: u32) {}
    fn push_dish(&mut self) {
        self.dishes += 1;
    }
    fn swap_remove_dish(&mut self, _: usize) {
        self.dishes -= 1;
    }
    fn num_dishes(&self) -> usize {
        self.dishes
    }
    fn log_marginal(&self) -> f64 {
        0.0
    }
    fn is_flat(&self) -> bool {
        true
    }
}

/// How the new-table weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableRule {
    /// `ln|ψ̄'(1)| + ln Σ_k dish weight_k`: the exact full conditional of the
    /// joint seating law.
    #[default]
    Conditional,
    /// The per-restaurant h-ratio rule, with the new table's likelihood
    /// averaged over the normalised dish weights.
    Marginal,
}

/// How derivatives of h are evaluated for non-gamma bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HRouteChoice {
    #[default]
    Exact,
    Mixture {
        num_terms: usize,
    },
}

impl HRouteChoice {
    pub fn mixture() -> Self {
        HRouteChoice::Mixture {
            num_terms: DEFAULT_NUM_TERMS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub hyper_prior: HyperPrior,
    pub resample_hyper: bool,
    pub use_likelihood: bool,
    pub table_rule: TableRule,
    pub h_route: HRouteChoice,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 2000,
            burn_in: 500,
            thin: 5,
            seed: 0,
            hyper_prior: HyperPrior::default(),
            resample_hyper: true,
            use_likelihood: true,
            table_rule: TableRule::Conditional,
            h_route: HRouteChoice::Exact,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(HcrmError::Config("thin must be >= 1".into()));
        }
        if self.iterations > 0 && self.burn_in >= self.iterations {
            return Err(HcrmError::Config(format!(
                "burn_in ({}) must be below iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        self.hyper_prior.validate()
    }

    /// Whether the state after `iteration` (1-based) is a retained sample.
    pub fn keeps(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Base and object Lévy specs. The base carries θ as its mass (mass 1 with
/// the θ_q inside for SGGP); the object has unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub base: LevySpec,
    pub object: LevySpec,
}

impl Model {
    pub fn new(base: LevySpec, object: LevySpec) -> Result<Self> {
        base.validate()?;
        object.validate()?;
        if object.mass != 1.0 {
            return Err(HcrmError::InvalidSpec("object spec must have unit mass".into()));
        }
        Ok(Model { base, object })
    }

    pub fn gamma_gamma(theta: f64) -> Result<Self> {
        Self::new(LevySpec::gamma(theta)?, LevySpec::gamma(1.0)?)
    }
}

/// One categorical draw from unnormalised log-weights using one uniform.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> usize {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let u: f64 = rng.random();
    let total: f64 = log_weights.iter().map(|w| (w - max).exp()).sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, w) in log_weights.iter().enumerate() {
        acc += (w - max).exp();
        if acc > target {
            return i;
        }
    }
    log_weights.len() - 1
}

/// A running Gibbs chain.
pub struct Chain<O: Observation> {
    model: Model,
    config: SamplerConfig,
    base: BaseLaplace,
    cache: WeightCache,
    state: FranchiseState,
    obs: O,
    rng: ChaCha8Rng,
    iteration: usize,
    dish_lik: Vec<f64>,
    dish_w: Vec<f64>,
    table_w: Vec<f64>,
}

impl<O: Observation> Chain<O> {
    /// Seats every customer of `state` sequentially with the sweep's own
    /// weights, starting from an rng seeded by `config.seed`.
    pub fn new(model: Model, config: SamplerConfig, state: FranchiseState, obs: O) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut chain = Self::assemble(model, config, state, obs, rng, 0)?;
        chain.initialize()?;
        Ok(chain)
    }

    /// Rebuilds a chain from a fully seated state, e.g. from a checkpoint.
    pub fn resume(
        model: Model,
        config: SamplerConfig,
        state: FranchiseState,
        obs: O,
        rng: ChaCha8Rng,
        iteration: usize,
    ) -> Result<Self> {
        state.check_invariants()?;
        if obs.num_dishes() != state.num_dishes() {
            return Err(HcrmError::StateCorruption(
                "observation model and state disagree on dish count".into(),
            ));
        }
        Self::assemble(model, config, state, obs, rng, iteration)
    }

    fn assemble(
        model: Model,
        config: SamplerConfig,
        state: FranchiseState,
        obs: O,
        rng: ChaCha8Rng,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        let base = build_base(&model, &config, state.num_restaurants())?;
        let cache = build_cache(&base, &model, &config, &state)?;
        Ok(Chain {
            model,
            config,
            base,
            cache,
            state,
            obs,
            rng,
            iteration,
            dish_lik: Vec::new(),
            dish_w: Vec::new(),
            table_w: Vec::new(),
        })
    }

    pub fn state(&self) -> &FranchiseState {
        &self.state
    }

    pub fn observation(&self) -> &O {
        &self.obs
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Completed iterations.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn initialize(&mut self) -> Result<()> {
        for i in 0..self.state.num_restaurants() {
            for l in 0..self.state.num_customers(i) {
                self.seat_customer(i, l);
            }
        }
        self.debug_check()
    }

    /// One full iteration: the sweep, then the hyperparameter update if
    /// enabled.
    pub fn step(&mut self) -> Result<()> {
        self.sweep()?;
        if self.config.resample_hyper {
            self.resample_hyper()?;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Table moves for every customer (with a dish draw for each new table),
    /// then a dish move for every table.
    pub fn sweep(&mut self) -> Result<()> {
        for i in 0..self.state.num_restaurants() {
            for l in 0..self.state.num_customers(i) {
                self.unseat_customer(i, l);
                self.seat_customer(i, l);
            }
        }
        for i in 0..self.state.num_restaurants() {
            let members = self.state.table_members(i);
            for (j, table) in members.iter().enumerate() {
                let items: Vec<u32> = table.iter().map(|&l| self.state.item(i, l)).collect();
                self.resample_dish(i, j, &items);
            }
        }
        self.debug_check()
    }

    fn debug_check(&self) -> Result<()> {
        if cfg!(debug_assertions) {
            self.state.check_invariants()?;
            if self.obs.num_dishes() != self.state.num_dishes() {
                return Err(HcrmError::StateCorruption("likelihood dish count drifted".into()));
            }
            self.obs.check_against(&self.state)?;
        }
        Ok(())
    }

    fn unseat_customer(&mut self, i: usize, l: usize) {
        let k = self.state.dish_of(i, l);
        self.obs.remove(k, self.state.item(i, l));
        let (_, removal) = self.state.unseat(i, l);
        if let Some(r) = removal {
            self.obs.swap_remove_dish(r.removed);
        }
    }

    fn fill_dish_weights(&mut self, items: Option<&[u32]>, item: u32) {
        let flat = self.obs.is_flat();
        let counts = self.state.dish_table_counts();
        self.dish_lik.clear();
        self.dish_w.clear();
        for (k, &r) in counts.iter().enumerate() {
            let lik = if flat {
                0.0
            } else {
                match items {
                    Some(g) => self.obs.log_predictive_group(Some(k), g),
                    None => self.obs.log_predictive(Some(k), item),
                }
            };
            self.dish_lik.push(lik);
            self.dish_w.push(self.cache.dish_ratio(r) + lik);
        }
        let new_lik = if flat {
            0.0
        } else {
            match items {
                Some(g) => self.obs.log_predictive_group(None, g),
                None => self.obs.log_predictive(None, item),
            }
        };
        self.dish_lik.push(new_lik);
        self.dish_w.push(self.cache.new_dish() + new_lik);
    }

    fn seat_customer(&mut self, i: usize, l: usize) {
        let item = self.state.item(i, l);
        self.fill_dish_weights(None, item);
        self.table_w.clear();
        let sizes = self.state.table_sizes(i);
        let dishes = self.state.table_dishes(i);
        for (j, &m) in sizes.iter().enumerate() {
            self.table_w.push(self.cache.table_ratio(m) + self.dish_lik[dishes[j]]);
        }
        let n_tables = sizes.len();
        let new_table = match self.config.table_rule {
            TableRule::Conditional => self.cache.ln_object_first() + log_sum_exp(&self.dish_w),
            TableRule::Marginal => {
                let prior_only: Vec<f64> = self
                    .dish_w
                    .iter()
                    .zip(&self.dish_lik)
                    .map(|(w, f)| w - f)
                    .collect();
                self.cache.h_ratio(n_tables)
                    + self.cache.ln_object_first()
                    + log_sum_exp(&self.dish_w)
                    - log_sum_exp(&prior_only)
            }
        };
        self.table_w.push(new_table);

        let j = sample_log_categorical(&self.table_w, &mut self.rng);
        if j < n_tables {
            let k = self.state.table_dishes(i)[j];
            self.state.seat_at(i, l, j);
            self.obs.add(k, item);
            return;
        }
        let p = self.state.num_dishes();
        let choice = sample_log_categorical(&self.dish_w, &mut self.rng);
        let k = self
            .state
            .seat_new_table(i, l, (choice < p).then_some(choice));
        if choice == p {
            self.obs.push_dish();
        }
        self.obs.add(k, item);
    }

    fn resample_dish(&mut self, i: usize, j: usize, items: &[u32]) {
        let old = self.state.table_dishes(i)[j];
        for &w in items {
            self.obs.remove(old, w);
        }
        let (_, removal) = self.state.unserve(i, j);
        if let Some(r) = removal {
            self.obs.swap_remove_dish(r.removed);
        }
        self.fill_dish_weights(Some(items), 0);
        let p = self.state.num_dishes();
        let choice = sample_log_categorical(&self.dish_w, &mut self.rng);
        let k = self.state.serve(i, j, (choice < p).then_some(choice));
        if choice == p {
            self.obs.push_dish();
        }
        for &w in items {
            self.obs.add(k, w);
        }
    }

    fn resample_hyper(&mut self) -> Result<()> {
        let base = resample_hyperparams(
            &self.state,
            &self.model,
            &self.config.hyper_prior,
            &mut self.rng,
        )?;
        self.set_base(base)
    }

    /// Replaces the base spec (e.g. after a hyperparameter move).
    pub fn set_base(&mut self, base: LevySpec) -> Result<()> {
        base.validate()?;
        self.model.base = base;
        self.base = build_base(&self.model, &self.config, self.state.num_restaurants())?;
        self.cache = build_cache(&self.base, &self.model, &self.config, &self.state)?;
        Ok(())
    }

    /// ln of the seating prior times the observation marginal.
    pub fn log_joint(&self) -> Result<f64> {
        Ok(seating_log_prior(&self.state, &self.model)? + self.obs.log_marginal())
    }

    pub fn into_parts(self) -> (FranchiseState, O, ChaCha8Rng, Model) {
        (self.state, self.obs, self.rng, self.model)
    }
}

fn build_base(model: &Model, config: &SamplerConfig, n: usize) -> Result<BaseLaplace> {
    match config.h_route {
        HRouteChoice::Exact => Ok(BaseLaplace::new(model.base.clone())),
        HRouteChoice::Mixture { num_terms } => {
            let hi = (psi(&model.object, 1.0)? * (n as f64 + 1.0)).max(20.0);
            let mix = fit_exp_mixture(&model.base, num_terms, &default_grid(hi, 200))?;
            Ok(BaseLaplace::with_mixture(model.base.clone(), mix))
        }
    }
}

fn build_cache(
    base: &BaseLaplace,
    model: &Model,
    config: &SamplerConfig,
    state: &FranchiseState,
) -> Result<WeightCache> {
    let h_orders = match config.table_rule {
        TableRule::Conditional => 0,
        TableRule::Marginal => state.max_customers().max(1),
    };
    WeightCache::new(
        base,
        &model.object,
        state.num_restaurants(),
        state.total_customers().max(1),
        h_orders,
    )
}

/// ln P(r, m): dish-level CRM-Poisson of the table counts at `ψ̄(1)·n`, the
/// `ψ̄(1)^{r··}` scaling, and each restaurant's table sizes given its table
/// count.
pub fn seating_log_prior(state: &FranchiseState, model: &Model) -> Result<f64> {
    let n = state.num_restaurants();
    let s = dish_level_point(&model.object, n)?;
    let psi_bar = psi(&model.object, 1.0)?;
    let r = state.table_count_matrix()?;
    let mut lp = crm_poisson_log_pmf_at(model.base.mass, &model.base.unit(), s, &r)?
        + r.total() as f64 * psi_bar.ln();
    for i in 0..n {
        let sizes = state.table_sizes(i);
        let row = CountMatrix::from_parts(1, sizes.len(), sizes.to_vec())?;
        lp += crm_poisson_log_pmf_at(1.0, &model.object, 1.0, &row)?
            - poisson_log_pmf(sizes.len() as u64, psi_bar);
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_config(seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed,
            resample_hyper: false,
            use_likelihood: false,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn single_customer_single_table() {
        let model = Model::gamma_gamma(1.0).unwrap();
        let mut chain = Chain::new(
            model,
            prior_config(3),
            FranchiseState::with_sizes(&[1]),
            UnitLikelihood::default(),
        )
        .unwrap();
        chain.sweep().unwrap();
        assert_eq!(chain.state().num_tables(0), 1);
        assert_eq!(chain.state().num_dishes(), 1);
    }

    #[test]
    fn seeded_chains_repeat() {
        let run = || {
            let mut c = Chain::new(
                Model::gamma_gamma(1.0).unwrap(),
                prior_config(11),
                FranchiseState::with_sizes(&[4, 3, 5]),
                UnitLikelihood::default(),
            )
            .unwrap();
            for _ in 0..50 {
                c.sweep().unwrap();
            }
            c.state().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn categorical_from_one_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.0, f64::NEG_INFINITY, 1f64.ln()];
        let mut hits = [0usize; 3];
        for _ in 0..20_000 {
            hits[sample_log_categorical(&w, &mut rng)] += 1;
        }
        assert_eq!(hits[1], 0);
        assert!((hits[0] as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn config_validation() {
        let mut c = SamplerConfig::default();
        c.burn_in = 2000;
        assert!(c.validate().is_err());
        c = SamplerConfig {
            thin: 0,
            ..SamplerConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SamplerConfig::default();
        assert!(!c.keeps(500));
        assert!(c.keeps(505));
        assert!(!c.keeps(506));
    }
}
