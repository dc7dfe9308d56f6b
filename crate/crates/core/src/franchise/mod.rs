//! Collapsed Gibbs sampling over the Chinese restaurant franchise.

pub mod checkpoint;
pub mod hyper;
pub mod sampler;
pub mod state;
pub mod weights;

pub use checkpoint::Checkpoint;
pub use hyper::{dish_level_log_likelihood, resample_hyperparams, HyperPrior};
pub use sampler::{
    sample_log_categorical, seating_log_prior, Chain, HRouteChoice, Model, Observation,
    SamplerConfig, TableRule, UnitLikelihood,
};
pub use state::FranchiseState;
pub use weights::{
    conditional_new_table_log_weight, dish_log_weights, table_log_weights, WeightCache,
};
