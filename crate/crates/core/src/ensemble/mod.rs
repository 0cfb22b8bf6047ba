//! Ensemble refinement: the model arbitrates between candidate queries
//! from different strategies, or writes a new one.

mod refine;
mod settings;

pub use refine::{
    refine, ArbitrationPolicy, DecisionMode, EnsembleDecision, ARBITER_TEMPERATURE, MAX_CANDIDATES,
    NEW_QUERY_STRATEGY,
};
pub use settings::{default_strategies, EnsembleSetting, EnsembleSettings};
