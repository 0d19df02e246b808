//! Minimax-regret aggregation of study estimates into a treatment decision
//! for a target population.

pub mod bias;
pub mod error;
pub mod eta;
pub mod evaluate;
pub mod lp;
pub mod model;
pub mod nelder_mead;
pub mod qp;
pub mod refine;
pub mod weights;

pub use error::{Error, Result};
pub use model::{sd_of, Decision, ParameterSpace, RegretProfile, Study, StudyPool, TargetSpec, WeightVector};
