//! Predicts the failure probability of crowdsourced software tasks from
//! platform state and picks the posting day, among the planned day and
//! the two following days, with the lowest predicted failure.

pub mod config;
pub mod eval;
pub mod exec;
pub mod platform;
pub mod predictor;
pub mod scheduler;
pub mod similarity;
pub mod task;
