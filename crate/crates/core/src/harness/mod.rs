//! Data generation and ingestion, evaluation, attention-map export and
//! experiment orchestration.

pub mod pnm;
pub mod synthetic;
pub mod eval;
pub mod experiment;
