//! Stop detection and unsupervised semantic place annotation for GPS
//! trajectories.
//!
//! The pipeline runs: [`ingest`] raw points and place layers, detect stops
//! ([`stops`]), learn temporal priors from potential visits ([`priors`]),
//! score candidates ([`spatial`], [`annotate`]), optionally decode per-day
//! sequences ([`sequence`]), and evaluate against activity logs
//! ([`evaluation`]).

pub mod annotate;
pub mod evaluation;
pub mod exec;
pub mod geo;
pub mod ingest;
pub mod priors;
pub mod sequence;
pub mod spatial;
pub mod stops;
pub mod synth;
pub mod zone;

pub use exec::Mode;
