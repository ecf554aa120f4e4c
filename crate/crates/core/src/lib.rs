//! Cascading learning-to-rank for image search at desk scale.
//!
//! The crate covers the whole offline loop: a synthetic corpus and engagement
//! simulator ([`synthlog`]), label generation ([`labelgen`]), featurization
//! ([`featurize`]), six ranking models plus a rule-based scorer ([`models`]),
//! cross-source stacking ([`ensemble`]), the three-stage cascade
//! ([`cascade`]), offline metrics ([`evalkit`]) and end-to-end experiment
//! orchestration ([`experiment`]).

pub mod cascade;
pub mod ensemble;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod featurize;
pub mod labelgen;
pub mod models;
pub mod synthlog;
pub mod util;

pub use error::{Error, Result};
