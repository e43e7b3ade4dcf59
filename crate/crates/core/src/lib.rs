//! Privacy-preserving clinical decision support over two-party additive secret sharing.
//!
//! Two non-colluding computing parties hold additive shares of patient records
//! (genotype bits, treatment, time-to-treatment-failure). A clinician shares a
//! query genotype; the parties jointly compute, for every treatment, the sum of
//! TTF values and the number of patients whose genotype lies within Hamming
//! distance `B` of the query, and return shares of those aggregates to the
//! clinician only.
//!
//! Preprocessing comes from a trusted dealer ([`preproc`]); this is an explicit
//! stand-in for a cryptographic offline phase and does not provide its guarantees.

pub mod bench;
pub mod client;
pub mod config;
pub mod database;
pub mod engine;
pub mod field;
pub mod local;
pub mod preproc;
pub mod query;
pub mod service;
pub mod sharing;
pub mod wire;
