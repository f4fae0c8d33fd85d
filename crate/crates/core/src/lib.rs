//! Reproducibility analysis of component decompositions across repeated
//! runs.
//!
//! Component maps from `K` runs are matched greedily by absolute spatial
//! correlation, each matched set is scored by its normalized
//! reproducibility, and a permutation null built by shuffling component
//! labels across runs turns the scores into p-values. Supporting modules
//! provide a noisy FastICA engine, a group-size planner for bootstrapped
//! group decompositions, a Student-t/Gamma mixture for displaying
//! non-Gaussian structure, and synthetic data with known answers.

pub mod config;
pub mod grouping;
pub mod ica;
pub mod io;
pub mod linalg;
pub mod matching;
pub mod mixture;
pub mod null;
pub mod stats;
pub mod synth;
pub mod types;

pub use matching::{compute_crcm, match_components, MatchTrace};
pub use null::{run_raicar_n, NullConfig};
pub use types::{
    ComponentId, Crcm, IcaModel, MatchedComponent, Member, ReproducibilityReport, RunCollection, Sign,
    ValidationError,
};
