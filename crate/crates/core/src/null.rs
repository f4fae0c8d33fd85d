//! Permutation null for matched-component reproducibility.
//!
//! Under the null hypothesis no component is reproducible, so the `K n_c`
//! component maps can be dealt at random into `K` pseudo-runs of `n_c` maps
//! each. Running the greedy matcher on such a dealing yields `n_c`
//! reproducibility values; pooling them over `R` dealings gives the null
//! sample against which observed values are ranked.
//!
//! A dealing is a simultaneous row/column permutation of the full
//! correlation matrix, so maps are never touched after the initial
//! correlation pass.
//!
//! Replicate `r` draws its permutation from `ChaCha8Rng` seeded with the
//! configured seed and switched to stream `r`. Replicates therefore run in
//! any order, on any number of threads, and pool to the same bits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matching::{compute_crcm, match_components, reproducibility_values};
use crate::types::{is_permutation, Crcm, MatchedComponent, ReproducibilityReport, RunCollection, ValidationError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NullError {
    #[error("invalid permutation of {0} component labels")]
    InvalidPermutation(usize),
    #[error("invalid null configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullConfig {
    replicates: usize,
    seed: u64,
    p_crit: f64,
}

impl NullConfig {
    pub const DEFAULT_P_CRIT: f64 = 0.05;

    pub fn new(replicates: usize, seed: u64, p_crit: f64) -> Result<Self, NullError> {
        if replicates == 0 {
            return Err(NullError::InvalidConfig("need at least one replicate".into()));
        }
        if !(p_crit > 0.0 && p_crit < 1.0) {
            return Err(NullError::InvalidConfig(format!(
                "p_crit must lie in (0, 1), got {p_crit}"
            )));
        }
        Ok(Self {
            replicates,
            seed,
            p_crit,
        })
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn p_crit(&self) -> f64 {
        self.p_crit
    }
}

/// `G -> G(perm, perm)`: label `a` of the result is label `perm[a]` of `g`.
/// Pseudo-run membership follows the new positions, so pairs that were
/// within-run before may now be cross-run and vice versa.
pub fn permute_crcm(g: &Crcm, perm: &[usize]) -> Result<Crcm, NullError> {
    let size = g.size();
    if !is_permutation(perm, size) {
        return Err(NullError::InvalidPermutation(size));
    }
    let src = g.signed();
    let signed = ndarray::Array2::from_shape_fn((size, size), |(a, b)| src[[perm[a], perm[b]]]);
    Ok(Crcm::from_signed_unchecked(g.n_runs(), g.n_components(), signed))
}

/// The random permutation used by replicate `replicate`.
pub fn replicate_permutation(size: usize, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    let mut perm: Vec<usize> = (0..size).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Pooled null sample of length `R * n_c`, ordered by replicate.
pub fn null_distribution(g: &Crcm, cfg: &NullConfig) -> Vec<f64> {
    let size = g.size();
    let per_replicate: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let perm = replicate_permutation(size, cfg.seed, r);
            let permuted = permute_crcm(g, &perm).expect("generated permutation is valid");
            reproducibility_values(&permuted)
        })
        .collect();
    per_replicate.into_iter().flatten().collect()
}

/// `p_i = (#{null >= observed_i} + 1) / (len(null) + 1)`.
pub fn p_values(observed: &[f64], null_pool: &[f64]) -> Vec<f64> {
    assert!(!null_pool.is_empty(), "null pool must not be empty");
    let mut sorted = null_pool.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len();
    observed
        .iter()
        .map(|&obs| {
            let below = sorted.partition_point(|&x| x < obs);
            ((total - below) as f64 + 1.0) / (total as f64 + 1.0)
        })
        .collect()
}

/// Strict `p < p_crit`.
pub fn select_significant(p: &[f64], p_crit: f64) -> Vec<bool> {
    p.iter().map(|&v| v < p_crit).collect()
}

/// Full pipeline: correlations, matching, null sample, p-values and flags,
/// with components sorted by descending reproducibility.
pub fn run_raicar_n(rc: &RunCollection, cfg: &NullConfig) -> Result<ReproducibilityReport, NullError> {
    let g = compute_crcm(rc);
    let (mut matched, _) = match_components(&g);
    matched.sort_by(|a, b| b.reproducibility().total_cmp(&a.reproducibility()));
    let observed: Vec<f64> = matched.iter().map(MatchedComponent::reproducibility).collect();
    let null_sample = null_distribution(&g, cfg);
    let p = p_values(&observed, &null_sample);
    let significant = select_significant(&p, cfg.p_crit);
    Ok(ReproducibilityReport::new(matched, null_sample, p, cfg.p_crit, significant)?)
}
