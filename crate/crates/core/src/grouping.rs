//! Planning random subject groups for group decompositions.
//!
//! For `N` subjects split into random groups of `L`, two fixed subjects
//! appear together in a group with probability
//! `C(N-2, L-2) / C(N, L) = L (L-1) / (N (N-1))`. Keeping that probability
//! at or below `alpha_max` keeps the groups diverse; the planner picks the
//! largest group size that does.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("group size {size} outside [2, {subjects}]")]
    Domain { size: usize, subjects: usize },
    #[error("alpha_max must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("need at least one group")]
    NoGroups,
}

/// Default number of groups; results stabilize beyond roughly 50 groups.
pub const DEFAULT_GROUPS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPlan {
    pub subjects: usize,
    pub alpha_max: Option<f64>,
    pub group_size: usize,
    pub pair_probability: f64,
    pub expected_cooccurrence: f64,
    /// Zero-based subject indices, sorted within each group.
    pub groups: Vec<Vec<usize>>,
}

fn check_domain(subjects: usize, size: usize) -> Result<(), GroupingError> {
    if size < 2 || size > subjects {
        Err(GroupingError::Domain { size, subjects })
    } else {
        Ok(())
    }
}

/// Probability that two given subjects share a uniformly drawn `L`-subset.
pub fn pair_probability(subjects: usize, size: usize) -> Result<f64, GroupingError> {
    check_domain(subjects, size)?;
    let (n, l) = (subjects as f64, size as f64);
    Ok((l * (l - 1.0)) / (n * (n - 1.0)))
}

/// Expected number of groups, out of `groups`, containing both subjects.
pub fn expected_cooccurrence(groups: usize, subjects: usize, size: usize) -> Result<f64, GroupingError> {
    Ok(groups as f64 * pair_probability(subjects, size)?)
}

/// Largest `L` in `[2, N]` with pair probability `<= alpha_max`, or `None`
/// when even pairs are too likely to co-occur.
pub fn max_group_size(subjects: usize, alpha_max: f64) -> Result<Option<usize>, GroupingError> {
    if !(alpha_max > 0.0 && alpha_max < 1.0) {
        return Err(GroupingError::Alpha(alpha_max));
    }
    if subjects < 2 {
        return Err(GroupingError::Domain { size: 2, subjects });
    }
    // pair probability increases strictly with L
    let mut best = None;
    for size in 2..=subjects {
        if pair_probability(subjects, size)? <= alpha_max {
            best = Some(size);
        } else {
            break;
        }
    }
    Ok(best)
}

/// `groups` independent uniform `size`-subsets of `0..subjects`.
pub fn sample_groups(subjects: usize, size: usize, groups: usize, seed: u64) -> Result<GroupPlan, GroupingError> {
    check_domain(subjects, size)?;
    if groups == 0 {
        return Err(GroupingError::NoGroups);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = (0..groups)
        .map(|_| {
            let mut roster: Vec<usize> = (0..subjects).collect();
            let (picked, _) = roster.partial_shuffle(&mut rng, size);
            let mut g = picked.to_vec();
            g.sort_unstable();
            g
        })
        .collect();
    let p = pair_probability(subjects, size)?;
    Ok(GroupPlan {
        subjects,
        alpha_max: None,
        group_size: size,
        pair_probability: p,
        expected_cooccurrence: groups as f64 * p,
        groups: drawn,
    })
}

/// Picks the largest admissible group size and samples `groups` groups.
pub fn plan_groups(subjects: usize, alpha_max: f64, groups: usize, seed: u64) -> Result<Option<GroupPlan>, GroupingError> {
    let Some(size) = max_group_size(subjects, alpha_max)? else {
        return Ok(None);
    };
    let mut plan = sample_groups(subjects, size, groups, seed)?;
    plan.alpha_max = Some(alpha_max);
    Ok(Some(plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_three_subjects_at_five_percent() {
        assert_eq!(max_group_size(23, 0.05).unwrap(), Some(5));
        assert!((pair_probability(23, 5).unwrap() - 1330.0 / 33649.0).abs() < 1e-15);
        assert!((pair_probability(23, 2).unwrap() - 1.0 / 253.0).abs() < 1e-15);
        assert_eq!(pair_probability(10, 10).unwrap(), 1.0);
    }

    #[test]
    fn infeasible_and_near_one_alpha() {
        assert_eq!(max_group_size(4, 0.01).unwrap(), None);
        assert_eq!(max_group_size(10, 0.999).unwrap(), Some(9));
        assert!(max_group_size(10, 1.0).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(pair_probability(5, 1).is_err());
        assert!(pair_probability(5, 6).is_err());
        assert!(sample_groups(5, 3, 0, 1).is_err());
    }

    #[test]
    fn expected_values() {
        assert!((expected_cooccurrence(50, 23, 5).unwrap() - 50.0 * 1330.0 / 33649.0).abs() < 1e-12);
        assert_eq!(expected_cooccurrence(0, 23, 5).unwrap(), 0.0);
        assert_eq!(expected_cooccurrence(1, 7, 7).unwrap(), 1.0);
    }

    #[test]
    fn full_roster_groups() {
        let plan = sample_groups(6, 6, 4, 3).unwrap();
        assert!(plan.groups.iter().all(|g| g == &vec![0, 1, 2, 3, 4, 5]));
    }

    #[test]
    fn groups_are_distinct_subsets_and_deterministic() {
        let plan = sample_groups(23, 5, 50, 5).unwrap();
        assert_eq!(plan.groups.len(), 50);
        for g in &plan.groups {
            assert_eq!(g.len(), 5);
            assert!(g.windows(2).all(|w| w[0] < w[1]));
            assert!(g.iter().all(|&s| s < 23));
        }
        assert_eq!(plan, sample_groups(23, 5, 50, 5).unwrap());
    }

    #[test]
    fn empirical_cooccurrence_matches_formula() {
        let plan = sample_groups(23, 5, 10_000, 11).unwrap();
        let hits = plan.groups.iter().filter(|g| g.contains(&0) && g.contains(&1)).count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.039526).abs() < 0.005, "freq {freq}");
    }
}
