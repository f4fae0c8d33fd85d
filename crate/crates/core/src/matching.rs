//! Cross-run component matching.
//!
//! Builds the cross-run correlation matrix from a [`RunCollection`], then
//! greedily assembles matched components: the globally most correlated pair
//! of maps (from two different runs) seeds a match, every other run
//! contributes the map that best matches either seed, and the chosen maps are
//! removed before the next round. Each matched component is scored by the
//! mean absolute correlation over all pairs of its members.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::stats;
use crate::types::{ComponentId, Crcm, MatchedComponent, Member, RunCollection, Sign};

/// Which seed the selection for a run was taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Best match to the seed map of the second seed run (column search).
    Column,
    /// Best match to the seed map of the first seed run (row search).
    Row,
    /// Both searches found only zero correlations; lowest free index taken.
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub run: usize,
    pub column_pick: usize,
    pub column_value: f64,
    pub row_pick: usize,
    pub row_value: f64,
    pub side: Side,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// Seed pair `(l, i, m, j)`: component `i` of run `l` with component `j` of run `m`.
    pub seed: (usize, usize, usize, usize),
    pub seed_value: f64,
    pub selections: Vec<Selection>,
}

/// Record of every decision made by [`match_components`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchTrace {
    pub steps: Vec<TraceStep>,
}

impl MatchTrace {
    /// Component index per run for each matched component, rebuilt from the
    /// trace alone.
    pub fn replay(&self, n_runs: usize) -> Vec<Vec<usize>> {
        self.steps
            .iter()
            .map(|step| {
                let (l, i, m, j) = step.seed;
                let mut comps = vec![usize::MAX; n_runs];
                comps[l] = i;
                comps[m] = j;
                for sel in &step.selections {
                    comps[sel.run] = sel.chosen;
                }
                comps
            })
            .collect()
    }

    /// Checks every recorded correlation against `g`.
    pub fn consistent_with(&self, g: &Crcm) -> bool {
        self.steps.iter().all(|step| {
            let (l, i, m, j) = step.seed;
            g.get(l, i, m, j) == step.seed_value
                && step.selections.iter().all(|sel| {
                    g.get(sel.run, sel.column_pick, m, j) == sel.column_value
                        && g.get(l, i, sel.run, sel.row_pick) == sel.row_value
                })
        })
    }
}

/// Absolute-correlation matrix over every pair of maps in `rc`, stored with
/// signs; diagonal blocks read as zero through the [`Crcm`] accessors.
pub fn compute_crcm(rc: &RunCollection) -> Crcm {
    let labels: Vec<ComponentId> = rc.labels().collect();
    let centered: Vec<(Array1<f64>, f64)> = labels
        .par_iter()
        .map(|&id| stats::centered(rc.map(id)))
        .collect();
    let size = labels.len();
    let upper: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|a| {
            let (ca, sa) = &centered[a];
            (a..size)
                .map(|b| {
                    let (cb, sb) = &centered[b];
                    stats::corr_centered(ca.view(), *sa, cb.view(), *sb)
                })
                .collect()
        })
        .collect();
    let mut signed = Array2::zeros((size, size));
    for (a, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            signed[[a, a + off]] = v;
            signed[[a + off, a]] = v;
        }
    }
    Crcm::from_signed_unchecked(rc.n_runs(), rc.n_components(), signed)
}

/// Greedy matching of all components across runs.
///
/// Returns the matched components in the order they were formed, with
/// signs aligned to the seed member of the first seed run, together with a
/// trace of every choice.
pub fn match_components(g: &Crcm) -> (Vec<MatchedComponent>, MatchTrace) {
    let k = g.n_runs();
    let n_c = g.n_components();
    let mut used = vec![vec![false; n_c]; k];
    let mut matched = Vec::with_capacity(n_c);
    let mut trace = MatchTrace::default();

    for _ in 0..n_c {
        // Global maximum over free pairs in different runs, lexicographic
        // (l, i, m, j) order deciding ties.
        let mut seed: Option<((usize, usize, usize, usize), f64)> = None;
        for l in 0..k {
            for i in (0..n_c).filter(|&i| !used[l][i]) {
                for m in (l + 1)..k {
                    for j in (0..n_c).filter(|&j| !used[m][j]) {
                        let v = g.get(l, i, m, j);
                        if seed.is_none_or(|(_, best)| v > best) {
                            seed = Some(((l, i, m, j), v));
                        }
                    }
                }
            }
        }
        let ((l, i, m, j), seed_value) = seed.expect("every run keeps a free component");

        let mut comps = vec![0usize; k];
        comps[l] = i;
        comps[m] = j;
        let mut selections = Vec::with_capacity(k.saturating_sub(2));
        for s in (0..k).filter(|&s| s != l && s != m) {
            let free = || (0..n_c).filter(|&c| !used[s][c]);
            let (column_pick, column_value) = argmax(free().map(|a| (a, g.get(s, a, m, j))));
            let (row_pick, row_value) = argmax(free().map(|b| (b, g.get(l, i, s, b))));
            let (chosen, side) = if column_value == 0.0 && row_value == 0.0 {
                (column_pick, Side::Fallback)
            } else if column_value >= row_value {
                (column_pick, Side::Column)
            } else {
                (row_pick, Side::Row)
            };
            used[s][chosen] = true;
            comps[s] = chosen;
            selections.push(Selection {
                run: s,
                column_pick,
                column_value,
                row_pick,
                row_value,
                side,
                chosen,
            });
        }
        used[l][i] = true;
        used[m][j] = true;

        let labels: Vec<usize> = comps.iter().enumerate().map(|(r, &c)| g.label(r, c)).collect();
        let anchor = labels[l];
        let members = comps
            .iter()
            .enumerate()
            .map(|(run, &component)| Member {
                run,
                component,
                sign: Sign::of(g.signed_by_label(anchor, labels[run])),
            })
            .collect();
        let similarity = similarity_from_crcm(g, &labels);
        let reproducibility = normalized_reproducibility(&similarity);
        matched.push(
            MatchedComponent::new(members, l, similarity, reproducibility)
                .expect("greedy matching yields valid matched components"),
        );
        trace.steps.push(TraceStep {
            seed: (l, i, m, j),
            seed_value,
            selections,
        });
    }
    (matched, trace)
}

/// First index attaining the maximum value.
fn argmax(candidates: impl Iterator<Item = (usize, f64)>) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (idx, v) in candidates {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((idx, v));
        }
    }
    best.expect("at least one free component")
}

/// Reproducibility values only, skipping member bookkeeping; used by null
/// replicates where matched components are anonymous.
pub(crate) fn reproducibility_values(g: &Crcm) -> Vec<f64> {
    let (matched, _) = match_components(g);
    matched.iter().map(MatchedComponent::reproducibility).collect()
}

fn similarity_from_crcm(g: &Crcm, labels: &[usize]) -> Array2<f64> {
    let k = labels.len();
    Array2::from_shape_fn((k, k), |(a, b)| {
        if a == b {
            1.0
        } else {
            g.signed_by_label(labels[a], labels[b]).abs()
        }
    })
}

/// `K x K` absolute correlation matrix among the members of one matched
/// component, computed directly from the maps.
pub fn similarity_matrix(rc: &RunCollection, members: &[ComponentId]) -> Array2<f64> {
    let k = members.len();
    let centered: Vec<(Array1<f64>, f64)> =
        members.iter().map(|&id| stats::centered(rc.map(id))).collect();
    let mut h = Array2::eye(k);
    for a in 0..k {
        for b in (a + 1)..k {
            let v = stats::corr_centered(
                centered[a].0.view(),
                centered[a].1,
                centered[b].0.view(),
                centered[b].1,
            )
            .abs();
            h[[a, b]] = v;
            h[[b, a]] = v;
        }
    }
    h
}

/// Mean of the strictly upper triangle of `h`.
pub fn normalized_reproducibility(h: &Array2<f64>) -> f64 {
    let k = h.nrows();
    let mut sum = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            sum += h[[a, b]];
        }
    }
    (2.0 / ((k - 1) * k) as f64 * sum).clamp(0.0, 1.0)
}

/// Signs that make every member positively correlated with the anchor.
pub fn align_signs(rc: &RunCollection, members: &[ComponentId], anchor: usize) -> Vec<Member> {
    let anchor_map = rc.map(members[anchor]);
    members
        .iter()
        .enumerate()
        .map(|(idx, &id)| {
            let sign = if idx == anchor {
                Sign::Positive
            } else {
                Sign::of(stats::pearson(anchor_map, rc.map(id)))
            };
            Member {
                run: id.run,
                component: id.component,
                sign,
            }
        })
        .collect()
}
