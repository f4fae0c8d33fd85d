//! Shared data model: component maps, run collections, the cross-run
//! correlation matrix, matched components, reports and fitted ICA models.
//!
//! Every type validates its invariants at construction; a value that exists
//! is a valid value.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("need at least 2 runs, got {0}")]
    TooFewRuns(usize),
    #[error("runs must hold at least one component")]
    NoComponents,
    #[error("component maps need more than one location, got {0}")]
    TooShort(usize),
    #[error("ragged runs: {0}")]
    RaggedRuns(String),
    #[error("non-finite value in run {run}, component {component}, location {location}")]
    NonFinite {
        run: usize,
        component: usize,
        location: usize,
    },
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("invalid member list: {0}")]
    InvalidMembers(String),
}

/// Zero-based (run, component) address of a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentId {
    pub run: usize,
    pub component: usize,
}

/// One spatial map flattened to a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    id: ComponentId,
    values: Array1<f64>,
}

impl ComponentMap {
    pub fn new(id: ComponentId, values: Array1<f64>) -> Result<Self, ValidationError> {
        if values.len() < 2 {
            return Err(ValidationError::TooShort(values.len()));
        }
        if let Some(location) = values.iter().position(|v| !v.is_finite()) {
            return Err(ValidationError::NonFinite {
                run: id.run,
                component: id.component,
                location,
            });
        }
        Ok(Self { id, values })
    }

    pub fn id(&self) -> ComponentId {
        self.id
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }
}

/// K decomposition runs, each an `n_c x n` matrix whose rows are component maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCollection {
    runs: Vec<Array2<f64>>,
}

impl RunCollection {
    /// Builds a collection from per-run `n_c x n` matrices.
    pub fn from_matrices(runs: Vec<Array2<f64>>) -> Result<Self, ValidationError> {
        if runs.len() < 2 {
            return Err(ValidationError::TooFewRuns(runs.len()));
        }
        let (n_c, n) = runs[0].dim();
        if n_c == 0 {
            return Err(ValidationError::NoComponents);
        }
        if n < 2 {
            return Err(ValidationError::TooShort(n));
        }
        for (r, run) in runs.iter().enumerate() {
            if run.dim() != (n_c, n) {
                return Err(ValidationError::RaggedRuns(format!(
                    "run {} is {}x{}, expected {}x{}",
                    r + 1,
                    run.nrows(),
                    run.ncols(),
                    n_c,
                    n
                )));
            }
            for (c, row) in run.rows().into_iter().enumerate() {
                if let Some(location) = row.iter().position(|v| !v.is_finite()) {
                    return Err(ValidationError::NonFinite {
                        run: r,
                        component: c,
                        location,
                    });
                }
            }
        }
        Ok(Self { runs })
    }

    /// Validates raw nested data indexed `[run][component][location]`.
    pub fn validate(raw: Vec<Vec<Vec<f64>>>) -> Result<Self, ValidationError> {
        if raw.len() < 2 {
            return Err(ValidationError::TooFewRuns(raw.len()));
        }
        let n_c = raw[0].len();
        if n_c == 0 {
            return Err(ValidationError::NoComponents);
        }
        let n = raw[0][0].len();
        let mut runs = Vec::with_capacity(raw.len());
        for (r, run) in raw.into_iter().enumerate() {
            if run.len() != n_c {
                return Err(ValidationError::RaggedRuns(format!(
                    "run {} has {} components, expected {}",
                    r + 1,
                    run.len(),
                    n_c
                )));
            }
            let mut flat = Vec::with_capacity(n_c * n);
            for (c, map) in run.into_iter().enumerate() {
                if map.len() != n {
                    return Err(ValidationError::RaggedRuns(format!(
                        "run {} component {} has {} locations, expected {}",
                        r + 1,
                        c + 1,
                        map.len(),
                        n
                    )));
                }
                flat.extend(map);
            }
            runs.push(Array2::from_shape_vec((n_c, n), flat).expect("shape checked above"));
        }
        Self::from_matrices(runs)
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn n_components(&self) -> usize {
        self.runs[0].nrows()
    }

    pub fn n_locations(&self) -> usize {
        self.runs[0].ncols()
    }

    pub fn run(&self, run: usize) -> ArrayView2<'_, f64> {
        self.runs[run].view()
    }

    pub fn runs(&self) -> &[Array2<f64>] {
        &self.runs
    }

    pub fn map(&self, id: ComponentId) -> ArrayView1<'_, f64> {
        self.runs[id.run].row(id.component)
    }

    pub fn component_map(&self, id: ComponentId) -> ComponentMap {
        ComponentMap {
            id,
            values: self.map(id).to_owned(),
        }
    }

    /// Maps flattened in label order: run 0 components first, then run 1, ...
    pub fn labels(&self) -> impl Iterator<Item = ComponentId> + '_ {
        let n_c = self.n_components();
        (0..self.n_runs() * n_c).map(move |label| ComponentId {
            run: label / n_c,
            component: label % n_c,
        })
    }

    /// Regroups maps by a label permutation: null run `r`, slot `c` receives
    /// the map with flattened label `perm[r * n_c + c]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self, ValidationError> {
        let n_c = self.n_components();
        let k = self.n_runs();
        if !is_permutation(perm, k * n_c) {
            return Err(ValidationError::InvalidMembers(
                "relabeling is not a permutation of all component labels".into(),
            ));
        }
        let n = self.n_locations();
        let runs = (0..k)
            .map(|r| {
                let mut m = Array2::zeros((n_c, n));
                for c in 0..n_c {
                    let label = perm[r * n_c + c];
                    m.row_mut(c).assign(&self.runs[label / n_c].row(label % n_c));
                }
                m
            })
            .collect();
        Self::from_matrices(runs)
    }
}

pub(crate) fn is_permutation(perm: &[usize], len: usize) -> bool {
    if perm.len() != len {
        return false;
    }
    let mut seen = vec![false; len];
    for &p in perm {
        if p >= len || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Cross-run correlation matrix over all `K * n_c` component maps.
///
/// The full signed correlation matrix is kept, including within-run pairs,
/// so that any relabeling of components into pseudo-runs can be served
/// without touching the maps again. Lookups through [`Crcm::get`] and
/// [`Crcm::to_matrix`] return absolute values with the diagonal blocks
/// (same-run pairs) forced to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Crcm {
    n_runs: usize,
    n_components: usize,
    signed: Array2<f64>,
}

impl Crcm {
    /// Wraps a full signed correlation matrix laid out in label order.
    pub fn from_signed(
        n_runs: usize,
        n_components: usize,
        signed: Array2<f64>,
    ) -> Result<Self, ValidationError> {
        let size = n_runs * n_components;
        if n_runs < 2 {
            return Err(ValidationError::TooFewRuns(n_runs));
        }
        if n_components == 0 {
            return Err(ValidationError::NoComponents);
        }
        if signed.dim() != (size, size) {
            return Err(ValidationError::RaggedRuns(format!(
                "correlation matrix is {}x{}, expected {size}x{size}",
                signed.nrows(),
                signed.ncols()
            )));
        }
        for a in 0..size {
            for b in 0..size {
                let v = signed[[a, b]];
                if !(v.is_finite() && (-1.0..=1.0).contains(&v)) || v != signed[[b, a]] {
                    return Err(ValidationError::InvalidMembers(format!(
                        "correlation entry ({a}, {b}) = {v} is out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(Self {
            n_runs,
            n_components,
            signed,
        })
    }

    pub(crate) fn from_signed_unchecked(
        n_runs: usize,
        n_components: usize,
        signed: Array2<f64>,
    ) -> Self {
        Self {
            n_runs,
            n_components,
            signed,
        }
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn size(&self) -> usize {
        self.n_runs * self.n_components
    }

    pub fn label(&self, run: usize, component: usize) -> usize {
        run * self.n_components + component
    }

    /// `G_lm(i, j)`; zero on diagonal blocks.
    pub fn get(&self, l: usize, i: usize, m: usize, j: usize) -> f64 {
        if l == m {
            0.0
        } else {
            self.signed[[self.label(l, i), self.label(m, j)]].abs()
        }
    }

    /// Signed correlation between two labels, regardless of run membership.
    pub fn signed_by_label(&self, a: usize, b: usize) -> f64 {
        self.signed[[a, b]]
    }

    pub fn signed(&self) -> ArrayView2<'_, f64> {
        self.signed.view()
    }

    /// Dense `(K n_c)^2` absolute matrix with zeroed diagonal blocks.
    pub fn to_matrix(&self) -> Array2<f64> {
        let size = self.size();
        let n_c = self.n_components;
        Array2::from_shape_fn((size, size), |(a, b)| {
            if a / n_c == b / n_c {
                0.0
            } else {
                self.signed[[a, b]].abs()
            }
        })
    }

    /// The `n_c x n_c` block `G_lm`.
    pub fn block(&self, l: usize, m: usize) -> Array2<f64> {
        let n_c = self.n_components;
        Array2::from_shape_fn((n_c, n_c), |(i, j)| self.get(l, i, m, j))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn of(x: f64) -> Self {
        if x < 0.0 {
            Sign::Negative
        } else {
            Sign::Positive
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Member {
    pub run: usize,
    pub component: usize,
    pub sign: Sign,
}

impl Member {
    pub fn id(&self) -> ComponentId {
        ComponentId {
            run: self.run,
            component: self.component,
        }
    }
}

/// One component aligned across all runs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedComponent {
    members: Vec<Member>,
    anchor_run: usize,
    similarity: Array2<f64>,
    reproducibility: f64,
}

impl MatchedComponent {
    /// `members` must hold exactly one entry per run, in run order.
    pub fn new(
        members: Vec<Member>,
        anchor_run: usize,
        similarity: Array2<f64>,
        reproducibility: f64,
    ) -> Result<Self, ValidationError> {
        let k = members.len();
        if members.iter().enumerate().any(|(r, m)| m.run != r) {
            return Err(ValidationError::InvalidMembers(
                "members must hold one entry per run in run order".into(),
            ));
        }
        if anchor_run >= k || members[anchor_run].sign != Sign::Positive {
            return Err(ValidationError::InvalidMembers(
                "anchor member must exist and carry a positive sign".into(),
            ));
        }
        if similarity.dim() != (k, k) {
            return Err(ValidationError::InvalidMembers(format!(
                "similarity matrix must be {k}x{k}"
            )));
        }
        for a in 0..k {
            if similarity[[a, a]] != 1.0 {
                return Err(ValidationError::InvalidMembers(
                    "similarity diagonal must be 1".into(),
                ));
            }
            for b in 0..k {
                let v = similarity[[a, b]];
                if !(0.0..=1.0).contains(&v) || v != similarity[[b, a]] {
                    return Err(ValidationError::InvalidMembers(format!(
                        "similarity entry ({a}, {b}) = {v} invalid"
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&reproducibility) {
            return Err(ValidationError::InvalidMembers(format!(
                "reproducibility {reproducibility} outside [0, 1]"
            )));
        }
        Ok(Self {
            members,
            anchor_run,
            similarity,
            reproducibility,
        })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn anchor_run(&self) -> usize {
        self.anchor_run
    }

    pub fn anchor(&self) -> Member {
        self.members[self.anchor_run]
    }

    pub fn similarity(&self) -> ArrayView2<'_, f64> {
        self.similarity.view()
    }

    pub fn reproducibility(&self) -> f64 {
        self.reproducibility
    }

    /// `K x n` matrix of member maps multiplied by their alignment signs.
    pub fn aligned_maps(&self, rc: &RunCollection) -> Array2<f64> {
        let k = self.members.len();
        let mut out = Array2::zeros((k, rc.n_locations()));
        for (r, m) in self.members.iter().enumerate() {
            let s = m.sign.as_f64();
            out.row_mut(r).assign(&rc.map(m.id()).mapv(|v| v * s));
        }
        out
    }
}

/// Output of a full reproducibility analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproducibilityReport {
    matched: Vec<MatchedComponent>,
    null_sample: Vec<f64>,
    p_values: Vec<f64>,
    p_crit: f64,
    significant: Vec<bool>,
}

impl ReproducibilityReport {
    pub fn new(
        matched: Vec<MatchedComponent>,
        null_sample: Vec<f64>,
        p_values: Vec<f64>,
        p_crit: f64,
        significant: Vec<bool>,
    ) -> Result<Self, ValidationError> {
        let n_c = matched.len();
        if p_values.len() != n_c || significant.len() != n_c {
            return Err(ValidationError::InvalidReport(
                "p-values and flags must match the matched components".into(),
            ));
        }
        if null_sample.is_empty() || null_sample.len() % n_c.max(1) != 0 {
            return Err(ValidationError::InvalidReport(format!(
                "null sample length {} is not a positive multiple of {n_c}",
                null_sample.len()
            )));
        }
        if !(p_crit > 0.0 && p_crit < 1.0) {
            return Err(ValidationError::InvalidReport(format!(
                "p_crit {p_crit} outside (0, 1)"
            )));
        }
        if matched
            .windows(2)
            .any(|w| w[0].reproducibility() < w[1].reproducibility())
        {
            return Err(ValidationError::InvalidReport(
                "matched components must be sorted by descending reproducibility".into(),
            ));
        }
        if p_values.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(ValidationError::InvalidReport("p-value outside (0, 1]".into()));
        }
        if p_values.windows(2).any(|w| w[0] > w[1]) {
            return Err(ValidationError::InvalidReport(
                "p-values must be non-decreasing in report order".into(),
            ));
        }
        if p_values
            .iter()
            .zip(&significant)
            .any(|(&p, &s)| s != (p < p_crit))
        {
            return Err(ValidationError::InvalidReport(
                "significance flags disagree with p_crit".into(),
            ));
        }
        Ok(Self {
            matched,
            null_sample,
            p_values,
            p_crit,
            significant,
        })
    }

    pub fn matched(&self) -> &[MatchedComponent] {
        &self.matched
    }

    pub fn null_sample(&self) -> &[f64] {
        &self.null_sample
    }

    pub fn p_values(&self) -> &[f64] {
        &self.p_values
    }

    pub fn p_crit(&self) -> f64 {
        self.p_crit
    }

    pub fn significant(&self) -> &[bool] {
        &self.significant
    }

    /// Number of null replicates that produced the pooled sample.
    pub fn replicates(&self) -> usize {
        self.null_sample.len() / self.matched.len()
    }
}

/// A fitted noisy ICA model `y = mu + A s + eta` with source covariance fixed
/// to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    pub mean: Array1<f64>,
    /// `p x q` mixing matrix.
    pub mixing: Array2<f64>,
    /// `q x n` source maps, one component per row.
    pub sources: Array2<f64>,
    pub noise_variance: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl IcaModel {
    pub fn order(&self) -> usize {
        self.mixing.ncols()
    }

    /// Per-location standard deviation of `Y - mu - A S` over the `p` rows.
    pub fn residual_sd(&self, y: ArrayView2<'_, f64>) -> Array1<f64> {
        let fitted = self.mixing.dot(&self.sources);
        let p = y.nrows();
        let mut sd = Array1::zeros(y.ncols());
        for v in 0..y.ncols() {
            let resid: Vec<f64> = (0..p)
                .map(|t| y[[t, v]] - self.mean[t] - fitted[[t, v]])
                .collect();
            sd[v] = stats::sample_sd(&resid);
        }
        sd
    }
}
