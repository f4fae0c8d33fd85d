//! Display of non-Gaussian structure in reproducible components.
//!
//! Matched maps are normalized through their empirical distribution,
//! combined into a one-sample t-statistic map, and the t map is fitted with a
//! three-class mixture: a Student-t background plus shifted Gamma densities
//! for the positive and the negative tail. Locations where a Gamma class
//! owns more than half of the posterior mass are labelled.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::stats::{compensated_sum, median, quantile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixtureError {
    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("input has zero spread")]
    Degenerate,
    #[error("invalid mixture configuration: {0}")]
    InvalidConfig(String),
}

/// Smallest sample a mixture is fitted to.
pub const MIN_FIT_VALUES: usize = 100;

/// Candidate degrees of freedom for the background class.
pub const DOF_GRID: [f64; 6] = [3.0, 5.0, 10.0, 20.0, 30.0, f64::INFINITY];

/// Below this weight a class keeps its parameters fixed.
pub const WEIGHT_FLOOR: f64 = 1e-6;

const MAX_SHAPE: f64 = 1e6;

fn check_finite(values: &[f64]) -> Result<(), MixtureError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MixtureError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Rank-based transform to normality. The value with (average) rank `r` of
/// `m` maps to the standard normal quantile at `(r - 0.5) / m`; tied values
/// share a quantile, so a constant input maps to zeros.
pub fn normalize_empirical(values: &[f64]) -> Result<Vec<f64>, MixtureError> {
    let m = values.len();
    if m < 2 {
        return Err(MixtureError::TooFewValues { needed: 2, got: m });
    }
    check_finite(values)?;
    let normal = Normal::standard();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; m];
    let denom = 2 * m;
    let mut start = 0;
    while start < m {
        let mut end = start;
        while end + 1 < m && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end+1 average to (start+end+2)/2, so
        // (r - 0.5) / m = (start + end + 1) / (2m)
        let num = start + end + 1;
        let z = if 2 * num == denom {
            0.0
        } else if 2 * num > denom {
            normal.inverse_cdf(num as f64 / denom as f64)
        } else {
            -normal.inverse_cdf((denom - num) as f64 / denom as f64)
        };
        for &i in &order[start..=end] {
            out[i] = z;
        }
        start = end + 1;
    }
    Ok(out)
}

/// Applies [`normalize_empirical`] to each map over its locations.
pub fn normalize_maps(maps: ArrayView2<'_, f64>) -> Result<Array2<f64>, MixtureError> {
    let mut out = Array2::zeros(maps.raw_dim());
    for (src, mut dst) in maps.rows().into_iter().zip(out.rows_mut()) {
        let row = normalize_empirical(&src.to_vec())?;
        dst.assign(&Array1::from(row));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TStatMap {
    pub t: Array1<f64>,
    /// Locations where every map has the same value.
    pub degenerate: Vec<bool>,
}

impl TStatMap {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// One-sample t statistic at each location over `K` aligned maps.
pub fn group_tstat(maps: ArrayView2<'_, f64>) -> Result<TStatMap, MixtureError> {
    let k = maps.nrows();
    if k < 2 {
        return Err(MixtureError::TooFewValues { needed: 2, got: k });
    }
    let kf = k as f64;
    let mut t = Array1::zeros(maps.ncols());
    let mut degenerate = vec![false; maps.ncols()];
    for (v, col) in maps.axis_iter(Axis(1)).enumerate() {
        // Equal values can leave a rounding-sized sd behind, so test them directly.
        if col.iter().all(|&x| x == col[0]) {
            degenerate[v] = true;
            continue;
        }
        let mean = col.sum() / kf;
        let ss: f64 = col.iter().map(|x| (x - mean) * (x - mean)).sum();
        let sd = (ss / (kf - 1.0)).sqrt();
        t[v] = mean / (sd / kf.sqrt());
    }
    Ok(TStatMap { t, degenerate })
}

/// Location-scale Student t; `dof = inf` is the Gaussian limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentT {
    pub location: f64,
    pub scale: f64,
    #[serde(with = "dof_serde")]
    pub dof: f64,
}

mod dof_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    // JSON has no infinity; the Gaussian limit is written as null
    pub fn serialize<S: Serializer>(dof: &f64, s: S) -> Result<S::Ok, S::Error> {
        if dof.is_finite() {
            s.serialize_some(dof)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl StudentT {
    /// Log of the normalizing constant.
    fn ln_norm(&self) -> f64 {
        let nu = self.dof;
        if nu.is_infinite() {
            -self.scale.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        } else {
            ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln() - self.scale.ln()
        }
    }

    fn ln_kernel(&self, x: f64) -> f64 {
        let z = (x - self.location) / self.scale;
        if self.dof.is_infinite() {
            -0.5 * z * z
        } else {
            -0.5 * (self.dof + 1.0) * (z * z / self.dof).ln_1p()
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.ln_norm() + self.ln_kernel(x)
    }
}

/// Gamma density on `x > shift`. For the negative class it is evaluated at
/// `-x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedGamma {
    pub shape: f64,
    pub rate: f64,
    pub shift: f64,
}

impl ShiftedGamma {
    fn ln_norm(&self) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape)
    }

    fn ln_kernel(&self, y: f64) -> f64 {
        let d = y - self.shift;
        if d <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * d.ln() - self.rate * d
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        self.ln_norm() + self.ln_kernel(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub max_iters: usize,
    /// Stop once the log-likelihood gain per iteration falls below
    /// `tol * max(1, |loglik|)`.
    pub tol: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self { max_iters: 500, tol: 1e-9 }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.max_iters == 0 {
            return Err(MixtureError::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(MixtureError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    /// Background, positive and negative class weights.
    pub weights: [f64; 3],
    pub t_params: StudentT,
    pub gamma_pos: ShiftedGamma,
    /// Fitted to the negated values.
    pub gamma_neg: ShiftedGamma,
    /// Log-likelihood at the initial parameters and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Null,
    Positive,
    Negative,
}

impl Label {
    /// 0 null, 1 positive, -1 negative.
    pub fn code(self) -> f64 {
        match self {
            Label::Null => 0.0,
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Params {
    w: [f64; 3],
    t: StudentT,
    pos: ShiftedGamma,
    neg: ShiftedGamma,
}

fn log_sum_exp(terms: [f64; 3]) -> f64 {
    let top = terms[0].max(terms[1]).max(terms[2]);
    let live = terms.iter().filter(|&&t| t > f64::NEG_INFINITY).count();
    // most values lie outside both Gamma supports
    if live <= 1 {
        return top;
    }
    let sum: f64 = terms.iter().filter(|&&t| t > f64::NEG_INFINITY).map(|&t| (t - top).exp()).sum();
    top + sum.ln()
}

/// Log weight plus log normalizing constant of each class, hoisted out of
/// per-value loops.
#[derive(Debug, Clone, Copy)]
struct Offsets([f64; 3]);

impl Params {
    fn offsets(&self) -> Offsets {
        let norms = [self.t.ln_norm(), self.pos.ln_norm(), self.neg.ln_norm()];
        Offsets(std::array::from_fn(|c| {
            if self.w[c] > 0.0 {
                self.w[c].ln() + norms[c]
            } else {
                f64::NEG_INFINITY
            }
        }))
    }

    /// Weighted log densities and their log-sum.
    fn joint_with(&self, off: Offsets, x: f64) -> ([f64; 3], f64) {
        let mut terms = off.0;
        if terms[0] > f64::NEG_INFINITY {
            terms[0] += self.t.ln_kernel(x);
        }
        if terms[1] > f64::NEG_INFINITY {
            terms[1] += self.pos.ln_kernel(x);
        }
        if terms[2] > f64::NEG_INFINITY {
            terms[2] += self.neg.ln_kernel(-x);
        }
        (terms, log_sum_exp(terms))
    }

    fn joint(&self, x: f64) -> ([f64; 3], f64) {
        self.joint_with(self.offsets(), x)
    }

    fn loglik(&self, x: &[f64]) -> f64 {
        let off = self.offsets();
        compensated_sum(x.iter().map(|&v| self.joint_with(off, v).1))
    }

    fn responsibilities_with(&self, off: Offsets, x: f64) -> [f64; 3] {
        let (terms, total) = self.joint_with(off, x);
        let mut r = [0.0; 3];
        if total == f64::NEG_INFINITY {
            r[0] = 1.0;
            return r;
        }
        for c in 0..3 {
            r[c] = (terms[c] - total).exp();
        }
        let s = r[0] + r[1] + r[2];
        r.map(|v| v / s)
    }

    fn to_fit(self, loglik_trace: Vec<f64>, converged: bool) -> MixtureFit {
        MixtureFit {
            weights: self.w,
            t_params: self.t,
            gamma_pos: self.pos,
            gamma_neg: self.neg,
            loglik_trace,
            converged,
        }
    }
}

impl MixtureFit {
    fn params(&self) -> Params {
        Params { w: self.weights, t: self.t_params, pos: self.gamma_pos, neg: self.gamma_neg }
    }

    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        self.params().loglik(x)
    }

    /// Mixture density and the three weighted class densities at `x`.
    pub fn densities(&self, x: f64) -> [f64; 4] {
        let (terms, total) = self.params().joint(x);
        [total.exp(), terms[0].exp(), terms[1].exp(), terms[2].exp()]
    }

    /// Number of EM iterations performed.
    pub fn iterations(&self) -> usize {
        self.loglik_trace.len().saturating_sub(1)
    }
}

/// Posterior class probabilities, one row per value, columns in weight order.
pub fn responsibilities(fit: &MixtureFit, x: &[f64]) -> Array2<f64> {
    let p = fit.params();
    let off = p.offsets();
    let mut out = Array2::zeros((x.len(), 3));
    for (i, &v) in x.iter().enumerate() {
        let r = p.responsibilities_with(off, v);
        for c in 0..3 {
            out[[i, c]] = r[c];
        }
    }
    out
}

/// Labels each value by the class holding strictly more than half of its
/// posterior mass; the background wins everything else.
pub fn classify_voxels(fit: &MixtureFit, t_map: &[f64]) -> Vec<Label> {
    let p = fit.params();
    let off = p.offsets();
    t_map
        .iter()
        .map(|&v| {
            let r = p.responsibilities_with(off, v);
            if r[1] > 0.5 {
                Label::Positive
            } else if r[2] > 0.5 {
                Label::Negative
            } else {
                Label::Null
            }
        })
        .collect()
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// Solves `ln k - digamma(k) = s` for `k >= 1`.
fn gamma_shape(s: f64) -> f64 {
    // ln k - digamma(k) decreases in k; at k = 1 it equals euler_gamma
    if !(s > 0.0) {
        return MAX_SHAPE;
    }
    if s >= 0.577_215_664_901_532_9 {
        return 1.0;
    }
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    k = k.clamp(1.0, MAX_SHAPE);
    for _ in 0..50 {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let next = (k - f / df).clamp(1.0, MAX_SHAPE);
        if (next - k).abs() <= 1e-14 * k {
            k = next;
            break;
        }
        k = next;
    }
    k
}

/// Weighted count, mean excess and mean log excess of the values above
/// `shift`.
fn excess_stats(y: &[f64], r: &[f64], shift: f64) -> Option<(f64, f64, f64)> {
    let (mut w, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for (&v, &ri) in y.iter().zip(r) {
        let d = v - shift;
        if ri > 0.0 && d > 0.0 {
            w += ri;
            s1 += ri * d;
            s2 += ri * d.ln();
        }
    }
    (w > 0.0).then(|| (w, s1 / w, s2 / w))
}

/// Weighted maximum-likelihood shape and rate for a fixed shift.
fn gamma_fit(y: &[f64], r: &[f64], shift: f64) -> Option<ShiftedGamma> {
    let (_, mean_d, mean_ln_d) = excess_stats(y, r, shift)?;
    let shape = gamma_shape(mean_d.ln() - mean_ln_d);
    Some(ShiftedGamma { shape, rate: shape / mean_d, shift })
}

/// One EM step for the weighted Student t location and scale at fixed dof.
fn t_m_step(x: &[f64], r: &[f64], old: &StudentT) -> StudentT {
    let nu = old.dof;
    let weight = |v: f64| {
        if nu.is_infinite() {
            1.0
        } else {
            let z = (v - old.location) / old.scale;
            (nu + 1.0) / (nu + z * z)
        }
    };
    let (mut su, mut sux, mut sr) = (0.0, 0.0, 0.0);
    for (&v, &ri) in x.iter().zip(r) {
        let u = ri * weight(v);
        su += u;
        sux += u * v;
        sr += ri;
    }
    if su <= 0.0 || sr <= 0.0 {
        return *old;
    }
    let location = sux / su;
    let ss: f64 = x
        .iter()
        .zip(r)
        .map(|(&v, &ri)| ri * weight(v) * (v - location).powi(2))
        .sum();
    let scale = (ss / sr).sqrt();
    if scale > 0.0 && scale.is_finite() {
        StudentT { location, scale, dof: nu }
    } else {
        *old
    }
}

/// Per-value class log kernels at the current parameters, so that a trial
/// change to one class only recomputes that class.
struct Kernels {
    t: Vec<f64>,
    pos: Vec<f64>,
    neg: Vec<f64>,
}

fn fill_t(out: &mut [f64], t: &StudentT, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = t.ln_kernel(v);
    }
}

fn fill_gamma(out: &mut [f64], g: &ShiftedGamma, y: &[f64]) {
    for (o, &v) in out.iter_mut().zip(y) {
        *o = g.ln_kernel(v);
    }
}

impl Kernels {
    fn new(n: usize) -> Self {
        Self { t: vec![0.0; n], pos: vec![0.0; n], neg: vec![0.0; n] }
    }

    fn refresh(&mut self, p: &Params, x: &[f64], neg_x: &[f64]) {
        fill_t(&mut self.t, &p.t, x);
        fill_gamma(&mut self.pos, &p.pos, x);
        fill_gamma(&mut self.neg, &p.neg, neg_x);
    }

    fn loglik(off: Offsets, t: &[f64], pos: &[f64], neg: &[f64]) -> f64 {
        let o = off.0;
        compensated_sum(
            t.iter()
                .zip(pos)
                .zip(neg)
                .map(|((&a, &b), &c)| log_sum_exp([o[0] + a, o[1] + b, o[2] + c])),
        )
    }
}

/// Working state of one EM run.
struct Em<'a> {
    x: &'a [f64],
    neg_x: &'a [f64],
    p: Params,
    k: Kernels,
    scratch: Vec<f64>,
    search: [ShiftSearch; 2],
    dof_up: bool,
}

impl Em<'_> {
    fn loglik(&self) -> f64 {
        Kernels::loglik(self.p.offsets(), &self.k.t, &self.k.pos, &self.k.neg)
    }

    /// Moves the dof one grid step, alternating up and down between calls,
    /// if that raises the observed log-likelihood.
    fn dof_step(&mut self, ll: f64) -> f64 {
        let at = DOF_GRID.iter().position(|&d| d == self.p.t.dof).unwrap_or(0);
        let mut best = ll;
        self.dof_up = !self.dof_up;
        let cand = if self.dof_up { Some(at + 1) } else { at.checked_sub(1) };
        if let Some(&nu) = cand.and_then(|c| DOF_GRID.get(c)) {
            let trial = Params { t: StudentT { dof: nu, ..self.p.t }, ..self.p };
            fill_t(&mut self.scratch, &trial.t, self.x);
            let trial_ll = Kernels::loglik(trial.offsets(), &self.scratch, &self.k.pos, &self.k.neg);
            if trial_ll > best {
                best = trial_ll;
                self.p = trial;
                std::mem::swap(&mut self.k.t, &mut self.scratch);
            }
        }
        best
    }

    /// Tries moving the shift of Gamma class `cls` (1 or 2) by the current
    /// step in the current direction, refitting shape and rate, and keeps
    /// the move only if the observed log-likelihood rises. The shift stays within the search
    /// floor and the smallest value the class holds with posterior above
    /// one half.
    fn shift_step(&mut self, cls: usize, r: &[f64], ll: f64) -> f64 {
        let y = if cls == 1 { self.x } else { self.neg_x };
        let s = &mut self.search[cls - 1];
        let cur = if cls == 1 { self.p.pos } else { self.p.neg };
        let ceiling = y
            .iter()
            .zip(r)
            .filter(|(_, &ri)| ri > 0.5)
            .map(|(&v, _)| v)
            .fold(f64::INFINITY, f64::min);
        let ceiling = if ceiling.is_finite() { ceiling } else { y.iter().copied().fold(f64::NEG_INFINITY, f64::max) };
        let dir = s.dir;
        let c = (cur.shift + dir * s.step).min(ceiling).max(s.floor);
        if let Some(g) = (c != cur.shift).then(|| gamma_fit(y, r, c)).flatten() {
            let mut trial = self.p;
            fill_gamma(&mut self.scratch, &g, y);
            let trial_ll = if cls == 1 {
                trial.pos = g;
                Kernels::loglik(trial.offsets(), &self.k.t, &self.scratch, &self.k.neg)
            } else {
                trial.neg = g;
                Kernels::loglik(trial.offsets(), &self.k.t, &self.k.pos, &self.scratch)
            };
            if trial_ll > ll {
                self.p = trial;
                let slot = if cls == 1 { &mut self.k.pos } else { &mut self.k.neg };
                std::mem::swap(slot, &mut self.scratch);
                s.step *= 2.0;
                return trial_ll;
            }
        }
        // reverse, and shrink after a failure in both directions
        if s.dir < 0.0 {
            s.step = (s.step * 0.5).max(s.min_step);
        }
        s.dir = -s.dir;
        ll
    }

    fn run(mut self, cfg: &MixtureConfig) -> (Params, Vec<f64>, bool) {
        let (x, neg_x) = (self.x, self.neg_x);
        let n = x.len();
        self.k.refresh(&self.p, x, neg_x);
        let mut ll = self.loglik();
        let mut trace = vec![ll];
        let mut cols = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for _ in 0..cfg.max_iters {
            let o = self.p.offsets().0;
            for i in 0..n {
                let terms = [o[0] + self.k.t[i], o[1] + self.k.pos[i], o[2] + self.k.neg[i]];
                let total = log_sum_exp(terms);
                let r = terms.map(|t| if t == f64::NEG_INFINITY { 0.0 } else { (t - total).exp() });
                let sum = r[0] + r[1] + r[2];
                for c in 0..3 {
                    cols[c][i] = r[c] / sum;
                }
            }
            let prev = self.p;
            let p = &mut self.p;
            for c in 0..3 {
                p.w[c] = compensated_sum(cols[c].iter().copied()) / n as f64;
            }
            if prev.w[0] >= WEIGHT_FLOOR {
                p.t = t_m_step(x, &cols[0], &prev.t);
            }
            if prev.w[1] >= WEIGHT_FLOOR {
                p.pos = gamma_fit(x, &cols[1], prev.pos.shift).unwrap_or(prev.pos);
            }
            if prev.w[2] >= WEIGHT_FLOOR {
                p.neg = gamma_fit(neg_x, &cols[2], prev.neg.shift).unwrap_or(prev.neg);
            }
            self.k.refresh(&self.p, x, neg_x);
            let mut next = self.loglik();
            if next < ll {
                // rounding in the closed-form updates; keep the previous iterate
                self.p = prev;
                self.k.refresh(&self.p, x, neg_x);
                next = ll;
            }
            if self.p.w[0] >= WEIGHT_FLOOR {
                next = self.dof_step(next);
            }
            if self.p.w[1] >= WEIGHT_FLOOR {
                next = self.shift_step(1, &cols[1], next);
            }
            if self.p.w[2] >= WEIGHT_FLOOR {
                next = self.shift_step(2, &cols[2], next);
            }
            trace.push(next);
            let gain = next - ll;
            ll = next;
            if gain <= cfg.tol * ll.abs().max(1.0) {
                return (self.p, trace, true);
            }
        }
        (self.p, trace, false)
    }
}

/// Adaptive search state for one Gamma shift.
#[derive(Debug, Clone, Copy)]
struct ShiftSearch {
    /// Shifts never go below this value.
    floor: f64,
    step: f64,
    min_step: f64,
    dir: f64,
}

fn initial_gamma(y: &[f64]) -> Option<ShiftedGamma> {
    let shift = quantile(y, 0.75);
    let r = vec![1.0; y.len()];
    gamma_fit(y, &r, shift)
}

fn initial_params(x: &[f64]) -> Result<Params, MixtureError> {
    let loc = median(x);
    let abs_dev: Vec<f64> = x.iter().map(|v| (v - loc).abs()).collect();
    let mut scale = median(&abs_dev) * 1.482_6;
    if !(scale > 0.0) {
        scale = crate::stats::sample_sd(x);
    }
    if !(scale > 0.0) {
        return Err(MixtureError::Degenerate);
    }
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let mut w = [0.9, 0.05, 0.05];
    let placeholder = ShiftedGamma { shape: 1.0, rate: 1.0, shift: 0.0 };
    let pos = initial_gamma(x).unwrap_or_else(|| {
        w[1] = 0.0;
        placeholder
    });
    let neg = initial_gamma(&neg_x).unwrap_or_else(|| {
        w[2] = 0.0;
        placeholder
    });
    let total = w.iter().sum::<f64>();
    let w = w.map(|v| v / total);
    let mut p = Params { w, t: StudentT { location: loc, scale, dof: DOF_GRID[0] }, pos, neg };
    // full grid search once; later iterations move one grid step at a time
    let mut best = (f64::NEG_INFINITY, DOF_GRID[0]);
    for &nu in DOF_GRID.iter() {
        p.t.dof = nu;
        let ll = p.loglik(x);
        if ll > best.0 {
            best = (ll, nu);
        }
    }
    p.t.dof = best.1;
    Ok(p)
}

/// Fits the background/positive/negative mixture.
///
/// Each iteration is an EM step for the weights, the background location
/// and scale, and the Gamma shapes and rates at fixed shifts, followed by
/// conditional maximization steps on the observed log-likelihood for the
/// dof (over [`DOF_GRID`]) and the Gamma shifts. A step is kept only if it
/// does not lower the likelihood, so every recorded trace is non-decreasing
/// up to rounding. Each Gamma shift starts at the upper quartile of its
/// side of the data, never moves below that start, and never exceeds the
/// smallest value its class claims.
///
/// A Gamma class fitted to data without a real tail only chases sampling
/// noise, so after the full fit each Gamma class is refitted away and
/// dropped (weight exactly zero) when it raises the log-likelihood by less
/// than the BIC penalty `2 ln n` for its four parameters. The returned trace
/// belongs to the run that produced the returned parameters. Hitting
/// `max_iters` sets `converged == false`.
pub fn fit_mixture(t_map: &[f64], cfg: &MixtureConfig) -> Result<MixtureFit, MixtureError> {
    cfg.validate()?;
    if t_map.len() < MIN_FIT_VALUES {
        return Err(MixtureError::TooFewValues { needed: MIN_FIT_VALUES, got: t_map.len() });
    }
    check_finite(t_map)?;
    let x = t_map;
    let neg_x: Vec<f64> = x.iter().map(|v| -v).collect();
    let init = initial_params(x)?;
    let search = [init.pos.shift, init.neg.shift].map(|floor| ShiftSearch {
        floor,
        step: 0.1 * init.t.scale,
        min_step: 1e-6 * init.t.scale,
        dir: 1.0,
    });
    let run = |p: Params| {
        Em { x, neg_x: &neg_x, p, k: Kernels::new(x.len()), scratch: vec![0.0; x.len()], search, dof_up: false }.run(cfg)
    };
    let mut best = run(init);
    let penalty = 2.0 * (x.len() as f64).ln();
    let mut order = [1, 2];
    order.sort_by(|&a, &b| best.0.w[a].total_cmp(&best.0.w[b]));
    for c in order {
        if best.0.w[c] == 0.0 {
            continue;
        }
        let mut start = best.0;
        start.w[0] += start.w[c];
        start.w[c] = 0.0;
        let reduced = run(start);
        let full_ll = *best.1.last().expect("trace starts non-empty");
        if full_ll - reduced.1.last().expect("trace starts non-empty") < penalty {
            best = reduced;
        }
    }
    let (p, trace, converged) = best;
    Ok(p.to_fit(trace, converged))
}

/// Histogram of `t_map` with expected counts under the fit, one row per bin:
/// left edge, right edge, observed count, then expected counts for the whole
/// mixture and for the background, positive and negative classes, each
/// evaluated at the bin center.
pub fn histogram(fit: &MixtureFit, t_map: &[f64], bins: usize) -> Array2<f64> {
    let bins = bins.max(1);
    let lo = t_map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t_map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 0.5, lo.max(0.0) + 0.5) };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in t_map {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = t_map.len() as f64;
    let mut out = Array2::zeros((bins, 7));
    for b in 0..bins {
        let left = lo + b as f64 * width;
        let right = if b + 1 == bins { hi } else { left + width };
        let d = fit.densities(0.5 * (left + right));
        let row = [left, right, counts[b] as f64, n * width * d[0], n * width * d[1], n * width * d[2], n * width * d[3]];
        out.row_mut(b).assign(&ArrayView1::from(&row));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, StudentT as TDist};

    #[test]
    fn two_values_map_to_quartiles() {
        let z = normalize_empirical(&[3.0, -1.0]).unwrap();
        assert!((z[1] + 0.674_489_750_196_081_7).abs() < 1e-9);
        assert_eq!(z[0], -z[1]);
    }

    #[test]
    fn constant_input_maps_to_zeros() {
        assert_eq!(normalize_empirical(&[2.0; 5]).unwrap(), vec![0.0; 5]);
        assert!(normalize_empirical(&[1.0]).is_err());
    }

    #[test]
    fn ties_share_average_rank() {
        let z = normalize_empirical(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(z[1], z[2]);
        assert_eq!(z[1], 0.0);
        assert!(z[0] < z[1] && z[2] < z[3]);
    }

    #[test]
    fn tstat_examples() {
        let maps = ndarray::array![[1.0, 1.0, 5.0], [2.0, -1.0, 5.0], [3.0, 1.0, 5.0], [4.0, -1.0, 5.0]];
        let t = group_tstat(maps.view()).unwrap();
        assert!((t.t[0] - 3.872_983_346_207_417).abs() < 1e-12);
        assert_eq!(t.t[1], 0.0);
        assert_eq!(t.t[2], 0.0);
        assert_eq!(t.degenerate, vec![false, false, true]);
        assert!(group_tstat(maps.slice(ndarray::s![..1, ..])).is_err());
    }

    #[test]
    fn shape_solver_inverts() {
        for &k in &[1.0f64, 1.5, 4.0, 30.0, 500.0] {
            let s = k.ln() - digamma(k);
            assert!((gamma_shape(s) - k).abs() < 1e-8 * k, "{k}");
        }
        assert_eq!(gamma_shape(1.0), 1.0);
    }

    #[test]
    fn trigamma_values() {
        let pi2 = std::f64::consts::PI.powi(2);
        assert!((trigamma(1.0) - pi2 / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - pi2 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn t_density_normalizes() {
        let t = StudentT { location: 0.5, scale: 2.0, dof: 5.0 };
        let h = 0.01;
        let total: f64 = (-20_000..20_000).map(|i| t.ln_pdf(i as f64 * h).exp() * h).sum();
        assert!((total - 1.0).abs() < 1e-3);
        let g = StudentT { dof: f64::INFINITY, ..t };
        assert!((g.ln_pdf(0.5) + 2.0f64.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn gamma_support() {
        let g = ShiftedGamma { shape: 2.0, rate: 1.0, shift: 1.0 };
        assert_eq!(g.ln_pdf(1.0), f64::NEG_INFINITY);
        assert!((g.ln_pdf(2.0) - (-1.0)).abs() < 1e-14);
    }

    fn sample(n: usize, planted: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = TDist::new(20.0).unwrap();
        let g = Gamma::new(4.0, 1.0).unwrap();
        (0..n)
            .map(|i| {
                if (i as f64) < planted * n as f64 {
                    2.0 + g.sample(&mut rng)
                } else {
                    t.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn small_samples_rejected() {
        assert!(matches!(
            fit_mixture(&[0.0; 99], &MixtureConfig::default()),
            Err(MixtureError::TooFewValues { .. })
        ));
        assert_eq!(fit_mixture(&[1.0; 200], &MixtureConfig::default()), Err(MixtureError::Degenerate));
    }

    #[test]
    fn planted_tail_and_classification() {
        let x = sample(20_000, 0.1, 3);
        let fit = fit_mixture(&x, &MixtureConfig::default()).unwrap();
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((fit.weights[1] - 0.1).abs() < 0.03, "{:?}", fit.weights);
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        let labels = classify_voxels(&fit, &[12.0, fit.t_params.location]);
        assert_eq!(labels, vec![Label::Positive, Label::Null]);
        let r = responsibilities(&fit, &x[..50]);
        for row in r.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn histogram_counts_everything() {
        let x = sample(5_000, 0.1, 4);
        let fit = fit_mixture(&x, &MixtureConfig::default()).unwrap();
        let h = histogram(&fit, &x, 40);
        assert_eq!(h.column(2).sum(), 5_000.0);
        let expected = h.column(3).sum();
        assert!((expected - 5_000.0).abs() < 250.0, "{expected}");
    }

    #[test]
    fn fit_serializes_infinite_dof() {
        let x = sample(2_000, 0.0, 5);
        let mut fit = fit_mixture(&x, &MixtureConfig::default()).unwrap();
        fit.t_params.dof = f64::INFINITY;
        let json = serde_json::to_string(&fit).unwrap();
        let back: MixtureFit = serde_json::from_str(&json).unwrap();
        assert_eq!(back, fit);
    }
}
