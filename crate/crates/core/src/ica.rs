//! Noisy ICA estimation.
//!
//! Data `Y` is `p x n`: `p` observations (e.g. time points) of `n` locations.
//! Each location is one realization of `y = mu + A s + eta` with isotropic
//! Gaussian noise. Estimation proceeds as
//!
//! 1. centering (`mu` = row means),
//! 2. PCA to the `q` leading eigenvectors of the sample covariance, with the
//!    noise variance taken as the mean of the discarded eigenvalues,
//! 3. whitening, then a symmetric fixed-point search for the rotation that
//!    maximizes non-Gaussianity of the `q` source rows.
//!
//! The mixing matrix returned is `basis * diag(sqrt(eigvals)) * O^T`, so the
//! least-squares source estimate under it reproduces the rotated whitened
//! data exactly.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg::{spd_solve, symmetric_decorrelation, symmetric_eigen};
use crate::types::IcaModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IcaError {
    #[error("need at least 2 locations, got {0}")]
    DegenerateData(usize),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero residual variance at locations {0:?}")]
    ZeroVariance(Vec<usize>),
}

/// Contrast nonlinearity for the fixed-point update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    /// `g(u) = tanh(u)`, robust default.
    #[default]
    Tanh,
    /// `g(u) = u^3`, kurtosis-based.
    Cubic,
}

impl Nonlinearity {
    fn apply(self, u: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Tanh => {
                let t = u.tanh();
                (t, 1.0 - t * t)
            }
            Nonlinearity::Cubic => (u * u * u, 3.0 * u * u),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Nonlinearity::Tanh),
            "cubic" => Ok(Nonlinearity::Cubic),
            other => Err(format!("unknown nonlinearity {other:?} (expected tanh or cubic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaConfig {
    pub order: usize,
    pub nonlinearity: Nonlinearity,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl IcaConfig {
    pub const DEFAULT_MAX_ITERS: usize = 500;
    pub const DEFAULT_TOL: f64 = 1e-6;

    pub fn new(order: usize, seed: u64) -> Self {
        Self {
            order,
            nonlinearity: Nonlinearity::default(),
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
            seed,
        }
    }

    pub fn nonlinearity(mut self, g: Nonlinearity) -> Self {
        self.nonlinearity = g;
        self
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Seed for the `index`-th of several concurrent fits.
    pub fn for_run(mut self, index: u64) -> Self {
        self.seed = self.seed.wrapping_add(index);
        self
    }

    fn validate(&self, p: usize, n: usize) -> Result<(), IcaError> {
        if self.order == 0 || self.order >= p.min(n) {
            return Err(IcaError::InvalidConfig(format!(
                "model order {} must satisfy 1 <= q < min(p={p}, n={n})",
                self.order
            )));
        }
        if !(self.tol > 0.0) {
            return Err(IcaError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(IcaError::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Row means and the row-centered matrix.
pub fn center(y: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>), IcaError> {
    if y.ncols() < 2 {
        return Err(IcaError::DegenerateData(y.ncols()));
    }
    let mu = y.mean_axis(Axis(1)).expect("non-empty");
    let yc = &y - &mu.view().insert_axis(Axis(1));
    Ok((mu, yc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReduction {
    /// `p x q` leading eigenvectors.
    pub basis: Array2<f64>,
    /// All `p` eigenvalues, descending, clamped at zero.
    pub eigenvalues: Array1<f64>,
    /// Mean of the `p - q` trailing eigenvalues.
    pub noise_variance: f64,
    /// `q x p`, maps centered data to unit-covariance coordinates.
    pub whitener: Array2<f64>,
}

impl PcaReduction {
    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    pub fn whiten(&self, yc: &Array2<f64>) -> Array2<f64> {
        self.whitener.dot(yc)
    }
}

/// Sample covariance `Yc Yc^T / (n - 1)`.
pub fn sample_covariance(yc: &Array2<f64>) -> Array2<f64> {
    yc.dot(&yc.t()) / (yc.ncols() - 1) as f64
}

pub fn pca_reduce(yc: &Array2<f64>, order: usize) -> Result<PcaReduction, IcaError> {
    let (p, n) = yc.dim();
    if n < 2 {
        return Err(IcaError::DegenerateData(n));
    }
    if order == 0 || order >= p {
        return Err(IcaError::InvalidConfig(format!(
            "model order {order} must satisfy 1 <= q < p={p}"
        )));
    }
    let (values, vectors) = symmetric_eigen(&sample_covariance(yc));
    let eigenvalues = values.mapv(|v| v.max(0.0));
    let top = eigenvalues[0];
    let weakest = eigenvalues[order - 1];
    if !(weakest > top * 1e-12) || weakest <= 0.0 {
        return Err(IcaError::RankDeficient(format!(
            "only {} positive eigenvalues for model order {order}",
            eigenvalues.iter().filter(|&&v| v > top * 1e-12).count()
        )));
    }
    let basis = vectors.slice(s![.., ..order]).to_owned();
    let noise_variance = eigenvalues.slice(s![order..]).mean().unwrap_or(0.0);
    let inv_sqrt = eigenvalues.slice(s![..order]).mapv(|v| 1.0 / v.sqrt());
    let whitener = &basis.t() * &inv_sqrt.insert_axis(Axis(1));
    Ok(PcaReduction {
        basis,
        eigenvalues,
        noise_variance,
        whitener,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastIcaOutput {
    /// `q x q` orthogonal rotation.
    pub rotation: Array2<f64>,
    /// `q x n` sources, `rotation * whitened`.
    pub sources: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Symmetric fixed-point ICA on whitened data.
///
/// Non-convergence is reported through the `converged` flag; the last
/// iterate is still returned.
pub fn fastica(yw: &Array2<f64>, cfg: &IcaConfig) -> Result<FastIcaOutput, IcaError> {
    let (q, n) = yw.dim();
    if q == 0 || n < 2 {
        return Err(IcaError::DegenerateData(n));
    }
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 {
        return Err(IcaError::InvalidConfig("tol and max_iters must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Array2::from_shape_simple_fn((q, q), || StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let mut converged = false;
    let mut iterations = 0;
    let inv_n = 1.0 / n as f64;

    while iterations < cfg.max_iters {
        iterations += 1;
        let wx = w.dot(yw);
        let mut g = Array2::zeros((q, n));
        let mut mean_dg = Array1::zeros(q);
        for ((i, v), &u) in wx.indexed_iter() {
            let (gv, dg) = cfg.nonlinearity.apply(u);
            g[[i, v]] = gv;
            mean_dg[i] += dg;
        }
        mean_dg *= inv_n;
        let update = g.dot(&yw.t()) * inv_n - &w * &mean_dg.insert_axis(Axis(1));
        let w_new = symmetric_decorrelation(&update);
        let agreement = (&w_new * &w)
            .sum_axis(Axis(1))
            .iter()
            .map(|d| d.abs())
            .fold(f64::INFINITY, f64::min);
        w = w_new;
        if 1.0 - agreement < cfg.tol {
            converged = true;
            break;
        }
    }
    let sources = w.dot(yw);
    Ok(FastIcaOutput {
        rotation: w,
        sources,
        converged,
        iterations,
    })
}

/// Least-squares source estimate `(A^T A)^{-1} A^T (Y - mu 1^T)`.
pub fn estimate_sources(
    y: ArrayView2<'_, f64>,
    mu: &Array1<f64>,
    mixing: &Array2<f64>,
) -> Result<Array2<f64>, IcaError> {
    let (p, q) = mixing.dim();
    if y.nrows() != p || mu.len() != p {
        return Err(IcaError::ShapeMismatch(format!(
            "data has {} rows, mean {} entries, mixing {p} rows",
            y.nrows(),
            mu.len()
        )));
    }
    let gram = mixing.t().dot(mixing);
    let (vals, _) = symmetric_eigen(&gram);
    if !(vals[q - 1] > vals[0] * 1e-12) {
        return Err(IcaError::RankDeficient("mixing matrix lacks full column rank".into()));
    }
    let yc = &y - &mu.view().insert_axis(Axis(1));
    let rhs = mixing.t().dot(&yc);
    spd_solve(&gram, &rhs).ok_or_else(|| IcaError::RankDeficient("A^T A is not positive definite".into()))
}

/// Divides each location (column) by its residual noise standard deviation.
pub fn z_scale(sources: &Array2<f64>, residual_sd: &Array1<f64>) -> Result<Array2<f64>, IcaError> {
    if residual_sd.len() != sources.ncols() {
        return Err(IcaError::ShapeMismatch(format!(
            "{} noise estimates for {} locations",
            residual_sd.len(),
            sources.ncols()
        )));
    }
    let bad: Vec<usize> = residual_sd
        .iter()
        .enumerate()
        .filter(|(_, &sd)| !(sd > 0.0 && sd.is_finite()))
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(IcaError::ZeroVariance(bad));
    }
    Ok(sources / &residual_sd.view().insert_axis(Axis(0)))
}

fn fit_centered(mu: Array1<f64>, yc: &Array2<f64>, cfg: &IcaConfig) -> Result<IcaModel, IcaError> {
    let (p, n) = yc.dim();
    cfg.validate(p, n)?;
    let pca = pca_reduce(yc, cfg.order)?;
    let yw = pca.whiten(yc);
    let ica = fastica(&yw, cfg)?;
    let scale = pca.eigenvalues.slice(s![..cfg.order]).mapv(f64::sqrt);
    let mixing = (&pca.basis * &scale.insert_axis(Axis(0))).dot(&ica.rotation.t());
    Ok(IcaModel {
        mean: mu,
        mixing,
        sources: ica.sources,
        noise_variance: pca.noise_variance,
        converged: ica.converged,
        iterations: ica.iterations,
    })
}

/// Single-dataset decomposition; rows of the returned sources are the ICs.
pub fn run_single_ica(y: ArrayView2<'_, f64>, cfg: &IcaConfig) -> Result<IcaModel, IcaError> {
    let (mu, yc) = center(y)?;
    fit_centered(mu, &yc, cfg)
}

/// Temporal-concatenation group decomposition: datasets are stacked
/// row-wise and the stack is decomposed once. Centering each row is the
/// same as centering every dataset on its own, so the model mean is the
/// stack of per-dataset means.
pub fn run_group_ica(datasets: &[Array2<f64>], cfg: &IcaConfig) -> Result<IcaModel, IcaError> {
    group_fit(datasets, None, cfg)
}

/// Like [`run_group_ica`], but each dataset is first reduced to its
/// `subject_dim` leading principal components (projections, not whitened).
/// The model then lives in the stacked reduced space with a zero mean.
pub fn run_group_ica_reduced(
    datasets: &[Array2<f64>],
    subject_dim: usize,
    cfg: &IcaConfig,
) -> Result<IcaModel, IcaError> {
    group_fit(datasets, Some(subject_dim), cfg)
}

/// The matrix a group decomposition is fitted to: datasets stacked
/// row-wise, each replaced by its `subject_dim` leading principal-component
/// projections when a reduction is requested.
pub fn stack_group(datasets: &[Array2<f64>], subject_dim: Option<usize>) -> Result<Array2<f64>, IcaError> {
    let Some(first) = datasets.first() else {
        return Err(IcaError::ShapeMismatch("no datasets given".into()));
    };
    let n = first.ncols();
    if let Some((i, d)) = datasets.iter().enumerate().find(|(_, d)| d.ncols() != n) {
        return Err(IcaError::ShapeMismatch(format!(
            "dataset {} has {} locations, dataset 1 has {n}",
            i + 1,
            d.ncols()
        )));
    }
    let mut blocks = Vec::with_capacity(datasets.len());
    for d in datasets {
        match subject_dim {
            None => blocks.push(d.clone()),
            Some(r) => {
                let (_, yc) = center(d.view())?;
                let pca = pca_reduce(&yc, r)?;
                blocks.push(pca.basis.t().dot(&yc));
            }
        }
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(ndarray::concatenate(Axis(0), &views).expect("equal column counts checked"))
}

fn group_fit(datasets: &[Array2<f64>], subject_dim: Option<usize>, cfg: &IcaConfig) -> Result<IcaModel, IcaError> {
    let stacked = stack_group(datasets, subject_dim)?;
    match subject_dim {
        // row centering of the stack is per-dataset centering
        None => run_single_ica(stacked.view(), cfg),
        // projections of centered data are already centered
        Some(_) => fit_centered(Array1::zeros(stacked.nrows()), &stacked, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn centering_example() {
        let y = array![[1.0, 3.0], [2.0, 2.0]];
        let (mu, yc) = center(y.view()).unwrap();
        assert_eq!(mu, array![2.0, 2.0]);
        assert_eq!(yc, array![[-1.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn centering_needs_two_locations() {
        assert_eq!(
            center(array![[1.0], [2.0]].view()),
            Err(IcaError::DegenerateData(1))
        );
    }

    #[test]
    fn centering_is_idempotent() {
        let y = array![[1.0, -1.0, 2.0, -2.0], [0.5, 0.5, -0.5, -0.5]];
        let (mu, yc) = center(y.view()).unwrap();
        assert!(mu.iter().all(|m| m.abs() < 1e-15));
        assert_eq!(yc, y);
    }

    #[test]
    fn noiseless_subspace_has_zero_noise_variance() {
        // 3 rows spanned by 2 directions
        let s = array![[1.0, -2.0, 0.5, 3.0, -1.0, 0.0], [0.2, 1.0, -1.5, 0.3, 0.7, -0.9]];
        let a = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (_, yc) = center(a.dot(&s).view()).unwrap();
        let pca = pca_reduce(&yc, 2).unwrap();
        assert!(pca.noise_variance < 1e-12);
    }

    #[test]
    fn order_p_minus_one_uses_smallest_eigenvalue() {
        let y = array![[1.0, -2.0, 0.5, 3.0, -1.0], [0.2, 1.0, -1.5, 0.3, 0.7], [0.4, 0.1, 0.2, -0.8, 1.1]];
        let (_, yc) = center(y.view()).unwrap();
        let pca = pca_reduce(&yc, 2).unwrap();
        assert_eq!(pca.noise_variance, pca.eigenvalues[2]);
    }

    #[test]
    fn rank_deficient_covariance_rejected() {
        let y = array![[1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0], [3.0, 6.0, 9.0, 12.0]];
        let (_, yc) = center(y.view()).unwrap();
        assert!(matches!(pca_reduce(&yc, 2), Err(IcaError::RankDeficient(_))));
    }

    #[test]
    fn one_dimensional_rotation_is_a_sign() {
        let yw = array![[1.0, -1.0, 0.5, -0.5, 2.0, -2.0]];
        let out = fastica(&yw, &IcaConfig::new(1, 3)).unwrap();
        assert_eq!(out.rotation.dim(), (1, 1));
        assert!((out.rotation[[0, 0]].abs() - 1.0).abs() < 1e-12);
        let s = out.rotation[[0, 0]].signum();
        for (a, b) in out.sources.iter().zip(yw.iter()) {
            assert!((a - s * b).abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_mixing_reduces_to_transpose() {
        let a = array![[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]];
        let mu = array![1.0, -1.0, 0.5];
        let y = array![[2.0, 0.0, 1.0], [1.0, 3.0, -2.0], [0.0, 1.0, 4.0]];
        let got = estimate_sources(y.view(), &mu, &a).unwrap();
        let want = a.t().dot(&(&y - &mu.view().insert_axis(Axis(1))));
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_mixing_rejected() {
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let y = Array2::zeros((3, 4));
        assert!(matches!(
            estimate_sources(y.view(), &Array1::zeros(3), &a),
            Err(IcaError::RankDeficient(_))
        ));
    }

    #[test]
    fn z_scaling() {
        let s = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(z_scale(&s, &Array1::ones(3)).unwrap(), s);
        let halved = z_scale(&s, &array![1.0, 2.0, 1.0]).unwrap();
        assert_eq!(halved.column(1).to_vec(), vec![1.0, 2.5]);
        assert_eq!(z_scale(&s, &array![1.0, 0.0, 1.0]), Err(IcaError::ZeroVariance(vec![1])));
    }

    #[test]
    fn invalid_order_rejected() {
        let y = Array2::from_shape_fn((4, 10), |(i, j)| ((i * 7 + j * 3) % 5) as f64);
        assert!(matches!(
            run_single_ica(y.view(), &IcaConfig::new(0, 1)),
            Err(IcaError::InvalidConfig(_))
        ));
        assert!(matches!(
            run_single_ica(y.view(), &IcaConfig::new(4, 1)),
            Err(IcaError::InvalidConfig(_))
        ));
    }

    #[test]
    fn group_requires_common_location_count() {
        let a = Array2::zeros((3, 10));
        let b = Array2::zeros((3, 9));
        assert!(matches!(
            run_group_ica(&[a, b], &IcaConfig::new(1, 1)),
            Err(IcaError::ShapeMismatch(_))
        ));
    }
}
