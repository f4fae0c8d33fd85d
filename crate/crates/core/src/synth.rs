//! Synthetic data with known structure: independent non-Gaussian sources,
//! noisy linear mixtures of them, and run collections with planted
//! reproducible components.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::RunCollection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid plant specification: {0}")]
    InvalidSpec(String),
}

/// Marginal distribution of generated rows. Rows are standardized to
/// sample mean 0 and sample variance 1 after drawing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceFamily {
    #[default]
    Gaussian,
    /// Double exponential; excess kurtosis 3.
    Laplacian,
    /// Gaussian values at a random 10% of locations, zero elsewhere.
    BernoulliGaussian,
    /// Excess kurtosis -1.2.
    Uniform,
}

impl std::str::FromStr for SourceFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "laplacian" => Ok(Self::Laplacian),
            "bernoulli_gaussian" => Ok(Self::BernoulliGaussian),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!(
                "unknown source family {other:?} (gaussian, laplacian, bernoulli_gaussian, uniform)"
            )),
        }
    }
}

const ACTIVE_FRACTION: f64 = 0.1;

impl SourceFamily {
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            SourceFamily::Gaussian => StandardNormal.sample(rng),
            SourceFamily::Laplacian => {
                let a: f64 = Exp1.sample(rng);
                let b: f64 = Exp1.sample(rng);
                a - b
            }
            SourceFamily::BernoulliGaussian => {
                if rng.random::<f64>() < ACTIVE_FRACTION {
                    StandardNormal.sample(rng)
                } else {
                    0.0
                }
            }
            SourceFamily::Uniform => rng.random_range(-1.0..1.0),
        }
    }

    fn row<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Array1<f64> {
        let mut row = Array1::from_shape_simple_fn(n, || self.draw(rng));
        standardize(&mut row);
        row
    }
}

fn standardize(row: &mut Array1<f64>) {
    let n = row.len();
    if n < 2 {
        return;
    }
    let mean = row.sum() / n as f64;
    row.mapv_inplace(|v| v - mean);
    let sd = (row.dot(row) / (n - 1) as f64).sqrt();
    if sd > 0.0 {
        row.mapv_inplace(|v| v / sd);
    }
}

/// `q x n` matrix of independent rows from `family`.
pub fn gen_sources(q: usize, n: usize, family: SourceFamily, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((q, n));
    for mut r in out.axis_iter_mut(Axis(0)) {
        r.assign(&family.row(n, &mut rng));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    /// `p x n` observations.
    pub data: Array2<f64>,
    /// `p x q` mixing matrix with orthonormal columns.
    pub mixing: Array2<f64>,
    pub mean: Array1<f64>,
}

/// Orthonormalizes columns in place (modified Gram-Schmidt).
fn orthonormalize_columns(a: &mut Array2<f64>) {
    for j in 0..a.ncols() {
        for k in 0..j {
            let proj = a.column(j).dot(&a.column(k));
            let prev = a.column(k).to_owned();
            a.column_mut(j).scaled_add(-proj, &prev);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
}

/// `Y = mu 1^T + A S + sigma E` with `E` standard Gaussian.
pub fn gen_mixture(sources: &Array2<f64>, p: usize, sigma: f64, seed: u64) -> Result<Mixture, SynthError> {
    let q = sources.nrows();
    if p <= q {
        return Err(SynthError::InvalidSpec(format!("need more sensors than sources, got p={p}, q={q}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("noise sd must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mixing = Array2::from_shape_simple_fn((p, q), || StandardNormal.sample(&mut rng));
    orthonormalize_columns(&mut mixing);
    let mean = Array1::from_shape_simple_fn(p, || StandardNormal.sample(&mut rng));
    let mut data = mixing.dot(sources) + &mean.view().insert_axis(Axis(1));
    if sigma > 0.0 {
        data.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + sigma * e
        });
    }
    Ok(Mixture { data, mixing, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub locations: usize,
    pub components: usize,
    pub runs: usize,
    pub planted: usize,
    /// Target absolute correlation of each planted copy with its base map.
    pub overlap: f64,
    pub family: SourceFamily,
    pub seed: u64,
}

impl PlantSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.runs < 2 {
            return bad(format!("need at least 2 runs, got {}", self.runs));
        }
        if self.components == 0 {
            return bad("need at least one component per run".into());
        }
        if self.locations < 2 {
            return bad(format!("need at least 2 locations, got {}", self.locations));
        }
        if self.planted > self.components {
            return bad(format!(
                "planted count {} exceeds components per run {}",
                self.planted, self.components
            ));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return bad(format!("overlap must lie in (0, 1], got {}", self.overlap));
        }
        Ok(())
    }
}

/// Which slots of a generated collection hold planted copies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantTruth {
    /// `slots[run][component]` is `Some(b)` when the slot holds a copy of
    /// planted base map `b`.
    pub slots: Vec<Vec<Option<usize>>>,
}

impl PlantTruth {
    /// Component index holding planted map `b` in each run.
    pub fn planted_positions(&self, b: usize) -> Vec<usize> {
        self.slots
            .iter()
            .map(|run| run.iter().position(|&s| s == Some(b)).expect("every run holds each planted map"))
            .collect()
    }

    pub fn planted_count(&self) -> usize {
        self.slots
            .first()
            .map_or(0, |run| run.iter().filter(|s| s.is_some()).count())
    }
}

/// Builds a run collection where `planted` base maps reappear, perturbed,
/// in every run and the remaining slots hold fresh independent maps.
///
/// A planted copy is `sqrt(rho) * base + sqrt(1 - rho) * fresh` with
/// `rho = overlap^2`, so copies correlate with their base at `overlap` and
/// with each other at `overlap^2` in expectation.
pub fn planted_runset(spec: &PlantSpec) -> Result<(RunCollection, PlantTruth), SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.locations;
    let bases: Vec<Array1<f64>> = (0..spec.planted).map(|_| spec.family.row(n, &mut rng)).collect();
    let rho = spec.overlap * spec.overlap;
    let (keep, mix) = (rho.sqrt(), (1.0 - rho).sqrt());

    let mut runs = Vec::with_capacity(spec.runs);
    let mut slots = Vec::with_capacity(spec.runs);
    for _ in 0..spec.runs {
        let mut maps: Vec<(Option<usize>, Array1<f64>)> = Vec::with_capacity(spec.components);
        for (b, base) in bases.iter().enumerate() {
            let copy = if rho == 1.0 {
                base.clone()
            } else {
                let fresh = spec.family.row(n, &mut rng);
                base * keep + &(fresh * mix)
            };
            maps.push((Some(b), copy));
        }
        for _ in spec.planted..spec.components {
            maps.push((None, spec.family.row(n, &mut rng)));
        }
        maps.shuffle(&mut rng);
        let mut m = Array2::zeros((spec.components, n));
        for (c, (_, map)) in maps.iter().enumerate() {
            m.row_mut(c).assign(map);
        }
        slots.push(maps.iter().map(|(s, _)| *s).collect());
        runs.push(m);
    }
    let rc = RunCollection::from_matrices(runs).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok((rc, PlantTruth { slots }))
}
