#![allow(dead_code)]

use ndarray::{Array2, ArrayView1};
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use raicarn::RunCollection;

/// Textbook two-pass Pearson correlation, kept separate from the library.
pub fn corr(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Per-source |corr| under the permutation of estimated rows that
/// maximizes the worst source. Signs drop out through the absolute value.
pub fn aligned_abs_corr(estimate: &Array2<f64>, truth: &Array2<f64>) -> Vec<f64> {
    let q = truth.nrows();
    assert_eq!(estimate.nrows(), q);
    let c = Array2::from_shape_fn((q, q), |(i, j)| corr(truth.row(i), estimate.row(j)).abs());
    permutations(q)
        .into_iter()
        .map(|p| (0..q).map(|i| c[[i, p[i]]]).collect::<Vec<_>>())
        .max_by(|a, b| {
            let wa = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let wb = b.iter().cloned().fold(f64::INFINITY, f64::min);
            wa.total_cmp(&wb)
        })
        .unwrap()
}

pub fn min(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Mean pairwise |corr| of the given maps.
pub fn reproducibility_of(rc: &RunCollection, members: &[(usize, usize)]) -> f64 {
    let k = members.len();
    let mut sum = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            let (ra, ca) = members[a];
            let (rb, cb) = members[b];
            sum += corr(rc.run(ra).row(ca), rc.run(rb).row(cb)).abs();
        }
    }
    sum * 2.0 / (k * (k - 1)) as f64
}

/// Best achievable sum of reproducibility over every assignment of run
/// components to run 0's components.
pub fn exhaustive_optimum(rc: &RunCollection) -> f64 {
    let k = rc.n_runs();
    let n_c = rc.n_components();
    let perms = permutations(n_c);
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; k - 1];
    loop {
        let total: f64 = (0..n_c)
            .map(|i| {
                let mut members = vec![(0, i)];
                for (r, &pi) in choice.iter().enumerate() {
                    members.push((r + 1, perms[pi][i]));
                }
                reproducibility_of(rc, &members)
            })
            .sum();
        best = best.max(total);
        let mut r = 0;
        loop {
            if r == choice.len() {
                return best;
            }
            choice[r] += 1;
            if choice[r] < perms.len() {
                break;
            }
            choice[r] = 0;
            r += 1;
        }
    }
}

pub fn binomial(n: u64, k: u64) -> BigUint {
    let mut num = BigUint::from(1u32);
    let mut den = BigUint::from(1u32);
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

/// `C(N-2, L-2) / C(N, L)` reduced to a float through exact integers.
pub fn pair_probability_exact(n: u64, l: u64) -> f64 {
    let num = binomial(n - 2, l - 2);
    let den = binomial(n, l);
    let g = gcd(num.clone(), den.clone());
    let (a, b) = (num / &g, den / &g);
    a.to_string().parse::<f64>().unwrap() / b.to_string().parse::<f64>().unwrap()
}

fn gcd(mut a: BigUint, mut b: BigUint) -> BigUint {
    while b != BigUint::from(0u32) {
        let r = &a % &b;
        a = b;
        b = r;
    }
    a
}

pub fn noise_collection(k: usize, n_c: usize, n: usize, seed: u64) -> RunCollection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs = (0..k)
        .map(|_| Array2::from_shape_simple_fn((n_c, n), || StandardNormal.sample(&mut rng)))
        .collect();
    RunCollection::from_matrices(runs).unwrap()
}
