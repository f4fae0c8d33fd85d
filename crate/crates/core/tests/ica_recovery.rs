mod common;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use raicarn::ica::{
    center, estimate_sources, fastica, pca_reduce, run_group_ica, run_single_ica, IcaConfig,
};
use raicarn::synth::{gen_mixture, gen_sources, SourceFamily};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Covariance with `1/(n-1)`, computed row pair by row pair.
fn covariance(x: &Array2<f64>) -> Array2<f64> {
    let n = x.ncols() as f64;
    let means: Vec<f64> = x.rows().into_iter().map(|r| r.sum() / n).collect();
    Array2::from_shape_fn((x.nrows(), x.nrows()), |(i, j)| {
        x.row(i)
            .iter()
            .zip(x.row(j).iter())
            .map(|(a, b)| (a - means[i]) * (b - means[j]))
            .sum::<f64>()
            / (n - 1.0)
    })
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn whitened_data_has_identity_covariance() {
    let s = gen_sources(3, 2000, SourceFamily::Laplacian, 1);
    let mix = gen_mixture(&s, 8, 0.1, 2).unwrap();
    let (_, yc) = center(mix.data.view()).unwrap();
    let red = pca_reduce(&yc, 3).unwrap();
    let cov = covariance(&red.whiten(&yc));
    assert!(max_abs_diff(&cov, &Array2::eye(3)) < 1e-8);
}

#[test]
fn isotropic_noise_variance_is_the_population_variance() {
    let y = gaussian(10, 20000, 3) * 2.0f64.sqrt();
    let (_, yc) = center(y.view()).unwrap();
    let red = pca_reduce(&yc, 3).unwrap();
    assert!((red.noise_variance - 2.0).abs() < 0.1, "{}", red.noise_variance);
}

#[test]
fn rotation_is_orthogonal_and_sources_unit_variance() {
    let s = gen_sources(4, 3000, SourceFamily::BernoulliGaussian, 4);
    let mix = gen_mixture(&s, 10, 0.1, 5).unwrap();
    let (_, yc) = center(mix.data.view()).unwrap();
    let red = pca_reduce(&yc, 4).unwrap();
    let out = fastica(&red.whiten(&yc), &IcaConfig::new(4, 6)).unwrap();
    let o = &out.rotation;
    assert!(max_abs_diff(&o.dot(&o.t()), &Array2::eye(4)) < 1e-8);
    assert!(max_abs_diff(&covariance(&out.sources), &Array2::eye(4)) < 1e-8);
}

#[test]
fn two_uniform_sources_under_rotation_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = Uniform::new(-3f64.sqrt(), 3f64.sqrt()).unwrap();
    let s = Array2::from_shape_simple_fn((2, 5000), || u.sample(&mut rng));
    let theta: f64 = 0.7;
    let rot = Array2::from_shape_vec((2, 2), vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()]).unwrap();
    let (_, yc) = center(rot.dot(&s).view()).unwrap();
    let cov = covariance(&yc);
    // Whiten with the exact inverse square root of the sample covariance.
    let (a, b, d) = (cov[[0, 0]], cov[[0, 1]], cov[[1, 1]]);
    let tr = a + d;
    let det = a * d - b * b;
    let sq = det.sqrt();
    let t = (tr + 2.0 * sq).sqrt();
    let root = Array2::from_shape_vec((2, 2), vec![(a + sq) / t, b / t, b / t, (d + sq) / t]).unwrap();
    let rdet = root[[0, 0]] * root[[1, 1]] - root[[0, 1]] * root[[1, 0]];
    let inv_root = Array2::from_shape_vec(
        (2, 2),
        vec![root[[1, 1]] / rdet, -root[[0, 1]] / rdet, -root[[1, 0]] / rdet, root[[0, 0]] / rdet],
    )
    .unwrap();
    let out = fastica(&inv_root.dot(&yc), &IcaConfig::new(2, 8)).unwrap();
    let c = common::aligned_abs_corr(&out.sources, &s);
    assert!(common::min(&c) > 0.99, "{c:?}");
}

#[test]
fn noiseless_least_squares_is_exact() {
    let s = gen_sources(3, 500, SourceFamily::Laplacian, 9);
    let mix = gen_mixture(&s, 7, 0.0, 10).unwrap();
    let est = estimate_sources(mix.data.view(), &mix.mean, &mix.mixing).unwrap();
    assert!(max_abs_diff(&est, &s) < 1e-10);
}

#[test]
fn least_squares_error_covariance() {
    let (p, q, draws, sigma) = (6, 2, 10_000, 0.5);
    let a = gaussian(p, q, 11);
    let mu = Array1::zeros(p);
    let y = gaussian(p, draws, 12) * sigma;
    let err = estimate_sources(y.view(), &mu, &a).unwrap();
    let ata = a.t().dot(&a);
    let det = ata[[0, 0]] * ata[[1, 1]] - ata[[0, 1]] * ata[[1, 0]];
    let inv = Array2::from_shape_vec(
        (2, 2),
        vec![ata[[1, 1]] / det, -ata[[0, 1]] / det, -ata[[1, 0]] / det, ata[[0, 0]] / det],
    )
    .unwrap();
    let want = inv * sigma * sigma;
    let got = covariance(&err);
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_abs_diff(&got, &want) < 0.05 * scale, "{got:?} vs {want:?}");
}

#[test]
fn planted_three_sources_recovered() {
    let s = gen_sources(3, 5000, SourceFamily::Laplacian, 13);
    let mix = gen_mixture(&s, 20, 0.1, 14).unwrap();
    let model = run_single_ica(mix.data.view(), &IcaConfig::new(3, 15)).unwrap();
    let c = common::aligned_abs_corr(&model.sources, &s);
    assert!(common::min(&c) > 0.95, "{c:?}");
}

#[test]
fn single_source_noiseless_recovered_up_to_sign() {
    let s = gen_sources(1, 400, SourceFamily::Uniform, 16);
    let mix = gen_mixture(&s, 3, 0.0, 17).unwrap();
    let model = run_single_ica(mix.data.view(), &IcaConfig::new(1, 18)).unwrap();
    assert!((common::corr(model.sources.row(0), s.row(0)).abs() - 1.0).abs() < 1e-10);
}

#[test]
fn same_seed_same_model() {
    let s = gen_sources(3, 1000, SourceFamily::Laplacian, 19);
    let mix = gen_mixture(&s, 9, 0.1, 20).unwrap();
    let cfg = IcaConfig::new(3, 21);
    assert_eq!(run_single_ica(mix.data.view(), &cfg).unwrap(), run_single_ica(mix.data.view(), &cfg).unwrap());
}

#[test]
fn different_seeds_agree_up_to_permutation_and_sign() {
    let s = gen_sources(4, 4000, SourceFamily::Laplacian, 22);
    let mix = gen_mixture(&s, 12, 0.1, 23).unwrap();
    let a = run_single_ica(mix.data.view(), &IcaConfig::new(4, 1)).unwrap();
    let b = run_single_ica(mix.data.view(), &IcaConfig::new(4, 2)).unwrap();
    let c = common::aligned_abs_corr(&a.sources, &b.sources);
    assert!(common::min(&c) > 0.9, "{c:?}");
}

#[test]
fn group_of_one_is_single_subject() {
    let s = gen_sources(2, 800, SourceFamily::Laplacian, 24);
    let mix = gen_mixture(&s, 6, 0.1, 25).unwrap();
    let cfg = IcaConfig::new(2, 26);
    let single = run_single_ica(mix.data.view(), &cfg).unwrap();
    let group = run_group_ica(std::slice::from_ref(&mix.data), &cfg).unwrap();
    assert_eq!(single, group);
}

#[test]
fn group_of_identical_datasets_matches_single_subject() {
    let s = gen_sources(3, 3000, SourceFamily::Laplacian, 27);
    let mix = gen_mixture(&s, 10, 0.1, 28).unwrap();
    let cfg = IcaConfig::new(3, 29);
    let single = run_single_ica(mix.data.view(), &cfg).unwrap();
    let group = run_group_ica(&[mix.data.clone(), mix.data.clone()], &cfg).unwrap();
    let c = common::aligned_abs_corr(&group.sources, &single.sources);
    assert!(common::min(&c) > 0.999, "{c:?}");
}

#[test]
fn group_datasets_with_different_lengths_rejected() {
    let cfg = IcaConfig::new(1, 0);
    assert!(run_group_ica(&[gaussian(3, 50, 1), gaussian(3, 40, 2)], &cfg).is_err());
}
