//! Small numeric helpers shared across modules.

use ndarray::{Array1, ArrayView1};

/// Mean-subtracted copy of `x` together with its sum of squares.
///
/// Two-pass: the mean is taken first, then deviations are formed, which
/// keeps cancellation error low for maps with a large offset.
pub fn centered(x: ArrayView1<'_, f64>) -> (Array1<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let c = x.mapv(|v| v - mean);
    let ss = c.dot(&c);
    (c, ss)
}

/// Pearson correlation from pre-centered vectors. Zero-variance inputs
/// correlate at exactly 0. The result is symmetric in its arguments bit for
/// bit and clamped into `[-1, 1]`.
pub fn corr_centered(a: ArrayView1<'_, f64>, ss_a: f64, b: ArrayView1<'_, f64>, ss_b: f64) -> f64 {
    if ss_a <= 0.0 || ss_b <= 0.0 {
        return 0.0;
    }
    let r = a.dot(&b) / (ss_a * ss_b).sqrt();
    r.clamp(-1.0, 1.0)
}

pub fn pearson(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let (cx, sx) = centered(x);
    let (cy, sy) = centered(y);
    corr_centered(cx.view(), sx, cy.view(), sy)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample standard deviation; 0 for fewer than two values.
pub fn sample_sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Compensated (Neumaier) summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Linear-interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Excess kurtosis (population moments).
pub fn excess_kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let n = x.len() as f64;
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2) - 3.0
}
