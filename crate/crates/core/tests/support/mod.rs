//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Haar orthogonal matrix from the QR of a Gaussian matrix.
pub fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = gaussian(n, n, rng).qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn unit_vector(p: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v: DVector<f64> = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    let n = v.norm();
    v / n
}

/// Row-stochastic matrix with random positive entries, optionally causal.
pub fn row_stochastic(n: usize, causal: bool, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(n, n, |r, c| {
        if causal && c > r {
            0.0
        } else {
            rng.random::<f64>() + 1e-3
        }
    });
    for mut row in a.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    a
}

/// Wood's rejection sampler for the von Mises–Fisher distribution with
/// mean direction `e₁` on `S^{p−1}`. Returns `n x p`.
pub fn sample_vmf(n: usize, p: usize, kappa: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = (p - 1) as f64;
    let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
    let beta = Beta::new(m / 2.0, m / 2.0).unwrap();
    let mut out = DMatrix::zeros(n, p);
    for i in 0..n {
        let w = loop {
            let z: f64 = beta.sample(rng);
            let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            let u: f64 = rng.random();
            if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
                break w;
            }
        };
        let tangent = unit_vector(p - 1, rng);
        let s = (1.0 - w * w).max(0.0).sqrt();
        out[(i, 0)] = w;
        for j in 1..p {
            out[(i, j)] = s * tangent[j - 1];
        }
    }
    out
}

/// `I_ν(x)` for integer order from its power series.
pub fn bessel_i_series(nu: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = half.powi(nu as i32) / (1..=nu).map(f64::from).product::<f64>();
    let mut sum = term;
    for k in 1..200 {
        term *= half * half / (k as f64 * (k + nu) as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Squared singular values from the eigenvalues of the Gram matrix, descending.
pub fn gram_eigenvalues(x: &DMatrix<f64>) -> Vec<f64> {
    let g = if x.nrows() >= x.ncols() { x.transpose() * x } else { x * x.transpose() };
    let mut ev: Vec<f64> = g.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Bisection on a monotone increasing `f` for `f(x) = target` in `[lo, hi]`.
pub fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two isotropic Gaussian blobs of `n` points around `centre`.
pub fn blob(n: usize, centre: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, centre.len(), |_, c| {
        let z: f64 = StandardNormal.sample(rng);
        centre[c] + sigma * z
    })
}

/// Proptest settings without on-disk regression files.
pub fn cases(n: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config { cases: n, failure_persistence: None, ..Default::default() }
}
