//! Singular spectra and the metrics derived from them.
//!
//! Every metric here depends on the layer matrix only through its singular
//! values, so the SVD is computed without singular vectors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Values at or below this are treated as exact zeros in entropy sums.
const ENTROPY_FLOOR: f64 = 1e-300;
/// Implicit-shift sweeps allowed per singular value before giving up.
const SVD_SWEEPS_PER_VALUE: usize = 1000;
const FROBENIUS_REL_TOL: f64 = 1e-8;

/// Singular values `σ₁ ≥ σ₂ ≥ … ≥ σ_Q ≥ 0`, `Q = min(n, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum(Vec<f64>);

impl SingularSpectrum {
    /// Builds a spectrum from arbitrary non-negative values, sorting them.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::arg(format!("singular value {v} is not a finite non-negative number")));
        }
        values.sort_unstable_by(|a, b| b.total_cmp(a));
        Ok(SingularSpectrum(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn largest(&self) -> f64 {
        self.0.first().copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.largest() == 0.0
    }

    /// Count of values above `σ₁ · max(n, d) · ε`.
    pub fn numerical_rank(&self, rows: usize, cols: usize) -> usize {
        let tol = self.largest() * rows.max(cols) as f64 * f64::EPSILON;
        self.0.iter().filter(|&&s| s > tol).count()
    }
}

/// Singular values of `x`, largest first.
pub fn singular_values(x: &DMatrix<f64>) -> Result<SingularSpectrum> {
    let (rows, cols) = x.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::arg(format!("empty {rows}x{cols} matrix")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input to singular_values".into()));
    }
    // the SVD is cheaper on the wide orientation's transpose
    let work = if rows < cols { x.transpose() } else { x.clone() };
    let svd = work
        .try_svd(false, false, f64::EPSILON, SVD_SWEEPS_PER_VALUE * rows.min(cols).max(10))
        .ok_or(Error::SvdNoConvergence { rows, cols })?;
    let spectrum = SingularSpectrum::new(svd.singular_values.iter().map(|s| s.max(0.0)).collect())?;

    let frobenius_sq = x.norm_squared();
    let sigma_sq: f64 = spectrum.0.iter().map(|s| s * s).sum();
    if (frobenius_sq - sigma_sq).abs() > FROBENIUS_REL_TOL * frobenius_sq {
        return Err(Error::SvdInaccurate { frobenius_sq, sigma_sq });
    }
    Ok(spectrum)
}

/// Maximum explainable variance, `σ₁² / Σ σᵢ²`.
pub fn mev(spec: &SingularSpectrum) -> Result<f64> {
    if spec.is_zero() {
        return Err(Error::ZeroMatrix("MEV"));
    }
    // rescale by σ₁ so squares cannot overflow
    let top = spec.largest();
    let total: f64 = spec.0.iter().map(|s| (s / top).powi(2)).sum();
    Ok(1.0 / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchattenP {
    /// Nuclear norm.
    One,
    /// Frobenius norm.
    Two,
    /// Spectral norm.
    Infinity,
}

/// The ℓp norm of the singular values.
pub fn schatten_norm(spec: &SingularSpectrum, p: SchattenP) -> f64 {
    match p {
        SchattenP::One => spec.0.iter().sum(),
        SchattenP::Two => {
            let top = spec.largest();
            if top == 0.0 {
                0.0
            } else {
                top * spec.0.iter().map(|s| (s / top).powi(2)).sum::<f64>().sqrt()
            }
        }
        SchattenP::Infinity => spec.largest(),
    }
}

/// Shannon entropy (natural log) of the spectrum normalized to unit ℓ1 mass.
pub fn spectral_entropy(spec: &SingularSpectrum) -> Result<f64> {
    if spec.is_zero() {
        return Err(Error::ZeroMatrix("spectral entropy"));
    }
    let total: f64 = spec.0.iter().sum();
    Ok(spec
        .0
        .iter()
        .map(|s| s / total)
        .filter(|&p| p > ENTROPY_FLOOR)
        .map(|p| -p * p.ln())
        .sum())
}

/// Effective rank, the exponential of the spectral entropy.
pub fn effective_rank(spec: &SingularSpectrum) -> Result<f64> {
    spectral_entropy(spec)
        .map(f64::exp)
        .map_err(|_| Error::ZeroMatrix("effective rank"))
}
