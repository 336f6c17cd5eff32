//! Direction-based homogeneity: resultant length and von Mises–Fisher
//! concentration.
//!
//! Unlike the spectral metrics, these see the sign of a token direction, so
//! an antipodal pair `{v, −v}` scores as maximally spread rather than
//! rank one.
//!
//! For unit vectors drawn from a vMF distribution on `S^{p−1}` the maximum
//! likelihood concentration solves `A_p(κ) = R̄` with
//! `A_p(κ) = I_{p/2}(κ) / I_{p/2−1}(κ)`. `A_p` increases monotonically from
//! 0 to 1, so the estimate is a monotone transform of `R̄` for a fixed `p`.
//! No small-sample bias correction is applied.

use nalgebra::{DMatrix, RowDVector};

use crate::error::{Error, Result};

const MIN_ROW_NORM: f64 = 1e-12;
/// `r̄` this close to 1 is treated as exact collapse.
const DEGENERATE_GAP: f64 = 1e-9;
const CF_EPS: f64 = 1e-15;
const CF_MAX_TERMS: usize = 100_000;
const BISECTION_MAX_STEPS: usize = 400;

/// Rows of unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVectorCloud(DMatrix<f64>);

impl UnitVectorCloud {
    /// Wraps rows that are already unit length (within 1e-10).
    pub fn from_unit_rows(rows: DMatrix<f64>) -> Result<Self> {
        if rows.ncols() < 2 {
            return Err(Error::arg("unit vectors need dimension p >= 2"));
        }
        if let Some((i, norm)) = rows
            .row_iter()
            .map(|r| r.norm())
            .enumerate()
            .find(|(_, n)| (n - 1.0).abs() > 1e-10)
        {
            return Err(Error::arg(format!("row {i} has norm {norm}, expected 1")));
        }
        Ok(UnitVectorCloud(rows))
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Scales each row of `x` to unit length.
///
/// A row counts as zero when its norm is below `1e-12` times the largest
/// row norm, so the result does not depend on the overall scale of `x`.
pub fn normalize_rows(x: &DMatrix<f64>) -> Result<UnitVectorCloud> {
    if x.ncols() < 2 {
        return Err(Error::arg("unit vectors need dimension p >= 2"));
    }
    if let Some((r, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("row {}", r % x.nrows())));
    }
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in out.row_iter_mut() {
        // rescaling by the largest entry first keeps tiny rows from underflowing
        let peak = row.amax();
        if peak > 0.0 {
            row /= peak;
        }
        let unit = row.norm();
        if unit > 0.0 {
            row /= unit;
        }
        norms.push(peak * unit);
    }
    let largest = norms.iter().copied().fold(0.0, f64::max);
    if let Some(i) = norms.iter().position(|&n| n == 0.0 || n < MIN_ROW_NORM * largest) {
        return Err(Error::ZeroNormRow { row: i });
    }
    Ok(UnitVectorCloud(out))
}

/// `‖(x₁ + … + xₙ) / n‖₂`, in `[0, 1]`.
pub fn resultant_length(cloud: &UnitVectorCloud) -> f64 {
    let n = cloud.len();
    if n == 0 {
        return 0.0;
    }
    let sum: RowDVector<f64> = cloud.0.row_sum();
    (sum.norm() / n as f64).min(1.0)
}

/// `A_p(κ) = I_{p/2}(κ) / I_{p/2−1}(κ)`.
///
/// Evaluated with Perron's continued fraction
///
/// ```text
/// A = κ / (2ν + κ − (2ν+1)κ / (2ν+1+2κ − (2ν+3)κ / (2ν+2+2κ − …)))
/// ```
///
/// with `ν = p/2`. The fraction never touches the Bessel functions
/// themselves, so it stays finite where `I_ν(κ)` overflows, and it
/// converges in a handful of terms for large `κ`.
pub fn bessel_ratio(p: usize, kappa: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::arg(format!("dimension p = {p} must be >= 2")));
    }
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(Error::arg(format!("kappa = {kappa} must be finite and > 0")));
    }
    let nu = p as f64 / 2.0;
    let two_nu = 2.0 * nu;
    // modified Lentz on the denominator
    let tiny = f64::MIN_POSITIVE;
    let mut f = two_nu + kappa;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..CF_MAX_TERMS {
        let kf = k as f64;
        let a = -(two_nu + 2.0 * kf - 1.0) * kappa;
        let b = two_nu + kf + 2.0 * kappa;
        d = b + a * d;
        if d == 0.0 {
            d = tiny;
        }
        d = 1.0 / d;
        c = b + a / c;
        if c == 0.0 {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return Ok((kappa / f).clamp(0.0, 1.0));
        }
    }
    Err(Error::arg(format!(
        "Bessel ratio continued fraction did not converge for p = {p}, kappa = {kappa}"
    )))
}

/// Closed-form starting point `r̄(p − r̄²)/(1 − r̄²)`.
pub fn banerjee_kappa(r_bar: f64, p: usize) -> f64 {
    let r2 = r_bar * r_bar;
    r_bar * (p as f64 - r2) / (1.0 - r2)
}

/// Maximum likelihood vMF concentration for mean resultant length `r_bar`.
///
/// Solves `A_p(κ) = r̄` by bisection, with the bracket grown geometrically
/// from the Banerjee approximation.
pub fn vmf_kappa_mle(r_bar: f64, p: usize) -> Result<f64> {
    if p < 2 {
        return Err(Error::arg(format!("dimension p = {p} must be >= 2")));
    }
    if !(0.0..=1.0).contains(&r_bar) {
        if r_bar > 1.0 {
            return Err(Error::UnboundedConcentration { r_bar });
        }
        return Err(Error::arg(format!("r_bar = {r_bar} must lie in [0, 1)")));
    }
    if r_bar >= 1.0 - DEGENERATE_GAP {
        return Err(Error::UnboundedConcentration { r_bar });
    }
    if r_bar == 0.0 {
        return Ok(0.0);
    }

    let residual = |k: f64| bessel_ratio(p, k).map(|a| a - r_bar);
    let guess = banerjee_kappa(r_bar, p).max(f64::MIN_POSITIVE);
    let (mut lo, mut hi);
    if residual(guess)? < 0.0 {
        lo = guess;
        hi = guess * 2.0;
        while residual(hi)? < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
    } else {
        hi = guess;
        lo = guess / 2.0;
        while lo > f64::MIN_POSITIVE && residual(lo)? > 0.0 {
            hi = lo;
            lo /= 2.0;
        }
    }

    for _ in 0..BISECTION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = residual(mid)?;
        if r == 0.0 {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (residual(lo)?.abs(), residual(hi)?.abs());
    Ok(if rl <= rh { lo } else { hi })
}

/// Resultant length of the rows of `x` after normalization.
pub fn matrix_resultant_length(x: &DMatrix<f64>) -> Result<f64> {
    normalize_rows(x).map(|c| resultant_length(&c))
}
