//! MAUVE between two token clouds.
//!
//! The rows of both matrices are pooled and quantized with k-means; each
//! cloud becomes a histogram over the clusters. For mixtures
//! `R_λ = λ·P + (1−λ)·Q` the divergence curve collects the points
//! `(exp(−c·KL(Q‖R_λ)), exp(−c·KL(P‖R_λ)))`, and the score is the area
//! under that curve once it is closed to `(1, 0)` and `(0, 1)`.

pub mod kmeans;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{aggregate, LayerMetricSeries};
use crate::tensor_io::ActivationStack;

use kmeans::{distinct_points, kmeans, KMeansConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MauveParams {
    /// Cluster count; `None` picks `min(⌊(n_a + n_b)/10⌋, 500)`, at least 2.
    pub k: Option<usize>,
    pub seed: u64,
    /// Scaling constant `c` in `exp(−c·KL)`.
    pub c: f64,
    /// Number of mixture weights, equally spaced in (0, 1).
    pub grid_size: usize,
}

impl Default for MauveParams {
    fn default() -> Self {
        MauveParams { k: None, seed: 0, c: 5.0, grid_size: 100 }
    }
}

pub fn default_cluster_count(total_points: usize) -> usize {
    (total_points / 10).clamp(2, 500)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedPair {
    pub k: usize,
    pub hist_p: Vec<f64>,
    pub hist_q: Vec<f64>,
    /// `k x d`.
    pub centroids: DMatrix<f64>,
    /// Set when `k` had to be reduced to the number of distinct points.
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceCurve {
    pub lambdas: Vec<f64>,
    pub points: Vec<(f64, f64)>,
    pub c: f64,
}

fn rows(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.row_iter().map(|r| r.iter().copied().collect())
}

fn histogram(assignments: &[usize], k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    for &a in assignments {
        h[a] += 1.0;
    }
    let n = assignments.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Quantizes the pooled rows of `xa` and `xb` into `k` clusters.
pub fn quantize_pair(xa: &DMatrix<f64>, xb: &DMatrix<f64>, k: usize, seed: u64) -> Result<QuantizedPair> {
    let (na, nb) = (xa.nrows(), xb.nrows());
    if na == 0 || nb == 0 {
        return Err(Error::arg("both clouds need at least one row"));
    }
    if xa.ncols() != xb.ncols() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            xa.ncols(),
            xb.ncols()
        )));
    }
    if k < 2 {
        return Err(Error::arg(format!("k = {k} must be >= 2")));
    }
    if k > na + nb {
        return Err(Error::arg(format!("k = {k} exceeds the {} pooled points", na + nb)));
    }
    if xa.iter().chain(xb.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input to quantize_pair".into()));
    }

    let pooled: Vec<Vec<f64>> = rows(xa).chain(rows(xb)).collect();
    let distinct = distinct_points(&pooled, k);
    let mut warning = None;
    let k_used = if distinct < k {
        warning = Some(format!("only {distinct} distinct points; k reduced from {k} to {distinct}"));
        distinct
    } else {
        k
    };

    // clustering runs on the points in a canonical order, so neither the
    // order of the tokens nor which cloud comes first affects the result
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| {
        pooled[i]
            .iter()
            .zip(&pooled[j])
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| pooled[i].clone()).collect();
    let km = kmeans(&sorted, &KMeansConfig::new(k_used, seed));
    let mut assignments = vec![0; pooled.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = km.assignments[pos];
    }
    let d = xa.ncols();
    let centroids = DMatrix::from_fn(k_used, d, |r, c| km.centroids[r][c]);
    Ok(QuantizedPair {
        k: k_used,
        hist_p: histogram(&assignments[..na], k_used),
        hist_q: histogram(&assignments[na..], k_used),
        centroids,
        warning,
    })
}

/// `KL(p ‖ r)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], r: &[f64]) -> f64 {
    p.iter()
        .zip(r)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &ri)| pi * (pi / ri).ln())
        .sum::<f64>()
        .max(0.0)
}

/// `KL(a ‖ w·b + (1−w)·a)`, written so that it is exactly 0 when `a = b`.
fn kl_to_mixture(a: &[f64], b: &[f64], w: f64) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(&ai, _)| ai > 0.0)
        .map(|(&ai, &bi)| -ai * (w * (bi - ai) / ai).ln_1p())
        .sum::<f64>()
        .max(0.0)
}

/// Mixture weights `i / (grid_size + 1)` for `i = 1..=grid_size`.
pub fn mixture_grid(grid_size: usize) -> Vec<f64> {
    (1..=grid_size).map(|i| i as f64 / (grid_size + 1) as f64).collect()
}

pub fn divergence_curve(pair: &QuantizedPair, c: f64, grid_size: usize) -> Result<DivergenceCurve> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::arg(format!("scaling constant c = {c} must be > 0")));
    }
    if grid_size < 3 {
        return Err(Error::arg(format!("grid_size = {grid_size} must be >= 3")));
    }
    let lambdas = mixture_grid(grid_size);
    let points = lambdas
        .iter()
        .map(|&lambda| {
            // R = λ·P + (1−λ)·Q
            (
                (-c * kl_to_mixture(&pair.hist_q, &pair.hist_p, lambda)).exp(),
                (-c * kl_to_mixture(&pair.hist_p, &pair.hist_q, 1.0 - lambda)).exp(),
            )
        })
        .collect();
    Ok(DivergenceCurve { lambdas, points, c })
}

fn trapezoid(mut pts: Vec<(f64, f64)>) -> f64 {
    // ascending abscissa; on ties the higher ordinate first, which traces a
    // non-increasing curve correctly
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Area under the curve closed to the axes.
///
/// Averages the integral along each axis so that swapping the two
/// distributions (which mirrors the curve) leaves the area unchanged.
pub fn curve_area(curve: &DivergenceCurve) -> f64 {
    let mut closed = Vec::with_capacity(curve.points.len() + 2);
    closed.push((1.0, 0.0));
    closed.extend_from_slice(&curve.points);
    closed.push((0.0, 1.0));
    let along_x = trapezoid(closed.clone());
    let along_y = trapezoid(closed.into_iter().map(|(x, y)| (y, x)).collect());
    (0.5 * (along_x + along_y)).clamp(0.0, 1.0)
}

pub fn mauve_score(xa: &DMatrix<f64>, xb: &DMatrix<f64>, params: &MauveParams) -> Result<f64> {
    let k = params.k.unwrap_or_else(|| default_cluster_count(xa.nrows() + xb.nrows()));
    let pair = quantize_pair(xa, xb, k, params.seed)?;
    let curve = divergence_curve(&pair, params.c, params.grid_size)?;
    Ok(curve_area(&curve))
}

/// MAUVE between each consecutive pair of layers, `L` values for `L + 1` layers.
pub fn layer_pair_scores(stack: &ActivationStack, params: &MauveParams) -> Result<Vec<f64>> {
    if stack.layers.len() < 2 {
        return Err(Error::arg("need at least two layers for consecutive-layer MAUVE"));
    }
    stack
        .layers
        .windows(2)
        .map(|w| mauve_score(&w[0], &w[1], params))
        .collect()
}

/// [`layer_pair_scores`] as a one-sample series; entry `l` compares layers `l` and `l + 1`.
pub fn layer_pair_series(stack: &ActivationStack, params: &MauveParams) -> Result<LayerMetricSeries> {
    let scores = layer_pair_scores(stack, params)?;
    let per_sample = BTreeMap::from([(stack.sample_id.clone(), scores)]);
    aggregate("mauve", &per_sample, stack.dataset_tag, stack.model_tag.clone())
}
