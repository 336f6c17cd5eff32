//! A synthetic attention-mixing model of token homogenization.
//!
//! Each layer mixes tokens with `A = λ₁·A_cont + λ₂·A_pos`, `λ₁ = 1 − λ₂`,
//! where `A_pos` sends every query to one fixed key and `A_cont` is a
//! strictly positive row-stochastic matrix, then applies a value map `P` on
//! feature space:
//!
//! ```text
//! X' = A · X · Pᵀ        (+ X with a residual connection)
//! ```
//!
//! Row by row this is `x_i' = λ₂·P·x_t + λ₁·P·Σⱼ A_cont[i][j]·x_j` for the
//! positional target `t`. When `λ₂` dominates and `P` does not expand,
//! every row is pulled toward the target token's image and the token cloud
//! collapses.
//!
//! `A_pos` is the same at every layer; `A_cont` and `P` are redrawn per layer
//! from seeds derived from `mixing_seed`.

use nalgebra::{DMatrix, RowDVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::singular_values;
use crate::tensor_io::{ActivationStack, DatasetTag};

/// Spectral norm of the `RandomContraction` value map.
pub const CONTRACTION_NORM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalTarget {
    FirstToken,
    LastToken,
    Position(usize),
}

impl PositionalTarget {
    pub fn index(self, n: usize) -> Result<usize> {
        let j = match self {
            PositionalTarget::FirstToken => 0,
            PositionalTarget::LastToken => n.saturating_sub(1),
            PositionalTarget::Position(j) => j,
        };
        if j >= n {
            return Err(Error::arg(format!("positional target {j} out of range for n = {n}")));
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMapMode {
    Identity,
    /// Gaussian matrix rescaled to spectral norm [`CONTRACTION_NORM`].
    RandomContraction,
    /// Haar-distributed orthogonal matrix.
    RandomOrthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    pub depth: usize,
    pub lambda2: f64,
    pub target: PositionalTarget,
    pub mixing_seed: u64,
    pub value_map: ValueMapMode,
    pub residual: bool,
}

impl SimConfig {
    pub fn lambda1(&self) -> f64 {
        1.0 - self.lambda2
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda2) {
            return Err(Error::arg(format!("lambda2 = {} must lie in [0, 1]", self.lambda2)));
        }
        if self.depth < 1 {
            return Err(Error::arg("depth must be >= 1"));
        }
        if self.n < 2 {
            return Err(Error::arg(format!("n = {} must be >= 2", self.n)));
        }
        if self.d < 1 {
            return Err(Error::arg("d must be >= 1"));
        }
        self.target.index(self.n).map(|_| ())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 32,
            d: 16,
            depth: 50,
            lambda2: 0.7,
            target: PositionalTarget::FirstToken,
            mixing_seed: 0,
            value_map: ValueMapMode::RandomContraction,
            residual: false,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent per-layer seeds.
fn derive_seed(seed: u64, layer: usize, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add((layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // filled row by row so the draw order matches the row-major container
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Every row puts all of its mass on key `target`.
pub fn positional_attention(n: usize, target: PositionalTarget) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::arg(format!("n = {n} must be >= 2")));
    }
    let t = target.index(n)?;
    Ok(DMatrix::from_fn(n, n, |_, c| if c == t { 1.0 } else { 0.0 }))
}

/// Row-wise softmax of `logit_scale`-scaled standard normal logits.
///
/// A zero scale gives the uniform matrix regardless of seed.
pub fn contextual_attention_scaled(n: usize, seed: u64, logit_scale: f64) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::arg(format!("n = {n} must be >= 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = gaussian(n, n, &mut rng) * logit_scale;
    for mut row in a.row_iter_mut() {
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    Ok(a)
}

/// Softmax of seeded standard normal logits, strictly positive and row-stochastic.
pub fn contextual_attention(n: usize, seed: u64) -> Result<DMatrix<f64>> {
    contextual_attention_scaled(n, seed, 1.0)
}

/// The `d x d` feature map `P` for one layer.
pub fn value_map(d: usize, mode: ValueMapMode, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match mode {
        ValueMapMode::Identity => DMatrix::identity(d, d),
        ValueMapMode::RandomContraction => {
            let g = gaussian(d, d, &mut rng);
            let top = singular_values(&g)?.largest();
            g * (CONTRACTION_NORM / top)
        }
        ValueMapMode::RandomOrthogonal => {
            let qr = gaussian(d, d, &mut rng).qr();
            let (mut q, r) = qr.unpack();
            // sign fix makes the distribution Haar
            for j in 0..d {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        }
    })
}

fn check_ingredients(x: &DMatrix<f64>, a_cont: &DMatrix<f64>, target: usize, p: &DMatrix<f64>) -> Result<()> {
    let (n, d) = x.shape();
    if a_cont.shape() != (n, n) {
        return Err(Error::arg(format!("A_cont is {:?}, expected {n}x{n}", a_cont.shape())));
    }
    if p.shape() != (d, d) {
        return Err(Error::arg(format!("P is {:?}, expected {d}x{d}", p.shape())));
    }
    if target >= n {
        return Err(Error::arg(format!("target {target} out of range for n = {n}")));
    }
    Ok(())
}

/// `X − 1·x_tᵀ`.
fn offsets_from(x: &DMatrix<f64>, target: usize) -> DMatrix<f64> {
    let anchor: RowDVector<f64> = x.row(target).into_owned();
    let mut offsets = x.clone();
    for mut row in offsets.row_iter_mut() {
        row -= &anchor;
    }
    offsets
}

/// One layer applied to a state and its offsets from the target row.
///
/// Returns the new state and the new offsets. The offsets are propagated
/// directly, never recovered by subtracting rows of the state, so they stay
/// accurate after the rows of the state agree to machine precision.
fn layer_update(
    x: &DMatrix<f64>,
    offsets: &DMatrix<f64>,
    a_cont: &DMatrix<f64>,
    target: usize,
    lambda2: f64,
    p: &DMatrix<f64>,
    residual: bool,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let pt = p.transpose();
    let mixed = a_cont * offsets * (1.0 - lambda2);
    let mixed_target: RowDVector<f64> = mixed.row(target).into_owned();

    let mut next_offsets = mixed.clone();
    for mut row in next_offsets.row_iter_mut() {
        row -= &mixed_target;
    }
    next_offsets *= &pt;

    let anchor: RowDVector<f64> = x.row(target).into_owned();
    let mut next = mixed;
    for mut row in next.row_iter_mut() {
        row += &anchor;
    }
    next *= &pt;
    if residual {
        next += x;
        next_offsets += offsets;
    }
    (next, next_offsets)
}

/// One mixing layer with explicit ingredients.
///
/// Computed as `X' = (1·x_tᵀ + λ₁·A_cont·(X − 1·x_tᵀ)) · Pᵀ`, which equals
/// `(λ₁·A_cont + λ₂·A_pos)·X·Pᵀ` for row-stochastic `A_cont`. Working with
/// offsets from the target row keeps a collapsed state exactly collapsed
/// instead of leaving rounding residue of the size of the rows themselves.
pub fn apply_mixing(
    x: &DMatrix<f64>,
    a_cont: &DMatrix<f64>,
    target: usize,
    lambda2: f64,
    p: &DMatrix<f64>,
    residual: bool,
) -> Result<DMatrix<f64>> {
    check_ingredients(x, a_cont, target, p)?;
    let offsets = offsets_from(x, target);
    Ok(layer_update(x, &offsets, a_cont, target, lambda2, p, residual).0)
}

/// The full attention matrix `λ₁·A_cont + λ₂·A_pos` used at `layer`.
pub fn mixing_matrix(cfg: &SimConfig, layer: usize) -> Result<DMatrix<f64>> {
    let a_cont = contextual_attention(cfg.n, derive_seed(cfg.mixing_seed, layer, 0))?;
    let a_pos = positional_attention(cfg.n, cfg.target)?;
    Ok(a_cont * cfg.lambda1() + a_pos * cfg.lambda2)
}

fn check_state(x: &DMatrix<f64>, cfg: &SimConfig, what: &str) -> Result<()> {
    if x.shape() != (cfg.n, cfg.d) {
        return Err(Error::arg(format!(
            "{what} is {}x{}, config says {}x{}",
            x.nrows(),
            x.ncols(),
            cfg.n,
            cfg.d
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn layer_ingredients(cfg: &SimConfig, layer: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a_cont = contextual_attention(cfg.n, derive_seed(cfg.mixing_seed, layer, 0))?;
    let p = value_map(cfg.d, cfg.value_map, derive_seed(cfg.mixing_seed, layer, 1))?;
    Ok((a_cont, p))
}

/// Layer `layer` (1-based) of the simulation applied to `x`.
pub fn mix_step(x: &DMatrix<f64>, cfg: &SimConfig, layer: usize) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    check_state(x, cfg, &format!("input to layer {layer}"))?;
    let (a_cont, p) = layer_ingredients(cfg, layer)?;
    let out = apply_mixing(x, &a_cont, cfg.target.index(cfg.n)?, cfg.lambda2, &p, cfg.residual)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("state after layer {layer}")));
    }
    Ok(out)
}

/// `max_i ‖x_i − x_1‖₂`.
pub fn dispersion(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 0 {
        return 0.0;
    }
    let first = x.row(0);
    x.row_iter().map(|r| (r - first).norm()).fold(0.0, f64::max)
}

/// Standard normal rows scaled to unit norm.
pub fn initial_state(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(n, d, &mut rng);
    for mut row in x.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub config: SimConfig,
    /// `X⁽⁰⁾ … X⁽ᴸ⁾`.
    pub states: Vec<DMatrix<f64>>,
    pub dispersion_series: Vec<f64>,
}

impl SimTrajectory {
    /// Evaluates a per-layer metric on every state.
    pub fn metric_series<F>(&self, metric: F) -> Result<Vec<f64>>
    where
        F: Fn(&DMatrix<f64>) -> Result<f64>,
    {
        self.states.iter().map(metric).collect()
    }

    pub fn to_activation_stack(&self, sample_id: impl Into<String>) -> ActivationStack {
        let mut stack = ActivationStack::new(
            sample_id,
            self.states.clone(),
            "homogenization-sim",
            DatasetTag::Synthetic,
        );
        stack.capture_point = Some("post_block".into());
        stack
    }
}

/// Runs `cfg.depth` mixing layers from `x0`.
///
/// `dispersion_series` is measured on the offsets carried alongside the
/// states, so it keeps shrinking geometrically where the stored rows have
/// already become bitwise equal.
pub fn run_sim(cfg: &SimConfig, x0: &DMatrix<f64>) -> Result<SimTrajectory> {
    cfg.validate()?;
    check_state(x0, cfg, "initial state")?;
    let target = cfg.target.index(cfg.n)?;
    let mut states = Vec::with_capacity(cfg.depth + 1);
    let mut dispersion_series = Vec::with_capacity(cfg.depth + 1);
    let mut offsets = offsets_from(x0, target);
    states.push(x0.clone());
    dispersion_series.push(dispersion(x0));
    for layer in 1..=cfg.depth {
        let (a_cont, p) = layer_ingredients(cfg, layer)?;
        let (next, next_offsets) =
            layer_update(&states[layer - 1], &offsets, &a_cont, target, cfg.lambda2, &p, cfg.residual);
        if next.iter().chain(next_offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state after layer {layer}")));
        }
        dispersion_series.push(dispersion(&next_offsets));
        states.push(next);
        offsets = next_offsets;
    }
    Ok(SimTrajectory { config: *cfg, states, dispersion_series })
}
