//! Positional bias profiles from attention maps.
//!
//! Column `j` of a query-by-key attention matrix sums the attention every
//! query pays to key `j`. A profile dominated by a few positions signals
//! positional bias. Heads are averaged first, then layers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::AttentionStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileScope {
    PerLayer,
    #[default]
    AllLayers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BiasOptions {
    /// Leading key positions dropped from the emitted profile.
    pub skip_prefix: usize,
    pub scope: ProfileScope,
    /// Divide each column by its summand count (`n − j` when causal).
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BiasProfile {
    /// Key position of each entry: absolute index, or relative in [0, 1]
    /// after [`cross_sample_profile`].
    pub positions: Vec<f64>,
    pub per_position_mass: Vec<f64>,
    pub skip_prefix: usize,
    pub scope: ProfileScope,
    /// Source layer for per-layer profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default)]
    pub relative: bool,
    #[serde(default)]
    pub sample_count: usize,
}

/// `out[j] = Σᵢ A[i][j]`.
pub fn column_mass(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::arg(format!(
            "attention matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.row_sum().iter().copied().collect())
}

fn mean_of(profiles: impl Iterator<Item = Vec<f64>>, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for p in profiles {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
        count += 1;
    }
    acc.iter_mut().for_each(|a| *a /= count.max(1) as f64);
    acc
}

/// Head-averaged column mass per layer, optionally normalized.
fn layer_masses(attn: &AttentionStack, normalized: bool) -> Result<Vec<Vec<f64>>> {
    let n = attn.token_count();
    attn.layers
        .iter()
        .map(|heads| {
            if heads.is_empty() {
                return Err(Error::arg("layer with no attention heads"));
            }
            let masses = heads.iter().map(column_mass).collect::<Result<Vec<_>>>()?;
            if let Some(m) = masses.iter().find(|m| m.len() != n) {
                return Err(Error::arg(format!("head of size {} in a {n}-token stack", m.len())));
            }
            let mut mean = mean_of(masses.into_iter(), n);
            if normalized {
                for (j, m) in mean.iter_mut().enumerate() {
                    let summands = if attn.causal { n - j } else { n };
                    *m /= summands as f64;
                }
            }
            Ok(mean)
        })
        .collect()
}

fn trimmed(mass: Vec<f64>, opts: &BiasOptions, layer: Option<usize>) -> BiasProfile {
    let kept: Vec<f64> = mass.into_iter().skip(opts.skip_prefix).collect();
    BiasProfile {
        positions: (opts.skip_prefix..opts.skip_prefix + kept.len()).map(|j| j as f64).collect(),
        per_position_mass: kept,
        skip_prefix: opts.skip_prefix,
        scope: opts.scope,
        layer,
        normalized: opts.normalized,
        relative: false,
        sample_count: 1,
    }
}

/// Column-mass profile of one sample: one profile per layer, or a single
/// profile averaged over layers.
pub fn bias_profile(attn: &AttentionStack, opts: &BiasOptions) -> Result<Vec<BiasProfile>> {
    let n = attn.token_count();
    if attn.layers.is_empty() {
        return Err(Error::arg("attention stack has no layers"));
    }
    if opts.skip_prefix >= n {
        return Err(Error::arg(format!(
            "skip_prefix {} leaves nothing of a {n}-token sample",
            opts.skip_prefix
        )));
    }
    let per_layer = layer_masses(attn, opts.normalized)?;
    Ok(match opts.scope {
        ProfileScope::PerLayer => per_layer
            .into_iter()
            .enumerate()
            .map(|(l, m)| trimmed(m, opts, Some(l)))
            .collect(),
        ProfileScope::AllLayers => vec![trimmed(mean_of(per_layer.into_iter(), n), opts, None)],
    })
}

/// Mean of profiles that share their key positions.
pub fn average_profiles(profiles: &[BiasProfile]) -> Result<BiasProfile> {
    let first = profiles.first().ok_or_else(|| Error::arg("no profiles to combine"))?;
    if let Some(p) = profiles.iter().find(|p| p.positions != first.positions) {
        return Err(Error::arg(format!(
            "profiles cover different positions ({} vs {} entries); use a relative grid",
            first.positions.len(),
            p.positions.len()
        )));
    }
    let n = first.per_position_mass.len();
    Ok(BiasProfile {
        per_position_mass: mean_of(profiles.iter().map(|p| p.per_position_mass.clone()), n),
        sample_count: profiles.iter().map(|p| p.sample_count.max(1)).sum(),
        ..first.clone()
    })
}

/// Linear interpolation of `values` (at positions `j / (m − 1)`) at `t ∈ [0, 1]`.
fn interpolate(values: &[f64], t: f64) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        m => {
            let x = t * (m - 1) as f64;
            let i = (x.floor() as usize).min(m - 2);
            let frac = x - i as f64;
            values[i] * (1.0 - frac) + values[i + 1] * frac
        }
    }
}

/// Averages profiles of different lengths on a shared relative-position grid
/// of `grid_points` positions spanning [0, 1].
pub fn cross_sample_profile(profiles: &[BiasProfile], grid_points: usize) -> Result<BiasProfile> {
    let first = profiles.first().ok_or_else(|| Error::arg("no profiles to combine"))?;
    if grid_points < 2 {
        return Err(Error::arg("relative grid needs at least 2 points"));
    }
    if let Some(p) = profiles.iter().find(|p| p.per_position_mass.is_empty()) {
        return Err(Error::arg(format!("empty profile (layer {:?})", p.layer)));
    }
    let grid: Vec<f64> = (0..grid_points).map(|i| i as f64 / (grid_points - 1) as f64).collect();
    let mut mass = vec![0.0; grid_points];
    for p in profiles {
        for (m, &t) in mass.iter_mut().zip(&grid) {
            *m += interpolate(&p.per_position_mass, t);
        }
    }
    let count = profiles.len() as f64;
    mass.iter_mut().for_each(|m| *m /= count);
    Ok(BiasProfile {
        positions: grid,
        per_position_mass: mass,
        skip_prefix: first.skip_prefix,
        scope: first.scope,
        layer: first.layer,
        normalized: first.normalized,
        relative: true,
        sample_count: profiles.iter().map(|p| p.sample_count.max(1)).sum(),
    })
}
