//! Per-layer evaluation of every metric on an activation stack.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::directional::{matrix_resultant_length, vmf_kappa_mle};
use crate::error::{Error, Result};
use crate::mauve::{layer_pair_scores, MauveParams};
use crate::spectral::{effective_rank, mev, schatten_norm, singular_values, SchattenP};
use crate::tensor_io::ActivationStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Erank,
    Mev,
    Schatten1,
    Schatten2,
    SchattenInf,
    /// Consecutive-layer MAUVE; one value fewer than the other metrics.
    Mauve,
    Resultant,
    /// vMF concentration estimated from the resultant length.
    Kappa,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Erank,
        Metric::Mev,
        Metric::Schatten1,
        Metric::Schatten2,
        Metric::SchattenInf,
        Metric::Mauve,
        Metric::Resultant,
        Metric::Kappa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Erank => "erank",
            Metric::Mev => "mev",
            Metric::Schatten1 => "schatten1",
            Metric::Schatten2 => "schatten2",
            Metric::SchattenInf => "schatten_inf",
            Metric::Mauve => "mauve",
            Metric::Resultant => "resultant",
            Metric::Kappa => "kappa",
        }
    }

    /// Parses a comma-separated list; `schatten` expands to all three norms
    /// and `all` to every metric.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "all" => out.extend(Metric::ALL),
                "schatten" => out.extend([Metric::Schatten1, Metric::Schatten2, Metric::SchattenInf]),
                other => out.push(other.parse()?),
            }
        }
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(Error::arg("empty metric list"));
        }
        Ok(out)
    }

    /// Value of a single-layer metric on one matrix.
    pub fn evaluate_layer(self, x: &DMatrix<f64>) -> Result<f64> {
        match self {
            Metric::Erank => effective_rank(&singular_values(x)?),
            Metric::Mev => mev(&singular_values(x)?),
            Metric::Schatten1 => Ok(schatten_norm(&singular_values(x)?, SchattenP::One)),
            Metric::Schatten2 => Ok(schatten_norm(&singular_values(x)?, SchattenP::Two)),
            Metric::SchattenInf => Ok(schatten_norm(&singular_values(x)?, SchattenP::Infinity)),
            Metric::Resultant => matrix_resultant_length(x),
            Metric::Kappa => vmf_kappa_mle(matrix_resultant_length(x)?, x.ncols()),
            Metric::Mauve => Err(Error::arg("mauve compares two layers; use evaluate_stack")),
        }
    }

    /// Per-layer values over a whole stack.
    pub fn evaluate_stack(self, stack: &ActivationStack, mauve: &MauveParams) -> Result<Vec<f64>> {
        match self {
            Metric::Mauve => layer_pair_scores(stack, mauve),
            m => stack.layers.iter().map(|x| m.evaluate_layer(x)).collect(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or(match s {
                "effective_rank" => Some(Metric::Erank),
                "resultant_length" => Some(Metric::Resultant),
                "s1" => Some(Metric::Schatten1),
                "s2" => Some(Metric::Schatten2),
                "sinf" => Some(Metric::SchattenInf),
                _ => None,
            })
            .ok_or_else(|| Error::arg(format!("unknown metric {s:?}")))
    }
}
