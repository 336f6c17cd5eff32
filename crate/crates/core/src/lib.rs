//! Diagnostics for token homogenization in transformer activations.
//!
//! * [`spectral`]: singular spectra, MEV, Schatten norms, effective rank.
//! * [`directional`]: resultant length and von Mises–Fisher concentration.
//! * [`mauve`]: MAUVE between consecutive layers' token clouds.
//! * [`attention_bias`]: column-mass profiles of attention maps.
//! * [`homogenization_sim`]: a synthetic attention-mixing model.
//! * [`tensor_io`]: the `HOMOGNX1` container format.
//! * [`report`]: cross-sample aggregation and CSV/JSON output.
//!
//! ```
//! use homognx::spectral::{effective_rank, singular_values};
//! use nalgebra::DMatrix;
//!
//! let spec = singular_values(&DMatrix::<f64>::identity(4, 4)).unwrap();
//! assert!((effective_rank(&spec).unwrap() - 4.0).abs() < 1e-12);
//! ```

pub mod attention_bias;
pub mod cli;
pub mod directional;
pub mod error;
pub mod homogenization_sim;
pub mod mauve;
pub mod metrics;
pub mod report;
pub mod spectral;
pub mod tensor_io;

pub use error::{Error, Result};

// The guide's code blocks compile and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/container.md")]
    mod container {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/directional.md")]
    mod directional {}
    #[doc = include_str!("../../../book/src/mauve.md")]
    mod mauve {}
    #[doc = include_str!("../../../book/src/attention_bias.md")]
    mod attention_bias {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
