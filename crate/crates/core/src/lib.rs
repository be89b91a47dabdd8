//! Quasiparticle-poisoning telemetry: device arithmetic, stochastic
//! poisoning histories, synthesized parity / charge / injection records and
//! the estimation chain that recovers rates, exponents and offsets from them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod device;
pub mod error;
pub mod events;
pub mod fit;
pub mod io;
pub mod qp;
pub mod rng;
mod serde_util;
pub mod synth;
pub mod units;

pub use error::{Error, Result};
pub use fit::{FitFlag, FitResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/device.md")]
    mod device {}
    #[doc = include_str!("../../../book/src/poisoning.md")]
    mod poisoning {}
    #[doc = include_str!("../../../book/src/records.md")]
    mod records {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/hmm.md")]
    mod hmm {}
    #[doc = include_str!("../../../book/src/coincidences.md")]
    mod coincidences {}
    #[doc = include_str!("../../../book/src/power_laws.md")]
    mod power_laws {}
    #[doc = include_str!("../../../book/src/charge.md")]
    mod charge {}
    #[doc = include_str!("../../../book/src/qp_dynamics.md")]
    mod qp_dynamics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
