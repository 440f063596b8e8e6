//! Control-affine extremum seeking with attenuating oscillations.
//!
//! The dither amplitude of each channel is adapted by
//! `ȧᵢ = −λᵢ(aᵢ − Jᵢ)`, where `J` is the right-hand side of the averaged
//! (Lie bracket) system, estimated online by a continuous-discrete Kalman
//! filter from objective measurements only.

// `!(x > 0.0)` is used on purpose so that NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dither;
pub mod error;
pub mod gekf;
pub mod io;
pub mod lie;
pub mod model;
pub mod par;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use error::{EscError, Result};
