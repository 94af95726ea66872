//! Spectral functional calculus for nonnegative self-adjoint operators on
//! discretized metric measure spaces, with audits of heat-kernel bounds,
//! finite propagation speed, microlocalized dispersive constants, Hardy/BMO
//! pairings and Strichartz estimates.
//!
//! The crate is `no_std` with `alloc` when the default `std` feature is off.

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::manual_is_multiple_of)]

extern crate alloc;

pub mod dispersive;
pub mod error;
pub mod fit;
pub mod hardy;
pub mod kernels;
pub mod linalg;
pub mod quadrature;
pub mod space;
pub mod spectral;
pub mod strichartz;

pub use error::{Error, Result};
pub use fit::{fit_decay_exponent, DecayFit};
pub use num_complex::Complex64;
pub use space::{Ball, Boundary, Geometry, Space};
pub use spectral::{Builder, SelfAdjointOperator};

/// Complex-valued state on the points of a space.
pub type State = alloc::vec::Vec<Complex64>;

#[inline]
pub(crate) fn sq(x: f64) -> f64 {
    x * x
}

/// `x^k` by repeated squaring; `f64::powi` needs `std`.
pub(crate) fn powu(mut x: f64, mut k: u32) -> f64 {
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= x;
        }
        x *= x;
        k >>= 1;
    }
    acc
}
