//! Scalar math routed through `libm` so results are identical with and without `std`.

pub(crate) use libm::{cos, exp, log, log1p, sin, sinh, sqrt, tan, tanh};

pub(crate) const PI: f64 = core::f64::consts::PI;
pub(crate) const TAU: f64 = core::f64::consts::TAU;

use num_complex::Complex64;

/// `e^{i phase}`.
#[inline]
pub(crate) fn cis(phase: f64) -> Complex64 {
    Complex64::new(cos(phase), sin(phase))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + exp(-x)
    } else {
        log1p(exp(x))
    }
}

#[inline]
pub(crate) fn norm_sqr(z: Complex64) -> f64 {
    z.re * z.re + z.im * z.im
}
