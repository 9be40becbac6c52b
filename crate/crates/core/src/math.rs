//! Thin wrappers over `libm` so the crate builds without `std`.
//!
//! Routing every transcendental through one place also keeps results
//! bit-identical across the whole workspace regardless of platform
//! intrinsics.

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Round half away from zero, the quantizer's tie rule.
#[inline]
pub(crate) fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

/// Round half to even, the integer-merge tie rule.
pub(crate) fn round_half_even(x: f64) -> f64 {
    let lo = libm::floor(x);
    let frac = x - lo;
    if frac > 0.5 {
        lo + 1.0
    } else if frac < 0.5 {
        lo
    } else if libm::fmod(lo, 2.0) == 0.0 {
        lo
    } else {
        lo + 1.0
    }
}
