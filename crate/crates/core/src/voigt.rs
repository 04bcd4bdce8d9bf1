//! Voigt lineshape: unit-area convolution of a Lorentzian with a Gaussian.
//!
//! The profile is evaluated through the real part of the Faddeeva function
//! w(z), which is accurate to close to machine precision over the whole
//! parameter range used here. The closed-form FWHM combination is kept for
//! fast reporting only and is never used inside fits of raw profiles.

use num_complex::Complex;

use crate::error::{Result, StarkError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// 8 ln 2: square of the Gaussian FWHM / sigma ratio.
pub const EIGHT_LN2: f64 = 5.545177444479562;

/// Unit-area Voigt density at detuning `delta` (MHz), for a Lorentzian FWHM
/// `gamma` and Gaussian standard deviation `sigma` (both MHz).
///
/// Collapses to the pure Lorentzian (sigma = 0) or pure Gaussian (gamma = 0)
/// limits; fails if both widths are zero.
pub fn voigt_value(delta: f64, gamma: f64, sigma: f64) -> Result<f64> {
    if gamma < 0.0 || sigma < 0.0 {
        return Err(StarkError::InvalidParameter(
            "voigt_value requires gamma >= 0 and sigma >= 0".into(),
        ));
    }
    if gamma == 0.0 && sigma == 0.0 {
        return Err(StarkError::DegenerateProfile);
    }
    Ok(voigt_density(delta, gamma, sigma))
}

/// Voigt density without the argument checks, for use in fit inner loops.
pub(crate) fn voigt_density(delta: f64, gamma: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        // Unit-area Lorentzian with FWHM gamma.
        let hw = gamma / 2.0;
        return hw / (std::f64::consts::PI * (delta * delta + hw * hw));
    }
    if gamma == 0.0 {
        let t = delta / sigma;
        return (-0.5 * t * t).exp() / (sigma * TWO_PI.sqrt());
    }
    let z = Complex::new(delta, gamma / 2.0) / (sigma * SQRT_2);
    let w = errorfunctions::w_with_relerror(z, 0.0);
    w.re / (sigma * TWO_PI.sqrt())
}

/// Closed-form Voigt FWHM (Whiting combination), MHz.
///
/// Documented approximation, good to a few tenths of a percent against the
/// numeric half-maximum width of [`voigt_value`].
pub fn voigt_fwhm(gamma: f64, sigma: f64) -> f64 {
    let half = gamma / 2.0;
    half + (half * half + EIGHT_LN2 * sigma * sigma).sqrt()
}

/// Gaussian sigma that reproduces a given Voigt FWHM at fixed Lorentzian
/// width, by inverting the Whiting combination. Returns 0 when the requested
/// FWHM is at or below the Lorentzian width.
pub fn sigma_from_fwhm(fwhm: f64, gamma: f64) -> f64 {
    let s2 = fwhm * (fwhm - gamma) / EIGHT_LN2;
    if s2 > 0.0 {
        s2.sqrt()
    } else {
        0.0
    }
}
