//! Stark-shift model, spectral-diffusion square-root law and field-noise
//! propagation for a single quadratic-response emitter.
//!
//! All spectroscopic quantities are in linear frequency (MHz) and all fields
//! in kV/cm. The shift coefficients `kappa_*` are polarizability differences
//! divided by Planck's constant, in MHz/(kV/cm)^2.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};

/// Emitter model: ZPL frequency, Stark response and brightness.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MoleculeModel {
    /// Unperturbed ZPL frequency, THz.
    pub nu_zpl_thz: f64,
    /// Quadratic shift coefficient along x, MHz/(kV/cm)^2.
    pub kappa_xx: f64,
    /// Quadratic shift coefficient along y, MHz/(kV/cm)^2 (normally 0).
    pub kappa_yy: f64,
    /// Quadratic shift coefficient along z, MHz/(kV/cm)^2.
    pub kappa_zz: f64,
    /// Linear (dipole-difference) coefficient along x, MHz/(kV/cm).
    pub d_x: f64,
    /// Linear (dipole-difference) coefficient along z, MHz/(kV/cm).
    pub d_z: f64,
    /// Intrinsic local offset field along x, kV/cm.
    pub e0_x: f64,
    /// Intrinsic local offset field along z, kV/cm.
    pub e0_z: f64,
    /// Natural (Lorentzian) FWHM, MHz.
    pub gamma0_mhz: f64,
    /// On-resonance detected count rate, counts/s.
    pub peak_rate: f64,
    /// Combined Debye-Waller x quantum-yield brightness factor, in (0, 1].
    pub dw_qy: f64,
}

impl Default for MoleculeModel {
    /// A DBT:Ac-like emitter: 381 THz ZPL, kappa_xx = 1.82 MHz/(kV/cm)^2,
    /// Fourier-limited 40 MHz linewidth.
    fn default() -> Self {
        MoleculeModel {
            nu_zpl_thz: 381.0,
            kappa_xx: 1.82,
            kappa_yy: 0.0,
            kappa_zz: 0.0,
            d_x: 0.0,
            d_z: 0.0,
            e0_x: 0.0,
            e0_z: 0.0,
            gamma0_mhz: 40.0,
            peak_rate: 20_000.0,
            dw_qy: 0.35,
        }
    }
}

impl MoleculeModel {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_xx < 0.0 || self.kappa_yy < 0.0 || self.kappa_zz < 0.0 {
            return Err(StarkError::InvalidParameter(
                "kappa_xx, kappa_yy, kappa_zz must be >= 0".into(),
            ));
        }
        if !(self.gamma0_mhz > 0.0) {
            return Err(StarkError::InvalidParameter("gamma0_mhz must be > 0".into()));
        }
        if self.peak_rate < 0.0 {
            return Err(StarkError::InvalidParameter("peak_rate must be >= 0".into()));
        }
        if !(self.dw_qy > 0.0 && self.dw_qy <= 1.0) {
            return Err(StarkError::InvalidParameter("dw_qy must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// In-plane / vertical electric field components, kV/cm.
///
/// The y component is excluded: the in-plane polarizability orthogonal to the
/// molecule axis is negligible for the planar emitters modeled here.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldVector {
    pub e_x: f64,
    pub e_z: f64,
}

impl FieldVector {
    pub fn new(e_x: f64, e_z: f64) -> Self {
        FieldVector { e_x, e_z }
    }
}

/// Stationary field-noise model with a fast and a slow Ornstein-Uhlenbeck
/// component per axis, plus a residual frequency-noise floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Field-noise standard deviation along x, kV/cm.
    pub sigma_ex: f64,
    /// Field-noise standard deviation along z, kV/cm.
    pub sigma_ez: f64,
    /// Correlation time of the fast component, s.
    pub tau_fast: f64,
    /// Correlation time of the slow component, s.
    pub tau_slow: f64,
    /// Weight of the fast component in the total variance, in [0, 1].
    pub w_fast: f64,
    /// Residual frequency-noise floor added in quadrature, MHz.
    pub sigma0_mhz: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_ex: 0.47,
            sigma_ez: 0.0,
            tau_fast: 0.2,
            tau_slow: 100.0,
            w_fast: 0.4,
            sigma0_mhz: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_ex < 0.0 || self.sigma_ez < 0.0 || self.sigma0_mhz < 0.0 {
            return Err(StarkError::InvalidParameter(
                "noise standard deviations must be >= 0".into(),
            ));
        }
        if !(self.tau_fast > 0.0 && self.tau_fast <= self.tau_slow) {
            return Err(StarkError::InvalidParameter(
                "need 0 < tau_fast <= tau_slow".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.w_fast) {
            return Err(StarkError::InvalidParameter("w_fast must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// A noiseless environment.
    pub fn none() -> Self {
        NoiseModel {
            sigma_ex: 0.0,
            sigma_ez: 0.0,
            ..NoiseModel::default()
        }
    }
}

/// Stark shift of the ZPL at local field `e`, MHz.
///
/// The offset field of the molecule is added to `e`; with zero dipole terms
/// the result is a concave paraboloid (red shift everywhere).
pub fn stark_shift(mol: &MoleculeModel, e: FieldVector) -> f64 {
    let ex = e.e_x + mol.e0_x;
    let ez = e.e_z + mol.e0_z;
    -mol.d_x * ex - mol.d_z * ez - mol.kappa_xx * ex * ex - mol.kappa_zz * ez * ez
}

/// Spectral-diffusion standard deviation at the operating point `e`, MHz.
///
/// Linearized propagation of the per-axis Gaussian field noise through the
/// shift paraboloid; contributions add in quadrature together with the
/// residual floor. The dipole terms do not enter (they are zero for the
/// centrosymmetric emitters this propagation is written for).
pub fn sd_sigma(mol: &MoleculeModel, e: FieldVector, noise: &NoiseModel) -> f64 {
    let ex = e.e_x + mol.e0_x;
    let ez = e.e_z + mol.e0_z;
    let sx = 2.0 * mol.kappa_xx * ex.abs() * noise.sigma_ex;
    let sz = 2.0 * mol.kappa_zz * ez.abs() * noise.sigma_ez;
    (sx * sx + sz * sz + noise.sigma0_mhz * noise.sigma0_mhz).sqrt()
}

/// Square-root law: SD standard deviation as a function of the shift
/// magnitude, with `a` the fitted kappa*sigma_E^2 product (MHz) and a floor
/// added in quadrature.
pub fn sqrt_law_sigma(shift_mag: f64, a: f64, sigma0: f64) -> Result<f64> {
    if shift_mag < 0.0 || a < 0.0 || sigma0 < 0.0 {
        return Err(StarkError::InvalidParameter(
            "sqrt_law_sigma requires shift_mag, a, sigma0 >= 0".into(),
        ));
    }
    Ok((4.0 * a * shift_mag + sigma0 * sigma0).sqrt())
}
