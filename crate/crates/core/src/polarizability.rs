//! Perturbation-theory estimate of the polarizability-difference coefficient
//! from electronic level energies and transition dipole moments.
//!
//! The sum-over-states expression is evaluated in SI units and converted to
//! the spectroscopic convention used by the rest of the crate,
//! kappa = alpha/h in MHz/(kV/cm)^2.

use crate::error::{Result, StarkError};

/// CODATA 2018 elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// CODATA 2018 Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// One electronvolt, J (CODATA 2018, exact).
pub const EV: f64 = 1.602_176_634e-19;
/// One Debye, C m (1e-21 / c).
pub const DEBYE: f64 = 3.335_640_951_981_521e-30;

/// (alpha/h in Hz/(V/m)^2) -> MHz/(kV/cm)^2: 1e10 field conversion over 1e6.
const KAPPA_UNIT: f64 = 1e4;

/// Typical magnitude band for the in-plane coefficient of planar aromatic
/// emitters, MHz/(kV/cm)^2. Values outside are flagged, not rejected.
pub const TYPICAL_KAPPA_BAND: (f64, f64) = (0.2, 2.0);

/// Whether a coefficient falls outside the typical magnitude band.
pub fn outside_typical_band(kappa: f64) -> bool {
    kappa < TYPICAL_KAPPA_BAND.0 || kappa > TYPICAL_KAPPA_BAND.1
}

/// Electronic level energies (eV, index 0 = ground) and the symmetric matrix
/// of transition dipole magnitudes (Debye) along one molecular axis.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub energies_ev: Vec<f64>,
    pub dipoles_debye: Vec<Vec<f64>>,
}

impl LevelData {
    pub fn new(energies_ev: Vec<f64>, dipoles_debye: Vec<Vec<f64>>) -> Result<Self> {
        let data = LevelData {
            energies_ev,
            dipoles_debye,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.energies_ev.len();
        if n < 2 {
            return Err(StarkError::InvalidParameter(
                "at least two levels are required".into(),
            ));
        }
        for w in self.energies_ev.windows(2) {
            if !(w[1] > w[0]) {
                return Err(StarkError::DegenerateLevels(format!(
                    "energies must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.dipoles_debye.len() != n || self.dipoles_debye.iter().any(|r| r.len() != n) {
            return Err(StarkError::InvalidParameter(
                "dipole matrix must be n x n".into(),
            ));
        }
        for i in 0..n {
            if self.dipoles_debye[i][i] != 0.0 {
                return Err(StarkError::InvalidParameter(
                    "dipole matrix diagonal must be zero".into(),
                ));
            }
            for j in 0..n {
                let d = self.dipoles_debye[i][j];
                if d < 0.0 {
                    return Err(StarkError::InvalidParameter(
                        "dipole magnitudes must be >= 0".into(),
                    ));
                }
                if (d - self.dipoles_debye[j][i]).abs() > 1e-12 * d.abs().max(1.0) {
                    return Err(StarkError::InvalidParameter(
                        "dipole matrix must be symmetric".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Parse a plain-text level table.
    ///
    /// Lines starting with `#` are comments. One line `levels: e0 e1 ...`
    /// lists the energies in eV; every other non-empty line is a pair row
    /// `i j dipole_D`.
    pub fn from_table_str(text: &str) -> Result<Self> {
        let mut energies: Option<Vec<f64>> = None;
        let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("levels:") {
                let vals: std::result::Result<Vec<f64>, _> =
                    rest.split_whitespace().map(str::parse).collect();
                energies = Some(vals.map_err(|e| {
                    StarkError::Data(format!("line {}: bad energy list: {e}", lineno + 1))
                })?);
            } else {
                let mut it = line.split_whitespace();
                let parse_idx = |s: Option<&str>| -> Result<usize> {
                    s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                        StarkError::Data(format!("line {}: expected `i j dipole_D`", lineno + 1))
                    })
                };
                let i = parse_idx(it.next())?;
                let j = parse_idx(it.next())?;
                let d: f64 = it
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| {
                        StarkError::Data(format!("line {}: expected `i j dipole_D`", lineno + 1))
                    })?;
                pairs.push((i, j, d));
            }
        }
        let energies =
            energies.ok_or_else(|| StarkError::Data("missing `levels:` energy list".into()))?;
        let n = energies.len();
        let mut dipoles = vec![vec![0.0; n]; n];
        for (i, j, d) in pairs {
            if i >= n || j >= n {
                return Err(StarkError::Data(format!(
                    "pair ({i}, {j}) exceeds level count {n}"
                )));
            }
            dipoles[i][j] = d;
            dipoles[j][i] = d;
        }
        LevelData::new(energies, dipoles)
    }
}

/// Sum-over-states polarizability-difference coefficient, MHz/(kV/cm)^2.
///
/// Evaluates
/// `alpha = 1/2 [ sum_{n!=1} |d_1n|^2/(E_n - E_1) - sum_{n!=0} |d_0n|^2/(E_n - E_0) ]`
/// with dipoles in C m and energies in J, then converts via kappa = alpha/h.
/// The result may be negative; callers decide physicality.
pub fn alpha_sum_over_states(levels: &LevelData) -> Result<f64> {
    levels.validate()?;
    let n = levels.energies_ev.len();
    let e_j: Vec<f64> = levels.energies_ev.iter().map(|e| e * EV).collect();
    let d2 = |i: usize, j: usize| {
        let d = levels.dipoles_debye[i][j] * DEBYE;
        d * d
    };
    let mut excited = 0.0;
    let mut ground = 0.0;
    for m in 0..n {
        if m != 1 {
            let gap = e_j[m] - e_j[1];
            if gap == 0.0 {
                return Err(StarkError::DegenerateLevels(format!(
                    "level {m} degenerate with level 1"
                )));
            }
            excited += d2(1, m) / gap;
        }
        if m != 0 {
            let gap = e_j[m] - e_j[0];
            if gap == 0.0 {
                return Err(StarkError::DegenerateLevels(format!(
                    "level {m} degenerate with level 0"
                )));
            }
            ground += d2(0, m) / gap;
        }
    }
    let alpha_si = 0.5 * (excited - ground);
    Ok(alpha_si / PLANCK * KAPPA_UNIT)
}

/// Three-level truncation of the sum-over-states coefficient, MHz/(kV/cm)^2.
///
/// `d01`, `d12` in Debye; `e10 = E1 - E0` and `e21 = E2 - E1` in eV.
/// Assumes the 0-2 dipole vanishes by parity.
pub fn alpha_three_level(d01: f64, d12: f64, e10: f64, e21: f64) -> Result<f64> {
    if !(e10 > 0.0 && e21 > 0.0) {
        return Err(StarkError::InvalidParameter(
            "level gaps must be positive".into(),
        ));
    }
    let d01_si = d01 * DEBYE;
    let d12_si = d12 * DEBYE;
    let alpha_si = 0.5 * (d12_si * d12_si / (e21 * EV) - 2.0 * d01_si * d01_si / (e10 * EV));
    Ok(alpha_si / PLANCK * KAPPA_UNIT)
}
