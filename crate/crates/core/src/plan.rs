//! Minimal-spectral-diffusion tuning: isofrequency geometry, constrained
//! choice of the operating field point, pump-pulse schedule synthesis and
//! anisotropy calibration from measured SD triples.
//!
//! All planning happens in the pure quadratic picture (no linear Stark
//! terms): on an isofrequency locus the SD variance is linear in the split
//! of the shift between the two axes, so the optimum is a corner of the
//! feasible split interval and can be written down exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};
use crate::physics::{sd_sigma, stark_shift, FieldVector, MoleculeModel, NoiseModel};
use crate::sim::{ChargeDynamics, ElectrodeGeometry, FieldState};

/// Default shift tolerance, MHz: about one natural linewidth, the resonance
/// criterion for two-emitter experiments.
pub const SHIFT_TOLERANCE_MHZ: f64 = 50.0;

/// Physical limits the plan must respect.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConstraints {
    /// Largest usable |e_x|, kV/cm.
    pub e_x_max: f64,
    /// Largest usable |e_z|, kV/cm.
    pub e_z_max: f64,
    /// Hold the electrode at this voltage if set; informational for
    /// schedule synthesis.
    pub fixed_voltage: Option<f64>,
    /// Allowed |shift(chosen) - target|, MHz.
    pub shift_tolerance_mhz: f64,
}

impl Default for TuningConstraints {
    fn default() -> Self {
        TuningConstraints {
            e_x_max: 160.0,
            e_z_max: 60.0,
            fixed_voltage: None,
            shift_tolerance_mhz: SHIFT_TOLERANCE_MHZ,
        }
    }
}

impl TuningConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_x_max > 0.0 && self.e_z_max > 0.0 && self.shift_tolerance_mhz > 0.0) {
            return Err(StarkError::InvalidParameter(
                "field maxima and shift tolerance must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One pump-pulse step of a tuning schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EgossStep {
    pub v_bias: f64,
    /// Pump intensity relative to the reference used in [`ChargeDynamics`].
    pub intensity: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EgossSchedule {
    pub steps: Vec<EgossStep>,
}

impl EgossSchedule {
    pub fn total_duration_s(&self) -> f64 {
        self.steps.iter().map(|s| s.duration_s).sum()
    }
}

/// Result of [`plan_min_sd`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningPlan {
    pub target_shift_mhz: f64,
    /// Chosen operating field, kV/cm.
    pub e_x: f64,
    pub e_z: f64,
    pub predicted_sigma_mhz: f64,
    pub schedule: EgossSchedule,
    pub feasible: bool,
}

fn require_quadratic(mol: &MoleculeModel) -> Result<()> {
    if mol.d_x != 0.0 || mol.d_z != 0.0 {
        return Err(StarkError::InvalidParameter(
            "planning requires a pure quadratic model; fold linear terms into the offset field"
                .into(),
        ));
    }
    Ok(())
}

/// Points on the isofrequency locus kappa_xx (e_x + e0_x)^2 + kappa_zz
/// (e_z + e0_z)^2 = |target|, returned as applied fields (offsets folded in).
///
/// With one vanishing curvature the ellipse degenerates to a pair of lines;
/// these are sampled over a span set by the non-degenerate intercept.
pub fn isofrequency_locus(
    mol: &MoleculeModel,
    target_shift_mhz: f64,
    n_points: usize,
) -> Result<Vec<FieldVector>> {
    mol.validate()?;
    require_quadratic(mol)?;
    if mol.kappa_xx == 0.0 && mol.kappa_zz == 0.0 {
        return Err(StarkError::InvalidParameter(
            "kappa_xx and kappa_zz cannot both be zero".into(),
        ));
    }
    if target_shift_mhz > 0.0 {
        return Err(StarkError::Infeasible(
            "a quadratic red-shift model cannot produce positive shifts".into(),
        ));
    }
    if n_points == 0 {
        return Err(StarkError::InvalidParameter("n_points must be >= 1".into()));
    }
    let t = -target_shift_mhz;
    if t == 0.0 {
        return Ok(vec![FieldVector::new(-mol.e0_x, -mol.e0_z)]);
    }
    let fold = |exp: f64, ezp: f64| FieldVector::new(exp - mol.e0_x, ezp - mol.e0_z);
    let mut out = Vec::with_capacity(n_points);
    if mol.kappa_xx > 0.0 && mol.kappa_zz > 0.0 {
        let a = (t / mol.kappa_xx).sqrt();
        let b = (t / mol.kappa_zz).sqrt();
        for i in 0..n_points {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n_points as f64;
            out.push(fold(a * theta.cos(), b * theta.sin()));
        }
    } else if mol.kappa_zz == 0.0 {
        let a = (t / mol.kappa_xx).sqrt();
        let half = n_points.div_ceil(2);
        for i in 0..n_points {
            let (sign, k, m) = if i < half {
                (1.0, i, half)
            } else {
                (-1.0, i - half, n_points - half)
            };
            let frac = if m > 1 { k as f64 / (m - 1) as f64 } else { 0.5 };
            out.push(fold(sign * a, a * (2.0 * frac - 1.0)));
        }
    } else {
        let b = (t / mol.kappa_zz).sqrt();
        let half = n_points.div_ceil(2);
        for i in 0..n_points {
            let (sign, k, m) = if i < half {
                (1.0, i, half)
            } else {
                (-1.0, i - half, n_points - half)
            };
            let frac = if m > 1 { k as f64 / (m - 1) as f64 } else { 0.5 };
            out.push(fold(b * (2.0 * frac - 1.0), sign * b));
        }
    }
    Ok(out)
}

/// Reachable shift interval [s_min, s_max] of one axis given curvature,
/// offset field and a symmetric applied-field bound.
fn axis_shift_range(kappa: f64, e0: f64, e_max: f64) -> (f64, f64) {
    if kappa == 0.0 {
        return (0.0, 0.0);
    }
    let reach = e_max + e0.abs();
    let s_max = kappa * reach * reach;
    let s_min = if e0.abs() <= e_max {
        0.0
    } else {
        let gap = e0.abs() - e_max;
        kappa * gap * gap
    };
    (s_min, s_max)
}

/// Applied field realizing an effective shift magnitude `s` on one axis,
/// chosen with the smaller |e| (negative root on ties).
fn field_for_shift(s: f64, kappa: f64, e0: f64, e_max: f64) -> f64 {
    if kappa == 0.0 || s <= 0.0 {
        return (-e0).clamp(-e_max, e_max);
    }
    let eff = (s / kappa).sqrt();
    let cand = [eff - e0, -eff - e0];
    let pick = if cand[0].abs() < cand[1].abs() - 1e-12 {
        cand[0]
    } else if cand[1].abs() < cand[0].abs() - 1e-12 {
        cand[1]
    } else {
        cand[1]
    };
    pick.clamp(-e_max, e_max)
}

/// Minimal-SD operating point for a target shift.
///
/// On the isofrequency locus the SD variance is sigma0^2 + 4 a_x s_x +
/// 4 a_z s_z with s_x + s_z = |target| and a_i = kappa_i sigma_ei^2, so the
/// minimum sits at a corner of the feasible split interval: the whole shift
/// goes to the axis with the smaller product a, pushed to the other axis only
/// when a box constraint binds. Ties prefer the x axis (electrode-only, no
/// pump exposure).
pub fn plan_min_sd(
    mol: &MoleculeModel,
    noise: &NoiseModel,
    target_shift_mhz: f64,
    constraints: &TuningConstraints,
) -> Result<TuningPlan> {
    mol.validate()?;
    noise.validate()?;
    constraints.validate()?;
    require_quadratic(mol)?;
    if target_shift_mhz > 0.0 {
        return Err(StarkError::Infeasible(
            "a quadratic red-shift model cannot produce positive shifts".into(),
        ));
    }
    let t = -target_shift_mhz;
    let (sx_min, sx_max) = axis_shift_range(mol.kappa_xx, mol.e0_x, constraints.e_x_max);
    let (sz_min, sz_max) = axis_shift_range(mol.kappa_zz, mol.e0_z, constraints.e_z_max);
    if sx_max + sz_max < t - constraints.shift_tolerance_mhz {
        return Err(StarkError::Infeasible(format!(
            "target shift {t:.1} MHz exceeds the {:.1} MHz reachable within e_x_max = {} and \
             e_z_max = {} kV/cm",
            sx_max + sz_max,
            constraints.e_x_max,
            constraints.e_z_max
        )));
    }
    if sx_min + sz_min > t + constraints.shift_tolerance_mhz {
        return Err(StarkError::Infeasible(format!(
            "offset fields force at least {:.1} MHz of shift, above the {t:.1} MHz target",
            sx_min + sz_min
        )));
    }
    // feasible x-share of the shift (clamped into the reachable band)
    let lo = sx_min.max(t - sz_max).min(sx_max);
    let hi = sx_max.min(t - sz_min).max(sx_min);
    let a_x = mol.kappa_xx * noise.sigma_ex * noise.sigma_ex;
    let a_z = mol.kappa_zz * noise.sigma_ez * noise.sigma_ez;
    let s_x = if a_x <= a_z { hi } else { lo };
    let s_z = (t - s_x).clamp(sz_min, sz_max);

    let e_x = field_for_shift(s_x, mol.kappa_xx, mol.e0_x, constraints.e_x_max);
    let e_z = field_for_shift(s_z, mol.kappa_zz, mol.e0_z, constraints.e_z_max);
    let chosen = FieldVector::new(e_x, e_z);
    let shift = stark_shift(mol, chosen);
    if (shift - target_shift_mhz).abs() > constraints.shift_tolerance_mhz {
        return Err(StarkError::Infeasible(format!(
            "closest reachable shift {shift:.1} MHz misses the target {target_shift_mhz:.1} MHz \
             by more than {:.1} MHz",
            constraints.shift_tolerance_mhz
        )));
    }
    Ok(TuningPlan {
        target_shift_mhz,
        e_x,
        e_z,
        predicted_sigma_mhz: sd_sigma(mol, chosen, noise),
        schedule: EgossSchedule::default(),
        feasible: true,
    })
}

/// Pump-pulse schedule that drives the local field from `start` to the
/// plan's operating point, evaluated at `operating_voltage_v`.
///
/// The first-order dynamics are inverted in closed form: the pulse duration
/// follows from the required z growth, the bias from the screening
/// exponential. A single constant-bias pulse is complete for this model:
/// the z field depends only on the total exposure, and given that exposure
/// the screening reach of any bias sequence is bounded by the constant pulse
/// at the voltage-range limit, so a target is either landed by one pulse or
/// not at all.
pub fn synthesize_schedule(
    plan: &TuningPlan,
    dyn_: &ChargeDynamics,
    geom: &ElectrodeGeometry,
    operating_voltage_v: f64,
    start: &FieldState,
) -> Result<EgossSchedule> {
    dyn_.validate()?;
    geom.validate()?;
    geom.check_voltage(operating_voltage_v)?;
    if !plan.feasible {
        return Err(StarkError::Infeasible("plan is not feasible".into()));
    }
    let tol = 0.01; // kV/cm
    let g = geom.geometry_factor;
    let screen_target = plan.e_x - g * operating_voltage_v;
    let z_target = plan.e_z;
    let z0 = start.e_z_charge;
    let s0 = start.e_screen_x;

    if (screen_target - s0).abs() <= tol && (z_target - z0).abs() <= tol {
        return Ok(EgossSchedule::default());
    }
    if z_target < z0 - tol {
        return Err(StarkError::Infeasible(format!(
            "the z charge field only grows under exposure; cannot reduce it from {z0:.2} to \
             {z_target:.2} kV/cm"
        )));
    }
    if z_target >= dyn_.e_z_sat - tol && (z_target - dyn_.e_z_sat).abs() > tol {
        return Err(StarkError::Infeasible(format!(
            "z target {z_target:.2} kV/cm is beyond the saturation field {:.2} kV/cm",
            dyn_.e_z_sat
        )));
    }
    let (v_lo, v_hi) = geom.voltage_range;
    let bias_reach = g * v_lo.abs().max(v_hi.abs());
    if screen_target.abs() > bias_reach + tol {
        return Err(StarkError::Infeasible(format!(
            "screening target {screen_target:.2} kV/cm is outside the +/-{bias_reach:.2} kV/cm \
             reachable within the voltage range"
        )));
    }

    let intensity = 1.0;
    // exposure time fixed by the z growth; when z needs no change, use the
    // largest window whose z drift stays inside the tolerance (or, if z is
    // already saturated, a 99%-settling screening window)
    let t_total = if (z_target - z0).abs() <= tol {
        if z0 >= dyn_.e_z_sat - tol {
            -(0.01f64).ln() / (dyn_.k_screen * intensity)
        } else {
            let frac = (dyn_.e_z_sat - z0 - tol) / (dyn_.e_z_sat - z0);
            -(frac.ln()) * dyn_.e_z_sat / (dyn_.r_z * intensity)
        }
    } else {
        let frac = (dyn_.e_z_sat - z_target) / (dyn_.e_z_sat - z0);
        -(frac.ln()) * dyn_.e_z_sat / (dyn_.r_z * intensity)
    };
    let k = dyn_.k_screen * intensity;
    let beta = (-k * t_total).exp();
    // single pulse: screen' = -e_b + (s0 + e_b) beta
    let e_b = (s0 * beta - screen_target) / (1.0 - beta);
    let v_b = e_b / g;
    if v_b < v_lo || v_b > v_hi {
        return Err(StarkError::Infeasible(format!(
            "the {t_total:.1} s exposure window set by the z target cannot reach the screening \
             target within the [{v_lo}, {v_hi}] V bias range (needs {v_b:.1} V)"
        )));
    }
    Ok(EgossSchedule {
        steps: vec![EgossStep {
            v_bias: v_b,
            intensity,
            duration_s: t_total,
        }],
    })
}

/// Per-axis spectral-diffusion products calibrated from a measured triple
/// (vertex SD, x-shifted SD, z-shifted SD).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnisotropyCalibration {
    /// kappa_xx sigma_ex^2, MHz.
    pub a_x: f64,
    /// kappa_zz sigma_ez^2, MHz.
    pub a_z: f64,
    /// Vertex SD shared by both branches, MHz.
    pub sigma0_mhz: f64,
    /// sigma_x / sigma_z at the measured shifts.
    pub post_shift_ratio: f64,
    /// (sigma_x - sigma0) / (sigma_z - sigma0).
    pub increase_ratio: f64,
}

/// Calibrate the per-axis products from a vertex SD and one shifted SD per
/// axis: a = (sigma^2 - sigma0^2) / (4 shift).
pub fn calibrate_anisotropy(
    sigma_base: f64,
    sigma_x: f64,
    shift_x: f64,
    sigma_z: f64,
    shift_z: f64,
) -> Result<AnisotropyCalibration> {
    if sigma_base < 0.0 || shift_x <= 0.0 || shift_z <= 0.0 {
        return Err(StarkError::InvalidParameter(
            "sigma_base must be >= 0 and shifts > 0".into(),
        ));
    }
    if sigma_x <= sigma_base {
        return Err(StarkError::InvalidParameter(
            "sigma_x must exceed sigma_base".into(),
        ));
    }
    if sigma_z < sigma_base {
        return Err(StarkError::InvalidParameter(
            "sigma_z must be >= sigma_base".into(),
        ));
    }
    let a_x = (sigma_x * sigma_x - sigma_base * sigma_base) / (4.0 * shift_x);
    let a_z = (sigma_z * sigma_z - sigma_base * sigma_base) / (4.0 * shift_z);
    let increase = if sigma_z > sigma_base {
        (sigma_x - sigma_base) / (sigma_z - sigma_base)
    } else {
        f64::INFINITY
    };
    Ok(AnisotropyCalibration {
        a_x,
        a_z,
        sigma0_mhz: sigma_base,
        post_shift_ratio: sigma_x / sigma_z,
        increase_ratio: increase,
    })
}

/// Equivalent quadratic model and noise for planning directly from a
/// calibration: unit field-noise sigmas and curvatures equal to the products.
pub fn calibration_to_model(cal: &AnisotropyCalibration) -> (MoleculeModel, NoiseModel) {
    let mol = MoleculeModel {
        kappa_xx: cal.a_x,
        kappa_zz: cal.a_z,
        d_x: 0.0,
        d_z: 0.0,
        e0_x: 0.0,
        e0_z: 0.0,
        ..MoleculeModel::default()
    };
    let noise = NoiseModel {
        sigma_ex: 1.0,
        sigma_ez: 1.0,
        sigma0_mhz: cal.sigma0_mhz,
        ..NoiseModel::none()
    };
    (mol, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{apply_egoss, local_field};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic_mol(kxx: f64, kzz: f64) -> MoleculeModel {
        MoleculeModel {
            kappa_xx: kxx,
            kappa_zz: kzz,
            d_x: 0.0,
            d_z: 0.0,
            e0_x: 0.0,
            e0_z: 0.0,
            ..MoleculeModel::default()
        }
    }

    #[test]
    fn locus_x_intercepts() {
        let mol = quadratic_mol(1.82, 0.3);
        let pts = isofrequency_locus(&mol, -18200.0, 4).unwrap();
        // theta = 0 gives the positive x intercept at 100 kV/cm
        assert_relative_eq!(pts[0].e_x, 100.0, max_relative = 1e-12);
        assert_abs_diff_eq!(pts[0].e_z, 0.0, epsilon = 1e-9);
        for p in &pts {
            assert_relative_eq!(stark_shift(&mol, *p), -18200.0, max_relative = 1e-10);
        }
    }

    #[test]
    fn locus_zero_target_single_point() {
        let mol = MoleculeModel {
            e0_x: 5.0,
            d_x: 0.0,
            d_z: 0.0,
            ..quadratic_mol(1.82, 0.3)
        };
        let pts = isofrequency_locus(&mol, 0.0, 16).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0], FieldVector::new(-5.0, 0.0));
    }

    #[test]
    fn locus_degenerate_vertical_lines() {
        let mol = quadratic_mol(1.82, 0.0);
        let pts = isofrequency_locus(&mol, -1820.0, 10).unwrap();
        let a = (1820.0f64 / 1.82).sqrt();
        for p in &pts {
            assert_relative_eq!(p.e_x.abs(), a, max_relative = 1e-12);
            assert_relative_eq!(stark_shift(&mol, *p), -1820.0, max_relative = 1e-12);
        }
        assert!(pts.iter().any(|p| p.e_x > 0.0) && pts.iter().any(|p| p.e_x < 0.0));
    }

    #[test]
    fn locus_rejects_positive_target_and_linear_model() {
        let mol = quadratic_mol(1.82, 0.3);
        assert!(matches!(
            isofrequency_locus(&mol, 100.0, 8),
            Err(StarkError::Infeasible(_))
        ));
        let linear = MoleculeModel {
            d_x: 10.0,
            ..quadratic_mol(1.82, 0.3)
        };
        assert!(isofrequency_locus(&linear, -100.0, 8).is_err());
    }

    #[test]
    fn plan_prefers_low_noise_axis() {
        // a_z < a_x: everything on z
        let mol = quadratic_mol(1.82, 0.3);
        let noise = NoiseModel {
            sigma_ex: 0.47,
            sigma_ez: 0.1,
            sigma0_mhz: 70.0,
            ..NoiseModel::none()
        };
        let cons = TuningConstraints {
            e_z_max: 300.0,
            ..TuningConstraints::default()
        };
        let plan = plan_min_sd(&mol, &noise, -14000.0, &cons).unwrap();
        assert_abs_diff_eq!(plan.e_x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(
            stark_shift(&mol, FieldVector::new(plan.e_x, plan.e_z)),
            -14000.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn plan_reproduces_calibrated_triple_sigma() {
        let cal = calibrate_anisotropy(70.0, 269.0, 13000.0, 86.0, 14000.0).unwrap();
        assert_relative_eq!(cal.a_x, 1.297326923076923, max_relative = 1e-12);
        assert_relative_eq!(cal.a_z, 0.044571428571428574, max_relative = 1e-12);
        let (mol, noise) = calibration_to_model(&cal);
        let cons = TuningConstraints {
            e_x_max: 1e6,
            e_z_max: 1e6,
            ..TuningConstraints::default()
        };
        let plan = plan_min_sd(&mol, &noise, -14000.0, &cons).unwrap();
        assert_abs_diff_eq!(plan.e_x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(plan.predicted_sigma_mhz, 86.0, epsilon = 1e-9);
    }

    #[test]
    fn plan_tie_break_prefers_x() {
        let mol = quadratic_mol(1.0, 1.0);
        let noise = NoiseModel {
            sigma_ex: 0.3,
            sigma_ez: 0.3,
            sigma0_mhz: 10.0,
            ..NoiseModel::none()
        };
        let plan = plan_min_sd(&mol, &noise, -1000.0, &TuningConstraints::default()).unwrap();
        assert_abs_diff_eq!(plan.e_z, 0.0, epsilon = 1e-9);
        assert!(plan.e_x.abs() > 0.0);
    }

    #[test]
    fn plan_infeasible_names_constraints() {
        let mol = quadratic_mol(1.82, 0.3);
        let noise = NoiseModel::none();
        let cons = TuningConstraints {
            e_x_max: 10.0,
            e_z_max: 10.0,
            ..TuningConstraints::default()
        };
        let err = plan_min_sd(&mol, &noise, -100000.0, &cons).unwrap_err();
        match err {
            StarkError::Infeasible(msg) => {
                assert!(msg.contains("e_x_max") && msg.contains("e_z_max"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plan_constrained_matches_grid_oracle() {
        // e_z_max forces part of the shift onto x; compare to a dense grid
        let mol = quadratic_mol(1.82, 0.3);
        let noise = NoiseModel {
            sigma_ex: 0.47,
            sigma_ez: 0.1,
            sigma0_mhz: 70.0,
            ..NoiseModel::none()
        };
        let cons = TuningConstraints {
            e_x_max: 160.0,
            e_z_max: (7000.0f64 / 0.3).sqrt(), // caps z at half the shift
            ..TuningConstraints::default()
        };
        let plan = plan_min_sd(&mol, &noise, -14000.0, &cons).unwrap();
        let oracle = grid_oracle(&mol, &noise, -14000.0, &cons, 400);
        assert!(plan.predicted_sigma_mhz <= oracle + 0.1);
        assert_relative_eq!(
            stark_shift(&mol, FieldVector::new(plan.e_x, plan.e_z)),
            -14000.0,
            max_relative = 1e-9
        );
    }

    /// Dense sampling of the constrained locus: minimum sd_sigma over the
    /// ellipse parameter with fields clipped to the box (clipped points are
    /// dropped when they leave the locus).
    fn grid_oracle(
        mol: &MoleculeModel,
        noise: &NoiseModel,
        target: f64,
        cons: &TuningConstraints,
        n: usize,
    ) -> f64 {
        let t = -target;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            let s_x = t * i as f64 / n as f64;
            let s_z = t - s_x;
            let e_x = field_for_shift(s_x, mol.kappa_xx, mol.e0_x, cons.e_x_max);
            let e_z = field_for_shift(s_z, mol.kappa_zz, mol.e0_z, cons.e_z_max);
            let f = FieldVector::new(e_x, e_z);
            // keep only points that stay on the locus after box clipping
            if (stark_shift(mol, f) - target).abs() > 1e-6 {
                continue;
            }
            best = best.min(sd_sigma(mol, f, noise));
        }
        best
    }

    #[test]
    fn plan_optimal_on_randomized_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut planned = 0;
        for _ in 0..100 {
            let mol = quadratic_mol(rng.gen_range(0.1..2.0), rng.gen_range(0.0..1.0));
            let noise = NoiseModel {
                sigma_ex: rng.gen_range(0.0..1.0),
                sigma_ez: rng.gen_range(0.0..1.0),
                sigma0_mhz: rng.gen_range(0.0..100.0),
                ..NoiseModel::none()
            };
            let cons = TuningConstraints {
                e_x_max: rng.gen_range(20.0..200.0),
                e_z_max: rng.gen_range(20.0..200.0),
                ..TuningConstraints::default()
            };
            let target = -rng.gen_range(100.0..20000.0);
            match plan_min_sd(&mol, &noise, target, &cons) {
                Ok(plan) => {
                    let oracle = grid_oracle(&mol, &noise, target, &cons, 400);
                    assert!(
                        plan.predicted_sigma_mhz <= oracle + 0.1,
                        "plan {} vs oracle {oracle}",
                        plan.predicted_sigma_mhz
                    );
                    planned += 1;
                }
                Err(StarkError::Infeasible(_)) => {
                    // target beyond the box; the oracle must agree
                    let (_, sx_max) = axis_shift_range(mol.kappa_xx, mol.e0_x, cons.e_x_max);
                    let (_, sz_max) = axis_shift_range(mol.kappa_zz, mol.e0_z, cons.e_z_max);
                    assert!(sx_max + sz_max < -target + cons.shift_tolerance_mhz);
                }
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        assert!(planned > 50, "too few feasible instances: {planned}");
    }

    proptest! {
        #[test]
        fn predicted_sigma_monotone_in_target(
            frac in 0.05f64..0.95,
            kxx in 0.3f64..2.0,
            kzz in 0.01f64..1.0,
            sx in 0.05f64..1.0,
            sz in 0.05f64..1.0,
        ) {
            let mol = quadratic_mol(kxx, kzz);
            let noise = NoiseModel {
                sigma_ex: sx,
                sigma_ez: sz,
                sigma0_mhz: 50.0,
                ..NoiseModel::none()
            };
            let cons = TuningConstraints::default();
            let (_, sx_max) = axis_shift_range(kxx, 0.0, cons.e_x_max);
            let (_, sz_max) = axis_shift_range(kzz, 0.0, cons.e_z_max);
            let big = -(sx_max + sz_max) * 0.9;
            let small = big * frac;
            let p_small = plan_min_sd(&mol, &noise, small, &cons).unwrap();
            let p_big = plan_min_sd(&mol, &noise, big, &cons).unwrap();
            prop_assert!(p_small.predicted_sigma_mhz <= p_big.predicted_sigma_mhz + 1e-9);
        }
    }

    #[test]
    fn calibration_round_trip_identity() {
        // generate the triple from known products, calibrate back
        let (a_x, a_z, sigma0) = (1.297f64, 0.0446f64, 70.0f64);
        let sigma_x = (sigma0 * sigma0 + 4.0 * a_x * 13000.0).sqrt();
        let sigma_z = (sigma0 * sigma0 + 4.0 * a_z * 14000.0).sqrt();
        let cal = calibrate_anisotropy(sigma0, sigma_x, 13000.0, sigma_z, 14000.0).unwrap();
        assert_relative_eq!(cal.a_x, a_x, max_relative = 1e-13);
        assert_relative_eq!(cal.a_z, a_z, max_relative = 1e-13);
    }

    #[test]
    fn calibration_reference_triple_ratios() {
        let cal = calibrate_anisotropy(70.0, 269.0, 13000.0, 86.0, 14000.0).unwrap();
        assert_abs_diff_eq!(cal.post_shift_ratio, 3.1279, epsilon = 1e-4);
        assert_abs_diff_eq!(cal.increase_ratio, 12.4375, epsilon = 1e-4);
    }

    #[test]
    fn calibration_zero_increase_gives_zero_a() {
        let cal = calibrate_anisotropy(70.0, 269.0, 13000.0, 70.0, 14000.0).unwrap();
        assert_eq!(cal.a_z, 0.0);
        assert!(cal.increase_ratio.is_infinite());
    }

    #[test]
    fn calibration_rejects_ordering_violations() {
        assert!(calibrate_anisotropy(70.0, 60.0, 13000.0, 86.0, 14000.0).is_err());
        assert!(calibrate_anisotropy(70.0, 269.0, 13000.0, 60.0, 14000.0).is_err());
        assert!(calibrate_anisotropy(70.0, 269.0, 0.0, 86.0, 14000.0).is_err());
    }

    #[test]
    fn schedule_empty_when_already_at_target() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let v_op = -25.0;
        let start = FieldState {
            v_applied: v_op,
            e_screen_x: -10.0,
            e_z_charge: 20.0,
        };
        let plan = TuningPlan {
            target_shift_mhz: 0.0,
            e_x: geom.geometry_factor * v_op - 10.0,
            e_z: 20.0,
            predicted_sigma_mhz: 0.0,
            schedule: EgossSchedule::default(),
            feasible: true,
        };
        let sched = synthesize_schedule(&plan, &dyn_, &geom, v_op, &start).unwrap();
        assert!(sched.steps.is_empty());
    }

    #[test]
    fn schedule_single_pulse_lands_both_targets() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let v_op = -25.0;
        let start = FieldState::default();
        let plan = TuningPlan {
            target_shift_mhz: -5000.0,
            e_x: geom.geometry_factor * v_op - 30.0, // screen target -30
            e_z: 25.0,
            predicted_sigma_mhz: 0.0,
            schedule: EgossSchedule::default(),
            feasible: true,
        };
        let sched = synthesize_schedule(&plan, &dyn_, &geom, v_op, &start).unwrap();
        assert_eq!(sched.steps.len(), 1);
        let mut st = start;
        for step in &sched.steps {
            st = apply_egoss(&st, &dyn_, step.intensity, step.v_bias, step.duration_s, &geom).unwrap();
        }
        st.v_applied = v_op;
        let f = local_field(&st, &geom);
        assert_abs_diff_eq!(f.e_x, plan.e_x, epsilon = 0.05);
        assert_abs_diff_eq!(f.e_z, plan.e_z, epsilon = 0.05);
    }

    #[test]
    fn schedule_infeasible_when_z_window_too_short() {
        let geom = ElectrodeGeometry::default();
        // very fast z growth: the exposure window is too short for screening
        let dyn_ = ChargeDynamics {
            r_z: 50.0,
            ..ChargeDynamics::default()
        };
        let plan = TuningPlan {
            target_shift_mhz: -5000.0,
            e_x: -150.0,
            e_z: 50.0,
            predicted_sigma_mhz: 0.0,
            schedule: EgossSchedule::default(),
            feasible: true,
        };
        let err =
            synthesize_schedule(&plan, &dyn_, &geom, 0.0, &FieldState::default()).unwrap_err();
        match err {
            StarkError::Infeasible(msg) => assert!(msg.contains("bias range"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn schedule_screen_only_at_z_saturation() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let start = FieldState {
            v_applied: 0.0,
            e_screen_x: 0.0,
            e_z_charge: dyn_.e_z_sat,
        };
        let plan = TuningPlan {
            target_shift_mhz: -5000.0,
            e_x: -40.0,
            e_z: dyn_.e_z_sat,
            predicted_sigma_mhz: 0.0,
            schedule: EgossSchedule::default(),
            feasible: true,
        };
        let sched = synthesize_schedule(&plan, &dyn_, &geom, 0.0, &start).unwrap();
        assert_eq!(sched.steps.len(), 1);
        let st = apply_egoss(
            &start,
            &dyn_,
            sched.steps[0].intensity,
            sched.steps[0].v_bias,
            sched.steps[0].duration_s,
            &geom,
        )
        .unwrap();
        let f = local_field(&st, &geom);
        assert_abs_diff_eq!(f.e_x, plan.e_x, epsilon = 0.05);
        assert_abs_diff_eq!(f.e_z, plan.e_z, epsilon = 0.05);
    }

    #[test]
    fn schedule_infeasible_cases() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let mk_plan = |e_x: f64, e_z: f64| TuningPlan {
            target_shift_mhz: 0.0,
            e_x,
            e_z,
            predicted_sigma_mhz: 0.0,
            schedule: EgossSchedule::default(),
            feasible: true,
        };
        // z beyond saturation
        assert!(matches!(
            synthesize_schedule(&mk_plan(0.0, 100.0), &dyn_, &geom, 0.0, &FieldState::default()),
            Err(StarkError::Infeasible(_))
        ));
        // z reduction impossible
        let charged = FieldState {
            e_z_charge: 30.0,
            ..FieldState::default()
        };
        assert!(matches!(
            synthesize_schedule(&mk_plan(0.0, 10.0), &dyn_, &geom, 0.0, &charged),
            Err(StarkError::Infeasible(_))
        ));
        // screening target outside the bias reach
        assert!(matches!(
            synthesize_schedule(&mk_plan(-500.0, 10.0), &dyn_, &geom, 0.0, &FieldState::default()),
            Err(StarkError::Infeasible(_))
        ));
    }
}
