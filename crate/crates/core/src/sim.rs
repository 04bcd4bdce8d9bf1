//! Monte-Carlo virtual laboratory: voltage-to-field mapping, correlated
//! field noise, photon-count excitation scans, voltage-sweep maps and the
//! trapped-charge (OSS / EGOSS) dynamics.
//!
//! All randomness flows from the scan seed, expanded into one counter-based
//! RNG stream per sweep. Traces are bit-identical for a given seed and
//! configuration regardless of how sessions are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};
use crate::physics::{stark_shift, FieldVector, MoleculeModel, NoiseModel};

/// Parametric replacement for the electrode field solver: a single
/// voltage-to-field factor plus the usable voltage range.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ElectrodeGeometry {
    /// Field per applied volt, (kV/cm)/V. Typical range 0.8 - 2.0.
    pub geometry_factor: f64,
    /// Absolute uncertainty on the geometry factor, used when propagating
    /// curvature uncertainties to shift coefficients.
    pub g_uncertainty: f64,
    /// Usable electrode voltage range [min, max], V.
    pub voltage_range: (f64, f64),
}

impl Default for ElectrodeGeometry {
    fn default() -> Self {
        ElectrodeGeometry {
            geometry_factor: 1.6,
            g_uncertainty: 0.0,
            voltage_range: (-100.0, 100.0),
        }
    }
}

impl ElectrodeGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.geometry_factor > 0.0) {
            return Err(StarkError::InvalidParameter(
                "geometry_factor must be > 0".into(),
            ));
        }
        if !(self.voltage_range.0 < self.voltage_range.1) {
            return Err(StarkError::InvalidParameter(
                "voltage_range must satisfy min < max".into(),
            ));
        }
        Ok(())
    }

    pub fn check_voltage(&self, v: f64) -> Result<()> {
        if v < self.voltage_range.0 || v > self.voltage_range.1 || !v.is_finite() {
            return Err(StarkError::VoltageOutOfRange(
                v,
                self.voltage_range.0,
                self.voltage_range.1,
            ));
        }
        Ok(())
    }
}

/// In-plane electrode field for an applied voltage, kV/cm.
pub fn field_from_voltage(v: f64, geom: &ElectrodeGeometry) -> Result<f64> {
    geom.validate()?;
    geom.check_voltage(v)?;
    Ok(geom.geometry_factor * v)
}

/// Controllable and persistent part of the field environment: the electrode
/// voltage plus the trapped-charge fields left behind by OSS / EGOSS pulses.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldState {
    /// Electrode voltage, V.
    pub v_applied: f64,
    /// Trapped-charge in-plane screening field, kV/cm.
    pub e_screen_x: f64,
    /// Trapped-charge vertical field, kV/cm.
    pub e_z_charge: f64,
}

/// Local field at the molecule (before its intrinsic offset, which is added
/// inside the physics core).
pub fn local_field(state: &FieldState, geom: &ElectrodeGeometry) -> FieldVector {
    FieldVector::new(
        geom.geometry_factor * state.v_applied + state.e_screen_x,
        state.e_z_charge,
    )
}

/// First-order trapped-charge dynamics: exponential screening of the
/// in-plane field under bias and saturating growth of the vertical field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ChargeDynamics {
    /// Screening rate constant, 1/(s * unit pump intensity).
    pub k_screen: f64,
    /// Vertical charge-field growth rate, (kV/cm)/(s * unit pump intensity).
    pub r_z: f64,
    /// Vertical saturation field, kV/cm.
    pub e_z_sat: f64,
    /// Slow relaxation time of trapped charges, s (hours-scale; infinite by
    /// default, i.e. persistent within a session).
    pub decay_time: f64,
}

impl Default for ChargeDynamics {
    fn default() -> Self {
        ChargeDynamics {
            // one 120 s pulse at unit intensity screens 90% of the field
            k_screen: (10f64).ln() / 120.0,
            r_z: 0.2,
            e_z_sat: 60.0,
            decay_time: f64::INFINITY,
        }
    }
}

impl ChargeDynamics {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_screen > 0.0 && self.r_z > 0.0 && self.e_z_sat > 0.0 && self.decay_time > 0.0)
        {
            return Err(StarkError::InvalidParameter(
                "charge dynamics parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Optical pulse with zero bias: the vertical charge field grows toward
/// saturation while any in-plane screening field relaxes toward zero.
pub fn apply_oss(
    state: &FieldState,
    dyn_: &ChargeDynamics,
    pump_intensity: f64,
    duration_s: f64,
) -> Result<FieldState> {
    pulse(state, dyn_, pump_intensity, 0.0, duration_s)
}

/// Optical pulse under an electrode bias: the in-plane local field relaxes
/// exponentially toward zero at the bias point (screening field toward
/// -g * v_bias) while the vertical charge field grows as in plain OSS.
pub fn apply_egoss(
    state: &FieldState,
    dyn_: &ChargeDynamics,
    pump_intensity: f64,
    v_bias: f64,
    duration_s: f64,
    geom: &ElectrodeGeometry,
) -> Result<FieldState> {
    geom.check_voltage(v_bias)?;
    pulse(state, dyn_, pump_intensity, geom.geometry_factor * v_bias, duration_s)
}

fn pulse(
    state: &FieldState,
    dyn_: &ChargeDynamics,
    pump_intensity: f64,
    e_bias: f64,
    duration_s: f64,
) -> Result<FieldState> {
    dyn_.validate()?;
    if duration_s < 0.0 {
        return Err(StarkError::InvalidParameter(
            "pulse duration must be >= 0".into(),
        ));
    }
    if pump_intensity < 0.0 {
        return Err(StarkError::InvalidParameter(
            "pump intensity must be >= 0".into(),
        ));
    }
    let mut out = *state;
    // closed-form exponential screening toward -e_bias
    let decay = (-dyn_.k_screen * pump_intensity * duration_s).exp();
    out.e_screen_x = -e_bias + (state.e_screen_x + e_bias) * decay;
    // saturating growth of the vertical field
    let tau_z = dyn_.e_z_sat / (dyn_.r_z * pump_intensity.max(f64::MIN_POSITIVE));
    let z_decay = if pump_intensity == 0.0 {
        1.0
    } else {
        (-duration_s / tau_z).exp()
    };
    out.e_z_charge = dyn_.e_z_sat - (dyn_.e_z_sat - state.e_z_charge) * z_decay;
    Ok(out)
}

/// Slow relaxation of the trapped-charge fields over dark time.
pub fn relax_state(state: &FieldState, dyn_: &ChargeDynamics, elapsed_s: f64) -> FieldState {
    if !dyn_.decay_time.is_finite() || elapsed_s <= 0.0 {
        return *state;
    }
    let decay = (-elapsed_s / dyn_.decay_time).exp();
    FieldState {
        v_applied: state.v_applied,
        e_screen_x: state.e_screen_x * decay,
        e_z_charge: state.e_z_charge * decay,
    }
}

/// Decomposed fast/slow Ornstein-Uhlenbeck field perturbation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoisePerturbation {
    pub fast_x: f64,
    pub slow_x: f64,
    pub fast_z: f64,
    pub slow_z: f64,
}

impl NoisePerturbation {
    pub fn total(&self) -> FieldVector {
        FieldVector::new(self.fast_x + self.slow_x, self.fast_z + self.slow_z)
    }

    /// Draw from the stationary distribution.
    pub fn stationary<R: Rng>(noise: &NoiseModel, rng: &mut R) -> Self {
        let draw = |sigma2: f64, rng: &mut R| -> f64 {
            if sigma2 > 0.0 {
                sigma2.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)
            } else {
                0.0
            }
        };
        let vx = noise.sigma_ex * noise.sigma_ex;
        let vz = noise.sigma_ez * noise.sigma_ez;
        NoisePerturbation {
            fast_x: draw(noise.w_fast * vx, rng),
            slow_x: draw((1.0 - noise.w_fast) * vx, rng),
            fast_z: draw(noise.w_fast * vz, rng),
            slow_z: draw((1.0 - noise.w_fast) * vz, rng),
        }
    }
}

/// Exact-discretization OU update of the perturbation over a step `dt`.
///
/// Each component keeps its stationary variance: x' = x e^(-dt/tau) +
/// sqrt(var (1 - e^(-2 dt/tau))) xi.
pub fn evolve_noise<R: Rng>(
    noise: &NoiseModel,
    dt: f64,
    prev: &NoisePerturbation,
    rng: &mut R,
) -> NoisePerturbation {
    debug_assert!(dt > 0.0);
    let step = |x: f64, tau: f64, var: f64, rng: &mut R| -> f64 {
        if var == 0.0 {
            return 0.0;
        }
        let decay = (-dt / tau).exp();
        x * decay
            + (var * (1.0 - decay * decay)).sqrt()
                * rng.sample::<f64, _>(rand_distr::StandardNormal)
    };
    let vx = noise.sigma_ex * noise.sigma_ex;
    let vz = noise.sigma_ez * noise.sigma_ez;
    NoisePerturbation {
        fast_x: step(prev.fast_x, noise.tau_fast, noise.w_fast * vx, rng),
        slow_x: step(prev.slow_x, noise.tau_slow, (1.0 - noise.w_fast) * vx, rng),
        fast_z: step(prev.fast_z, noise.tau_fast, noise.w_fast * vz, rng),
        slow_z: step(prev.slow_z, noise.tau_slow, (1.0 - noise.w_fast) * vz, rng),
    }
}

/// Excitation-scan configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Scanned span, GHz.
    pub span_ghz: f64,
    /// Laser scan speed, GHz/s.
    pub scan_speed_ghz_s: f64,
    /// Photon-count bin time, s.
    pub bin_time_s: f64,
    /// Number of repeated sweeps.
    pub n_sweeps: usize,
    /// Waiting time between sweeps, s.
    pub inter_sweep_wait_s: f64,
    /// Master seed; expands into one RNG stream per sweep.
    pub seed: u64,
    /// Detuning of the scan-window center from the unperturbed ZPL, MHz.
    pub center_offset_mhz: f64,
    /// Background count rate as a fraction of the (mean) peak rate.
    pub background_frac: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            span_ghz: 4.0,
            scan_speed_ghz_s: 0.5,
            bin_time_s: 0.01,
            n_sweeps: 1,
            inter_sweep_wait_s: 120.0,
            seed: 0,
            center_offset_mhz: 0.0,
            background_frac: 0.01,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.span_ghz > 0.0 && self.scan_speed_ghz_s > 0.0 && self.bin_time_s > 0.0) {
            return Err(StarkError::InvalidParameter(
                "span, scan_speed and bin_time must be > 0".into(),
            ));
        }
        if self.n_sweeps < 1 {
            return Err(StarkError::InvalidParameter("n_sweeps must be >= 1".into()));
        }
        if self.inter_sweep_wait_s < 0.0 || self.background_frac < 0.0 {
            return Err(StarkError::InvalidParameter(
                "inter_sweep_wait and background_frac must be >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn bins_per_sweep(&self) -> usize {
        let span_mhz = self.span_ghz * 1e3;
        let bin_width = self.scan_speed_ghz_s * 1e3 * self.bin_time_s;
        (span_mhz / bin_width).round().max(1.0) as usize
    }

    pub fn sweep_duration_s(&self) -> f64 {
        self.bins_per_sweep() as f64 * self.bin_time_s
    }
}

/// One photon-count excitation sweep. Detunings are relative to the
/// unperturbed ZPL, MHz.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanTrace {
    pub detunings_mhz: Vec<f64>,
    pub counts: Vec<u32>,
    pub start_time_s: f64,
    pub sweep_index: usize,
}

/// Per-voltage scan sessions over a shared detuning window.
#[derive(Debug, Clone)]
pub struct SweepMap {
    pub voltages: Vec<f64>,
    /// One session (n_sweeps traces) per voltage.
    pub traces: Vec<Vec<ScanTrace>>,
    pub molecule_ids: Vec<String>,
}

fn sweep_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulate one scan session (all sweeps of `cfg`) for a set of molecules
/// sharing the same field environment. `stream_base` offsets the per-sweep
/// RNG streams so independent sessions never share randomness.
pub fn simulate_session(
    mols: &[MoleculeModel],
    state: &FieldState,
    noise: &NoiseModel,
    geom: &ElectrodeGeometry,
    cfg: &ScanConfig,
    stream_base: u64,
) -> Result<Vec<ScanTrace>> {
    if mols.is_empty() {
        return Err(StarkError::InvalidParameter(
            "at least one molecule is required".into(),
        ));
    }
    for m in mols {
        m.validate()?;
    }
    noise.validate()?;
    geom.validate()?;
    geom.check_voltage(state.v_applied)?;
    cfg.validate()?;

    let local = local_field(state, geom);
    let n_bins = cfg.bins_per_sweep();
    let bin_width_mhz = cfg.scan_speed_ghz_s * 1e3 * cfg.bin_time_s;
    let window_start = cfg.center_offset_mhz - cfg.span_ghz * 1e3 / 2.0;
    let mean_rate: f64 = mols.iter().map(|m| m.peak_rate).sum::<f64>() / mols.len() as f64;
    let bg_rate = cfg.background_frac * mean_rate;

    let mut traces = Vec::with_capacity(cfg.n_sweeps);
    let mut pert = {
        let mut rng = sweep_rng(cfg.seed, stream_base);
        NoisePerturbation::stationary(noise, &mut rng)
    };
    let mut t = 0.0;
    for sweep in 0..cfg.n_sweeps {
        let mut rng = sweep_rng(cfg.seed, stream_base + sweep as u64);
        if sweep > 0 && cfg.inter_sweep_wait_s > 0.0 {
            pert = evolve_noise(noise, cfg.inter_sweep_wait_s, &pert, &mut rng);
            t += cfg.inter_sweep_wait_s;
        }
        let start_time = t;
        let mut detunings = Vec::with_capacity(n_bins);
        let mut counts = Vec::with_capacity(n_bins);
        for bin in 0..n_bins {
            pert = evolve_noise(noise, cfg.bin_time_s, &pert, &mut rng);
            let laser = window_start + (bin as f64 + 0.5) * bin_width_mhz;
            let e = FieldVector::new(
                local.e_x + pert.fast_x + pert.slow_x,
                local.e_z + pert.fast_z + pert.slow_z,
            );
            let mut rate = bg_rate;
            for mol in mols {
                let center = stark_shift(mol, e);
                let hw = mol.gamma0_mhz / 2.0;
                let d = laser - center;
                rate += mol.peak_rate * mol.dw_qy * hw * hw / (d * d + hw * hw);
            }
            let lambda = rate * cfg.bin_time_s;
            let n = if lambda > 0.0 {
                Poisson::new(lambda).expect("positive mean").sample(&mut rng) as u32
            } else {
                0
            };
            detunings.push(laser);
            counts.push(n);
            t += cfg.bin_time_s;
        }
        traces.push(ScanTrace {
            detunings_mhz: detunings,
            counts,
            start_time_s: start_time,
            sweep_index: sweep,
        });
    }
    Ok(traces)
}

/// Simulate a multi-sweep excitation scan of a single molecule.
pub fn simulate_scan(
    mol: &MoleculeModel,
    state: &FieldState,
    noise: &NoiseModel,
    geom: &ElectrodeGeometry,
    cfg: &ScanConfig,
) -> Result<Vec<ScanTrace>> {
    simulate_session(std::slice::from_ref(mol), state, noise, geom, cfg, 0)
}

/// Stream base for the session belonging to one voltage of a sweep map.
pub fn sweep_stream_base(voltage_index: usize, cfg: &ScanConfig) -> u64 {
    voltage_index as u64 * cfg.n_sweeps as u64
}

/// Simulate excitation scans at each voltage, summing the fluorescence of
/// all molecules into one trace per sweep.
pub fn simulate_sweep_map(
    mols: &[MoleculeModel],
    state: &FieldState,
    noise: &NoiseModel,
    geom: &ElectrodeGeometry,
    voltages: &[f64],
    cfg: &ScanConfig,
) -> Result<SweepMap> {
    if voltages.is_empty() {
        return Err(StarkError::InvalidParameter(
            "at least one voltage is required".into(),
        ));
    }
    let mut traces = Vec::with_capacity(voltages.len());
    for (i, &v) in voltages.iter().enumerate() {
        let st = FieldState {
            v_applied: v,
            ..*state
        };
        traces.push(simulate_session(
            mols,
            &st,
            noise,
            geom,
            cfg,
            sweep_stream_base(i, cfg),
        )?);
    }
    Ok(SweepMap {
        voltages: voltages.to_vec(),
        traces,
        molecule_ids: (0..mols.len()).map(|i| format!("mol{i}")).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::NoiseModel;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn field_from_voltage_range_bounds() {
        let mut geom = ElectrodeGeometry::default();
        assert_relative_eq!(field_from_voltage(100.0, &geom).unwrap(), 160.0);
        assert_eq!(field_from_voltage(0.0, &geom).unwrap(), 0.0);
        geom.geometry_factor = 0.8;
        assert_relative_eq!(field_from_voltage(-100.0, &geom).unwrap(), -80.0);
        assert!(field_from_voltage(150.0, &geom).is_err());
    }

    #[test]
    fn local_field_composition() {
        let geom = ElectrodeGeometry::default();
        let zero = FieldState::default();
        assert_eq!(local_field(&zero, &geom), FieldVector::new(0.0, 0.0));
        let screened = FieldState {
            v_applied: 100.0,
            e_screen_x: -160.0,
            e_z_charge: 0.0,
        };
        let f = local_field(&screened, &geom);
        assert_abs_diff_eq!(f.e_x, 0.0, epsilon = 1e-12);
        let mixed = FieldState {
            v_applied: -25.0,
            e_screen_x: 40.0,
            e_z_charge: 12.0,
        };
        let f = local_field(&mixed, &geom);
        assert_abs_diff_eq!(f.e_x, 0.0, epsilon = 1e-12);
        assert_eq!(f.e_z, 12.0);
    }

    #[test]
    fn oss_zero_duration_is_identity() {
        let state = FieldState {
            v_applied: 0.0,
            e_screen_x: -12.0,
            e_z_charge: 7.0,
        };
        let out = apply_oss(&state, &ChargeDynamics::default(), 1.0, 0.0).unwrap();
        assert_eq!(out, state);
        assert!(apply_oss(&state, &ChargeDynamics::default(), 1.0, -1.0).is_err());
    }

    #[test]
    fn oss_z_growth_monotone_and_bounded() {
        let dyn_ = ChargeDynamics::default();
        let mut state = FieldState::default();
        let mut prev = 0.0;
        for _ in 0..50 {
            state = apply_oss(&state, &dyn_, 1.0, 60.0).unwrap();
            assert!(state.e_z_charge > prev);
            assert!(state.e_z_charge < dyn_.e_z_sat);
            prev = state.e_z_charge;
        }
        assert!(prev > 0.95 * dyn_.e_z_sat);
    }

    #[test]
    fn egoss_screens_toward_bias_and_reverses() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let state = FieldState::default();
        // long pulse at +100 V: screening field approaches -160 kV/cm
        let out = apply_egoss(&state, &dyn_, 1.0, 100.0, 1200.0, &geom).unwrap();
        assert_abs_diff_eq!(out.e_screen_x, -160.0, epsilon = 1e-3);
        // reversal at -50 V moves the screening field the other way
        let back = apply_egoss(&out, &dyn_, 1.0, -50.0, 1200.0, &geom).unwrap();
        assert_abs_diff_eq!(back.e_screen_x, 80.0, epsilon = 1e-3);
        assert!(apply_egoss(&state, &dyn_, 1.0, 300.0, 10.0, &geom).is_err());
    }

    #[test]
    fn egoss_screening_never_overshoots() {
        let geom = ElectrodeGeometry::default();
        let dyn_ = ChargeDynamics::default();
        let mut state = FieldState {
            e_screen_x: 30.0,
            ..FieldState::default()
        };
        let target = -geom.geometry_factor * 80.0;
        let mut gap = (state.e_screen_x - target).abs();
        for _ in 0..40 {
            state = apply_egoss(&state, &dyn_, 1.0, 80.0, 7.0, &geom).unwrap();
            let new_gap = (state.e_screen_x - target).abs();
            assert!(new_gap <= gap + 1e-12);
            gap = new_gap;
        }
    }

    #[test]
    fn relax_state_decays_trapped_fields() {
        let dyn_ = ChargeDynamics {
            decay_time: 3600.0,
            ..ChargeDynamics::default()
        };
        let state = FieldState {
            v_applied: 5.0,
            e_screen_x: -100.0,
            e_z_charge: 40.0,
        };
        let out = relax_state(&state, &dyn_, 3600.0);
        assert_relative_eq!(out.e_screen_x, -100.0 * (-1f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(out.e_z_charge, 40.0 * (-1f64).exp(), max_relative = 1e-12);
        // infinite persistence by default
        let frozen = relax_state(&state, &ChargeDynamics::default(), 1e6);
        assert_eq!(frozen, state);
    }

    #[test]
    fn zero_sigma_noise_is_identically_zero() {
        let noise = NoiseModel {
            sigma_ex: 0.0,
            sigma_ez: 0.0,
            ..NoiseModel::default()
        };
        let mut rng = sweep_rng(1, 0);
        let mut pert = NoisePerturbation::stationary(&noise, &mut rng);
        for _ in 0..100 {
            pert = evolve_noise(&noise, 0.01, &pert, &mut rng);
            assert_eq!(pert.total(), FieldVector::new(0.0, 0.0));
        }
    }

    #[test]
    fn ou_stationary_variance() {
        // Monte-Carlo chain variance vs the analytic stationary moment.
        let noise = NoiseModel {
            sigma_ex: 0.47,
            sigma_ez: 0.0,
            tau_fast: 0.2,
            tau_slow: 5.0,
            w_fast: 0.4,
            sigma0_mhz: 0.0,
        };
        let mut rng = sweep_rng(7, 0);
        let mut pert = NoisePerturbation::stationary(&noise, &mut rng);
        let dt = 0.05;
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            pert = evolve_noise(&noise, dt, &pert, &mut rng);
            let x = pert.fast_x + pert.slow_x;
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert_relative_eq!(var, 0.47 * 0.47, max_relative = 0.01);
    }

    #[test]
    fn ou_autocorrelation_at_one_tau() {
        // Single-component chain: lag-tau autocorrelation must be e^-1.
        let noise = NoiseModel {
            sigma_ex: 1.0,
            sigma_ez: 0.0,
            tau_fast: 0.5,
            tau_slow: 0.5,
            w_fast: 1.0,
            sigma0_mhz: 0.0,
        };
        let mut rng = sweep_rng(11, 0);
        let mut pert = NoisePerturbation::stationary(&noise, &mut rng);
        let dt = 0.05;
        let lag = (noise.tau_fast / dt).round() as usize;
        let n = 2_000_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            pert = evolve_noise(&noise, dt, &pert, &mut rng);
            xs.push(pert.fast_x);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let cov = xs
            .windows(lag + 1)
            .map(|w| (w[0] - mean) * (w[lag] - mean))
            .sum::<f64>()
            / (n - lag) as f64;
        let rho = cov / var;
        assert_abs_diff_eq!(rho, (-1f64).exp(), epsilon = 0.02 * (-1f64).exp() + 0.005);
    }

    #[test]
    fn scan_is_seed_deterministic() {
        let mol = MoleculeModel::default();
        let state = FieldState::default();
        let noise = NoiseModel::default();
        let geom = ElectrodeGeometry::default();
        let cfg = ScanConfig {
            span_ghz: 1.0,
            n_sweeps: 3,
            inter_sweep_wait_s: 1.0,
            seed: 99,
            ..ScanConfig::default()
        };
        let a = simulate_scan(&mol, &state, &noise, &geom, &cfg).unwrap();
        let b = simulate_scan(&mol, &state, &noise, &geom, &cfg).unwrap();
        assert_eq!(a, b);
        let cfg2 = ScanConfig { seed: 100, ..cfg };
        let c = simulate_scan(&mol, &state, &noise, &geom, &cfg2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sweep_map_sessions_are_order_independent() {
        let mols = vec![MoleculeModel::default()];
        let state = FieldState::default();
        let noise = NoiseModel::default();
        let geom = ElectrodeGeometry::default();
        let cfg = ScanConfig {
            span_ghz: 1.0,
            seed: 5,
            ..ScanConfig::default()
        };
        let voltages = [-20.0, 0.0, 20.0];
        let map = simulate_sweep_map(&mols, &state, &noise, &geom, &voltages, &cfg).unwrap();
        // re-simulating any single voltage session reproduces the map entry
        for (i, &v) in voltages.iter().enumerate().rev() {
            let st = FieldState {
                v_applied: v,
                ..state
            };
            let solo =
                simulate_session(&mols, &st, &noise, &geom, &cfg, sweep_stream_base(i, &cfg))
                    .unwrap();
            assert_eq!(solo, map.traces[i]);
        }
    }

    #[test]
    fn counts_scale_with_bin_time_and_rate() {
        let mol = MoleculeModel {
            peak_rate: 50_000.0,
            ..MoleculeModel::default()
        };
        let state = FieldState::default();
        let noise = NoiseModel::none();
        let geom = ElectrodeGeometry::default();
        let base = ScanConfig {
            span_ghz: 1.0,
            seed: 3,
            ..ScanConfig::default()
        };
        let total = |cfg: &ScanConfig, mol: &MoleculeModel| -> f64 {
            simulate_scan(mol, &state, &noise, &geom, cfg).unwrap()[0]
                .counts
                .iter()
                .map(|&c| c as f64)
                .sum()
        };
        let t1 = total(&base, &mol);
        let double_bin = ScanConfig {
            bin_time_s: 0.02,
            ..base.clone()
        };
        // same dwell per MHz but twice the bin time halves the bin count;
        // totals are unchanged, so compare expected totals per bin instead
        let t2 = total(&double_bin, &mol);
        assert_relative_eq!(t2, t1, max_relative = 0.05);
        let bright = MoleculeModel {
            peak_rate: 100_000.0,
            ..mol.clone()
        };
        let t3 = total(&base, &bright);
        assert_relative_eq!(t3, 2.0 * t1, max_relative = 0.05);
    }

    #[test]
    fn noiseless_scan_line_is_at_predicted_center() {
        let mol = MoleculeModel::default();
        let geom = ElectrodeGeometry::default();
        let state = FieldState {
            v_applied: -20.0,
            ..FieldState::default()
        };
        let shift = stark_shift(&mol, local_field(&state, &geom));
        let cfg = ScanConfig {
            span_ghz: 2.0,
            center_offset_mhz: shift,
            seed: 12,
            ..ScanConfig::default()
        };
        let traces = simulate_scan(&mol, &state, &NoiseModel::none(), &geom, &cfg).unwrap();
        let trace = &traces[0];
        let peak_bin = trace
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .unwrap()
            .0;
        let peak_detuning = trace.detunings_mhz[peak_bin];
        assert_abs_diff_eq!(peak_detuning, shift, epsilon = 3.0 * mol.gamma0_mhz);
    }
}
