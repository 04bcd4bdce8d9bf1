//! Self-describing experiment scenarios: one structured config file declares
//! molecules, geometry, noise and charge dynamics plus an ordered action list
//! (set_voltage, scan, sweep, oss, egoss, wait), mirroring multi-step
//! measurement sequences such as sweep -> pump pulse -> sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarkError};
use crate::physics::{MoleculeModel, NoiseModel};
use crate::sim::{
    apply_egoss, apply_oss, relax_state, simulate_session, ChargeDynamics, ElectrodeGeometry,
    FieldState, ScanConfig, ScanTrace, SweepMap,
};

/// Per-step overrides of the scenario-level scan configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanOverrides {
    pub span_ghz: Option<f64>,
    pub n_sweeps: Option<usize>,
    pub center_offset_mhz: Option<f64>,
    pub inter_sweep_wait_s: Option<f64>,
}

impl ScanOverrides {
    /// Scan configuration with the overrides folded in.
    pub fn apply(&self, base: &ScanConfig) -> ScanConfig {
        let mut cfg = base.clone();
        if let Some(v) = self.span_ghz {
            cfg.span_ghz = v;
        }
        if let Some(v) = self.n_sweeps {
            cfg.n_sweeps = v;
        }
        if let Some(v) = self.center_offset_mhz {
            cfg.center_offset_mhz = v;
        }
        if let Some(v) = self.inter_sweep_wait_s {
            cfg.inter_sweep_wait_s = v;
        }
        cfg
    }
}

/// One step of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Set the electrode voltage for subsequent steps.
    SetVoltage { v: f64 },
    /// Excitation scan at the current voltage.
    Scan {
        #[serde(default, flatten)]
        overrides: ScanOverrides,
    },
    /// Excitation scans across a list of voltages.
    Sweep {
        voltages: Vec<f64>,
        #[serde(default, flatten)]
        overrides: ScanOverrides,
    },
    /// Zero-bias pump pulse.
    Oss {
        #[serde(default = "default_intensity")]
        intensity: f64,
        duration_s: f64,
    },
    /// Pump pulse under electrode bias.
    Egoss {
        v_bias: f64,
        #[serde(default = "default_intensity")]
        intensity: f64,
        duration_s: f64,
    },
    /// Dark time; trapped charges relax per the dynamics decay time.
    Wait { duration_s: f64 },
}

fn default_intensity() -> f64 {
    1.0
}

/// A full experiment description.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub geometry: ElectrodeGeometry,
    pub molecules: Vec<MoleculeModel>,
    pub noise: NoiseModel,
    pub dynamics: ChargeDynamics,
    pub scan: ScanConfig,
    pub actions: Vec<Action>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.molecules.is_empty() {
            return Err(StarkError::Config(
                "scenario declares no molecules".into(),
            ));
        }
        for (i, m) in self.molecules.iter().enumerate() {
            m.validate()
                .map_err(|e| StarkError::Config(format!("molecules[{i}]: {e}")))?;
        }
        self.noise
            .validate()
            .map_err(|e| StarkError::Config(format!("noise: {e}")))?;
        self.dynamics
            .validate()
            .map_err(|e| StarkError::Config(format!("dynamics: {e}")))?;
        self.scan
            .validate()
            .map_err(|e| StarkError::Config(format!("scan: {e}")))?;
        if self.actions.is_empty() {
            return Err(StarkError::Config("scenario declares no actions".into()));
        }
        for (i, a) in self.actions.iter().enumerate() {
            let err = |msg: String| Err(StarkError::Config(format!("actions[{i}]: {msg}")));
            match a {
                Action::SetVoltage { v } => {
                    if self.geometry.check_voltage(*v).is_err() {
                        return err(format!("voltage {v} outside the electrode range"));
                    }
                }
                Action::Sweep { voltages, .. } => {
                    if voltages.is_empty() {
                        return err("sweep declares no voltages".into());
                    }
                    for v in voltages {
                        if self.geometry.check_voltage(*v).is_err() {
                            return err(format!("voltage {v} outside the electrode range"));
                        }
                    }
                }
                Action::Oss {
                    intensity,
                    duration_s,
                }
                | Action::Egoss {
                    intensity,
                    duration_s,
                    ..
                } => {
                    if *intensity < 0.0 || *duration_s < 0.0 {
                        return err("intensity and duration must be >= 0".into());
                    }
                    if let Action::Egoss { v_bias, .. } = a {
                        if self.geometry.check_voltage(*v_bias).is_err() {
                            return err(format!("bias {v_bias} outside the electrode range"));
                        }
                    }
                }
                Action::Wait { duration_s } => {
                    if *duration_s < 0.0 {
                        return err("wait duration must be >= 0".into());
                    }
                }
                Action::Scan { .. } => {}
            }
        }
        Ok(())
    }
}

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "" => &["geometry", "molecules", "noise", "dynamics", "scan", "actions"],
        "geometry" => &["geometry_factor", "g_uncertainty", "voltage_range"],
        "molecules" => &[
            "nu_zpl_thz", "kappa_xx", "kappa_yy", "kappa_zz", "d_x", "d_z", "e0_x", "e0_z",
            "gamma0_mhz", "peak_rate", "dw_qy",
        ],
        "noise" => &["sigma_ex", "sigma_ez", "tau_fast", "tau_slow", "w_fast", "sigma0_mhz"],
        "dynamics" => &["k_screen", "r_z", "e_z_sat", "decay_time"],
        "scan" => &[
            "span_ghz", "scan_speed_ghz_s", "bin_time_s", "n_sweeps", "inter_sweep_wait_s",
            "seed", "center_offset_mhz", "background_frac",
        ],
        "actions" => &[
            "type", "v", "voltages", "v_bias", "intensity", "duration_s", "span_ghz",
            "n_sweeps", "center_offset_mhz", "inter_sweep_wait_s",
        ],
        _ => &[],
    }
}

fn collect_unknown_keys(table: &toml::Table, section: &str, path: &str, out: &mut Vec<String>) {
    let known = known_keys(section);
    for (key, value) in table {
        let here = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        if !known.contains(&key.as_str()) {
            out.push(here.clone());
            continue;
        }
        match value {
            toml::Value::Table(t) if section.is_empty() => {
                collect_unknown_keys(t, key, &here, out);
            }
            toml::Value::Array(items) if section.is_empty() => {
                for (i, item) in items.iter().enumerate() {
                    if let toml::Value::Table(t) = item {
                        collect_unknown_keys(t, key, &format!("{here}[{i}]"), out);
                    }
                }
            }
            _ => {}
        }
    }
}

/// Parse a scenario document.
///
/// Unknown keys are returned as warnings; with `strict` they fail the parse.
/// Semantic violations (negative widths, out-of-range voltages, ...) always
/// fail, naming the offending field.
pub fn parse_scenario(text: &str, strict: bool) -> Result<(Scenario, Vec<String>)> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| StarkError::Config(format!("{e}")))?;
    let mut unknown = Vec::new();
    collect_unknown_keys(&table, "", "", &mut unknown);
    let warnings: Vec<String> = unknown
        .iter()
        .map(|k| format!("unknown key `{k}`"))
        .collect();
    if strict && !warnings.is_empty() {
        return Err(StarkError::Config(format!(
            "strict mode: {}",
            warnings.join("; ")
        )));
    }
    let scenario: Scenario = toml::Value::Table(table)
        .try_into()
        .map_err(|e| StarkError::Config(format!("{e}")))?;
    scenario.validate()?;
    Ok((scenario, warnings))
}

/// Output of one scenario step.
#[derive(Debug, Clone)]
pub enum StepOutput {
    /// `scan` steps: the traces of one session.
    Traces(Vec<ScanTrace>),
    /// `sweep` steps: a per-voltage map.
    Map(SweepMap),
    /// State-changing steps: the field state afterwards.
    State(FieldState),
}

/// One executed step, tagged with its index and action name.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub index: usize,
    pub kind: &'static str,
    pub output: StepOutput,
}

/// Execute a scenario: actions run in order against one owned field state,
/// and every scan/sweep draws from a fresh RNG stream block so that step
/// outputs are independent of how they are later processed.
///
/// `seed_override` replaces the scan seed from the file when given.
pub fn run_scenario(scenario: &Scenario, seed_override: Option<u64>) -> Result<Vec<StepResult>> {
    scenario.validate()?;
    let mut cfg_base = scenario.scan.clone();
    if let Some(seed) = seed_override {
        cfg_base.seed = seed;
    }
    let mut state = FieldState::default();
    let mut stream: u64 = 0;
    let mut results = Vec::with_capacity(scenario.actions.len());
    for (index, action) in scenario.actions.iter().enumerate() {
        let result = match action {
            Action::SetVoltage { v } => {
                state.v_applied = *v;
                StepResult {
                    index,
                    kind: "set_voltage",
                    output: StepOutput::State(state),
                }
            }
            Action::Scan { overrides } => {
                let cfg = overrides.apply(&cfg_base);
                let traces = simulate_session(
                    &scenario.molecules,
                    &state,
                    &scenario.noise,
                    &scenario.geometry,
                    &cfg,
                    stream,
                )?;
                stream += cfg.n_sweeps as u64;
                StepResult {
                    index,
                    kind: "scan",
                    output: StepOutput::Traces(traces),
                }
            }
            Action::Sweep { voltages, overrides } => {
                let cfg = overrides.apply(&cfg_base);
                let mut sessions = Vec::with_capacity(voltages.len());
                for &v in voltages {
                    let st = FieldState {
                        v_applied: v,
                        ..state
                    };
                    sessions.push(simulate_session(
                        &scenario.molecules,
                        &st,
                        &scenario.noise,
                        &scenario.geometry,
                        &cfg,
                        stream,
                    )?);
                    stream += cfg.n_sweeps as u64;
                }
                StepResult {
                    index,
                    kind: "sweep",
                    output: StepOutput::Map(SweepMap {
                        voltages: voltages.clone(),
                        traces: sessions,
                        molecule_ids: (0..scenario.molecules.len())
                            .map(|i| format!("mol{i}"))
                            .collect(),
                    }),
                }
            }
            Action::Oss {
                intensity,
                duration_s,
            } => {
                state = apply_oss(&state, &scenario.dynamics, *intensity, *duration_s)?;
                StepResult {
                    index,
                    kind: "oss",
                    output: StepOutput::State(state),
                }
            }
            Action::Egoss {
                v_bias,
                intensity,
                duration_s,
            } => {
                state = apply_egoss(
                    &state,
                    &scenario.dynamics,
                    *intensity,
                    *v_bias,
                    *duration_s,
                    &scenario.geometry,
                )?;
                StepResult {
                    index,
                    kind: "egoss",
                    output: StepOutput::State(state),
                }
            }
            Action::Wait { duration_s } => {
                state = relax_state(&state, &scenario.dynamics, *duration_s);
                StepResult {
                    index,
                    kind: "wait",
                    output: StepOutput::State(state),
                }
            }
        };
        results.push(result);
    }
    Ok(results)
}
