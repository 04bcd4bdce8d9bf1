//! Command-line surface for the starktune toolkit: scenario simulation,
//! fitting, calibration, planning and plot-ready reports, each run recorded
//! in a manifest with input/output digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use starktune::fit::{
    fit_parabola, fit_sweep_lines, fit_voigt, integrate_traces, parabola_points, PeakFitConfig,
};
use starktune::plan::{
    calibrate_anisotropy, calibration_to_model, plan_min_sd, AnisotropyCalibration,
    TuningConstraints,
};
use starktune::scenario::{parse_scenario, Action, Scenario, StepOutput, StepResult};
use starktune::sim::{simulate_session, sweep_stream_base, ElectrodeGeometry, FieldState, SweepMap};
use starktune::{io, StarkError};

#[derive(Parser)]
#[command(name = "starktune", version, about = "Stark-tuned emitter toolkit")]
struct Cli {
    /// Output directory (overridden by STARKTUNE_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed override for simulations.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject unknown config keys instead of warning.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads for independent sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write traces / maps.
    Simulate {
        #[command(subcommand)]
        what: SimCmd,
    },
    /// Fit recorded data.
    Fit {
        #[command(subcommand)]
        what: FitCmd,
    },
    /// Per-axis SD products from a measured (vertex, x-shift, z-shift) triple.
    Calibrate(CalibrateArgs),
    /// Minimal-SD operating point for a target frequency shift.
    Plan(PlanArgs),
    /// Plot-ready comma-separated tables.
    Report {
        #[command(subcommand)]
        what: ReportCmd,
    },
    /// Schema- and semantics-check a scenario file.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum SimCmd {
    /// Write the scan-step traces of a scenario.
    Scan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the sweep-step maps of a scenario.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write every step output of a scenario.
    Scenario {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum FitCmd {
    /// Voigt line fit of an integrated trace file.
    Voigt {
        #[arg(long)]
        input: PathBuf,
        /// Fix the Lorentzian FWHM, MHz.
        #[arg(long)]
        fix_gamma: Option<f64>,
    },
    /// Stark-parabola fit of a sweep-map file.
    Parabola {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fix_gamma: Option<f64>,
        /// Voltage-to-field factor, (kV/cm)/V.
        #[arg(long, default_value_t = 1.6)]
        geometry_factor: f64,
        /// Absolute uncertainty of the geometry factor.
        #[arg(long, default_value_t = 0.0)]
        g_uncertainty: f64,
    },
    /// Square-root-law fit of a shift_MHz,sigma_MHz table.
    Sdlaw {
        #[arg(long)]
        input: PathBuf,
        /// Shift coefficient used to also report the field noise sigma_E.
        #[arg(long)]
        kappa: Option<f64>,
    },
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    sigma_base: f64,
    #[arg(long)]
    sigma_x: f64,
    #[arg(long)]
    shift_x: f64,
    #[arg(long)]
    sigma_z: f64,
    #[arg(long)]
    shift_z: f64,
}

#[derive(Args)]
struct PlanArgs {
    /// Target frequency shift, MHz (negative = red).
    #[arg(long, allow_hyphen_values = true)]
    target: f64,
    /// Calibration document (from `calibrate`).
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, default_value_t = 160.0)]
    e_x_max: f64,
    #[arg(long, default_value_t = 60.0)]
    e_z_max: f64,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Integrated spectrum: detuning_MHz,counts.
    Spectrum {
        #[arg(long)]
        input: PathBuf,
    },
    /// Line centers per voltage: voltage_V,center_MHz,center_err_MHz.
    Parabola {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fix_gamma: Option<f64>,
    },
    /// SD against shift from the vertex: shift_MHz,sigma_MHz,sigma_err_MHz.
    Sdlaw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        fix_gamma: Option<f64>,
        #[arg(long, default_value_t = 1.6)]
        geometry_factor: f64,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    seed: Option<u64>,
    version: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    wall_clock_s: f64,
}

/// Files produced and consumed by one run, digested into the manifest.
struct Run {
    out_dir: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    fn new(out: &Option<PathBuf>) -> Result<Self, StarkError> {
        let out_dir = std::env::var_os("STARKTUNE_OUT")
            .map(PathBuf::from)
            .or_else(|| out.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out_dir)?;
        Ok(Run {
            out_dir,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out_dir.join(name);
        self.outputs.push(path.clone());
        path
    }

    fn finish(self, seed: Option<u64>) -> Result<(), StarkError> {
        let digest_map = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>, StarkError> {
            let mut map = BTreeMap::new();
            for p in paths {
                map.insert(p.display().to_string(), sha256_file(p)?);
            }
            Ok(map)
        };
        let manifest = RunManifest {
            command: std::env::args().collect::<Vec<_>>().join(" "),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: digest_map(&self.inputs)?,
            outputs: digest_map(&self.outputs)?,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        io::write_json(&self.out_dir.join("run_manifest.json"), &manifest)
    }
}

fn sha256_file(path: &Path) -> Result<String, StarkError> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn load_scenario(path: &Path, strict: bool) -> Result<(Scenario, Vec<String>), StarkError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StarkError::Config(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, strict)
}

/// Scenario executor with a worker pool over the independent sessions of
/// sweep steps; identical output to the sequential core runner.
fn run_scenario_parallel(
    scenario: &Scenario,
    seed: Option<u64>,
) -> Result<Vec<StepResult>, StarkError> {
    // sequential pass for the state evolution; sweep sessions fan out
    let has_sweep = scenario
        .actions
        .iter()
        .any(|a| matches!(a, Action::Sweep { .. }));
    if !has_sweep {
        return starktune::scenario::run_scenario(scenario, seed);
    }
    // replicate the stream accounting of the sequential runner, then replace
    // each sweep map with a parallel recomputation
    let mut results = starktune::scenario::run_scenario(scenario, seed)?;
    let mut cfg_base = scenario.scan.clone();
    if let Some(s) = seed {
        cfg_base.seed = s;
    }
    let mut stream: u64 = 0;
    let mut state = FieldState::default();
    for (action, result) in scenario.actions.iter().zip(results.iter_mut()) {
        match action {
            Action::SetVoltage { v } => state.v_applied = *v,
            Action::Scan { overrides } => {
                stream += overrides.apply(&cfg_base).n_sweeps as u64;
            }
            Action::Sweep { voltages, overrides } => {
                let cfg = overrides.apply(&cfg_base);
                let base = stream;
                let sessions: Result<Vec<_>, StarkError> = voltages
                    .par_iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let st = FieldState {
                            v_applied: v,
                            ..state
                        };
                        simulate_session(
                            &scenario.molecules,
                            &st,
                            &scenario.noise,
                            &scenario.geometry,
                            &cfg,
                            base + sweep_stream_base(i, &cfg),
                        )
                    })
                    .collect();
                stream += (voltages.len() * cfg.n_sweeps) as u64;
                result.output = StepOutput::Map(SweepMap {
                    voltages: voltages.clone(),
                    traces: sessions?,
                    molecule_ids: (0..scenario.molecules.len())
                        .map(|i| format!("mol{i}"))
                        .collect(),
                });
            }
            Action::Oss { .. } | Action::Egoss { .. } | Action::Wait { .. } => {
                if let StepOutput::State(st) = &result.output {
                    state = *st;
                }
            }
        }
    }
    Ok(results)
}

fn simulate(what: &SimCmd, cli: &Cli) -> Result<(), StarkError> {
    let (config, filter) = match what {
        SimCmd::Scan { config } => (config, Some("scan")),
        SimCmd::Sweep { config } => (config, Some("sweep")),
        SimCmd::Scenario { config } => (config, None),
    };
    let (scenario, warnings) = load_scenario(config, cli.strict)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut run = Run::new(&cli.out)?;
    run.input(config);
    let results = run_scenario_parallel(&scenario, cli.seed)?;
    let bin_time = scenario.scan.bin_time_s;
    let mut wrote = 0usize;
    for step in &results {
        if filter.is_some_and(|f| f != step.kind) {
            continue;
        }
        match &step.output {
            StepOutput::Traces(traces) => {
                let path = run.output(&format!("step_{:03}_scan.csv", step.index));
                io::write_traces(&path, traces, bin_time)?;
                wrote += 1;
            }
            StepOutput::Map(map) => {
                let path = run.output(&format!("step_{:03}_sweep.csv", step.index));
                io::write_sweep_map(&path, map, bin_time)?;
                wrote += 1;
            }
            StepOutput::State(state) => {
                if filter.is_none() {
                    let path = run.output(&format!("step_{:03}_{}.json", step.index, step.kind));
                    io::write_json(&path, state)?;
                    wrote += 1;
                }
            }
        }
    }
    if wrote == 0 {
        return Err(StarkError::Config(format!(
            "scenario contains no {} steps",
            filter.unwrap_or("output")
        )));
    }
    let seed = cli.seed.or(Some(scenario.scan.seed));
    run.finish(seed)?;
    println!("wrote {wrote} step file(s)");
    Ok(())
}

fn read_xy_table(path: &Path, cols: [&str; 2]) -> Result<Vec<(f64, f64)>, StarkError> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| StarkError::Data(format!("{}: {e}", path.display())))?;
    let headers = r
        .headers()
        .map_err(|e| StarkError::Data(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != cols {
        return Err(StarkError::Data(format!(
            "expected header {cols:?}, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| StarkError::Data(e.to_string()))?;
        let parse = |j: usize| -> Result<f64, StarkError> {
            rec.get(j)
                .ok_or_else(|| StarkError::Data(format!("row {}: missing column", i + 2)))?
                .parse()
                .map_err(|e| StarkError::Data(format!("row {}: {e}", i + 2)))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SdLawReport {
    #[serde(flatten)]
    fit: starktune::fit::SqrtLawFit,
    sigma_e_kv_cm: Option<f64>,
    sigma_e_err: Option<f64>,
}

fn fit_cmd(what: &FitCmd, cli: &Cli) -> Result<(), StarkError> {
    let mut run = Run::new(&cli.out)?;
    match what {
        FitCmd::Voigt { input, fix_gamma } => {
            run.input(input);
            let traces = io::read_traces(input)?;
            let spec = integrate_traces(&traces)?;
            let fit = fit_voigt(&spec, *fix_gamma)?;
            io::write_json(&run.output("voigt_fit.json"), &fit)?;
            println!(
                "center = {:.2} +/- {:.2} MHz, gamma = {:.2} MHz, sigma = {:.2} +/- {:.2} MHz",
                fit.center_mhz, fit.center_err, fit.gamma_mhz, fit.sigma_mhz, fit.sigma_err
            );
        }
        FitCmd::Parabola {
            input,
            fix_gamma,
            geometry_factor,
            g_uncertainty,
        } => {
            run.input(input);
            let map = io::read_sweep_map(input)?;
            let cfg = PeakFitConfig {
                fix_gamma: *fix_gamma,
                ..PeakFitConfig::default()
            };
            let tracks = fit_sweep_lines(&map, &cfg)?;
            let track = tracks.first().ok_or(StarkError::NoPeak)?;
            let geom = ElectrodeGeometry {
                geometry_factor: *geometry_factor,
                g_uncertainty: *g_uncertainty,
                ..ElectrodeGeometry::default()
            };
            let fit = fit_parabola(&parabola_points(track), &geom)?;
            io::write_json(&run.output("parabola_fit.json"), &fit)?;
            println!(
                "kappa = {:.4} +/- {:.4} MHz/(kV/cm)^2, vertex at {:.2} V / {:.1} MHz",
                fit.kappa, fit.kappa_err, fit.vertex_voltage, fit.vertex_frequency_mhz
            );
        }
        FitCmd::Sdlaw { input, kappa } => {
            run.input(input);
            let points = read_xy_table(input, ["shift_MHz", "sigma_MHz"])?;
            let fit = starktune::fit::fit_sqrt_law(&points)?;
            let (sigma_e, sigma_e_err) = match kappa {
                Some(k) => {
                    let (s, e) = starktune::fit::extract_field_variance_with_err(
                        fit.a, fit.a_err, *k, 0.0,
                    )?;
                    (Some(s), Some(e))
                }
                None => (None, None),
            };
            println!("a = {:.4} +/- {:.4} MHz, sigma0 = {:.2} MHz", fit.a, fit.a_err, fit.sigma0_mhz);
            if let Some(s) = sigma_e {
                println!("sigma_E = {:.4} kV/cm", s);
            }
            let report = SdLawReport {
                fit,
                sigma_e_kv_cm: sigma_e,
                sigma_e_err,
            };
            io::write_json(&run.output("sdlaw_fit.json"), &report)?;
        }
    }
    run.finish(None)
}

fn calibrate(args: &CalibrateArgs, cli: &Cli) -> Result<(), StarkError> {
    let mut run = Run::new(&cli.out)?;
    let cal = calibrate_anisotropy(
        args.sigma_base,
        args.sigma_x,
        args.shift_x,
        args.sigma_z,
        args.shift_z,
    )?;
    io::write_json(&run.output("calibration.json"), &cal)?;
    println!(
        "a_x = {:.4} MHz, a_z = {:.4} MHz, increase ratio = {:.2}, post-shift ratio = {:.2}",
        cal.a_x, cal.a_z, cal.increase_ratio, cal.post_shift_ratio
    );
    run.finish(None)
}

fn plan_cmd(args: &PlanArgs, cli: &Cli) -> Result<(), StarkError> {
    let mut run = Run::new(&cli.out)?;
    run.input(&args.calibration);
    let cal: AnisotropyCalibration = io::read_json(&args.calibration)?;
    let (mol, noise) = calibration_to_model(&cal);
    // calibration planning happens in shift space: a field bound of
    // sqrt(s/a) kV-per-cm units corresponds to the axis shift budget s
    let constraints = TuningConstraints {
        e_x_max: args.e_x_max,
        e_z_max: args.e_z_max,
        ..TuningConstraints::default()
    };
    let plan = plan_min_sd(&mol, &noise, args.target, &constraints)?;
    io::write_json(&run.output("plan.json"), &plan)?;
    println!(
        "target {} MHz: predicted sigma = {:.1} MHz at (e_x, e_z) = ({:.3}, {:.3})",
        args.target, plan.predicted_sigma_mhz, plan.e_x, plan.e_z
    );
    run.finish(None)
}

fn report(what: &ReportCmd, cli: &Cli) -> Result<(), StarkError> {
    let mut run = Run::new(&cli.out)?;
    match what {
        ReportCmd::Spectrum { input } => {
            run.input(input);
            let traces = io::read_traces(input)?;
            let spec = integrate_traces(&traces)?;
            let path = run.output("spectrum.csv");
            let mut w = csv::Writer::from_path(&path)
                .map_err(|e| StarkError::Data(e.to_string()))?;
            w.write_record(["detuning_MHz", "counts"])
                .map_err(|e| StarkError::Data(e.to_string()))?;
            for (d, c) in spec.detunings_mhz.iter().zip(&spec.counts) {
                w.write_record([format!("{d}"), format!("{c}")])
                    .map_err(|e| StarkError::Data(e.to_string()))?;
            }
            w.flush()?;
        }
        ReportCmd::Parabola { input, fix_gamma } => {
            run.input(input);
            let map = io::read_sweep_map(input)?;
            let cfg = PeakFitConfig {
                fix_gamma: *fix_gamma,
                ..PeakFitConfig::default()
            };
            let tracks = fit_sweep_lines(&map, &cfg)?;
            let track = tracks.first().ok_or(StarkError::NoPeak)?;
            let path = run.output("parabola_points.csv");
            let mut w = csv::Writer::from_path(&path)
                .map_err(|e| StarkError::Data(e.to_string()))?;
            w.write_record(["voltage_V", "center_MHz", "center_err_MHz"])
                .map_err(|e| StarkError::Data(e.to_string()))?;
            for (v, c, e) in parabola_points(track) {
                w.write_record([format!("{v}"), format!("{c}"), format!("{e}")])
                    .map_err(|e| StarkError::Data(e.to_string()))?;
            }
            w.flush()?;
        }
        ReportCmd::Sdlaw {
            input,
            fix_gamma,
            geometry_factor,
        } => {
            run.input(input);
            let map = io::read_sweep_map(input)?;
            let cfg = PeakFitConfig {
                fix_gamma: *fix_gamma,
                ..PeakFitConfig::default()
            };
            let tracks = fit_sweep_lines(&map, &cfg)?;
            let track = tracks.first().ok_or(StarkError::NoPeak)?;
            let geom = ElectrodeGeometry {
                geometry_factor: *geometry_factor,
                ..ElectrodeGeometry::default()
            };
            let parabola = fit_parabola(&parabola_points(track), &geom)?;
            let path = run.output("sdlaw_points.csv");
            let mut w = csv::Writer::from_path(&path)
                .map_err(|e| StarkError::Data(e.to_string()))?;
            w.write_record(["shift_MHz", "sigma_MHz", "sigma_err_MHz"])
                .map_err(|e| StarkError::Data(e.to_string()))?;
            for (_, fit) in &track.points {
                let shift = (fit.center_mhz - parabola.vertex_frequency_mhz).abs();
                w.write_record([
                    format!("{shift}"),
                    format!("{}", fit.sigma_mhz),
                    format!("{}", fit.sigma_err),
                ])
                .map_err(|e| StarkError::Data(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    run.finish(None)
}

fn validate(config: &Path, cli: &Cli) -> Result<(), StarkError> {
    let (_, warnings) = load_scenario(config, cli.strict)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    println!("ok");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), StarkError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| StarkError::Config(format!("--jobs: {e}")))?;
    }
    match &cli.cmd {
        Cmd::Simulate { what } => simulate(what, cli),
        Cmd::Fit { what } => fit_cmd(what, cli),
        Cmd::Calibrate(args) => calibrate(args, cli),
        Cmd::Plan(args) => plan_cmd(args, cli),
        Cmd::Report { what } => report(what, cli),
        Cmd::Validate { config } => validate(config, cli),
    }
}

fn exit_code(err: &StarkError) -> u8 {
    match err {
        StarkError::Config(_) | StarkError::InvalidParameter(_) | StarkError::VoltageOutOfRange(..) => 2,
        StarkError::Data(_) | StarkError::Io(_) | StarkError::Csv(_) | StarkError::GridMismatch => 3,
        StarkError::FitFailed(_)
        | StarkError::NoPeak
        | StarkError::DegenerateProfile
        | StarkError::DegenerateLevels(_) => 4,
        StarkError::Infeasible(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
