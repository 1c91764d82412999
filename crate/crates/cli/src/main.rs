//! `nnredux` command-line front end.
//!
//! Exit codes: 0 safe/ok, 1 unknown verdict, 2 precondition failure,
//! 3 refinement budget exceeded, 4 bad configuration or input files.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nnredux::acc::{acc_benchmark, AccConfig, SynthesisConfig};
use nnredux::closed_loop::{reach_nncs, verify_with_outputs, ControllerChoice, NncsReach, ReachConfig, Verdict};
use nnredux::network::{load_network, save_network};
use nnredux::ode::StepConfig;
use nnredux::reach::{Grid, PartitionConfig, Refinement};
use nnredux::reduction::{augment, precision, InflationMode};
use nnredux::sim::{containment_audit, simulate, write_trajectories_csv, SimConfig};
use nnredux::{Activation, ActivationSpec, IntervalBox, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{PlantConfig, ScenarioConfig, SCENARIO_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] nnredux::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Precondition(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use nnredux::Error as E;
        match self {
            CliError::Core(E::Budget { .. }) => 3,
            CliError::Core(E::Parse(_) | E::Io { .. } | E::Csv(_) | E::InvalidBox(_) | E::InvalidNetwork(_)) => 4,
            CliError::Core(_) | CliError::Precondition(_) => 2,
            CliError::Config(_) => 4,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "nnredux", version, about = "Guaranteed neural network model reduction and closed-loop reachability")]
struct Cli {
    /// Output directory for reports, tubes and the run manifest.
    #[arg(long, global = true, env = "NNREDUX_OUT", default_value = "nnredux-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InflationArg {
    /// Pad reduced outputs by rho.
    Sound,
    /// Pad reduced outputs by rho/2 (not sound in general).
    Paper,
}

impl From<InflationArg> for InflationMode {
    fn from(a: InflationArg) -> Self {
        match a {
            InflationArg::Sound => InflationMode::SoundFullRho,
            InflationArg::Paper => InflationMode::PaperHalfRho,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct PartitionArgs {
    /// Cells per input dimension (one value applies to all dimensions).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    splits: Vec<usize>,
    /// Bisect every grid cell along its widest dimension this many times.
    #[arg(long, default_value_t = 0)]
    bisect: u32,
    #[arg(long, default_value_t = nnredux::reach::DEFAULT_MAX_CELLS)]
    max_cells: usize,
}

impl PartitionArgs {
    fn config(&self) -> PartitionConfig {
        PartitionConfig {
            grid: Grid::Splits(self.splits.clone()),
            refinement: if self.bisect == 0 {
                Refinement::Uniform
            } else {
                Refinement::Bisection { depth: self.bisect }
            },
            max_cells: self.max_cells,
        }
    }
}

/// Overrides for values in the scenario file.
#[derive(Debug, Clone, Default, Args, Serialize)]
struct Overrides {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inflation: Option<InflationArg>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    splits: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_cells: Option<usize>,
}

impl Serialize for InflationArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        InflationMode::from(*self).serialize(s)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the augmented network whose output is original minus reduced.
    Augment {
        original: PathBuf,
        reduced: PathBuf,
        /// Network file to write (default: <out>/augmented.json).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Bound the output gap between two networks over an input box.
    Precision {
        original: PathBuf,
        reduced: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        lower: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        upper: Vec<f64>,
        #[command(flatten)]
        partition: PartitionArgs,
    },
    /// Compute closed-loop reach tubes and check the safety specification.
    Verify {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Simulate closed-loop trajectories with the original controller and audit them against the tube.
    Simulate {
        config: PathBuf,
        /// Number of trajectories.
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthesize the adaptive cruise control controllers, precision report and scenario file.
    SynthAcc {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 30.0)]
        v_set: f64,
        /// Applied acceleration of the lead car (negative brakes).
        #[arg(long, default_value_t = -2.0, allow_negative_numbers = true)]
        lead_accel: f64,
        /// Cells per dimension used to certify rho.
        #[arg(long, default_value_t = 32)]
        precision_splits: usize,
        /// Controller input partition written to the scenario.
        #[arg(long, default_value_t = 2)]
        splits: usize,
        #[arg(long, value_enum, default_value_t = InflationArg::Sound)]
        inflation: InflationArg,
    },
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a Path>,
    out_dir: &'a Path,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    flags: serde_json::Value,
    resolved: serde_json::Value,
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| nnredux::Error::io(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

fn prepare_out(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| nnredux::Error::io(out, e))?;
    Ok(())
}

fn write_manifest(out: &Path, manifest: &Manifest<'_>) -> CliResult<()> {
    write_json(&out.join("manifest.json"), manifest)
}

fn activation_label(spec: &ActivationSpec) -> String {
    match spec {
        ActivationSpec::Uniform(a) => a.name().to_string(),
        ActivationSpec::PerNeuron(mask) => {
            let relu = mask.iter().filter(|&&a| a == Activation::Relu).count();
            format!("mixed ({relu} relu, {} linear)", mask.len() - relu)
        }
    }
}

fn shape_label(net: &Network) -> String {
    let widths = net.widths();
    let hidden = &widths[1..widths.len() - 1];
    match hidden.first() {
        None => "no hidden layer".into(),
        Some(&w) if hidden.iter().all(|&x| x == w) => format!("{} x {w}", hidden.len()),
        Some(_) => hidden.iter().map(usize::to_string).collect::<Vec<_>>().join("-"),
    }
}

fn cmd_augment(out: &Path, original: &Path, reduced: &Path, output: Option<PathBuf>) -> CliResult<u8> {
    let big = load_network(original)?;
    let small = load_network(reduced)?;
    let aug = augment(&big, &small)?;
    prepare_out(out)?;
    let target = output.unwrap_or_else(|| out.join("augmented.json"));
    save_network(&aug, &target)?;
    println!("{:>5} {:>6} {:>6}  activation", "layer", "inputs", "outputs");
    for (l, layer) in aug.layers.iter().enumerate() {
        println!("{:>5} {:>6} {:>6}  {}", l + 1, layer.cols, layer.rows, activation_label(&layer.activation));
    }
    println!("wrote {}", target.display());
    write_manifest(
        out,
        &Manifest {
            tool: "nnredux",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "augment",
            config: None,
            out_dir: out,
            seed: None,
            flags: json!({}),
            resolved: json!({ "original": original, "reduced": reduced, "output": target, "widths": aug.widths() }),
        },
    )?;
    Ok(0)
}

fn cmd_precision(out: &Path, original: &Path, reduced: &Path, lower: &[f64], upper: &[f64], part: &PartitionArgs) -> CliResult<u8> {
    let big = load_network(original)?;
    let small = load_network(reduced)?;
    if lower.len() != upper.len() {
        return Err(CliError::Config(format!(
            "--lower has {} entries but --upper has {}",
            lower.len(),
            upper.len()
        )));
    }
    let input = IntervalBox::new(lower, upper)?;
    let cfg = part.config();
    let report = precision(&big, &small, &input, &cfg)?;
    prepare_out(out)?;
    write_json(&out.join("precision.json"), &report)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "rho": report.rho,
            "norm": report.norm,
            "cell_count": report.cell_count,
            "sampled_lower_bound": report.sampled_lower_bound,
            "wall_time": report.wall_time,
        }))
        .expect("report serializes")
    );
    write_manifest(
        out,
        &Manifest {
            tool: "nnredux",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "precision",
            config: None,
            out_dir: out,
            seed: None,
            flags: serde_json::to_value(part).expect("flags serialize"),
            resolved: json!({ "original": original, "reduced": reduced, "input_set": input, "partition": cfg }),
        },
    )?;
    Ok(0)
}

fn load_scenario(path: &Path, ov: &Overrides) -> CliResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(i) = ov.inflation {
        cfg.inflation = i.into();
    }
    if let Some(s) = &ov.splits {
        cfg.splits = s.clone();
    }
    if let Some(dt) = ov.dt {
        cfg.dt = Some(dt);
    }
    if let Some(m) = ov.max_cells {
        cfg.max_cells = m;
    }
    Ok(cfg)
}

fn reach_config(cfg: &ScenarioConfig, controller: ControllerChoice) -> ReachConfig {
    let mut step = StepConfig::for_period(cfg.sampling_period);
    if let Some(dt) = cfg.dt {
        step.dt = dt;
    }
    ReachConfig {
        partition: PartitionConfig {
            grid: Grid::Splits(cfg.splits.clone()),
            refinement: Refinement::Uniform,
            max_cells: cfg.max_cells,
        },
        step,
        controller,
    }
}

fn choice_name(c: ControllerChoice) -> &'static str {
    match c {
        ControllerChoice::Original => "original",
        ControllerChoice::Reduced => "reduced",
    }
}

fn choices(cfg: &ScenarioConfig) -> Vec<ControllerChoice> {
    let mut v = vec![ControllerChoice::Original];
    if cfg.reduced_controller.is_some() {
        v.push(ControllerChoice::Reduced);
    }
    v
}

fn scenario_manifest<'a>(
    out: &'a Path,
    subcommand: &'static str,
    path: &'a Path,
    seed: Option<u64>,
    ov: &Overrides,
    cfg: &ScenarioConfig,
) -> Manifest<'a> {
    Manifest {
        tool: "nnredux",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        config: Some(path),
        out_dir: out,
        seed,
        flags: serde_json::to_value(ov).expect("flags serialize"),
        resolved: serde_json::to_value(cfg).expect("config serializes"),
    }
}

fn cmd_verify(out: &Path, path: &Path, ov: &Overrides) -> CliResult<u8> {
    let cfg = load_scenario(path, ov)?;
    let sys = cfg.system()?;
    let spec = cfg.spec();
    prepare_out(out)?;

    let mut runs = Vec::new();
    let mut table = String::new();
    writeln!(table, "Comparison of reachable set calculation times").ok();
    writeln!(
        table,
        "{:<10} {:<16} {:>22} {:>15} {:>11}",
        "controller", "hidden layers", "controller reach (s)", "ode reach (s)", "total (s)"
    )
    .ok();
    let mut timing_rows = vec!["controller,hidden_layers,controller_reach_time,ode_reach_time,total_time".to_string()];
    let mut exit = 0;
    for choice in choices(&cfg) {
        let run: NncsReach = reach_nncs(&sys, &cfg.initial_set, cfg.horizon, &reach_config(&cfg, choice))?;
        let result = verify_with_outputs(&run.tube, &spec, Some(sys.plant.as_ref()))?;
        let name = choice_name(choice);
        run.tube.save_csv(out.join(format!("tube_{name}.csv")))?;
        let shape = shape_label(sys.network(choice)?);
        writeln!(
            table,
            "{:<10} {:<16} {:>22.6} {:>15.6} {:>11.6}",
            name, shape, run.stats.controller_reach_time, run.stats.ode_reach_time, run.stats.total_time
        )
        .ok();
        timing_rows.push(format!(
            "{name},{shape},{},{},{}",
            run.stats.controller_reach_time, run.stats.ode_reach_time, run.stats.total_time
        ));
        exit = match result.verdict {
            Verdict::Safe => 0,
            Verdict::Unknown => 1,
        };
        runs.push(json!({
            "controller": name,
            "verdict": result.verdict,
            "first_violation": result.first_violation,
            "intervals": run.stats.intervals,
            "controller_cells": run.stats.controller_cells,
            "final_set": run.tube.final_box(),
        }));
    }
    print!("{table}");
    timing_rows.push(String::new());
    write_text(&out.join("timing.csv"), &timing_rows.join("\n"))?;
    let rho = sys.reduced.as_ref().map(|r| r.precision.rho);
    write_json(
        &out.join("verdict.json"),
        &json!({
            "verdict": if exit == 0 { Verdict::Safe } else { Verdict::Unknown },
            "decided_by": runs.last().map(|r| r["controller"].clone()),
            "inflation": sys.reduced.as_ref().map(|r| r.mode),
            "rho": rho,
            "runs": runs,
        }),
    )?;
    write_manifest(out, &scenario_manifest(out, "verify", path, None, ov, &cfg))?;
    println!("verdict: {}", if exit == 0 { "safe" } else { "unknown" });
    Ok(exit)
}

fn sample_box(rng: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
    b.intervals()
        .iter()
        .map(|iv| if iv.width() > 0.0 { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo })
        .collect()
}

fn cmd_simulate(out: &Path, path: &Path, n: usize, seed: u64, ov: &Overrides) -> CliResult<u8> {
    if n == 0 {
        return Err(CliError::Precondition("--n must be at least 1".into()));
    }
    let cfg = load_scenario(path, ov)?;
    let sys = cfg.system()?;
    prepare_out(out)?;
    let tube_choice = *choices(&cfg).last().expect("at least the original controller");
    let run = reach_nncs(&sys, &cfg.initial_set, cfg.horizon, &reach_config(&cfg, tube_choice))?;

    let sim_cfg = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = sample_box(&mut rng, &cfg.initial_set);
        let r = sample_box(&mut rng, &cfg.reference);
        trajs.push(simulate(&sys, &x0, &r, cfg.horizon, ControllerChoice::Original, &sim_cfg)?);
    }
    let audit = containment_audit(&trajs, &run.tube);
    let traj_path = out.join("trajectories.csv");
    let file = fs::File::create(&traj_path).map_err(|e| nnredux::Error::io(&traj_path, e))?;
    write_trajectories_csv(&trajs, std::io::BufWriter::new(file), sim_cfg.samples_per_interval)?;
    run.tube.save_csv(out.join(format!("tube_{}.csv", choice_name(tube_choice))))?;
    let mode = sys.reduced.as_ref().filter(|_| tube_choice == ControllerChoice::Reduced).map(|r| r.mode);
    write_json(
        &out.join("audit.json"),
        &json!({
            "tube_controller": choice_name(tube_choice),
            "inflation": mode,
            "sound": mode != Some(InflationMode::PaperHalfRho),
            "report": audit,
        }),
    )?;
    write_manifest(out, &scenario_manifest(out, "simulate", path, Some(seed), ov, &cfg))?;
    println!("{}", audit.notice);
    println!(
        "{} trajectories, {} samples, {} violations, {} uncovered samples (tube: {} controller{})",
        audit.trajectories,
        audit.samples_checked,
        audit.violations.len(),
        audit.uncovered_samples,
        choice_name(tube_choice),
        if mode == Some(InflationMode::PaperHalfRho) { ", rho/2 inflation" } else { "" }
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth_acc(
    out: &Path,
    seed: u64,
    v_set: f64,
    lead_accel: f64,
    precision_splits: usize,
    splits: usize,
    inflation: InflationArg,
) -> CliResult<u8> {
    let acc = AccConfig {
        v_set,
        lead_accel,
        ..AccConfig::default()
    };
    let syn = SynthesisConfig {
        seed,
        ..SynthesisConfig::default()
    };
    let bench = acc_benchmark(&acc, &syn, &PartitionConfig::uniform(precision_splits), inflation.into())?;
    prepare_out(out)?;
    save_network(&bench.controller.network, out.join("controller.json"))?;
    save_network(&bench.reduced.network, out.join("reduced.json"))?;
    write_json(&out.join("precision.json"), &bench.precision)?;
    let sys = &bench.scenario.system;
    let scenario = ScenarioConfig {
        version: SCENARIO_VERSION,
        plant: PlantConfig::Acc { friction: acc.friction },
        controller: "controller.json".into(),
        reduced_controller: Some("reduced.json".into()),
        precision: Some("precision.json".into()),
        inflation: inflation.into(),
        sampling_period: acc.sampling_period,
        horizon: acc.horizon(),
        dt: None,
        splits: vec![splits],
        max_cells: nnredux::reach::DEFAULT_MAX_CELLS,
        initial_set: bench.scenario.initial_set.clone(),
        reference: sys.reference_box.clone(),
        layout: sys.layout.clone(),
        plant_inputs: sys.plant_inputs.clone(),
        unsafe_regions: bench.scenario.spec.unsafe_regions.clone(),
    };
    write_text(&out.join("scenario.toml"), &scenario.to_toml())?;
    println!(
        "controller {} (mse {:.3e}), reduced {} (mse {:.3e}), rho {:.6} over {} cells",
        shape_label(&bench.controller.network),
        bench.controller.mse,
        shape_label(&bench.reduced.network),
        bench.reduced.mse,
        bench.precision.rho,
        bench.precision.cell_count
    );
    println!("wrote {}", out.join("scenario.toml").display());
    write_manifest(
        out,
        &Manifest {
            tool: "nnredux",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: "synth-acc",
            config: None,
            out_dir: out,
            seed: Some(seed),
            flags: json!({
                "v_set": v_set,
                "lead_accel": lead_accel,
                "precision_splits": precision_splits,
                "splits": splits,
                "inflation": InflationMode::from(inflation),
            }),
            resolved: json!({ "acc": acc, "synthesis": syn }),
        },
    )?;
    Ok(0)
}

fn run(cli: Cli) -> CliResult<u8> {
    let out = cli.out.as_path();
    match cli.command {
        Command::Augment { original, reduced, output } => cmd_augment(out, &original, &reduced, output),
        Command::Precision {
            original,
            reduced,
            lower,
            upper,
            partition,
        } => cmd_precision(out, &original, &reduced, &lower, &upper, &partition),
        Command::Verify { config, overrides } => cmd_verify(out, &config, &overrides),
        Command::Simulate {
            config,
            n,
            seed,
            overrides,
        } => cmd_simulate(out, &config, n, seed, &overrides),
        Command::SynthAcc {
            seed,
            v_set,
            lead_accel,
            precision_splits,
            splits,
            inflation,
        } => cmd_synth_acc(out, seed, v_set, lead_accel, precision_splits, splits, inflation),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
