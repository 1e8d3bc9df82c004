//! `mfctl`: synthesize, schedule, simulate, and certify mean-field swarm
//! controllers from a JSON run configuration.
//!
//! Exit codes: 0 success, 1 configuration error, 2 infeasible target,
//! 3 numerical failure, 4 search failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use meanfield::certify::{deviation_metric, verify_stationary};
use meanfield::ctmc::generator_from_rates;
use meanfield::openloop::asymptotic_schedule;
use meanfield::simulate::{integrate_ode, run_schedule, simulate_agents};
use meanfield::synth::{optimize_gains, CertificateOptions, Objective, SearchOptions};
use meanfield::{DirectedGraph, Distribution, Error, FeedbackLaw};

const EXIT_CONFIG: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_SEARCH: u8 = 4;

#[derive(Parser)]
#[command(name = "mfctl", version, about = "Mean-field swarm controller toolkit")]
struct Cli {
    /// Run configuration JSON file; relative paths inside it resolve
    /// against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize time-invariant stabilizing rates and certify them.
    Synth,
    /// Build and simulate the two-phase schedule for an arbitrary target.
    Schedule,
    /// Simulate the closed-loop feedback law.
    Simulate {
        #[arg(long, value_enum, default_value_t = Mode::Both)]
        mode: Mode,
    },
    /// Search for polynomial feedback coefficients with a certificate.
    Search {
        /// Override the configured evaluation budget.
        #[arg(long)]
        budget: Option<usize>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Mode {
    Ode,
    Agents,
    Both,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    graph: PathBuf,
    target: Vec<f64>,
    initial: Vec<f64>,
    gain: f64,
    horizon: f64,
    dt: f64,
    agents: u64,
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default = "default_samples")]
    certificate_samples: usize,
    #[serde(default = "default_exclusion")]
    exclusion_radius: f64,
}

fn default_eps() -> f64 {
    1e-4
}
fn default_tolerance() -> f64 {
    1e-3
}
fn default_budget() -> usize {
    200
}
fn default_samples() -> usize {
    10_000
}
fn default_exclusion() -> f64 {
    1e-6
}

/// Fully validated run setup.
struct Run {
    graph: DirectedGraph,
    target: Distribution,
    initial: Distribution,
    gain: f64,
    horizon: f64,
    dt: f64,
    agents: u64,
    seed: u64,
    out_dir: PathBuf,
    eps: f64,
    tolerance: f64,
    budget: usize,
    certificate_samples: usize,
    exclusion_radius: f64,
}

struct ConfigError(String);

impl From<Error> for ConfigError {
    fn from(e: Error) -> Self {
        ConfigError(e.to_string())
    }
}

fn load_run(cli: &Cli) -> Result<Run, ConfigError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config <path> is required".into()))?;
    let text = fs::read_to_string(config_path)
        .map_err(|e| ConfigError(format!("cannot read {}: {}", config_path.display(), e)))?;
    let parsed: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("malformed config JSON: {}", e)))?;
    let base = config_path.parent().unwrap_or(Path::new("."));

    let graph_path = base.join(&parsed.graph);
    let graph_text = fs::read_to_string(&graph_path)
        .map_err(|e| ConfigError(format!("cannot read {}: {}", graph_path.display(), e)))?;
    let graph = DirectedGraph::from_json_str(&graph_text)?;

    let target = Distribution::new(parsed.target)?;
    let initial = Distribution::new(parsed.initial)?;
    if target.len() != graph.vertex_count() || initial.len() != graph.vertex_count() {
        return Err(ConfigError(format!(
            "distributions must have {} entries to match the graph",
            graph.vertex_count()
        )));
    }
    if !(parsed.gain > 0.0) {
        return Err(ConfigError("gain must be positive".into()));
    }
    if !(parsed.dt > 0.0) {
        return Err(ConfigError("dt must be positive".into()));
    }
    if parsed.horizon < parsed.dt {
        return Err(ConfigError("horizon must be at least one step".into()));
    }
    if parsed.agents < 1 {
        return Err(ConfigError("agent count must be at least 1".into()));
    }
    if !(parsed.eps > 0.0) {
        return Err(ConfigError("eps must be positive".into()));
    }
    if !(parsed.tolerance > 0.0) {
        return Err(ConfigError("tolerance must be positive".into()));
    }
    if parsed.budget < 1 {
        return Err(ConfigError("budget must be at least 1".into()));
    }
    if parsed.certificate_samples < 1 {
        return Err(ConfigError("certificate_samples must be at least 1".into()));
    }
    if !(parsed.exclusion_radius > 0.0) {
        return Err(ConfigError("exclusion_radius must be positive".into()));
    }

    let out_dir = match (&cli.out, &parsed.out) {
        (Some(flag), _) => flag.clone(),
        (None, Some(cfg)) => base.join(cfg),
        (None, None) => base.join("out"),
    };
    Ok(Run {
        graph,
        target,
        initial,
        gain: parsed.gain,
        horizon: parsed.horizon,
        dt: parsed.dt,
        agents: parsed.agents,
        seed: cli.seed.unwrap_or(parsed.seed),
        out_dir,
        eps: parsed.eps,
        tolerance: parsed.tolerance,
        budget: parsed.budget,
        certificate_samples: parsed.certificate_samples,
        exclusion_radius: parsed.exclusion_radius,
    })
}

/// Buffered output files: nothing touches the filesystem until the
/// command has fully succeeded in memory.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add_json(&mut self, name: &str, value: &serde_json::Value) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("JSON serialization");
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
    }

    fn add_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn write_all(&self, dir: &Path) -> Result<(), String> {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {}", dir.display(), e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes)
                .map_err(|e| format!("cannot write {}: {}", path.display(), e))?;
        }
        Ok(())
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::SupportNotStronglyConnected { .. }
        | Error::Infeasible(_)
        | Error::NotStronglyConnected => EXIT_INFEASIBLE,
        Error::SimplexViolation { .. } | Error::SteeringCapExceeded { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

fn cmd_synth(run: &Run) -> Result<(Outputs, u8), (String, u8)> {
    let rates = meanfield::openloop::synthesize_invariant_rates(&run.graph, &run.target)
        .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
    let generator = generator_from_rates(&run.graph, &rates);
    let summary = verify_stationary(&generator, &run.target, 1e-10);
    let mut out = Outputs::new();
    out.add_json("rates.json", &rates.to_json_value(&run.graph));
    out.add_json("certify.json", &summary.to_json_value());
    let code = if summary.passed() { 0 } else { EXIT_NUMERICAL };
    Ok((out, code))
}

fn cmd_schedule(run: &Run) -> Result<(Outputs, u8), (String, u8)> {
    let schedule = asymptotic_schedule(&run.graph, &run.initial, &run.target, run.eps)
        .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
    let trajectory = run_schedule(&run.graph, &schedule, &run.initial, run.horizon, run.dt)
        .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
    let final_error = trajectory.final_state().l1_distance(&run.target);
    let mut csv = Vec::new();
    trajectory.write_csv(&mut csv).expect("in-memory write");
    let mut out = Outputs::new();
    out.add_json("schedule.json", &schedule.to_json_value(&run.graph));
    out.add_bytes("schedule_trajectory.csv", csv);
    out.add_json(
        "schedule_summary.json",
        &json!({ "final_l1_error": final_error, "tolerance": run.tolerance,
                 "passed": final_error <= run.tolerance }),
    );
    let code = if final_error <= run.tolerance { 0 } else { EXIT_NUMERICAL };
    Ok((out, code))
}

/// Integer agent counts matching a density as closely as possible
/// (largest-remainder rounding).
fn counts_from_density(x: &Distribution, n: u64) -> Vec<u64> {
    let raw: Vec<f64> = x.densities().iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<u64> = raw.iter().map(|r| r.floor() as u64).collect();
    let mut assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let slots = counts.len();
    let mut k = 0;
    while assigned < n {
        counts[order[k % slots]] += 1;
        assigned += 1;
        k += 1;
    }
    counts
}

fn cmd_simulate(run: &Run, mode: Mode) -> Result<(Outputs, u8), (String, u8)> {
    let law = FeedbackLaw::new(run.graph.clone(), run.target.clone(), run.gain)
        .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
    let mut out = Outputs::new();

    let ode = match mode {
        Mode::Ode | Mode::Both => {
            let traj = integrate_ode(law.field_fn(), &run.initial, run.horizon, run.dt)
                .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            let mut csv = Vec::new();
            traj.write_csv(&mut csv).expect("in-memory write");
            out.add_bytes("ode_trajectory.csv", csv);
            Some(traj)
        }
        Mode::Agents => None,
    };

    let agents = match mode {
        Mode::Agents | Mode::Both => {
            let counts = counts_from_density(&run.initial, run.agents);
            let traj = simulate_agents(
                &run.graph,
                |x| law.feedback_rates(x),
                &counts,
                run.horizon,
                run.seed,
            )
            .map_err(|e| (e.to_string(), exit_code_for(&e)))?;
            let mut csv = Vec::new();
            traj.write_events_csv(&mut csv).expect("in-memory write");
            out.add_bytes("agent_events.csv", csv);
            Some(traj)
        }
        Mode::Ode => None,
    };

    if let (Some(ode), Some(agents)) = (&ode, &agents) {
        let deviation =
            deviation_metric(ode, agents).map_err(|e| (e.to_string(), exit_code_for(&e)))?;
        out.add_json(
            "deviation.json",
            &json!({
                "sup_l1_deviation": deviation,
                "agents": agents.n_agents(),
                "events": agents.event_count(),
                "last_transition_time": agents.last_transition_time(),
            }),
        );
    }
    Ok((out, 0))
}

fn cmd_search(run: &Run, budget: Option<usize>) -> Result<(Outputs, u8), (String, u8)> {
    let budget = budget.unwrap_or(run.budget);
    if budget < 1 {
        return Err(("budget must be at least 1".into(), EXIT_CONFIG));
    }
    let opts = SearchOptions {
        objective: Objective::ConvergenceRate,
        budget,
        seed: run.seed,
        gain: run.gain,
        reference_initial: Some(run.initial.clone()),
        horizon: run.horizon,
        dt: run.dt,
        certificate_samples: run.certificate_samples,
        certificate: CertificateOptions { exclusion_radius: run.exclusion_radius },
    };
    let (candidate, report) =
        optimize_gains(&run.graph, &run.target, &opts).map_err(|e| (e.to_string(), EXIT_SEARCH))?;
    let mut out = Outputs::new();
    out.add_json("candidate.json", &candidate.to_json_value(&run.graph));
    out.add_json("certificate.json", &serde_json::to_value(&report).expect("report JSON"));
    let code = if report.passed { 0 } else { EXIT_SEARCH };
    Ok((out, code))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Let --help and --version print normally; anything else is a
            // configuration error under the exit-code contract.
            if e.use_stderr() {
                eprintln!("{}", e);
                return ExitCode::from(EXIT_CONFIG);
            }
            print!("{}", e);
            return ExitCode::SUCCESS;
        }
    };
    let run = match load_run(&cli) {
        Ok(run) => run,
        Err(ConfigError(msg)) => {
            eprintln!("config error: {}", msg);
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match &cli.command {
        Command::Synth => cmd_synth(&run),
        Command::Schedule => cmd_schedule(&run),
        Command::Simulate { mode } => cmd_simulate(&run, *mode),
        Command::Search { budget } => cmd_search(&run, *budget),
    };
    match result {
        Ok((outputs, code)) => {
            if let Err(msg) = outputs.write_all(&run.out_dir) {
                eprintln!("output error: {}", msg);
                return ExitCode::from(EXIT_NUMERICAL);
            }
            if code == 0 {
                println!("ok: outputs in {}", run.out_dir.display());
            } else {
                eprintln!(
                    "completed with failing checks: outputs in {}",
                    run.out_dir.display()
                );
            }
            ExitCode::from(code)
        }
        Err((msg, code)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(code)
        }
    }
}
