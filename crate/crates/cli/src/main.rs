//! `camjpf` command-line tool: dataset generation, training, detection,
//! network simulation, evaluation and channel sweeps.
//!
//! Exit codes: 0 on success, 1 on internal errors, 2 on usage or
//! validation errors. `CAMJPF_LOG` sets the log filter (default `warn`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use camjpf::eval;
use camjpf::io::write_atomic;
use camjpf::mjpf::{self, MjpfConfig};
use camjpf::netsim::{self, SimConfig, UnmeasuredPolicy};
use camjpf::scenario::{self, EstopSpec, GapProfile, TrackSpec};
use camjpf::statespace::ChannelSet;
use camjpf::vocabulary::{self, AgentModel, TrainConfig};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "camjpf", version, about = "Switching-model abnormality detection over a simulated V2V link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioKind {
    Perimeter,
    Estop,
    Gap,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic leader/follower dataset.
    Gen {
        #[arg(long, value_enum)]
        scenario: ScenarioKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        laps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Noise standard deviation on the normalized scale.
        #[arg(long)]
        noise: Option<f64>,
        /// Follower distance behind the leader in metres.
        #[arg(long)]
        offset: Option<f64>,
        #[arg(long)]
        samples_per_lap: Option<usize>,
        /// JSON with optional `track`, `estop` and `gap` sections.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Learn a vocabulary model from one agent's CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of x,y,steering,power.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<String>>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        state_max_nodes: Option<usize>,
        #[arg(long)]
        deriv_max_nodes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        q_scale: Option<f64>,
        /// TrainConfig JSON; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the filter over a test CSV and write the abnormality trace.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        meas_noise: Option<f64>,
        /// MjpfConfig JSON; flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate the multi-agent exchange described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Score a trace against labels: report.json and roc.csv.
    Eval {
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Sweep K factors and data rates, writing summary.json.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        k_list: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Drop lost steps from the evaluation instead of scoring them 0.
        #[arg(long)]
        exclude_unmeasured: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(camjpf::Error),
}

impl From<camjpf::Error> for CliError {
    fn from(e: camjpf::Error) -> Self {
        CliError::Lib(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(camjpf::Error::from)?;
    Ok(write_atomic(path, &bytes)?)
}

#[derive(Default, Deserialize)]
#[serde(default)]
struct GenConfig {
    track: Option<TrackSpec>,
    estop: Option<EstopSpec>,
    gap: Option<GapProfile>,
}

#[allow(clippy::too_many_arguments)]
fn gen(
    kind: ScenarioKind,
    out: &Path,
    laps: Option<usize>,
    seed: Option<u64>,
    noise: Option<f64>,
    offset: Option<f64>,
    samples_per_lap: Option<usize>,
    config: Option<&Path>,
) -> CliResult<()> {
    let file: GenConfig = match config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    let mut track = file.track.unwrap_or(match kind {
        ScenarioKind::Estop => TrackSpec { laps: 1, ..TrackSpec::default() },
        _ => TrackSpec::default(),
    });
    if let Some(l) = laps {
        track.laps = l;
    }
    if let Some(s) = samples_per_lap {
        track.samples_per_lap = s;
    }
    let seed = seed.unwrap_or(0);
    let noise = noise.unwrap_or(scenario::DEFAULT_NOISE_SIGMA);
    let (leader, follower) = match kind {
        ScenarioKind::Perimeter => scenario::generate_platoon(&track, offset.unwrap_or(8.0), noise, seed)?,
        ScenarioKind::Estop => {
            let mut estop = file.estop.unwrap_or_default();
            estop.noise_sigma = noise;
            if let Some(o) = offset {
                estop.follower_offset = o;
            }
            scenario::generate_emergency_stop(&track, &estop, seed)?
        }
        ScenarioKind::Gap => {
            let mut gap = file.gap.unwrap_or(GapProfile {
                mean: 30.0,
                amplitude: 20.0,
                period: 100.0,
            });
            if let Some(o) = offset {
                gap.mean = o;
            }
            scenario::generate_varying_gap(&track, &gap, noise, seed)?
        }
    };
    for s in [&leader, &follower] {
        let path = out.join(format!("{}.csv", s.series.agent_id));
        scenario::write_labeled(&path, s)?;
        log::info!("wrote {} ({} samples)", path.display(), s.series.len());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    data: &Path,
    out: &Path,
    seed: Option<u64>,
    channels: Option<Vec<String>>,
    dt: Option<f64>,
    state_max_nodes: Option<usize>,
    deriv_max_nodes: Option<usize>,
    epochs: Option<usize>,
    q_scale: Option<f64>,
    config: Option<&Path>,
) -> CliResult<()> {
    let mut cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(c) = channels {
        cfg.channels = ChannelSet::from_names(&c)?;
    }
    if dt.is_some() {
        cfg.dt = dt;
    }
    if let Some(n) = state_max_nodes {
        cfg.state_gng.max_nodes = n;
    }
    if let Some(n) = deriv_max_nodes {
        cfg.deriv_gng.max_nodes = n;
    }
    if let Some(e) = epochs {
        cfg.state_gng.epochs = e;
        cfg.deriv_gng.epochs = e;
    }
    if let Some(q) = q_scale {
        cfg.q_scale = q;
    }
    let series = scenario::load_csv(data)?;
    let model = vocabulary::train_agent_model(&series, &cfg)?;
    model.save(out)?;
    Ok(())
}

fn detect(
    model: &Path,
    data: &Path,
    out: &Path,
    particles: Option<usize>,
    seed: Option<u64>,
    meas_noise: Option<f64>,
    config: Option<&Path>,
) -> CliResult<()> {
    let mut cfg: MjpfConfig = match config {
        Some(p) => read_json(p)?,
        None => MjpfConfig::default(),
    };
    if let Some(n) = particles {
        cfg.n_particles = n;
    }
    if let Some(r) = meas_noise {
        cfg.meas_noise = r;
    }
    if !model.exists() {
        return Err(usage(format!("model file not found: {}", model.display())));
    }
    let model = AgentModel::load(model)?;
    let series = scenario::load_csv(data)?;
    let obs: Vec<Option<Vec<f64>>> = model.observations(&series).into_iter().map(Some).collect();
    let trace = mjpf::run_sequence(&model, &series.timestamps, &obs, &cfg, seed.unwrap_or(0))?;
    mjpf::write_trace(out, &series.agent_id, &series.agent_id, &trace, 2 * model.base_dim())?;
    let thetas: Vec<f64> = trace.iter().filter_map(|o| o.theta).collect();
    if !thetas.is_empty() {
        log::info!(
            "{} steps, mean theta {:.4}",
            trace.len(),
            thetas.iter().sum::<f64>() / thetas.len() as f64
        );
    }
    Ok(())
}

fn load_sim(config: &Path, seed: Option<u64>, particles: Option<usize>) -> CliResult<(SimConfig, PathBuf)> {
    let bytes = std::fs::read(config).map_err(|e| usage(format!("{}: {e}", config.display())))?;
    let mut cfg = SimConfig::from_json(&bytes)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = particles {
        cfg.mjpf.n_particles = n;
    }
    if cfg.agents.is_empty() {
        return Err(usage("simulation config lists no agents"));
    }
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, particles: Option<usize>) -> CliResult<()> {
    let (cfg, base) = load_sim(config, seed, particles)?;
    let (series, models) = cfg.load_agents(&base)?;
    let result = netsim::run_simulation(&cfg, &series, &models)?;
    netsim::write_outputs(out, &result, &models)?;
    log::info!(
        "{} packets, loss ratio {:.4}, mean delay {:.6} s",
        result.summary.total.sent,
        result.summary.total.loss_ratio,
        result.summary.total.mean_delay
    );
    Ok(())
}

fn evaluate(theta: &Path, labels: &Path, out: &Path, threshold: f64) -> CliResult<()> {
    let (t_theta, scores) = mjpf::load_theta(theta)?;
    let (t_labels, labels) = scenario::load_labels(labels)?;
    if t_theta.len() != t_labels.len() || t_theta.iter().zip(&t_labels).any(|(a, b)| (a - b).abs() > 1e-6) {
        return Err(usage("trace and label timestamps differ"));
    }
    let (report, curve) = eval::evaluate(&scores, &labels, threshold)?;
    eval::write_report(&out.join("report.json"), &report)?;
    eval::write_roc_csv(&out.join("roc.csv"), &curve)?;
    println!("AUC {:.4} ACC {:.4}", report.auc, report.acc);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    config: &Path,
    k_list: Option<Vec<f64>>,
    rates: Option<Vec<f64>>,
    out: &Path,
    replicates: Option<usize>,
    particles: Option<usize>,
    seed: Option<u64>,
    labels: Option<PathBuf>,
    exclude_unmeasured: bool,
) -> CliResult<()> {
    let (mut cfg, base) = load_sim(config, seed, particles)?;
    let mut spec = cfg.sweep.clone().unwrap_or_default();
    if let Some(k) = k_list {
        spec.k_list = k;
    }
    if let Some(r) = rates {
        spec.rates = r;
    }
    if let Some(n) = replicates {
        spec.replicates = n;
    }
    if exclude_unmeasured {
        spec.unmeasured = UnmeasuredPolicy::Exclude;
    }
    if spec.k_list.is_empty() {
        return Err(usage("--k-list must name at least one K factor"));
    }
    if spec.rates.is_empty() {
        return Err(usage("--rates must name at least one data rate"));
    }
    cfg.sweep = Some(spec.clone());
    cfg.validate()?;
    let labels_file = match labels.or_else(|| spec.labels.as_ref().map(|l| base.join(l))) {
        Some(p) => p,
        None => {
            let src = cfg
                .agents
                .iter()
                .find(|a| a.id == spec.observed)
                .ok_or_else(|| usage(format!("observed agent `{}` is not in the config", spec.observed)))?;
            scenario::labels_path(&base.join(&src.data))
        }
    };
    let (_, label_values) = scenario::load_labels(&labels_file)?;
    let (series, models) = cfg.load_agents(&base)?;
    let summary = netsim::sweep(&cfg, &spec, &series, &models, &label_values)?;
    for r in &summary.rows {
        println!("{:<14} loss {:.4} AUC {:.4} ACC {:.4}", r.condition, r.loss_ratio, r.auc, r.acc);
    }
    write_json(out, &summary)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen {
            scenario,
            out,
            laps,
            seed,
            noise,
            offset,
            samples_per_lap,
            config,
        } => gen(scenario, &out, laps, seed, noise, offset, samples_per_lap, config.as_deref()),
        Command::Train {
            data,
            out,
            seed,
            channels,
            dt,
            state_max_nodes,
            deriv_max_nodes,
            epochs,
            q_scale,
            config,
        } => train(
            &data,
            &out,
            seed,
            channels,
            dt,
            state_max_nodes,
            deriv_max_nodes,
            epochs,
            q_scale,
            config.as_deref(),
        ),
        Command::Detect {
            model,
            data,
            out,
            particles,
            seed,
            meas_noise,
            config,
        } => detect(&model, &data, &out, particles, seed, meas_noise, config.as_deref()),
        Command::Simulate {
            config,
            out,
            seed,
            particles,
        } => simulate(&config, &out, seed, particles),
        Command::Eval {
            theta,
            labels,
            out,
            threshold,
        } => evaluate(&theta, &labels, &out, threshold),
        Command::Sweep {
            config,
            k_list,
            rates,
            out,
            replicates,
            particles,
            seed,
            labels,
            exclude_unmeasured,
        } => sweep(
            &config,
            k_list,
            rates,
            &out,
            replicates,
            particles,
            seed,
            labels,
            exclude_unmeasured,
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAMJPF_LOG", "warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Lib(ref err) if err.is_validation() => ExitCode::from(2),
                CliError::Lib(_) => ExitCode::from(1),
            }
        }
    }
}
