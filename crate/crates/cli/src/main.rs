//! Configuration-driven entry point for the diffusion samplers.
//!
//! Subcommands: `ddps`, `dsb-ps`, `ddgs`, `dsb-gs`, `verify`, `eval`. Every
//! run reads an optional TOML config (flags override keys), echoes the
//! resolved config into the output directory and writes samples (CSV),
//! metrics (JSON) and network checkpoints. Exit codes: 0 success, 1 runtime
//! failure, 2 invalid configuration.

mod artifacts;
mod config;
mod verify;

use clap::{Args, Parser, Subcommand};
use config::{ConfigError, ExperimentConfig};
use diffbridge::metrics::{eval_metrics, MetricsRecord};
use diffbridge::models::GaussianParams;
use diffbridge::{ddgs, ddps, dsb_gs, dsb_ps, Prng};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "diffbridge", version, about = "Diffusion and Schrödinger bridge samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Amortized posterior sampling by denoising score matching.
    Ddps(RunArgs),
    /// Bridge posterior sampling by iterative proportional fitting.
    DsbPs(RunArgs),
    /// General sampling from an unnormalized density.
    Ddgs(RunArgs),
    /// Bridge general sampling (score fits + h-transform corrections).
    DsbGs(RunArgs),
    /// Exact grid-oracle self-checks; nonzero exit if any residual is high.
    Verify(VerifyArgs),
    /// Metrics for an existing samples CSV.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<String>,
    /// Override: random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override: output directory.
    #[arg(long)]
    output_dir: Option<String>,
    /// Override: training iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Override: IPF rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Override: number of samples drawn after training.
    #[arg(long)]
    n_samples: Option<usize>,
    /// Override: rollout worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Override: observation (comma-separated) for the posterior samplers.
    #[arg(long, value_delimiter = ',')]
    y: Option<Vec<f64>>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Samples CSV produced by a run (log_weight column optional).
    #[arg(long)]
    samples: String,
    /// Reference marginal means (comma-separated) for moment/KS metrics.
    #[arg(long, value_delimiter = ',')]
    mean: Option<Vec<f64>>,
    /// Reference marginal variances (comma-separated).
    #[arg(long, value_delimiter = ',')]
    var: Option<Vec<f64>>,
    /// Where to write the metrics JSON (stdout when omitted).
    #[arg(long)]
    out: Option<String>,
}

enum AppError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::Config(e)
    }
}

impl From<diffbridge::Error> for AppError {
    fn from(e: diffbridge::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ddps(args) => run_ddps(args),
        Command::DsbPs(args) => run_dsb_ps(args),
        Command::Ddgs(args) => run_ddgs(args),
        Command::DsbGs(args) => run_dsb_gs(args),
        Command::Verify(args) => verify::run(args),
        Command::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => {}
        Err(AppError::Config(e)) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("runtime error: {msg}");
            std::process::exit(1);
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    if let Some(iters) = args.iterations {
        cfg.training.iterations = iters;
    }
    if let Some(rounds) = args.rounds {
        cfg.ipf.rounds = rounds;
    }
    if let Some(n) = args.n_samples {
        cfg.sampling.n_samples = n;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(y) = &args.y {
        cfg.sampling.y = y.clone();
    }
    Ok(cfg)
}

fn prepare_outdir(cfg: &ExperimentConfig, algorithm: &str) -> Result<PathBuf, AppError> {
    let dir = cfg.output_dir(algorithm);
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.resolved_toml())?;
    Ok(dir)
}

fn check_y(cfg: &ExperimentConfig, obs_dim: usize) -> Result<Vec<f64>, AppError> {
    if cfg.sampling.y.len() != obs_dim {
        return Err(ConfigError::new(
            "sampling.y",
            format!("expected {obs_dim} entries, got {}", cfg.sampling.y.len()),
        )
        .into());
    }
    Ok(cfg.sampling.y.clone())
}

fn finish_metrics(
    record: MetricsRecord,
    wall: f64,
    loss_trace: Option<Vec<f64>>,
    extras: Vec<(&str, serde_json::Value)>,
    dir: &Path,
) -> Result<(), AppError> {
    let mut record = record;
    record.wall_clock_seconds = Some(wall);
    record.loss_trace = loss_trace;
    let mut value = serde_json::to_value(&record).expect("metrics serialize");
    for (k, v) in extras {
        value[k] = v;
    }
    artifacts::write_json(&dir.join("metrics.json"), &value)?;
    Ok(())
}

fn run_ddps(args: RunArgs) -> Result<(), AppError> {
    let cfg = load_config(&args)?;
    let model = cfg.model.build()?;
    let grid = cfg.grid.build()?;
    let y = check_y(&cfg, model.obs_dim())?;
    let dir = prepare_outdir(&cfg, "ddps")?;
    let start = Instant::now();

    let ddps_cfg = ddps::DdpsConfig {
        grid: grid.clone(),
        batch_size: cfg.training.batch_size,
        iterations: cfg.training.iterations,
        adam: cfg.training.adam(),
        t_min: 1e-3 * grid.horizon(),
        hidden: cfg.training.hidden.clone(),
    };
    let mut rng = Prng::seed_from(cfg.seed);
    let sampler = ddps::train_ddps(model.as_ref(), &ddps_cfg, &mut rng)?;
    sampler.score_net().save(&dir.join("checkpoints/score_net.bin"))?;
    let samples = ddps::sample_posterior_with_workers(
        &sampler,
        &y,
        cfg.sampling.n_samples,
        &mut rng,
        cfg.workers,
    )?;
    artifacts::write_samples_csv(&dir.join("samples.csv"), &samples, None)?;

    let reference = model.analytic_posterior(&y);
    let record = eval_metrics(&samples, None, reference.as_ref())?;
    finish_metrics(
        record,
        start.elapsed().as_secs_f64(),
        Some(sampler.loss_trace().to_vec()),
        vec![("algorithm", "ddps".into()), ("seed", cfg.seed.into())],
        &dir,
    )?;
    println!("ddps: wrote {}", dir.display());
    Ok(())
}

fn run_dsb_ps(args: RunArgs) -> Result<(), AppError> {
    let cfg = load_config(&args)?;
    let model = cfg.model.build()?;
    let grid = cfg.grid.build_short_default()?;
    let y = check_y(&cfg, model.obs_dim())?;
    let dir = prepare_outdir(&cfg, "dsb-ps")?;
    let start = Instant::now();

    let dsb_cfg = dsb_ps::DsbConfig {
        grid,
        ipf_rounds: cfg.ipf.rounds,
        inner_iterations: cfg.ipf.inner_iterations,
        batch_size: cfg.ipf.trajectory_batch,
        adam: cfg.training.adam(),
        hidden: cfg.training.hidden.clone(),
        warm_start: true,
        eval_y: Some(y.clone()),
        diag_samples: 2000,
    };
    let mut rng = Prng::seed_from(cfg.seed);
    let ckpt_dir = dir.join("checkpoints");
    let state = dsb_ps::run_dsb_ps_with(model.as_ref(), &dsb_cfg, &mut rng, |state| {
        let tag = format!(
            "round{}_{}",
            state.diagnostics.len().div_ceil(2).saturating_sub(1),
            state.last_refreshed()
        );
        if let Some(net) = state.backward_net() {
            net.save(&ckpt_dir.join(format!("{tag}_backward.bin")))?;
        }
        if let Some(net) = state.forward_net() {
            net.save(&ckpt_dir.join(format!("{tag}_forward.bin")))?;
        }
        Ok(())
    })?;
    let samples = dsb_ps::sample_dsb_posterior_with_workers(
        &state,
        &y,
        cfg.sampling.n_samples,
        &mut rng,
        cfg.workers,
    )?;
    artifacts::write_samples_csv(&dir.join("samples.csv"), &samples, None)?;

    let reference = model.analytic_posterior(&y);
    let record = eval_metrics(&samples, None, reference.as_ref())?;
    let diag: Vec<serde_json::Value> = state
        .diagnostics
        .iter()
        .map(|d| {
            serde_json::json!({
                "round": d.round,
                "direction": d.direction,
                "loss_tail": d.loss_tail,
                "forward_terminal_ks": d.forward_terminal_ks,
                "posterior_moment_error": d.posterior_moment_error,
            })
        })
        .collect();
    finish_metrics(
        record,
        start.elapsed().as_secs_f64(),
        state.loss_traces.last().cloned(),
        vec![
            ("algorithm", "dsb-ps".into()),
            ("seed", cfg.seed.into()),
            ("ipf", serde_json::Value::Array(diag)),
        ],
        &dir,
    )?;
    println!("dsb-ps: wrote {}", dir.display());
    Ok(())
}

fn run_ddgs(args: RunArgs) -> Result<(), AppError> {
    let cfg = load_config(&args)?;
    let target = cfg.target.build()?;
    let grid = cfg.grid.build()?;
    let dir = prepare_outdir(&cfg, "ddgs")?;
    let start = Instant::now();

    let ddgs_cfg = ddgs::DdgsConfig {
        grid: grid.clone(),
        batch_size: cfg.training.batch_size,
        iterations: cfg.training.iterations,
        adam: cfg.training.adam(),
        hidden: cfg.training.hidden.clone(),
    };
    let mut rng = Prng::seed_from(cfg.seed);
    let sampler = ddgs::train_ddgs(&target, &ddgs_cfg, &mut rng)?;
    sampler
        .drift_correction()
        .save(&dir.join("checkpoints/drift_correction.bin"))?;
    let (samples, log_weights) = ddgs::sample_ddgs_with_workers(
        &sampler,
        cfg.sampling.n_samples,
        &mut rng,
        cfg.workers,
    )?;
    artifacts::write_samples_csv(&dir.join("samples.csv"), &samples, Some(&log_weights))?;

    // Flow-based log-normalizer estimate with a DSM-trained proposal score.
    let log_z_flow = if cfg.sampling.flow_points > 0 {
        let score_net = ddgs::fit_proposal_score(
            &sampler,
            cfg.sampling.flow_score_iterations,
            cfg.ipf.trajectory_batch,
            &mut rng,
        )?;
        score_net.save(&dir.join("checkpoints/proposal_score.bin"))?;
        let points: Vec<Vec<f64>> = samples
            .iter()
            .take(cfg.sampling.flow_points)
            .cloned()
            .collect();
        let score = |t: f64, x: &[f64]| score_net.eval(t, x, None);
        Some(ddgs::flow_log_z(&sampler, &score, &points, &grid)?)
    } else {
        None
    };

    let reference = gaussian_reference(&cfg);
    let mut record = eval_metrics(&samples, Some(&log_weights), reference.as_ref())?;
    record.log_z_flow = log_z_flow.as_ref().map(|f| f.mean);
    let mut extras: Vec<(&str, serde_json::Value)> = vec![
        ("algorithm", "ddgs".into()),
        ("seed", cfg.seed.into()),
    ];
    if let Some(k) = target.known_log_z() {
        extras.push(("known_log_z", k.into()));
    }
    if let Some(f) = &log_z_flow {
        extras.push((
            "log_z_flow_per_point",
            serde_json::to_value(&f.per_point).unwrap(),
        ));
    }
    finish_metrics(
        record,
        start.elapsed().as_secs_f64(),
        Some(sampler.loss_trace().to_vec()),
        extras,
        &dir,
    )?;
    println!("ddgs: wrote {}", dir.display());
    Ok(())
}

fn run_dsb_gs(args: RunArgs) -> Result<(), AppError> {
    let cfg = load_config(&args)?;
    let target = cfg.target.build()?;
    let grid = cfg.grid.build_short_default()?;
    let dir = prepare_outdir(&cfg, "dsb-gs")?;
    let start = Instant::now();

    let gs_cfg = dsb_gs::DsbGsConfig {
        grid,
        ipf_rounds: cfg.ipf.rounds.max(1),
        h_iterations: cfg.training.iterations,
        refine_h_iterations: cfg.ipf.refine_h_iterations,
        score_iterations: cfg.ipf.score_iterations,
        batch_size: cfg.training.batch_size,
        score_batch: cfg.ipf.trajectory_batch,
        flow_steps: cfg.ipf.flow_steps,
        distill_iterations: 4000,
        distill_tolerance: 1e-3,
        adam: cfg.training.adam(),
        hidden: cfg.training.hidden.clone(),
    };
    let mut rng = Prng::seed_from(cfg.seed);
    let ckpt_dir = dir.join("checkpoints");
    let state = dsb_gs::run_dsb_gs_with(&target, &gs_cfg, &mut rng, |state| {
        let round = state.rounds_completed().saturating_sub(1);
        for (i, net) in state.correction_nets().iter().enumerate() {
            net.save(&ckpt_dir.join(format!("round{round}_correction{i}.bin")))?;
        }
        if let Some(score) = state.score_net() {
            score.save(&ckpt_dir.join(format!("round{round}_score.bin")))?;
        }
        Ok(())
    })?;
    let (samples, log_weights) = dsb_gs::sample_dsb_gs_with_workers(
        &state,
        cfg.sampling.n_samples,
        &mut rng,
        cfg.workers,
    )?;
    artifacts::write_samples_csv(&dir.join("samples.csv"), &samples, Some(&log_weights))?;

    let reference = gaussian_reference(&cfg);
    let record = eval_metrics(&samples, Some(&log_weights), reference.as_ref())?;
    let diag: Vec<serde_json::Value> = state
        .diagnostics
        .iter()
        .map(|d| {
            serde_json::json!({
                "round": d.round,
                "score_loss_tail": d.score_loss_tail,
                "h_loss_tail": d.h_loss_tail,
                "distill_rel_l2": d.distill_rel_l2,
            })
        })
        .collect();
    let mut extras: Vec<(&str, serde_json::Value)> = vec![
        ("algorithm", "dsb-gs".into()),
        ("seed", cfg.seed.into()),
        ("ipf", serde_json::Value::Array(diag)),
    ];
    if let Some(k) = target.known_log_z() {
        extras.push(("known_log_z", k.into()));
    }
    finish_metrics(
        record,
        start.elapsed().as_secs_f64(),
        state.h_loss_traces.last().cloned(),
        extras,
        &dir,
    )?;
    println!("dsb-gs: wrote {}", dir.display());
    Ok(())
}

/// Marginal Gaussian reference for the sample metrics, when the target has
/// one (plain and scaled Gaussians; mixtures and funnels have none).
fn gaussian_reference(cfg: &ExperimentConfig) -> Option<GaussianParams> {
    match cfg.target.name.as_str() {
        "standard-normal" => Some(GaussianParams::standard(cfg.target.dim)),
        "gaussian" => {
            let mean = if cfg.target.mean.is_empty() {
                vec![0.0; cfg.target.dim]
            } else {
                cfg.target.mean.clone()
            };
            GaussianParams::isotropic(mean, cfg.target.var).ok()
        }
        _ => None,
    }
}

fn run_eval(args: EvalArgs) -> Result<(), AppError> {
    let (samples, weights) = artifacts::read_samples_csv(Path::new(&args.samples))
        .map_err(|m| ConfigError::new("samples", m))?;
    let d = samples.first().map_or(0, |s| s.len());
    let reference = match (&args.mean, &args.var) {
        (None, None) => None,
        (mean, var) => {
            let mean = mean.clone().unwrap_or_else(|| vec![0.0; d]);
            let var = var.clone().unwrap_or_else(|| vec![1.0; d]);
            if mean.len() != d || var.len() != d {
                return Err(ConfigError::new(
                    "mean/var",
                    format!("reference must have {d} entries per dimension"),
                )
                .into());
            }
            let mut cov = vec![0.0; d * d];
            for i in 0..d {
                cov[i * d + i] = var[i];
            }
            Some(
                GaussianParams::new(mean, cov)
                    .map_err(|e| ConfigError::new("var", e.to_string()))?,
            )
        }
    };
    let record = eval_metrics(&samples, weights.as_deref(), reference.as_ref())?;
    let value = serde_json::to_value(&record).expect("metrics serialize");
    match args.out {
        Some(path) => artifacts::write_json(Path::new(&path), &value)?,
        None => println!("{}", serde_json::to_string_pretty(&value).unwrap()),
    }
    Ok(())
}
