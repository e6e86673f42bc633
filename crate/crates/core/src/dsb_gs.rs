//! Diffusion Schrödinger bridge for general sampling.
//!
//! Iterative proportional fitting toward the bridge between an unnormalized
//! target and the stationary normal, without samples from the target. Each
//! round alternates
//!   1. a denoising-score-matching fit of the current iterate's marginal
//!      score from its own backward trajectories (skipped at round 0, where
//!      the iterate is the stationary reference and the score is -x), and
//!   2. a reverse-KL fit of a Doob h-transform correction, where the
//!      iterate's time-0 density is reconstructed on the tape by the
//!      probability-flow ODE driven by the fitted score,
//! then folds the correction into the backward drift. Round 0 reduces
//! exactly to plain general sampling, including bit-identical trajectories
//! for a shared seed.

use crate::ddgs::{
    simulate_proposals, CorrectionStack, HFit, InitialLogDensity,
    ScoreFieldRef,
};
use crate::models::TargetDensity;
use crate::nn::{AdamConfig, AdamState, Arch, MlpFunction, NetRef, Tape};
use crate::sde::{Drift, OuTransition, TimeGrid};
use crate::{Error, Prng, Result};

/// Configuration of the general-sampling bridge.
#[derive(Debug, Clone)]
pub struct DsbGsConfig {
    /// Short-horizon grid (default T=1, K=32).
    pub grid: TimeGrid,
    /// Total IPF rounds; 1 round is exactly plain general sampling.
    pub ipf_rounds: usize,
    /// Reverse-KL gradient steps in round 0.
    pub h_iterations: usize,
    /// Reverse-KL gradient steps in later rounds (warm regime, flow in the
    /// loop).
    pub refine_h_iterations: usize,
    /// Score-matching gradient steps per round (rounds >= 1).
    pub score_iterations: usize,
    /// Paths per reverse-KL gradient step.
    pub batch_size: usize,
    /// Trajectories per score-matching gradient step (all K transition pairs
    /// enter the regression).
    pub score_batch: usize,
    /// Steps of the on-tape probability flow evaluating the iterate density.
    pub flow_steps: usize,
    /// Gradient steps allowed when collapsing the drift stack into one
    /// network.
    pub distill_iterations: usize,
    /// Relative L2 tolerance of the collapse.
    pub distill_tolerance: f64,
    pub adam: AdamConfig,
    pub hidden: Vec<usize>,
}

impl DsbGsConfig {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            ipf_rounds: 3,
            h_iterations: 2000,
            refine_h_iterations: 600,
            score_iterations: 1200,
            batch_size: 128,
            score_batch: 16,
            flow_steps: 16,
            distill_iterations: 4000,
            distill_tolerance: 1e-3,
            adam: AdamConfig::default(),
            hidden: vec![64, 64],
        }
    }

    /// Default short-horizon grid: T = 1, K = 32.
    pub fn default_grid() -> TimeGrid {
        TimeGrid::uniform(1.0, 32).unwrap()
    }

    fn validate(&self) -> Result<()> {
        if self.ipf_rounds == 0 {
            return Err(Error::Domain("at least one IPF round is required".into()));
        }
        if self.batch_size == 0 || self.score_batch == 0 {
            return Err(Error::Domain("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-round record: training tails and the distillation residual.
#[derive(Debug, Clone)]
pub struct GsRoundDiagnostics {
    pub round: usize,
    /// Mean DSM loss over the last tenth of the score fit (None at round 0).
    pub score_loss_tail: Option<f64>,
    /// Mean reverse-KL loss over the last tenth of the h fit.
    pub h_loss_tail: f64,
    /// Relative L2 error of the drift collapse, when one happened.
    pub distill_rel_l2: Option<f64>,
}

/// State across rounds: the backward drift is -x/2 plus at most two live
/// networks (the distilled accumulation and the newest correction).
pub struct GsIpfState {
    target: TargetDensity,
    config: DsbGsConfig,
    rounds_completed: usize,
    distilled: Option<MlpFunction>,
    latest: Option<MlpFunction>,
    score_net: Option<MlpFunction>,
    pub diagnostics: Vec<GsRoundDiagnostics>,
    pub h_loss_traces: Vec<Vec<f64>>,
}

impl GsIpfState {
    pub fn new(target: TargetDensity, config: DsbGsConfig) -> Self {
        Self {
            target,
            config,
            rounds_completed: 0,
            distilled: None,
            latest: None,
            score_net: None,
            diagnostics: Vec::new(),
            h_loss_traces: Vec::new(),
        }
    }

    pub fn target(&self) -> &TargetDensity {
        &self.target
    }

    pub fn config(&self) -> &DsbGsConfig {
        &self.config
    }

    pub fn rounds_completed(&self) -> usize {
        self.rounds_completed
    }

    pub fn score_net(&self) -> Option<&MlpFunction> {
        self.score_net.as_ref()
    }

    /// The live correction networks composing the current backward drift
    /// beyond -x/2 (at most two).
    pub fn correction_nets(&self) -> Vec<&MlpFunction> {
        let mut nets = Vec::new();
        if let Some(c) = &self.distilled {
            nets.push(c);
        }
        if let Some(u) = &self.latest {
            nets.push(u);
        }
        nets
    }

    /// Evaluates the composed backward drift -x/2 + corrections at (t, x).
    pub fn backward_drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let stack = CorrectionStack {
            nets: self.correction_nets(),
            dim: self.target.dim(),
        };
        let c = stack.eval(t, x, None);
        x.iter().zip(c).map(|(xi, ci)| -0.5 * xi + ci).collect()
    }
}

/// Fits the marginal score of the current iterate by single-step denoising
/// regression on its own backward trajectories: each discretized transition
/// is exactly Gaussian, so its conditional score is an exact regression
/// target whose minimizer is the marginal score at the arrival time.
///
/// At round 0 the iterate is the stationary reference and the fit is skipped
/// (the score is -x in closed form).
pub fn fit_marginal_score(state: &mut GsIpfState, rng: &mut Prng) -> Result<Option<f64>> {
    if state.rounds_completed == 0 {
        state.score_net = None;
        return Ok(None);
    }
    let cfg = state.config.clone();
    let grid = cfg.grid.clone();
    let horizon = grid.horizon();
    let d = state.target.dim();
    let arch = Arch::for_sampler(d, 0, horizon).with_hidden(cfg.hidden.clone());
    let init = match &state.score_net {
        Some(prev) => prev.clone(),
        None => MlpFunction::init(arch, rng),
    };
    let stack = CorrectionStack {
        nets: state.correction_nets(),
        dim: d,
    };
    let (net, trace) = fit_score_for_stack(
        &stack,
        &grid,
        init,
        cfg.score_iterations,
        cfg.score_batch,
        cfg.adam,
        rng,
    )
    .map_err(|e| Error::Ipf {
        round: state.rounds_completed,
        direction: "score",
        msg: e.to_string(),
    })?;
    let tail_n = trace.len().div_ceil(10);
    let tail = trace.iter().rev().take(tail_n).sum::<f64>() / tail_n.max(1) as f64;
    state.score_net = Some(net);
    Ok(Some(tail))
}

/// Single-step denoising regression of a marginal-score network on backward
/// trajectories of the given drift stack. Each discretized transition is
/// exactly Gaussian, so its conditional score is an exact target whose
/// minimizer is the marginal score at the arrival time.
pub(crate) fn fit_score_for_stack(
    stack: &CorrectionStack<'_>,
    grid: &TimeGrid,
    mut net: MlpFunction,
    iterations: usize,
    score_batch: usize,
    adam_cfg: AdamConfig,
    rng: &mut Prng,
) -> Result<(MlpFunction, Vec<f64>)> {
    let horizon = grid.horizon();
    let d = stack.dim;
    let mut adam = AdamState::new(net.params().len(), adam_cfg);
    let base_lr = adam_cfg.lr;
    let mut trace = Vec::with_capacity(iterations);
    for it in 0..iterations {
        adam.cfg.lr = crate::nn::scheduled_lr(base_lr, it, iterations);
        let paths = simulate_proposals(stack, grid, score_batch, rng)?;
        let mut tape = Tape::new(net.params());
        let mut acc = None;
        let mut n_pairs = 0usize;
        for path in &paths {
            for j in 0..grid.steps() {
                let gamma = grid.step_size(j);
                let tr = OuTransition::new(gamma)?;
                let tau_j = horizon - grid.time(j);
                let tau_next = horizon - grid.time(j + 1);
                let z_j = path.state(j);
                let z_next = path.state(j + 1);
                let c = stack.eval(tau_j, z_j, None);
                // Conditional score of the exactly Gaussian step.
                let target: Vec<f64> = (0..d)
                    .map(|i| -(z_next[i] - tr.alpha * z_j[i] - gamma * c[i]) / tr.var)
                    .collect();
                let x_node = tape.constant(z_next);
                let pred = net.eval_tape(&mut tape, NetRef::Trainable, tau_next, x_node, None);
                let t_node = tape.constant(&target);
                let term = tape.mse(pred, t_node);
                acc = Some(match acc {
                    None => term,
                    Some(a) => tape.add(a, term),
                });
                n_pairs += 1;
            }
        }
        let total = acc.expect("nonempty batch");
        let node = tape.scale(total, 1.0 / n_pairs as f64);
        let loss = tape.scalar_value(node);
        if !loss.is_finite() {
            return Err(Error::Training {
                iteration: it,
                msg: format!("score DSM loss became non-finite ({loss})"),
            });
        }
        tape.backward(node).map_err(|e| Error::Training {
            iteration: it,
            msg: e.to_string(),
        })?;
        let grad = tape.into_grad();
        adam.step(net.params_mut(), &grad).map_err(|e| Error::Training {
            iteration: it,
            msg: e.to_string(),
        })?;
        trace.push(loss);
    }
    Ok((net, trace))
}

/// Fits the h-transform correction of the current round by reverse-KL
/// minimization; round 0 is exactly the plain general-sampling fit.
pub fn fit_h_correction(state: &mut GsIpfState, rng: &mut Prng) -> Result<f64> {
    let cfg = state.config.clone();
    let nets = state.correction_nets();
    let initial_density = if state.rounds_completed == 0 {
        InitialLogDensity::StandardNormal
    } else {
        let score = match &state.score_net {
            Some(net) => ScoreFieldRef::Net(net),
            None => ScoreFieldRef::Stationary,
        };
        InitialLogDensity::Flow {
            score,
            steps: cfg.flow_steps,
        }
    };
    let fit = HFit {
        target: &state.target,
        grid: &cfg.grid,
        corrections: &nets,
        initial_density,
    };
    let arch = Arch::for_sampler(state.target.dim(), 0, cfg.grid.horizon())
        .with_hidden(cfg.hidden.clone());
    let init = MlpFunction::init(arch, rng);
    let iters = if state.rounds_completed == 0 {
        cfg.h_iterations
    } else {
        cfg.refine_h_iterations
    };
    let (u, trace) = fit
        .train(init, iters, cfg.batch_size, cfg.adam, rng)
        .map_err(|e| Error::Ipf {
            round: state.rounds_completed,
            direction: "h-transform",
            msg: e.to_string(),
        })?;
    let tail_n = trace.len().div_ceil(10);
    let tail = trace.iter().rev().take(tail_n).sum::<f64>() / tail_n.max(1) as f64;
    state.latest = Some(u);
    state.h_loss_traces.push(trace);
    Ok(tail)
}

/// Folds the newest correction into the accumulated drift. When further
/// rounds follow, the (distilled + latest) pair is collapsed into a single
/// fresh network by regression over a trajectory state cloud, keeping at
/// most two live networks at all times; corrections that are identically
/// zero leave the drift untouched.
pub fn update_drift(state: &mut GsIpfState, rng: &mut Prng) -> Result<Option<f64>> {
    let Some(latest) = state.latest.take() else {
        return Ok(None);
    };
    let is_last_round = state.rounds_completed + 1 >= state.config.ipf_rounds;
    match (&state.distilled, is_last_round) {
        (None, _) => {
            // Single live correction: the collapse is exact by construction.
            state.distilled = Some(latest);
            Ok(None)
        }
        (Some(_), true) => {
            // No further training rounds: keep the pair (still at most two
            // live networks) and skip the regression.
            state.latest = Some(latest);
            Ok(None)
        }
        (Some(current), false) => {
            let stack = CorrectionStack {
                nets: vec![current, &latest],
                dim: state.target.dim(),
            };
            // Cloud of (t, x) pairs from trajectories of the composed drift.
            let cfg = &state.config;
            let paths = simulate_proposals(&stack, &cfg.grid, 64, rng)?;
            let horizon = cfg.grid.horizon();
            let mut cloud: Vec<(f64, Vec<f64>)> = Vec::new();
            for path in &paths {
                for j in 0..=cfg.grid.steps() {
                    cloud.push((horizon - cfg.grid.time(j), path.state(j).to_vec()));
                }
            }
            let targets: Vec<Vec<f64>> = cloud
                .iter()
                .map(|(t, x)| stack.eval(*t, x, None))
                .collect();
            let sup = targets
                .iter()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            if sup < 1e-12 {
                // Identically zero correction: drift unchanged.
                return Ok(Some(0.0));
            }
            let arch = Arch::for_sampler(state.target.dim(), 0, horizon)
                .with_hidden(cfg.hidden.clone());
            let mut net = state.distilled.clone().unwrap();
            let mut adam = AdamState::new(net.params().len(), cfg.adam);
            let base_lr = cfg.adam.lr;
            let _ = arch;
            let mut best: Option<(f64, Vec<f64>)> = None;
            let target_norm: f64 = targets
                .iter()
                .map(|t| t.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            for it in 0..cfg.distill_iterations {
                adam.cfg.lr = crate::nn::scheduled_lr(base_lr, it, cfg.distill_iterations);
                // Minibatch regression onto the frozen composed drift.
                let mut tape = Tape::new(net.params());
                let mut acc = None;
                let bs = 128.min(cloud.len());
                for _ in 0..bs {
                    let idx = rng.uniform_index(cloud.len());
                    let (t, x) = &cloud[idx];
                    let x_node = tape.constant(x);
                    let pred = net.eval_tape(&mut tape, NetRef::Trainable, *t, x_node, None);
                    let t_node = tape.constant(&targets[idx]);
                    let term = tape.mse(pred, t_node);
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term),
                    });
                }
                let node = tape.scale(acc.unwrap(), 1.0 / bs as f64);
                tape.backward(node).map_err(|e| Error::Ipf {
                    round: state.rounds_completed,
                    direction: "distill",
                    msg: format!("iteration {it}: {e}"),
                })?;
                let grad = tape.into_grad();
                adam.step(net.params_mut(), &grad).map_err(|e| Error::Ipf {
                    round: state.rounds_completed,
                    direction: "distill",
                    msg: format!("iteration {it}: {e}"),
                })?;
                if it % 50 == 49 || it + 1 == cfg.distill_iterations {
                    let err_norm: f64 = cloud
                        .iter()
                        .zip(&targets)
                        .map(|((t, x), target)| {
                            let pred = net.eval(*t, x, None);
                            pred.iter()
                                .zip(target)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                        })
                        .sum::<f64>()
                        .sqrt();
                    let rel = err_norm / target_norm.max(1e-12);
                    if best.as_ref().map_or(true, |(b, _)| rel < *b) {
                        best = Some((rel, net.params().to_vec()));
                    }
                    if rel <= cfg.distill_tolerance {
                        break;
                    }
                }
            }
            let (rel, params) = best.expect("at least one evaluation");
            net.set_params(&params);
            state.distilled = Some(net);
            Ok(Some(rel))
        }
    }
}

/// Finite-difference check of the refinement-round loss gradient, with the
/// frozen drift stack, the score network and the on-tape probability flow all
/// in the graph; returns the worst relative error over 40 probed coordinates
/// (fails above 1e-4).
pub fn gradient_check(rng: &mut Prng) -> Result<f64> {
    let target = TargetDensity::gaussian(
        crate::models::GaussianParams::isotropic(vec![0.2], 1.5)?,
        1.0,
    )?;
    let grid = TimeGrid::uniform(1.0, 4)?;
    let arch = Arch::for_sampler(1, 0, 1.0).with_hidden(vec![6]);
    let mut u = MlpFunction::init(arch.clone(), rng);
    for p in u.params_mut().iter_mut() {
        *p += 0.08;
    }
    let frozen_c = MlpFunction::init(arch.clone(), rng);
    let score_net = MlpFunction::init(arch, rng);
    let corrections = vec![&frozen_c];
    let fit = HFit {
        target: &target,
        grid: &grid,
        corrections: &corrections,
        initial_density: InitialLogDensity::Flow {
            score: ScoreFieldRef::Net(&score_net),
            steps: 3,
        },
    };
    let batch = 2;
    let z0s: Vec<Vec<f64>> = (0..batch).map(|_| rng.normal_vec(1)).collect();
    let noises: Vec<Vec<Vec<f64>>> = (0..batch)
        .map(|_| (0..grid.steps()).map(|_| rng.normal_vec(1)).collect())
        .collect();
    let value_and_grad = |params: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut probe = u.clone();
        probe.set_params(params);
        let mut tape = Tape::new(probe.params());
        let frozen: Vec<(&MlpFunction, NetRef)> = corrections
            .iter()
            .map(|n| (*n, tape.register_frozen(n.params())))
            .collect();
        let sref = Some((&score_net, tape.register_frozen(score_net.params())));
        let node = fit.loss_tape(&mut tape, &probe, &frozen, sref, &z0s, &noises)?;
        let v = tape.scalar_value(node);
        tape.backward(node)?;
        Ok((v, tape.into_grad()))
    };
    let (_, grad) = value_and_grad(u.params())?;
    let mut loss_fn = |p: &[f64]| value_and_grad(p).unwrap().0;
    crate::nn::finite_difference_check(&mut loss_fn, u.params(), &grad, 40, 1e-4, rng)
}

/// Runs the full alternation and returns the final state; the sampler is the
/// backward SDE with the composed drift.
pub fn run_dsb_gs(
    target: &TargetDensity,
    config: &DsbGsConfig,
    rng: &mut Prng,
) -> Result<GsIpfState> {
    run_dsb_gs_with(target, config, rng, |_| Ok(()))
}

/// As [`run_dsb_gs`], invoking `on_round` after each completed round
/// (checkpointing hook; the callback sees the in-progress state).
pub fn run_dsb_gs_with(
    target: &TargetDensity,
    config: &DsbGsConfig,
    rng: &mut Prng,
    mut on_round: impl FnMut(&GsIpfState) -> Result<()>,
) -> Result<GsIpfState> {
    config.validate()?;
    let mut state = GsIpfState::new(target.clone(), config.clone());
    for round in 0..config.ipf_rounds {
        let score_tail = fit_marginal_score(&mut state, rng)?;
        let h_tail = fit_h_correction(&mut state, rng)?;
        let distill_rel = update_drift(&mut state, rng)?;
        state.diagnostics.push(GsRoundDiagnostics {
            round,
            score_loss_tail: score_tail,
            h_loss_tail: h_tail,
            distill_rel_l2: distill_rel,
        });
        state.rounds_completed = round + 1;
        on_round(&state)?;
    }
    Ok(state)
}

/// Draws samples from the final backward process, together with log
/// importance weights against the target (valid for any composed drift:
/// the reference chain uses exact OU kernels, so the weight mean estimates Z
/// without discretization bias).
pub fn sample_dsb_gs(
    state: &GsIpfState,
    n: usize,
    rng: &mut Prng,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    sample_dsb_gs_with_workers(state, n, rng, 1)
}

/// As [`sample_dsb_gs`], with chains distributed over `workers` threads.
pub fn sample_dsb_gs_with_workers(
    state: &GsIpfState,
    n: usize,
    rng: &mut Prng,
    workers: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let stack = CorrectionStack {
        nets: state.correction_nets(),
        dim: state.target.dim(),
    };
    crate::ddgs::sample_with_weights_workers(
        &stack,
        &state.target,
        &state.config.grid,
        n,
        rng,
        workers,
    )
}
