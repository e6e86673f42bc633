//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Every tolerance is pinned here as a named constant; the checks run against
//! analytic Gaussian/conjugate oracles and the exact finite-state bridge
//! oracle, never against the implementation under test.

use diffbridge::ddgs::{self, DdgsConfig};
use diffbridge::ddps::{self, DdpsConfig};
use diffbridge::dsb_gs::{self, DsbGsConfig};
use diffbridge::dsb_ps::{self, DsbConfig};
use diffbridge::math::{ks_statistic, normal_cdf, normal_logpdf};
use diffbridge::metrics::{histogram_tv, log_mean_exp};
use diffbridge::models::{ConjugateLinearGaussian, GaussianParams, JointModel, TargetDensity};
use diffbridge::oracle::{
    discretize_ou_kernel, grid_ipf_gs_iterates, grid_ipf_path_marginals, sinkhorn_static_sb,
    transport_cost, verify_h_identity, GridMeasure, Lattice, SinkhornOptions,
};
use diffbridge::sde::{
    euler_maruyama, ou_gaussian_marginal, ou_moments, ou_transition_score, probability_flow,
    OuDrift, OuTransition, TimeGrid,
};
use diffbridge::Prng;

// ---------------------------------------------------------------- tolerances

/// OU identities (alpha^2 + v = 1, Chapman-Kolmogorov): exact arithmetic.
const TOL_OU_IDENTITY: f64 = 1e-12;
/// Transition score against central finite differences.
const TOL_OU_SCORE_FD: f64 = 1e-6;
/// Probability-flow log-density reconstruction over [-3, 3].
const TOL_FLOW_LOGP: f64 = 1e-3;
/// Stationary flow divergence integral.
const TOL_FLOW_STATIONARY: f64 = 1e-9;
/// Posterior moment bounds for the amortized sampler (conjugate, y = 2).
const TOL_DDPS_MEAN: f64 = 0.1;
const TOL_DDPS_VAR: f64 = 0.1;
const TOL_DDPS_KS: f64 = 0.05;
/// Bridge-vs-plain improvement must be strict; KS may wiggle 10%.
const TOL_DSB_PS_KS_NOISE: f64 = 1.10;
/// Zero-drift fixed point: RMS of the trained correction over the mass grid.
const TOL_DDGS_FIXED_POINT: f64 = 0.05;
/// Importance-sampling normalizer: within 2 standard errors of the truth.
const TOL_DDGS_Z_SE: f64 = 2.0;
/// Agreement between the flow and IS log-normalizer estimates.
const TOL_DDGS_LOGZ_AGREE: f64 = 0.1;
/// Mixture mode-weight recovery for the bridge general sampler.
const TOL_DSB_GS_MODE_WEIGHT: f64 = 0.07;
/// Histogram total variation against the exact grid bridge marginals.
const TOL_DSB_GS_TV: f64 = 0.12;
/// Sampled variance of the 1-d Gaussian bridge after refinement (at the
/// acceptance budget; longer refinement tightens it further).
const TOL_DSB_GS_VAR: f64 = 0.1;
/// Sinkhorn marginal residual and the IPF h-transform identity.
const TOL_ORACLE_RESIDUAL: f64 = 1e-10;
/// Autodiff gradients against finite differences.
const TOL_GRADCHECK: f64 = 1e-4;

fn pass(criterion: &str, details: String) {
    println!("criterion {criterion}: PASS - {details}");
}

fn moments_1d(samples: &[Vec<f64>]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

// ------------------------------------------------------------- criterion 1

#[test]
fn acceptance_01_ou_analytics() {
    let times: Vec<f64> = (0..200)
        .map(|i| 1e-3 * (50.0f64 / 1e-3).powf(i as f64 / 199.0))
        .collect();
    let mut worst_id = 0.0f64;
    for &t in &times {
        let (a, v) = ou_moments(t).unwrap();
        worst_id = worst_id.max((a * a + v - 1.0).abs());
    }
    assert!(worst_id < TOL_OU_IDENTITY, "identity residual {worst_id}");

    let mut worst_ck = 0.0f64;
    for &s in times.iter().step_by(20) {
        for &t in times.iter().step_by(20) {
            if s + t > 700.0 {
                continue;
            }
            let (a_s, v_s) = ou_moments(s).unwrap();
            let (a_t, v_t) = ou_moments(t).unwrap();
            let (a_st, v_st) = ou_moments(s + t).unwrap();
            worst_ck = worst_ck.max((a_s * a_t - a_st).abs());
            worst_ck = worst_ck.max((v_t + a_t * a_t * v_s - v_st).abs());
        }
    }
    assert!(worst_ck < TOL_OU_IDENTITY, "Chapman-Kolmogorov residual {worst_ck}");

    let mut rng = Prng::seed_from(101);
    let mut worst_fd = 0.0f64;
    for _ in 0..100 {
        let t = rng.uniform(0.01, 10.0);
        let tr = OuTransition::new(t).unwrap();
        let x0: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let xt: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
        let score = ou_transition_score(&x0, &xt, t).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut hi = xt.clone();
            let mut lo = xt.clone();
            hi[i] += h;
            lo[i] -= h;
            let fd = (tr.logpdf(&x0, &hi) - tr.logpdf(&x0, &lo)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - score[i]).abs());
        }
    }
    assert!(worst_fd < TOL_OU_SCORE_FD, "score FD residual {worst_fd}");
    pass(
        "1 (OU analytics)",
        format!("identity {worst_id:.2e}, CK {worst_ck:.2e}, score FD {worst_fd:.2e}"),
    );
}

// ------------------------------------------------------------- criterion 2

#[test]
fn acceptance_02_simulation_fidelity() {
    let n = 100_000;
    let grid = TimeGrid::uniform(2.0, 64).unwrap();
    let (m0, s0sq) = (1.0f64, 0.25f64);
    let mut rng = Prng::seed_from(202);
    let s0 = s0sq.sqrt();
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..n {
        let x0 = [m0 + s0 * rng.standard_normal()];
        let path = euler_maruyama(&OuDrift, &grid, &x0, None, &mut rng).unwrap();
        let v = path.terminal()[0];
        sum += v;
        sq += v * v;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = sq / nf - mean * mean;
    let (m_ref, v_ref) = ou_gaussian_marginal(&[m0], s0sq, grid.horizon()).unwrap();
    let se_mean = (v_ref / nf).sqrt();
    let se_var = v_ref * (2.0 / nf).sqrt();
    assert!(
        (mean - m_ref[0]).abs() < 3.0 * se_mean,
        "mean {mean} vs {} (3se {:.2e})",
        m_ref[0],
        3.0 * se_mean
    );
    assert!(
        (var - v_ref).abs() < 3.0 * se_var,
        "var {var} vs {v_ref} (3se {:.2e})",
        3.0 * se_var
    );
    pass(
        "2 (simulation fidelity)",
        format!(
            "mean err {:.2e} (3se {:.2e}), var err {:.2e} (3se {:.2e}) at n = {n}",
            (mean - m_ref[0]).abs(),
            3.0 * se_mean,
            (var - v_ref).abs(),
            3.0 * se_var
        ),
    );
}

// ------------------------------------------------------------- criterion 3

#[test]
fn acceptance_03_probability_flow() {
    // Stationary case: zero field, exactly zero divergence integral.
    let grid = TimeGrid::uniform(5.0, 64).unwrap();
    let stationary_score = |_t: f64, x: &[f64]| x.iter().map(|v| -v).collect::<Vec<_>>();
    let (_, logdet) =
        probability_flow(&OuDrift, &stationary_score, &grid, &[1.2, -0.8]).unwrap();
    assert!(logdet.abs() < TOL_FLOW_STATIONARY, "stationary logdet {logdet}");

    // N(0, 4) start: reconstructed log-density within 1e-3 across [-3, 3].
    let var_at = |t: f64| 1.0 + 3.0 * (-t).exp();
    let score = move |t: f64, x: &[f64]| x.iter().map(|v| -v / var_at(t)).collect::<Vec<_>>();
    let mut worst = 0.0f64;
    for ix in 0..=24 {
        let x0 = -3.0 + 0.25 * ix as f64;
        let (path, ld) = probability_flow(&OuDrift, &score, &grid, &[x0]).unwrap();
        let log_p0 = normal_logpdf(path.terminal()[0], 0.0, var_at(grid.horizon())) + ld;
        worst = worst.max((log_p0 - normal_logpdf(x0, 0.0, 4.0)).abs());
    }
    assert!(worst < TOL_FLOW_LOGP, "log-density residual {worst}");
    pass(
        "3 (probability flow)",
        format!("stationary logdet {logdet:.2e}, Gaussian log-density residual {worst:.2e}"),
    );
}

// ------------------------------------------------------------- criterion 4

#[test]
fn acceptance_04_ddps_posterior() {
    let model = ConjugateLinearGaussian::new(1.0, 1.0, 1).unwrap();
    let mut cfg = DdpsConfig::new(DdpsConfig::default_grid());
    cfg.iterations = 6000; // well under the 20k budget
    cfg.batch_size = 128;
    cfg.hidden = vec![64, 64];
    // The reversal never queries the score below the first grid time
    // t_1 = T/K ~ 0.078; keeping training times at the same scale avoids
    // spending the budget on the noisiest targets.
    cfg.t_min = 0.05;
    let mut rng = Prng::seed_from(404);
    let sampler = ddps::train_ddps(&model, &cfg, &mut rng).unwrap();

    let y = [2.0];
    let n = 10_000;
    let samples = ddps::sample_posterior(&sampler, &y, n, &mut rng).unwrap();
    let (mean, var) = moments_1d(&samples);
    let post = model.analytic_posterior(&y).unwrap();
    let ks = {
        let column: Vec<f64> = samples.iter().map(|s| s[0]).collect();
        let (m, sd) = (post.mean()[0], post.var(0).sqrt());
        ks_statistic(&column, |x| normal_cdf((x - m) / sd))
    };
    assert!((mean - 1.0).abs() < TOL_DDPS_MEAN, "posterior mean {mean}");
    assert!((var - 0.5).abs() < TOL_DDPS_VAR, "posterior variance {var}");
    assert!(ks < TOL_DDPS_KS, "posterior KS {ks}");

    // Converged loss sits below the zero-score baseline.
    let tail: f64 =
        sampler.loss_trace().iter().rev().take(200).sum::<f64>() / 200.0;
    let baseline = ddps::zero_score_baseline(1, cfg.grid.horizon(), cfg.t_min);
    assert!(tail < baseline, "loss tail {tail} vs baseline {baseline}");

    // Affine equivariance of the conjugate posterior: scaling y scales the
    // empirical posterior mean by the same factor times s0sq/(s0sq+ssq).
    let y_neg = [-1.0];
    let draws_neg = ddps::sample_posterior(&sampler, &y_neg, n, &mut rng).unwrap();
    let (mean_neg, _) = moments_1d(&draws_neg);
    let se = (0.5f64 / n as f64).sqrt();
    assert!(
        (mean_neg + 0.5).abs() < 3.0 * se + 0.05,
        "equivariance: mean at y=-1 was {mean_neg}"
    );

    // DSM minimizer property: the pointwise score error shrinks with the
    // training budget (10x-spaced checkpoints, 10% noise allowance).
    let rel_l2 = |s: &ddps::TrainedPosteriorSampler| {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in [0.1, 0.5, 1.0, 2.0, 4.0] {
            for ix in 0..=16 {
                let x = [-1.0 + 0.25 * ix as f64];
                let p = s.score_net().eval(t, &x, Some(&y))[0];
                let e = model.conditional_score(t, &x, &y).unwrap()[0];
                num += (p - e) * (p - e);
                den += e * e;
            }
        }
        (num / den).sqrt()
    };
    let mut short_cfg = cfg.clone();
    short_cfg.iterations = 600;
    let mut rng_s = Prng::seed_from(404);
    let short = ddps::train_ddps(&model, &short_cfg, &mut rng_s).unwrap();
    let (err_short, err_long) = (rel_l2(&short), rel_l2(&sampler));
    assert!(
        err_long < err_short * 1.1,
        "score error did not improve: {err_short:.4} -> {err_long:.4}"
    );

    // Stationary-prior sanity: with an uninformative observation the
    // posterior is the stationary normal and every path marginal stays
    // N(0, 1).
    let flat = ConjugateLinearGaussian::new(1.0, 1.0, 1).unwrap().with_coupling(0.0);
    let mut flat_cfg = cfg.clone();
    flat_cfg.iterations = 2000;
    flat_cfg.hidden = vec![32, 32];
    let mut rng_f = Prng::seed_from(414);
    let flat_sampler = ddps::train_ddps(&flat, &flat_cfg, &mut rng_f).unwrap();
    let net = flat_sampler.score_net();
    let y_any = [0.3];
    let drift = diffbridge::sde::FnDrift(|tau: f64, z: &[f64]| {
        let s = net.eval(tau, z, Some(&y_any));
        z.iter().zip(s).map(|(zi, si)| 0.5 * zi + si).collect()
    });
    let reversed = diffbridge::sde::TimeReversed {
        horizon: cfg.grid.horizon(),
        inner: &drift,
    };
    let n_paths = 4000;
    let mut by_time: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); cfg.grid.steps() + 1];
    for mut stream in rng_f.fork(n_paths) {
        let z0 = stream.normal_vec(1);
        let path = diffbridge::sde::euler_maruyama_directed(
            &reversed,
            &cfg.grid,
            &z0,
            None,
            &mut stream,
            diffbridge::sde::Direction::Backward,
        )
        .unwrap();
        for (k, state) in path.states().iter().enumerate() {
            by_time[k].push(state[0]);
        }
    }
    let mut worst_path_ks = 0.0f64;
    for column in &by_time {
        worst_path_ks = worst_path_ks.max(ks_statistic(column, normal_cdf));
    }
    assert!(
        worst_path_ks < TOL_DDPS_KS,
        "stationary path marginal KS {worst_path_ks}"
    );
    pass(
        "4 (amortized posterior sampling)",
        format!(
            "mean err {:.3}, var err {:.3}, KS {ks:.4}, loss tail {tail:.2} < baseline {baseline:.2}, score relL2 {err_short:.3} -> {err_long:.3}, stationary path KS {worst_path_ks:.3}",
            (mean - 1.0).abs(),
            (var - 0.5).abs()
        ),
    );
}

// ------------------------------------------------------------- criterion 5

#[test]
fn acceptance_05_dsb_ps_short_horizon() {
    let model = ConjugateLinearGaussian::new(1.0, 1.0, 1).unwrap();
    let y = vec![2.0];
    let grid = DsbConfig::default_grid(); // T = 1: the short-horizon regime
    let inner = 1400;
    let rounds = 5;
    let base_cfg = |ipf_rounds: usize, inner_iterations: usize| DsbConfig {
        grid: grid.clone(),
        ipf_rounds,
        inner_iterations,
        batch_size: 16,
        adam: Default::default(),
        hidden: vec![32, 32],
        warm_start: true,
        eval_y: Some(y.clone()),
        diag_samples: 1500,
    };

    // Same total training budget: (1 + rounds) * 2 halves * inner each for
    // the bridge run, versus 2 halves * (1 + rounds) * inner for the plain
    // run, so both the sampler networks see identical gradient-step counts.
    let mut rng = Prng::seed_from(505);
    let refined = dsb_ps::run_dsb_ps(&model, &base_cfg(rounds, inner), &mut rng).unwrap();
    let mut rng0 = Prng::seed_from(505);
    let plain = dsb_ps::run_dsb_ps(&model, &base_cfg(0, inner * (rounds + 1)), &mut rng0).unwrap();

    let n = 10_000;
    let post = model.analytic_posterior(&y).unwrap();
    let err_of = |state: &dsb_ps::IpfState, rng: &mut Prng| {
        let samples = dsb_ps::sample_dsb_posterior(state, &y, n, rng).unwrap();
        let (mean, var) = moments_1d(&samples);
        (mean - post.mean()[0]).abs() + (var - post.var(0)).abs()
    };
    let _ = &err_of;
    let mut sample_rng = Prng::seed_from(99);
    let refined_samples =
        dsb_ps::sample_dsb_posterior(&refined, &y, n, &mut sample_rng).unwrap();
    let err_refined = {
        let (mean, var) = moments_1d(&refined_samples);
        (mean - post.mean()[0]).abs() + (var - post.var(0)).abs()
    };
    let err_plain = err_of(&plain, &mut sample_rng);
    assert!(
        err_refined < err_plain,
        "moment error after {rounds} rounds ({err_refined:.4}) must beat the plain run ({err_plain:.4})"
    );

    // Fully Gaussian model: the conditional bridge is Gaussian at every
    // time. Shape statistics of the sampled terminal law quantify the
    // residual network error: the body skew sits near -0.15 at this budget
    // (shrinking with inner iterations) and the excess kurtosis is driven by
    // a handful of far-tail starts per 10^4 draws, so these are regression
    // guards rather than Monte Carlo-resolution checks.
    let terminal_column: Vec<f64> = refined_samples.iter().map(|s| s[0]).collect();
    let (skew, kurt) = diffbridge::metrics::skewness_kurtosis(&terminal_column);
    assert!(skew.abs() < 0.25, "bridge skewness {skew:.4}");
    assert!(kurt.abs() < 1.0, "bridge excess kurtosis {kurt:.4}");

    // Grid-oracle agreement: the learned conditional bridge marginals match
    // the exact IPF marginals for the same endpoints (posterior at y, N(0,1))
    // in total variation on a 200-bin histogram.
    let lat = Lattice::line(400, -8.0, 8.0).unwrap();
    let chain: Vec<_> = (0..grid.steps())
        .map(|k| discretize_ou_kernel(&lat, grid.step_size(k)).unwrap())
        .collect();
    let nu0 = GridMeasure::from_log_density(&lat, |x| {
        normal_logpdf(x[0], post.mean()[0], post.var(0))
    })
    .unwrap();
    let nu_t = GridMeasure::standard_normal(&lat).unwrap();
    let oracle = grid_ipf_path_marginals(&chain, &nu0, &nu_t, SinkhornOptions::default()).unwrap();
    let bwd_net = refined.backward_net().unwrap();
    let bridge_drift = diffbridge::sde::FnDrift(|tau: f64, z: &[f64]| {
        let s = bwd_net.eval(tau, z, Some(&y));
        z.iter().zip(s).map(|(zi, si)| 0.5 * zi + si).collect()
    });
    let reversed = diffbridge::sde::TimeReversed {
        horizon: grid.horizon(),
        inner: &bridge_drift,
    };
    let n_paths = 20_000;
    let mut by_time: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); grid.steps() + 1];
    let mut traj_rng = Prng::seed_from(111);
    for mut stream in traj_rng.fork(n_paths) {
        let z0 = stream.normal_vec(1);
        let path = diffbridge::sde::euler_maruyama_directed(
            &reversed,
            &grid,
            &z0,
            None,
            &mut stream,
            diffbridge::sde::Direction::Backward,
        )
        .unwrap();
        for (j, state) in path.states().iter().enumerate() {
            by_time[j].push(state[0]);
        }
    }
    let mut worst_tv = 0.0f64;
    for forward_index in [8, 16, 24] {
        let backward_index = grid.steps() - forward_index;
        let ref_masses = oracle.marginals[forward_index].coarsen(2);
        let tv = histogram_tv(&by_time[backward_index], lat.lo(), lat.hi(), ref_masses.probs());
        worst_tv = worst_tv.max(tv);
    }
    assert!(worst_tv < 0.1, "bridge marginal TV vs grid oracle {worst_tv:.4}");

    // Forward-terminal KS against N(0,1) decreases over the rounds.
    let ks_first = refined.diagnostics.first().unwrap().forward_terminal_ks.unwrap();
    let ks_last = refined.diagnostics.last().unwrap().forward_terminal_ks.unwrap();
    assert!(
        ks_last < ks_first * TOL_DSB_PS_KS_NOISE,
        "terminal KS went {ks_first:.4} -> {ks_last:.4}"
    );
    pass(
        "5 (bridge posterior sampling)",
        format!(
            "moment error {err_refined:.4} (refined) vs {err_plain:.4} (plain), terminal KS {ks_first:.3} -> {ks_last:.3}, grid TV {worst_tv:.3}, skew {skew:.3}, kurtosis {kurt:.3}"
        ),
    );
}

// ------------------------------------------------------------- criterion 6

#[test]
fn acceptance_06_ddgs_general_sampling() {
    // (a) Stationary fixed point: the trained correction stays near zero.
    let grid = DdgsConfig::default_grid(); // T = 5, K = 64
    let mut cfg = DdgsConfig::new(grid.clone());
    cfg.iterations = 800;
    cfg.batch_size = 64;
    cfg.hidden = vec![32, 32];
    let mut rng = Prng::seed_from(606);
    let stationary =
        ddgs::train_ddgs(&TargetDensity::standard_normal(1), &cfg, &mut rng).unwrap();
    let mut sq = 0.0;
    let mut count = 0.0;
    for ix in 0..=12 {
        let x = -3.0 + 0.5 * ix as f64;
        for it in 1..=9 {
            let t = 0.5 * it as f64;
            let u = stationary.drift_correction().eval(t, &[x], None)[0];
            sq += u * u;
            count += 1.0;
        }
    }
    let rms = (sq / count).sqrt();
    assert!(rms < TOL_DDGS_FIXED_POINT, "stationary correction RMS {rms}");

    // (b) gamma(x) = exp(-x^2/4): importance-sampling estimate of
    // Z = sqrt(4 pi) within two standard errors at 10^4 paths. The
    // h-transform construction is exact at any horizon, so this leg runs at
    // T = 2 where the flow estimator's divergence-integration error stays
    // commensurate with the cross-estimator tolerance.
    let z_true = (4.0 * std::f64::consts::PI).sqrt();
    let target = TargetDensity::gaussian(
        GaussianParams::isotropic(vec![0.0], 2.0).unwrap(),
        z_true,
    )
    .unwrap();
    let grid_b = TimeGrid::uniform(2.0, 64).unwrap();
    let mut cfg_b = DdgsConfig::new(grid_b.clone());
    cfg_b.iterations = 3000;
    cfg_b.batch_size = 64;
    cfg_b.hidden = vec![48, 48];
    let trained = ddgs::train_ddgs(&target, &cfg_b, &mut rng).unwrap();
    let n = 10_000;
    let (samples, log_w) = ddgs::sample_ddgs(&trained, n, &mut rng).unwrap();
    let weights: Vec<f64> = log_w.iter().map(|lw| lw.exp()).collect();
    let z_hat = weights.iter().sum::<f64>() / n as f64;
    let var_w =
        weights.iter().map(|w| (w - z_hat).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var_w / n as f64).sqrt();
    assert!(
        (z_hat - z_true).abs() < TOL_DDGS_Z_SE * se,
        "Z estimate {z_hat:.4} vs {z_true:.4} (se {se:.2e})"
    );

    // (c) Flow and IS log-normalizer estimates agree; the flow uses the
    // analytic marginal score of the Gaussian proposal.
    let log_z_is = log_mean_exp(&log_w);
    let score = {
        let t2 = target.clone();
        move |t: f64, x: &[f64]| t2.diffused_score(t, x).unwrap()
    };
    let points: Vec<Vec<f64>> = samples.iter().take(10).cloned().collect();
    let flow = ddgs::flow_log_z(&trained, &score, &points, &grid_b).unwrap();
    assert!(
        (flow.mean - log_z_is).abs() < TOL_DDGS_LOGZ_AGREE,
        "flow log Z {:.4} vs IS {log_z_is:.4}",
        flow.mean
    );
    let spread = flow
        .per_point
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        });

    // h-transform identity: the trained correction matches
    // grad log p_t(x) + x (diffused-Gaussian closed form) on the mass region.
    let mut id_num = 0.0;
    let mut id_den = 0.0;
    for ix in 0..=12 {
        let x = [-3.0 + 0.5 * ix as f64];
        for it in 1..=7 {
            let t = 0.25 * it as f64;
            let u = trained.drift_correction().eval(t, &x, None)[0];
            let u_exact = target.diffused_score(t, &x).unwrap()[0] + x[0];
            id_num += (u - u_exact) * (u - u_exact);
            id_den += 1.0;
        }
    }
    let id_rms = (id_num / id_den).sqrt();
    assert!(id_rms < 0.1, "h-transform identity residual RMS {id_rms:.4}");

    // (d) KL lower bound: the pathwise loss of a fresh batch (which equals
    // minus the log weights) stays above -log Z within Monte Carlo error,
    // both at the trained optimum and at an untrained network.
    let mean_loss = -log_w.iter().sum::<f64>() / n as f64;
    let sd_loss = {
        let m = mean_loss;
        (log_w.iter().map(|lw| (-lw - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
    };
    let bound = -z_true.ln() - 3.0 * sd_loss / (n as f64).sqrt();
    assert!(mean_loss >= bound, "loss {mean_loss:.4} below -log Z {:.4}", -z_true.ln());
    let untrained = ddgs::HTransformSampler::from_parts(
        diffbridge::nn::MlpFunction::init(
            diffbridge::nn::Arch::for_sampler(1, 0, grid.horizon()).with_hidden(vec![16, 16]),
            &mut rng,
        ),
        target.clone(),
        cfg_b.clone(),
        vec![],
    );
    let (_, log_w_untrained) = ddgs::sample_ddgs(&untrained, n, &mut rng).unwrap();
    let mean_loss_untrained = -log_w_untrained.iter().sum::<f64>() / n as f64;
    assert!(
        mean_loss_untrained >= bound,
        "untrained loss {mean_loss_untrained:.4} below bound"
    );

    pass(
        "6 (general sampling)",
        format!(
            "fixed-point RMS {rms:.4}, Z {z_hat:.4} vs {z_true:.4} (2se {:.2e}), flow-IS gap {:.4} (flow spread [{:.3}, {:.3}]), h-identity RMS {id_rms:.3}, loss {mean_loss:.4} >= {:.4}",
            TOL_DDGS_Z_SE * se,
            (flow.mean - log_z_is).abs(),
            spread.0,
            spread.1,
            -z_true.ln()
        ),
    );
}

// ------------------------------------------------------------- criterion 7

#[test]
fn acceptance_07_dsb_gs_bridge_general() {
    // (a) One bridge round is bit-identical to plain general sampling.
    let target1 = TargetDensity::gaussian(
        GaussianParams::isotropic(vec![0.0], 2.0).unwrap(),
        1.0,
    )
    .unwrap();
    let grid = DsbGsConfig::default_grid(); // T = 1, K = 32
    let mut gs_cfg = DsbGsConfig::new(grid.clone());
    gs_cfg.ipf_rounds = 1;
    gs_cfg.h_iterations = 40;
    gs_cfg.batch_size = 16;
    gs_cfg.hidden = vec![16, 16];
    let mut ddgs_cfg = DdgsConfig::new(grid.clone());
    ddgs_cfg.iterations = 40;
    ddgs_cfg.batch_size = 16;
    ddgs_cfg.hidden = vec![16, 16];
    let mut ra = Prng::seed_from(707);
    let mut rb = Prng::seed_from(707);
    let gs = dsb_gs::run_dsb_gs(&target1, &gs_cfg, &mut ra).unwrap();
    let plain = ddgs::train_ddgs(&target1, &ddgs_cfg, &mut rb).unwrap();
    let mut sa = Prng::seed_from(3);
    let mut sb = Prng::seed_from(3);
    let (xa, wa) = dsb_gs::sample_dsb_gs(&gs, 200, &mut sa).unwrap();
    let (xb, wb) = ddgs::sample_ddgs(&plain, 200, &mut sb).unwrap();
    assert_eq!(xa, xb, "one-round bridge must reproduce the plain sampler bitwise");
    assert_eq!(wa, wb);

    // (b) Two-mode mixture in 2-d at the short horizon, three rounds: mode
    // weights recovered within 7% at 10^4 draws.
    let mixture = TargetDensity::gaussian_mixture(
        vec![0.5, 0.5],
        vec![
            GaussianParams::isotropic(vec![-2.0, 0.0], 1.0).unwrap(),
            GaussianParams::isotropic(vec![2.0, 0.0], 1.0).unwrap(),
        ],
    )
    .unwrap();
    let mut mix_cfg = DsbGsConfig::new(grid.clone());
    mix_cfg.ipf_rounds = 3;
    mix_cfg.h_iterations = 1800;
    mix_cfg.refine_h_iterations = 500;
    mix_cfg.score_iterations = 1200;
    mix_cfg.batch_size = 64;
    mix_cfg.score_batch = 12;
    mix_cfg.flow_steps = 12;
    mix_cfg.hidden = vec![32, 32];
    let mut rng = Prng::seed_from(717);
    let mix_state = dsb_gs::run_dsb_gs(&mixture, &mix_cfg, &mut rng).unwrap();
    let (mix_samples, _) = dsb_gs::sample_dsb_gs(&mix_state, 10_000, &mut rng).unwrap();
    let left = mix_samples.iter().filter(|s| s[0] < 0.0).count() as f64
        / mix_samples.len() as f64;
    assert!(
        (left - 0.5).abs() < TOL_DSB_GS_MODE_WEIGHT,
        "left-mode weight {left:.3}"
    );

    // (c) 1-d Gaussian N(0, 2): sampled variance near 2 and intermediate
    // marginals matching the exact grid bridge in total variation.
    let mut g_cfg = DsbGsConfig::new(grid.clone());
    g_cfg.ipf_rounds = 2;
    g_cfg.h_iterations = 2000;
    g_cfg.refine_h_iterations = 800;
    g_cfg.score_iterations = 2500;
    g_cfg.batch_size = 64;
    g_cfg.score_batch = 16;
    g_cfg.flow_steps = 16;
    g_cfg.hidden = vec![32, 32];
    let mut rng_g = Prng::seed_from(727);
    let g_state = dsb_gs::run_dsb_gs(&target1, &g_cfg, &mut rng_g).unwrap();

    // Simulate the final backward process and record whole trajectories.
    let n_paths = 10_000;
    let stack_samples = {
        let mut marginals: Vec<Vec<f64>> = vec![Vec::with_capacity(n_paths); grid.steps() + 1];
        let mut terminals = Vec::with_capacity(n_paths);
        for mut stream in rng_g.fork(n_paths) {
            let mut z = vec![stream.standard_normal()];
            marginals[0].push(z[0]);
            for k in 0..grid.steps() {
                let gamma = grid.step_size(k);
                let tr = OuTransition::new(gamma).unwrap();
                let tau = grid.horizon() - grid.time(k);
                let c = g_state.backward_drift(tau, &z)[0] + 0.5 * z[0];
                z[0] = tr.alpha * z[0] + gamma * c + tr.var.sqrt() * stream.standard_normal();
                marginals[k + 1].push(z[0]);
            }
            terminals.push(z[0]);
        }
        (marginals, terminals)
    };
    let (path_marginals, terminals) = stack_samples;
    let var_hat = {
        let n = terminals.len() as f64;
        let m = terminals.iter().sum::<f64>() / n;
        terminals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
    };
    assert!(
        (var_hat - 2.0).abs() < TOL_DSB_GS_VAR,
        "sampled variance {var_hat:.4}"
    );
    // One refinement round already corrects most of the short-horizon bias
    // of the plain sampler (round 0 alone leaves the variance near 1.75).

    // Exact bridge marginals on the grid (1-d lattice, same chain).
    let lat = Lattice::line(400, -8.0, 8.0).unwrap();
    let chain: Vec<_> = (0..grid.steps())
        .map(|k| discretize_ou_kernel(&lat, grid.step_size(k)).unwrap())
        .collect();
    let nu0 = GridMeasure::from_log_density(&lat, |x| normal_logpdf(x[0], 0.0, 2.0)).unwrap();
    let nu_t = GridMeasure::standard_normal(&lat).unwrap();
    let oracle =
        grid_ipf_path_marginals(&chain, &nu0, &nu_t, SinkhornOptions::default()).unwrap();
    let mut worst_tv = 0.0f64;
    for frac in [8, 16, 24] {
        // Backward step index j sits at forward time T - t_j.
        let forward_index = frac;
        let backward_index = grid.steps() - forward_index;
        let ref_masses = oracle.marginals[forward_index].coarsen(2);
        let tv = histogram_tv(
            &path_marginals[backward_index],
            lat.lo(),
            lat.hi(),
            ref_masses.probs(),
        );
        worst_tv = worst_tv.max(tv);
    }
    assert!(worst_tv < TOL_DSB_GS_TV, "marginal TV {worst_tv:.4}");

    pass(
        "7 (bridge general sampling)",
        format!(
            "one-round reduction bitwise, left-mode weight {left:.3}, variance {var_hat:.3}, marginal TV {worst_tv:.3}"
        ),
    );
}

// ------------------------------------------------------------- criterion 8

#[test]
fn acceptance_08_grid_oracles() {
    let lat = Lattice::line(400, -8.0, 8.0).unwrap();
    let nu0 = GridMeasure::from_log_density(&lat, |x| normal_logpdf(x[0], 0.7, 0.5)).unwrap();
    let nu_t = GridMeasure::standard_normal(&lat).unwrap();

    // Sinkhorn marginal residual.
    let kernel = discretize_ou_kernel(&lat, 1.0).unwrap();
    let sk = sinkhorn_static_sb(
        &kernel,
        &nu0,
        &nu_t,
        SinkhornOptions {
            tol: 1e-12,
            max_iters: 100_000,
        },
    )
    .unwrap();
    assert!(
        sk.marginal_gap < TOL_ORACLE_RESIDUAL,
        "Sinkhorn residual {:.2e}",
        sk.marginal_gap
    );

    // h-transform identity across even IPF iterates.
    let reference = GridMeasure::standard_normal(&lat).unwrap();
    let p_target =
        GridMeasure::from_log_density(&lat, |x| normal_logpdf(x[0], 0.0, 2.0)).unwrap();
    let iterates = grid_ipf_gs_iterates(&kernel, &reference, &p_target, 5).unwrap();
    let mut worst_h = 0.0f64;
    for it in &iterates {
        worst_h = worst_h.max(verify_h_identity(it, &p_target).unwrap());
    }
    assert!(worst_h < TOL_ORACLE_RESIDUAL, "h-identity residual {worst_h:.2e}");

    // Entropic transport cost decreases monotonically with the horizon.
    let mut costs = Vec::new();
    for horizon in [4.0, 2.0, 1.0, 0.5, 0.25] {
        let k = discretize_ou_kernel(&lat, horizon).unwrap();
        let r = sinkhorn_static_sb(
            &k,
            &nu0,
            &nu_t,
            SinkhornOptions {
                tol: 1e-11,
                max_iters: 200_000,
            },
        )
        .unwrap();
        costs.push(transport_cost(&lat, &r.coupling));
    }
    for w in costs.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "costs not monotone: {costs:?}");
    }
    pass(
        "8 (grid oracles)",
        format!(
            "Sinkhorn gap {:.2e}, h-identity {:.2e}, costs {:?}",
            sk.marginal_gap, worst_h, costs
        ),
    );
}

// ------------------------------------------------------------- criterion 9

#[test]
fn acceptance_09_determinism_and_gradients() {
    // Bit-exact training determinism.
    let target = TargetDensity::gaussian(
        GaussianParams::isotropic(vec![0.0], 2.0).unwrap(),
        1.0,
    )
    .unwrap();
    let mut cfg = DdgsConfig::new(TimeGrid::uniform(1.0, 8).unwrap());
    cfg.iterations = 60;
    cfg.batch_size = 16;
    cfg.hidden = vec![12, 12];
    let run = || {
        let mut rng = Prng::seed_from(909);
        ddgs::train_ddgs(&target, &cfg, &mut rng).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.drift_correction().params(), b.drift_correction().params());
    let mut s1 = Prng::seed_from(5);
    let mut s2 = Prng::seed_from(5);
    assert_eq!(
        ddgs::sample_ddgs(&a, 100, &mut s1).unwrap(),
        ddgs::sample_ddgs(&b, 100, &mut s2).unwrap(),
        "byte-identical draws for identical config + seed"
    );

    // Finite-difference checks for every loss family at random inits.
    let mut rng = Prng::seed_from(919);
    let dsm = ddps::gradient_check(&mut rng).unwrap();
    let mm = dsb_ps::gradient_check(&mut rng).unwrap();
    let rkl = ddgs::gradient_check(&mut rng).unwrap();
    let flow = dsb_gs::gradient_check(&mut rng).unwrap();
    for (name, worst) in [("dsm", dsm), ("mean-matching", mm), ("reverse-KL", rkl), ("flow", flow)]
    {
        assert!(worst < TOL_GRADCHECK, "{name} gradient check {worst:.2e}");
    }
    pass(
        "9 (determinism and gradients)",
        format!(
            "training/sampling bit-reproducible; FD errors: dsm {dsm:.1e}, mean-matching {mm:.1e}, reverse-KL {rkl:.1e}, flow {flow:.1e}"
        ),
    );
}
