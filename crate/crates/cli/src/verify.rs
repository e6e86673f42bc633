//! Grid-oracle self checks behind the `verify` subcommand: exact identities
//! of the OU analytics, Sinkhorn convergence, the h-transform identity of
//! the IPF iterates, and the entropic-cost trend of the static bridge.

use crate::artifacts;
use crate::config::ExperimentConfig;
use crate::{AppError, VerifyArgs};
use diffbridge::math::normal_logpdf;
use diffbridge::oracle::{
    discretize_ou_kernel, grid_ipf_gs_iterates, sinkhorn_static_sb, transport_cost,
    verify_h_identity, GridMeasure, Lattice, SinkhornOptions,
};
use diffbridge::sde::{ou_moments, ou_transition_score, OuTransition};
use diffbridge::Prng;
use serde_json::json;

struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

fn check(name: &'static str, value: f64, threshold: f64) -> Check {
    Check {
        name,
        value,
        threshold,
        pass: value < threshold,
    }
}

pub fn run(args: VerifyArgs) -> Result<(), AppError> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref())?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = Some(dir);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = cfg.output_dir("verify");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.resolved_toml())?;
    let v = &cfg.verify;
    let mut checks = Vec::new();

    // OU transition identities over a wide time range.
    let mut id_res = 0.0f64;
    let mut ck_res = 0.0f64;
    let times = [1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0];
    for &t in &times {
        let (a, var) = ou_moments(t).map_err(|e| AppError::Runtime(e.to_string()))?;
        id_res = id_res.max((a * a + var - 1.0).abs());
    }
    for &s in &times[..7] {
        for &t in &times[..7] {
            let (a_s, v_s) = ou_moments(s).unwrap();
            let (a_t, v_t) = ou_moments(t).unwrap();
            let (a_st, v_st) = ou_moments(s + t).unwrap();
            ck_res = ck_res.max((a_s * a_t - a_st).abs());
            ck_res = ck_res.max((v_t + a_t * a_t * v_s - v_st).abs());
        }
    }
    checks.push(check("ou_identity_residual", id_res, 1e-12));
    checks.push(check("ou_chapman_kolmogorov_residual", ck_res, 1e-12));

    // Transition score against finite differences of the log kernel.
    let mut rng = Prng::seed_from(cfg.seed);
    let mut score_res = 0.0f64;
    for _ in 0..50 {
        let t = rng.uniform(0.05, 5.0);
        let tr = OuTransition::new(t).unwrap();
        let x0 = [rng.standard_normal(), rng.standard_normal()];
        let xt = [rng.standard_normal(), rng.standard_normal()];
        let score = ou_transition_score(&x0, &xt, t).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut hi = xt;
            let mut lo = xt;
            hi[i] += h;
            lo[i] -= h;
            let fd = (tr.logpdf(&x0, &hi) - tr.logpdf(&x0, &lo)) / (2.0 * h);
            score_res = score_res.max((fd - score[i]).abs());
        }
    }
    checks.push(check("ou_transition_score_fd_residual", score_res, 1e-6));

    // Static bridge: Sinkhorn marginal residual on a Gaussian pair.
    let lat = Lattice::line(v.lattice_points, -v.lattice_halfwidth, v.lattice_halfwidth)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let kernel = discretize_ou_kernel(&lat, 1.0).map_err(|e| AppError::Runtime(e.to_string()))?;
    let nu0 = GridMeasure::from_log_density(&lat, |x| normal_logpdf(x[0], 0.7, 0.5))
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let nu_t = GridMeasure::standard_normal(&lat).map_err(|e| AppError::Runtime(e.to_string()))?;
    let sk = sinkhorn_static_sb(
        &kernel,
        &nu0,
        &nu_t,
        SinkhornOptions {
            tol: 1e-12,
            max_iters: 50_000,
        },
    )
    .map_err(|e| AppError::Runtime(e.to_string()))?;
    checks.push(check("sinkhorn_marginal_residual", sk.marginal_gap, 1e-10));

    // h-transform identity across the even IPF iterates.
    let reference = GridMeasure::standard_normal(&lat).unwrap();
    let p_target = GridMeasure::from_log_density(&lat, |x| normal_logpdf(x[0], 0.0, 2.0)).unwrap();
    let iterates = grid_ipf_gs_iterates(&kernel, &reference, &p_target, v.ipf_rounds)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let mut h_res = 0.0f64;
    for it in &iterates {
        let r = verify_h_identity(it, &p_target).map_err(|e| AppError::Runtime(e.to_string()))?;
        h_res = h_res.max(r);
    }
    checks.push(check("ipf_h_identity_residual", h_res, 1e-10));

    // Entropic transport cost decreases with the bridge horizon.
    let mut costs = Vec::new();
    for horizon in [4.0, 2.0, 1.0, 0.5, 0.25] {
        let k = discretize_ou_kernel(&lat, horizon).map_err(|e| AppError::Runtime(e.to_string()))?;
        let r = sinkhorn_static_sb(
            &k,
            &nu0,
            &nu_t,
            SinkhornOptions {
                tol: 1e-11,
                max_iters: 100_000,
            },
        )
        .map_err(|e| AppError::Runtime(e.to_string()))?;
        costs.push(transport_cost(&lat, &r.coupling));
    }
    let monotone = costs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    checks.push(Check {
        name: "entropic_cost_monotone",
        value: if monotone { 0.0 } else { 1.0 },
        threshold: 0.5,
        pass: monotone,
    });

    // Chapman–Kolmogorov of the discretized kernels.
    let ks = discretize_ou_kernel(&lat, 0.5).unwrap();
    let kt = discretize_ou_kernel(&lat, 0.8).unwrap();
    let kst = discretize_ou_kernel(&lat, 1.3).unwrap();
    let composed = ks.compose(&kt).map_err(|e| AppError::Runtime(e.to_string()))?;
    let kernel_ck = composed
        .probs()
        .iter()
        .zip(kst.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    checks.push(check("kernel_chapman_kolmogorov_max", kernel_ck, 1e-3));

    let all_pass = checks.iter().all(|c| c.pass);
    let report: Vec<serde_json::Value> = checks
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "value": c.value,
                "threshold": c.threshold,
                "pass": c.pass,
            })
        })
        .collect();
    let doc = json!({
        "schema_version": 1,
        "algorithm": "verify",
        "checks": report,
        "transport_costs_by_horizon": costs,
        "pass": all_pass,
    });
    artifacts::write_json(&dir.join("metrics.json"), &doc)?;
    for c in &checks {
        println!(
            "{}: {} (value {:.3e}, threshold {:.3e})",
            c.name,
            if c.pass { "pass" } else { "FAIL" },
            c.value,
            c.threshold
        );
    }
    if all_pass {
        println!("verify: all checks passed; wrote {}", dir.display());
        Ok(())
    } else {
        Err(AppError::Runtime(format!(
            "oracle checks failed; see {}",
            dir.join("metrics.json").display()
        )))
    }
}
