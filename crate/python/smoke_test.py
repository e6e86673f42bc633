#!/usr/bin/env python3
"""Smoke test for the Python bindings.

Builds nothing itself: it locates the compiled extension under target/,
stages it as an importable module and exercises the main types and
operations end to end with tiny budgets.

Usage:
    cargo build -p diffbridge-py        # or --release
    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def stage_module() -> None:
    candidates = [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libdiffbridge_py.so", "libdiffbridge_py.dylib", "diffbridge_py.dll")
    ]
    built = next((c for c in candidates if c.exists()), None)
    if built is None:
        sys.exit("extension not found; run `cargo build -p diffbridge-py` first")
    stage = Path(tempfile.mkdtemp(prefix="diffbridge_py_"))
    suffix = ".pyd" if built.suffix == ".dll" else ".so"
    shutil.copy2(built, stage / f"diffbridge_py{suffix}")
    sys.path.insert(0, str(stage))


def approx(a, b, tol):
    assert abs(a - b) < tol, f"{a} vs {b} (tol {tol})"


def main() -> None:
    stage_module()
    import diffbridge_py as db

    # OU analytics: closed form and the alpha^2 + v = 1 identity.
    alpha, v = db.ou_moments(math.log(4.0))
    approx(alpha, 0.5, 1e-12)
    approx(v, 0.75, 1e-12)
    for t in (0.01, 0.5, 3.0):
        a, vv = db.ou_moments(t)
        approx(a * a + vv, 1.0, 1e-12)
    score = db.ou_transition_score([1.0], [0.875], math.log(4.0))
    approx(score[0], -0.5, 1e-12)

    # Targets: gradient matches finite differences.
    target = db.Target.mixture([[-2.0], [2.0]], 1.0)
    x = [0.7]
    g = target.grad_log_gamma(x)[0]
    h = 1e-5
    fd = (target.log_gamma([x[0] + h]) - target.log_gamma([x[0] - h])) / (2 * h)
    approx(g, fd, 1e-6)
    assert target.known_log_z() == 0.0

    # General sampler on a scaled Gaussian: untrained weights already give an
    # unbiased normalizer estimate; a short training run tightens them.
    z_true = math.sqrt(4.0 * math.pi)  # integral of exp(-x^2 / 4)
    scaled = db.Target.gaussian([0.0], 2.0, z_true)
    sampler = db.GeneralSampler.train(
        scaled, seed=1, horizon=2.0, steps=16, iterations=150, batch_size=32, hidden=[16, 16]
    )
    samples, log_w = sampler.sample(2000, seed=7)
    assert len(samples) == 2000 and len(log_w) == 2000
    z_hat = sum(math.exp(lw) for lw in log_w) / len(log_w)
    assert abs(z_hat - z_true) / z_true < 0.2, f"Z estimate {z_hat} vs {z_true}"
    trace = sampler.loss_trace()
    assert len(trace) == 150 and all(math.isfinite(l) for l in trace)

    # Determinism: same seeds, same draws.
    again, again_w = sampler.sample(2000, seed=7)
    assert again == samples and again_w == log_w

    # Amortized posterior sampler on the conjugate model.
    post_mean, post_var = db.conjugate_posterior(1.0, 1.0, [2.0])
    approx(post_mean[0], 1.0, 1e-12)
    approx(post_var, 0.5, 1e-12)
    ps = db.PosteriorSampler.train_conjugate(
        1.0, 1.0, 1, seed=2, horizon=2.0, steps=16, iterations=300, batch_size=32, hidden=[16, 16]
    )
    draws = ps.sample([2.0], 1500, seed=3)
    mean = sum(d[0] for d in draws) / len(draws)
    assert abs(mean - 1.0) < 0.3, f"posterior mean {mean}"

    print("smoke test passed")


if __name__ == "__main__":
    main()
