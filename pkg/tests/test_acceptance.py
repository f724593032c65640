"""Acceptance suite: one test per release criterion, with a pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines.  Criterion 5 executes the desk-scale benchmark and dominates the
runtime (parallelized over available cores).
"""

import json
import os
import sys
import time

import numpy as np
import pytest
from scipy.stats import norm

from mpdopt.acquisition import AcqOptConfig, fantasy_gradient, mpd_acquisition
from mpdopt.descent import (
    MoveConfig,
    descent_probability,
    max_descent_probability,
    most_probable_direction,
    move_loop,
)
from mpdopt.gp import (
    Dataset,
    Fixed,
    GradientBelief,
    Hyperpriors,
    KernelParams,
    fit_gp,
    gradient_posterior,
    kernel_eval,
    kernel_grad_x1,
    kernel_hess_cross,
    posterior_mean_var,
)
from mpdopt.harness import config_from_dict, run_experiment, summarize
from mpdopt.objectives import make_rff_objective
from mpdopt.policies import PolicyConfig, run_policy
from tests.conftest import random_belief, random_gp
from tests.test_acquisition import dense_joint_conditioning
from tests.test_kernels import fd_grad, fd_hess_cross


def report(number: int, description: str):
    print(f"PASS criterion {number}: {description}")


# ---------------------------------------------------------------- 1

def test_criterion_1_theorem_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(1001)
    for d in (2, 5, 20):
        for _ in range(100):
            belief = random_belief(rng, d)
            v_star = most_probable_direction(belief)
            closed = descent_probability(belief, v_star)
            dirs = rng.standard_normal((100_000, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            num = dirs @ belief.mu
            den = np.sqrt(np.einsum("ij,jk,ik->i", dirs, belief.sigma, dirs))
            assert closed >= norm.cdf(-num / den).max() - 1e-6
            assert abs(max_descent_probability(belief) - closed) < 1e-10
    elapsed = time.time() - t0
    assert elapsed < 120.0
    report(1, f"closed-form direction beats 1e5 random directions on 300 beliefs ({elapsed:.0f}s)")


# ---------------------------------------------------------------- 2

def test_criterion_2_polar_example_reproduction():
    confident = GradientBelief([-1.0, 0.0], np.diag([0.01, 1.0]))
    assert max_descent_probability(confident) >= 1 - 1e-9
    v_a = most_probable_direction(confident)
    assert np.abs(v_a - np.array([1.0, 0.0])).max() < 1e-9  # negative expected gradient

    uncertain = GradientBelief([-1.0, 0.0], np.diag([1.0, 0.01]))
    assert max_descent_probability(uncertain) == pytest.approx(0.8413, abs=1e-4)

    rotated = GradientBelief([-0.5, -1.0], np.diag([0.01, 1.0]))
    v_c = most_probable_direction(rotated)
    assert v_c[0] / v_c[1] == pytest.approx(50.0, rel=1e-6)
    neg_grad = np.array([0.5, 1.0])
    angle = np.degrees(np.arccos(v_c @ neg_grad / np.linalg.norm(neg_grad)))
    assert angle == pytest.approx(62.3, abs=0.1)
    # cross-check the closed form against a 1e6-point angular grid
    angles = np.linspace(0.0, 2 * np.pi, 1_000_000, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    num = dirs @ rotated.mu
    den = np.sqrt(np.einsum("ij,jk,ik->i", dirs, rotated.sigma, dirs))
    assert descent_probability(rotated, v_c) >= norm.cdf(-num / den).max() - 1e-9

    assert np.trace(confident.sigma) == np.trace(uncertain.sigma)
    report(2, "polar-plot worked examples reproduced; covariance traces identical")


# ---------------------------------------------------------------- 3

def test_criterion_3_acquisition_closed_form():
    t0 = time.time()
    rng = np.random.default_rng(3003)
    for trial in range(20):
        q = 1 if trial % 2 == 0 else 3
        gp = random_gp(rng, d=3, n=int(rng.integers(5, 11)))
        x = rng.uniform(0, 1, 3)
        Z = rng.uniform(0, 1, (q, 3))
        fg = fantasy_gradient(gp, x, Z)
        oracle_cond, _, _, _ = dense_joint_conditioning(gp, x, Z)
        assert np.abs(fg.sigma_cond - oracle_cond).max() < 1e-8

        alpha = mpd_acquisition(gp, x, Z)
        mu = kernel_grad_x1(x, gp.X, gp.params) @ gp.alpha
        zeta = rng.standard_normal((100_000, q))
        mu_cond = mu[None, :] + zeta @ fg.cross_half.T
        sol = np.linalg.solve(fg.sigma_cond, mu_cond.T).T
        values = np.sum(mu_cond * sol, axis=1)
        se = values.std(ddof=1) / np.sqrt(len(values))
        assert abs(alpha - values.mean()) < 3 * se
    elapsed = time.time() - t0
    assert elapsed < 300.0
    report(3, f"closed form matches 1e5-draw fantasy MC and dense conditioning oracle ({elapsed:.0f}s)")


# ---------------------------------------------------------------- 4

def test_criterion_4_derivative_correctness():
    for d in (1, 5, 25):
        rng = np.random.default_rng(4000 + d)
        params = KernelParams(rng.uniform(0.3, 1.5, d), 1.4, 0.0)
        for _ in range(100):
            x = rng.uniform(-1, 1, d)
            X = rng.uniform(-1, 1, (2, d))
            assert np.abs(kernel_grad_x1(x, X, params) - fd_grad(x, X, params)).max() < 1e-5
            x2 = rng.uniform(-1, 1, d)
            assert np.abs(kernel_hess_cross(x, x2, params) - fd_hess_cross(x, x2, params)).max() < 1e-4
        # gradient-posterior mean vs finite differences of the posterior mean
        gp = random_gp(rng, d=d, n=10)
        for _ in range(100 if d == 1 else 20):
            x = rng.uniform(0, 1, d)
            belief = gradient_posterior(gp, x)
            h = 1e-5
            for k in range(min(d, 5)):
                e = np.zeros(d)
                e[k] = h
                fd = (posterior_mean_var(gp, x + e)[0] - posterior_mean_var(gp, x - e)[0]) / (2 * h)
                assert belief.mu[k] == pytest.approx(fd, abs=1e-4)
    report(4, "kernel and gradient-posterior derivatives pass finite-difference checks (d in 1,5,25)")


# ---------------------------------------------------------------- 5

# Matched-model settings for the synthetic suite: the kernel lengthscale is
# pinned to the generator's, the signal variance is learned, and the noise
# variance is fixed at the true observation noise.  Both GP policies share
# these; ARS has no model.
GP_BENCH = {
    "queries_per_iter": 1, "window": 64, "init_lengthscale": 0.5,
    "fit_restarts": 2, "fit_max_iters": 50,
    "acq_restarts": 4, "acq_max_iters": 30,
    "priors": {
        "lengthscales": {"kind": "fixed", "value": 0.5},
        "outputscale": {"kind": "uniform", "lo": 0.01, "hi": 10.0},
        "noise_var": {"kind": "fixed", "value": 1e-4},
    },
}


def test_criterion_5_desk_scale_synthetic_trend(tmp_path):
    raw = {
        "budget": 300, "repeats": 10, "start_seed": 2025,
        "parallel": min(8, os.cpu_count() or 1),
        "objective": {"kind": "rff", "dim": 25, "seed": 0, "noise_std": 0.01,
                       "maximize": True, "lengthscale": 0.5},
        "policies": [
            {"name": "mpd", "kind": "mpd", **GP_BENCH},
            {"name": "gibo", "kind": "gibo", **GP_BENCH},
            {"name": "ars", "kind": "ars", "ars_directions": 4,
             "ars_noise": 0.02, "ars_step": 0.02},
        ],
    }
    out = run_experiment(config_from_dict(raw), tmp_path / "desk")
    rows = {r.policy: r for r in summarize(out)}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["failures"] == []
    mpd, gibo, ars = rows["mpd"], rows["gibo"], rows["ars"]
    assert len(mpd.terminals) == 10
    assert mpd.mean_terminal >= gibo.mean_terminal
    assert mpd.mean_terminal >= ars.mean_terminal
    report(5, (f"d=25 budget=300: mpd {mpd.mean_terminal:.3f} ({mpd.stderr:.3f}) >= "
               f"gibo {gibo.mean_terminal:.3f} ({gibo.stderr:.3f}) and "
               f"ars {ars.mean_terminal:.3f} ({ars.stderr:.3f})"))


# ---------------------------------------------------------------- 6

def test_criterion_6_ablation_machinery():
    budget = 24
    obj_spec = dict(dim=25, seed=0, noise_std=0.01, maximize=True, lengthscale=0.5)
    shared = dict(
        window=48, fit_restarts=1, fit_max_iters=25,
        acq=AcqOptConfig(restarts=2, max_iters=15),
        priors=Hyperpriors(lengthscales=Fixed(0.5), outputscale=Fixed(1.0), noise_var=Fixed(1e-4)),
        init_lengthscale=0.5, budget=budget, seed=606,
    )
    variants = {
        "trace+mpd": PolicyConfig(kind="custom", learn="trace_acq", move="mpd_direction", **shared),
        "mpd+expected_gradient": PolicyConfig(kind="custom", learn="mpd_acq", move="expected_gradient", **shared),
        "p50": PolicyConfig(kind="mpd", p_star=0.50, **shared),
        "p85": PolicyConfig(kind="mpd", p_star=0.85, **shared),
        "p95": PolicyConfig(kind="mpd", p_star=0.95, **shared),
        "step1e-4": PolicyConfig(kind="mpd", step=1e-4, **shared),
        "step1e-2": PolicyConfig(kind="mpd", step=1e-2, **shared),
    }
    obj = make_rff_objective(**obj_spec)
    x0 = np.full(25, 0.4)
    traces = {}
    for name, cfg in variants.items():
        trace = run_policy(obj, x0, cfg)
        assert len(trace) == budget, name
        assert [r.eval_index for r in trace.records] == list(range(budget))
        assert not trace.aborted
        traces[name] = np.concatenate([r.x for r in trace.records])
    names = list(traces)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            assert not np.array_equal(traces[names[i]], traces[names[j]]), (names[i], names[j])
    report(6, f"7 ablation variants run to budget {budget} with pairwise distinct decision sequences")


# ---------------------------------------------------------------- 7

def test_criterion_7_invariant_suites(tmp_path):
    t0 = time.time()
    rng = np.random.default_rng(7007)

    # scaling invariance of the descent probability
    for _ in range(30):
        belief = random_belief(rng, int(rng.integers(2, 7)))
        v = rng.standard_normal(belief.dim)
        base = descent_probability(belief, v)
        for c in (1e-8, 0.5, 3.0, 1e8):
            assert abs(descent_probability(belief, c * v) - base) < 1e-12

    # maximum descent probability is at least one half
    for _ in range(30):
        belief = random_belief(rng, int(rng.integers(2, 7)), mu_scale=float(rng.uniform(0, 2)))
        assert max_descent_probability(belief) >= 0.5

    # conditioning on a batch never increases the gradient covariance
    for _ in range(10):
        gp = random_gp(rng, d=3, n=8)
        x = rng.uniform(0, 1, 3)
        Z = rng.uniform(0, 1, (int(rng.integers(1, 4)), 3))
        fg = fantasy_gradient(gp, x, Z)
        belief = gradient_posterior(gp, x)
        gap = belief.sigma - fg.sigma_cond
        assert np.linalg.eigvalsh(0.5 * (gap + gap.T)).min() >= -1e-10
        # batch permutation invariance
        perm = rng.permutation(Z.shape[0])
        assert abs(mpd_acquisition(gp, x, Z) - mpd_acquisition(gp, x, Z[perm])) < 1e-12

    # interior move steps have exactly the configured length
    data = Dataset(2, 256)
    for p in np.random.default_rng(1).uniform(-0.4, 0.4, (60, 2)):
        data.append(p, float(np.sum((p - 0.1) ** 2)))
    gp = fit_gp(data, refit=False, init=KernelParams(np.full(2, 0.4), 2.0, 1e-10))
    cfg = MoveConfig(step=1e-3, threshold=0.65, max_inner_steps=1,
                     lower=np.full(2, -2.0), upper=np.full(2, 2.0))
    x = np.array([0.35, -0.2])
    moved = 0
    for _ in range(30):
        x_new, steps, _ = move_loop(gp, x, cfg)
        if steps == 0:
            break
        assert np.linalg.norm(x_new - x) == pytest.approx(1e-3, rel=1e-9)
        x, moved = x_new, moved + 1
    assert moved > 0

    # budget exactness and bit-identical reruns for every policy kind
    obj = make_rff_objective(dim=3, seed=3, noise_std=0.05, maximize=True)
    fast = dict(window=24, fit_restarts=1, fit_max_iters=15,
                acq=AcqOptConfig(restarts=2, max_iters=10), max_inner_steps=60,
                priors=Hyperpriors(noise_var=Fixed(0.0025)))
    for kind, budget in (("mpd", 9), ("gibo", 8), ("ars", 10)):
        cfg = PolicyConfig(kind=kind, budget=budget, seed=77, **(fast if kind != "ars" else {}))
        a = run_policy(obj, np.full(3, 0.5), cfg)
        b = run_policy(obj, np.full(3, 0.5), cfg)
        assert len(a) == budget and len(b) == budget
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.x, rb.x) and ra.y == rb.y
    elapsed = time.time() - t0
    assert elapsed < 600.0
    report(7, f"invariant suites pass ({elapsed:.0f}s)")


# ---------------------------------------------------------------- 8

def test_criterion_8_external_protocol_conformance():
    from mpdopt.errors import EvaluationError
    from mpdopt.external import ProtocolConfig, external_objective
    from tests.test_external import misbehaving_command

    demo = [sys.executable, "-m", "mpdopt", "serve-objective", "--demo", "sum"]
    obj = external_objective(demo, dim=4, lower=np.zeros(4), upper=np.ones(4))
    try:
        rng = np.random.default_rng(8)
        for _ in range(1000):
            x = rng.uniform(0, 1, 4)
            assert obj.f(x) == pytest.approx(float(np.sum(x)))
        assert obj.client.fault_log == []
    finally:
        obj.close()

    # fault injection: death, timeout, malformed JSON
    dead = external_objective(misbehaving_command("die"), dim=1, lower=np.zeros(1), upper=np.ones(1))
    try:
        with pytest.raises(EvaluationError, match="consecutive"):
            dead.f(np.array([0.5]))
    finally:
        dead.close()
    hang = external_objective(misbehaving_command("hang"), dim=1, lower=np.zeros(1), upper=np.ones(1),
                              cfg=ProtocolConfig(timeout=0.3, max_consecutive_failures=2))
    try:
        with pytest.raises(EvaluationError, match="consecutive"):
            hang.f(np.array([0.5]))
        assert any("timed out" in e for e in hang.client.fault_log)
    finally:
        hang.close()
    garbage = external_objective(misbehaving_command("garbage"), dim=1, lower=np.zeros(1), upper=np.ones(1),
                                 cfg=ProtocolConfig(timeout=5.0, max_consecutive_failures=1))
    try:
        with pytest.raises(EvaluationError, match="malformed JSON"):
            garbage.f(np.array([0.5]))
    finally:
        garbage.close()
    report(8, "1000 protocol round-trips clean; kill/timeout/malformed faults surface as specified")
