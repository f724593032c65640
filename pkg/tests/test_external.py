"""Wire-protocol conformance and fault injection for external objectives."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mpdopt.errors import EvaluationError
from mpdopt.external import ProtocolConfig, external_objective
from mpdopt.objectives import NoiseStream, evaluate
from mpdopt.policies import PolicyConfig, run_ars

DEMO_SUM = [sys.executable, "-m", "mpdopt", "serve-objective", "--demo", "sum"]

# A child that answers the handshake and the first `ok` evals, then misbehaves.
MISBEHAVING = """
import json, sys, time
mode = sys.argv[1]
ok = int(sys.argv[2])
served = 0
for line in sys.stdin:
    msg = json.loads(line)
    t = msg.get("type")
    if t == "hello":
        print(json.dumps({"type": "ready"}), flush=True)
    elif t == "eval":
        if served < ok:
            served += 1
            print(json.dumps({"type": "result", "id": msg["id"], "y": sum(msg["x"])}), flush=True)
        elif mode == "die":
            sys.exit(3)
        elif mode == "hang":
            time.sleep(60)
        elif mode == "garbage":
            print("this is not json {", flush=True)
        elif mode == "badvalue":
            print(json.dumps({"type": "result", "id": msg["id"], "y": "NaN-ish"}), flush=True)
        elif mode == "report":
            print(json.dumps({"type": "error", "id": msg["id"], "msg": "boom"}), flush=True)
    elif t == "bye":
        sys.exit(0)
"""


def misbehaving_command(mode, ok=0):
    return [sys.executable, "-c", MISBEHAVING, mode, str(ok)]


def test_demo_sum_round_trip():
    obj = external_objective(DEMO_SUM, dim=2, lower=np.zeros(2), upper=np.ones(2))
    try:
        assert evaluate(obj, np.array([0.5, 0.5]), NoiseStream(0)) == 1.0
        assert obj.f(np.array([0.25, 0.5])) == 0.75
    finally:
        obj.close()


def test_maximize_flag_negates():
    obj = external_objective(DEMO_SUM, dim=2, lower=np.zeros(2), upper=np.ones(2), maximize=True)
    try:
        assert obj.f(np.array([0.5, 0.5])) == -1.0
        assert obj.report(obj.f(np.array([0.5, 0.5]))) == 1.0
    finally:
        obj.close()


def test_thousand_evaluations_without_resource_growth():
    obj = external_objective(DEMO_SUM, dim=3, lower=np.zeros(3), upper=np.ones(3))
    try:
        fd_dir = "/proc/self/fd"
        obj.f(np.full(3, 0.1))  # warm up before measuring
        fds_before = len(os.listdir(fd_dir))
        rng = np.random.default_rng(0)
        for i in range(1000):
            x = rng.uniform(0, 1, 3)
            assert obj.f(x) == pytest.approx(float(np.sum(x)))
        fds_after = len(os.listdir(fd_dir))
        assert fds_after <= fds_before + 2
        assert not obj.client.fault_log
    finally:
        obj.close()


def test_process_death_raises_after_consecutive_failures():
    obj = external_objective(misbehaving_command("die", ok=2), dim=2,
                             lower=np.zeros(2), upper=np.ones(2))
    try:
        assert obj.f(np.array([0.1, 0.2])) == pytest.approx(0.3)
        assert obj.f(np.array([0.3, 0.3])) == pytest.approx(0.6)
        with pytest.raises(EvaluationError, match="consecutive"):
            obj.f(np.array([0.5, 0.5]))
        assert len(obj.client.fault_log) == 3
    finally:
        obj.close()


def test_timeout_detected():
    cfg = ProtocolConfig(timeout=0.3, max_consecutive_failures=2)
    obj = external_objective(misbehaving_command("hang"), dim=1,
                             lower=np.zeros(1), upper=np.ones(1), cfg=cfg)
    try:
        with pytest.raises(EvaluationError, match="consecutive"):
            obj.f(np.array([0.5]))
        assert any("timed out" in entry for entry in obj.client.fault_log)
    finally:
        obj.close()


def test_malformed_json_detected():
    cfg = ProtocolConfig(timeout=5.0, max_consecutive_failures=1)
    obj = external_objective(misbehaving_command("garbage"), dim=1,
                             lower=np.zeros(1), upper=np.ones(1), cfg=cfg)
    try:
        with pytest.raises(EvaluationError, match="malformed JSON"):
            obj.f(np.array([0.5]))
    finally:
        obj.close()


def test_non_finite_value_detected():
    cfg = ProtocolConfig(timeout=5.0, max_consecutive_failures=1)
    obj = external_objective(misbehaving_command("badvalue"), dim=1,
                             lower=np.zeros(1), upper=np.ones(1), cfg=cfg)
    try:
        with pytest.raises(EvaluationError, match="non-finite or missing"):
            obj.f(np.array([0.5]))
    finally:
        obj.close()


def test_server_reported_error_surfaces():
    cfg = ProtocolConfig(timeout=5.0, max_consecutive_failures=1)
    obj = external_objective(misbehaving_command("report"), dim=1,
                             lower=np.zeros(1), upper=np.ones(1), cfg=cfg)
    try:
        with pytest.raises(EvaluationError, match="boom"):
            obj.f(np.array([0.5]))
    finally:
        obj.close()


def test_handshake_failure():
    with pytest.raises(EvaluationError, match="handshake"):
        external_objective([sys.executable, "-c", "import sys; sys.exit(0)"],
                           dim=1, lower=np.zeros(1), upper=np.ones(1),
                           cfg=ProtocolConfig(handshake_timeout=2.0))


def test_run_aborts_with_partial_trace_when_server_dies():
    obj = external_objective(misbehaving_command("die", ok=5), dim=2,
                             lower=np.zeros(2), upper=np.ones(2))
    try:
        cfg = PolicyConfig(kind="ars", budget=20, seed=1, ars_directions=1, ars_noise=0.05)
        trace = run_ars(obj, np.array([0.5, 0.5]), cfg)
        assert trace.aborted
        assert "consecutive" in trace.abort_reason
        assert len(trace.records) == 5  # partial trace preserved
    finally:
        obj.close()


def test_clean_shutdown_exit_code():
    proc = subprocess.Popen(DEMO_SUM, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    proc.stdin.write('{"type":"hello","dim":1}\n{"type":"bye"}\n')
    proc.stdin.flush()
    assert proc.wait(timeout=10) == 0


def test_gp_policy_aborts_with_partial_trace_when_server_dies():
    from mpdopt.gp import Fixed, Hyperpriors
    from mpdopt.acquisition import AcqOptConfig
    from mpdopt.policies import run_mpd

    obj = external_objective(misbehaving_command("die", ok=3), dim=2,
                             lower=np.zeros(2), upper=np.ones(2))
    try:
        cfg = PolicyConfig(kind="mpd", budget=10, seed=2, window=16,
                           fit_restarts=1, fit_max_iters=10,
                           acq=AcqOptConfig(restarts=2, max_iters=8),
                           priors=Hyperpriors(noise_var=Fixed(1e-6)))
        trace = run_mpd(obj, np.array([0.5, 0.5]), cfg)
        assert trace.aborted
        assert len(trace.records) == 3
        assert any("fault" in e for e in trace.events)
    finally:
        obj.close()
