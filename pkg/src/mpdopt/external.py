"""Attach a user-supplied black box as a child process.

The wire protocol is newline-delimited JSON over the child's stdin/stdout:

    parent -> {"type": "hello", "dim": d}          child -> {"type": "ready"}
    parent -> {"type": "eval", "id": n, "x": [..]} child -> {"type": "result", "id": n, "y": v}
                                                or child -> {"type": "error", "id": n, "msg": s}
    parent -> {"type": "bye"}                      child exits 0

One request is in flight at a time.  Faults (process exit, timeout, malformed
JSON) raise EvaluationError after the configured number of consecutive
failures; individual faults are kept in a log the caller can copy into its
run trace.
"""

from __future__ import annotations

import json
import math
import queue
import subprocess
import sys
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EvaluationError
from .objectives import Objective

__all__ = ["ProtocolConfig", "ExternalClient", "external_objective", "serve_demo", "DEMO_FUNCTIONS"]


@dataclass(frozen=True)
class ProtocolConfig:
    timeout: float = 60.0
    handshake_timeout: float = 10.0
    max_consecutive_failures: int = 3

    def __post_init__(self):
        if self.timeout <= 0 or self.handshake_timeout <= 0 or self.max_consecutive_failures < 1:
            raise ConfigError("protocol timeouts and failure budget must be positive")


class ExternalClient:
    """Owns the child process and serializes eval requests to it."""

    def __init__(self, command: list[str], dim: int, cfg: ProtocolConfig = ProtocolConfig()):
        self.command = list(command)
        self.dim = int(dim)
        self.cfg = cfg
        self.fault_log: list[str] = []
        self._lock = threading.Lock()  # one in-flight request per child
        self._next_id = 0
        self._consecutive_failures = 0
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._handshake()

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _send(self, msg: dict):
        if self._proc.poll() is not None:
            raise EvaluationError("objective process has exited")
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(json.dumps(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise EvaluationError(f"failed to write to objective process: {exc}") from exc

    def _recv(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise EvaluationError(f"objective process timed out after {timeout:.1f}s") from None
        if line is None:
            raise EvaluationError("objective process closed its output")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvaluationError(f"malformed JSON from objective process: {line!r}") from exc
        if not isinstance(msg, dict):
            raise EvaluationError(f"unexpected reply from objective process: {line!r}")
        return msg

    def _handshake(self):
        try:
            self._send({"type": "hello", "dim": self.dim})
            reply = self._recv(self.cfg.handshake_timeout)
        except EvaluationError as exc:
            self.close()
            raise EvaluationError(f"handshake failed: {exc}") from exc
        if reply.get("type") != "ready":
            self.close()
            raise EvaluationError(f"handshake failed: expected ready, got {reply!r}")

    def _request_once(self, x: np.ndarray) -> float:
        req_id = self._next_id
        self._next_id += 1
        self._send({"type": "eval", "id": req_id, "x": [float(v) for v in x]})
        while True:
            msg = self._recv(self.cfg.timeout)
            if msg.get("type") == "error" and msg.get("id") == req_id:
                raise EvaluationError(f"objective reported an error: {msg.get('msg')!r}")
            if msg.get("type") != "result":
                raise EvaluationError(f"unexpected reply type in {msg!r}")
            if msg.get("id") != req_id:
                continue  # stale reply from a timed-out request; skip it
            y = msg.get("y")
            if not isinstance(y, (int, float)) or not math.isfinite(y):
                raise EvaluationError(f"non-finite or missing objective value in {msg!r}")
            return float(y)

    def eval(self, x: np.ndarray) -> float:
        """Evaluate with retry; aborts after max_consecutive_failures in a row."""
        last: EvaluationError | None = None
        with self._lock:
            while True:
                try:
                    y = self._request_once(x)
                    self._consecutive_failures = 0
                    return y
                except EvaluationError as exc:
                    self._consecutive_failures += 1
                    self.fault_log.append(f"evaluation fault #{self._consecutive_failures}: {exc}")
                    last = exc
                    if self._consecutive_failures >= self.cfg.max_consecutive_failures:
                        raise EvaluationError(
                            f"{self._consecutive_failures} consecutive evaluation failures; last: {last}"
                        ) from last

    def close(self):
        if self._proc.poll() is None:
            try:
                self._send({"type": "bye"})
            except EvaluationError:
                pass
            try:
                self._proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        if self._proc.stdin:
            self._proc.stdin.close()
        if self._proc.stdout:
            self._proc.stdout.close()


@dataclass
class _ExternalObjective(Objective):
    client: ExternalClient | None = field(default=None, repr=False)

    def close(self):
        if self.client is not None:
            self.client.close()


def external_objective(
    command: list[str],
    dim: int,
    lower: np.ndarray,
    upper: np.ndarray,
    maximize: bool = False,
    noise_std: float = 0.0,
    cfg: ProtocolConfig = ProtocolConfig(),
    name: str = "external",
) -> _ExternalObjective:
    """Spawn the child process, perform the handshake, and wrap it as an Objective."""
    client = ExternalClient(command, dim, cfg)
    sign = -1.0 if maximize else 1.0
    return _ExternalObjective(
        name=name,
        dim=dim,
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
        noise_std=noise_std,
        negated=maximize,
        fn=lambda x: sign * client.eval(x),
        client=client,
    )


DEMO_FUNCTIONS = {
    "sum": lambda x: float(np.sum(x)),
    "sphere": lambda x: float(np.sum((np.asarray(x) - 0.5) ** 2)),
}


def serve_demo(name: str, stdin=None, stdout=None) -> int:
    """Reference child-process loop for protocol testing; returns an exit code."""
    if name not in DEMO_FUNCTIONS:
        print(f"unknown demo objective {name!r}; choose from {sorted(DEMO_FUNCTIONS)}", file=sys.stderr)
        return 2
    fn = DEMO_FUNCTIONS[name]
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            continue
        kind = msg.get("type")
        if kind == "hello":
            reply = {"type": "ready"}
        elif kind == "eval":
            try:
                reply = {"type": "result", "id": msg["id"], "y": fn(np.asarray(msg["x"], dtype=float))}
            except Exception as exc:  # report per-request faults over the wire
                reply = {"type": "error", "id": msg.get("id"), "msg": str(exc)}
        elif kind == "bye":
            return 0
        else:
            continue
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return 0
