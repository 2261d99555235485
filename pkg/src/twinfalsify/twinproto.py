"""Newline-delimited JSON protocol for running external twins as subprocesses.

The child announces itself with ``{"protocol": "twinproto/1", "dims": [...]}``
and then answers each request line ``{"id", "x0", "actions", "seed"}`` with
``{"id", "states"}`` (or ``{"id", "error"}``). Responses may arrive in any
order; the client pairs them by id.

Run the built-in synthetic twin as a child process with::

    python -m twinfalsify.twinproto --config synth.json --mode shift:0.5
"""
from __future__ import annotations

import argparse
import json
import math
import queue
import shlex
import subprocess
import sys
import threading
import time
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ._rng import derive_seeds
from .trajectory import Dataset, SchemaSpec, TwinDataset, sample_x0

PROTOCOL = "twinproto/1"


class TwinProtocolError(RuntimeError):
    """The child broke the protocol or reported an error."""


class TwinTimeoutError(TwinProtocolError):
    def __init__(self, message: str, partial: dict):
        super().__init__(message)
        self.partial = partial


def _reader(stream, out: queue.Queue) -> None:
    for line in iter(stream.readline, ""):
        out.put(line)
    out.put(None)


class _Child:
    def __init__(self, command: Union[str, Sequence[str]]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, encoding="utf-8", bufsize=1
        )
        self.lines: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=_reader, args=(self.proc.stdout, self.lines), daemon=True)
        self._thread.start()

    def send(self, obj: dict) -> None:
        try:
            self.proc.stdin.write(json.dumps(obj, separators=(",", ":")) + "\n")
            self.proc.stdin.flush()
        except BrokenPipeError:
            raise TwinProtocolError("twin process closed its input") from None

    def receive(self, timeout: float) -> dict:
        try:
            line = self.lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError from None
        if line is None:
            raise TwinProtocolError(f"twin process exited early (status {self.proc.poll()})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise TwinProtocolError(f"malformed response line: {line[:200]!r}") from None
        if not isinstance(msg, dict):
            raise TwinProtocolError(f"response is not a JSON object: {line[:200]!r}")
        return msg

    def close(self, grace: float = 5.0) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            self.kill()

    def kill(self) -> None:
        self.proc.kill()
        self.proc.wait()


def _check_states(msg: dict, t: int, schema: SchemaSpec) -> list[list[float]]:
    rid = msg.get("id")
    states = msg.get("states")
    if not isinstance(states, list) or len(states) != t:
        got = len(states) if isinstance(states, list) else "none"
        raise TwinProtocolError(f"request {rid}: expected {t} states, got {got}")
    for s, x in enumerate(states, start=1):
        if not isinstance(x, list) or len(x) != schema.dims[s]:
            raise TwinProtocolError(f"request {rid}: state {s} has wrong dimension")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in x):
            raise TwinProtocolError(f"request {rid}: state {s} holds a non-finite or non-numeric value")
    return states


def run_external_twin(command, schema: SchemaSpec, x0_pool: Dataset, actions: Sequence[int], n: int,
                      master_seed: int, timeout: float = 30.0, window: int = 64) -> TwinDataset:
    """Collect ``n`` twin runs from a child process speaking ``twinproto/1``.

    Request ``k`` carries the ``k``-th of ``n`` distinct x0 drawn from
    ``x0_pool`` with ``master_seed`` and the per-request seed
    ``derive_seeds(master_seed, k)``. ``timeout`` bounds the wait for each
    response; on expiry the child is killed and :class:`TwinTimeoutError`
    carries the responses received so far. Output follows request order.
    """
    actions = tuple(int(a) for a in actions)
    t = len(actions)
    x0 = sample_x0(x0_pool, n, master_seed)
    seeds = derive_seeds(master_seed, np.arange(n))
    child = _Child(command)
    results: dict[int, list] = {}
    try:
        try:
            hello = child.receive(timeout)
        except TimeoutError:
            child.kill()
            raise TwinTimeoutError("no handshake from twin process", {}) from None
        if hello.get("protocol") != PROTOCOL:
            raise TwinProtocolError(f"unexpected handshake {hello!r}")
        dims = hello.get("dims")
        if not isinstance(dims, list) or len(dims) < t + 1 or list(dims[: t + 1]) != list(schema.dims[: t + 1]):
            raise TwinProtocolError(f"twin dims {dims} do not match schema dims {list(schema.dims)}")

        next_id = 0
        while len(results) < n:
            while next_id < n and next_id - len(results) < window:
                child.send({"id": next_id, "x0": [float(v) for v in x0[next_id]], "actions": list(actions),
                            "seed": int(seeds[next_id])})
                next_id += 1
            try:
                msg = child.receive(timeout)
            except TimeoutError:
                child.kill()
                raise TwinTimeoutError(f"timed out after {len(results)} of {n} responses", dict(results)) from None
            rid = msg.get("id")
            if not isinstance(rid, int) or isinstance(rid, bool) or not 0 <= rid < next_id:
                raise TwinProtocolError(f"response for unknown request id {rid!r}")
            if rid in results:
                raise TwinProtocolError(f"duplicate response for request {rid}")
            if "error" in msg:
                raise TwinProtocolError(f"request {rid}: twin reported error: {msg['error']}")
            results[rid] = _check_states(msg, t, schema)
    except BaseException:
        if child.proc.poll() is None:
            child.kill()
        raise
    child.close()
    states = [np.array([results[k][s] for k in range(n)], dtype=np.float64).reshape(n, schema.dims[s + 1])
              for s in range(t)]
    return TwinDataset(schema, actions, x0, states,
                       provenance={"twin_command": command if isinstance(command, str) else list(command),
                                   "seed": master_seed})


# --- server side --------------------------------------------------------------

Handler = Callable[[np.ndarray, tuple, int], Sequence[Sequence[float]]]


def serve(handler: Handler, dims: Sequence[int], stdin=None, stdout=None) -> None:
    """Answer requests from ``stdin`` until EOF using ``handler(x0, actions, seed)``."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def emit(obj):
        stdout.write(json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n")
        stdout.flush()

    emit({"protocol": PROTOCOL, "dims": list(dims)})
    for line in stdin:
        if not line.strip():
            continue
        rid = None
        try:
            req = json.loads(line)
            rid = req["id"]
            states = handler(np.asarray(req["x0"], dtype=np.float64), tuple(req["actions"]), int(req["seed"]))
            emit({"id": rid, "states": [[float(v) for v in x] for x in states]})
        except Exception as exc:  # reported to the client, which fails the run
            emit({"id": rid, "error": f"{type(exc).__name__}: {exc}"})


def synthetic_handler(cfg, mode) -> Handler:
    from .synth import simulate_forced

    def handle(x0, actions, seed):
        keys = np.array([seed], dtype=np.uint64)
        return [x[0] for x in simulate_forced(cfg, keys, x0[None, :], actions, mode)]

    return handle


def main(argv=None) -> int:
    from .synth import SynthConfig, TwinMode, load_config

    p = argparse.ArgumentParser(description="Serve the built-in synthetic twin over twinproto/1.")
    p.add_argument("--config", help="synthetic process config (JSON); defaults to the demo config")
    p.add_argument("--mode", default="correct", help="correct | shift:<delta> | inflate:<kappa>")
    p.add_argument("--delay", type=float, default=0.0, help="seconds to sleep before each response (testing aid)")
    args = p.parse_args(argv)
    cfg = load_config(args.config) if args.config else SynthConfig()
    handle = synthetic_handler(cfg, TwinMode.parse(args.mode))
    if args.delay:
        inner = handle

        def handle(x0, actions, seed):
            time.sleep(args.delay)
            return inner(x0, actions, seed)

    serve(handle, cfg.schema().dims)
    return 0


if __name__ == "__main__":
    sys.exit(main())
