"""Confounded synthetic trajectories, built-in twins and an interventional oracle.

The process is linear-Gaussian with one hidden binary confounder ``U``:

* feature 0 ("marker") follows
  ``x_s = rho x_{s-1} + (1 - rho) m + drift * a_s + effect * U * a_s / (k - 1) + sigma * eps``;
* feature 1 ("group") is a static Bernoulli(1/2) covariate, feature 2 ("age")
  a static Gaussian covariate, further features are AR(1) noise;
* with probability ``policy_bias`` per step the behavioural agent reads ``U``
  (``U = 1`` gives the strongest action, ``U = 0`` action 0); otherwise it
  samples a softmax policy that treats more when the marker is high.

``U`` is independent of ``X_0`` and never emitted. All randomness comes from
per-trajectory counter-based streams, see :mod:`twinfalsify._rng`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from ._rng import derive_seeds, normals, stream_key, uniforms
from .regions import BoxRegion, OutcomeSpec
from .trajectory import Dataset, SchemaSpec, TwinDataset, sample_x0

_SLOTS = 64


def _slot(step: int, j: int) -> int:
    return step * _SLOTS + j


@dataclass(frozen=True)
class SynthConfig:
    horizon: int = 2
    n_features: int = 3
    n_actions: int = 3
    p_u: float = 0.5
    effect: float = 1.0
    policy_bias: float = 1.0
    noise_scale: float = 1.0
    rho: float = 0.7
    baseline_mean: float = 5.0
    baseline_sd: float = 1.0
    action_drift: float = -0.5
    policy_gain: float = 1.0
    age_mean: float = 60.0
    age_sd: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 1 <= self.n_features <= _SLOTS - 2:
            raise ValueError(f"n_features must lie in 1..{_SLOTS - 2}")
        if self.n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        if not 0 <= self.p_u <= 1 or not 0 <= self.policy_bias <= 1:
            raise ValueError("p_u and policy_bias must lie in [0, 1]")
        if self.noise_scale <= 0 or self.baseline_sd <= 0:
            raise ValueError("noise_scale and baseline_sd must be > 0")

    def schema(self) -> SchemaSpec:
        names = ["marker", "group", "age"][: self.n_features]
        names += [f"aux{j}" for j in range(3, self.n_features)]
        return SchemaSpec(
            T=self.horizon,
            dims=(self.n_features,) * (self.horizon + 1),
            action_cardinalities=(self.n_actions,) * self.horizon,
            feature_names=(tuple(names),) * (self.horizon + 1),
        )

    def dose(self, a) -> np.ndarray:
        """Action intensity in [0, 1]."""
        return np.asarray(a, dtype=np.float64) / (self.n_actions - 1) if self.n_actions > 1 else np.zeros_like(a, dtype=np.float64)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def load_config(path) -> SynthConfig:
    with open(path, encoding="utf-8") as fh:
        return SynthConfig.from_dict(json.load(fh))


@dataclass(frozen=True)
class TwinMode:
    """``kind`` is ``correct``, ``shift`` (value = drift offset) or ``inflate`` (value = noise factor)."""

    kind: str = "correct"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("correct", "shift", "inflate"):
            raise ValueError(f"unknown twin mode {self.kind!r}")
        if self.kind == "inflate" and self.value < 1:
            raise ValueError("variance inflation factor must be >= 1")

    @property
    def shift(self) -> float:
        return self.value if self.kind == "shift" else 0.0

    @property
    def kappa(self) -> float:
        return self.value if self.kind == "inflate" else 1.0

    @classmethod
    def parse(cls, text: str) -> "TwinMode":
        """Parse ``correct``, ``shift:0.5`` or ``inflate:2``."""
        kind, _, val = text.partition(":")
        return cls(kind, float(val) if val else 0.0)

    def __str__(self) -> str:
        return self.kind if self.kind == "correct" else f"{self.kind}:{self.value!r}"


def _baseline(cfg: SynthConfig, keys: np.ndarray) -> np.ndarray:
    n, d = keys.size, cfg.n_features
    x0 = np.empty((n, d))
    x0[:, 0] = cfg.baseline_mean + cfg.baseline_sd * normals(keys, _slot(0, 1))
    if d > 1:
        x0[:, 1] = (uniforms(keys, _slot(0, 2)) < 0.5).astype(np.float64)
    if d > 2:
        x0[:, 2] = cfg.age_mean + cfg.age_sd * normals(keys, _slot(0, 3))
    for j in range(3, d):
        x0[:, j] = normals(keys, _slot(0, 1 + j))
    return x0


def _step(cfg: SynthConfig, keys, prev: np.ndarray, a: np.ndarray, u: np.ndarray, s: int,
          shift: float = 0.0, kappa: float = 1.0) -> np.ndarray:
    sigma = cfg.noise_scale * kappa
    x = prev.copy()
    x[:, 0] = (cfg.rho * prev[:, 0] + (1.0 - cfg.rho) * cfg.baseline_mean + cfg.action_drift * a
               + cfg.effect * u * cfg.dose(a) + shift + sigma * normals(keys, _slot(s, 2)))
    for j in range(3, cfg.n_features):
        x[:, j] = cfg.rho * prev[:, j] + sigma * normals(keys, _slot(s, 2 + j))
    return x


def _confounder(cfg: SynthConfig, keys) -> np.ndarray:
    return (uniforms(keys, _slot(0, 0)) < cfg.p_u).astype(np.float64)


def _policy(cfg: SynthConfig, keys, prev: np.ndarray, u: np.ndarray, s: int) -> np.ndarray:
    k = cfg.n_actions
    reads_u = uniforms(keys, _slot(s, 0)) < cfg.policy_bias
    if k == 1:
        return np.zeros(keys.size, dtype=np.int64)
    logits = cfg.policy_gain * cfg.dose(np.arange(k))[None, :] * (prev[:, [0]] - cfg.baseline_mean)
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    cdf = np.cumsum(probs / probs.sum(axis=1, keepdims=True), axis=1)
    draw = uniforms(keys, _slot(s, 1))
    history_action = np.minimum((draw[:, None] > cdf).sum(axis=1), k - 1)
    confounded_action = np.where(u > 0, k - 1, 0)
    return np.where(reads_u, confounded_action, history_action).astype(np.int64)


def generate_observational(cfg: SynthConfig, n: int, seed: Optional[int] = None) -> Dataset:
    """Behavioural-policy trajectories; deterministic given ``seed`` (default ``cfg.seed``)."""
    seed = cfg.seed if seed is None else seed
    keys = derive_seeds(stream_key(seed, "observational"), np.arange(n))
    x = _baseline(cfg, keys)
    u = _confounder(cfg, keys)
    x0 = x
    actions = np.zeros((n, cfg.horizon), dtype=np.int64)
    states = []
    for s in range(1, cfg.horizon + 1):
        a = _policy(cfg, keys, x, u, s)
        actions[:, s - 1] = a
        x = _step(cfg, keys, x, a, u, s)
        states.append(x)
    return Dataset(cfg.schema(), x0, actions, states, provenance={"generator": "synth", "seed": seed})


def simulate_forced(cfg: SynthConfig, keys, x0: np.ndarray, actions: Sequence[int], mode: TwinMode = TwinMode()):
    """States ``x_1..x_t`` under forced ``actions`` with ``U`` drawn from its prior.

    Since ``U`` is independent of ``X_0``, this is the exact interventional
    conditional law given ``x0``.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    x = np.asarray(x0, dtype=np.float64).reshape(keys.size, cfg.n_features)
    u = _confounder(cfg, keys)
    states = []
    for s, a_s in enumerate(actions, start=1):
        a = np.full(keys.size, a_s, dtype=np.float64)
        x = _step(cfg, keys, x, a, u, s, mode.shift, mode.kappa)
        states.append(x)
    return states


def generate_twin(cfg: SynthConfig, mode: TwinMode, x0: np.ndarray, actions: Sequence[int], seed: int) -> TwinDataset:
    """One twin run per row of ``x0``; run ``k`` uses the stream ``derive_seeds(seed, k)``."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1, cfg.n_features)
    keys = derive_seeds(seed, np.arange(x0.shape[0]))
    states = simulate_forced(cfg, keys, x0, actions, mode)
    return TwinDataset(cfg.schema(), actions, x0, states, provenance={"twin": str(mode), "seed": seed})


def twin_seed(seed: int, actions: Sequence[int]) -> int:
    return stream_key(seed, "twin", tuple(actions)) >> 11


def generate_twin_from_data(cfg: SynthConfig, mode: TwinMode, data: Dataset, actions: Sequence[int], n: int,
                            seed: int) -> TwinDataset:
    """Draw ``n`` distinct x0 from ``data`` and run the twin, with sub-seeds keyed by ``actions``."""
    s = twin_seed(seed, actions)
    return generate_twin(cfg, mode, sample_x0(data, n, s), actions, s)


@dataclass(frozen=True)
class OracleResult:
    mean: float
    stderr: float
    accepted: int
    draws: int


def interventional_oracle(cfg: SynthConfig, actions: Sequence[int], regions: Sequence[BoxRegion],
                          outcome: OutcomeSpec, n_draws: int, seed: int) -> OracleResult:
    """Monte Carlo mean of ``f`` under ``do(a_{1:t})`` conditional on ``X_{0:t} in B_{0:t}``.

    ``X_0`` comes from the baseline law, ``U`` from its prior, and the region
    event is imposed by rejection.
    """
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    keys = derive_seeds(stream_key(seed, "oracle"), np.arange(n_draws))
    x0 = _baseline(cfg, keys)
    states = simulate_forced(cfg, keys, x0, actions)
    keep = regions[0].mask(x0)
    for s, x in enumerate(states, start=1):
        keep &= regions[s].mask(x)
    m = int(keep.sum())
    if m == 0:
        raise ValueError("no oracle draw fell in the region")
    y = outcome.clip(states[outcome.time - 1][keep, outcome.feature])
    mean = math.fsum(y.tolist()) / m
    sd = float(np.std(y, ddof=1)) if m > 1 else math.inf
    return OracleResult(mean, sd / math.sqrt(m), m, n_draws)
