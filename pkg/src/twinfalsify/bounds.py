"""Longitudinal causal bound estimators.

For a hypothesis ``(t, f, a_{1:t}, B_{0:t})`` every observational trajectory
has a truncation index ``N``, the length of the longest prefix of its actions
agreeing with ``a_{1:t}``. Trajectories whose observed states ``X_{0:N}`` lie
in ``B_{0:N}`` enter the estimate with

    Y_lo = f(X_{0:t}) if A_{1:t} == a_{1:t} else y_lo
    Y_up = f(X_{0:t}) if A_{1:t} == a_{1:t} else y_up

and the sample means of these are unbiased for the lower and upper bounds on
the interventional mean of ``f`` given ``X_{0:t}(a_{1:t}) in B_{0:t}``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .regions import WHOLE_SPACE, Hypothesis, region_contains
from .trajectory import Dataset, TwinDataset, ValidationError


def match_length(traj_actions: Sequence[int], actions: Sequence[int]) -> int:
    """Largest ``s <= t`` with ``traj_actions[:s] == actions[:s]``."""
    s = 0
    for observed, target in zip(traj_actions, actions):
        if observed != target:
            break
        s += 1
    return s


def match_lengths(action_matrix: np.ndarray, actions: Sequence[int]) -> np.ndarray:
    """Vectorized :func:`match_length` over the rows of an ``(n, >=t)`` array."""
    t = len(actions)
    eq = action_matrix[:, :t] == np.asarray(actions, dtype=np.int64)[None, :]
    return np.cumprod(eq, axis=1).sum(axis=1) if t else np.zeros(len(action_matrix), dtype=np.int64)


def _mean(values: np.ndarray) -> float:
    # math.fsum is correctly rounded, so the mean depends only on the multiset of values;
    # the final division can round one ulp past the extremes, hence the clamp
    if not values.size:
        return math.nan
    return min(max(math.fsum(values.tolist()) / values.size, float(values.min())), float(values.max()))


@dataclass(frozen=True)
class TrajectoryContribution:
    index: int
    N: int
    in_filter: bool
    y_lo_value: float
    y_up_value: float


@dataclass(frozen=True)
class BoundSamples:
    """Per-trajectory values behind a :class:`BoundEstimate`."""

    y_lo_values: np.ndarray
    y_up_values: np.ndarray
    matched: np.ndarray
    twin_values: np.ndarray
    y_lo: float
    y_up: float


@dataclass(frozen=True)
class BoundEstimate:
    n: int
    n_match: int
    mu_lo: float
    mu_up: float
    n_hat: int
    mu_hat: float
    y_lo: float
    y_up: float

    @property
    def width(self) -> float:
        return self.mu_up - self.mu_lo

    @property
    def match_fraction(self) -> float:
        return self.n_match / self.n if self.n else math.nan

    @property
    def has_obs(self) -> bool:
        return self.n > 0

    @property
    def has_twin(self) -> bool:
        return self.n_hat > 0

    @classmethod
    def from_samples(cls, s: BoundSamples) -> "BoundEstimate":
        return cls(
            n=int(s.y_lo_values.size),
            n_match=int(np.count_nonzero(s.matched)),
            mu_lo=_mean(s.y_lo_values),
            mu_up=_mean(s.y_up_values),
            n_hat=int(s.twin_values.size),
            mu_hat=_mean(s.twin_values),
            y_lo=s.y_lo,
            y_up=s.y_up,
        )


def _obs_arrays(data: Dataset, hyp: Hypothesis):
    t = hyp.t
    if t > data.schema.T:
        raise ValidationError(f"hypothesis t={t} exceeds dataset horizon {data.schema.T}")
    N = match_lengths(data.actions, hyp.actions)
    keep = hyp.regions[0].mask(data.x0)
    for s in range(1, t + 1):
        region = hyp.regions[s]
        if region.is_whole_space:
            continue
        # only states up to the truncation index are conditioned on
        keep &= (N < s) | region.mask(data.states[s - 1])
    matched = N == t
    z = hyp.outcome.clip(data.states[t - 1][:, hyp.outcome.feature])
    y_lo_vals = np.where(matched, z, hyp.outcome.y_lo)
    y_up_vals = np.where(matched, z, hyp.outcome.y_up)
    return N, keep, matched, y_lo_vals, y_up_vals


def obs_filter(data: Dataset, hyp: Hypothesis) -> list[TrajectoryContribution]:
    """Contributions of the trajectories with ``X_{0:N} in B_{0:N}``, in dataset order."""
    N, keep, _, y_lo_vals, y_up_vals = _obs_arrays(data, hyp)
    return [
        TrajectoryContribution(int(i), int(N[i]), True, float(y_lo_vals[i]), float(y_up_vals[i]))
        for i in np.flatnonzero(keep)
    ]


def twin_filter(twin: TwinDataset, hyp: Hypothesis) -> np.ndarray:
    """Mask of twin runs with ``X_0 in B_0`` and every simulated state in its region."""
    keep = hyp.regions[0].mask(twin.x0)
    for s in range(1, hyp.t + 1):
        if not hyp.regions[s].is_whole_space:
            keep &= hyp.regions[s].mask(twin.states[s - 1])
    return keep


def collect_samples(data: Dataset, twin: Optional[TwinDataset], hyp: Hypothesis) -> BoundSamples:
    _, keep, matched, y_lo_vals, y_up_vals = _obs_arrays(data, hyp)
    if twin is None or len(twin) == 0:
        twin_vals = np.empty(0)
    else:
        if twin.actions != hyp.actions:
            raise ValidationError(f"twin actions {list(twin.actions)} differ from hypothesis actions {list(hyp.actions)}")
        tk = twin_filter(twin, hyp)
        twin_vals = hyp.outcome.clip(twin.states[hyp.t - 1][tk, hyp.outcome.feature])
    return BoundSamples(
        y_lo_values=y_lo_vals[keep],
        y_up_values=y_up_vals[keep],
        matched=matched[keep],
        twin_values=twin_vals,
        y_lo=hyp.outcome.y_lo,
        y_up=hyp.outcome.y_up,
    )


def estimate_bounds(data: Dataset, twin: Optional[TwinDataset], hyp: Hypothesis) -> BoundEstimate:
    """Sample means of ``Y_lo``, ``Y_up`` and the twin outcome for one hypothesis.

    Empty filtered subsets are reported with zero counts and NaN means; the
    testing layer turns them into gated results.
    """
    return BoundEstimate.from_samples(collect_samples(data, twin, hyp))


ATTAIN_LO = "lo"
ATTAIN_UP = "up"


def sharpness_transform(data: Dataset, hyp: Hypothesis, fill: Sequence, mode: str = ATTAIN_LO) -> Dataset:
    """Rewrite the data as if every trajectory had followed ``a_{1:t}``.

    Matched trajectories are returned unchanged. For the others, actions
    after the truncation index become ``a_{N+1:t}``, states ``x_{N+1:t}`` are
    taken from ``fill`` and the outcome feature at time ``t`` is set to the
    bound being attained. The filtered subset is preserved, so the bounds of
    the transformed data collapse onto the original ``mu_lo`` (or ``mu_up``).

    ``fill`` holds one point per timestep ``1..t``; each must lie in its
    region, including after the outcome replacement.
    """
    if mode not in (ATTAIN_LO, ATTAIN_UP):
        raise ValueError(f"mode must be 'lo' or 'up', got {mode!r}")
    t, i = hyp.t, hyp.outcome.feature
    if len(fill) != t:
        raise ValueError(f"need {t} fill points, got {len(fill)}")
    fill = [np.asarray(x, dtype=np.float64) for x in fill]
    target = hyp.outcome.y_lo if mode == ATTAIN_LO else hyp.outcome.y_up
    fill_t = fill[t - 1].copy()
    fill_t[i] = target
    for s, x in enumerate(fill, start=1):
        if x.shape != (data.schema.dims[s],):
            raise ValueError(f"fill point {s} has shape {x.shape}, expected ({data.schema.dims[s]},)")
        if not region_contains(hyp.regions[s], x):
            raise ValueError(f"fill point {s} is outside region B_{s}")
    if not region_contains(hyp.regions[t], fill_t):
        raise ValueError(f"fill point {t} leaves B_{t} once its outcome is set to {target}")
    fill[t - 1] = fill_t

    N = match_lengths(data.actions, hyp.actions)
    actions = data.actions.copy()
    states = [s.copy() for s in data.states]
    for s in range(1, t + 1):
        rows = N < s
        actions[rows, s - 1] = hyp.actions[s - 1]
        states[s - 1][rows] = fill[s - 1]
    return Dataset(data.schema, data.x0, actions, states, provenance={**data.provenance, "sharpness": mode})


def manski_hypothesis(hyp: Hypothesis) -> Hypothesis:
    """The same hypothesis with every region widened to the whole space."""
    return replace(hyp, regions=tuple(WHOLE_SPACE for _ in hyp.regions))


ESTIMATE_COLUMNS = ["hypothesis_id", "n", "n_match", "mu_lo", "mu_up", "n_hat", "mu_hat", "width", "match_fraction"]


def fmt_float(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_estimates(rows: Sequence[tuple[str, BoundEstimate]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for hid, est in rows:
            w.writerow([
                hid, est.n, est.n_match, fmt_float(est.mu_lo), fmt_float(est.mu_up), est.n_hat,
                fmt_float(est.mu_hat), fmt_float(est.width), fmt_float(est.match_fraction),
            ])
