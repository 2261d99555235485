"""Falsification tests: antecedent gating, p-values, multiplicity control,
sensitivity sweeps and rejection diagnostics.

An ``lo`` hypothesis is rejected at level ``alpha`` when the upper endpoint
for the twin mean falls below the lower endpoint for the bound. ``up``
hypotheses reuse the same machinery on negated outcomes.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .bounds import BoundEstimate, BoundSamples, collect_samples, fmt_float, twin_filter, _obs_arrays
from .intervals import Backend, Side, bootstrap_endpoints, bootstrap_rng, hoeffding_delta
from .regions import LO, UP, Hypothesis
from .trajectory import Dataset, TwinDataset

log = logging.getLogger(__name__)

ALPHA_GRID = np.logspace(-6.0, 0.0, 1000)
BOOTSTRAP_MIN_N = 100

GATE_NO_OBS = "no matching observational trajectory"
GATE_NO_TWIN = "no twin trajectory in region"
GATE_BOOT_MIN_N = f"bootstrap needs n and n_hat >= {BOOTSTRAP_MIN_N}"


@dataclass
class TestResult:
    __test__ = False

    hypothesis_id: str
    direction: str
    feature: int
    t: int
    estimate: BoundEstimate
    p_value: float = 1.0
    gate_reason: Optional[str] = None
    alpha: float = 0.05
    bound_endpoint: float = math.nan
    twin_endpoint: float = math.nan
    adjusted_reject: Optional[bool] = None

    @property
    def gated(self) -> bool:
        return self.gate_reason is not None

    def reject_at(self, alpha: float) -> bool:
        return not self.gated and self.p_value <= alpha


@dataclass
class MultiplicityReport:
    method: str
    level: float
    decisions: list[bool]
    thresholds: list[float]

    @property
    def n_rejected(self) -> int:
        return sum(self.decisions)


def gate_reason(est: BoundEstimate, backend: Backend = Backend.HOEFFDING) -> Optional[str]:
    if est.n_match == 0:
        return GATE_NO_OBS
    if est.n_hat == 0:
        return GATE_NO_TWIN
    if Backend(backend).is_bootstrap and (est.n < BOOTSTRAP_MIN_N or est.n_hat < BOOTSTRAP_MIN_N):
        return GATE_BOOT_MIN_N
    return None


def gate(data: Dataset, twin: Optional[TwinDataset], hyp: Hypothesis, backend: Backend = Backend.HOEFFDING):
    """Reason the hypothesis cannot be tested, or None when its antecedent is witnessed."""
    return gate_reason(BoundEstimate.from_samples(collect_samples(data, twin, hyp)), backend)


def _oriented(samples: BoundSamples, direction: str):
    """Bound-side values, twin values and range, negated for ``up`` hypotheses."""
    if direction == LO:
        return samples.y_lo_values, samples.twin_values, samples.y_lo, samples.y_up
    return -samples.y_up_values, -samples.twin_values, -samples.y_up, -samples.y_lo


def hoeffding_p_value(est: BoundEstimate, direction: str) -> float:
    """Smallest level at which the Hoeffding test rejects, in closed form.

    The test rejects at ``alpha`` iff the gap exceeds
    ``c * sqrt(log(2 / alpha))`` with ``c = (y_up - y_lo) * (1/sqrt(2n) + 1/sqrt(2 n_hat))``.
    """
    if est.n == 0 or est.n_hat == 0:
        raise ValueError("p-value requested for a gated estimate")
    gap = est.mu_lo - est.mu_hat if direction == LO else est.mu_hat - est.mu_up
    if gap <= 0:
        return 1.0
    c = (est.y_up - est.y_lo) * (math.sqrt(1.0 / (2 * est.n)) + math.sqrt(1.0 / (2 * est.n_hat)))
    p = 2.0 * math.exp(-((gap / c) ** 2))
    return min(1.0, max(p, np.finfo(float).tiny))


def hoeffding_endpoints(est: BoundEstimate, direction: str, alpha: float) -> tuple[float, float]:
    """(bound endpoint, twin endpoint) in the original outcome scale."""
    width = est.y_up - est.y_lo
    d = float(hoeffding_delta(est.n, width, alpha))
    d_hat = float(hoeffding_delta(est.n_hat, width, alpha))
    if direction == LO:
        return est.mu_lo - d, est.mu_hat + d_hat
    return est.mu_up + d, est.mu_hat - d_hat


def _bootstrap_curves(samples: BoundSamples, direction: str, backend: Backend, alphas, resamples: int,
                      seed: int, stream: str):
    bound_vals, twin_vals, _, _ = _oriented(samples, direction)
    bound_side = Side.LOWER_FOR_BOUND if direction == LO else Side.UPPER_FOR_BOUND
    twin_side = Side.UPPER_FOR_TWIN if direction == LO else Side.LOWER_FOR_TWIN
    q_bound = bootstrap_endpoints(bound_vals, alphas, Side.LOWER_FOR_BOUND, backend, resamples,
                                  bootstrap_rng(seed, stream, bound_side))
    q_twin = bootstrap_endpoints(twin_vals, alphas, Side.UPPER_FOR_TWIN, backend, resamples,
                                 bootstrap_rng(seed, stream, twin_side))
    return q_bound, q_twin


def bootstrap_p_value(samples: BoundSamples, direction: str, backend: Backend, resamples: int = 100,
                      seed: int = 0, stream: str = "") -> float:
    """Smallest level on :data:`ALPHA_GRID` at which the bootstrap test rejects, else 1."""
    q_bound, q_twin = _bootstrap_curves(samples, direction, backend, ALPHA_GRID, resamples, seed, stream)
    rejects = q_twin < q_bound
    if not rejects.any():
        return 1.0
    return float(ALPHA_GRID[np.argmax(rejects)])


def evaluate(data: Dataset, twin: Optional[TwinDataset], hyp: Hypothesis, backend: Backend = Backend.HOEFFDING,
             alpha: float = 0.05, resamples: int = 100, seed: int = 0) -> TestResult:
    """Gate, estimate and test one hypothesis."""
    backend = Backend(backend)
    samples = collect_samples(data, twin, hyp)
    est = BoundEstimate.from_samples(samples)
    res = TestResult(hyp.id, hyp.direction, hyp.outcome.feature, hyp.t, est, alpha=alpha)
    res.gate_reason = gate_reason(est, backend)
    if res.gated:
        return res
    if backend is Backend.HOEFFDING:
        res.p_value = hoeffding_p_value(est, hyp.direction)
        res.bound_endpoint, res.twin_endpoint = hoeffding_endpoints(est, hyp.direction, alpha)
    else:
        res.p_value = bootstrap_p_value(samples, hyp.direction, backend, resamples, seed, hyp.id)
        qb, qt = _bootstrap_curves(samples, hyp.direction, backend, [alpha], resamples, seed, hyp.id)
        sign = 1.0 if hyp.direction == LO else -1.0
        res.bound_endpoint, res.twin_endpoint = sign * float(qb[0]), sign * float(qt[0])
    return res


def _sort_order(p: Sequence[float], ids: Optional[Sequence[str]]) -> list[int]:
    ids = list(ids) if ids is not None else [""] * len(p)
    return sorted(range(len(p)), key=lambda k: (p[k], ids[k], k))


def holm_bonferroni(p: Sequence[float], level: float = 0.05, ids: Optional[Sequence[str]] = None) -> MultiplicityReport:
    """Holm step-down: reject sorted ``p_(j)`` while ``p_(j) <= level / (m - j + 1)``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = len(p)
    decisions = [False] * m
    thresholds = [0.0] * m
    stopped = False
    for j, k in enumerate(_sort_order(p, ids)):
        thresholds[k] = level / (m - j)
        if not stopped and p[k] <= thresholds[k]:
            decisions[k] = True
        else:
            stopped = True
    return MultiplicityReport("holm", level, decisions, thresholds)


def benjamini_yekutieli(p: Sequence[float], level: float = 0.05, ids: Optional[Sequence[str]] = None) -> MultiplicityReport:
    """Benjamini-Yekutieli step-up with the harmonic correction ``c(m) = sum 1/i``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    m = len(p)
    decisions = [False] * m
    thresholds = [0.0] * m
    if m == 0:
        return MultiplicityReport("by", level, decisions, thresholds)
    c_m = math.fsum(1.0 / i for i in range(1, m + 1))
    order = _sort_order(p, ids)
    k_max = 0
    for j, k in enumerate(order, start=1):
        thresholds[k] = j * level / (m * c_m)
        if p[k] <= thresholds[k]:
            k_max = j
    for k in order[:k_max]:
        decisions[k] = True
    return MultiplicityReport("by", level, decisions, thresholds)


MULTIPLICITY = {"holm": holm_bonferroni, "by": benjamini_yekutieli}


@dataclass
class FamilyResult:
    results: list[TestResult]
    report: MultiplicityReport

    @property
    def n_rejected(self) -> int:
        return self.report.n_rejected

    def rejected(self) -> list[TestResult]:
        return [r for r, d in zip(self.results, self.report.decisions) if d]


def run_family(data: Dataset, twins: Mapping[tuple, TwinDataset], hyps: Sequence[Hypothesis],
               backend: Backend = Backend.HOEFFDING, alpha: float = 0.05, method: str = "holm",
               resamples: int = 100, seed: int = 0, workers: int = 1) -> FamilyResult:
    """Test every hypothesis and apply multiplicity control at ``alpha``.

    Gated hypotheses keep ``p = 1`` and stay in the family.
    """
    def one(h: Hypothesis) -> TestResult:
        return evaluate(data, twins.get(h.actions), h, backend, alpha, resamples, seed)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, hyps))
    else:
        results = [one(h) for h in hyps]
    report = MULTIPLICITY[method]([r.p_value for r in results], alpha, [r.hypothesis_id for r in results])
    for r, d in zip(results, report.decisions):
        r.adjusted_reject = d
    return FamilyResult(results, report)


# --- sensitivity --------------------------------------------------------------


@dataclass
class SensitivityResult:
    deltas: list[float]
    counts: dict  # delta -> {feature: rejections}
    skipped: list[tuple[str, float, str]] = field(default_factory=list)

    def total(self, delta: float) -> int:
        return sum(self.counts[delta].values())


def rescale_outcome(hyp: Hypothesis, delta: float) -> Hypothesis:
    """Clip interval ``[y_lo * (1 - delta/2), y_up * (1 + delta/2)]``."""
    return hyp.with_outcome(hyp.outcome.y_lo * (1 - delta / 2), hyp.outcome.y_up * (1 + delta / 2))


def sensitivity_sweep(data: Dataset, twins: Mapping[tuple, TwinDataset], hyps: Sequence[Hypothesis],
                      deltas: Sequence[float], backend: Backend = Backend.HOEFFDING, alpha: float = 0.05,
                      method: str = "holm", resamples: int = 100, seed: int = 0, workers: int = 1) -> SensitivityResult:
    features = sorted({h.outcome.feature for h in hyps})
    counts = {}
    skipped = []
    for delta in deltas:
        family = []
        for h in hyps:
            try:
                family.append(rescale_outcome(h, delta))
            except ValueError as exc:
                skipped.append((h.id, delta, str(exc)))
                log.info("skipping %s at delta=%s: %s", h.id, delta, exc)
        fam = run_family(data, twins, family, backend, alpha, method, resamples, seed, workers)
        row = {i: 0 for i in features}
        for r in fam.rejected():
            row[r.feature] += 1
        counts[delta] = row
    return SensitivityResult(list(deltas), counts, skipped)


# --- diagnostics --------------------------------------------------------------


@dataclass
class DiagnosticCase:
    name: str
    twin: Optional[float]
    obs: Optional[float]
    difference: Optional[float]

    @property
    def insufficient(self) -> bool:
        return self.difference is None

    @property
    def exceeds(self) -> bool:
        return self.difference is not None and self.difference > 0


@dataclass
class Diagnostics:
    hypothesis_id: str
    direction: str
    cases: list[DiagnosticCase]

    def any_exceeds(self) -> bool:
        return any(c.exceeds for c in self.cases)


def _frac(mask: np.ndarray) -> Optional[float]:
    return float(np.mean(mask)) if mask.size else None


def _interior_mean(z: np.ndarray, lo: float, up: float) -> Optional[float]:
    inner = z[(z > lo) & (z < up)]
    return math.fsum(inner.tolist()) / inner.size if inner.size else None


def rejection_diagnostics(data: Dataset, twin: Optional[TwinDataset], hyp: Hypothesis) -> Diagnostics:
    """Empirical tail and interior comparisons of the unclipped outcomes.

    Compares twin runs in the region with action-matched observational
    trajectories in the region. For ``up`` the three differences are
    ``P(Z_twin >= y_up) - P(Z >= y_up)``, ``P(Z_twin > y_lo) - P(Z > y_lo)`` and
    the difference of interior means; ``lo`` uses the mirrored comparisons.
    A rejected hypothesis must have at least one positive difference.
    """
    i, t = hyp.outcome.feature, hyp.t
    lo, up = hyp.outcome.y_lo, hyp.outcome.y_up
    _, keep, matched, _, _ = _obs_arrays(data, hyp)
    z_obs = data.states[t - 1][keep & matched, i]
    if twin is not None and len(twin):
        z_twin = twin.states[t - 1][twin_filter(twin, hyp), i]
    else:
        z_twin = np.empty(0)

    def case(name, tw, ob, sign=1.0):
        diff = None if tw is None or ob is None else sign * (tw - ob)
        return DiagnosticCase(name, tw, ob, diff)

    if hyp.direction == UP:
        cases = [
            case("P(Z >= y_up)", _frac(z_twin >= up), _frac(z_obs >= up)),
            case("P(Z > y_lo)", _frac(z_twin > lo), _frac(z_obs > lo)),
            case("E[Z | y_lo < Z < y_up]", _interior_mean(z_twin, lo, up), _interior_mean(z_obs, lo, up)),
        ]
    else:
        cases = [
            case("P(Z <= y_lo)", _frac(z_twin <= lo), _frac(z_obs <= lo)),
            case("P(Z < y_up)", _frac(z_twin < up), _frac(z_obs < up)),
            case("E[Z | y_lo < Z < y_up]", _interior_mean(z_twin, lo, up), _interior_mean(z_obs, lo, up), -1.0),
        ]
    return Diagnostics(hyp.id, hyp.direction, cases)


# --- two-sided (experimental) -------------------------------------------------


def two_sided_inference(est: BoundEstimate, direction: str, alpha: float = 0.05) -> str:
    """Experimental closed-testing variant using Hoeffding intervals at ``alpha/2`` per side.

    Returns ``"false"`` (hypothesis refuted), ``"true"`` (hypothesis
    confirmed) or ``"none"`` (overlapping intervals, no inference).
    """
    if est.n == 0 or est.n_hat == 0:
        return "none"
    width = est.y_up - est.y_lo
    d = float(hoeffding_delta(est.n, width, alpha / 2))
    d_hat = float(hoeffding_delta(est.n_hat, width, alpha / 2))
    bound = est.mu_lo if direction == LO else -est.mu_up
    twin = est.mu_hat if direction == LO else -est.mu_hat
    if twin + d_hat < bound - d:
        return "false"
    if bound + d < twin - d_hat:
        return "true"
    return "none"


# --- outputs ------------------------------------------------------------------


def result_columns(method: str) -> list[str]:
    return ["hypothesis_id", "outcome_feature", "t", "direction", "n", "n_hat", "mu_lo", "mu_up", "mu_hat", "p",
            f"{method}_reject", "gate_reason"]


def write_results(fam: FamilyResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(result_columns(fam.report.method))
        for r in fam.results:
            e = r.estimate
            w.writerow([
                r.hypothesis_id, r.feature, r.t, r.direction, e.n, e.n_hat, fmt_float(e.mu_lo), fmt_float(e.mu_up),
                fmt_float(e.mu_hat), repr(float(r.p_value)), int(bool(r.adjusted_reject)), r.gate_reason or "",
            ])


def summarize(fam: FamilyResult, feature_names: Optional[Mapping[int, str]] = None, **meta) -> dict:
    """Per-outcome hypothesis and rejection counts."""
    rows: dict[int, dict] = {}
    for r, rej in zip(fam.results, fam.report.decisions):
        row = rows.setdefault(r.feature, {"feature": r.feature, "hypotheses": 0, "rejections": 0,
                                          "rejections_lo": 0, "rejections_up": 0, "gated": 0})
        if feature_names:
            row["name"] = feature_names.get(r.feature, f"x{r.feature}")
        row["hypotheses"] += 1
        row["gated"] += int(r.gated)
        if rej:
            row["rejections"] += 1
            row[f"rejections_{r.direction}"] += 1
    per = sorted(rows.values(), key=lambda d: (-d["rejections"], d["feature"]))
    return {
        **meta,
        "method": fam.report.method,
        "level": fam.report.level,
        "total_hypotheses": len(fam.results),
        "total_rejections": fam.report.n_rejected,
        "per_outcome": per,
    }


def write_summary(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
