"""Box regions, clipped outcome specs, hypotheses and the hypothesis generator."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .trajectory import Dataset, SchemaSpec, ValidationError

LO = "lo"
UP = "up"


@dataclass(frozen=True)
class Constraint:
    """Interval constraint on one feature; infinite bounds are always open."""

    feature: int
    lower: float = -math.inf
    upper: float = math.inf
    lower_closed: bool = True
    upper_closed: bool = False

    def __post_init__(self):
        if self.feature < 0:
            raise ValueError(f"feature index must be >= 0, got {self.feature}")
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise ValueError("constraint bounds must not be NaN")
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    def mask(self, values: np.ndarray) -> np.ndarray:
        lo_ok = values >= self.lower if self.lower_closed else values > self.lower
        up_ok = values <= self.upper if self.upper_closed else values < self.upper
        return lo_ok & up_ok

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "lower": None if math.isinf(self.lower) else self.lower,
            "upper": None if math.isinf(self.upper) else self.upper,
            "lower_closed": self.lower_closed,
            "upper_closed": self.upper_closed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Constraint":
        lower = -math.inf if d.get("lower") is None else float(d["lower"])
        upper = math.inf if d.get("upper") is None else float(d["upper"])
        return cls(int(d["feature"]), lower, upper, bool(d.get("lower_closed", True)), bool(d.get("upper_closed", False)))


@dataclass(frozen=True)
class BoxRegion:
    """Conjunction of per-feature interval constraints; no constraints means the whole space."""

    constraints: tuple[Constraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        seen = [c.feature for c in self.constraints]
        if len(seen) != len(set(seen)):
            raise ValueError(f"at most one constraint per feature, got features {seen}")

    @property
    def is_whole_space(self) -> bool:
        return not self.constraints

    def max_feature(self) -> int:
        return max((c.feature for c in self.constraints), default=-1)

    def mask(self, X: np.ndarray) -> np.ndarray:
        """Row-wise membership for a 2-D array of points."""
        X = np.asarray(X, dtype=np.float64)
        out = np.ones(X.shape[0], dtype=bool)
        if self.constraints and self.max_feature() >= X.shape[1]:
            raise IndexError(f"region constrains feature {self.max_feature()} but points have {X.shape[1]} features")
        for c in self.constraints:
            out &= c.mask(X[:, c.feature])
        return out

    def contains(self, x) -> bool:
        return bool(region_contains(self, x))

    def to_list(self) -> list[dict]:
        return [c.to_dict() for c in self.constraints]

    @classmethod
    def from_list(cls, items) -> "BoxRegion":
        return cls(tuple(Constraint.from_dict(c) for c in items))


def region_contains(region: BoxRegion, x) -> bool:
    x = np.asarray(x, dtype=np.float64)
    for c in region.constraints:
        if c.feature >= x.shape[0]:
            raise IndexError(f"feature index {c.feature} out of range for a vector of length {x.shape[0]}")
        if not c.mask(x[c.feature]):
            return False
    return True


WHOLE_SPACE = BoxRegion()


@dataclass(frozen=True)
class OutcomeSpec:
    """``f(x_{0:t}) = clip((x_t)_feature, y_lo, y_up)``."""

    time: int
    feature: int
    y_lo: float
    y_up: float

    def __post_init__(self):
        if not self.y_lo < self.y_up:
            raise ValueError(f"need y_lo < y_up, got [{self.y_lo}, {self.y_up}]")

    @property
    def width(self) -> float:
        return self.y_up - self.y_lo

    def clip(self, z):
        return np.minimum(np.maximum(z, self.y_lo), self.y_up)

    def to_dict(self) -> dict:
        return {"time": self.time, "feature": self.feature, "y_lo": self.y_lo, "y_up": self.y_up}

    @classmethod
    def from_dict(cls, d: dict) -> "OutcomeSpec":
        return cls(int(d["time"]), int(d["feature"]), float(d["y_lo"]), float(d["y_up"]))


@dataclass(frozen=True)
class Hypothesis:
    """One falsification hypothesis (``direction`` is ``"lo"`` or ``"up"``)."""

    t: int
    outcome: OutcomeSpec
    actions: tuple[int, ...]
    regions: tuple[BoxRegion, ...]
    direction: str = LO
    id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        object.__setattr__(self, "regions", tuple(self.regions))
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.outcome.time != self.t:
            raise ValueError(f"outcome time {self.outcome.time} differs from t={self.t}")
        if len(self.actions) != self.t:
            raise ValueError(f"need {self.t} actions, got {len(self.actions)}")
        if len(self.regions) != self.t + 1:
            raise ValueError(f"need {self.t + 1} regions, got {len(self.regions)}")
        if self.direction not in (LO, UP):
            raise ValueError(f"direction must be 'lo' or 'up', got {self.direction!r}")

    def validate(self, schema: SchemaSpec) -> None:
        if self.t > schema.T:
            raise ValidationError(f"hypothesis {self.id}: t={self.t} exceeds horizon {schema.T}")
        if self.outcome.feature >= schema.dims[self.t]:
            raise ValidationError(f"hypothesis {self.id}: outcome feature out of range")
        for s, a in enumerate(self.actions):
            if not 0 <= a < schema.action_cardinalities[s]:
                raise ValidationError(f"hypothesis {self.id}: action id out of range at step {s + 1}")
        for s, region in enumerate(self.regions):
            if region.max_feature() >= schema.dims[s]:
                raise ValidationError(f"hypothesis {self.id}: region {s} constrains a feature not in X_{s}")

    def with_outcome(self, y_lo: float, y_up: float) -> "Hypothesis":
        return replace(self, outcome=replace(self.outcome, y_lo=y_lo, y_up=y_up))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "t": self.t,
            "outcome": self.outcome.to_dict(),
            "actions": list(self.actions),
            "regions": [r.to_list() for r in self.regions],
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hypothesis":
        return cls(
            t=int(d["t"]),
            outcome=OutcomeSpec.from_dict(d["outcome"]),
            actions=tuple(d["actions"]),
            regions=tuple(BoxRegion.from_list(r) for r in d["regions"]),
            direction=d["direction"],
            id=str(d.get("id", "")),
        )


def save_hypotheses(hyps: Sequence[Hypothesis], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump([h.to_dict() for h in hyps], fh, indent=1, allow_nan=False)
        fh.write("\n")


def load_hypotheses(path, schema: Optional[SchemaSpec] = None) -> list[Hypothesis]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list):
        raise ValidationError("hypothesis file must hold a JSON list")
    try:
        hyps = [Hypothesis.from_dict(d) for d in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid hypothesis entry: {exc}") from None
    if schema is not None:
        for h in hyps:
            h.validate(schema)
    return hyps


def quantile_nearest_rank(values, q: float) -> float:
    """Order statistic at 1-based rank ``ceil(q * n)`` (clamped to ``1..n``)."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ValueError("quantile of an empty sample")
    rank = min(max(math.ceil(q * v.size), 1), v.size)
    return float(v[rank - 1])


# --- bin plans --------------------------------------------------------------

OUTCOME = "outcome"


@dataclass(frozen=True)
class BinSpec:
    """Discretizer for one feature.

    ``feature`` is a feature index, or ``"outcome"`` for the outcome feature
    of the hypothesis being generated. ``kind="categorical"`` makes one point
    bin per level; ``kind="quantile"`` cuts at the nearest-rank quantiles of
    the holdout values at each timestep (left-closed bins, last bin unbounded).
    A spec whose feature does not exist at some timestep is skipped there.
    """

    feature: Union[int, str]
    kind: str = "quantile"
    levels: tuple[float, ...] = ()
    quantiles: tuple[float, ...] = (0.5,)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        if self.kind not in ("categorical", "quantile"):
            raise ValueError(f"unknown bin kind {self.kind!r}")
        if self.kind == "categorical" and not self.levels:
            raise ValueError("categorical bins need levels")
        if self.kind == "quantile" and not all(0 < q < 1 for q in self.quantiles):
            raise ValueError("bin quantiles must lie in (0, 1)")

    def resolve(self, outcome_feature: int) -> int:
        return outcome_feature if self.feature == OUTCOME else int(self.feature)

    def to_dict(self) -> dict:
        d = {"feature": self.feature, "kind": self.kind}
        if self.kind == "categorical":
            d["levels"] = list(self.levels)
        else:
            d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BinSpec":
        return cls(
            feature=d["feature"],
            kind=d.get("kind", "quantile"),
            levels=tuple(d.get("levels", ())),
            quantiles=tuple(d.get("quantiles", (0.5,))),
        )


def cut_bins(feature: int, cuts: Sequence[float]) -> list[Constraint]:
    """Partition of the real line at sorted distinct ``cuts``: left-closed, right-open."""
    edges = [-math.inf, *sorted(set(cuts)), math.inf]
    return [Constraint(feature, lo, hi, lower_closed=not math.isinf(lo), upper_closed=False) for lo, hi in zip(edges, edges[1:])]


def level_bins(feature: int, levels: Sequence[float]) -> list[Constraint]:
    return [Constraint(feature, v, v, True, True) for v in sorted(set(levels))]


@dataclass(frozen=True)
class GeneratorConfig:
    quantile_lo: float = 0.2
    quantile_up: float = 0.8
    bins: tuple[BinSpec, ...] = ()
    outcome_features: tuple[int, ...] = (0,)
    timesteps: Optional[tuple[int, ...]] = None
    min_support: int = 1

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(self.bins))
        object.__setattr__(self, "outcome_features", tuple(int(i) for i in self.outcome_features))
        if self.timesteps is not None:
            object.__setattr__(self, "timesteps", tuple(int(t) for t in self.timesteps))
        if not 0 < self.quantile_lo < self.quantile_up < 1:
            raise ValueError("need 0 < quantile_lo < quantile_up < 1")
        if self.min_support < 1:
            raise ValueError("min_support must be >= 1")

    def to_dict(self) -> dict:
        return {
            "quantile_lo": self.quantile_lo,
            "quantile_up": self.quantile_up,
            "bins": [b.to_dict() for b in self.bins],
            "outcome_features": list(self.outcome_features),
            "timesteps": None if self.timesteps is None else list(self.timesteps),
            "min_support": self.min_support,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(
            quantile_lo=float(d.get("quantile_lo", 0.2)),
            quantile_up=float(d.get("quantile_up", 0.8)),
            bins=tuple(BinSpec.from_dict(b) for b in d.get("bins", ())),
            outcome_features=tuple(d.get("outcome_features", (0,))),
            timesteps=None if d.get("timesteps") is None else tuple(d["timesteps"]),
            min_support=int(d.get("min_support", 1)),
        )


def timestep_bins(holdout: Dataset, bins: Sequence[BinSpec], s: int, outcome_feature: int) -> list[list[Constraint]]:
    """Per-spec bin lists at timestep ``s``, cut points taken from the holdout."""
    X = holdout.state(s)
    d = holdout.schema.dims[s]
    out = []
    used = set()
    for spec in bins:
        j = spec.resolve(outcome_feature)
        if j >= d:
            continue
        if j in used:
            raise ValueError(f"bin plan constrains feature {j} twice at timestep {s}")
        used.add(j)
        if spec.kind == "categorical":
            out.append(level_bins(j, spec.levels))
        else:
            cuts = [quantile_nearest_rank(X[:, j], q) for q in spec.quantiles] if len(holdout) else []
            out.append(cut_bins(j, cuts))
    return out


def timestep_regions(per_spec: list[list[Constraint]]) -> list[BoxRegion]:
    """Cross product of per-spec bins, as regions in lexicographic order."""
    return [BoxRegion(tuple(combo)) for combo in itertools.product(*per_spec)]


def _cell_index(X: np.ndarray, per_spec: list[list[Constraint]]) -> np.ndarray:
    """Index of each row's cell in ``timestep_regions(per_spec)``; -1 when no cell matches."""
    n = X.shape[0]
    idx = np.zeros(n, dtype=np.int64)
    valid = np.ones(n, dtype=bool)
    for bins in per_spec:
        which = np.full(n, -1, dtype=np.int64)
        for b, c in enumerate(bins):
            which[c.mask(X[:, c.feature]) & (which < 0)] = b
        valid &= which >= 0
        idx = idx * len(bins) + np.maximum(which, 0)
    idx[~valid] = -1
    return idx


@dataclass
class SkipRecord:
    descriptor: str
    reason: str


@dataclass
class GenerationResult:
    hypotheses: list[Hypothesis]
    skipped: list[SkipRecord] = field(default_factory=list)
    cuts: dict = field(default_factory=dict)


def generate_hypotheses(holdout: Dataset, config: GeneratorConfig) -> GenerationResult:
    """Enumerate hypotheses supported by the holdout data.

    For every outcome feature and timestep ``t`` each holdout trajectory
    falls in exactly one (action prefix, cell sequence) group; groups with at
    least ``min_support`` members become parameter tuples, with clip bounds
    at the configured nearest-rank quantiles of the group's outcome values.
    Each tuple yields a ``lo`` and an ``up`` hypothesis.
    """
    schema = holdout.schema
    if len(holdout) == 0:
        raise ValueError("holdout dataset is empty")
    timesteps = config.timesteps or tuple(range(1, schema.T + 1))
    hyps: list[Hypothesis] = []
    skipped: list[SkipRecord] = []
    cuts: dict = {}
    for i in config.outcome_features:
        for t in timesteps:
            if not 1 <= t <= schema.T:
                raise ValueError(f"timestep {t} outside 1..{schema.T}")
            if i >= schema.dims[t]:
                raise ValueError(f"outcome feature {i} not present at timestep {t}")
            per_step = [timestep_bins(holdout, config.bins, s, i) for s in range(t + 1)]
            regions = [timestep_regions(b) for b in per_step]
            cuts[f"feature={i},t={t}"] = [[r.to_list() for r in regs] for regs in regions]
            cells = np.stack([_cell_index(holdout.state(s), per_step[s]) for s in range(t + 1)], axis=1)
            keys = np.concatenate([holdout.actions[:, :t], cells], axis=1)
            ok = np.all(cells >= 0, axis=1)
            uniq, inverse, counts = np.unique(keys[ok], axis=0, return_inverse=True, return_counts=True)
            outcome_vals = holdout.state(t)[ok, i]
            inverse = inverse.ravel()
            for g, key in enumerate(uniq):
                acts = tuple(int(a) for a in key[:t])
                cell_seq = [int(c) for c in key[t:]]
                descriptor = f"feature={i};t={t};actions={list(acts)};cells={cell_seq}"
                if counts[g] < config.min_support:
                    skipped.append(SkipRecord(descriptor, f"support {counts[g]} < {config.min_support}"))
                    continue
                vals = outcome_vals[inverse == g]
                y_lo = quantile_nearest_rank(vals, config.quantile_lo)
                y_up = quantile_nearest_rank(vals, config.quantile_up)
                if not y_lo < y_up:
                    skipped.append(SkipRecord(descriptor, "degenerate outcome interval (y_lo == y_up)"))
                    continue
                outcome = OutcomeSpec(t, i, y_lo, y_up)
                regs = tuple(regions[s][c] for s, c in enumerate(cell_seq))
                base = len(hyps) // 2
                for direction in (LO, UP):
                    hyps.append(Hypothesis(t, outcome, acts, regs, direction, id=f"h{base:06d}{direction}"))
    return GenerationResult(hyps, skipped, cuts)


def write_skip_log(skipped: Sequence[SkipRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tuple", "reason"])
        for rec in skipped:
            w.writerow([rec.descriptor, rec.reason])


# --- action-dose discretization -----------------------------------------------


class DoseDiscretizer:
    """Per-drug dose bins: bin 0 is exactly zero, bins 1-4 split the nonzero
    holdout doses at their nearest-rank quartiles.

    Nonzero bins are ``(0, c1], (c1, c2], (c2, c3], (c3, inf)``. Multi-drug
    actions are encoded in mixed radix, first drug most significant, so for
    two drugs ``action = 5 * bin_1 + bin_2``.
    """

    quartiles = (0.25, 0.5, 0.75)

    def __init__(self, holdout_doses):
        doses = np.asarray(holdout_doses, dtype=np.float64)
        if doses.ndim == 1:
            doses = doses[:, None]
        if np.any(doses < 0):
            raise ValueError("negative dose in holdout")
        self.cuts = []
        for j in range(doses.shape[1]):
            nz = doses[:, j][doses[:, j] > 0]
            if nz.size == 0:
                raise ValueError(f"drug {j} has no nonzero holdout doses")
            self.cuts.append(np.array([quantile_nearest_rank(nz, q) for q in self.quartiles]))
        self.n_bins = len(self.quartiles) + 2

    @property
    def n_drugs(self) -> int:
        return len(self.cuts)

    def bins(self, doses) -> np.ndarray:
        doses = np.asarray(doses, dtype=np.float64)
        if doses.ndim == 1:
            doses = doses.reshape(-1, self.n_drugs)
        if np.any(doses < 0):
            raise ValueError("negative dose")
        out = np.zeros(doses.shape, dtype=np.int64)
        for j, cuts in enumerate(self.cuts):
            col = doses[:, j]
            nz = col > 0
            out[nz, j] = 1 + np.searchsorted(cuts, col[nz], side="left")
        return out

    def encode(self, bins) -> np.ndarray:
        bins = np.atleast_2d(np.asarray(bins, dtype=np.int64))
        ids = np.zeros(bins.shape[0], dtype=np.int64)
        for j in range(bins.shape[1]):
            ids = ids * self.n_bins + bins[:, j]
        return ids

    def __call__(self, doses) -> np.ndarray:
        return self.encode(self.bins(doses))


def discretize_doses(doses, holdout_doses) -> np.ndarray:
    """Action ids for ``doses`` (rows of per-drug doses) using holdout quartiles."""
    return DoseDiscretizer(holdout_doses)(doses)
