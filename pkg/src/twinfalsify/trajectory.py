"""Observational and twin trajectory datasets, JSONL ingestion and validation.

Datasets are stored column-wise (one array per timestep) so the estimators can
work on whole datasets at once; individual records are materialized on
demand as :class:`ObservedTrajectory` / :class:`TwinTrajectory` views.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np


class ValidationError(ValueError):
    """A dataset, schema or record failed validation."""

    def __init__(self, message: str, line: Optional[int] = None, field_name: Optional[str] = None):
        self.line = line
        self.field_name = field_name
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field_name is not None:
            prefix += f"field {field_name!r}: "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class SchemaSpec:
    """Shape of a trajectory: horizon, per-timestep dimensions and action-set sizes.

    ``dims`` has ``T + 1`` entries (``d_0 .. d_T``) and ``action_cardinalities``
    has ``T`` entries (``|A_1| .. |A_T|``).
    """

    T: int
    dims: tuple[int, ...]
    action_cardinalities: tuple[int, ...]
    feature_names: Optional[tuple[tuple[str, ...], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "action_cardinalities", tuple(int(k) for k in self.action_cardinalities))
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(tuple(names) for names in self.feature_names))
        if self.T < 1:
            raise ValidationError(f"horizon T must be >= 1, got {self.T}")
        if len(self.dims) != self.T + 1:
            raise ValidationError(f"dims must have T+1={self.T + 1} entries, got {len(self.dims)}")
        if len(self.action_cardinalities) != self.T:
            raise ValidationError(
                f"action_cardinalities must have T={self.T} entries, got {len(self.action_cardinalities)}"
            )
        if any(d < 1 for d in self.dims):
            raise ValidationError("every dimension must be >= 1")
        if any(k < 1 for k in self.action_cardinalities):
            raise ValidationError("every action cardinality must be >= 1")
        if self.feature_names is not None:
            if len(self.feature_names) != self.T + 1:
                raise ValidationError("feature_names must have one list per timestep")
            for t, (names, d) in enumerate(zip(self.feature_names, self.dims)):
                if len(names) != d:
                    raise ValidationError(f"feature_names[{t}] has {len(names)} names, expected {d}")

    def feature_name(self, t: int, i: int) -> str:
        if self.feature_names is None:
            return f"x{i}"
        return self.feature_names[t][i]

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "dims": list(self.dims),
            "action_cardinalities": list(self.action_cardinalities),
            "feature_names": None if self.feature_names is None else [list(n) for n in self.feature_names],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SchemaSpec":
        try:
            return cls(
                T=int(d["T"]),
                dims=d["dims"],
                action_cardinalities=d["action_cardinalities"],
                feature_names=d.get("feature_names"),
            )
        except KeyError as exc:
            raise ValidationError(f"schema is missing key {exc.args[0]!r}") from None


def load_schema(path) -> SchemaSpec:
    with open(path, encoding="utf-8") as fh:
        return SchemaSpec.from_dict(json.load(fh))


def write_schema(schema: SchemaSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class ObservedTrajectory:
    x0: np.ndarray
    actions: tuple[int, ...]
    states: tuple[np.ndarray, ...]

    @property
    def steps(self) -> list[tuple[int, np.ndarray]]:
        return list(zip(self.actions, self.states))


@dataclass(frozen=True)
class TwinTrajectory:
    x0: np.ndarray
    actions: tuple[int, ...]
    states: tuple[np.ndarray, ...]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise ValidationError(f"non-finite value in record {bad}", field_name=what)


class Dataset:
    """Immutable observational dataset with column storage.

    Parameters
    ----------
    schema : SchemaSpec
    x0 : array, shape (n, d_0)
    actions : int array, shape (n, T)
    states : sequence of T arrays, the s-th of shape (n, d_s)
    provenance : dict, optional
        Free-form metadata (source path, seeds).
    """

    def __init__(self, schema: SchemaSpec, x0, actions, states: Sequence, provenance: Optional[dict] = None):
        self.schema = schema
        n = len(x0)
        self.x0 = _frozen(np.reshape(x0, (n, schema.dims[0])))
        acts = np.array(actions, dtype=np.int64).reshape(n, schema.T)
        acts.flags.writeable = False
        self.actions = acts
        if len(states) != schema.T:
            raise ValidationError(f"expected {schema.T} state arrays, got {len(states)}")
        self.states = tuple(_frozen(np.reshape(s, (n, schema.dims[k + 1]))) for k, s in enumerate(states))
        self.provenance = dict(provenance or {})
        self._validate()

    def _validate(self) -> None:
        _check_finite(self.x0, "x0")
        for s, arr in enumerate(self.states, start=1):
            _check_finite(arr, f"x{s}")
        for s in range(self.schema.T):
            col = self.actions[:, s]
            k = self.schema.action_cardinalities[s]
            if col.size and (col.min() < 0 or col.max() >= k):
                raise ValidationError(f"action id out of range at step {s + 1} (valid ids 0..{k - 1})")

    def __len__(self) -> int:
        return self.x0.shape[0]

    def __getitem__(self, i: int) -> ObservedTrajectory:
        return ObservedTrajectory(
            x0=self.x0[i],
            actions=tuple(int(a) for a in self.actions[i]),
            states=tuple(s[i] for s in self.states),
        )

    def __iter__(self) -> Iterator[ObservedTrajectory]:
        return (self[i] for i in range(len(self)))

    @property
    def records(self) -> list[ObservedTrajectory]:
        return list(self)

    def state(self, s: int) -> np.ndarray:
        """States at timestep ``s`` (``s = 0`` returns ``x0``)."""
        return self.x0 if s == 0 else self.states[s - 1]

    def subset(self, indices, provenance: Optional[dict] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.schema,
            self.x0[idx],
            self.actions[idx],
            [s[idx] for s in self.states],
            provenance=self.provenance if provenance is None else provenance,
        )

    @classmethod
    def from_records(cls, schema: SchemaSpec, records: Iterable[ObservedTrajectory], provenance=None) -> "Dataset":
        records = list(records)
        n = len(records)
        x0 = np.array([r.x0 for r in records], dtype=np.float64).reshape(n, schema.dims[0])
        actions = np.array([r.actions for r in records], dtype=np.int64).reshape(n, schema.T)
        states = [
            np.array([r.states[s] for r in records], dtype=np.float64).reshape(n, schema.dims[s + 1])
            for s in range(schema.T)
        ]
        return cls(schema, x0, actions, states, provenance)


class TwinDataset:
    """Immutable twin dataset: ``n`` runs of a twin under one fixed action sequence."""

    def __init__(self, schema: SchemaSpec, actions: Sequence[int], x0, states: Sequence, provenance=None):
        self.schema = schema
        self.actions = tuple(int(a) for a in actions)
        t = len(self.actions)
        if not 1 <= t <= schema.T:
            raise ValidationError(f"twin action sequence length {t} outside 1..{schema.T}")
        for s, a in enumerate(self.actions):
            if not 0 <= a < schema.action_cardinalities[s]:
                raise ValidationError(f"action id out of range at step {s + 1}")
        n = len(x0)
        self.x0 = _frozen(np.reshape(x0, (n, schema.dims[0])))
        if len(states) != t:
            raise ValidationError(f"expected {t} state arrays, got {len(states)}")
        self.states = tuple(_frozen(np.reshape(s, (n, schema.dims[k + 1]))) for k, s in enumerate(states))
        self.provenance = dict(provenance or {})
        _check_finite(self.x0, "x0")
        for s, arr in enumerate(self.states, start=1):
            _check_finite(arr, f"x{s}")

    @property
    def t(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return self.x0.shape[0]

    def __getitem__(self, i: int) -> TwinTrajectory:
        return TwinTrajectory(self.x0[i], self.actions, tuple(s[i] for s in self.states))

    def __iter__(self) -> Iterator[TwinTrajectory]:
        return (self[i] for i in range(len(self)))

    @property
    def records(self) -> list[TwinTrajectory]:
        return list(self)

    def state(self, s: int) -> np.ndarray:
        return self.x0 if s == 0 else self.states[s - 1]

    @classmethod
    def from_records(cls, schema: SchemaSpec, actions, records: Iterable[TwinTrajectory], provenance=None):
        records = list(records)
        n, t = len(records), len(actions)
        x0 = np.array([r.x0 for r in records], dtype=np.float64).reshape(n, schema.dims[0])
        states = [
            np.array([r.states[s] for r in records], dtype=np.float64).reshape(n, schema.dims[s + 1])
            for s in range(t)
        ]
        return cls(schema, actions, x0, states, provenance)


# --- JSONL I/O -------------------------------------------------------------


def _reject_constant(token: str):
    raise ValueError(f"non-finite token {token}")


def _parse_line(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ValidationError(f"malformed JSON ({exc})", line=lineno) from None
    if not isinstance(rec, dict):
        raise ValidationError("record must be a JSON object", line=lineno)
    return rec


def _vector(value, dim: int, lineno: int, name: str) -> list[float]:
    if not isinstance(value, list) or len(value) != dim:
        got = len(value) if isinstance(value, list) else type(value).__name__
        raise ValidationError(f"dimension mismatch: expected {dim} values, got {got}", line=lineno, field_name=name)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ValidationError(f"non-numeric value {v!r}", line=lineno, field_name=name)
        if not math.isfinite(v):
            raise ValidationError("non-finite value", line=lineno, field_name=name)
        out.append(float(v))
    return out


def _action(value, k: int, lineno: int, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"action id must be an integer, got {value!r}", line=lineno, field_name=name)
    if not 0 <= value < k:
        raise ValidationError(f"action id out of range: {value} (valid ids 0..{k - 1})", line=lineno, field_name=name)
    return value


def _lines(path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def parse_observed_record(rec: dict, schema: SchemaSpec, lineno: Optional[int] = None) -> ObservedTrajectory:
    if "x0" not in rec or "steps" not in rec:
        raise ValidationError("observational record needs 'x0' and 'steps'", line=lineno)
    x0 = _vector(rec["x0"], schema.dims[0], lineno, "x0")
    steps = rec["steps"]
    if not isinstance(steps, list) or len(steps) != schema.T:
        raise ValidationError(f"expected {schema.T} steps", line=lineno, field_name="steps")
    actions, states = [], []
    for s, step in enumerate(steps, start=1):
        if not isinstance(step, dict) or "a" not in step or "x" not in step:
            raise ValidationError("step needs 'a' and 'x'", line=lineno, field_name=f"steps[{s - 1}]")
        actions.append(_action(step["a"], schema.action_cardinalities[s - 1], lineno, f"steps[{s - 1}].a"))
        states.append(np.array(_vector(step["x"], schema.dims[s], lineno, f"steps[{s - 1}].x")))
    return ObservedTrajectory(np.array(x0), tuple(actions), tuple(states))


def parse_twin_record(rec: dict, schema: SchemaSpec, lineno: Optional[int] = None) -> TwinTrajectory:
    for key in ("x0", "actions", "states"):
        if key not in rec:
            raise ValidationError(f"twin record missing {key!r}", line=lineno)
    x0 = _vector(rec["x0"], schema.dims[0], lineno, "x0")
    acts, states = rec["actions"], rec["states"]
    if not isinstance(acts, list) or not 1 <= len(acts) <= schema.T:
        raise ValidationError(f"actions must be a list of length 1..{schema.T}", line=lineno, field_name="actions")
    if not isinstance(states, list) or len(states) != len(acts):
        raise ValidationError("number of states must equal number of actions", line=lineno, field_name="states")
    actions = tuple(_action(a, schema.action_cardinalities[s], lineno, f"actions[{s}]") for s, a in enumerate(acts))
    xs = tuple(np.array(_vector(x, schema.dims[s + 1], lineno, f"states[{s}]")) for s, x in enumerate(states))
    return TwinTrajectory(np.array(x0), actions, xs)


def load_observational(path, schema: SchemaSpec) -> Dataset:
    """Read an observational JSONL file, validating every line against ``schema``."""
    records = [parse_observed_record(_parse_line(line, n), schema, n) for n, line in _lines(path)]
    return Dataset.from_records(schema, records, provenance={"source": str(path)})


def load_twin(path, schema: SchemaSpec, expected_actions: Sequence[int]) -> TwinDataset:
    """Read a twin JSONL file whose records must all use ``expected_actions``."""
    expected = tuple(int(a) for a in expected_actions)
    records = []
    for idx, (n, line) in enumerate(_lines(path)):
        rec = parse_twin_record(_parse_line(line, n), schema, n)
        if rec.actions != expected:
            raise ValidationError(
                f"record {idx} has actions {list(rec.actions)}, expected {list(expected)}", line=n, field_name="actions"
            )
        records.append(rec)
    return TwinDataset.from_records(schema, expected, records, provenance={"source": str(path)})


def load_twin_pool(path, schema: SchemaSpec) -> dict[tuple[int, ...], TwinDataset]:
    """Read a twin JSONL file holding runs for several action sequences.

    Records are grouped by action sequence, keeping file order within a group.
    """
    groups: dict[tuple[int, ...], list[TwinTrajectory]] = {}
    for n, line in _lines(path):
        rec = parse_twin_record(_parse_line(line, n), schema, n)
        groups.setdefault(rec.actions, []).append(rec)
    return {
        acts: TwinDataset.from_records(schema, acts, recs, provenance={"source": str(path)})
        for acts, recs in sorted(groups.items())
    }


def _floats(a) -> list[float]:
    # float repr is the shortest string that round-trips, so writing is bit-exact
    return [float(v) for v in a]


def observed_record(traj: ObservedTrajectory) -> dict:
    return {"x0": _floats(traj.x0), "steps": [{"a": int(a), "x": _floats(x)} for a, x in traj.steps]}


def twin_record(traj: TwinTrajectory) -> dict:
    return {"x0": _floats(traj.x0), "actions": [int(a) for a in traj.actions], "states": [_floats(x) for x in traj.states]}


def _dump(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


def write_observational(data: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for traj in data:
            fh.write(_dump(observed_record(traj)) + "\n")


def write_twin(twins: Iterable[TwinDataset], path, append: bool = False) -> None:
    if isinstance(twins, TwinDataset):
        twins = [twins]
    with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
        for ds in twins:
            for traj in ds:
                fh.write(_dump(twin_record(traj)) + "\n")


def split_holdout(data: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into a held-out part and the remainder.

    The held-out part has ``round(fraction * N)`` records (halves rounded up),
    drawn uniformly without replacement. Both parts keep the input order.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(data)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    k = int(math.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.zeros(n, dtype=bool)
    chosen[rng.choice(n, size=k, replace=False)] = True
    meta = {**data.provenance, "split_seed": seed, "split_fraction": fraction}
    held = data.subset(np.flatnonzero(chosen), provenance={**meta, "part": "holdout"})
    rest = data.subset(np.flatnonzero(~chosen), provenance={**meta, "part": "rest"})
    return held, rest


def sample_x0(data: Dataset, n: int, seed: int) -> np.ndarray:
    """``n`` initial states drawn from ``data`` without replacement, so each is used at most once."""
    if n > len(data):
        raise ValueError(f"requested {n} distinct x0 from a pool of {len(data)}")
    idx = np.random.default_rng(seed).choice(len(data), size=n, replace=False)
    return data.x0[idx]
