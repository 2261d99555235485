"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or ``python tests/test_acceptance.py``.
"""
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from oracles import enumerate_hypotheses, grid_p_value, hypothesis_key  # noqa: E402
from twinfalsify import cli  # noqa: E402
from twinfalsify._rng import stream_key  # noqa: E402
from twinfalsify.bounds import ATTAIN_LO, ATTAIN_UP, BoundEstimate, estimate_bounds, sharpness_transform  # noqa: E402
from twinfalsify.intervals import Backend, IntervalRequest, Side, bootstrap_endpoint, hoeffding_delta  # noqa: E402
from twinfalsify.regions import (WHOLE_SPACE, BinSpec, BoxRegion, Constraint, GeneratorConfig, Hypothesis,  # noqa: E402
                                 OutcomeSpec, generate_hypotheses)
from twinfalsify.synth import (SynthConfig, TwinMode, generate_observational, generate_twin,  # noqa: E402
                               generate_twin_from_data, interventional_oracle)
from twinfalsify.testing import ALPHA_GRID, hoeffding_p_value, run_family  # noqa: E402
from twinfalsify.trajectory import Dataset, SchemaSpec, sample_x0, split_holdout  # noqa: E402
from twinfalsify.twinproto import run_external_twin  # noqa: E402

LINES: list[str] = []


def record(k: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {k:>2}. {title}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


# --- random instances ---------------------------------------------------------


def random_instance(rng, outcome_free_at_t=False):
    T = int(rng.integers(1, 5))
    k = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    n = int(rng.integers(1, 250))
    scale = float(10 ** rng.uniform(-3, 3))
    schema = SchemaSpec(T=T, dims=(d,) * (T + 1), action_cardinalities=(k,) * T)
    # skew the behaviour policy so full matches are neither rare nor universal
    target = rng.integers(0, k, size=T)
    follow = rng.random((n, T)) < rng.uniform(0.2, 0.95)
    actions = np.where(follow, target, rng.integers(0, k, size=(n, T)))
    data = Dataset(schema, scale * rng.normal(size=(n, d)), actions, [scale * rng.normal(size=(n, d)) for _ in range(T)])
    t = int(rng.integers(1, T + 1))
    feature = int(rng.integers(0, d))
    regions = []
    for s in range(t + 1):
        cons = []
        for f in range(d):
            if s == t and outcome_free_at_t and f == feature:
                continue
            if rng.random() < 0.35:
                lo = float(scale * rng.normal(-0.7, 0.4))
                cons.append(Constraint(f, lo, lo + float(scale * rng.uniform(0.8, 4)), True, bool(rng.random() < 0.5)))
        regions.append(BoxRegion(tuple(cons)))
    y_lo = float(scale * rng.normal())
    out = OutcomeSpec(t, feature, y_lo, y_lo + float(scale * rng.uniform(0.05, 3)))
    return data, Hypothesis(t, out, tuple(int(a) for a in target[:t]), tuple(regions))


def fill_points(hyp, d):
    pts = []
    for s in range(1, hyp.t + 1):
        x = np.zeros(d)
        for c in hyp.regions[s].constraints:
            x[c.feature] = c.lower
        pts.append(x)
    return pts


# --- criteria -------------------------------------------------------------------


def test_01_width_identity():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for _ in range(1000):
        data, hyp = random_instance(rng)
        est = estimate_bounds(data, None, hyp)
        if est.n:
            checked += 1
            worst = max(worst, abs(est.width - (est.y_up - est.y_lo) * (1 - est.n_match / est.n)))
    elapsed = time.perf_counter() - start
    record(1, "width identity", worst <= 1e-12 and elapsed < 10 and checked > 500,
           f"max error {worst:.2e} over {checked} pairs with n>0 (<=1e-12), {elapsed:.2f}s (<10s)")


def test_02_sharpness_oracle():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    failures, nonempty = 0, 0
    for _ in range(200):
        data, hyp = random_instance(rng, outcome_free_at_t=True)
        est = estimate_bounds(data, None, hyp)
        fill = fill_points(hyp, data.schema.dims[1])
        lo = estimate_bounds(sharpness_transform(data, hyp, fill, ATTAIN_LO), None, hyp)
        up = estimate_bounds(sharpness_transform(data, hyp, fill, ATTAIN_UP), None, hyp)
        if est.n:
            nonempty += 1
            ok = lo.mu_lo == lo.mu_up == est.mu_lo and up.mu_lo == up.mu_up == est.mu_up
        else:
            ok = lo.n == up.n == 0
        failures += not ok
    elapsed = time.perf_counter() - start
    record(2, "sharpness oracle", failures == 0 and elapsed < 5,
           f"{failures} of 200 cases not bitwise equal ({nonempty} nonempty), {elapsed:.2f}s (<5s)")


def test_03_micro_dataset():
    schema = SchemaSpec(T=2, dims=(1, 1, 1), action_cardinalities=(3, 3))
    data = Dataset(schema, np.zeros((3, 1)), np.array([[1, 1], [1, 2], [2, 1]]),
                   [np.zeros((3, 1)), np.array([[0.5], [0.9], [0.4]])])
    hyp = Hypothesis(2, OutcomeSpec(2, 0, 0.0, 1.0), (1, 1), (WHOLE_SPACE,) * 3)
    e = estimate_bounds(data, None, hyp)
    # hand enumeration: Y_lo = (0.5, 0, 0), Y_up = (0.5, 1, 1)
    got = (e.n, e.n_match, e.mu_lo, e.mu_up)
    record(3, "micro-dataset regression", got == (3, 1, 1 / 6, 5 / 6), f"(n, n_match, mu_lo, mu_up) = {got}")


def test_04_closed_form_vs_grid():
    rng = np.random.default_rng(404)
    start = time.perf_counter()
    worst = 0
    for _ in range(1000):
        n, n_hat = (int(v) for v in rng.integers(1, 20000, size=2))
        width = float(rng.uniform(0.01, 10))
        mu_lo = float(rng.uniform(0, width))
        mu_hat = mu_lo - float(rng.uniform(-0.1, 0.6)) * width
        est = BoundEstimate(n, n, mu_lo, mu_lo, n_hat, mu_hat, 0.0, width)
        p = hoeffding_p_value(est, "lo")
        grid = grid_p_value(mu_lo, mu_hat, n, n_hat, width, ALPHA_GRID)
        steps = 0 if p == grid == 1.0 else abs(int(np.searchsorted(ALPHA_GRID, p)) - int(np.searchsorted(ALPHA_GRID, grid)))
        worst = max(worst, steps)
    elapsed = time.perf_counter() - start
    record(4, "closed-form vs grid p-value", worst <= 1 and elapsed < 30,
           f"max disagreement {worst} grid step(s) over 1000 configurations, {elapsed:.2f}s (<30s)")


# Monte Carlo family for criteria 5-7: confounded process, group-stratified regions
MC_CFG = SynthConfig(policy_bias=1.0)
MC_N = 5000
MC_REPS = 300


def mc_family():
    pilot = generate_observational(MC_CFG, 500, stream_key(0, "pilot") >> 11)
    config = GeneratorConfig(bins=(BinSpec(1, "categorical", levels=(0, 1)),), min_support=20)
    return generate_hypotheses(pilot, config).hypotheses


def mc_replicate(family, rep, mode=TwinMode()):
    seed = stream_key(rep, "mc-replicate") >> 11
    data = generate_observational(MC_CFG, MC_N, seed)
    twins = {a: generate_twin_from_data(MC_CFG, mode, data, a, MC_N, seed) for a in sorted({h.actions for h in family})}
    return data, twins


def test_05_type_one_control():
    family = mc_family()
    start = time.perf_counter()
    per_hyp = np.zeros(len(family))
    any_holm = 0
    for rep in range(MC_REPS):
        data, twins = mc_replicate(family, rep)
        fam = run_family(data, twins, family, Backend.HOEFFDING, 0.05, "holm")
        per_hyp += [r.reject_at(0.05) for r in fam.results]
        any_holm += fam.n_rejected > 0
    elapsed = time.perf_counter() - start
    freq = per_hyp.max() / MC_REPS
    fwer = any_holm / MC_REPS
    bound = 0.05 + 2 * math.sqrt(0.05 * 0.95 / MC_REPS)
    record(5, "type-I control", freq <= 0.05 and fwer <= bound and elapsed < 600,
           f"max per-hypothesis rejection rate {freq:.3f} (<=0.05), Holm any-rejection {fwer:.3f} (<={bound:.3f}), "
           f"{len(family)} hypotheses x {MC_REPS} replicates, {elapsed:.1f}s")


def test_06_power():
    family = mc_family()
    start = time.perf_counter()
    pilot_data, pilot_twins = mc_replicate(family, -1)
    pilot = run_family(pilot_data, pilot_twins, family)
    delta = max(r.estimate.width + 4 * float(hoeffding_delta(r.estimate.n, r.estimate.y_up - r.estimate.y_lo, 0.05))
                for r in pilot.results if r.estimate.n)
    hits = 0
    for rep in range(MC_REPS):
        data, twins = mc_replicate(family, 10_000 + rep, TwinMode("shift", delta))
        fam = run_family(data, twins, family, Backend.HOEFFDING, 0.05, "holm")
        hits += any(r.direction == "up" for r in fam.rejected())
    elapsed = time.perf_counter() - start
    rate = hits / MC_REPS
    record(6, "power against a shifted twin", rate >= 0.95 and elapsed < 600,
           f"falsified with an Up rejection in {rate:.3f} of {MC_REPS} replicates (>=0.95) at delta={delta:.3f}, "
           f"{elapsed:.1f}s")


def test_07_bound_validity():
    family = [h for h in mc_family() if h.direction == "lo"]
    start = time.perf_counter()
    oracle = [interventional_oracle(MC_CFG, h.actions, h.regions, h.outcome, 400_000, 7).mean for h in family]
    covered = np.zeros(len(family))
    for rep in range(MC_REPS):
        data = generate_observational(MC_CFG, MC_N, stream_key(rep, "validity") >> 11)
        for j, h in enumerate(family):
            e = estimate_bounds(data, None, h)
            d = float(hoeffding_delta(e.n, e.y_up - e.y_lo, 0.02))
            covered[j] += e.mu_lo - d <= oracle[j] <= e.mu_up + d
    elapsed = time.perf_counter() - start
    worst = covered.min() / MC_REPS
    record(7, "bound validity", worst >= 0.99 and elapsed < 600,
           f"oracle mean inside [mu_lo - D, mu_up + D] in >= {worst:.3f} of {MC_REPS} replicates for each of "
           f"{len(family)} tuples (>=0.99), {elapsed:.1f}s")


def test_08_bootstrap_coverage():
    rng = np.random.default_rng(808)
    hits = 0
    for rep in range(1000):
        req = IntervalRequest(rng.random(2000), 0.0, 1.0, 0.05, Side.LOWER_FOR_BOUND, Backend.BOOT_REVERSE_PERCENTILE,
                              resamples=100, seed=rep, stream="coverage")
        hits += 0.5 >= bootstrap_endpoint(req).endpoint
    cov = hits / 1000
    record(8, "bootstrap coverage", abs(cov - 0.975) <= 0.03, f"one-sided coverage {cov:.3f} (0.975 +/- 0.03)")


def test_09_generator_equivalence():
    data = generate_observational(SynthConfig(), 10_000, 9)
    holdout, _ = split_holdout(data, 0.05, 9)
    config = cli.stratified_generator_config()
    got = {hypothesis_key(h) for h in generate_hypotheses(holdout, config).hypotheses}
    plan = [(b.feature, b.kind, b.levels, b.quantiles) for b in config.bins]
    xs = [holdout.state(s) for s in range(holdout.schema.T + 1)]
    expected = enumerate_hypotheses(xs, holdout.actions, holdout.schema.action_cardinalities, plan,
                                    config.outcome_features, config.quantile_lo, config.quantile_up, config.min_support)
    record(9, "generator equivalence", got == expected and len(holdout) == 500,
           f"{len(got)} generated vs {len(expected)} enumerated on a {len(holdout)}-trajectory holdout, "
           f"symmetric difference {len(got ^ expected)}")


def test_10_protocol_equivalence():
    cfg = SynthConfig()
    pool = generate_observational(cfg, 1000, 10)
    cmd = [sys.executable, "-m", "twinfalsify.twinproto"]
    external = run_external_twin(cmd, cfg.schema(), pool, (2, 1), 200, master_seed=1010)
    internal = generate_twin(cfg, TwinMode(), sample_x0(pool, 200, 1010), (2, 1), 1010)
    same = (external.x0.tobytes() == internal.x0.tobytes()
            and all(a.tobytes() == b.tobytes() for a, b in zip(external.states, internal.states)))
    record(10, "protocol equivalence", same and len(external) == 200,
           f"external and in-process twins byte-identical for n={len(external)}: {same}")


def test_11_determinism(tmp_path):
    os.environ["SOURCE_DATE_EPOCH"] = "1700000000"
    root = tmp_path
    syn, gen = root / "synth", root / "gen"
    assert cli.main(["synth", "--out-dir", str(syn), "--n-obs", "4000", "--n-twin", "1000", "--seed", "11"]) == 0
    assert cli.main(["gen-hypotheses", "--schema", str(syn / "schema.json"), "--obs", str(syn / "obs.jsonl"),
                     "--holdout-fraction", "0.1", "--seed", "11", "--out-dir", str(gen)]) == 0
    inputs = ["--schema", str(syn / "schema.json"), "--obs", str(gen / "obs_test.jsonl"),
              "--twin", str(syn / "twin.jsonl"), "--hypotheses", str(gen / "hypotheses.json"), "--seed", "11"]
    twin_cmd = f"{sys.executable} -m twinfalsify.twinproto"
    commands = {
        "synth": ["synth", "--n-obs", "4000", "--n-twin", "1000", "--seed", "11"],
        "gen-hypotheses": ["gen-hypotheses", "--schema", str(syn / "schema.json"), "--obs", str(syn / "obs.jsonl"),
                           "--holdout-fraction", "0.1", "--seed", "11"],
        "test (hoeffding, holm)": ["test", *inputs],
        "test (boot-revperc, by, 4 workers)": ["test", *inputs, "--backend", "boot-revperc", "--multiplicity", "by",
                                               "--workers", "4"],
        "test (boot-perc)": ["test", *inputs, "--backend", "boot-perc"],
        "test (twin-cmd)": ["test", *inputs[:4], *inputs[6:], "--twin-cmd", twin_cmd, "--n-twin", "300"],
        "sensitivity": ["sensitivity", *inputs, "--deltas=-0.5,0,0.5"],
        "report": ["report", "--results", str(root / "run" / "test (hoeffding, holm)" / "results.csv")],
        "demo": ["demo", "--n-obs", "4000", "--n-twin", "1000", "--seed", "11"],
    }
    differing = []
    for name, argv in commands.items():
        out = root / "run" / name
        snaps = []
        for _ in range(2):
            assert cli.main([*argv, "--out-dir", str(out)]) == 0
            snaps.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
        if snaps[0] != snaps[1] or not snaps[0]:
            differing.append(name)
    record(11, "CLI determinism", not differing,
           f"{len(commands) - len(differing)} of {len(commands)} commands byte-identical on rerun"
           + (f"; differing: {differing}" if differing else ""))


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
