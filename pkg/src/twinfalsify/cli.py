"""Command-line front end: synth, gen-hypotheses, test, sensitivity, report, demo.

Exit codes: 0 success, 2 validation error, 3 twin protocol error, 4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bounds import write_estimates
from .intervals import Backend
from .regions import BinSpec, GeneratorConfig, OUTCOME, generate_hypotheses, load_hypotheses, save_hypotheses, write_skip_log
from .synth import SynthConfig, TwinMode, generate_observational, generate_twin_from_data, load_config, twin_seed
from .testing import (SensitivityResult, rejection_diagnostics, run_family, sensitivity_sweep, summarize,
                      write_results, write_summary)
from .trajectory import (ValidationError, load_observational, load_schema, load_twin_pool, split_holdout,
                         write_observational, write_schema, write_twin)
from .twinproto import TwinProtocolError, run_external_twin

log = logging.getLogger("twinfalsify")

EXIT_OK, EXIT_VALIDATION, EXIT_PROTOCOL, EXIT_INTERNAL = 0, 2, 3, 4


def demo_generator_config() -> GeneratorConfig:
    """Group x marker-median bins (4 cells per timestep)."""
    return GeneratorConfig(
        bins=(BinSpec(1, "categorical", levels=(0.0, 1.0)), BinSpec(OUTCOME, "quantile", quantiles=(0.5,))),
        outcome_features=(0,),
        min_support=20,
    )


def stratified_generator_config() -> GeneratorConfig:
    """2 group levels x 4 age quartiles x 2 outcome-median bins = 16 cells per timestep."""
    return GeneratorConfig(
        bins=(
            BinSpec(1, "categorical", levels=(0.0, 1.0)),
            BinSpec(2, "quantile", quantiles=(0.25, 0.5, 0.75)),
            BinSpec(OUTCOME, "quantile", quantiles=(0.5,)),
        ),
        outcome_features=(0,),
        min_support=1,
    )


# --- manifest -------------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for byte-reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return when.replace(microsecond=0).isoformat()


def write_manifest(out_dir: Path, command: str, args: dict, inputs: dict, outputs: list[str]) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "timestamp": _timestamp(),
        "arguments": {k: v for k, v in sorted(args.items()) if k != "func"},
        "inputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(inputs.items()) if p},
        "outputs": {name: sha256_file(out_dir / name) for name in outputs},
    }
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jsonable(ns: argparse.Namespace) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(ns).items() if k != "func"}


# --- commands -------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else SynthConfig()
    seed = cfg.seed if args.seed is None else args.seed
    out = _out_dir(args.out_dir)
    n_twin = min(5000, args.n_obs) if args.n_twin is None else args.n_twin
    if not args.no_twin and n_twin > args.n_obs:
        raise ValidationError(f"--n-twin ({n_twin}) exceeds --n-obs ({args.n_obs}); x0 are drawn without replacement")
    data = generate_observational(cfg, args.n_obs, seed)
    schema = cfg.schema()
    write_schema(schema, out / "schema.json")
    with open(out / "synth_config.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({**cfg.to_dict(), "seed": seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_observational(data, out / "obs.jsonl")
    outputs = ["schema.json", "synth_config.json", "obs.jsonl"]
    if not args.no_twin:
        mode = TwinMode.parse(args.twin_mode)
        horizon = args.twin_horizon or cfg.horizon
        twins = [generate_twin_from_data(cfg, mode, data, acts, n_twin, seed)
                 for acts in _all_sequences(schema.action_cardinalities, horizon)]
        write_twin(twins, out / "twin.jsonl")
        outputs.append("twin.jsonl")
    write_manifest(out, "synth", _jsonable(args), {"config": args.config}, outputs)
    print(f"wrote {len(data)} observational trajectories to {out}")
    return EXIT_OK


def _all_sequences(cards, horizon: int):
    import itertools

    for t in range(1, horizon + 1):
        yield from itertools.product(*[range(k) for k in cards[:t]])


def cmd_gen_hypotheses(args) -> int:
    schema = load_schema(args.schema)
    data = load_observational(args.obs, schema)
    out = _out_dir(args.out_dir)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = GeneratorConfig.from_dict(json.load(fh))
    else:
        config = demo_generator_config()
    outputs = []
    holdout = data
    if args.holdout_fraction:
        holdout, rest = split_holdout(data, args.holdout_fraction, args.seed)
        write_observational(holdout, out / "holdout.jsonl")
        write_observational(rest, out / "obs_test.jsonl")
        outputs += ["holdout.jsonl", "obs_test.jsonl"]
    if len(holdout) == 0:
        raise ValidationError("holdout is empty")
    gen = generate_hypotheses(holdout, config)
    save_hypotheses(gen.hypotheses, out / "hypotheses.json")
    write_skip_log(gen.skipped, out / "skip_log.csv")
    with open(out / "generator.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"config": config.to_dict(), "regions": gen.cuts}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    outputs += ["hypotheses.json", "skip_log.csv", "generator.json"]
    write_manifest(out, "gen-hypotheses", _jsonable(args),
                   {"schema": args.schema, "obs": args.obs, "config": args.config}, outputs)
    print(f"generated {len(gen.hypotheses)} hypotheses ({len(gen.skipped)} tuples skipped)")
    return EXIT_OK


def _load_inputs(args):
    schema = load_schema(args.schema)
    data = load_observational(args.obs, schema)
    hyps = load_hypotheses(args.hypotheses, schema)
    if args.twin and args.twin_cmd:
        raise ValidationError("give either --twin or --twin-cmd, not both")
    if args.twin:
        twins = load_twin_pool(args.twin, schema)
    elif args.twin_cmd:
        n_twin = args.n_twin if args.n_twin is not None else min(len(data), 1000)
        twins = {}
        for acts in sorted({h.actions for h in hyps}):
            twins[acts] = run_external_twin(args.twin_cmd, schema, data, acts, n_twin, twin_seed(args.seed, acts),
                                            timeout=args.twin_timeout)
    else:
        twins = {}
    return schema, data, hyps, twins


def _feature_names(schema, hyps) -> dict:
    return {h.outcome.feature: schema.feature_name(h.t, h.outcome.feature) for h in hyps}


def cmd_test(args) -> int:
    schema, data, hyps, twins = _load_inputs(args)
    out = _out_dir(args.out_dir)
    backend = Backend(args.backend)
    fam = run_family(data, twins, hyps, backend, args.alpha, args.multiplicity, args.resamples, args.seed, args.workers)
    write_results(fam, out / "results.csv")
    write_estimates([(r.hypothesis_id, r.estimate) for r in fam.results], out / "estimates.csv")
    by_id = {h.id: h for h in hyps}
    with open(out / "diagnostics.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hypothesis_id", "direction", "case", "twin", "obs", "difference", "exceeds"])
        for r in fam.rejected():
            h = by_id[r.hypothesis_id]
            diag = rejection_diagnostics(data, twins.get(h.actions), h)
            for c in diag.cases:
                w.writerow([r.hypothesis_id, r.direction, c.name, _num(c.twin), _num(c.obs),
                            "insufficient data" if c.insufficient else repr(c.difference), int(c.exceeds)])
    summary = summarize(fam, _feature_names(schema, hyps), backend=backend.value, alpha=args.alpha,
                        manifest="manifest.json")
    write_summary(summary, out / "summary.json")
    write_manifest(out, "test", _jsonable(args),
                   {"schema": args.schema, "obs": args.obs, "twin": args.twin, "hypotheses": args.hypotheses},
                   ["results.csv", "estimates.csv", "diagnostics.csv", "summary.json"])
    print(f"{fam.n_rejected} of {len(fam.results)} hypotheses rejected ({fam.report.method}, level {args.alpha})")
    return EXIT_OK


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def cmd_sensitivity(args) -> int:
    schema, data, hyps, twins = _load_inputs(args)
    out = _out_dir(args.out_dir)
    deltas = [float(d) for d in args.deltas.split(",") if d.strip()]
    res = sensitivity_sweep(data, twins, hyps, deltas, Backend(args.backend), args.alpha, args.multiplicity,
                            args.resamples, args.seed, args.workers)
    write_sensitivity(res, out / "sensitivity.csv", _feature_names(schema, hyps))
    with open(out / "sensitivity_skipped.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hypothesis_id", "delta", "reason"])
        w.writerows([(hid, repr(d), why) for hid, d, why in res.skipped])
    write_manifest(out, "sensitivity", _jsonable(args),
                   {"schema": args.schema, "obs": args.obs, "twin": args.twin, "hypotheses": args.hypotheses},
                   ["sensitivity.csv", "sensitivity_skipped.csv"])
    for d in res.deltas:
        print(f"delta={d:g}: {res.total(d)} rejections")
    return EXIT_OK


def write_sensitivity(res: SensitivityResult, path, names: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "outcome_feature", "name", "rejections"])
        for d in res.deltas:
            for feat, count in sorted(res.counts[d].items()):
                w.writerow([repr(float(d)), feat, names.get(feat, f"x{feat}"), count])


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def neg_log10(p: float) -> float:
    return 0.0 if p >= 1.0 else -math.log10(p)


def cmd_report(args) -> int:
    rows = read_results(args.results)
    out = _out_dir(args.out_dir)
    reject_col = next((c for c in (rows[0].keys() if rows else []) if c.endswith("_reject")), None)
    table: dict[str, dict] = {}
    scores: dict[tuple[str, str], list[float]] = {}
    for r in rows:
        feat = r["outcome_feature"]
        row = table.setdefault(feat, {"outcome_feature": feat, "hypotheses": 0, "rejections": 0,
                                      "rejections_lo": 0, "rejections_up": 0})
        row["hypotheses"] += 1
        if reject_col and r[reject_col] == "1":
            row["rejections"] += 1
            row[f"rejections_{r['direction']}"] += 1
        scores.setdefault((feat, r["direction"]), []).append(neg_log10(float(r["p"])))
    ordered = sorted(table.values(), key=lambda d: (-d["rejections"], int(d["outcome_feature"])))
    with open(out / "report_table.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["outcome_feature", "hypotheses", "rejections", "rejections_lo", "rejections_up"])
        for row in ordered:
            w.writerow([row[k] for k in ("outcome_feature", "hypotheses", "rejections", "rejections_lo", "rejections_up")])
    dist = []
    for (feat, direction), vals in sorted(scores.items()):
        v = np.asarray(vals)
        dist.append({
            "outcome_feature": int(feat), "direction": direction, "count": int(v.size),
            "neg_log10_p": [float(x) for x in vals],
            "min": float(v.min()), "median": float(np.median(v)), "max": float(v.max()),
        })
    with open(out / "pvalue_summary.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"results": str(args.results), "per_outcome_direction": dist}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("outcome_feature  hypotheses  rejections (lo/up)")
    for row in ordered:
        print(f"{row['outcome_feature']:>15}  {row['hypotheses']:>10}  {row['rejections']:>10} "
              f"({row['rejections_lo']}/{row['rejections_up']})")
    return EXIT_OK


def cmd_demo(args) -> int:
    out = _out_dir(args.out_dir)
    synth_dir, gen_dir, test_dir = out / "synth", out / "hypotheses", out / "test"
    common = ["--seed", str(args.seed)]
    steps = [
        ["synth", "--out-dir", str(synth_dir), "--n-obs", str(args.n_obs), "--n-twin", str(args.n_twin),
         "--twin-mode", args.twin_mode, *common] + (["--config", args.config] if args.config else []),
        ["gen-hypotheses", "--schema", str(synth_dir / "schema.json"), "--obs", str(synth_dir / "obs.jsonl"),
         "--holdout-fraction", str(args.holdout_fraction), "--out-dir", str(gen_dir), *common],
        ["test", "--schema", str(synth_dir / "schema.json"), "--obs", str(gen_dir / "obs_test.jsonl"),
         "--twin", str(synth_dir / "twin.jsonl"), "--hypotheses", str(gen_dir / "hypotheses.json"),
         "--backend", args.backend, "--alpha", str(args.alpha), "--out-dir", str(test_dir), *common],
        ["report", "--results", str(test_dir / "results.csv"), "--out-dir", str(test_dir)],
    ]
    for argv in steps:
        code = main(argv)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# --- parser ---------------------------------------------------------------------


def _add_test_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", required=True)
    p.add_argument("--obs", required=True, help="observational JSONL used for testing")
    p.add_argument("--twin", help="twin JSONL (runs for one or more action sequences)")
    p.add_argument("--twin-cmd", help="command starting an external twin that speaks twinproto/1")
    p.add_argument("--n-twin", type=int, help="runs per action sequence with --twin-cmd (default min(n_obs, 1000))")
    p.add_argument("--twin-timeout", type=float, default=30.0, help="seconds to wait for each twin response")
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.HOEFFDING.value)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--multiplicity", choices=["holm", "by"], default="holm")
    p.add_argument("--resamples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinfalsify", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic observational and twin data")
    p.add_argument("--config", help="synthetic process config (JSON)")
    p.add_argument("--n-obs", type=int, default=10000)
    p.add_argument("--n-twin", type=int, help="twin runs per action sequence (default min(5000, n_obs))")
    p.add_argument("--twin-mode", default="correct", help="correct | shift:<delta> | inflate:<kappa>")
    p.add_argument("--twin-horizon", type=int, help="longest action sequence to simulate (default T)")
    p.add_argument("--no-twin", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-hypotheses", help="generate hypotheses from held-out data")
    p.add_argument("--schema", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--config", help="generator config (JSON)")
    p.add_argument("--holdout-fraction", type=float, help="split off this fraction as holdout first")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_gen_hypotheses)

    p = sub.add_parser("test", help="test hypotheses against twin data")
    _add_test_inputs(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("sensitivity", help="rerun tests with rescaled clip intervals")
    _add_test_inputs(p)
    p.add_argument("--deltas", default="-0.5,-0.25,0,0.25,0.5,1,2")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("report", help="summarize a results CSV")
    p.add_argument("--results", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="synth -> gen-hypotheses -> test -> report")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="synthetic process config (JSON)")
    p.add_argument("--n-obs", type=int, default=10000)
    p.add_argument("--n-twin", type=int, default=5000)
    p.add_argument("--twin-mode", default="correct")
    p.add_argument("--holdout-fraction", type=float, default=0.05)
    p.add_argument("--backend", choices=[b.value for b in Backend], default=Backend.HOEFFDING.value)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TwinProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (ValidationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
