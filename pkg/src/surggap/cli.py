"""Command-line entry point: ``surggap {gap,eval,gains,selftest}``.

Exit codes: 0 success, 1 selftest failure, 2 configuration error, 3 data
error, 4 solver failure. Option values come from command-line flags, then
an optional JSON ``--config`` file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable

from . import fewshot
from .errors import CellMismatch, ConfigError, DataError, SurgGapError
from .features import load_manifest
from .ot import domain_gap

log = logging.getLogger("surggap")

PROTOCOL_SHOTS = (1, 2, 5)

DEFAULTS: dict[str, dict[str, Any]] = {
    "gap": {
        "a": None,
        "b": None,
        "solver": "exact",
        "epsilon": None,
        "max_points": 2000,
        "seed": 0,
        "out": None,
    },
    "eval": {
        "manifest": None,
        "head": ["linear", "tcn"],
        "shots": list(PROTOCOL_SHOTS),
        "episodes": 100,
        "seed": 0,
        "epochs": 30,
        "lr": 1e-3,
        "weight_decay": 0.01,
        "decay_bias": False,
        "channels": 64,
        "init": "uniform",
        "workers": 1,
        "allow_any_shots": False,
        "allow_extrapolation": False,
        "out": None,
    },
    "gains": {
        "combined": None,
        "baseline": [],
        "out": None,
    },
    "selftest": {},
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _head_list(text: str) -> list[str]:
    heads = [t.strip() for t in text.split(",") if t.strip()]
    bad = [h for h in heads if h not in fewshot.HEAD_KINDS]
    if bad or not heads:
        raise argparse.ArgumentTypeError(f"heads must be among {fewshot.HEAD_KINDS}, got {text!r}")
    return heads


def _named_dir(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep:
        path = name
        name = Path(name.rstrip("/")).name
    return name, path


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    p = argparse.ArgumentParser(prog="surggap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gap", help="domain gap (EMD) between two feature sets", argument_default=S)
    g.add_argument("--config", help="JSON file of option values")
    g.add_argument("--a", help="manifest of the first dataset")
    g.add_argument("--b", help="manifest of the second dataset")
    g.add_argument("--solver", choices=("exact", "sinkhorn"))
    g.add_argument("--epsilon", type=float, help="Sinkhorn regularisation (default 1e-3 * mean cost)")
    g.add_argument("--max-points", dest="max_points", type=int, help="subsample cap per dataset (default 2000)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="write the GapResult JSON here (default: stdout)")

    e = sub.add_parser("eval", help="episodic few-shot evaluation", argument_default=S)
    e.add_argument("--config", help="JSON file of option values")
    e.add_argument("--manifest", help="manifest with GRS labels")
    e.add_argument("--head", type=_head_list, help="comma-separated heads: linear,tcn")
    e.add_argument("--shots", type=_int_list, help="comma-separated shot counts (default 1,2,5)")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int, help="master seed for episode sampling and training")
    e.add_argument("--epochs", type=int)
    e.add_argument("--lr", type=float)
    e.add_argument("--weight-decay", dest="weight_decay", type=float)
    e.add_argument("--decay-bias", dest="decay_bias", action="store_true", help="apply weight decay to biases too")
    e.add_argument("--channels", type=int, help="TCN channels")
    e.add_argument("--init", choices=("uniform", "zeros"))
    e.add_argument("--workers", type=int, help="episode worker processes")
    e.add_argument("--allow-any-shots", dest="allow_any_shots", action="store_true")
    e.add_argument("--allow-extrapolation", dest="allow_extrapolation", action="store_true",
                   help="clamp GRS outside 19-30 to the nearest class")
    e.add_argument("--out", help="directory for the per-cell report files")

    n = sub.add_parser("gains", help="average gain of a combined report set over baselines", argument_default=S)
    n.add_argument("--config", help="JSON file of option values")
    n.add_argument("--combined", type=_named_dir, help="[NAME=]DIR of the combined-pretraining reports")
    n.add_argument("--baseline", type=_named_dir, action="append", help="[NAME=]DIR; repeat per baseline")
    n.add_argument("--out", help="CSV output path (default: stdout)")

    sub.add_parser("selftest", help="gradient checks and transport oracles")
    return p


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the optional config file and explicit flags."""
    opts = dict(DEFAULTS[command])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            with open(cfg_path) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError(f"config {cfg_path} must hold a JSON object")
        unknown = sorted(set(from_file) - set(opts))
        if unknown:
            raise ConfigError(f"unknown config keys for '{command}': {', '.join(unknown)}")
        if command == "gains":
            if "combined" in from_file:
                from_file["combined"] = _named_dir(from_file["combined"])
            if "baseline" in from_file:
                from_file["baseline"] = [_named_dir(b) for b in from_file["baseline"]]
        for key, value in from_file.items():
            _check_type(command, key, value)
        opts.update(from_file)
    opts.update(given)
    return opts


_TYPES = {"epsilon": (float, int, type(None)), "lr": (float, int), "weight_decay": (float, int)}


def _check_type(command: str, key: str, value: Any) -> None:
    default = DEFAULTS[command][key]
    if key in _TYPES:
        expected = _TYPES[key]
    elif isinstance(default, bool):
        expected = bool
    elif isinstance(default, int):
        expected = int
    else:
        return
    if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
        raise ConfigError(f"config key {key!r} has invalid value {value!r}")


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if not opts.get(k)]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_gap(opts: dict) -> int:
    _require(opts, "a", "b")
    if opts["max_points"] < 1:
        raise ConfigError(f"--max-points must be >= 1, got {opts['max_points']}")
    if opts["epsilon"] is not None and not opts["epsilon"] > 0:
        raise ConfigError(f"--epsilon must be positive, got {opts['epsilon']}")
    a = load_manifest(opts["a"])
    b = load_manifest(opts["b"])
    log.info("gap %s (%d videos) vs %s (%d videos), solver=%s", a.name, len(a), b.name, len(b), opts["solver"])
    res = domain_gap(a, b, max_points=opts["max_points"], seed=opts["seed"], solver=opts["solver"],
                     epsilon=opts["epsilon"])
    _emit(_dump_json(res.to_dict()), opts["out"])
    return 0


def report_filename(head: str, k: int) -> str:
    return f"{head}_k{k}.json"


def cmd_eval(opts: dict) -> int:
    _require(opts, "manifest", "out")
    shots = list(opts["shots"])
    if not shots or any(k < 1 for k in shots):
        raise ConfigError(f"shot counts must be positive, got {shots}")
    if not opts["allow_any_shots"] and any(k not in PROTOCOL_SHOTS for k in shots):
        raise ConfigError(f"shots {shots} outside {list(PROTOCOL_SHOTS)}; pass --allow-any-shots to run them")
    if opts["episodes"] < 1 or opts["workers"] < 1:
        raise ConfigError("--episodes and --workers must be >= 1")
    heads = opts["head"]
    if isinstance(heads, str):
        heads = _head_list(heads)
    cfg = fewshot.TrainConfig(
        epochs=opts["epochs"],
        lr=opts["lr"],
        weight_decay=opts["weight_decay"],
        decay_bias=opts["decay_bias"],
        channels=opts["channels"],
        init=opts["init"],
    )
    fs = load_manifest(opts["manifest"])
    items = fewshot.label_items(fs, allow_extrapolation=opts["allow_extrapolation"])
    # fail on infeasible shot counts before spending time on any cell
    for k in shots:
        fewshot.sample_episodes(items, k, 1, opts["seed"])
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    for head in heads:
        for k in shots:
            log.info("eval %s head=%s k=%d episodes=%d", fs.name, head, k, opts["episodes"])
            report = fewshot.run_eval(items, head, k, opts["episodes"], opts["seed"], cfg,
                                      workers=opts["workers"], dataset=fs.name)
            with open(out / report_filename(head, k), "w") as fh:
                fh.write(_dump_json(report.to_dict()))
            print(f"{head} {k}-shot: {report.summary()}")
    return 0


def load_report_set(directory: str | Path) -> dict[tuple[str, int], fewshot.EvalReport]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"report directory not found: {directory}")
    cells: dict[tuple[str, int], fewshot.EvalReport] = {}
    for path in sorted(directory.glob("*.json")):
        try:
            with open(path) as fh:
                report = fewshot.EvalReport.from_dict(json.load(fh))
            key = (str(report.config["head"]), int(report.config["k"]))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: not an EvalReport ({exc})") from exc
        if key in cells:
            raise CellMismatch(f"{directory}: more than one report for head={key[0]} k={key[1]}")
        cells[key] = report
    if not cells:
        raise DataError(f"no reports in {directory}")
    return cells


def gains_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["comparison", "avg_accuracy_gain", "avg_f1_gain"])
    for r in rows:
        writer.writerow([r.comparison, f"{r.avg_accuracy_gain:+.2f}", f"{r.avg_f1_gain:+.2f}"])
    return buf.getvalue()


def cmd_gains(opts: dict) -> int:
    _require(opts, "combined", "baseline")
    name, path = opts["combined"]
    combined = load_report_set(path)
    baselines = {bname: load_report_set(bpath) for bname, bpath in opts["baseline"]}
    rows = fewshot.compute_gains(combined, baselines, combined_name=name)
    _emit(gains_csv(rows), opts["out"])
    if opts["out"]:
        print(fewshot.format_gain_table(rows))
    return 0


def cmd_selftest(opts: dict) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(print) else 1


COMMANDS: dict[str, Callable[[dict], int]] = {
    "gap": cmd_gap,
    "eval": cmd_eval,
    "gains": cmd_gains,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        opts = resolve(args.command, args)
        return COMMANDS[args.command](opts)
    except SurgGapError as exc:
        print(f"surggap {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"surggap {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
