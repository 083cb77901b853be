"""Command-line verification runs.

Every command resolves its settings from built-in defaults, an optional
JSON/YAML config file and the command-line flags (flags win), runs its
checks and writes one JSON report.  Reports contain no timestamps, so a rerun
with the same settings is byte-identical.  The exit status is 0 iff every
check passed, 1 if some check failed and 2 on a usage or numerical error.

Examples::

    parity-transformer verify-parity --samples 1000 --seed 0 --out verify.json
    parity-transformer calibrate --n-max 512 --out calibration.json
    parity-transformer verify-parity --calibration calibration.json
    parity-transformer lemmas --order 2 --exponents 5 7.5 10
    parity-transformer sensitivity --samples 200 --seed 1 --format table
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import check_faulhaber, check_gamma_grid, check_W_grid, geometric_grid
from .backend import PrecisionConfig
from .construction.builders import build_full_model, build_majority_model, build_restricted_model
from .construction.calibration import DEFAULT_ALPHAS, DEFAULT_CS, DEFAULT_PARAMS, calibrate, sigma_bound
from .construction.formulas import scan_length
from .construction.params import ConstructionParams, smallest_even_above
from .engine import evaluate_bits
from .errors import CalibrationError, ParityTransformerError, PrecisionError
from .sensitivity import (
    BooleanFunction,
    Hyperplane,
    average_sensitivity,
    cut_edges,
    majority_average_sensitivity,
    max_cut_ratio,
    sensitivity_sweep,
)

CUT_RATIO_CEILING = 0.5
MAJORITY_RATIO_RANGE = (0.6, 1.0)
EXHAUSTIVE_CAP = 14

DEFAULTS = {
    "verify-parity": {
        "alpha": None, "c": None, "M": None, "n_min": None, "calibration": None,
        "n_max": 512, "lengths": [64, 128, 256, 512], "samples": 1000, "seed": 0,
        "precision": "auto", "model": "full",
    },
    "calibrate": {"alphas": list(DEFAULT_ALPHAS), "cs": list(DEFAULT_CS), "n_max": 512, "precision": "double"},
    "lemmas": {
        "exponents": [5.0, 7.5, 10.0], "order": None, "n_min": 16, "n_max": 4096,
        "alpha": None, "precision": "ext:128",
    },
    "sensitivity": {
        "n_max": 12, "samples": 200, "seed": 0, "d": 4, "sweep_lengths": [6, 7, 8, 9, 10, 11, 12],
        "cut_trials": 1000, "cut_lengths": list(range(8, 17)),
    },
    "build": {"model": "full", "alpha": None, "c": None, "M": None, "n_min": None, "calibration": None,
              "precision": "double", "masking": "causal"},
}
DEFAULTS["gap-scan"] = DEFAULTS["calibrate"]


# -- settings -----------------------------------------------------------------

def load_config(path) -> dict:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ParityTransformerError(f"config {path} must hold a mapping")
    return {key.replace("-", "_"): value for key, value in data.items()}


def resolve_settings(command: str, args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS[command])
    if args.config:
        file_cfg = load_config(args.config)
        unknown = set(file_cfg) - set(settings)
        if unknown:
            raise ParityTransformerError(f"unknown config keys for {command}: {sorted(unknown)}")
        settings.update(file_cfg)
    for key in settings:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def config_hash(command: str, settings: dict) -> str:
    blob = json.dumps({"command": command, **settings}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _params_from(settings: dict) -> ConstructionParams:
    base = DEFAULT_PARAMS
    if settings.get("calibration"):
        data = json.loads(Path(settings["calibration"]).read_text(encoding="utf-8"))
        chosen = data.get("chosen") if "chosen" in data else data
        if not chosen:
            raise ParityTransformerError(f"{settings['calibration']} holds no feasible constants")
        base = ConstructionParams.from_dict(chosen, certified=False)
    alpha = base.alpha if settings.get("alpha") is None else float(settings["alpha"])
    c = base.c if settings.get("c") is None else float(settings["c"])
    if settings.get("M") is not None:
        M = int(settings["M"])
    elif c != base.c:
        M = smallest_even_above(2 / c)
    else:
        M = base.M
    n_min = base.n_min if settings.get("n_min") is None else int(settings["n_min"])
    return ConstructionParams(alpha, c, M, n_min, base.precision, certified=False)


def _precision_for(setting: str, n: int) -> str:
    if setting == "auto":
        return "double" if n <= 1024 else "ext:64"
    return str(PrecisionConfig.parse(setting))


# -- commands -----------------------------------------------------------------

def _margins(params: ConstructionParams, n: int) -> dict:
    s = sigma_bound(n, params.c, params.M)
    gap, z = scan_length(n, np.arange(1, s + 1), params.alpha)
    target = np.where(np.arange(1, s + 1) % 2 == 0, 1.0, -1.0)
    return {"min_gap_over_n6": float(np.min(gap) / n**6), "max_z_error": float(np.max(np.abs(z - target)))}


def _bits(row) -> str:
    return "".join(str(int(b)) for b in row)


def cmd_verify_parity(settings: dict) -> tuple[dict, bool]:
    params = _params_from(settings)
    kind = settings["model"]
    builder = {"full": build_full_model, "restricted": build_restricted_model}[kind]
    model = builder(params)
    rng = np.random.default_rng(int(settings["seed"]))
    checks, notes = [], []
    exhaustive = range(params.n_min, min(params.n_min + 4, EXHAUSTIVE_CAP) + 1)
    plan = [(n, "exhaustive") for n in exhaustive]
    plan += [(int(n), "sampled") for n in settings["lengths"] if int(n) <= int(settings["n_max"])]
    for n, mode in plan:
        if n < params.n_min:
            notes.append(f"n={n}: skipped, out of certified range (n_min={params.n_min})")
            continue
        if mode == "exhaustive":
            X = ((np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)
        else:
            X = rng.integers(0, 2, size=(int(settings["samples"]), n), dtype=np.uint8)
        if kind == "restricted":
            S = X.sum(axis=1)
            X = X[(S >= 1) & (S <= params.c * n)]
        precision = _precision_for(settings["precision"], n)
        out = evaluate_bits(model, X, precision)
        expected = model.token_ids(["0", "1"])[X.sum(axis=1) % 2]
        bad = np.flatnonzero(out != expected)
        checks.append({
            "n": n, "mode": mode, "inputs": int(len(X)), "precision": precision,
            "mismatches": int(bad.size),
            "counterexamples": [
                {"input": _bits(X[k]), "output": model.vocabulary[int(out[k])], "expected": str(int(X[k].sum() % 2))}
                for k in bad[:10]
            ],
            "margins": _margins(params, n),
            "passed": bool(bad.size == 0),
        })
    report = {
        "command": "verify-parity", "model": kind, "params": params.to_dict(),
        "n_min": params.n_min, "checks": checks, "notes": notes,
        "passed": all(c["passed"] for c in checks),
    }
    return report, report["passed"]


def cmd_calibrate(settings: dict) -> tuple[dict, bool]:
    params, report = calibrate(
        settings["alphas"], settings["cs"], int(settings["n_max"]), settings["precision"], raise_on_empty=False
    )
    data = {"command": "calibrate", **report.to_dict(), "passed": params is not None}
    return data, params is not None


def cmd_lemmas(settings: dict) -> tuple[dict, bool]:
    ns = geometric_grid(int(settings["n_min"]), int(settings["n_max"]))
    precision = settings["precision"]
    order = settings["order"]
    reports = []
    orders = [order] if order is not None else [2, 1, 0]
    for o in orders:
        betas = settings["exponents"] if (order is not None or o == 2) else {1: [2.0, 5.0], 0: [0.0, 3.3, 10.0]}[o]
        reports.append(check_faulhaber([_num(b) for b in betas], ns, int(o), precision))
    if order is None:
        alphas = (0.01,) if settings["alpha"] is None else (float(settings["alpha"]),)
        reports.append(check_gamma_grid(alphas, ns, precision=precision))
        w_ns = tuple(n for n in ns if n >= 64) or ns
        reports.append(check_W_grid(0.01 if settings["alpha"] is None else float(settings["alpha"]), w_ns, precision))
    data = {
        "command": "lemmas",
        "reports": [r.to_dict() for r in reports],
        "warnings": [w for r in reports for w in r.warnings],
        "passed": all(r.passed for r in reports),
    }
    data["_tables"] = [r.table() for r in reports]
    return data, data["passed"]


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


def cmd_sensitivity(settings: dict) -> tuple[dict, bool]:
    checks = []
    parity = {n: str(average_sensitivity(BooleanFunction.parity(n))) for n in range(1, int(settings["n_max"]) + 1)}
    checks.append({"check": "as(PARITY_n) = n", "values": parity,
                   "passed": all(parity[n] == str(n) for n in parity)})
    maj3 = average_sensitivity(BooleanFunction.majority(3))
    checks.append({"check": "as(maj_3) = 3/2", "value": str(maj3), "passed": maj3 == 3 / 2})
    lo, hi = MAJORITY_RATIO_RANGE
    maj = {}
    for n in range(3, 16, 2):
        exact = average_sensitivity(BooleanFunction.majority(n))
        maj[n] = {"as": str(exact), "closed_form_agrees": exact == majority_average_sensitivity(n),
                  "ratio": float(exact) / math.sqrt(n)}
    checks.append({"check": f"as(maj_n)/sqrt(n) in [{lo}, {hi}] for odd n <= 15", "values": maj,
                   "passed": all(v["closed_form_agrees"] and lo <= v["ratio"] <= hi for v in maj.values())})
    sweep = sensitivity_sweep(int(settings["samples"]), settings["sweep_lengths"], int(settings["d"]), int(settings["seed"]))
    checks.append({"check": "random 1-layer 1-head sweep (reported, not bounded)", "sweep": sweep.to_dict(),
                   "passed": True})
    rng = np.random.default_rng([int(settings["seed"]), 1])
    axis_ok = all(cut_edges(Hyperplane.axis(n, k), n) == 2 ** (n - 1) for n in settings["cut_lengths"] for k in range(n))
    ratios = {n: max_cut_ratio(int(n), int(settings["cut_trials"]), rng) for n in settings["cut_lengths"]}
    checks.append({"check": "axis hyperplanes cut 2^(n-1) edges", "passed": axis_ok})
    checks.append({"check": f"random hyperplane cut ratio <= {CUT_RATIO_CEILING}", "ratios": ratios,
                   "max_ratio": max(ratios.values(), default=None),
                   "passed": all(r <= CUT_RATIO_CEILING for r in ratios.values())})
    report = {"command": "sensitivity", "checks": checks, "passed": all(c["passed"] for c in checks)}
    return report, report["passed"]


def cmd_build(settings: dict) -> tuple[dict, bool]:
    if settings["model"] == "majority":
        model = build_majority_model(settings["masking"])
        return {"command": "build", "model": model.to_dict(), "passed": True}, True
    params = _params_from(settings).replace(precision=PrecisionConfig.parse(settings["precision"]))
    builder = {"full": build_full_model, "restricted": build_restricted_model}[settings["model"]]
    model = builder(params, masking=settings["masking"])
    return {"command": "build", "params": params.to_dict(), "model": model.to_dict(), "passed": True}, True


COMMANDS = {
    "verify-parity": cmd_verify_parity,
    "calibrate": cmd_calibrate,
    "gap-scan": cmd_calibrate,
    "lemmas": cmd_lemmas,
    "sensitivity": cmd_sensitivity,
    "build": cmd_build,
}


# -- output -------------------------------------------------------------------

def render_table(command: str, report: dict) -> str:
    lines = [f"{command}: {'PASS' if report.get('passed') else 'FAIL'}"]
    if command == "verify-parity":
        p = report["params"]
        lines.append(f"alpha={p['alpha']} c={p['c']} M={p['M']} n_min={p['n_min']}")
        lines.append(f"{'n':>5} {'mode':>10} {'inputs':>8} {'precision':>9} {'bad':>5} {'gap/n^6':>10} {'z err':>10}")
        for c in report["checks"]:
            m = c["margins"]
            lines.append(
                f"{c['n']:>5} {c['mode']:>10} {c['inputs']:>8} {c['precision']:>9} {c['mismatches']:>5} "
                f"{m['min_gap_over_n6']:>10.4g} {m['max_z_error']:>10.3g}"
            )
            lines.extend(f"      counterexample {ce['input']} -> {ce['output']}" for ce in c["counterexamples"])
        lines.extend(report["notes"])
    elif command in ("calibrate", "gap-scan"):
        lines.append(f"{'alpha':>6} {'c':>5} {'M':>3} {'feasible':>8} {'n_min':>6} {'g0':>10}")
        for c in report["candidates"]:
            g0 = f"{c['g0']:.4g}" if c["g0"] is not None else "-"
            lines.append(f"{c['alpha']:>6} {c['c']:>5} {c['M']:>3} {str(c['feasible']):>8} {str(c['n_min']):>6} {g0:>10}")
        lines.append(f"chosen: {report['chosen']}")
    elif command == "lemmas":
        lines.extend(report.get("_tables", []))
    elif command == "sensitivity":
        for c in report["checks"]:
            extra = ""
            if "sweep" in c:
                s = c["sweep"]
                extra = f"  max ratio {s['max_ratio']:.4f} (seed {s['seed']}, skipped {s['skipped_non_boolean']}, flagged {len(s['flagged'])})"
            if "max_ratio" in c:
                extra = f"  max ratio {c['max_ratio']:.4f}"
            lines.append(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}{extra}")
    elif command == "build":
        lines.append(f"model {report['model']['name']}: d={report['model']['d']}, layers={report['model']['num_layers']}")
    return "\n".join(lines) + "\n"


# -- argument parsing ---------------------------------------------------------

def _precision_arg(text):
    if text == "auto":
        return text
    try:
        return str(PrecisionConfig.parse(text))
    except ParityTransformerError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parity-transformer",
        description="Verify explicit transformer constructions for PARITY and majority.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, precision=True):
        p.add_argument("--config", help="JSON or YAML file with settings; flags take precedence")
        p.add_argument("--out", help="write the JSON report here (atomically)")
        p.add_argument("--format", choices=("json", "table"), default="table", help="stdout format")
        if precision:
            p.add_argument("--precision", type=_precision_arg, help="double, ext:<bits> or auto")

    def construction(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--c", type=float)
        p.add_argument("--M", type=int)
        p.add_argument("--n-min", type=int)
        p.add_argument("--calibration", help="calibration report whose chosen constants to use")

    p = sub.add_parser("verify-parity", help="check the PARITY model against XOR")
    common(p)
    construction(p)
    p.add_argument("--n-max", type=int, help="largest sampled length")
    p.add_argument("--lengths", type=int, nargs="+", help="sampled lengths")
    p.add_argument("--samples", type=int, help="random inputs per sampled length")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", choices=("full", "restricted"))

    for name in ("calibrate", "gap-scan"):
        p = sub.add_parser(name, help="search alpha and c on a grid")
        common(p)
        p.add_argument("--alphas", type=float, nargs="*")
        p.add_argument("--cs", type=float, nargs="*")
        p.add_argument("--n-max", type=int, help="largest calibrated length")

    p = sub.add_parser("lemmas", help="power-sum expansions and gap-argument bounds")
    common(p)
    p.add_argument("--exponents", type=float, nargs="+")
    p.add_argument("--order", type=int, choices=(0, 1, 2))
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("sensitivity", help="average sensitivity, sweeps and edge cuts")
    common(p, precision=False)
    p.add_argument("--n-max", type=int, help="largest n for the parity check")
    p.add_argument("--samples", type=int, help="random models per scale in the sweep")
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--sweep-lengths", type=int, nargs="+")
    p.add_argument("--cut-trials", type=int)
    p.add_argument("--cut-lengths", type=int, nargs="+")

    p = sub.add_parser("build", help="write model weights as JSON")
    common(p)
    construction(p)
    p.add_argument("--model", choices=("full", "restricted", "majority"))
    p.add_argument("--masking", choices=("full", "causal"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    try:
        settings = resolve_settings(command, args)
        report, ok = COMMANDS[command](settings)
    except PrecisionError as exc:
        print(f"error: {exc}; rerun with --precision ext:64 or wider", file=sys.stderr)
        return 2
    except (ParityTransformerError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, CalibrationError) and exc.diagnostics:
            print(dump_report(exc.diagnostics), file=sys.stderr)
        return 2
    tables = report.pop("_tables", None)
    report["config"] = {k: v for k, v in settings.items()}
    report["config_hash"] = config_hash(command, settings)
    report["seed"] = settings.get("seed")
    report["precision"] = settings.get("precision")
    report["version"] = __version__
    text = dump_report(report)
    if args.out:
        write_atomic(args.out, text)
    if args.format == "json":
        if not args.out:
            sys.stdout.write(text)
    else:
        if tables is not None:
            report["_tables"] = tables
        sys.stdout.write(render_table(command, report))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
