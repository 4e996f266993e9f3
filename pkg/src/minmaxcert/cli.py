"""Command-line front end.

Exit codes: 0 certified (or success), 1 falsified, 2 indeterminate, 3 usage or input error.
Each run writes its JSON result to --out (or stdout) and a run manifest next to it.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attack_set import Norm, load_attack_set
from .certify import (CertificationError, CertifyOptions, CertStatus, SlaterStatus, certified_accuracy,
                      certified_radius, certify, prune_redundant, verify_slater)
from .convert import ConversionTooLarge, DEFAULT_CAP, load_net, relu_to_minmax
from .model import ModelFormatError, evaluate, evaluate_trace, load_model, to_dict
from .train import TrainConfig, TrainingDiverged, init_model, load_config, pgd_attack, train

EXIT_OK, EXIT_FALSIFIED, EXIT_INDETERMINATE, EXIT_USAGE = 0, 1, 2, 3

log = logging.getLogger("minmaxcert")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _clean(obj):
    """Replace non-finite floats by None and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps(obj) -> str:
    # repr of a float is the shortest string that round-trips, so output is exact and reproducible
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _parse_point(text: str, d: int | None = None) -> np.ndarray:
    """A comma-separated vector, or a path to a JSON list."""
    p = Path(text)
    try:
        if p.suffix == ".json" and p.exists():
            vec = np.array(json.loads(p.read_text()), dtype=np.float64).ravel()
        else:
            vec = np.array([float(t) for t in text.split(",")], dtype=np.float64)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"--point: cannot parse {text!r} ({exc})") from None
    if d is not None and vec.shape != (d,):
        raise UsageError(f"--point: expected {d} coordinates, got {vec.size}")
    return vec


def _eps_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"--eps: cannot parse {text!r}") from None
    if any(v < 0 or not math.isfinite(v) for v in vals):
        raise UsageError("--eps: radii must be finite and nonnegative")
    return vals


def _need(args, name):
    if getattr(args, name) is None:
        raise UsageError(f"--{name.replace('_', '-')} is required for {args.command}")
    return getattr(args, name)


def _certify_opts(args) -> CertifyOptions:
    if args.tol is None:
        return CertifyOptions()
    return CertifyOptions(duality_tol=args.tol)


# ---------------------------------------------------------------- subcommands
# each returns (result dict, exit code, input paths)


def cmd_eval(args):
    model = load_model(_need(args, "model"))
    x = _parse_point(_need(args, "point"), model.d)
    tr = evaluate_trace(model, x)
    return {"value": tr.value, "argmin_i": tr.argmin_i, "argmax_j": tr.argmax_j}, EXIT_OK, [args.model]


def _status_code(status: CertStatus) -> int:
    return {CertStatus.CERTIFIED: EXIT_OK, CertStatus.FALSIFIED: EXIT_FALSIFIED,
            CertStatus.INDETERMINATE: EXIT_INDETERMINATE}[status]


def cmd_certify(args):
    model = load_model(_need(args, "model"))
    X = load_attack_set(_need(args, "attack_set"))
    res = certify(model, X, _certify_opts(args))
    out = res.to_dict()
    if res.attack is not None:
        out["attack_value"] = evaluate(model, res.attack)
    return out, _status_code(res.status), [args.model, args.attack_set]


def cmd_attack(args):
    model = load_model(_need(args, "model"))
    x0 = _parse_point(_need(args, "point"), model.d)
    eps = _need(args, "eps")
    x = pgd_attack(model, x0, eps, args.norm, steps=args.steps)
    val = evaluate(model, x)
    code = EXIT_FALSIFIED if val < 0 else EXIT_OK
    return {"attack": x, "value": val, "center_value": evaluate(model, x0), "eps": eps,
            "norm": Norm.parse(args.norm).value}, code, [args.model]


def cmd_radius(args):
    model = load_model(_need(args, "model"))
    x0 = _parse_point(_need(args, "point"), model.d)
    r = certified_radius(model, x0, args.norm, args.epsilon_max, args.radius_tol, _certify_opts(args))
    return {"radius": r, "norm": Norm.parse(args.norm).value, "epsilon_max": args.epsilon_max,
            "radius_tol": args.radius_tol}, EXIT_OK, [args.model]


def _read_data(path):
    from .datasets import read_csv

    return read_csv(path)


def cmd_accuracy(args):
    model = load_model(_need(args, "model"))
    X, t = _read_data(_need(args, "data"))
    if X.shape[1] != model.d:
        raise UsageError(f"--data: rows have {X.shape[1]} features, model expects {model.d}")
    rows = []
    for eps in _eps_list(args.eps_list):
        acc = certified_accuracy(model, X, t, eps, args.sensitive_label, args.norm, _certify_opts(args), args.jobs)
        rows.append({"eps": eps, "certified_accuracy": acc})
    return {"norm": Norm.parse(args.norm).value, "curve": rows}, EXIT_OK, [args.model, args.data]


def cmd_prune(args):
    model = load_model(_need(args, "model"))
    pruned, removed = prune_redundant(model)
    return {"model": to_dict(pruned), "removed": [list(r) for r in removed]}, EXIT_OK, [args.model]


def cmd_slater(args):
    model = load_model(_need(args, "model"))
    X = load_attack_set(_need(args, "attack_set"))
    if X.d != model.d:
        raise UsageError(f"dimension mismatch: model d={model.d}, attack set d={X.d}")
    status = verify_slater(prune_redundant(model)[0], X, CertifyOptions().slater_eps)
    code = EXIT_OK if status is SlaterStatus.OK else EXIT_INDETERMINATE
    return {"slater": status.value}, code, [args.model, args.attack_set]


def cmd_convert(args):
    net = load_net(_need(args, "net"))
    model = relu_to_minmax(net, args.cap)
    return to_dict(model), EXIT_OK, [args.net]


def cmd_train(args):
    X, y = _read_data(_need(args, "data"))
    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg = TrainConfig.from_dict(cfg.to_dict() | {"seed": args.seed})
    rng = np.random.default_rng(cfg.seed)
    init = init_model(X.shape[1], args.m, args.n, rng, (float(y.min()), float(y.max())))
    history: list = []
    model = train(init, X, y, cfg, history)
    return {"model": to_dict(model), "loss_history": history, "config": cfg.to_dict()}, EXIT_OK, \
        [p for p in (args.data, args.config) if p]


def cmd_demo_control(args):
    from .control_demo import DEMO_SEED, run_demo

    seed = DEMO_SEED if args.seed is None else args.seed
    out_dir = _demo_dir(args, "control_demo")
    rep = run_demo(seed, grid=args.grid, out_dir=out_dir)
    code = _status_code(CertStatus(rep.status))
    return rep.to_dict() | {"output_dir": str(out_dir), "timings": rep.timings}, code, []


def cmd_demo_mnist(args):
    from .mnist_demo import DEMO_SEED, run_mnist_demo

    seed = DEMO_SEED if args.seed is None else args.seed
    out_dir = _demo_dir(args, "mnist_demo")
    factor = tuple(int(t) for t in args.downsample.split(",")) if args.downsample else None
    rep = run_mnist_demo(seed, images=args.images, labels=args.labels, downsample=factor,
                         eps_grid=_eps_list(args.eps_list), out_dir=out_dir, max_test=args.max_test,
                         radius_points=args.radius_points, jobs=args.jobs)
    return rep | {"output_dir": str(out_dir)}, EXIT_OK, [p for p in (args.images, args.labels) if p]


def _demo_dir(args, default: str) -> Path:
    if args.out is None:
        return Path(default)
    p = Path(args.out)
    return p.parent / p.stem if p.suffix == ".json" else p


COMMANDS = {
    "eval": (cmd_eval, "evaluate g at a point"),
    "certify": (cmd_certify, "exact worst case of g over an attack set"),
    "attack": (cmd_attack, "PGD attack on a norm ball"),
    "radius": (cmd_radius, "certified radius by bisection"),
    "accuracy": (cmd_accuracy, "certified accuracy over a list of radii"),
    "prune": (cmd_prune, "drop pieces that are never active"),
    "slater": (cmd_slater, "check the Slater condition of the dual program"),
    "convert": (cmd_convert, "convert a one-hidden-layer ReLU net to min-max form"),
    "train": (cmd_train, "fit a min-max model to CSV data"),
    "demo-control": (cmd_demo_control, "intersection policy: train, certify braking, sweep"),
    "demo-mnist": (cmd_demo_mnist, "3-vs-8 digits: adversarial training and certified accuracy"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="minmaxcert", description="Exact robustness certification of min-max affine models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--model", help="min-max model JSON")
        p.add_argument("--attack-set", help="attack set JSON")
        p.add_argument("--out", help="result JSON path (demo commands: output directory)")
        p.add_argument("--tol", type=float, help="relative duality-gap tolerance")
        p.add_argument("--seed", type=int)
        p.add_argument("--norm", default="linf", help="l1, l2 or linf")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("eval", "attack", "radius"):
            p.add_argument("--point", help="comma-separated vector or JSON list file")
        if name == "attack":
            p.add_argument("--eps", type=float)
            p.add_argument("--steps", type=int, default=10)
        if name == "radius":
            p.add_argument("--epsilon-max", type=float, default=1.0)
            p.add_argument("--radius-tol", type=float, default=1e-3)
        if name in ("accuracy", "demo-mnist"):
            p.add_argument("--eps", dest="eps_list", default="0,0.01,0.02,0.03,0.04,0.05,0.06,0.07,0.08,0.09,0.1",
                           help="comma-separated radii")
        if name == "accuracy":
            p.add_argument("--sensitive-label", type=float, default=1)
        if name in ("accuracy", "train"):
            p.add_argument("--data", help="CSV rows x_1,...,x_d,target")
        if name == "train":
            p.add_argument("--config", help="training config JSON")
            p.add_argument("--m", type=int, default=10)
            p.add_argument("--n", type=int, default=10)
        if name == "convert":
            p.add_argument("--net", help="ReLU network JSON")
            p.add_argument("--cap", type=int, default=DEFAULT_CAP)
        if name == "demo-control":
            p.add_argument("--grid", type=int, default=20)
        if name == "demo-mnist":
            p.add_argument("--images", help="IDX image file (default: bundled 8x8 digits)")
            p.add_argument("--labels", help="IDX label file")
            p.add_argument("--downsample", help="pooling factor, e.g. 4 or 2,4")
            p.add_argument("--max-test", type=int, help="cap on sensitive-class test points")
            p.add_argument("--radius-points", type=int, default=3)
    return parser


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _manifest(args, inputs, text: str, code: int, seconds: float, timings=None) -> dict:
    opts = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    return {
        "timings": timings,
        "subcommand": args.command,
        "inputs": [str(p) for p in inputs],
        "options": opts,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "wall_clock_seconds": seconds,
        "exit_code": code,
        "result_sha256": _digest(text),
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    handler = COMMANDS[args.command][0]
    try:
        result, code, inputs = handler(args)
    except (UsageError, ModelFormatError, ConversionTooLarge, FileNotFoundError, IsADirectoryError,
            json.JSONDecodeError, ValueError) as exc:
        print(f"minmaxcert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CertificationError, TrainingDiverged) as exc:
        print(f"minmaxcert {args.command}: {exc}", file=sys.stderr)
        return EXIT_INDETERMINATE
    # timings go to the manifest; the result itself must be reproducible byte for byte
    timings = result.pop("timings", None)
    text = dumps(result)
    manifest = dumps(_manifest(args, inputs, text, code, time.perf_counter() - t0, timings))
    if args.out and not args.command.startswith("demo-"):
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        out.with_name(out.name + ".manifest.json").write_text(manifest)
    elif args.command.startswith("demo-"):
        out_dir = Path(result["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "result.json").write_text(text)
        (out_dir / "manifest.json").write_text(manifest)
        sys.stdout.write(text)
    else:
        sys.stdout.write(text)
        sys.stderr.write(manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
