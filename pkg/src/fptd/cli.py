"""``fptd`` command line: density, cdf, defect, validate, selftest.

Exit codes: 0 success, 1 failed validation, 2 bad config or arguments,
3 domain error (invalid parameters for the requested computation).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .closed_form import f_zero
from .errors import DomainError, NotApplicable
from .estimator import estimate_cdf, estimate_defect, estimate_density
from .model import model_from_dict

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_DOMAIN = 0, 1, 2, 3


class ConfigError(Exception):
    pass


def parse_grid(text: str) -> np.ndarray:
    """Parse ``start:stop:step`` (stop included) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ConfigError(f"grid {text!r}: expected start:stop:step")
            start, stop, step = parts
            if not all(math.isfinite(p) for p in parts) or step <= 0 or stop < start:
                raise ConfigError(f"grid {text!r}: need start <= stop and step > 0")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            if n > 10_000_000:
                raise ConfigError(f"grid {text!r}: too many points")
            grid = np.round(start + step * np.arange(n), 12)
        else:
            grid = np.array([float(p) for p in text.split(",") if p.strip()], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"grid {text!r}: {exc}") from None
    if grid.size == 0:
        raise ConfigError("empty grid")
    if np.any(~np.isfinite(grid)) or np.any(grid <= 0):
        raise ConfigError(f"grid {text!r}: times must be finite and > 0")
    if np.any(np.diff(grid) <= 0):
        raise ConfigError(f"grid {text!r}: times must be strictly increasing")
    return grid


def load_model(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    try:
        return model_from_dict(data)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"malformed model config: {exc}") from None


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(out, header, t, col, se):
    rows = [",".join(header)] + [f"{_fmt(a)},{_fmt(b)},{_fmt(c)}" for a, b, c in zip(t, col, se)]
    text = "\n".join(rows) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8", newline="")


def read_csv(path):
    """Read back an emitted CSV as (header, float array of shape (rows, 3))."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 3)


def _threads(args):
    return args.threads if args.threads is not None else None


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def cmd_density(args) -> int:
    _require(args, "config", "x", "t_grid")
    model = load_model(args.config)
    grid = parse_grid(args.t_grid)
    t0 = time.perf_counter()
    est = estimate_density(model, args.x, grid, args.paths, args.seed, threads=_threads(args))
    wall = time.perf_counter() - t0
    _write_csv(args.out, ("t", "f_hat", "std_err"), est.t_grid, est.f_hat, est.std_err)
    if args.out is not None:
        side = {
            "model": model.to_dict(),
            "x": float(args.x),
            "n_paths": est.n_paths,
            "seed": est.master_seed,
            "wall_time_s": wall,
            "f_zero": f_zero(args.x, model),
        }
        Path(args.out).with_suffix(".json").write_text(json.dumps(side, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_cdf(args) -> int:
    _require(args, "config", "x", "t_grid")
    model = load_model(args.config)
    grid = parse_grid(args.t_grid)
    est = estimate_cdf(model, args.x, grid, args.paths, args.seed, threads=_threads(args))
    _write_csv(args.out, ("t", "p_hat", "std_err"), est.t_grid, est.p_hat, est.std_err)
    return EXIT_OK


def cmd_defect(args) -> int:
    _require(args, "config", "x")
    model = load_model(args.config)
    horizon = 1000.0 if args.horizon is None else args.horizon
    est = estimate_defect(model, args.x, horizon, args.paths, args.seed, threads=_threads(args))
    print(f"drift_index = {est.drift_index:g}")
    print(f"defect_hat = {est.defect_hat:.6f} ± {est.std_err:.6f}  (horizon {horizon:g}, N = {est.n_paths})")
    print(est.verdict)
    if est.horizon_too_short:
        print("note: estimate still above 3 stderr at this horizon; non-hit mass decays slowly when drift_index = 0")
    if args.out is not None:
        payload = {
            "model": model.to_dict(),
            "x": float(args.x),
            "horizon": est.horizon,
            "n_paths": est.n_paths,
            "seed": est.master_seed,
            "drift_index": est.drift_index,
            "defect_hat": est.defect_hat,
            "std_err": est.std_err,
            "verdict": est.verdict,
        }
        Path(args.out).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return EXIT_OK


def _run_validation(args, scale) -> int:
    from . import validation

    only = [s.strip() for s in args.only.split(",")] if args.only else None
    if only:
        unknown = [s for s in only if s not in validation.CHECKS]
        if unknown:
            raise ConfigError("unknown check(s): " + ", ".join(unknown))
    seed = args.seed if args.seed is not None else 20261015

    width = max(len(n) for n in validation.CHECKS)

    def show(r):
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.seconds:7.1f}s  {r.detail}", flush=True)

    results = validation.run_checks(scale, seed=seed, only=only, on_result=show)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_validate(args) -> int:
    return _run_validation(args, "full")


def cmd_selftest(args) -> int:
    return _run_validation(args, "reduced")


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fptd", description="First-hitting-time law of a jump-diffusion.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, grid=True):
        sp.add_argument("--config", help="model JSON file")
        sp.add_argument("--x", type=float, help="level x > 0")
        if grid:
            sp.add_argument("--t-grid", dest="t_grid", help="start:stop:step (inclusive) or comma list")
        sp.add_argument("--paths", type=_positive_int, default=100_000)
        sp.add_argument("--seed", type=_seed, default=0)
        sp.add_argument("--out", help="output file (stdout if omitted)")
        sp.add_argument("--threads", type=_positive_int, help="worker threads (default $FPTD_THREADS or 1)")

    common(sub.add_parser("density", help="conditional Monte Carlo density on a time grid"))
    common(sub.add_parser("cdf", help="hitting probability on a time grid"))
    d = sub.add_parser("defect", help="P(tau_x > horizon) and finiteness verdict")
    common(d, grid=False)
    d.add_argument("--horizon", type=float, default=None)
    for name, help_ in (("validate", "full invariant and oracle suite"), ("selftest", "validate at reduced sample sizes")):
        v = sub.add_parser(name, help=help_)
        v.add_argument("--seed", type=_seed, default=None)
        v.add_argument("--only", help="comma-separated check names")
    return p


COMMANDS = {
    "density": cmd_density,
    "cdf": cmd_cdf,
    "defect": cmd_defect,
    "validate": cmd_validate,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"fptd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, NotApplicable) as exc:
        print(f"fptd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
