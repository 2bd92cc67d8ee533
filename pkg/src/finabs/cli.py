"""Command-line front end.

Every command reads a JSON configuration, validates it against the shipped
schema, applies flag overrides and writes JSON reports and CSV tables into the
output directory. Outputs carry the tool version, the seed and a hash of the
resolved configuration, and contain no timestamps, so reruns are byte-identical.
Runtime-only options (worker count, output location) are excluded from the hash.

Exit codes: 0 ok, 1 a reproduction check failed, 2 configuration error,
3 numeric failure, 4 resource guard.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from . import __version__
from . import abstraction as ab
from . import bounds as bd
from . import dynamics as dy
from . import entropy as en
from . import experiments as ex
from .exprdsl import EvalError, ParseError
from .geometry import BoxRegion, IntervalError

log = logging.getLogger("finabs")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GUARD = 0, 1, 2, 3, 4

DEFAULTS = {
    "version": 1,
    "l": 5,
    "samples": 10_000,
    "seed": 0,
    "s_grid": [1.25, 1.5, 2, 3, 5, 10, 50, "inf"],
    "c_mode": "both",
    "entropy": "auto",
    "transition_mode": "closure",
    "split_depth": 0,
    "relaxed_variant": "printed",
    "allow_large": False,
}
DEFAULT_CELLS = [2**i for i in range(1, 11)]


class ConfigError(ValueError):
    pass


# --- configuration ---------------------------------------------------------------

def load_schema() -> dict:
    text = resources.files("finabs").joinpath("schema/config.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _field_name(err: jsonschema.ValidationError) -> str:
    path = "/".join(str(p) for p in err.absolute_path)
    return path or "<root>"


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(f"config field '{_field_name(err)}': {err.message}")


def read_config(path: Optional[str]) -> dict:
    if path is None:
        raise ConfigError("--config is required")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}, column {exc.colno}): {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def resolve_config(cfg: dict, args: argparse.Namespace) -> dict:
    """Validated config with defaults filled in and command-line overrides applied."""
    validate_config(cfg)
    out = {**DEFAULTS, **cfg}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        out["samples"] = args.samples
    if getattr(args, "high_rate_c", False):
        out["c_mode"] = "high-rate"
    if getattr(args, "allow_large", False):
        out["allow_large"] = True
    if getattr(args, "l", None) is not None:
        out["l"] = args.l
    validate_config(out)
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def build_system(spec: dict) -> dy.SystemDef:
    if "builtin" in spec:
        return dy.builtin(spec["builtin"], **spec.get("params", {}))
    domain = BoxRegion.from_bounds(spec["domain"])
    smooth = dy.Smoothness(spec["smoothness"], spec.get("M"), spec.get("L"))
    return dy.from_expressions(spec["expressions"], domain, smooth)


def s_grid_of(cfg: dict) -> list[float]:
    return [math.inf if s == "inf" else float(s) for s in cfg["s_grid"]]


def rates_of(cfg: dict) -> list[float]:
    if "rates" in cfg:
        rates = [bd.parse_rate(r) for r in cfg["rates"]]
    else:
        rates = [math.log(k) for k in cfg.get("cells", DEFAULT_CELLS)]
    return sorted(set(rates))


# --- output ----------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, dict):
        return {str(_jsonable(k)) if not isinstance(k, str) else k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item") and callable(x.item):
        return _jsonable(x.item())
    return x


def dump_json(doc: dict) -> str:
    try:
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"
    except ValueError as exc:
        raise dy.NumericError(f"non-finite value in report: {exc}") from exc


def dump_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: _jsonable(r.get(k)) for k in columns})
    return buf.getvalue()


class Output:
    def __init__(self, args: argparse.Namespace, cfg: dict):
        self.dir = Path(args.out)
        self.to_stdout = args.stdout
        self.meta = {"tool": "finabs", "version": __version__, "config_hash": config_hash(cfg), "seed": cfg["seed"]}
        self.cfg = cfg
        self.primary_written = False

    def document(self, kind: str, body: dict) -> dict:
        return {"kind": kind, "meta": self.meta, "config": self.cfg, **body}

    def write(self, name: str, text: str, primary: bool = False):
        self.dir.mkdir(parents=True, exist_ok=True)
        (self.dir / name).write_text(text, encoding="utf-8")
        log.info("wrote %s", self.dir / name)
        if primary and self.to_stdout and not self.primary_written:
            sys.stdout.write(text)
            self.primary_written = True


# --- commands --------------------------------------------------------------------

def _entropy(sys_: dy.SystemDef, cfg: dict, l: int, workers: int, mode: Optional[str] = None) -> en.EntropyReport:
    s_grid = s_grid_of(cfg)
    mode = mode or cfg["entropy"]
    if mode in ("auto", "closed-form"):
        rep = en.closed_form_for(sys_, l, s_grid)
        if rep is not None:
            return rep
        if mode == "closed-form":
            raise ConfigError(f"config field 'entropy': no closed form for system {sys_.name}")
    return en.entropy_report(sys_, l, s_grid, cfg["samples"], cfg["seed"], workers)


def _lipschitz(sys_: dy.SystemDef, cfg: dict) -> tuple[Optional[float], str]:
    if sys_.lipschitz is not None:
        return sys_.lipschitz, "declared"
    if sys_.smoothness.kind == "lipschitz":
        return dy.resolve_lipschitz(sys_, samples=max(cfg["samples"], 10_000), seed=cfg["seed"])
    return None, "not needed"


def cmd_bound(args, cfg) -> int:
    sys_ = build_system(cfg["system"])
    l = cfg["l"]
    s_grid = s_grid_of(cfg)
    rep = _entropy(sys_, cfg, l, args.workers)
    L, L_source = _lipschitz(sys_, cfg)
    c, case = bd.c_constant(sys_, l, lipschitz=L)
    rows, reports = [], []
    # every order of a uniform initial state equals log vol, including s = inf
    h0, renyi0 = bd.uniform_initial_renyi(sys_, s_grid)
    for R in rates_of(cfg):
        b = bd.bound_report(R, rep, l, c, case, s_grid, cfg.get("target_D"))
        kind = sys_.smoothness.kind
        if kind == "lipschitz" or (kind == "affine" and L is not None):
            rb = bd.relaxed_bound("lipschitz", sys_.n, l, R, h0, renyi0, L=L, D=cfg.get("target_D"),
                                  variant=cfg["relaxed_variant"], h_inf0=h0)
        elif kind in ("affine", "piecewise-affine"):
            rb = bd.relaxed_bound(kind, sys_.n, l, R, h0, renyi0, M=sys_.smoothness.pieces,
                                  D=cfg.get("target_D"), variant=cfg["relaxed_variant"], h_inf0=h0)
        else:
            rb = None
        b.relaxed = None if rb is None else rb.__dict__
        d = b.to_dict()
        d["D_primary"] = b.D_lower_highrate if cfg["c_mode"] == "high-rate" else b.D_lower
        reports.append(d)
        rows.append(b.csv_row())
    out = Output(args, cfg)
    doc = out.document("rd-bound", {
        "system": sys_.fingerprint(), "entropy": rep.to_dict(), "c": c, "c_case": case,
        "lipschitz": L, "lipschitz_source": L_source, "c_mode": cfg["c_mode"], "reports": reports,
    })
    out.write("bound.json", dump_json(doc), primary=True)
    out.write("rd_curve.csv", dump_csv(rows, bd.CSV_COLUMNS))
    return EXIT_OK


def _grid_counts(cfg: dict, sys_: dy.SystemDef) -> list[int]:
    counts = cfg.get("grid", [5] * sys_.n)
    if len(counts) == 1 and sys_.n > 1:
        counts = counts * sys_.n
    if len(counts) != sys_.n:
        raise ConfigError(f"config field 'grid': need 1 or {sys_.n} counts")
    ex.guard_cells(counts, cfg["allow_large"])
    return counts


def cmd_abstract(args, cfg) -> int:
    sys_ = build_system(cfg["system"])
    counts = _grid_counts(cfg, sys_)
    t0 = time.perf_counter()
    grid = ab.build_partition(sys_.domain, counts)
    rel = ab.build_transitions(sys_, grid, cfg["transition_mode"], cfg["split_depth"], args.workers)
    # build time is reported on stderr only so that files stay byte-identical
    log.warning("built %d cells, %d transitions in %.3f s", grid.n_cells, rel.n_transitions,
                time.perf_counter() - t0)
    out = Output(args, cfg)
    doc = out.document("abstraction", ab.abstraction_document(sys_, grid, rel, cfg["transition_mode"]))
    out.write("abstraction.json", dump_json(doc))
    summary = out.document("abstraction-summary", {"cells": grid.n_cells, "transitions": rel.n_transitions})
    out.write("abstraction_summary.json", dump_json(summary), primary=True)
    return EXIT_OK


def cmd_distortion(args, cfg) -> int:
    sys_ = build_system(cfg["system"])
    l = cfg["l"]
    if args.abstraction:
        try:
            doc = json.loads(Path(args.abstraction).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read abstraction {args.abstraction}: {exc}") from exc
        grid, rel, fp = ab.load_abstraction(doc)
        if fp != sys_.fingerprint():
            raise ConfigError("abstraction was built for a different system")
    else:
        counts = _grid_counts(cfg, sys_)
        grid = ab.build_partition(sys_.domain, counts)
        rel = ab.build_transitions(sys_, grid, cfg["transition_mode"], cfg["split_depth"], args.workers)
    est = ab.expected_distortion(sys_, grid, rel, l, cfg["samples"], cfg["seed"], args.workers)
    viol = ab.check_inclusion(sys_, grid, rel, l, cfg["samples"], cfg["seed"], args.workers)
    out = Output(args, cfg)
    doc = out.document("distortion", {
        "system": sys_.fingerprint(), "cells": grid.n_cells, "transitions": rel.n_transitions, "l": l,
        "mean": est.mean, "stderr": est.stderr, "inclusion_violations": viol,
    })
    out.write("distortion.json", dump_json(doc), primary=True)
    return EXIT_OK


def cmd_entropy(args, cfg) -> int:
    sys_ = build_system(cfg["system"])
    l = cfg["l"]
    body = {"system": sys_.fingerprint(), "monte_carlo": None, "closed_form": None}
    if cfg["entropy"] in ("auto", "monte-carlo"):
        body["monte_carlo"] = _entropy(sys_, cfg, l, args.workers, "monte-carlo").to_dict()
    if cfg["entropy"] in ("auto", "closed-form"):
        cf = en.closed_form_for(sys_, l, s_grid_of(cfg))
        if cf is None and cfg["entropy"] == "closed-form":
            raise ConfigError(f"config field 'entropy': no closed form for system {sys_.name}")
        body["closed_form"] = None if cf is None else cf.to_dict()
    out = Output(args, cfg)
    out.write("entropy.json", dump_json(out.document("entropy", body)), primary=True)
    return EXIT_OK


def _finish_checks(out: Output, checks: list, name: str) -> int:
    doc = out.document(name, {"checks": [c.__dict__ for c in checks]})
    out.write("checks.json", dump_json(doc), primary=True)
    for c in checks:
        tag = "PASS" if c.passed else ("FAIL" if c.required else "NOTE")
        log.warning("%s %s %s", tag, c.name, c.detail)
    return EXIT_OK if all(c.passed for c in checks if c.required) else EXIT_CHECK


def cmd_reproduce(args, cfg) -> int:
    exp = cfg.get("experiment", {})
    out = Output(args, cfg)
    if args.experiment == "doubling":
        ls = [args.l] if args.l is not None else exp.get("ls", [1, 2, 3, 4, 5])
        achiev, ratios, checks = ex.reproduce_doubling(
            ls, exp.get("ks", [1, 2, 4]), exp.get("ratio_ks", list(range(1, 65))),
            cfg["samples"], cfg["seed"], args.workers,
        )
        out.write("doubling_achievability.csv", dump_csv(achiev, list(achiev[0].keys())))
        if ratios:
            out.write("doubling_ratio.csv", dump_csv(ratios, list(ratios[0].keys())))
        return _finish_checks(out, checks, "reproduce-doubling")
    ls = [args.l] if args.l is not None else exp.get("ls", [2, 3, 4, 5])
    rows, checks = ex.nonlinear3d_experiment(
        exp.get("Ns", [5, 10, 20]), ls, cfg["samples"], cfg["seed"], args.workers,
        s_grid_of(cfg), cfg["allow_large"],
    )
    out.write("nonlinear3d.csv", dump_csv(rows, ex.NONLINEAR3D_COLUMNS))
    return _finish_checks(out, checks, "reproduce-nonlinear3d")


REPRODUCE_DEFAULTS = {
    "doubling": {"system": {"builtin": "doubling"}, "samples": 10_000},
    "nonlinear3d": {"system": {"builtin": "nonlinear3d"}, "samples": 2000},
}


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--out", default="finabs-out", help="output directory (default: finabs-out)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--samples", type=int, help="override the configured sample count")
    common.add_argument("--workers", type=int, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--high-rate-c", action="store_true", help="use c = v_n for the primary bound")
    common.add_argument("--stdout", action="store_true", help="also print the main JSON report to stdout")
    common.add_argument("--allow-large", action="store_true", help="lift the grid-size resource guard")
    common.add_argument("--l", type=int, help="override the trajectory length")
    common.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")

    p = argparse.ArgumentParser(prog="finabs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"finabs {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("bound", parents=[common], help="rate-distortion lower bounds and rd-curve CSV")
    sub.add_parser("abstract", parents=[common], help="build a grid abstraction")
    d = sub.add_parser("distortion", parents=[common], help="expected distortion and inclusion check")
    d.add_argument("--abstraction", help="abstraction JSON written by 'abstract'")
    sub.add_parser("entropy", parents=[common], help="trajectory entropies")
    r = sub.add_parser("reproduce", parents=[common], help="run a bundled experiment")
    r.add_argument("experiment", choices=sorted(REPRODUCE_DEFAULTS))
    return p


COMMANDS = {
    "bound": cmd_bound,
    "abstract": cmd_abstract,
    "distortion": cmd_distortion,
    "entropy": cmd_entropy,
    "reproduce": cmd_reproduce,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "reproduce" and args.config is None:
            raw = dict(REPRODUCE_DEFAULTS[args.experiment])
        else:
            raw = read_config(args.config)
        cfg = resolve_config(raw, args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, dy.SystemDefError, ParseError, ab.AbstractionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.ResourceGuardError as exc:
        print(f"resource guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (dy.NumericError, bd.BoundError, EvalError, IntervalError, ArithmeticError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
