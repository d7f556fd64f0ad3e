"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .bandwidth import rot_bandwidth
from .counterfactual import cf_band, read_covariate_csv
from .data import DegenerateInputError, DyadicInputError, read_edge_csv, summary
from .estimator import fhat, make_grid
from .inference import RBCConfig, rbc_band, two_sample_test
from .kernels import FAMILIES, KernelSpec
from .simulation import DESIGN_PIS, PiParams, StudyConfig, mc_study

EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 1, 2, 3

# Resolved settings with their defaults; flags override config-file values.
DEFAULTS = {
    "input": None,
    "input2": None,
    "covariates": None,
    "domain": None,
    "grid": 100,
    "kernel": "epanechnikov",
    "p": 2,
    "p_prime": 4,
    "alpha": 0.05,
    "B": 10_000,
    "seed": 0,
    "trade": False,
    "out": None,
    "ridge": False,
    "bandwidth": None,
    "p_index": "inf",
    "full_scale": False,
    "reps": None,
    "n": None,
    "pi": None,
    "workers": 1,
}
_TYPES = {
    "grid": int,
    "p": int,
    "p_prime": int,
    "alpha": float,
    "B": int,
    "seed": int,
    "bandwidth": float,
    "reps": int,
    "n": int,
    "workers": int,
}
_FLAGS = {"trade", "ridge", "full_scale"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _truthy(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """``key = value`` per line; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        if key in _FLAGS:
            out[key] = _truthy(value)
        elif key == "pi":
            out[key] = [v.strip() for v in value.split(";") if v.strip()]
        else:
            out[key] = value
    return out


def _convert(key, value):
    if value is None:
        return None
    try:
        return _TYPES[key](value) if key in _TYPES else value
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc


def resolve(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None and not (key in _FLAGS and value is False):
            cfg[key] = value
    cfg = {k: _convert(k, v) for k, v in cfg.items()}
    cfg["command"] = args.command
    if cfg["kernel"] not in FAMILIES:
        raise UsageError(f"unknown kernel {cfg['kernel']!r}; choose from {', '.join(FAMILIES)}")
    if cfg["domain"] is not None:
        cfg["domain"] = _parse_domain(cfg["domain"])
    if cfg["p_index"] not in ("2", "inf"):
        raise UsageError("--p-index must be 2 or inf")
    return cfg


def _parse_domain(text) -> tuple[float, float]:
    if isinstance(text, (tuple, list)):
        a, b = text
    else:
        parts = str(text).strip("[]() ").split(",")
        if len(parts) != 2:
            raise UsageError(f"domain must be 'a,b', got {text!r}")
        a, b = parts
    try:
        a, b = float(a), float(b)
    except ValueError as exc:
        raise UsageError(f"bad domain {text!r}") from exc
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise UsageError(f"domain needs finite a < b, got {text!r}")
    return a, b


def _require(cfg: dict, *keys) -> None:
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise UsageError(f"{cfg['command']} needs {flags}")


def _data_domain(dataset) -> tuple[float, float]:
    vals = dataset.present_values()
    if vals.size == 0:
        raise DegenerateInputError("no present edges")
    a, b = float(vals.min()), float(vals.max())
    if not a < b:
        raise DegenerateInputError("all edge values are equal; pass --domain")
    return a, b


def _rbc_config(cfg: dict, domain) -> RBCConfig:
    try:
        return RBCConfig(
            domain=domain,
            p=cfg["p"],
            p_prime=cfg["p_prime"],
            alpha=cfg["alpha"],
            B=cfg["B"],
            d=cfg["grid"],
            family=cfg["kernel"],
            ridge=cfg["ridge"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# Output -------------------------------------------------------------------


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in zip(*columns):
        writer.writerow([repr(float(x)) for x in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _emit(outputs: list) -> None:
    """Outputs are fully rendered before this runs, so a failed command
    leaves no files behind."""
    for path, text in outputs:
        if path is None:
            sys.stdout.write(text)
        else:
            _atomic_write(path, text)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def _band_csv(band) -> str:
    return _csv_text(
        ["w", "fhat", "lo", "hi", "se"], [band.grid, band.center, band.lower, band.upper, band.se]
    )


def _echo(cfg: dict) -> dict:
    return dict(cfg)


def _node_ids(data) -> dict:
    """Input node id -> dense index 1..n (first-seen order)."""
    return {str(label): k + 1 for k, label in enumerate(data.labels)}


# Commands -----------------------------------------------------------------


def cmd_estimate(cfg: dict) -> list:
    _require(cfg, "input", "out")
    data = read_edge_csv(cfg["input"], trade=cfg["trade"])
    domain = cfg["domain"] or _data_domain(data)
    if cfg["bandwidth"] is not None:
        h, method = cfg["bandwidth"], "user"
    else:
        h, method = rot_bandwidth(data, cfg["kernel"]).h, "ROT"
    spec = KernelSpec(cfg["kernel"], cfg["p"], h, domain)
    est = fhat(data, spec, make_grid(domain, cfg["grid"]))
    meta = {
        "h": h,
        "bandwidth_method": method,
        "p": cfg["p"],
        "N_present": data.n_present,
        "mixture_weight": data.mixture_weight,
        "domain": domain,
        "node_ids": _node_ids(data),
        "config": _echo(cfg),
    }
    return [
        (cfg["out"], _csv_text(["w", "fhat"], [est.grid, est.values])),
        (_sidecar(cfg["out"]), _json_text(meta)),
    ]


def cmd_band(cfg: dict) -> list:
    _require(cfg, "input", "out")
    data = read_edge_csv(cfg["input"], trade=cfg["trade"])
    domain = cfg["domain"] or _data_domain(data)
    band = rbc_band(data, _rbc_config(cfg, domain), cfg["seed"])
    meta = dict(band.meta) | {
        "alpha": band.alpha,
        "B": band.B,
        "domain": domain,
        "zero_variance_points": int(band.zero_variance.sum()),
        "node_ids": _node_ids(data),
        "config": _echo(cfg),
    }
    return [(cfg["out"], _band_csv(band)), (_sidecar(cfg["out"]), _json_text(meta))]


def _cf_paths(out) -> tuple[Path, Path]:
    out = Path(out)
    stem = out.with_suffix("") if out.suffix else out
    return Path(f"{stem}_observed.csv"), Path(f"{stem}_counterfactual.csv")


def cmd_counterfactual(cfg: dict) -> list:
    _require(cfg, "input", "covariates", "out")
    data = read_edge_csv(cfg["input"], trade=cfg["trade"])
    sample = read_covariate_csv(cfg["covariates"], data)
    domain = cfg["domain"] or _data_domain(data)
    rc = _rbc_config(cfg, domain)
    observed = rbc_band(data, rc, cfg["seed"])
    counter = cf_band(data, sample, rc, cfg["seed"])
    obs_path, cf_path = _cf_paths(cfg["out"])
    meta = {
        "observed": observed.meta,
        "counterfactual": counter.meta,
        "files": [str(obs_path), str(cf_path)],
        "domain": domain,
        "node_ids": _node_ids(data),
        "config": _echo(cfg),
    }
    return [
        (obs_path, _band_csv(observed)),
        (cf_path, _band_csv(counter)),
        (_sidecar(cfg["out"]), _json_text(meta)),
    ]


def cmd_test2(cfg: dict) -> list:
    _require(cfg, "input", "input2")
    d0 = read_edge_csv(cfg["input"], trade=cfg["trade"])
    d1 = read_edge_csv(cfg["input2"], trade=cfg["trade"])
    if cfg["domain"] is None:
        a0, b0 = _data_domain(d0)
        a1, b1 = _data_domain(d1)
        domain = (max(a0, a1), min(b0, b1))
        if not domain[0] < domain[1]:
            raise DegenerateInputError("the two samples' value ranges do not overlap; pass --domain")
    else:
        domain = cfg["domain"]
    p_index = math.inf if cfg["p_index"] == "inf" else 2
    res = two_sample_test(d0, d1, _rbc_config(cfg, domain), p_index=p_index, seed=cfg["seed"])
    report = dataclasses.asdict(res) | {"domain": domain, "config": _echo(cfg)}
    return [(cfg["out"], _json_text(report))]


def cmd_simulate(cfg: dict) -> list:
    _require(cfg, "out")
    try:
        pis = tuple(PiParams.parse(s) for s in cfg["pi"]) if cfg["pi"] else DESIGN_PIS
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad --pi: {exc}") from exc
    overrides = {"pis": pis, "seed": cfg["seed"], "alpha": cfg["alpha"], "workers": cfg["workers"]}
    overrides |= {"p": cfg["p"], "p_prime": cfg["p_prime"], "family": cfg["kernel"]}
    if cfg["domain"] is not None:
        overrides["domain"] = cfg["domain"]
    # design sizes only override the preset when given explicitly
    for key, name in (("reps", "reps"), ("n", "n")):
        if cfg[key] is not None:
            overrides[name] = cfg[key]
    for key, name in (("grid", "d"), ("B", "B")):
        if cfg[key] != DEFAULTS[key]:
            overrides[name] = cfg[key]
    study = StudyConfig.full_scale(**overrides) if cfg["full_scale"] else StudyConfig(**overrides)
    if study.reps < 2:
        raise UsageError("need --reps >= 2")
    report = mc_study(study)
    buf = io.StringIO()
    names = [f.name for f in dataclasses.fields(report.rows[0])]
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        writer.writerow(dataclasses.asdict(row))
    meta = {"study": dataclasses.asdict(study) | {"pis": [p.label() for p in pis]}, "config": _echo(cfg)}
    return [(cfg["out"], buf.getvalue()), (_sidecar(cfg["out"]), _json_text(meta))]


def cmd_summary(cfg: dict) -> list:
    _require(cfg, "input")
    data = read_edge_csv(cfg["input"], trade=cfg["trade"])
    return [(cfg["out"], _json_text(dataclasses.asdict(summary(data))))]


COMMANDS = {
    "estimate": cmd_estimate,
    "band": cmd_band,
    "counterfactual": cmd_counterfactual,
    "test2": cmd_test2,
    "simulate": cmd_simulate,
    "summary": cmd_summary,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags take precedence")
    common.add_argument("--input", help="edge-list CSV (i,j,w or i,j,flow_ij,flow_ji with --trade)")
    common.add_argument("--input2", help="second edge list (test2)")
    common.add_argument("--covariates", help="covariate CSV node,x0,x1 (counterfactual)")
    common.add_argument("--domain", help="inference domain a,b (default: range of the data)")
    common.add_argument("--grid", type=int, help="number of evaluation points")
    common.add_argument("--kernel", help="|".join(FAMILIES))
    common.add_argument("--p", type=int, help="kernel order for the bandwidth / estimate")
    common.add_argument("--p-prime", dest="p_prime", type=int, help="bias-corrected kernel order")
    common.add_argument("--alpha", type=float)
    common.add_argument("--B", type=int, help="Gaussian draws for the quantile")
    common.add_argument("--seed", type=int)
    common.add_argument("--trade", action="store_true", default=None, help="edge list holds two-way flows")
    common.add_argument("--out", help="output path")
    common.add_argument("--ridge", action="store_true", default=None, help="tiny diagonal ridge before PSD fitting")
    common.add_argument("--bandwidth", type=float, help="fixed bandwidth (estimate only)")
    common.add_argument("--p-index", dest="p_index", help="2 or inf (test2)")
    common.add_argument("--full-scale", dest="full_scale", action="store_true", default=None)
    common.add_argument("--reps", type=int)
    common.add_argument("--n", type=int)
    common.add_argument("--pi", action="append", help="latent type probabilities, e.g. 1/2,0,1/2")
    common.add_argument("--workers", type=int)

    parser = _Parser(prog="dyadkde", description="Dyadic kernel density estimation and inference.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "estimate": "density estimate on a grid",
        "band": "robust bias-corrected uniform confidence band",
        "counterfactual": "observed and counterfactual bands",
        "test2": "two-sample test of equal densities",
        "simulate": "Monte Carlo coverage study",
        "summary": "network summary statistics",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _glue_domain(argv: list) -> list:
    # "--domain -2,2" would otherwise be read as an unknown option
    out = []
    it = iter(argv)
    for arg in it:
        if arg == "--domain":
            nxt = next(it, None)
            out.append(arg if nxt is None else f"--domain={nxt}")
        else:
            out.append(arg)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_glue_domain(argv))
    try:
        cfg = resolve(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            outputs = COMMANDS[args.command](cfg)
        _emit(outputs)
    except UsageError as exc:
        print(f"dyadkde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DyadicInputError, DegenerateInputError, OSError, UnicodeDecodeError, csv.Error) as exc:
        print(f"dyadkde: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArithmeticError as exc:
        print(f"dyadkde: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # remaining validation failures come from settings, not the data
        print(f"dyadkde: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
