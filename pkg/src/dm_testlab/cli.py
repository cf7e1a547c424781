"""Command-line front end: ``dm-testlab {fit,test,power,simulate} --config run.json``.

Reports are JSON (default) or a long-format CSV of ``section,name,value``
rows.  Exit status is 0 on success, 2 for configuration or input errors
and 3 for numerical failures; failed runs still write a report carrying an
``error`` object.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import os
import sys
from importlib import metadata as importlib_metadata

import numpy as np

from .design import RegressionSpec
from .errors import ContractError, ConvergenceError, DomainError, RankError, UnsupportedFamilyError
from .expansion import (
    local_power,
    power_differences,
    precision_coefficients,
    precision_power_differences,
    subset_coefficients,
    subset_inputs,
)
from .family import builtin_family, resolve_link
from .fit import fit_full, fit_nested
from .sim import SimConfig, moments_experiment, power_experiment, rejection_experiment, uniform_covariates
from .teststats import precision_tests, subset_tests

log = logging.getLogger("dm_testlab")

COMMANDS = ("fit", "test", "power", "simulate")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_LEVELS = [0.10, 0.05, 0.01]


class ConfigError(ValueError):
    """The run configuration or its input files are unusable."""


# --------------------------------------------------------------------------- #
# Input
# --------------------------------------------------------------------------- #


def ingest_csv(path, response: str, covariates: list[str]):
    """Read a response vector and covariate matrix from a headed CSV file.

    Rows are numbered from 1 after the header; errors name the row and
    column of the offending cell.
    """
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot open data file {path!r}: {exc.strerror}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigError(f"data file {path!r} is empty") from None
        wanted = [response, *covariates]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise ConfigError(f"column(s) {missing} not in header of {path!r}; found {header}")
        index = [header.index(c) for c in wanted]
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            values = []
            for col, j in zip(wanted, index):
                cell = row[j].strip() if j < len(row) else ""
                if cell == "":
                    raise ConfigError(f"missing value at row {row_no}, column {col}")
                try:
                    value = float(cell)
                except ValueError:
                    raise ConfigError(f"cannot parse {cell!r} at row {row_no}, column {col}") from None
                if not math.isfinite(value):
                    raise ConfigError(f"non-finite value at row {row_no}, column {col}")
                values.append(value)
            rows.append(values)
    if not rows:
        raise ConfigError(f"data file {path!r} has no data rows")
    data = np.array(rows)
    log.info("read %d rows from %s", data.shape[0], path)
    return data[:, 0], data[:, 1:]


# --------------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------------- #


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"missing '{key}' in {where} block")
    return block[key]


def _float_list(value, where):
    try:
        out = [float(v) for v in np.atleast_1d(value)]
    except (TypeError, ValueError):
        raise ConfigError(f"{where} must be a number or list of numbers") from None
    return out


def resolve_config(raw: dict, command: str | None = None, seed: int | None = None) -> dict:
    """Fill defaults and check the blocks each command needs."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = copy.deepcopy(raw)
    cfg.pop("threads", None)
    cfg.pop("output", None)
    if command is not None:
        cfg["command"] = command
    if cfg.get("command") not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cfg.get('command')!r}")
    if seed is not None:
        cfg["seed"] = seed
    cfg["seed"] = int(cfg.get("seed", 0))
    if not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")

    model = cfg.setdefault("model", {})
    _require(model, "family", "model")
    _require(model, "link", "model")
    model.setdefault("link_scale", "theta")
    model.setdefault("predictor", "linear")
    if model["link_scale"] not in ("theta", "mean"):
        raise ConfigError("model.link_scale must be 'theta' or 'mean'")

    cmd = cfg["command"]
    if cmd in ("fit", "test") or (cmd == "power" and "data" in cfg):
        data = cfg.get("data")
        if not isinstance(data, dict):
            raise ConfigError(f"command {cmd!r} needs a data block")
        _require(data, "path", "data")
        _require(data, "response", "data")
        data.setdefault("covariates", [])
        data.setdefault("intercept", True)
    if cmd in ("test", "power"):
        hyp = cfg.get("hypothesis")
        if not isinstance(hyp, dict):
            raise ConfigError(f"command {cmd!r} needs a hypothesis block")
        hyp.setdefault("type", "subset")
        if hyp["type"] == "precision":
            hyp["phi0"] = float(_require(hyp, "phi0", "hypothesis"))
        elif hyp["type"] == "subset":
            if cmd == "test" and "beta20" not in hyp and "beta20_grid" not in hyp:
                raise ConfigError("subset test needs beta20 or beta20_grid")
        else:
            raise ConfigError("hypothesis.type must be 'subset' or 'precision'")
    if cmd == "power":
        power = cfg.get("power")
        if not isinstance(power, dict):
            raise ConfigError("command 'power' needs a power block")
        power.setdefault("levels", DEFAULT_LEVELS)
    if cmd == "simulate":
        sim = cfg.get("sim")
        if not isinstance(sim, dict):
            raise ConfigError("command 'simulate' needs a sim block")
        sim.setdefault("experiment", "rejection")
        sim.setdefault("levels", DEFAULT_LEVELS)
        sim.setdefault("replications", 1000)
        if sim["experiment"] not in ("rejection", "moments", "power"):
            raise ConfigError("sim.experiment must be 'rejection', 'moments' or 'power'")
    return cfg


def _model(cfg):
    m = cfg["model"]
    try:
        family = builtin_family(m["family"])
        link = resolve_link(family, m["link"], m["link_scale"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return family, link


def _wrap_angles(family, y):
    if not family.circular:
        return y
    wrapped = family.wrap_theta(y)
    moved = int(np.sum(wrapped != y))
    if moved:
        log.warning("wrapped %d angular responses into (-pi, pi]", moved)
    return wrapped


EXPCURVE_NAMES = ["level", "scale", "rate"]


def _is_expcurve(cfg):
    return cfg["model"]["predictor"] == "expcurve"


def _spec(cfg, X, q):
    p = len(EXPCURVE_NAMES) if _is_expcurve(cfg) else X.shape[1]
    try:
        return RegressionSpec(cfg["model"]["predictor"], X, p, q)
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def _design(cfg):
    data = cfg["data"]
    y, Z = ingest_csv(data["path"], data["response"], list(data["covariates"]))
    names = list(data["covariates"])
    if _is_expcurve(cfg):
        # η = level + scale·exp(rate·x): one covariate, no intercept column
        if Z.shape[1] != 1:
            raise ConfigError("predictor 'expcurve' needs exactly one covariate")
        return y, Z, list(EXPCURVE_NAMES)
    if data["intercept"]:
        Z = np.column_stack([np.ones(y.size), Z])
        names = ["(intercept)", *names]
    return y, Z, names


def _subset_order(hyp, names):
    """Column order with the tested coefficients last, and q."""
    p = len(names)
    if "indices" in hyp:
        if names == EXPCURVE_NAMES:
            raise ConfigError("hypothesis.indices is not available for 'expcurve'; use q")
        tested = []
        for item in hyp["indices"]:
            idx = names.index(item) if isinstance(item, str) and item in names else item
            if not isinstance(idx, int) or not 0 <= idx < p:
                raise ConfigError(f"hypothesis index {item!r} does not name a coefficient")
            tested.append(idx)
        order = [j for j in range(p) if j not in tested] + tested
        return order, p - len(tested)
    q = int(_require(hyp, "q", "hypothesis"))
    if not 0 <= q < p:
        raise ConfigError(f"hypothesis.q must satisfy 0 <= q < p = {p}")
    return list(range(p)), q


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _fit_summary(fit, names):
    se_beta, se_phi = fit.standard_errors()
    return {
        "coefficients": [
            {"name": nm, "estimate": float(b), "std_error": float(s)}
            for nm, b, s in zip(names, fit.beta_hat, se_beta)
        ],
        "phi": {"estimate": float(fit.phi_hat), "std_error": se_phi},
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "n": fit.n,
    }


def run_fit(cfg):
    family, link = _model(cfg)
    y, X, names = _design(cfg)
    y = _wrap_angles(family, y)
    spec = _spec(cfg, X, 0)
    return _fit_summary(fit_full(family, link, spec, y), names)


def run_test(cfg):
    family, link = _model(cfg)
    y, X, names = _design(cfg)
    y = _wrap_angles(family, y)
    hyp = cfg["hypothesis"]
    if hyp["type"] == "precision":
        spec = _spec(cfg, X, 0)
        full = fit_full(family, link, spec, y)
        quartet = precision_tests(family, y, full, hyp["phi0"])
        return {
            "fit": _fit_summary(full, names),
            "tests": [quartet.as_dict() | {"phi0": hyp["phi0"]}],
            "notes": list(quartet.notes),
        }
    order, q = _subset_order(hyp, names)
    if not _is_expcurve(cfg):
        X = X[:, order]
    names = [names[j] for j in order]
    spec = _spec(cfg, X, q)
    grid = hyp.get("beta20_grid", [hyp.get("beta20")])
    tests, best = [], None
    for beta20 in grid:
        beta20 = _float_list(beta20, "beta20")
        if len(beta20) != spec.p - q:
            raise ConfigError(f"beta20 needs {spec.p - q} values, got {len(beta20)}")
        full, restricted = fit_nested(family, link, spec, y, beta20)
        if best is None or full.loglik > best.loglik:
            best = full
        tests.append(subset_tests(full, restricted).as_dict() | {"beta20": beta20})
    return {"fit": _fit_summary(best, names), "tested": names[q:], "tests": tests}


def _power_design(cfg, p):
    if "data" in cfg:
        _, X, names = _design(cfg)
        return X, names
    power = cfg["power"]
    n = int(_require(power, "n", "power"))
    if _is_expcurve(cfg):
        return uniform_covariates(n, 2, cfg["seed"])[:, 1:], list(EXPCURVE_NAMES)
    X = uniform_covariates(n, p, cfg["seed"])
    return X, ["(intercept)"] + [f"x{j}" for j in range(2, p + 1)]


def run_power(cfg):
    family, link = _model(cfg)
    hyp, power = cfg["hypothesis"], cfg["power"]
    levels = _float_list(power["levels"], "power.levels")
    out = {"levels": levels, "points": []}
    if hyp["type"] == "precision":
        phi0 = hyp["phi0"]
        n = int(_require(power, "n", "power"))
        p = int(_require(power, "p", "power"))
        for phi in _float_list(_require(power, "phi", "power"), "power.phi"):
            table = precision_coefficients(family, p, phi0, phi - phi0, n)
            out["points"].append(_power_point(table, levels, lambda g, phi=phi: precision_power_differences(family, phi, phi0, g, n)) | {"phi": phi})
        return out
    beta = _float_list(_require(power, "beta", "power"), "power.beta")
    X, names = _power_design(cfg, len(beta))
    order, q = _subset_order(hyp, names)
    if not _is_expcurve(cfg):
        X = X[:, order]
    beta = np.array(beta)[order]
    spec = _spec(cfg, X, q)
    beta20 = _float_list(hyp["beta20"], "beta20") if "beta20" in hyp else list(beta[q:])
    beta_null = beta.copy()
    beta_null[q:] = beta20
    phi = float(_require(power, "phi", "power"))
    grid = power.get("epsilon_grid", [power.get("epsilon", [0.0] * (spec.p - q))])
    for eps in grid:
        eps = _float_list(eps, "epsilon")
        if len(eps) != spec.p - q:
            raise ConfigError(f"epsilon needs {spec.p - q} values, got {len(eps)}")
        inputs = subset_inputs(family, link, spec, beta_null, phi, np.array(eps))
        table = subset_coefficients(inputs)
        out["points"].append(_power_point(table, levels, lambda g, i=inputs: power_differences(i, g)) | {"epsilon": eps})
    return out


def _power_point(table, levels, compare):
    point = {"noncentrality": table.noncentrality, "df": table.df, "b": table.b.tolist(), "by_level": []}
    for g in levels:
        lp = local_power(table, g)
        comp = compare(g)
        point["by_level"].append(
            {
                "gamma": g,
                "power": dict(zip(("S1", "S2", "S3", "S4"), lp.values)),
                "clamped": lp.clamped,
                "k": list(comp.k),
                "differences": comp.differences,
                "verdicts": comp.verdicts,
                "ordering": comp.ordering,
            }
        )
    return point


def run_simulate(cfg, threads):
    family, _ = _model(cfg)
    sim = cfg["sim"]
    model = cfg["model"]
    hyp = cfg.get("hypothesis", {"type": "subset"})
    try:
        p = int(_require(sim, "p", "sim"))
        config = SimConfig(
            family=model["family"],
            link=model["link"],
            link_scale=model["link_scale"],
            predictor=model["predictor"],
            n=int(_require(sim, "n", "sim")),
            p=p,
            q=int(sim.get("q", p - 2 if hyp.get("type", "subset") == "subset" else 0)),
            beta=_float_list(_require(sim, "beta", "sim"), "sim.beta"),
            phi=float(_require(sim, "phi", "sim")),
            hypothesis=hyp.get("type", "subset"),
            beta20=hyp.get("beta20"),
            phi0=hyp.get("phi0"),
            nominal_levels=_float_list(sim["levels"], "sim.levels"),
            replications=int(sim["replications"]),
            master_seed=cfg["seed"],
            covariate_rule=sim.get("covariate_rule", "uniform01-fixed"),
            covariates=sim.get("covariates"),
        )
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    runner = {"rejection": rejection_experiment, "moments": moments_experiment, "power": power_experiment}
    report = runner[sim["experiment"]](config, threads=threads)
    return report.as_dict()


# --------------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------------- #


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value) if math.isfinite(value) else None
    return value


def _flatten(prefix, value, rows):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, rows)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, value))


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "name", "value"])
    for section in ("status", "command", "result", "error", "metadata", "config"):
        if section not in report:
            continue
        rows = []
        _flatten("", report[section], rows)
        for name, value in rows:
            writer.writerow([section, name, "" if value is None else value])
    return buf.getvalue()


def _version():
    try:
        return importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        return "0+unknown"


def execute(cfg_raw: dict, command=None, seed=None, threads=None):
    """Run one command; returns ``(report, exit_code)``."""
    report = {"status": "ok", "metadata": {"version": _version()}}
    try:
        cfg = resolve_config(cfg_raw, command, seed)
        report["command"] = cfg["command"]
        report["config"] = cfg
        if cfg["command"] == "fit":
            result = run_fit(cfg)
        elif cfg["command"] == "test":
            result = run_test(cfg)
        elif cfg["command"] == "power":
            result = run_power(cfg)
        else:
            result = run_simulate(cfg, threads)
        report["result"] = result
        if cfg["command"] in ("power", "test"):
            report["metadata"]["noncentrality_convention"] = "eps' K22.1 eps, chi-square mean df + lambda"
        code = EXIT_OK
    except (ConfigError, ContractError, UnsupportedFamilyError, KeyError, TypeError) as exc:
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": EXIT_CONFIG}
        code = EXIT_CONFIG
    except (ConvergenceError, DomainError, RankError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": EXIT_NUMERIC}
        code = EXIT_NUMERIC
    return _clean(report), code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dm-testlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--output", help="report path (default: stdout)")
    parser.add_argument("--format", choices=("json", "csv"), help="report format (default json)")
    parser.add_argument("--seed", type=int, help="unsigned 64-bit seed; overrides the config")
    parser.add_argument("--threads", type=int, help="worker processes for simulate (env DM_TESTLAB_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        report = {"status": "error", "error": {"type": type(exc).__name__, "message": str(exc), "exit_code": EXIT_CONFIG}}
        sys.stdout.write(render(report, "json"))
        return EXIT_CONFIG
    output_block = raw.get("output", {}) if isinstance(raw, dict) else {}
    fmt = args.format or output_block.get("format", "json")
    path = args.output or output_block.get("path")
    threads = args.threads
    if threads is None and os.environ.get("DM_TESTLAB_THREADS"):
        threads = int(os.environ["DM_TESTLAB_THREADS"])
    report, code = execute(raw, args.command, args.seed, threads)
    text = render(report, fmt)
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if code:
        print(f"dm-testlab: {report['error']['message']}", file=sys.stderr)
    return code
