"""Command-line front end: run one scenario config or verify a suite.

    batterybench run scenario.json --out results/ [--figures]
    batterybench verify suite.json --out results/

A scenario writes ``<name>.csv`` (one row per sample, 17 significant
digits) and ``<name>.json`` (summary).  Exit codes: 0 ok, 1 malformed
config, 2 guard trip, 3 bound violation beyond tolerance.
"""
from __future__ import annotations

import argparse
import concurrent.futures as cf
import csv
import io
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import battery as bt
from . import bounds as bd
from . import engine as en
from .dynamics import CompositeModel, GuardViolation, Guards, LindbladModel, evolve
from .opcore import (
    Operator,
    ket_bra,
    partial_trace,
    sigma_x,
    sigma_y,
    sigma_z,
    tensor_product,
)

log = logging.getLogger("batterybench")

SCHEMA_VERSION = 1
KINDS = ("engine", "composite-unitary", "lindblad-battery", "bound-fuzz")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GUARD = 2
EXIT_VIOLATION = 3


class ConfigError(ValueError):
    """Malformed scenario or suite; the message names the offending field."""


# -- operator specs ----------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _args(text: Optional[str], where: str) -> list:
    if not text:
        return []
    try:
        return [float(a) for a in text.split(",")]
    except ValueError:
        raise ConfigError(f"{where}: preset arguments must be numbers, got {text!r}") from None


def _int_args(vals: list, n: int, where: str) -> list:
    if len(vals) != n or any(v != int(v) for v in vals):
        raise ConfigError(f"{where}: expected {n} integer argument(s)")
    return [int(v) for v in vals]


def _random_hermitian(n: int, rng) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return 0.5 * (a + a.conj().T)


def _random_density(n: int, rng) -> np.ndarray:
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    r = a @ a.conj().T
    return r / np.trace(r).real


def _preset(text: str, rng, where: str) -> Operator:
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"{where}: cannot parse operator preset {text!r}")
    name, raw = m.group(1), m.group(2)
    a = _args(raw, where)
    simple = {"sigma_x": sigma_x, "sigma_y": sigma_y, "sigma_z": sigma_z,
              "sigma_minus": lambda: ket_bra(0, 1, 2),
              "sigma_plus": lambda: ket_bra(1, 0, 2)}
    if name in simple:
        if a:
            raise ConfigError(f"{where}: preset {name} takes no arguments")
        return simple[name]()
    if name == "identity":
        (n,) = _int_args(a, 1, where)
        return Operator.from_array(np.eye(n))
    if name == "maximally_mixed":
        (n,) = _int_args(a, 1, where)
        return Operator.from_array(np.eye(n) / n)
    if name == "diag":
        if not a:
            raise ConfigError(f"{where}: diag needs at least one entry")
        return Operator.from_array(np.diag(a))
    if name == "ladder":
        if len(a) != 3:
            raise ConfigError(f"{where}: ladder(n_min, n_max, eps) takes 3 arguments")
        lo, hi = _int_args(a[:2], 2, where)
        if hi < lo:
            raise ConfigError(f"{where}: ladder needs n_min <= n_max")
        return Operator.from_array(np.diag(a[2] * np.arange(lo, hi + 1, dtype=float)))
    if name == "basis_projector":
        k, n = _int_args(a, 2, where)
        if not 0 <= k < n:
            raise ConfigError(f"{where}: basis index {k} out of range")
        return ket_bra(k, k, n)
    if name == "ket_bra":
        i, j, n = _int_args(a, 3, where)
        if not (0 <= i < n and 0 <= j < n):
            raise ConfigError(f"{where}: basis index out of range")
        return ket_bra(i, j, n)
    if name == "random_hermitian":
        (n,) = _int_args(a, 1, where)
        return Operator.from_array(_random_hermitian(n, rng))
    if name == "random_density":
        (n,) = _int_args(a, 1, where)
        return Operator.from_array(_random_density(n, rng))
    raise ConfigError(f"{where}: unknown operator preset {name!r}")


def _scalar(v, where: str) -> complex:
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
        return complex(v[0], v[1])
    raise ConfigError(f"{where}: expected a number or a [re, im] pair")


def parse_operator(spec, rng, where: str = "operator") -> Operator:
    """Build an operator from a preset string, a nested ``[re, im]`` matrix,
    or a ``kron`` / ``sum`` / ``scale`` combination of those."""
    if isinstance(spec, str):
        return _preset(spec, rng, where)
    if isinstance(spec, list):
        if not spec or not all(isinstance(r, list) and len(r) == len(spec) for r in spec):
            raise ConfigError(f"{where}: matrix must be a non-empty square nested list")
        data = np.array([[_scalar(v, f"{where}[{i}][{j}]") for j, v in enumerate(row)]
                         for i, row in enumerate(spec)])
        return Operator.from_array(data)
    if isinstance(spec, dict):
        if len(spec) == 1 and "kron" in spec:
            parts = [parse_operator(s, rng, f"{where}.kron[{i}]")
                     for i, s in enumerate(_list(spec["kron"], f"{where}.kron"))]
            return tensor_product(*parts)
        if len(spec) == 1 and "sum" in spec:
            parts = [parse_operator(s, rng, f"{where}.sum[{i}]")
                     for i, s in enumerate(_list(spec["sum"], f"{where}.sum"))]
            if len({p.dim for p in parts}) != 1:
                raise ConfigError(f"{where}.sum: terms have different dimensions")
            return Operator(parts[0].layout, sum(p.data for p in parts))
        if set(spec) == {"scale", "op"}:
            c = _scalar(spec["scale"], f"{where}.scale")
            return parse_operator(spec["op"], rng, f"{where}.op") * c
        raise ConfigError(f"{where}: operator object must be {{kron}}, {{sum}} or {{scale, op}}")
    raise ConfigError(f"{where}: unsupported operator spec of type {type(spec).__name__}")


def _list(v, where) -> list:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list")
    return v


# -- config validation -------------------------------------------------------

_TOP = {"schema_version", "name", "kind", "bath", "integration", "guards",
        "tolerances", "seed", "model", "output", "description"}
_INTEGRATION = {"t_final", "h", "sample_stride"}
_GUARDS = {f.name for f in fields(Guards)}
_TOLERANCES = {"slack", "oracle_rtol", "oracle_atol"}
_MODEL = {
    "engine": {"params", "initial", "oracle"},
    "composite-unitary": {"dims", "H_SBA", "H_W", "V", "rho0", "bounded_below"},
    "lindblad-battery": {"H_W", "H_tilde", "jumps", "rho0", "bounded_below"},
    "bound-fuzz": {"instances", "max_dim", "rate_scale"},
}
_ENGINE_PARAMS = {f.name for f in fields(en.EngineParams)}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    for k in d:
        if k not in allowed:
            prefix = f"{where}." if where else ""
            raise ConfigError(f"unknown field '{prefix}{k}'")


def _number(d, key, where, default=None, positive=False, integer=False):
    v = d.get(key, default)
    if v is None:
        raise ConfigError(f"missing field '{where}.{key}'")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field '{where}.{key}' must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"field '{where}.{key}' must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"field '{where}.{key}' must be positive")
    return int(v) if integer else float(v)


def load_config(source) -> dict:
    """Read and validate a scenario config (path, JSON text, or dict)."""
    if isinstance(source, dict):
        cfg = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        cfg.setdefault("name", Path(source).stem)
    _check_keys(cfg, _TOP, "")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version' must be {SCHEMA_VERSION}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"field 'kind' must be one of {', '.join(KINDS)}")
    _check_keys(cfg.get("integration", {}), _INTEGRATION, "integration")
    _check_keys(cfg.get("guards", {}), _GUARDS, "guards")
    _check_keys(cfg.get("tolerances", {}), _TOLERANCES, "tolerances")
    model = cfg.get("model", {})
    _check_keys(model, _MODEL[kind], "model")
    if kind == "engine":
        _check_keys(model.get("params", {}), _ENGINE_PARAMS, "model.params")
    if "seed" in cfg:
        _number(cfg, "seed", "config", integer=True)
    try:
        bt.ReferenceBath.parse(cfg.get("bath", "infinite"))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"field 'bath': {e}") from None
    cfg.setdefault("name", kind)
    return cfg


# -- scenario execution ------------------------------------------------------

CSV_COLUMNS = {
    "engine": ["t", "e_W", "dW", "P", "sigma_F", "sigma_V", "bound_iso", "slack",
               "trace_drift", "edge_pop", "min_eig", "Delta", "Gamma1", "Gamma2",
               "A", "alpha", "m_b", "m_c", "m_d"],
    "composite-unitary": ["t", "e_W", "dW", "P", "sigma_F", "sigma_V", "bound_iso",
                          "slack", "trace_drift", "edge_pop", "min_eig", "purity", "clamped"],
    "lindblad-battery": ["t", "e_W", "dW", "P", "sigma_F", "sigma_Htilde", "bound_open",
                         "bound_hermitian", "slack", "slack_hermitian", "trace_drift",
                         "edge_pop", "min_eig", "clamped"],
}


class Result:
    def __init__(self, name, kind, columns, rows, summary, exit_code, series=None):
        self.series = series or {}
        self.name = name
        self.kind = kind
        self.columns = columns
        self.rows = rows
        self.summary = summary
        self.exit_code = exit_code


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, math.nan)) for c in columns])
    return buf.getvalue()


def _integration(cfg):
    it = cfg.get("integration", {})
    t_final = _number(it, "t_final", "integration", 10.0, positive=True)
    h = _number(it, "h", "integration", 0.01, positive=True)
    stride = _number(it, "sample_stride", "integration", 1, positive=True, integer=True)
    return t_final, h, stride


def _guards(cfg, **defaults) -> Guards:
    g = dict(defaults)
    g.update(cfg.get("guards", {}))
    return Guards(**g)


def _slack_tol(cfg) -> float:
    return float(cfg.get("tolerances", {}).get("slack", bd.SLACK_TOL))


def _trajectory_rows(tr) -> list:
    rows = []
    for i, t in enumerate(tr.times):
        row = {"t": t}
        for k, v in tr.records.items():
            row[k] = v[i]
        rows.append(row)
    return rows


def _violations(rows, tol, keys=("slack",)) -> dict:
    out = {}
    for key in keys:
        bad = [r for r in rows if key in r and not math.isnan(r[key])
               and not r.get("clamped", 0) and r[key] < tol]
        out[key] = {"count": len(bad), "first_t": bad[0]["t"] if bad else None,
                    "min": min((r[key] for r in rows if key in r and not math.isnan(r[key])),
                               default=None)}
    return out


def _base_summary(cfg, rows, tol, keys) -> dict:
    viol = _violations(rows, tol, keys)
    last = rows[-1] if rows else {}
    return {
        "name": cfg["name"], "kind": cfg["kind"], "schema_version": SCHEMA_VERSION,
        "bath": cfg.get("bath", "infinite"),
        "samples": len(rows),
        "slack_tolerance": tol,
        "P0": rows[0]["P"] if rows else None,
        "sigma_F0": rows[0]["sigma_F"] if rows else None,
        "final": {k: v for k, v in last.items() if not (isinstance(v, float) and math.isnan(v))},
        "violations": viol,
        "max_trace_drift": max((r["trace_drift"] for r in rows), default=None),
        "clamped_samples": int(sum(1 for r in rows if r.get("clamped", 0))),
    }


def _run_engine(cfg, rng):
    model = cfg.get("model", {})
    bath = bt.ReferenceBath.parse(cfg.get("bath", "infinite"))
    if not bath.infinite:
        raise ConfigError("field 'bath': the engine battery has no ground state; "
                          "only an infinite bath is supported")
    try:
        params = en.EngineParams(**model.get("params", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"field 'model.params': {e}") from None
    initial = model.get("initial", en.DIAG)
    if initial not in en.INITIAL_KINDS:
        raise ConfigError(f"field 'model.initial' must be one of {', '.join(en.INITIAL_KINDS)}")
    t_final, h, stride = _integration(cfg)
    guards = _guards(cfg, edge_threshold=params.edge_threshold, positivity_stride=10)
    tol = cfg.get("tolerances", {})
    run = en.run_engine(params, initial, t_final, h, stride, guards,
                        rtol=tol.get("oracle_rtol", 1e-5), atol=tol.get("oracle_atol", 1e-8),
                        seed=cfg.get("seed"))
    rows = _trajectory_rows(run.full)
    extra = {"params": run.full.meta["params"], "initial": initial,
             "phase_convention": en.PHASE_CONVENTION,
             "P0_analytic": en.initial_power(params) if initial == en.PSI_N else None}
    if extra["P0_analytic"] is not None:
        extra["P0_error"] = abs(rows[0]["P"] - extra["P0_analytic"])
    if model.get("oracle", True):
        extra["oracle"] = {"ok": run.oracle_ok, "deviations": run.comparison}
        extra["_series"] = {"reduced": {"times": run.reduced.times,
                                        **{k: run.reduced[k] for k in ("e_W", "P", "sigma_F")}}}
    return rows, extra, ("slack",)


def _state(spec, rng, where, layout) -> Operator:
    rho = parse_operator(spec, rng, where)
    if rho.dim != layout.total:
        raise ConfigError(f"{where}: dimension {rho.dim} does not match layout {layout.dims}")
    if not rho.is_density():
        raise ConfigError(f"{where}: not a density matrix")
    return Operator(layout, rho.data)


def _run_composite(cfg, rng):
    m = cfg.get("model", {})
    for key in ("dims", "H_SBA", "H_W", "V", "rho0"):
        if key not in m:
            raise ConfigError(f"missing field 'model.{key}'")
    dims = m["dims"]
    if (not isinstance(dims, list) or len(dims) < 2
            or not all(isinstance(d, int) and d >= 1 for d in dims)):
        raise ConfigError("field 'model.dims' must list at least two positive integers")
    try:
        model = CompositeModel(tuple(dims), parse_operator(m["H_SBA"], rng, "model.H_SBA"),
                               parse_operator(m["H_W"], rng, "model.H_W"),
                               parse_operator(m["V"], rng, "model.V"),
                               bounded_below=m.get("bounded_below", True))
    except ValueError as e:
        raise ConfigError(f"field 'model': {e}") from None
    rho0 = _state(m["rho0"], rng, "model.rho0", model.layout)
    bath = bt.ReferenceBath.parse(cfg.get("bath", "infinite"))
    t_final, h, stride = _integration(cfg)
    nb = len(dims) - 1

    def purity(rho):
        return {"purity": float(np.sum(np.abs(rho.data) ** 2))}

    tr = evolve(model, rho0, t_final, h, stride, _guards(cfg), bath, extra=purity)
    rows = _trajectory_rows(tr)
    p = [r["purity"] for r in rows]
    return rows, {"purity_drift": max(p) - min(p), "battery_factor": nb}, ("slack",)


def _run_lindblad(cfg, rng):
    m = cfg.get("model", {})
    for key in ("H_W", "rho0"):
        if key not in m:
            raise ConfigError(f"missing field 'model.{key}'")
    H_W = parse_operator(m["H_W"], rng, "model.H_W")
    if "H_tilde" in m:
        H_t = parse_operator(m["H_tilde"], rng, "model.H_tilde")
    else:
        H_t = Operator(H_W.layout, np.zeros((H_W.dim, H_W.dim)))
    jumps = []
    for i, j in enumerate(m.get("jumps", [])):
        where = f"model.jumps[{i}]"
        _check_keys(j, {"rate", "op"}, where)
        jumps.append((_number(j, "rate", where), parse_operator(j.get("op"), rng, f"{where}.op")))
    try:
        model = LindbladModel(H_W, H_t, jumps, bounded_below=m.get("bounded_below", True))
    except ValueError as e:
        raise ConfigError(f"field 'model': {e}") from None
    rho0 = _state(m["rho0"], rng, "model.rho0", H_W.layout)
    bath = bt.ReferenceBath.parse(cfg.get("bath", "infinite"))
    t_final, h, stride = _integration(cfg)
    tr = evolve(model, rho0, t_final, h, stride, _guards(cfg), bath)
    rows = _trajectory_rows(tr)
    keys = ("slack", "slack_hermitian") if bd.all_jumps_hermitian(model) else ("slack",)
    extra = {"hermitian_jumps": bd.all_jumps_hermitian(model)}
    if "bound_hermitian" in tr.records:
        gap = tr["bound_hermitian"] - tr["bound_open"]
        extra["min_hermitian_minus_open"] = float(np.min(gap))
    return rows, extra, keys


FUZZ_COLUMNS = ["instance", "check", "dim", "power", "bound", "slack", "clamped"]


def _run_fuzz(cfg, rng):
    """Random instances of every bound; the Hermitian-jump form is reported
    as a diagnostic because it does not follow from the open bound."""
    m = cfg.get("model", {})
    n_inst = _number(m, "instances", "model", 200, positive=True, integer=True)
    max_dim = _number(m, "max_dim", "model", 4, integer=True)
    rate_scale = _number(m, "rate_scale", "model", 0.5, positive=True)
    if max_dim < 2:
        raise ConfigError("field 'model.max_dim' must be at least 2")
    bath = bt.ReferenceBath.parse(cfg.get("bath", "infinite"))
    rows = []
    agree = 0.0
    chain_bad = 0
    herm_cex = 0
    herm_vs_open = 0
    for k in range(n_inst):
        dW = int(rng.integers(2, max_dim + 1))
        dA = int(rng.integers(2, max_dim + 1))
        H_W = Operator.from_array(_random_hermitian(dW, rng))
        # isolated
        rho = Operator((dA, dW), _random_density(dA * dW, rng))
        V = Operator((dA, dW), _random_hermitian(dA * dW, rng))
        rho_W = partial_trace(rho, [1])
        rep = bt.free_energy_operator(rho_W, H_W, bath)
        iso = bd.bound_isolated(rho, rep, V)
        rows.append({"instance": k, "check": "isolated", "dim": dA * dW, "power": iso.power,
                     "bound": iso.bound_value, "slack": iso.slack, "clamped": iso.clamped})
        l1, l2, l3 = bd.isolated_chain(rho, rep.F, V)
        chain_bad += int(l1 > l2 + 1e-10 or l2 > l3 + 1e-10)
        # open, generic jumps
        rW = Operator.from_array(_random_density(dW, rng))
        rep = bt.free_energy_operator(rW, H_W, bath)
        jumps = [(rate_scale * float(rng.random()), _random_hermitian(dW, rng)
                  + 1j * _random_hermitian(dW, rng)) for _ in range(int(rng.integers(1, 3)))]
        lm = LindbladModel(H_W, _random_hermitian(dW, rng), jumps)
        op = bd.bound_open(rW, rep, lm)
        rows.append({"instance": k, "check": "open", "dim": dW, "power": op.power,
                     "bound": op.bound_value, "slack": op.slack, "clamped": op.clamped})
        for _, L in lm.jumps:
            agree = max(agree, abs(bd.commutator_second_moment(rW, rep.F, L)
                                   - bd.commutator_second_moment_eigen(rW, rep.F, L)))
        # Hermitian jumps: open bound is asserted, the Hermitian form is diagnostic
        hjumps = [(rate_scale * float(rng.random()), _random_hermitian(dW, rng))]
        hm_model = LindbladModel(H_W, _random_hermitian(dW, rng), hjumps)
        op_h = bd.bound_open(rW, rep, hm_model)
        hm = bd.bound_hermitian(rW, rep, hm_model)
        rows.append({"instance": k, "check": "open_hermitian", "dim": dW, "power": op_h.power,
                     "bound": op_h.bound_value, "slack": op_h.slack, "clamped": op_h.clamped})
        rows.append({"instance": k, "check": "hermitian_form", "dim": dW, "power": hm.power,
                     "bound": hm.bound_value, "slack": hm.slack, "clamped": hm.clamped})
        herm_cex += int(hm.slack < bd.SLACK_TOL and not hm.clamped)
        herm_vs_open += int(hm.bound_value < op_h.bound_value - 1e-10)
    tol = _slack_tol(cfg)
    asserted = [r for r in rows if r["check"] != "hermitian_form"]
    bad = [r for r in asserted if not r["clamped"] and r["slack"] < tol]
    extra = {
        "instances": n_inst,
        "violations": {"slack": {"count": len(bad),
                                 "first_instance": bad[0]["instance"] if bad else None,
                                 "min": min(r["slack"] for r in asserted)}},
        "chain_violations": chain_bad,
        "moment_path_max_diff": agree,
        "diagnostics": {"hermitian_form_counterexamples": herm_cex,
                        "hermitian_below_open": herm_vs_open},
    }
    return rows, extra


def execute(cfg: dict) -> Result:
    """Run a validated config in memory."""
    kind = cfg["kind"]
    rng = np.random.default_rng(cfg.get("seed", 0))
    tol = _slack_tol(cfg)
    t0 = time.perf_counter()
    if kind == "bound-fuzz":
        rows, extra = _run_fuzz(cfg, rng)
        summary = {"name": cfg["name"], "kind": kind, "schema_version": SCHEMA_VERSION,
                   "bath": cfg.get("bath", "infinite"), "seed": cfg.get("seed", 0),
                   "slack_tolerance": tol, **extra}
        failed = extra["violations"]["slack"]["count"] > 0 or extra["chain_violations"] > 0
        summary["status"] = "violation" if failed else "ok"
        summary["elapsed_s"] = time.perf_counter() - t0
        return Result(cfg["name"], kind, FUZZ_COLUMNS, rows, summary,
                      EXIT_VIOLATION if failed else EXIT_OK)
    runner = {"engine": _run_engine, "composite-unitary": _run_composite,
              "lindblad-battery": _run_lindblad}[kind]
    columns = CSV_COLUMNS[kind]
    try:
        rows, extra, keys = runner(cfg, rng)
    except ConfigError:
        raise
    except GuardViolation as gv:
        rows = _trajectory_rows(gv.trajectory)
        summary = _base_summary(cfg, rows, tol, ("slack",)) if rows else {
            "name": cfg["name"], "kind": kind}
        summary.update({"status": "guard", "guard": {"kind": gv.kind, "time": gv.time,
                                                     "value": gv.value}})
        summary["elapsed_s"] = time.perf_counter() - t0
        return Result(cfg["name"], kind, columns, rows, summary, EXIT_GUARD)
    except ValueError as e:
        raise ConfigError(f"field 'model': {e}") from None
    series = extra.pop("_series", None)
    summary = _base_summary(cfg, rows, tol, keys)
    summary.update(extra)
    if tol != bd.SLACK_TOL:
        summary["note"] = "non-default slack tolerance"
    failed = any(v["count"] > 0 for v in summary["violations"].values())
    summary["status"] = "violation" if failed else "ok"
    summary["elapsed_s"] = time.perf_counter() - t0
    return Result(cfg["name"], kind, columns, rows, summary,
                  EXIT_VIOLATION if failed else EXIT_OK, series)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _json_clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {k: _json_clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_json_clean(v) for v in o]
    return o


def write_result(res: Result, out: Path, figures: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{res.name}.csv", "json": out / f"{res.name}.json"}
    paths["csv"].write_text(csv_text(res.columns, res.rows))
    if figures:
        from . import plotting

        paths["figure"] = plotting.render(res, out / f"{res.name}.png")
    summary = dict(res.summary)
    summary["exit_code"] = res.exit_code
    summary["files"] = {k: str(v) for k, v in paths.items()}
    paths["json"].write_text(json.dumps(_json_clean(summary), indent=2,
                                        default=_json_default) + "\n")
    return summary


def _out_dir(out: Optional[Path], cfg: dict) -> Path:
    if out is not None:
        return Path(out)
    return Path(cfg.get("output", "."))


def run_file(path, out: Optional[Path] = None, figures: bool = False) -> int:
    try:
        cfg = load_config(path)
        res = execute(cfg)
    except ConfigError as e:
        log.error("%s: %s", path, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    write_result(res, _out_dir(out, cfg), figures)
    print(f"{res.name}: {res.summary['status']} (exit {res.exit_code})")
    return res.exit_code


# -- verify ------------------------------------------------------------------

_SUITE_TOP = {"schema_version", "name", "scenarios", "description"}
_ENTRY = {"config", "criterion", "expect"}


def _get(d: dict, dotted: str):
    cur = d
    for part in dotted.split("."):
        if not isinstance(cur, dict) or part not in cur:
            raise KeyError(dotted)
        cur = cur[part]
    return cur


def check_expectations(summary: dict, exit_code: int, expect: dict) -> list:
    """Failed expectation messages; ``expect`` maps summary keys (dotted) to
    ``{abs_max, min, max, equals}`` or is the special key ``exit``."""
    fails = []
    want_exit = expect.get("exit", EXIT_OK)
    if exit_code != want_exit:
        fails.append(f"exit code {exit_code}, expected {want_exit}")
    for key, rule in expect.items():
        if key == "exit":
            continue
        try:
            val = _get(summary, key)
        except KeyError:
            fails.append(f"summary has no field {key}")
            continue
        for op, ref in rule.items():
            ok = {"abs_max": lambda: val is not None and abs(val) <= ref,
                  "min": lambda: val is not None and val >= ref,
                  "max": lambda: val is not None and val <= ref,
                  "equals": lambda: val == ref}.get(op)
            if ok is None:
                fails.append(f"unknown expectation {op!r} on {key}")
            elif not ok():
                fails.append(f"{key}={val!r} fails {op} {ref!r}")
    return fails


def load_suite(path) -> tuple[dict, list]:
    path = Path(path)
    try:
        suite = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read suite: {e}") from None
    _check_keys(suite, _SUITE_TOP, "")
    if suite.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"field 'schema_version' must be {SCHEMA_VERSION}")
    entries = suite.get("scenarios", [])
    if not isinstance(entries, list):
        raise ConfigError("field 'scenarios' must be a list")
    out = []
    for i, e in enumerate(entries):
        if isinstance(e, str):
            e = {"config": e}
        _check_keys(e, _ENTRY, f"scenarios[{i}]")
        if "config" not in e:
            raise ConfigError(f"missing field 'scenarios[{i}].config'")
        cfg_path = (path.parent / e["config"]) if not Path(e["config"]).is_absolute() \
            else Path(e["config"])
        out.append({"config": str(cfg_path), "criterion": str(e.get("criterion", "unlabeled")),
                    "expect": e.get("expect", {})})
    return suite, out


def _verify_one(entry: dict, out: Path, figures: bool) -> dict:
    try:
        cfg = load_config(entry["config"])
        res = execute(cfg)
    except ConfigError as e:
        return {"config": entry["config"], "criterion": entry["criterion"],
                "exit_code": EXIT_CONFIG, "pass": False, "failures": [str(e)]}
    summary = write_result(res, _out_dir(out, cfg), figures)
    fails = check_expectations(summary, res.exit_code, entry["expect"])
    return {"config": entry["config"], "name": res.name, "criterion": entry["criterion"],
            "exit_code": res.exit_code, "pass": not fails, "failures": fails}


def thread_cap() -> int:
    raw = os.environ.get("BATTERYBENCH_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring non-integer BATTERYBENCH_THREADS=%r", raw)
    return os.cpu_count() or 1


def verify(suite_path, out: Optional[Path] = None,
           figures: bool = False) -> tuple[int, dict]:
    _, entries = load_suite(suite_path)
    out = Path(out) if out is not None else Path(".")
    workers = min(thread_cap(), max(1, len(entries)))
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_verify_one, entries, [out] * len(entries),
                                  [figures] * len(entries)))
    else:
        results = [_verify_one(e, out, figures) for e in entries]
    criteria: dict = {}
    for r in results:
        c = criteria.setdefault(r["criterion"], {"pass": True, "scenarios": []})
        c["scenarios"].append(r)
        c["pass"] = c["pass"] and r["pass"]
    report = {"pass": all(c["pass"] for c in criteria.values()),
              "criteria": dict(sorted(criteria.items()))}
    out.mkdir(parents=True, exist_ok=True)
    (out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    for name, c in report["criteria"].items():
        print(f"criterion {name}: {'PASS' if c['pass'] else 'FAIL'}")
    if report["pass"]:
        return EXIT_OK, report
    codes = [r["exit_code"] for r in results if not r["pass"]]
    worst = max(codes)
    return (worst if worst != EXIT_OK else EXIT_VIOLATION), report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="batterybench",
                                 description="Quantum battery charging workbench")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one scenario config"),
                        ("verify", "run a suite and aggregate pass/fail per criterion")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("path", type=Path)
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: the config's 'output' field, else .)")
        p.add_argument("--figures", action="store_true",
                       help="also render a PNG figure per scenario")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return run_file(args.path, args.out, args.figures)
    try:
        code, _ = verify(args.path, args.out, args.figures)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
