"""Experiment configuration, execution and report emission.

A report carries the resolved configuration, named scalars, row tables and
tri-state verdicts. Every verdict stores the threshold it was judged against,
so an emitted report is self-describing. Wall-clock timings are kept on the
report object but never emitted, which keeps the output byte-identical across
runs and thread counts.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import calibration as cal
from .corpus import bump_corpus, bump_spec
from .counterexamples import FamilySpec, build_family, lower_grid, ratio_scan, tilde_pair, upper_grid
from .elliptic import (
    PRESETS,
    G_h_batch,
    caccioppoli_check,
    converse_pairings,
    heat_batch,
    offdiag_decay,
    poisson_batch,
    preset,
)
from .halfspace import Grid, make_grid
from .squarefns import averaging_identity_residual, compare_norms, lp_norm
from .weights import weight_preset, weighted_compare, weighted_identity_gap

SCHEMA = "lpsquare.report/1"
GRID_KEYS = ("n", "l", "nx", "nt", "tmin", "tmax")
FORMATS = ("json", "csv")

# fixed probe geometry
OFFDIAG_DISTANCE = 4.0
CACCIOPPOLI_POINTS = (-1.0, 0.0, 0.5, 2.0)
CACCIOPPOLI_ORDERS = (0, 1)
DEFAULT_N = {"lower": (16, 32, 64, 128, 256), "upper": (4, 8, 16, 32)}


class ConfigError(ValueError):
    """Invalid experiment configuration; the runner exits with status 2."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """User-facing settings. Unset fields take the experiment's defaults."""

    name: str
    grid: tuple = ()
    seed: int | None = None
    p: tuple | None = None
    N: tuple | None = None
    operator: tuple | None = None
    weight: tuple | None = None
    count: int | None = None
    workers: int = 1
    out: str | None = None
    format: str = "json"


@dataclass(frozen=True)
class Experiment:
    name: str
    summary: str
    defaults: dict
    grid_keys: tuple
    runner: Callable


_BASE_GRID = {"n": 1, "l": 16.0, "nx": 256, "nt": 64, "tmin": 1e-3, "tmax": 4.0}
_LONG_GRID = dict(_BASE_GRID, tmax=64.0)


def resolve(cfg: ExperimentConfig) -> dict:
    """Fill defaults and validate; the result is the config echoed in the report."""
    if cfg.name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {cfg.name!r}; choose from {', '.join(EXPERIMENTS)}")
    exp = EXPERIMENTS[cfg.name]
    if cfg.format not in FORMATS:
        raise ConfigError(f"unknown format {cfg.format!r}; use json or csv")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError(f"workers must be a positive integer, got {cfg.workers!r}")
    out = {"experiment": cfg.name}
    grid = dict(exp.defaults["grid"])
    for key, value in cfg.grid:
        if key not in exp.grid_keys:
            allowed = ", ".join(exp.grid_keys) or "none"
            raise ConfigError(f"{cfg.name} does not take grid key {key!r} (allowed: {allowed})")
        grid[key] = value
    out["grid"] = {k: grid[k] for k in GRID_KEYS if k in grid}
    for key in ("seed", "count", "p", "N", "operator", "weight"):
        given = getattr(cfg, key)
        if key not in exp.defaults:
            if given is not None:
                raise ConfigError(f"{cfg.name} does not take --{key}")
            continue
        value = exp.defaults[key] if given is None else given
        out[key] = list(value) if isinstance(value, tuple) else value
    if "count" in out and (not isinstance(out["count"], int) or out["count"] < 1):
        raise ConfigError(f"count must be a positive integer, got {out['count']!r}")
    for name in out.get("operator") or ():
        if name not in PRESETS:
            raise ConfigError(f"unknown operator preset {name!r}; choose from {', '.join(PRESETS)}")
    for value in out.get("p") or ():
        if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
            raise ConfigError(f"p must be positive and finite, got {value!r}")
    return out


def _grid(settings: dict, refine: int = 1) -> Grid:
    g = dict(settings["grid"])
    try:
        return make_grid(int(g["n"]), float(g["l"]), int(g["nx"]) * refine,
                         float(g.get("tmin", 0.1)), float(g.get("tmax", 1.0)),
                         int(g.get("nt", 2)) * refine)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad grid {g}: {exc}") from None


# ---------------------------------------------------------------------------
# report model


@dataclass(frozen=True)
class Verdict:
    name: str
    status: str
    value: float | None
    relation: str
    threshold: object
    note: str = ""


def _holds(value, relation: str, threshold) -> bool:
    if value is None or threshold is None:
        return False
    if relation == "<":
        return value < threshold
    if relation == "<=":
        return value <= threshold
    if relation == ">=":
        return value >= threshold
    if relation == "==":
        return value == threshold
    if relation == "in":
        return threshold[0] <= value <= threshold[1]
    if relation == "within":
        target, tol = threshold
        return abs(value - target) <= tol * abs(target)
    raise ValueError(f"unknown relation {relation!r}")


def verdict(name: str, value, relation: str, threshold, informational: bool = False,
            note: str = "") -> Verdict:
    """Judge ``value relation threshold``; informational verdicts never fail a run."""
    value = None if value is None else float(value)
    if isinstance(threshold, tuple):
        threshold = [float(v) for v in threshold]
    if informational:
        status = "info"
    else:
        status = "pass" if _holds(value, relation, threshold) else "fail"
    return Verdict(name, status, value, relation, threshold, note)


@dataclass
class Table:
    name: str
    columns: list
    rows: list


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    scalars: dict
    verdicts: list
    tables: list
    schema: str = SCHEMA
    timings: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def status(self) -> str:
        return "fail" if any(v.status == "fail" for v in self.verdicts) else "pass"

    @property
    def exit_code(self) -> int:
        return 1 if self.status == "fail" else 0

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


class _Context:
    def __init__(self, workers: int):
        self.workers = workers
        self.timings: dict[str, float] = {}

    def map(self, fn, items) -> list:
        items = list(items)
        if self.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


def _plain(x):
    """Numpy scalars and tuples to plain JSON-compatible Python values."""
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (tuple, list, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


def run(cfg: ExperimentConfig) -> ExperimentReport:
    """Resolve ``cfg``, run the experiment and collect its report.

    Module precondition violations surface as ConfigError naming the parameter.
    """
    settings = resolve(cfg)
    ctx = _Context(cfg.workers)
    try:
        scalars, tables, verdicts = EXPERIMENTS[cfg.name].runner(settings, ctx)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    tables = [Table(t.name, list(t.columns), _plain(t.rows)) for t in tables]
    return ExperimentReport(cfg.name, _plain(settings), _plain(scalars), verdicts, tables,
                            timings=ctx.timings)


# ---------------------------------------------------------------------------
# emission


def _encode(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, list):
        return [_encode(v) for v in x]
    if isinstance(x, dict):
        return {k: _encode(v) for k, v in x.items()}
    return x


_NONFINITE = {"inf": math.inf, "-inf": -math.inf, "nan": math.nan}


def _decode(x):
    if isinstance(x, str) and x in _NONFINITE:
        return _NONFINITE[x]
    if isinstance(x, list):
        return [_decode(v) for v in x]
    if isinstance(x, dict):
        return {k: _decode(v) for k, v in x.items()}
    return x


def to_json(report: ExperimentReport) -> str:
    obj = {
        "schema": report.schema,
        "experiment": report.experiment,
        "status": report.status,
        "config": report.config,
        "scalars": report.scalars,
        "verdicts": [{"name": v.name, "status": v.status, "value": v.value,
                      "relation": v.relation, "threshold": v.threshold, "note": v.note}
                     for v in report.verdicts],
        "tables": [{"name": t.name, "columns": t.columns, "rows": t.rows} for t in report.tables],
    }
    return json.dumps(_encode(obj), indent=1, allow_nan=False) + "\n"


def from_json(text: str | bytes) -> ExperimentReport:
    obj = _decode(json.loads(text))
    if obj.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {obj.get('schema')!r}")
    verdicts = [Verdict(v["name"], v["status"], v["value"], v["relation"], v["threshold"], v["note"])
                for v in obj["verdicts"]]
    tables = [Table(t["name"], t["columns"], t["rows"]) for t in obj["tables"]]
    return ExperimentReport(obj["experiment"], obj["config"], obj["scalars"], verdicts, tables,
                            obj["schema"])


def _cell(value, column: str) -> str:
    if value is None:
        # an undefined ratio is 0/0; other missing entries stay empty
        return "0/0" if "ratio" in column else ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ";".join(_cell(v, column) for v in value)
    if isinstance(value, dict):
        return ";".join(f"{k}={_cell(v, column)}" for k, v in value.items())
    return str(value)


def table_csv(columns, rows) -> str:
    """One table as CSV; an empty table gives the header line alone."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v, c) for v, c in zip(row, columns)])
    return buf.getvalue()


def to_csv(report: ExperimentReport) -> str:
    """Blocks separated by blank lines, each opened by a ``[name]`` line."""
    blocks = [
        "[report]\n" + table_csv(["key", "value"], [["schema", report.schema],
                                                    ["experiment", report.experiment],
                                                    ["status", report.status]]),
        "[config]\n" + table_csv(["key", "value"], [[k, v] for k, v in report.config.items()]),
        "[scalars]\n" + table_csv(["name", "value"], [[k, v] for k, v in report.scalars.items()]),
        "[verdicts]\n" + table_csv(["name", "status", "value", "relation", "threshold", "note"],
                                   [[v.name, v.status, v.value, v.relation, v.threshold, v.note]
                                    for v in report.verdicts]),
    ]
    blocks += [f"[table:{t.name}]\n" + table_csv(t.columns, t.rows) for t in report.tables]
    return "\n".join(blocks)


def emit(report: ExperimentReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return to_json(report).encode()
    if fmt == "csv":
        return to_csv(report).encode()
    raise ConfigError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# experiments


def _identity(s, ctx):
    g, g2 = _grid(s), _grid(s, refine=2)
    with ctx.stage("base grid"):
        r1 = ctx.map(averaging_identity_residual, bump_corpus(g, s["count"], s["seed"]))
    with ctx.stage("refined grid"):
        r2 = ctx.map(averaging_identity_residual, bump_corpus(g2, s["count"], s["seed"]))
    m1, m2 = max(r1), max(r2)
    halving = m1 / m2 if m2 > 0 else None
    rows = [[i, a, b, a / b if b > 0 else None] for i, (a, b) in enumerate(zip(r1, r2))]
    scalars = {"max_residual": m1, "max_residual_refined": m2, "halving_ratio": halving}
    verdicts = [
        verdict("max residual", m1, "<", cal.IDENTITY_TOL),
        verdict("corpus-max residual ratio under doubling", halving, "in", cal.HALVING_BAND),
    ]
    return scalars, [Table("fields", ["field", "residual", "residual_refined", "ratio"], rows)], verdicts


def _compare(s, ctx):
    g = _grid(s)
    ps = [float(p) for p in s["p"]]
    corpus = bump_corpus(g, s["count"], s["seed"])
    with ctx.stage("norms"):
        per_field = ctx.map(lambda F: [compare_norms(F, p) for p in ps], corpus)
    rows, verdicts, scalars = [], [], {}
    for j, p in enumerate(ps):
        recs = [pf[j] for pf in per_field]
        rows += [[i, r.p, r.norm_S, r.norm_V, r.ratio, r.explicit_bound, r.slack]
                 for i, r in enumerate(recs)]
        ratios = [r.ratio for r in recs if r.ratio is not None]
        top = max(ratios) if ratios else None
        scalars[f"max_ratio[p={p!r}]"] = top
        if p < 2:
            worst = min(r.slack for r in recs)
            scalars[f"min_slack[p={p!r}]"] = worst
            verdicts.append(verdict(f"explicit bound, p={p!r}", worst, ">=", 0.0))
        elif p == 4:
            verdicts.append(verdict("S/V ratio at p=4", top, "<", cal.P4_RATIO_CEILING, True,
                                    "corpus-calibrated ceiling"))
        else:
            verdicts.append(verdict(f"S/V ratio at p={p!r}", top, "<", None, True, "no ceiling"))
    cols = ["field", "p", "norm_S", "norm_V", "ratio", "explicit_bound", "slack"]
    return scalars, [Table("comparisons", cols, rows)], verdicts


def _counterexample(s, ctx):
    n = int(s["grid"]["n"])
    rows, verdicts, scalars = [], [], {}
    for p in (float(v) for v in s["p"]):
        if p == 1:
            raise ConfigError("p = 1 belongs to neither family; use p < 1 (lower) or p > 1 (upper)")
        family = "lower" if p < 1 else "upper"
        Ns = s["N"] if s["N"] is not None else DEFAULT_N[family]
        with ctx.stage(f"{family} scan"):
            scan = ratio_scan(family, p, Ns, n=n, workers=ctx.workers)
        rows += [list(r.values()) for r in scan.table()]
        scalars[f"fitted_slope[p={p!r}]"] = scan.fitted_slope
        if scan.fitted_slope is None:
            verdicts.append(verdict(f"{family} slope, p={p!r}", None, "within",
                                    (scan.expected_slope, cal.SLOPE_TOL), True,
                                    "a single N gives no slope"))
        else:
            verdicts.append(verdict(f"{family} slope, p={p!r}", scan.fitted_slope, "within",
                                    (scan.expected_slope, cal.SLOPE_TOL)))

        def structure(N, family=family):
            grid = lower_grid(N, n) if family == "lower" else upper_grid(N, n)
            spec = FamilySpec(family, N, grid)
            S, V = tilde_pair(build_family(spec))
            if family == "lower":
                inside = grid.radius < 1
                if np.any(V.values[~inside] != 0):
                    return math.inf
                return float(np.max(np.abs(V.values[inside] - 1)))
            return float(np.max(np.abs(S.values[grid.radius > 2]), initial=0.0))

        with ctx.stage(f"{family} structure"):
            devs = ctx.map(structure, Ns)
        if family == "lower":
            verdicts.append(verdict(f"vertical L1 equals the unit-ball indicator, p={p!r}",
                                    max(devs), "<=", cal.INDICATOR_TOL))
        else:
            verdicts.append(verdict(f"conical L1 vanishes beyond |x| = 2, p={p!r}",
                                    max(devs), "==", 0.0))
    cols = ["family", "n", "p", "N", "norm_S_tilde_p", "norm_V_tilde_p", "ratio", "fitted_slope",
            "expected_slope"]
    return scalars, [Table("scan", cols, rows)], verdicts


def _weighted(s, ctx):
    g = _grid(s)
    ps = [float(p) for p in s["p"]]
    corpus = bump_corpus(g, s["count"], s["seed"])
    rows, char_rows, verdicts, scalars = [], [], [], {}
    for spec in s["weight"]:
        w = weight_preset(spec, g)
        with ctx.stage(f"characteristics {spec}"):
            indices = sorted({1.0, 2.0} | {max(p / 2, 1.0) for p in ps})
            for idx in indices:
                char_rows.append([w.name, "A", idx, w.ap(idx)])
            for p in ps:
                if p < 2:
                    q = 2 / (2 - p)
                    char_rows.append([w.name, "RH", q, w.rh(q)])
            char_rows.append([w.name, "RH", math.inf, w.rh(math.inf)])
        for p in ps:
            with ctx.stage(f"norms {spec} p={p!r}"):
                recs = ctx.map(lambda F, p=p: weighted_compare(F, p, w), corpus)
            rows += [[i] + list(r.row().values()) for i, r in enumerate(recs)]
            if p > 2:
                side, vals = "S/V", [r.ratio for r in recs if r.ratio is not None]
            elif p < 2:
                side, vals = "V/S", [1 / r.ratio for r in recs if r.ratio]
            else:
                side, vals = "S/V", [r.ratio for r in recs if r.ratio is not None]
            top = max(vals) if vals else None
            scalars[f"max_{side}[{w.name},p={p!r}]"] = top
            ceiling = cal.WEIGHTED_CEILINGS.get((w.name, p))
            verdicts.append(verdict(f"weighted {side} ratio, {w.name}, p={p!r}", top, "<", ceiling,
                                    True, "corpus-calibrated ceiling" if ceiling else "no ceiling"))
        w3 = w.scaled(3.0)
        drift = max(abs(w3.ap(i) - w.ap(i)) / w.ap(i) for i in indices)
        verdicts.append(verdict(f"A_p unchanged under w -> 3w, {w.name}", drift, "<=", cal.SCALE_TOL,
                                note="relative change, rounding level"))
        with ctx.stage(f"identity {spec}"):
            gap = max(ctx.map(lambda F: weighted_identity_gap(F, w), corpus))
        verdicts.append(verdict(f"weighted averaging identity, {w.name}", gap, "<=",
                                cal.WEIGHTED_IDENTITY_TOL))
    cols = ["field", "weight", "p", "norm_S_w", "norm_V_w", "ratio", "ap_index", "ap_value",
            "rh_index", "rh_value", "relevant"]
    tables = [Table("comparisons", cols, rows),
              Table("characteristics", ["weight", "class", "index", "value"], char_rows)]
    return scalars, tables, verdicts


def _fourier_symbol(grid: Grid) -> np.ndarray:
    k = np.fft.fftfreq(grid.nx) * grid.nx
    parts = np.meshgrid(*([2 / grid.h**2 * (1 - np.cos(2 * np.pi * k / grid.nx))] * grid.n),
                        indexing="ij")
    return sum(parts)


def _semigroup(s, ctx):
    g = _grid(s)
    rng = np.random.default_rng(s["seed"])
    fs = np.stack([bump_spec(g, rng).sample(g).values for _ in range(s["count"])])
    checks = g.t[::8]
    norms = np.sqrt(np.sum(np.abs(fs) ** 2, axis=tuple(range(1, g.n + 1))))

    def contraction(U):
        u = np.sqrt(np.sum(np.abs(U) ** 2, axis=tuple(range(2, g.n + 2))))
        return float(np.max(u / norms[:, None] - 1))

    def one(name):
        L = preset(name, g)
        out = {"rows": [], "energy": []}
        H = heat_batch(L, fs, checks)
        out["heat_contraction"] = contraction(H)
        twice = np.stack([heat_batch(L, H[:, i], [t])[:, 0] for i, t in enumerate(checks)], axis=1)
        once = heat_batch(L, fs, 2 * checks)
        law = np.max(np.abs(twice - once), axis=(0,) + tuple(range(2, g.n + 2)))
        out["heat_law"] = float(law.max())
        out["rows"] += [[name, "heat law", float(t), float(e)] for t, e in zip(checks, law)]
        # without the spectral path every subordinated time costs a dense
        # exponential or a long march, so one representative time is checked
        pt = checks if L.uses_eig else checks[len(checks) // 2:len(checks) // 2 + 1]
        P = poisson_batch(L, fs, pt)
        out["poisson_contraction"] = contraction(P)
        Ptwice = np.stack([poisson_batch(L, P[:, i], [t])[:, 0] for i, t in enumerate(pt)], axis=1)
        Ponce = poisson_batch(L, fs, 2 * pt)
        plaw = np.max(np.abs(Ptwice - Ponce), axis=(0,) + tuple(range(2, g.n + 2)))
        out["poisson_law"] = float(plaw.max())
        out["rows"] += [[name, "poisson law", float(t), float(e)] for t, e in zip(pt, plaw)]
        if name == "identity":
            mu = _fourier_symbol(g)
            fh = np.fft.fftn(fs, axes=tuple(range(1, g.n + 1)))
            axes = tuple(range(2, g.n + 2))
            hx = np.fft.ifftn(fh[:, None] * np.exp(-checks.reshape((1, -1) + (1,) * g.n) * mu),
                              axes=axes).real
            px = np.fft.ifftn(fh[:, None] * np.exp(-checks.reshape((1, -1) + (1,) * g.n)
                                                   * np.sqrt(mu)), axes=axes).real
            herr = np.max(np.abs(H - hx), axis=(0,) + axes)
            perr = np.max(np.abs(P - px), axis=(0,) + axes)
            out["heat_oracle"], out["poisson_oracle"] = float(herr.max()), float(perr.max())
            out["rows"] += [[name, "heat oracle", float(t), float(e)] for t, e in zip(checks, herr)]
            out["rows"] += [[name, "poisson oracle", float(t), float(e)] for t, e in zip(checks, perr)]
        for i, G in enumerate(G_h_batch(L, fs, g)):
            gh2 = lp_norm(G, 2) ** 2
            half = 0.5 * float(np.sum(np.abs(fs[i]) ** 2)) * g.cell_volume
            out["energy"].append([name, i, gh2, half, L.lam * gh2, L.Lam * gh2])
        out["hermitian"], out["method"] = L.hermitian, L.default_method
        return out

    with ctx.stage("operators"):
        results = ctx.map(one, s["operator"])
    rows, energy, verdicts, scalars = [], [], [], {}
    for name, r in zip(s["operator"], results):
        rows += r["rows"]
        energy += r["energy"]
        ident = name == "identity"
        verdicts.append(verdict(f"heat contraction, {name}", r["heat_contraction"], "<=",
                                cal.CONTRACTION_TOL))
        verdicts.append(verdict(f"Poisson contraction, {name}", r["poisson_contraction"], "<=",
                                cal.CONTRACTION_TOL))
        cn = r["method"] == "cn"
        verdicts.append(verdict(f"heat semigroup law, {name}", r["heat_law"], "<=", cal.HEAT_TOL,
                                cn, "Crank-Nicolson step sequences differ" if cn else ""))
        note = "" if r["method"] == "eig" else "one check time"
        verdicts.append(verdict(f"Poisson semigroup law, {name}", r["poisson_law"], "<=",
                                cal.POISSON_TOL, not ident, note))
        if ident:
            scalars["heat_oracle_error"] = r["heat_oracle"]
            scalars["poisson_oracle_error"] = r["poisson_oracle"]
            verdicts.append(verdict("heat Fourier oracle", r["heat_oracle"], "<=", cal.HEAT_TOL))
            verdicts.append(verdict("Poisson Fourier oracle", r["poisson_oracle"], "<=",
                                    cal.POISSON_TOL, note="32-node subordination"))
            dev = max(abs(e[2] / e[3] - 1) for e in r["energy"] if e[3] > 0)
            scalars["identity_energy_deviation"] = dev
            verdicts.append(verdict("||G_h f||^2 = ||f||^2 / 2", dev, "<=", cal.GH_IDENTITY_TOL))
        else:
            dev = max(max(e[4] / e[3] - 1, e[3] / e[5] - 1) for e in r["energy"] if e[3] > 0)
            scalars[f"sandwich_excess[{name}]"] = dev
            verdicts.append(verdict(f"ellipticity sandwich, {name}", dev, "<=", cal.SANDWICH_TOL,
                                    not r["hermitian"],
                                    "" if r["hermitian"] else "complex coefficients"))
    tables = [Table("semigroup", ["operator", "check", "t", "error"], rows),
              Table("energy", ["operator", "function", "Gh2", "half_f2", "lower", "upper"], energy)]
    return scalars, tables, verdicts


def _offdiag(s, ctx):
    g = _grid(s)
    d = OFFDIAG_DISTANCE
    if g.ell / 2 < d + 1:
        raise ConfigError(f"l = {g.ell} is too short for the probe sets at distance {d}")
    x = g.coords[0]
    E = (x >= -1) & (x < 0)
    F = (x >= d) & (x < d + 1)
    times = d * d / np.geomspace(4, 64, 12)
    with ctx.stage("operators"):
        recs = ctx.map(lambda name: offdiag_decay(preset(name, g), E, F, times), s["operator"])
    rows, verdicts, scalars = [], [], {}
    for name, rec in zip(s["operator"], recs):
        rows += [[name, r["t"], r["d2_over_t"], r["amplitude"]] for r in rec.rows()]
        scalars[f"slope[{name}]"] = rec.slope
        if name == "identity":
            verdicts.append(verdict("Gaussian exponent, identity", rec.slope, "within",
                                    (cal.OFFDIAG_EXPONENT, cal.OFFDIAG_TOL)))
        verdicts.append(verdict(f"negative decay slope, {name}", rec.slope, "<", 0.0))
    scalars["distance"] = recs[0].distance if recs else None
    return scalars, [Table("amplitudes", ["operator", "t", "d2_over_t", "amplitude"], rows)], verdicts


def _caccioppoli(s, ctx):
    g, g2 = _grid(s), _grid(s, refine=2)
    rng = np.random.default_rng(s["seed"])
    specs = [bump_spec(g, rng) for _ in range(s["count"])]
    xs = [[x] + [0.0] * (g.n - 1) for x in CACCIOPPOLI_POINTS]
    rows, verdicts, scalars = [], [], {}
    for name in s["operator"]:
        for m in CACCIOPPOLI_ORDERS:
            tops = {}
            for label, grid in (("base", g), ("refined", g2)):
                L = preset(name, grid)
                with ctx.stage(f"{name} m={m} {label}"):
                    per = ctx.map(lambda b: caccioppoli_check(L, b.sample(grid).values, m, xs, grid),
                                  specs)
                ratios = []
                for i, recs in enumerate(per):
                    for r in recs:
                        rows.append([name, label, i, r.x[0], m, r.lhs, r.term1, r.term2, r.term3,
                                     r.ratio])
                        ratios.append(r.ratio)
                finite = [r for r in ratios if r is not None and math.isfinite(r)]
                tops[label] = (max(finite) if finite else None, len(ratios) - len(finite))
            top, bad = tops["base"]
            ftop, fbad = tops["refined"]
            scalars[f"max_ratio[{name},m={m}]"] = top
            scalars[f"max_ratio_refined[{name},m={m}]"] = ftop
            verdicts.append(verdict(f"finite ratios, {name}, m={m}", bad + fbad, "==", 0.0))
            change = abs(ftop / top - 1) if top and ftop is not None else None
            verdicts.append(verdict(f"refinement change of the max ratio, {name}, m={m}", change,
                                    "<=", cal.REFINEMENT_TOL))
            ceiling = cal.DECOMPOSITION_CEILINGS.get(m) if name == "identity" else None
            verdicts.append(verdict(f"max ratio, {name}, m={m}", top, "<", ceiling, True,
                                    "corpus-calibrated ceiling" if ceiling else "no ceiling"))
    cols = ["operator", "grid", "function", "x", "m", "lhs", "term1", "term2", "term3", "ratio"]
    return scalars, [Table("terms", cols, rows)], verdicts


def _converse(s, ctx):
    g = _grid(s)
    rng = np.random.default_rng(s["seed"])
    fs = np.stack([bump_spec(g, rng).sample(g).values for _ in range(s["count"])])
    gs = np.stack([bump_spec(g, rng).sample(g).values for _ in range(s["count"])])
    ps = [float(p) for p in s["p"]]
    for p in ps:
        if not p > 1:
            raise ConfigError(f"the pairing bound needs p > 1, got p = {p!r}")

    def one(name):
        L = preset(name, g)
        return [converse_pairings(L, fs, gs, g, p) for p in ps]

    with ctx.stage("operators"):
        results = ctx.map(one, s["operator"])
    rows, verdicts, scalars = [], [], {}
    for name, per_p in zip(s["operator"], results):
        for p, recs in zip(ps, per_p):
            rows += [[name, p, i] + list(r.row().values()) for i, r in enumerate(recs)]
            worst = min(r.slack for r in recs)
            scalars[f"min_slack[{name},p={p!r}]"] = worst
            verdicts.append(verdict(f"pairing bound, {name}, p={p!r}", worst, ">=",
                                    -cal.PAIRING_TOL, note="discretization allowance"))
    with ctx.stage("equality case"):
        same = converse_pairings(preset("identity", g), fs[:1], fs[:1], g, 2.0)[0]
    scalars["equality_case_slack"] = same.slack
    verdicts.append(verdict("f = g with L = -Lap at p = 2", same.slack, ">=", -cal.PAIRING_TOL,
                            note="equality case"))
    cols = ["operator", "p", "pair", "pairing", "norm_A", "GhL_f", "GhD_g", "bound", "slack"]
    return scalars, [Table("pairs", cols, rows)], verdicts


EXPERIMENTS = {
    "identity": Experiment(
        "identity", "averaging identity ||SF||_2^2 = b_n ||VF||_2^2 and its grid convergence",
        {"grid": _BASE_GRID, "seed": 0, "count": 50}, GRID_KEYS, _identity),
    "compare": Experiment(
        "compare", "conical against vertical L^p norms and the explicit p < 2 constant",
        {"grid": _BASE_GRID, "seed": 0, "count": 100, "p": (0.5, 1.0, 1.5, 2.0, 4.0)},
        GRID_KEYS, _compare),
    "counterexample": Experiment(
        "counterexample", "ratio scans and slopes for the lower (p < 1) and upper (p > 1) families",
        {"grid": {"n": 1}, "p": (0.5, 2.0), "N": None}, ("n",), _counterexample),
    "weighted": Experiment(
        "weighted", "weighted norm ratios with A_p and RH_q characteristics",
        {"grid": _BASE_GRID, "seed": 0, "count": 50, "p": (1.0, 4.0),
         "weight": ("unit", "power(0.5)")}, GRID_KEYS, _weighted),
    "semigroup-squarefn": Experiment(
        "semigroup-squarefn", "heat and Poisson oracles, semigroup laws, contraction, p = 2 energy",
        {"grid": _LONG_GRID, "seed": 0, "count": 5, "operator": PRESETS}, GRID_KEYS, _semigroup),
    "offdiag": Experiment(
        "offdiag", "off-diagonal decay of the heat semigroup between separated slabs",
        {"grid": {"n": 1, "l": 32.0, "nx": 512}, "operator": PRESETS}, ("n", "l", "nx"), _offdiag),
    "caccioppoli": Experiment(
        "caccioppoli", "three-term decomposition of the Poisson conical function, m = 0 and 1",
        {"grid": dict(_BASE_GRID, tmin=1e-2), "seed": 11, "count": 10, "operator": ("identity",)},
        GRID_KEYS, _caccioppoli),
    "converse-lowerbound": Experiment(
        "converse-lowerbound", "duality bound |<f, g>| <= (||A|| + 1) ||G_h,L f||_p ||G_h,-Lap g||_p'",
        {"grid": _LONG_GRID, "seed": 0, "count": 20, "p": (2.0,), "operator": PRESETS},
        GRID_KEYS, _converse),
}
