"""Paired Hartree/Vlasov runs, eps sweeps, slope fits and reports.

Config files are TOML; see ``configs/standard.toml`` inside the package for the
documented schema.  Reports are JSON (schema ``semiclassic-lab/1``) plus a long
CSV with columns ``eps, N, t, metric, value``.
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli
from scipy import stats

from .errors import ConfigurationError, LabError
from .grid import SpatialGrid
from .hartree import HartreeConfig, evolve_hartree
from .metrics import DEFAULT_BOX, hs_norm, observable_distance, trace_norm, wigner_distance
from .states import InteractionPotential, PROFILES, build_initial_state, weyl_quantize, wigner_transform
from .vlasov import VlasovConfig, evolve_vlasov

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA",
    "ExperimentConfig",
    "PairResult",
    "SlopeFit",
    "ComparisonReport",
    "load_config",
    "run_pair",
    "fit_slope",
    "sweep",
    "check_report",
]

SCHEMA = "semiclassic-lab/1"
METRICS = ("trace", "hs", "observable", "wigner_l2")
FITTED = {
    "trace": "trace_distance_per_N",
    "hs": "hs_distance_per_sqrtN",
    "observable": "observable_sup_per_N",
    "wigner_l2": "wigner_l2",
}


def _round(x: float, digits: int = 12):
    if x is None or not isinstance(x, (float, int, np.floating, np.integer)):
        return x
    x = float(x)
    if not math.isfinite(x) or x == 0:
        return x
    return float(f"{x:.{digits}g}")


def _round_tree(obj):
    if isinstance(obj, dict):
        return {k: _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_tree(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating, int, np.integer)):
        return _round(obj)
    return obj


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    d: int = 1
    profile: str = "cosine"
    profile_params: dict = field(default_factory=dict)
    N: list = field(default_factory=lambda: [16, 32, 64])
    length: float = 2.0
    resolution: float = 4.0  # eps / h
    points: list | None = None  # explicit grid sizes per eps, overrides resolution
    potential: dict = field(default_factory=lambda: {"type": "cosine", "amplitude": 1.0, "mode": 1})
    t_final: float = 0.5
    snapshot_every: float | None = 0.1
    dt_factor: float = 0.1  # dt = dt_factor * eps
    self_consistency: str = "predictor_corrector"
    interpolation: str = "fourier_x_cubic_v"
    force_update: str = "per_step"
    metrics: list = field(default_factory=lambda: list(METRICS))
    box: list = field(default_factory=lambda: list(DEFAULT_BOX))
    seed: int = 0
    workers: int | None = None
    slope_band: list = field(default_factory=lambda: [0.7, 1.3])
    check_time: float | None = None

    def __post_init__(self):
        if self.d != 1:
            raise ConfigurationError(f"dimension d = {self.d} is not supported; only d = 1 is implemented")
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {self.profile!r}")
        if len(self.N) < 1 or any(n <= 0 for n in self.N):
            raise ConfigurationError("N must be a non-empty list of positive numbers")
        eps = self.eps_list
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigurationError("eps must be strictly decreasing along the sweep (N increasing)")
        if self.points is not None and len(self.points) != len(self.N):
            raise ConfigurationError("grid.points must list one size per N")
        for i, e in enumerate(eps):
            h = self.grid(i).h
            if h > e / 4 * (1 + 1e-12):
                raise ConfigurationError(f"grid spacing {h:.4g} does not resolve eps = {e:.4g} (need h <= eps/4)")
        if not self.dt_factor > 0 or self.dt_factor > 0.1 + 1e-12:
            raise ConfigurationError("dt_factor must lie in (0, 0.1]")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ConfigurationError(f"unknown metrics {sorted(unknown)}")
        if self.t_final < 0:
            raise ConfigurationError("t_final must be non-negative")
        self.build_potential()

    @property
    def eps_list(self) -> list[float]:
        return [float(n) ** (-1.0 / self.d) for n in self.N]

    def grid(self, i: int) -> SpatialGrid:
        if self.points is not None:
            return SpatialGrid(self.length, int(self.points[i]))
        target = self.length * self.resolution / self.eps_list[i]
        n = 1 << max(3, math.ceil(math.log2(target - 1e-9)))
        return SpatialGrid(self.length, n)

    def build_potential(self) -> InteractionPotential:
        pot = dict(self.potential)
        kind = pot.pop("type", "cosine")
        if kind == "zero":
            return InteractionPotential.zero(self.length)
        if kind == "cosine":
            return InteractionPotential.cosine(self.length, float(pot.get("amplitude", 1.0)), int(pot.get("mode", 1)))
        if kind == "fourier":
            raw = pot.get("coeffs", {})
            coeffs = {int(k): complex(*v) if isinstance(v, (list, tuple)) else complex(v) for k, v in raw.items()}
            return InteractionPotential(coeffs, self.length)
        raise ConfigurationError(f"unknown potential type {kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentConfig":
        data = copy.deepcopy(dict(data))
        kw: dict[str, Any] = {}
        top = {"name", "seed", "workers"}
        for k in top:
            if k in data:
                kw[k] = data.pop(k)
        if "dimension" in data:
            kw["d"] = int(data.pop("dimension"))
        sections = {
            "profile": {"name": "profile"},
            "grid": {"length": "length", "resolution": "resolution", "points": "points"},
            "sweep": {"N": "N"},
            "time": {"t_final": "t_final", "snapshot_every": "snapshot_every", "dt_factor": "dt_factor"},
            "solver": {
                "self_consistency": "self_consistency",
                "interpolation": "interpolation",
                "force_update": "force_update",
            },
            "metrics": {"names": "metrics", "box": "box"},
            "check": {"slope_band": "slope_band", "time": "check_time"},
        }
        for sec, keys in sections.items():
            block = data.pop(sec, None)
            if block is None:
                continue
            if not isinstance(block, dict):
                raise ConfigurationError(f"[{sec}] must be a table")
            block = dict(block)
            for src, dst in keys.items():
                if src in block:
                    kw[dst] = block.pop(src)
            if sec == "profile":
                kw["profile_params"] = block
            elif block:
                raise ConfigurationError(f"unknown keys in [{sec}]: {sorted(block)}")
        if "potential" in data:
            kw["potential"] = data.pop("potential")
        if data:
            raise ConfigurationError(f"unknown config keys: {sorted(data)}")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


PRESETS = ("standard", "free")


def load_config(path_or_name: str | os.PathLike) -> ExperimentConfig:
    """Read a TOML config file, or a bundled preset by name (``standard``, ``free``)."""
    p = Path(path_or_name)
    if p.is_file():
        text = p.read_text()
    elif str(path_or_name) in PRESETS:
        text = resources.files("semiclassic_lab").joinpath("configs", f"{path_or_name}.toml").read_text()
    else:
        raise ConfigurationError(f"config file not found: {path_or_name}")
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path_or_name}: {exc}") from exc
    return ExperimentConfig.from_mapping(data)


# ---------------------------------------------------------------- one pair


@dataclass
class PairResult:
    eps: float
    N: float
    n: int
    dt: float
    times: list
    metrics: dict  # metric name -> list over times
    initial: dict
    conserved: dict
    runtime: float
    hartree: Any = None
    vlasov: Any = None

    def records(self) -> list[dict]:
        out = []
        for name, vals in self.metrics.items():
            for t, v in zip(self.times, vals):
                out.append({"eps": self.eps, "N": self.N, "t": t, "metric": name, "value": v})
        return out

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("hartree", "vlasov")}
        return d


def run_pair(config: ExperimentConfig, eps_index: int, keep_snapshots: bool = True) -> PairResult:
    """Build ``omega_N``/``W_N``, evolve both sides on matched snapshots, measure distances."""
    start = time.perf_counter()
    eps = config.eps_list[eps_index]
    N = float(config.N[eps_index])
    grid = config.grid(eps_index)
    V = config.build_potential()
    init = build_initial_state(config.profile, N, eps, grid, config.profile_params)
    dt = min(config.dt_factor * eps, 0.5 * grid.h)  # the Vlasov side also needs dt * |u| <= h / 2
    ht = evolve_hartree(
        init.op, V, HartreeConfig(dt=dt, self_consistency=config.self_consistency, snapshot_every=config.snapshot_every),
        config.t_final,
    )
    vt = evolve_vlasov(
        init.wigner, V,
        VlasovConfig(dt=dt, interpolation=config.interpolation, force_update=config.force_update,
                     snapshot_every=config.snapshot_every),
        config.t_final,
    )
    metrics: dict[str, list] = {}
    wanted = set(config.metrics)
    for t, op, W in zip(ht.times, ht.snapshots, vt.snapshots):
        Wq = wigner_transform(op)
        diff = None
        if {"trace", "hs"} & wanted:
            diff = op.kernel - weyl_quantize(W).kernel
        if "trace" in wanted:
            tr = trace_norm(diff, grid.h)
            metrics.setdefault("trace_distance", []).append(tr)
            metrics.setdefault("trace_distance_per_N", []).append(tr / N)
        if "hs" in wanted:
            hs = hs_norm(diff, grid.h)
            metrics.setdefault("hs_distance", []).append(hs)
            metrics.setdefault("hs_distance_per_sqrtN", []).append(hs / math.sqrt(N))
        if "observable" in wanted:
            ob = observable_distance(op, W, tuple(config.box))
            metrics.setdefault("observable_sup", []).append(ob)
            metrics.setdefault("observable_sup_per_N", []).append(ob / N)
        if "wigner_l2" in wanted:
            metrics.setdefault("wigner_l2", []).append(wigner_distance(Wq, W))
    lam0 = init.op.eigenvalues()
    lam1 = ht.snapshots[-1].eigenvalues()
    conserved = {
        "hartree_trace_drift": float(abs(ht.conserved[-1]["trace"] - ht.conserved[0]["trace"])),
        "hartree_spectrum_drift": float(np.abs(np.sort(lam1) - np.sort(lam0)).max()),
        "vlasov_mass_drift": float(abs(vt.conserved[-1]["mass"] - vt.conserved[0]["mass"])),
        "vlasov_l2_drift": float(abs(vt.conserved[-1]["l2"] - vt.conserved[0]["l2"])),
        "vlasov_max_undershoot": float(max(c["undershoot"] for c in vt.conserved)),
    }
    X, Vv = init.wigner.grid.mesh()
    W0 = PROFILES[config.profile](**config.profile_params)(X, Vv, grid.L)
    cell = init.wigner.grid.cell
    initial = {
        "clip_magnitude": init.report["clip_magnitude"],
        "raw_trace": init.report["raw_trace"],
        "velocity_leakage": init.report["velocity_leakage"],
        "commutators": init.report.get("commutators", {}),
        "kappa_l1": float(cell * np.abs(init.wigner.values - W0).sum()),
        "kappa_l2": float(math.sqrt(cell * np.sum((init.wigner.values - W0) ** 2))),
    }
    return PairResult(
        eps=eps,
        N=N,
        n=grid.n,
        dt=float(ht.propagator.dt) if ht.times[-1] > 0 else dt,
        times=[float(t) for t in ht.times],
        metrics=metrics,
        initial=initial,
        conserved=conserved,
        runtime=time.perf_counter() - start,
        hartree=ht if keep_snapshots else None,
        vlasov=vt if keep_snapshots else None,
    )


# ---------------------------------------------------------------- slopes


@dataclass
class SlopeFit:
    slope: float | None
    stderr: float | None
    intercept: float | None
    points: int
    excluded: list = field(default_factory=list)
    reason: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit_slope(eps: Sequence[float], values: Sequence[float], drop_coarsest: bool = False) -> SlopeFit:
    """Least squares of ``log value`` against ``log eps``.

    Nonpositive values are excluded with a warning.  ``drop_coarsest`` removes
    the largest ``eps`` before fitting (and records it).
    """
    pts = []
    excluded = []
    for e, v in zip(eps, values):
        if v is None or not (v > 0) or not math.isfinite(v) or not e > 0:
            warnings.warn(f"excluding nonpositive point (eps={e}, value={v}) from slope fit", RuntimeWarning)
            excluded.append({"eps": e, "value": v, "why": "nonpositive"})
        else:
            pts.append((float(e), float(v)))
    if drop_coarsest and pts:
        coarse = max(pts, key=lambda t: t[0])
        pts.remove(coarse)
        excluded.append({"eps": coarse[0], "value": coarse[1], "why": "coarsest dropped"})
    if len(pts) < 2:
        return SlopeFit(None, None, None, len(pts), excluded, "fewer than two usable points")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0:
        return SlopeFit(None, None, None, len(pts), excluded, "all eps values are identical")
    if len(pts) == 2:
        slope = float((y[1] - y[0]) / (x[1] - x[0]))
        return SlopeFit(slope, None, float(y[0] - slope * x[0]), 2, excluded, "two points: no error estimate")
    res = stats.linregress(x, y)
    return SlopeFit(float(res.slope), float(res.stderr), float(res.intercept), len(pts), excluded)


# ---------------------------------------------------------------- sweep


@dataclass
class ComparisonReport:
    config: dict
    runs: list
    records: list
    slopes: dict
    complete: bool
    failures: list
    created: str = ""
    schema: str = SCHEMA
    check: dict | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        return _round_tree(d)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "N", "t", "metric", "value"])
        for r in self.records:
            w.writerow([_round(r["eps"]), _round(r["N"]), _round(r["t"]), r["metric"], _round(r["value"])])
        return buf.getvalue()

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        j, c = out / f"{stem}.json", out / f"{stem}.csv"
        j.write_text(self.to_json())
        c.write_text(self.to_csv())
        return j, c

    def slope(self, metric: str, t: float) -> SlopeFit | None:
        entry = self.slopes.get(metric, {}).get(_tkey(t))
        return None if entry is None else SlopeFit(**entry)


def _tkey(t: float) -> str:
    return f"{t:.6g}"


def _job(args) -> tuple[int, dict | None, str | None, str | None]:
    cfg_dict, i = args
    cfg = ExperimentConfig(**cfg_dict)
    try:
        res = run_pair(cfg, i, keep_snapshots=False)
        return i, res.summary(), None, None
    except LabError as exc:
        return i, None, type(exc).__name__, f"eps = {cfg.eps_list[i]:.6g}: {exc}"


def sweep(config: ExperimentConfig, workers: int | None = None) -> ComparisonReport:
    """Run every eps (in parallel when ``workers > 1``) and fit slopes per snapshot time."""
    workers = workers or config.workers or 1
    workers = max(1, min(int(workers), len(config.N), os.cpu_count() or 1))
    cfg_dict = config.to_dict()
    jobs = [(cfg_dict, i) for i in range(len(config.N))]
    if workers == 1:
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_job, jobs))
    results.sort(key=lambda r: r[0])
    runs, failures, records = [], [], []
    for i, summary, kind, msg in results:
        if summary is None:
            failures.append({"eps": config.eps_list[i], "N": config.N[i], "error": kind, "message": msg})
            continue
        runs.append(summary)
        for name, vals in summary["metrics"].items():
            for t, v in zip(summary["times"], vals):
                records.append({"eps": summary["eps"], "N": summary["N"], "t": t, "metric": name, "value": v})
    slopes: dict = {}
    if runs:
        times = runs[0]["times"]
        for family in config.metrics:
            metric = FITTED[family]
            for k, t in enumerate(times):
                if t == 0:
                    continue
                eps = [r["eps"] for r in runs]
                vals = [r["metrics"][metric][k] for r in runs]
                slopes.setdefault(metric, {})[_tkey(t)] = fit_slope(eps, vals).to_dict()
    for r in runs:
        r.pop("runtime", None)
    return ComparisonReport(
        config=cfg_dict,
        runs=runs,
        records=records,
        slopes=slopes,
        complete=not failures,
        failures=failures,
        created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )


def check_report(report: ComparisonReport, band: Sequence[float] | None = None, t: float | None = None) -> dict:
    """Slope-band acceptance at time ``t`` (default the last snapshot) for every fitted family."""
    cfg = report.config
    band = list(band if band is not None else cfg.get("slope_band", [0.7, 1.3]))
    if t is None:
        t = cfg.get("check_time") or cfg.get("t_final")
    result = {"band": band, "t": t, "families": {}, "pass": report.complete}
    for metric, per_t in report.slopes.items():
        fit = per_t.get(_tkey(t))
        ok = fit is not None and fit["slope"] is not None and band[0] <= fit["slope"] <= band[1]
        result["families"][metric] = {"slope": None if fit is None else fit["slope"], "pass": bool(ok)}
        result["pass"] = result["pass"] and ok
    if not report.slopes:
        result["pass"] = False
    report.check = result
    return result
