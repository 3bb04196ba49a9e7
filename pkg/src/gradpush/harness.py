"""Experiment sweeps over the stepsize, with replayable configs and CSV outputs."""

from __future__ import annotations

import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import costs, digraph, engine, mixing, theory

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (1e-1, 1e-2, 1e-3, 1e-4)
MEASURABLE_FLOOR = 1e-24
SUMMARY_COLUMNS = ("alpha", "floor", "t_floor", "gate", "sigma_w", "delta", "rho")


@dataclass
class ExperimentConfig:
    cost_kind: str = "least_squares"
    n: int = 10
    d: int = 5
    m: int = 3
    p: float = 0.7
    alpha_list: list[float] = field(default_factory=lambda: list(DEFAULT_ALPHAS))
    iters: int = 20_000
    graph_seed: int = 0
    cost_seed: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.cost_kind not in ("least_squares", "quadratic"):
            raise ValueError(f"cost_kind must be least_squares or quadratic, got {self.cost_kind!r}")
        if not self.alpha_list:
            raise ValueError("alpha_list must not be empty")
        if any(not (a >= 0 and math.isfinite(a)) for a in self.alpha_list):
            raise ValueError(f"alpha_list entries must be finite and nonnegative: {self.alpha_list}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if min(self.n, self.d, self.m) < 1:
            raise ValueError("n, d, m must be >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")

    def dumps(self) -> str:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "alpha_list":
                v = ",".join(repr(float(a)) for a in v)
            out.append(f"{f.name}={v}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for ln in text.splitlines():
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            key, sep, val = ln.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or key not in types:
                raise ValueError(f"bad config line {ln!r}")
            kw[key] = _parse_value(key, val)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())


def _parse_value(key: str, val: str):
    if key == "alpha_list":
        return [float(a) for a in val.split(",") if a.strip()]
    if key in ("n", "d", "m", "iters", "graph_seed", "cost_seed"):
        return int(val)
    if key == "p":
        return float(val)
    return val


@dataclass
class Instance:
    graph: digraph.DiGraph
    graph_seed_used: int
    mix: mixing.MixingMatrix
    ens: costs.CostEnsemble
    delta: float


def build_instance(cfg: ExperimentConfig) -> Instance:
    g, used = digraph.sample_strongly_connected(cfg.n, cfg.p, cfg.graph_seed)
    if used != cfg.graph_seed:
        log.info("graph seed %d not strongly connected; used %d", cfg.graph_seed, used)
    mix = mixing.build_mixing(g)
    if cfg.cost_kind == "least_squares":
        ens = costs.least_squares_ensemble(cfg.n, cfg.d, cfg.m, seed=cfg.cost_seed)
    else:
        ens = costs.quadratic_ensemble(cfg.n, cfg.d, seed=cfg.cost_seed)
    return Instance(g, used, mix, ens, engine.empirical_delta(mix))


def floor_stats(sum_sq_err: np.ndarray) -> tuple[float, int]:
    """Median over the last 10% of iterates, and the first t within 5% of it."""
    tail = max(1, len(sum_sq_err) // 10)
    floor = float(np.median(sum_sq_err[-tail:]))
    close = np.flatnonzero(np.abs(sum_sq_err - floor) <= 0.05 * abs(floor))
    return floor, int(close[0]) if close.size else len(sum_sq_err) - 1


def gate_for(inst: Instance, alpha: float) -> tuple[theory.GateVerdict, float]:
    """Gate verdict and rho for one stepsize."""
    rho = inst.mix.sigma_w * (1 + alpha * inst.ens.L * inst.delta)
    if alpha <= 0:
        return theory.GateVerdict(False, f"alpha={alpha} is not positive"), rho
    consts = theory.compute_constants(inst.mix, inst.ens, alpha, inst.delta, check_gate=False)
    return theory.stepsize_gate(consts), consts.rho


@dataclass
class SummaryRow:
    alpha: float
    floor: float
    t_floor: int
    gate: str
    sigma_w: float
    delta: float
    rho: float


@dataclass
class SweepSummary:
    rows: list[SummaryRow]
    meta: dict = field(default_factory=dict)
    records: dict[float, engine.RunRecord] = field(default_factory=dict, repr=False)

    def to_csv(self) -> str:
        lines = [",".join(SUMMARY_COLUMNS)]
        for r in self.rows:
            lines.append(",".join([repr(r.alpha), repr(r.floor), str(r.t_floor), r.gate,
                                   repr(r.sigma_w), repr(r.delta), repr(r.rho)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SweepSummary":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if tuple(lines[0].split(",")) != SUMMARY_COLUMNS:
            raise ValueError(f"unexpected summary header {lines[0]!r}")
        rows = []
        for ln in lines[1:]:
            a, fl, tf, gate, sw, de, rho = ln.split(",")
            rows.append(SummaryRow(float(a), float(fl), int(tf), gate, float(sw), float(de), float(rho)))
        return cls(rows)


def run_file_name(alpha: float) -> str:
    return f"run_alpha_{alpha!r}.csv"


def _run_one(args):
    mix, ens, alpha, iters = args
    return engine.run(mix, ens, alpha, iters)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_experiment(cfg: ExperimentConfig, write: bool = True, jobs: int = 1) -> SweepSummary:
    """Build one graph and one ensemble, then run the engine for every stepsize.

    With ``write`` the output directory receives the config, graph, ensemble,
    a metadata file, one CSV per stepsize and ``summary.csv``.  On failure
    every file this call created is removed.
    """
    inst = build_instance(cfg)
    jobs_args = [(inst.mix, inst.ens, a, cfg.iters) for a in cfg.alpha_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, jobs_args))
    else:
        records = [_run_one(a) for a in jobs_args]

    rows = []
    for alpha, rec in zip(cfg.alpha_list, records):
        fl, tf = floor_stats(rec.sum_sq_err)
        verdict, rho = gate_for(inst, alpha)
        rows.append(SummaryRow(float(alpha), fl, tf, "admissible" if verdict else "rejected",
                               inst.mix.sigma_w, inst.delta, rho))
    meta = {
        "graph_seed_requested": cfg.graph_seed, "graph_seed_used": inst.graph_seed_used,
        "cost_seed_requested": cfg.cost_seed, "cost_seed_used": inst.ens.seed,
        "arcs": len(inst.graph), "sigma_w": inst.mix.sigma_w, "delta": inst.delta,
        "L": inst.ens.L, "beta": inst.ens.beta, "nonconvex_local": inst.ens.nonconvex_local,
    }
    summary = SweepSummary(rows, meta, dict(zip(map(float, cfg.alpha_list), records)))
    if write:
        _write_outputs(cfg, inst, summary)
    return summary


def _write_outputs(cfg: ExperimentConfig, inst: Instance, summary: SweepSummary) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []

    def put(name: str, text: str) -> None:
        path = out / name
        path.write_text(text)
        created.append(path)

    try:
        put("config.txt", cfg.dumps())
        put("graph.txt", digraph.dumps(inst.graph))
        put("ensemble.txt", costs.dumps(inst.ens))
        put("metadata.txt", "".join(f"{k}={v!r}\n" if isinstance(v, float) else f"{k}={v}\n"
                                    for k, v in summary.meta.items()))
        for alpha, rec in summary.records.items():
            put(run_file_name(alpha), rec.to_csv())
        _atomic_write(out / "summary.csv", summary.to_csv())
    except BaseException:
        for path in created:
            path.unlink(missing_ok=True)
        raise


@dataclass
class RatioReport:
    passed: bool
    ordered: bool
    pairs: list[tuple[float, float, float, str]]  # (alpha_small, alpha_large, ratio, status)
    below_floor: list[float]

    def to_text(self) -> str:
        lines = [f"ratio_check={'pass' if self.passed else 'fail'}", f"ordered={str(self.ordered).lower()}"]
        for lo, hi, ratio, status in self.pairs:
            lines.append(f"floor({hi!r})/floor({lo!r})={ratio!r} {status}")
        for a in self.below_floor:
            lines.append(f"floor({a!r}) below measurable floor")
        return "\n".join(lines)


def sweep_ratio_check(summary) -> RatioReport:
    """Check that squared-error floors scale like alpha^2.

    For adjacent stepsizes ``a < a'`` with spacing ``r = a'/a`` the ratio
    ``floor(a')/floor(a)`` must lie in ``[r, r^3]``; for decades that is
    ``[10, 1000]`` around the expected 100.  Floors below 1e-24 are reported
    as unmeasurable and excluded.
    """
    rows = summary.rows if isinstance(summary, SweepSummary) else summary
    pts = sorted((float(r.alpha), float(r.floor)) if isinstance(r, SummaryRow) else (float(r[0]), float(r[1]))
                 for r in rows)
    below = [a for a, f in pts if f < MEASURABLE_FLOOR]
    usable = [(a, f) for a, f in pts if f >= MEASURABLE_FLOOR and a > 0]
    if len(usable) < 2:
        if below:
            return RatioReport(True, True, [], below)
        raise ValueError("need at least two stepsizes with positive floors")
    pairs = []
    ok = True
    ordered = True
    for (a_lo, f_lo), (a_hi, f_hi) in zip(usable, usable[1:]):
        r = a_hi / a_lo
        ratio = f_hi / f_lo
        good = r <= ratio <= r**3
        ordered &= f_hi > f_lo
        ok &= good
        pairs.append((a_lo, a_hi, ratio, "pass" if good else f"fail (outside [{r:g}, {r**3:g}])"))
    return RatioReport(ok and ordered, ordered, pairs, below)
