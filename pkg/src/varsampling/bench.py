"""Replicated benchmark of IS, VS and BMC on exponential power targets."""
from __future__ import annotations

import csv
import dataclasses
import gc
import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .estimators import VsConfig, bmc_fit, is_fit, vs_fit
from .gaussian import FeatureMap, GaussianMoments, generalized_kl, is_proper
from .samplers import AnnealingSchedule, annealed_sample, matched_sample
from .targets import exp_power

log = logging.getLogger(__name__)

METHODS = ("is", "vs", "bmc")
STRATEGIES = ("matched", "annealed")


@dataclass(frozen=True)
class BmcConfig:
    damping: float = 1.0
    kernel_var: object = "auto"


@dataclass
class RunConfig:
    dims: List[int] = field(default_factory=lambda: [1, 4])
    betas: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0])
    sample_factors: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16, 32])
    replications: int = 25
    strategies: List[str] = field(default_factory=lambda: list(STRATEGIES))
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    base_seed: int = 0
    output_path: str = "bench_out"
    workers: int = 1
    record_timing: bool = True
    anneal: AnnealingSchedule = field(default_factory=lambda: AnnealingSchedule(steps=200))
    vs: VsConfig = field(default_factory=VsConfig)
    bmc: BmcConfig = field(default_factory=BmcConfig)

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.dims or any(int(d) != d or d < 1 for d in self.dims):
            raise ValueError(f"dimensions must be positive integers, got {self.dims}")
        if not self.betas or any(not b > 0 for b in self.betas):
            raise ValueError(f"shape parameters must be positive, got {self.betas}")
        if not self.sample_factors or any(int(k) != k or k < 1 for k in self.sample_factors):
            raise ValueError(f"sample factors must be positive integers, got {self.sample_factors}")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad or not self.strategies:
            raise ValueError(f"unknown sampling strategies {sorted(bad)}; choose from {STRATEGIES}")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        """Full-scale grid: d in {1, 10}, 100 replications, 1000 annealing steps."""
        settings = dict(dims=[1, 10], replications=100, anneal=AnnealingSchedule())
        settings.update(overrides)
        return cls(**settings)

    def cells(self):
        for d in self.dims:
            for beta in self.betas:
                for k in self.sample_factors:
                    for strategy in self.strategies:
                        yield d, beta, k, strategy

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["cells"] = [
            {"d": d, "beta": beta, "k": k, "N": sample_size(d, k), "strategy": s}
            for d, beta, k, s in self.cells()
        ]
        return out


def sample_size(d: int, k: int) -> int:
    return k * FeatureMap(d).n_params


def replication_seed(base_seed: int, d: int, beta: float, k: int, strategy: str, rep: int) -> int:
    """64-bit seed shared by every method within one replication of a cell."""
    key = f"{int(base_seed)}|{int(d)}|{float(beta)!r}|{int(k)}|{strategy}|{int(rep)}"
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class BenchRecord:
    method: str
    d: int
    beta: float
    k: int
    N: int
    strategy: str
    replication: int
    epsilon: float
    fit_seconds: float
    sampling_seconds: float
    improper: bool
    diagnostics: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if self.improper != math.isinf(self.epsilon):
            raise ValueError("epsilon must be infinite exactly when the fit is improper")


RECORD_FIELDS = [f.name for f in dataclasses.fields(BenchRecord)]


def _scalar_diagnostics(diag: dict) -> dict:
    out = {}
    for key, value in diag.items():
        if isinstance(value, (bool, str)):
            out[key] = value
        elif isinstance(value, (int, np.integer)):
            out[key] = int(value)
        elif isinstance(value, (float, np.floating)):
            out[key] = float(value)
    return out


def _fit(method: str, batch, fm: FeatureMap, cfg: RunConfig):
    if method == "is":
        return is_fit(batch, fm)
    if method == "vs":
        return vs_fit(batch, fm, cfg.vs)
    return bmc_fit(batch, fm, damping=cfg.bmc.damping, v=cfg.bmc.kernel_var)


def _draw(strategy: str, target, N: int, seed: int, cfg: RunConfig):
    if strategy == "matched":
        return matched_sample(GaussianMoments.standard(target.dim), N, seed, target)
    return annealed_sample(cfg.anneal, N, seed, target)


def run_replication(cfg: RunConfig, d: int, beta: float, k: int, strategy: str, rep: int) -> List[BenchRecord]:
    """One batch, every requested method fitted on it."""
    target = exp_power(d, beta)
    fm = FeatureMap(d)
    N = k * fm.n_params
    reference = target.reference_moments
    batch = _draw(strategy, target, N, replication_seed(cfg.base_seed, d, beta, k, strategy, rep), cfg)
    sampling_seconds = batch.sampling_seconds if cfg.record_timing else 0.0
    records = []
    for method in cfg.methods:
        # like timeit: keep collector pauses out of per-fit timings
        gc_was_enabled = gc.isenabled()
        gc.disable()
        tic = time.perf_counter()
        try:
            result = _fit(method, batch, fm, cfg)
            diagnostics = _scalar_diagnostics(result.diagnostics)
            if method == "vs":
                diagnostics["iterations"] = result.iterations
            fit_seconds = result.fit_seconds
            moments = result.moments
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("%s failed on d=%d beta=%g k=%d %s rep %d: %s", method, d, beta, k, strategy, rep, exc)
            diagnostics = {"error": f"{type(exc).__name__}: {exc}"}
            fit_seconds = time.perf_counter() - tic
            moments = None
        finally:
            if gc_was_enabled:
                gc.enable()
        if not cfg.record_timing:
            fit_seconds = 0.0
        proper = moments is not None and is_proper(moments)
        epsilon = generalized_kl(reference, moments) if proper else math.inf
        records.append(BenchRecord(
            method=method, d=d, beta=float(beta), k=k, N=N, strategy=strategy, replication=rep,
            epsilon=epsilon, fit_seconds=fit_seconds, sampling_seconds=sampling_seconds,
            improper=not proper, diagnostics=diagnostics,
        ))
    return records


def _run_replication_args(args):
    return run_replication(*args)


def run_cell(cfg: RunConfig, d: int, beta: float, k: int, strategy: str,
             executor: Optional[ProcessPoolExecutor] = None) -> List[BenchRecord]:
    """All replications of one (d, beta, k, strategy) cell, in replication order."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    jobs = [(cfg, d, beta, k, strategy, rep) for rep in range(cfg.replications)]
    if executor is None:
        chunks = map(_run_replication_args, jobs)
    else:
        chunks = executor.map(_run_replication_args, jobs)
    return [rec for chunk in chunks for rec in chunk]


def run(cfg: RunConfig) -> List[BenchRecord]:
    records: List[BenchRecord] = []
    executor = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for d, beta, k, strategy in cfg.cells():
            log.info("cell d=%d beta=%g k=%d strategy=%s", d, beta, k, strategy)
            records.extend(run_cell(cfg, d, beta, k, strategy, executor))
    finally:
        if executor is not None:
            executor.shutdown()
    return records


def median(values: Iterable[float]) -> float:
    """Median that lets +inf take part in the order statistics."""
    v = np.sort(np.asarray(list(values), dtype=float))
    if v.size == 0:
        return math.nan
    mid = v.size // 2
    if v.size % 2:
        return float(v[mid])
    lo, hi = v[mid - 1], v[mid]
    return float(hi) if math.isinf(hi) else float(0.5 * (lo + hi))


@dataclass(frozen=True)
class SummaryRow:
    method: str
    d: int
    beta: float
    k: int
    N: int
    strategy: str
    replications: int
    median_epsilon: float
    improper_fraction: float
    median_fit_seconds: float
    median_sampling_seconds: float
    total_fit_seconds: float
    total_sampling_seconds: float
    fit_time_ratio: float
    total_time_ratio: float


SUMMARY_FIELDS = [f.name for f in dataclasses.fields(SummaryRow)]


def summarize(records: Sequence[BenchRecord]) -> List[SummaryRow]:
    """Per-cell medians and timing ratios relative to IS.

    ``total_time_ratio`` is (summed fit + sampling time of the method) over
    the same quantity for IS; sampling time is counted once per method.
    Ratios are NaN for cells where IS was not run.
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.method, rec.d, rec.beta, rec.k, rec.strategy), []).append(rec)

    def totals(recs):
        fit = float(sum(r.fit_seconds for r in recs))
        sampling = float(sum(r.sampling_seconds for r in recs))
        return fit, sampling

    rows = []
    for (method, d, beta, k, strategy), recs in groups.items():
        fit, sampling = totals(recs)
        ref = groups.get(("is", d, beta, k, strategy))
        if ref:
            ref_fit, ref_sampling = totals(ref)
            fit_ratio = fit / ref_fit if ref_fit > 0 else math.nan
            total_ratio = (fit + sampling) / (ref_fit + ref_sampling) if ref_fit + ref_sampling > 0 else math.nan
        else:
            fit_ratio = total_ratio = math.nan
        rows.append(SummaryRow(
            method=method, d=d, beta=beta, k=k, N=recs[0].N, strategy=strategy, replications=len(recs),
            median_epsilon=median(r.epsilon for r in recs),
            improper_fraction=sum(r.improper for r in recs) / len(recs),
            median_fit_seconds=median(r.fit_seconds for r in recs),
            median_sampling_seconds=median(r.sampling_seconds for r in recs),
            total_fit_seconds=fit, total_sampling_seconds=sampling,
            fit_time_ratio=fit_ratio, total_time_ratio=total_ratio,
        ))
    order = {m: i for i, m in enumerate(METHODS)}
    rows.sort(key=lambda r: (r.d, r.beta, r.strategy, r.k, order.get(r.method, len(order))))
    return rows


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, dict):
        return json.dumps(value, sort_keys=True)
    return str(value)


def _parse_record(row: dict) -> BenchRecord:
    return BenchRecord(
        method=row["method"], d=int(row["d"]), beta=float(row["beta"]), k=int(row["k"]), N=int(row["N"]),
        strategy=row["strategy"], replication=int(row["replication"]), epsilon=float(row["epsilon"]),
        fit_seconds=float(row["fit_seconds"]), sampling_seconds=float(row["sampling_seconds"]),
        improper=row["improper"] == "True", diagnostics=json.loads(row["diagnostics"]),
    )


def read_records(path) -> List[BenchRecord]:
    """Parse a ``records.csv`` written by :func:`emit`."""
    with open(path, newline="") as fh:
        return [_parse_record(row) for row in csv.DictReader(fh)]


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_format(getattr(row, f)) for f in fields])


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit(records: Sequence[BenchRecord], summaries: Sequence[SummaryRow], path, cfg: Optional[RunConfig] = None,
         format: str = "csv") -> List[Path]:
    """Write records, summary and a manifest into directory ``path``."""
    if format not in ("csv", "json"):
        raise ValueError(f"unknown output format {format!r}")
    out = Path(path)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if format == "csv":
            _write_csv(out / "records.csv", RECORD_FIELDS, records)
            _write_csv(out / "summary.csv", SUMMARY_FIELDS, summaries)
            written += [out / "records.csv", out / "summary.csv"]
        else:
            for name, rows in (("records.json", records), ("summary.json", summaries)):
                with open(out / name, "w") as fh:
                    json.dump([dataclasses.asdict(r) for r in rows], fh, indent=1, default=_json_default)
                written.append(out / name)
        manifest = {
            "config": cfg.to_json() if cfg is not None else None,
            "n_records": len(records),
            "numpy": np.__version__,
            "python": platform.python_version(),
        }
        with open(out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1, default=_json_default)
        written.append(out / "manifest.json")
    except OSError as exc:
        raise OSError(f"cannot write benchmark output under {os.fspath(out)}: {exc}") from exc
    return written
