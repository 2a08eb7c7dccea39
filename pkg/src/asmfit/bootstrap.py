"""Nonparametric bootstrap confidence intervals.

Rows are resampled with replacement; every replicate refits warm-started
from the full-data estimate (falling back to default starts once when that
fails). Percentile intervals are computed for both raw and standardized
estimates. Replicate r resamples with seed ^ r, so results are independent
of worker scheduling.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimate
from .simulate import resolve_workers


@dataclass
class BootstrapConfig:
    replicates: int = 1000
    level: float = 0.99
    seed: int = 0
    parallel_width: int | None = None

    def __post_init__(self):
        if self.replicates < 100:
            raise ValueError("bootstrap needs at least 100 replicates")
        if not 0.0 < self.level < 1.0:
            raise ValueError("coverage level must be in (0, 1)")


@dataclass
class BootstrapResult:
    slot_names: tuple
    std_names: tuple
    raw_full: np.ndarray
    std_full: np.ndarray
    raw_replicates: np.ndarray  # used replicates x slots
    std_replicates: np.ndarray
    level: float
    n_failed: int
    n_used: int
    withheld: bool
    raw_intervals: dict = field(default_factory=dict)
    std_intervals: dict = field(default_factory=dict)


def percentile_interval(samples, level):
    """Equal-tail percentile interval of one statistic's replicate values."""
    samples = np.asarray(samples, dtype=float)
    lo = (1.0 - level) / 2.0
    return (
        float(np.quantile(samples, lo)),
        float(np.quantile(samples, 1.0 - lo)),
    )


def _bootstrap_block(args):
    data, columns, table, warm, seeds = args
    spec = table.spec
    out = []
    n = data.shape[0]
    for r, seed in seeds:
        rng = np.random.default_rng(seed)
        idx = rng.integers(0, n, size=n)
        sample = data[idx]
        try:
            moments = estimate.SampleMoments(
                S=np.cov(sample, rowvar=False, ddof=1),
                ybar=sample.mean(axis=0),
                n=n,
                names=columns,
            )
            res = estimate.fit(moments, table, warm_start=warm)
            if not res.converged:
                res = estimate.fit(moments, table)
            if res.converged:
                std = estimate.standardize(res)
                out.append((r, res.theta_hat, np.array(list(std.values()))))
                continue
        except Exception:
            pass
        out.append((r, None, None))
    return out


def bootstrap_ci(data, table, cfg):
    """Percentile bootstrap intervals for raw and standardized estimates.

    ``data`` holds the modeled columns (spec order) with complete cases.
    Intervals are withheld when more than 20% of replicates fail to
    converge; failures are always counted in the result.
    """
    columns = table.layout.obs_names
    if hasattr(data, "columns"):
        data = data[list(columns)]
    x = np.asarray(data, dtype=float)
    if x.shape[0] < x.shape[1]:
        raise ValueError("need at least as many rows as observed columns")
    full_moments = estimate.SampleMoments(
        S=np.cov(x, rowvar=False, ddof=1),
        ybar=x.mean(axis=0),
        n=x.shape[0],
        names=columns,
    )
    full = estimate.fit(full_moments, table)
    std_full = estimate.standardize(full)
    std_names = tuple(std_full.keys())

    seeds = [(r, cfg.seed ^ r) for r in range(cfg.replicates)]
    workers = resolve_workers(cfg.parallel_width)
    if workers == 1:
        results = _bootstrap_block((x, columns, table, full.theta_hat, seeds))
    else:
        blocks = [
            (x, columns, table, full.theta_hat, seeds[i::workers])
            for i in range(workers)
        ]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_bootstrap_block, blocks):
                results.extend(chunk)
    results.sort(key=lambda item: item[0])

    raw_rows, std_rows = [], []
    n_failed = 0
    for _, raw, std in results:
        if raw is None:
            n_failed += 1
        else:
            raw_rows.append(raw)
            std_rows.append(std)
    raw_mat = np.array(raw_rows) if raw_rows else np.zeros((0, table.free_count))
    std_mat = np.array(std_rows) if std_rows else np.zeros((0, len(std_names)))
    withheld = n_failed > 0.2 * cfg.replicates
    result = BootstrapResult(
        slot_names=table.slot_names,
        std_names=std_names,
        raw_full=full.theta_hat,
        std_full=np.array(list(std_full.values())),
        raw_replicates=raw_mat,
        std_replicates=std_mat,
        level=cfg.level,
        n_failed=n_failed,
        n_used=len(raw_rows),
        withheld=withheld,
    )
    if not withheld:
        result.raw_intervals = {
            name: percentile_interval(raw_mat[:, j], cfg.level)
            for j, name in enumerate(table.slot_names)
        }
        result.std_intervals = {
            name: percentile_interval(std_mat[:, j], cfg.level)
            for j, name in enumerate(std_names)
        }
    return result
