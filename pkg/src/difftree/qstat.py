"""Factor q-statistic of spatial stratified heterogeneity, with a permutation test.

q = 1 - SSW/SST, where SST is the total sum of squared deviations and SSW
the pooled within-stratum sum. It is the share of variance in the values that
the stratification explains.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ZeroVariance


@dataclass(frozen=True)
class StratifiedSample:
    values: np.ndarray
    strata: tuple

    def __init__(self, values: Sequence[float], strata: Sequence):
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or len(values) != len(strata):
            raise ValueError(f"{len(values)} values but {len(strata)} stratum labels")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "strata", tuple(strata))

    @property
    def N(self) -> int:
        return len(self.values)

    @property
    def labels(self) -> list:
        return sorted(set(self.strata), key=str)

    @property
    def L(self) -> int:
        return len(set(self.strata))

    def codes(self) -> np.ndarray:
        index = {s: i for i, s in enumerate(self.labels)}
        return np.array([index[s] for s in self.strata], dtype=np.int64)

    def stratum_sizes(self) -> dict:
        return {s: int(n) for s, n in zip(self.labels, np.bincount(self.codes(), minlength=self.L))}

    def stratum_variances(self) -> dict:
        """Population (divide by N_h) variance per stratum."""
        codes = self.codes()
        return {s: float(self.values[codes == i].var()) for i, s in enumerate(self.labels)}


@dataclass(frozen=True)
class QResult:
    q: float
    ssw: float
    sst: float
    p_value: Optional[float] = None
    permutations: int = 0
    seed: Optional[int] = None


def _ssw(values: np.ndarray, codes: np.ndarray, L: int) -> np.ndarray:
    """Within-stratum sum of squares; ``codes`` may be 2-D (one row per relabelling)."""
    codes = np.atleast_2d(codes)
    R = codes.shape[0]
    flat = (codes + L * np.arange(R)[:, None]).ravel()
    v = np.broadcast_to(values, codes.shape).ravel()
    n = np.bincount(flat, minlength=R * L).reshape(R, L)
    s = np.bincount(flat, v, minlength=R * L).reshape(R, L)
    ss = np.bincount(flat, v * v, minlength=R * L).reshape(R, L)
    with np.errstate(invalid="ignore", divide="ignore"):
        between = np.where(n > 0, s * s / n, 0.0)
    return np.maximum(ss.sum(1) - between.sum(1), 0.0)


def q_statistic(sample: StratifiedSample) -> QResult:
    y = sample.values
    if sample.N < 2:
        raise ValueError("q-statistic needs at least 2 values")
    dev = y - y.mean()
    sst = float(dev @ dev)
    if sst == 0.0 or np.ptp(y) == 0.0:
        raise ZeroVariance("all values are equal")
    codes = sample.codes()
    ssw = 0.0
    for k in range(sample.L):
        part = y[codes == k]
        d = part - part.mean()
        ssw += float(d @ d)
    q = min(1.0, max(0.0, 1.0 - ssw / sst))
    return QResult(q, ssw, sst)


def q_permutation_test(sample: StratifiedSample, n_perm: int = 999, seed: int = 0,
                       batch: int = 4096) -> QResult:
    """Observed q with p = (1 + #{permuted q >= observed}) / (1 + n_perm).

    Stratum labels are shuffled over the values with a seeded generator.
    Permuted q values within 1e-12 of the observed one count as ties.
    """
    if n_perm < 99:
        raise ValueError(f"n_perm must be >= 99, got {n_perm}")
    if sample.L < 2:
        raise ValueError("permutation test needs at least two strata")
    observed = q_statistic(sample)
    y, codes, L = sample.values, sample.codes(), sample.L
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        size = min(batch, n_perm - done)
        perms = rng.permuted(np.broadcast_to(codes, (size, len(codes))), axis=1)
        q_perm = 1.0 - _ssw(y, perms, L) / observed.sst
        hits += int(np.count_nonzero(q_perm >= observed.q - 1e-12))
        done += size
    p = (1 + hits) / (1 + n_perm)
    return QResult(observed.q, observed.ssw, observed.sst, p, n_perm, seed)


def load_sample_csv(path, log1p: bool = False) -> StratifiedSample:
    """Rows of ``value,stratum``; a header row is skipped when its value is not numeric."""
    values, strata = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            try:
                v = float(row[0])
            except ValueError:
                if i == 0:
                    continue
                raise ValueError(f"{path}: row {i + 1}: value {row[0]!r} is not a number") from None
            values.append(math.log1p(v) if log1p else v)
            strata.append(row[1].strip())
    return StratifiedSample(values, strata)
