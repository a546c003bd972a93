"""Linear cost model ``y = a * cycles + b`` and its few-shot fitting protocol."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

TARGETS = ("Energy", "Latency")
MAX_SPLITS = 100
MIN_SAMPLES = 5


class FitError(ValueError):
    pass


class NegativePredictionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Sample:
    model_id: str
    cycles: int
    measured: float

    def __post_init__(self):
        if self.cycles < 0:
            raise ValueError(f"{self.model_id}: cycles must be nonnegative")
        if not self.measured > 0:
            raise ValueError(f"{self.model_id}: measured value must be positive")


@dataclass
class LinearPredictor:
    target: str
    a: float
    b: float
    fit_report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"target must be one of {TARGETS}, not {self.target!r}")
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise FitError("fitted coefficients are not finite")

    def to_dict(self) -> dict:
        return {"target": self.target, "a": self.a, "b": self.b, "fit_report": self.fit_report}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearPredictor":
        return cls(d["target"], float(d["a"]), float(d["b"]), d.get("fit_report", {}))


def fit_line(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Closed-form least squares slope and intercept."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2:
        raise FitError("need at least two points to fit a line")
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise FitError("degenerate design: all cycle counts are equal")
    a = float(((x - xm) * (y - ym)).sum()) / sxx
    return a, float(ym - a * xm)


def ols_fit(samples: Sequence[Sample]) -> tuple[float, float]:
    return fit_line([s.cycles for s in samples], [s.measured for s in samples])


def relative_error(pred: float, truth: float) -> float:
    if not truth > 0:
        raise ValueError("relative error needs a positive ground truth")
    return abs(pred - truth) / truth * 100.0


def error_percentiles(errors: Sequence[float], ps: Sequence[float]) -> list[float]:
    if len(errors) == 0:
        raise ValueError("no errors to summarize")
    for p in ps:
        if not 0 <= p <= 100:
            raise ValueError(f"percentile {p} outside [0, 100]")
    return [float(v) for v in np.percentile(np.asarray(errors, dtype=float), list(ps), method="linear")]


def predict(p: LinearPredictor, cycles: float) -> float:
    if cycles < 0:
        raise ValueError("cycles must be nonnegative")
    y = p.a * cycles + p.b
    if y < 0:
        warnings.warn(f"negative prediction {y:g} clamped to 0", NegativePredictionWarning, stacklevel=2)
        return 0.0
    return y


def _splits(n: int, k: int, seed: int) -> list[tuple[int, ...]]:
    if math.comb(n, k) <= MAX_SPLITS:
        return list(combinations(range(n), k))
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < MAX_SPLITS:
        pick = tuple(sorted(int(i) for i in rng.choice(n, size=k, replace=False)))
        if pick not in seen:
            seen.add(pick)
            out.append(pick)
    return out


def subsample_fit(samples: Sequence[Sample], n_seeds: int = 10, target: str = "Energy",
                  seed: int = 42) -> LinearPredictor:
    """Few-shot fit: pick the train/validate split with lowest validation error.

    Train size is ``max(2, floor(0.4 n))``.  Each seed either enumerates every
    split (when there are at most 100) or samples 100 distinct ones.  The
    winning line is fitted on its training part only.
    """
    n = len(samples)
    if n < MIN_SAMPLES:
        raise FitError(f"subsample_fit needs at least {MIN_SAMPLES} samples, got {n}")
    k = max(2, int(0.4 * n))
    best = None
    per_seed = []
    for s in range(seed, seed + n_seeds):
        seed_best = None
        for train in _splits(n, k, s):
            tr = [samples[i] for i in train]
            va = [samples[i] for i in range(n) if i not in train]
            try:
                a, b = ols_fit(tr)
            except FitError:
                continue
            err = float(np.mean([relative_error(a * v.cycles + b, v.measured) for v in va]))
            if seed_best is None or err < seed_best[0]:
                seed_best = (err, train, a, b)
        if seed_best is None:
            continue
        per_seed.append({"seed": s, "train": [samples[i].model_id for i in seed_best[1]],
                         "validation_error": seed_best[0]})
        if best is None or seed_best[0] < best[0]:
            best = (*seed_best, s)
    if best is None:
        raise FitError("every candidate training split is degenerate")
    err, train, a, b, s = best
    report = {
        "train_size": k,
        "n_samples": n,
        "seeds": list(range(seed, seed + n_seeds)),
        "chosen_seed": s,
        "train": [samples[i].model_id for i in train],
        "validation_error": err,
        "per_seed": per_seed,
    }
    return LinearPredictor(target, a, b, report)


def macs_baseline_fit(macs: Sequence[float], measured: Sequence[float]) -> tuple[float, float]:
    """The MACs proxy: the same line, with MAC counts in place of cycles."""
    return fit_line(macs, measured)
