import warnings
from itertools import combinations

import numpy as np
import pytest

from instmeter.predictor import (
    FitError,
    LinearPredictor,
    NegativePredictionWarning,
    Sample,
    error_percentiles,
    macs_baseline_fit,
    ols_fit,
    predict,
    relative_error,
    subsample_fit,
)


def samples(points):
    return [Sample(f"m{i}", c, y) for i, (c, y) in enumerate(points)]


def test_ols_exact_line():
    a, b = ols_fit(samples([(10, 21), (20, 41)]))
    assert a == pytest.approx(2) and b == pytest.approx(1)


def test_ols_degenerate():
    with pytest.raises(FitError, match="degenerate"):
        ols_fit(samples([(5, 7), (5, 9)]))


def test_ols_normal_equations_by_hand():
    # x mean 2, y mean 15.2/3; Sxy = 4.1, Sxx = 2
    a, b = ols_fit(samples([(1, 3.1), (2, 4.9), (3, 7.2)]))
    assert a == pytest.approx(2.05, rel=1e-12)
    assert b == pytest.approx(15.2 / 3 - 4.1, rel=1e-12)


def test_residuals_satisfy_normal_equations():
    rng = np.random.default_rng(0)
    c = rng.integers(1_000, 1_000_000, 20)
    y = 3e-9 * c + 1e-3 + rng.normal(0, 1e-4, 20)
    a, b = ols_fit(samples(zip(c.tolist(), y.tolist())))
    r = y - (a * c + b)
    assert abs(r.sum()) <= 1e-9 * np.abs(y).sum()
    assert abs((r * c).sum()) <= 1e-9 * np.abs(y * c).sum()


def test_subsample_noise_free_recovers_line():
    a, b = 2.5e-9, 1.5e-3
    for seed in (0, 1, 99):
        pts = [(c, a * c + b) for c in (120_000, 900_000, 3_000_000, 25_000_000, 70_000_000)]
        p = subsample_fit(samples(pts), seed=seed)
        assert abs(p.a - a) / a < 1e-9 and abs(p.b - b) / b < 1e-9
        full = ols_fit(samples(pts))
        assert abs(p.a - full[0]) / a < 1e-9


def test_subsample_picks_split_by_exhaustive_oracle():
    pts = [(100, 201.0), (200, 401.0), (300, 601.0), (400, 880.0), (500, 900.0)]
    ss = samples(pts)
    p = subsample_fit(ss)
    # oracle: every 2-of-5 split, mean relative error on the other three
    best = None
    for train in combinations(range(5), 2):
        (x0, y0), (x1, y1) = pts[train[0]], pts[train[1]]
        a = (y1 - y0) / (x1 - x0)
        b = y0 - a * x0
        err = sum(abs(a * x + b - y) / y * 100 for i, (x, y) in enumerate(pts) if i not in train) / 3
        if best is None or err < best[0]:
            best = (err, train)
    assert p.fit_report["train"] == [f"m{i}" for i in best[1]]
    assert set(best[1]) <= {0, 1, 2}
    assert p.a == pytest.approx(2.0) and p.b == pytest.approx(1.0)
    assert p.fit_report["validation_error"] == pytest.approx(best[0])


def test_subsample_large_n_is_deterministic():
    rng = np.random.default_rng(5)
    c = rng.integers(10_000, 10_000_000, 30).tolist()
    y = [(2e-9 * x + 1e-3) * (1 + 0.05 * rng.standard_normal()) for x in c]
    ss = samples(zip(c, y))
    p1, p2 = subsample_fit(ss), subsample_fit(ss)
    assert (p1.a, p1.b, p1.fit_report) == (p2.a, p2.b, p2.fit_report)
    assert p1.fit_report["train_size"] == 12


def test_subsample_needs_five():
    with pytest.raises(FitError, match="at least 5"):
        subsample_fit(samples([(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]))


def test_predict():
    p = LinearPredictor("Energy", 2e-9, 1e-3)
    assert predict(p, 1_000_000) == pytest.approx(3e-3)
    assert predict(p, 0) == 1e-3
    with pytest.warns(NegativePredictionWarning):
        assert predict(LinearPredictor("Latency", -1.0, 0.0), 5) == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        predict(p, 10)


def test_predictor_validation_and_roundtrip():
    with pytest.raises(ValueError):
        LinearPredictor("Power", 1.0, 0.0)
    with pytest.raises(FitError):
        LinearPredictor("Energy", float("nan"), 0.0)
    p = LinearPredictor("Latency", 1e-8, 2e-3, {"x": 1})
    assert LinearPredictor.from_dict(p.to_dict()) == p


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample("m", -1, 1.0)
    with pytest.raises(ValueError):
        Sample("m", 1, 0.0)


def test_relative_error():
    assert relative_error(12, 10) == 20.0
    assert relative_error(10, 10) == 0.0
    assert relative_error(0, 10) == 100.0
    assert relative_error(36, 30) == pytest.approx(relative_error(12, 10))
    with pytest.raises(ValueError):
        relative_error(1, 0)


def test_percentiles():
    assert error_percentiles(list(range(1, 11)), [90]) == pytest.approx([9.1])
    xs = [4.0, -1.0, 7.5, 3.0]
    assert error_percentiles(xs, [0, 100]) == [-1.0, 7.5]
    assert error_percentiles([5], [50]) == [5.0]
    with pytest.raises(ValueError):
        error_percentiles([], [50])
    with pytest.raises(ValueError):
        error_percentiles([1], [101])


def test_percentile_matches_rank_definition():
    rng = np.random.default_rng(1)
    for _ in range(50):
        xs = rng.random(rng.integers(1, 30)).tolist()
        p = float(rng.uniform(0, 100))
        s = sorted(xs)
        r = p / 100 * (len(s) - 1)
        lo = int(r)
        hi = min(lo + 1, len(s) - 1)
        want = s[lo] + (s[hi] - s[lo]) * (r - lo)
        assert error_percentiles(xs, [p])[0] == pytest.approx(want, abs=1e-12)


def test_macs_baseline():
    assert macs_baseline_fit([1, 2, 3], [3, 5, 7]) == pytest.approx((2, 1))
