import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hycnn import Rng
from hycnn.data import (
    OT_MAPS, REGRESSION, SHAPE_PAIRS, T1, T2, T3, T4, f1, f2, f3, f4, f5, generate, ot_data,
    regression_data, regression_target, shape_pair,
)
from hycnn.tensor import ConfigurationError


def test_f1_example():
    assert f1(np.ones((1, 5)))[0] == 5.0


def test_map_examples():
    for d in (1, 3, 10):
        e1 = np.zeros((1, d))
        e1[0, 0] = 1.0
        assert T2(e1)[0, 0] == pytest.approx(1.42074, abs=1e-5)
    assert np.array_equal(T3(np.array([[0.5, -2.0]])), [[1.5, -3.0]])
    assert np.array_equal(T1(np.array([[0.3, 4.0]])), [[0.3, 4.0]])


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_closed_forms(seed, d):
    X = Rng(seed).uniform(-1, 1, (100, d))
    i = np.arange(1, d + 1)
    ref = {
        "f1": np.array([sum(v * v for v in x) for x in X]),
        "f2": np.array([sum(v ** 4 for v in x) for x in X]),
        "f3": np.array([sum(v * v for v in x) + 0.25 * math.sin(20 * math.sqrt(sum(v * v for v in x)))
                        for x in X]),
        "f4": np.array([sum(abs(v) for v in x) for x in X]),
        "f5": np.array([math.exp(sum(abs(v) for v in x) / math.sqrt(d)) for x in X]),
    }
    for name, fn in zip(("f1", "f2", "f3", "f4", "f5"), (f1, f2, f3, f4, f5)):
        assert np.max(np.abs(fn(X) - ref[name])) <= 1e-12
    mu = Rng(seed).child(0, "f6-mu").normal(0, math.sqrt(1 / d), d)
    f6 = regression_target("f6", d, Rng(seed))
    want = np.maximum(np.sum((X - mu) ** 2, 1), np.sum((X + mu) ** 2, 1))
    assert np.max(np.abs(f6(X) - want)) <= 1e-12
    assert np.max(np.abs(T2(X) - (1 + np.sin(i) / 2) * X)) <= 1e-12
    assert np.max(np.abs(T3(X) - (X + np.sign(X)))) <= 1e-12
    assert np.max(np.abs(T4(X) - 4 * X ** 3)) <= 1e-12


def test_regression_data():
    D = regression_data("f1", 3, 400, 0.5, Rng(0))
    assert D["X"].shape == (400, 3) and D["X_test"].shape == (1000, 3)
    assert np.all(np.abs(D["X"]) <= 1)
    noise = D["y"] - f1(D["X"])
    assert noise.std() == pytest.approx(0.5, rel=0.15)
    assert np.array_equal(D["y_test"], f1(D["X_test"]))
    clean = regression_data("f1", 3, 400, 0.0, Rng(0))
    assert np.array_equal(clean["y"], f1(clean["X"]))


def test_generators_deterministic():
    for gid in REGRESSION + tuple(OT_MAPS) + ("checkerboard", "halfmoon", "gauss-ring"):
        a = generate(gid, 50, Rng(3), d=2, sigma=0.1)
        b = generate(gid, 50, Rng(3), d=2, sigma=0.1)
        for k, v in a.items():
            if isinstance(v, np.ndarray):
                assert np.array_equal(v, b[k])


def test_ot_data():
    D = ot_data("phi3", 4, 300, 200, Rng(0))
    assert D["source"].shape == (300, 4) and D["target"].shape == (200, 4)
    assert D["val_source"].shape == (1000, 4) and D["test_target"].shape == (1000, 4)
    assert not np.allclose(D["target"], T3(D["source"][:200]))
    U = ot_data("phi4", 2, 500, 500, Rng(0))["source"]
    assert np.all(np.abs(U) <= 1)


def test_shape_pairs():
    for name in SHAPE_PAIRS:
        src, tgt = shape_pair(name, 400, Rng(1))
        assert src.shape == tgt.shape == (400, 2)
        s2, t2 = shape_pair(name, 400, Rng(1))
        assert np.array_equal(src, s2) and np.array_equal(tgt, t2)
    src, _ = shape_pair("checkerboard", 2000, Rng(0))
    assert np.all(np.abs(src) <= 1.5)


def test_unknown_generator():
    for bad in ("f7", "phi9", "spiral"):
        with pytest.raises(ConfigurationError):
            generate(bad, 10, Rng(0))
    with pytest.raises(ConfigurationError):
        shape_pair("moons", 10, Rng(0))
    with pytest.raises(ConfigurationError):
        regression_target("f6", 3)
