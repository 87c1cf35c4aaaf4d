import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from frontspeed.eigen import (
    NoConvergence, assemble, clear_caches, k_of, principal_eigen,
)
from frontspeed.media import build_medium


@pytest.fixture(autouse=True)
def _fresh_caches():
    clear_caches()
    yield
    clear_caches()


@pytest.fixture(scope="module")
def logistic_1d():
    return build_medium({"N": 1, "A": "1", "q": "0", "f": "u*(1-u)"})


@pytest.fixture(scope="module")
def sine_medium_1d():
    return build_medium({"N": 1, "A": "1", "q": "0",
                         "f": "(1+0.5*sin(2*pi*x1))*u*(1-u)"})


def test_operator_on_constant_vector(logistic_1d):
    op = assemble(logistic_1d, [0.7], 64)
    result = op.matrix @ np.ones(64)
    assert result == pytest.approx(np.full(64, 0.7 ** 2 + 1.0), abs=1e-12)


def test_constant_coefficient_identity_1d(logistic_1d):
    rng = np.random.default_rng(3)
    for z in rng.uniform(-3, 3, size=10):
        k = k_of(logistic_1d, [z], 64)
        assert abs(k - (z * z + 1.0)) <= 1e-9


def test_constant_coefficient_identity_2d_anisotropic():
    m = build_medium({"N": 2, "A": ["2", "0.3", "1"], "q": ["0", "0"],
                      "f": "4*u*(1-u)"})
    A = np.array([[2.0, 0.3], [0.3, 1.0]])
    rng = np.random.default_rng(4)
    for z in rng.uniform(-2, 2, size=(10, 2)):
        k = k_of(m, z, 32)
        assert abs(k - (z @ A @ z + 4.0)) <= 1e-9


def test_power_iteration_matches_dense_oracle(sine_medium_1d):
    for z in (0.0, 0.5, 1.0, 2.0):
        op = assemble(sine_medium_1d, [z], 64)
        k_power = principal_eigen(op).k
        k_dense = float(np.max(np.linalg.eigvals(op.toarray()).real))
        assert abs(k_power - k_dense) <= 1e-8


def test_grid_convergence_second_order(sine_medium_1d):
    ks = {M: k_of(sine_medium_1d, [1.0], M) for M in (32, 64, 128)}
    ratio = abs(ks[32] - ks[64]) / abs(ks[64] - ks[128])
    assert 3.5 <= ratio <= 4.5


def test_reflection_symmetry():
    # mu(x) = 1 + 0.5 cos(2 pi x) is even, so k(z) = k(-z)
    m = build_medium({"N": 1, "A": "1", "q": "0",
                      "f": "(1+0.5*cos(2*pi*x1))*u*(1-u)"})
    for z in (0.3, 0.7, 1.5):
        assert abs(k_of(m, [z], 64) - k_of(m, [-z], 64)) <= 1e-8


def test_k_zero_dominates_min_linearization(sine_medium_1d):
    # potential comparison: k(0) >= min_x mu(x), checked against the dense oracle
    op = assemble(sine_medium_1d, [0.0], 32)
    k_dense = float(np.max(np.linalg.eigvals(op.toarray()).real))
    assert k_dense >= 0.5 - 1e-12
    assert abs(k_of(sine_medium_1d, [0.0], 32) - k_dense) <= 1e-8


def test_numerical_convexity_along_segments(sine_medium_1d):
    rng = np.random.default_rng(11)
    for _ in range(8):
        z1, z2 = rng.uniform(-2, 2, size=2)
        mid = 0.5 * (z1 + z2)
        k1 = k_of(sine_medium_1d, [z1], 32)
        k2 = k_of(sine_medium_1d, [z2], 32)
        km = k_of(sine_medium_1d, [mid], 32)
        assert km <= 0.5 * (k1 + k2) + 1e-6


def test_eigenfunction_positive_normalized(sine_medium_1d):
    res = principal_eigen(assemble(sine_medium_1d, [0.5], 64))
    assert np.all(res.psi > 0)
    assert res.psi.max() == pytest.approx(1.0, abs=0)
    assert res.residual <= 1e-10


def test_no_convergence_raises(sine_medium_1d):
    op = assemble(sine_medium_1d, [0.5], 64)
    with pytest.raises(NoConvergence):
        principal_eigen(op, max_iter=3)


def test_minimum_grid_size(logistic_1d):
    with pytest.raises(ValueError):
        assemble(logistic_1d, [0.0], 4)


def test_memoization_returns_identical_value(sine_medium_1d):
    k1 = k_of(sine_medium_1d, [0.8], 64)
    t0 = time.time()
    k2 = k_of(sine_medium_1d, [0.8], 64)
    assert k1 == k2
    assert time.time() - t0 < 0.01  # cache hit, no fresh eigensolve


def test_concurrent_k_of_distinct_z(sine_medium_1d):
    zs = [0.1, 0.4, 0.9, 1.3, 1.8, 2.2]
    with ThreadPoolExecutor(max_workers=4) as pool:
        parallel = list(pool.map(lambda z: k_of(sine_medium_1d, [z], 32), zs))
    clear_caches()
    serial = [k_of(sine_medium_1d, [z], 32) for z in zs]
    assert parallel == pytest.approx(serial, abs=1e-9)


def test_shear_drift_enters_operator():
    # drift shifts the eigenvalue along the flow direction
    base = build_medium({"N": 2, "A": "1", "q": ["0", "0"], "f": "u*(1-u)"})
    shear = build_medium({"N": 2, "A": "1", "q": ["2*sin(2*pi*x2)", "0"],
                          "f": "u*(1-u)"})
    z = [1.0, 0.0]
    k_base = k_of(base, z, 16)
    k_shear = k_of(shear, z, 16)
    assert k_base == pytest.approx(2.0, abs=1e-9)
    assert k_shear > k_base + 1e-3


def test_2d_heterogeneous_dense_oracle():
    m = build_medium({"N": 2, "A": "1", "q": ["2*sin(2*pi*x2)", "0"],
                      "f": "u*(1-u)"})
    op = assemble(m, [0.7, 0.3], 16)
    k_power = principal_eigen(op).k
    k_dense = float(np.max(np.linalg.eigvals(op.toarray()).real))
    assert abs(k_power - k_dense) <= 1e-8


def test_cross_term_2d_dense_oracle():
    m = build_medium({"N": 2, "A": ["1+0.2*cos(2*pi*x1)", "0.2", "1"],
                      "q": ["0", "0"], "f": "u*(1-u)"})
    op = assemble(m, [0.5, -0.4], 16)
    k_power = principal_eigen(op).k
    k_dense = float(np.max(np.linalg.eigvals(op.toarray()).real))
    assert abs(k_power - k_dense) <= 1e-8
