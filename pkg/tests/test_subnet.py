import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuralut.numerics import DimensionError, affine_backward
from neuralut.subnet import (
    SubnetConfig,
    SubnetConfigError,
    SubnetParams,
    count_params,
    init_params,
    subnet_backward,
    subnet_forward,
)

from conftest import central_difference, rel_err


def grid():
    for F in range(1, 9):
        for L in range(1, 7):
            for N in (1, 4, 8, 16):
                for S in [0] + [d for d in range(1, L + 1) if L % d == 0]:
                    yield F, L, N, S


def brute_force_count(F, L, N, S):
    params = init_params(SubnetConfig(F, 1, L, N, S), np.random.default_rng(0))
    t_a = sum(W.size + b.size for W, b in params.affines)
    t_r = sum(W.size + b.size for W, b in params.residuals)
    return t_a, t_r, t_a + t_r


def test_count_examples():
    assert count_params(6, 1, 1, 0) == (7, 0, 7)
    assert count_params(3, 2, 8, 2) == (41, 4, 45)
    assert count_params(6, 4, 16, 2) == (673, 129, 802)


def test_count_matches_brute_force_grid():
    for F, L, N, S in grid():
        assert count_params(F, L, N, S) == brute_force_count(F, L, N, S), (F, L, N, S)


def test_count_rejects_bad_skip():
    with pytest.raises(SubnetConfigError):
        count_params(3, 4, 8, 3)
    with pytest.raises(SubnetConfigError):
        SubnetConfig(3, 1, 4, 8, 3)


def test_logicnets_degeneracy():
    rng = np.random.default_rng(0)
    cfg = SubnetConfig(6, 1, 1, 1, 0)
    params = init_params(cfg, rng)
    W, b = params.affines[0]
    x = rng.normal(size=(1000, 6))
    np.testing.assert_allclose(subnet_forward(cfg, params, x), x @ W.T + b, atol=1e-12, rtol=0)


def test_residual_only_path():
    cfg = SubnetConfig(3, 3, 2, 5, 2)
    params = init_params(cfg, np.random.default_rng(1))
    params.affines = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.affines]
    params.residuals = [(np.eye(3), np.zeros(3))]
    x = np.random.default_rng(2).normal(size=(10, 3))
    np.testing.assert_allclose(subnet_forward(cfg, params, x), x, atol=1e-15)


def hand_composition(params, x):
    relu = lambda v: np.maximum(v, 0)  # noqa: E731
    (W1, b1), (W2, b2), (W3, b3), (W4, b4) = params.affines
    (R1, c1), (R2, c2) = params.residuals
    F1 = (relu(x @ W1.T + b1) @ W2.T + b2) + (x @ R1.T + c1)
    h = relu(F1)
    return (relu(h @ W3.T + b3) @ W4.T + b4) + (h @ R2.T + c2)


def test_forward_matches_hand_composition():
    cfg = SubnetConfig(6, 1, 4, 16, 2)
    rng = np.random.default_rng(3)
    params = init_params(cfg, rng)
    params.affines = [(W, rng.normal(size=b.shape)) for W, b in params.affines]
    x = rng.normal(size=(20, 6))
    np.testing.assert_allclose(subnet_forward(cfg, params, x), hand_composition(params, x),
                               rtol=1e-12, atol=1e-12)


def test_shape_errors():
    cfg = SubnetConfig(3, 1, 2, 4, 0)
    params = init_params(cfg, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        subnet_forward(cfg, params, np.ones((2, 4)))


def test_backward_zero_cotangent():
    cfg = SubnetConfig(4, 1, 4, 8, 2)
    params = init_params(cfg, np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 4))
    grads, dX = subnet_backward(cfg, params, x, np.zeros((5, 1)))
    assert not any(np.any(a) for a in grads.arrays()) and not np.any(dX)


def test_backward_depth_one_is_affine():
    cfg = SubnetConfig(4, 2, 1, 1, 0)
    params = init_params(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x, dY = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    grads, dX = subnet_backward(cfg, params, x, dY)
    dW, db, dX2 = affine_backward(*params.affines[0], x, dY)
    np.testing.assert_array_equal(grads.affines[0][0], dW)
    np.testing.assert_array_equal(dX, dX2)


@pytest.mark.parametrize("S", [0, 1, 2, 4])
def test_backward_finite_differences(S):
    cfg = SubnetConfig(3, 1, 4, 8, S)
    rng = np.random.default_rng(10 + S)
    params = init_params(cfg, rng)
    params.affines = [(W, rng.normal(scale=0.3, size=b.shape)) for W, b in params.affines]
    x = rng.normal(size=(6, 3))
    c = rng.normal(size=(6, 1))
    f = lambda: float(np.sum(c * subnet_forward(cfg, params, x)))  # noqa: E731
    grads, dX = subnet_backward(cfg, params, x, c)
    for a, g in zip(params.arrays(), grads.arrays()):
        assert rel_err(g, central_difference(f, a)) <= 1e-4
    assert rel_err(dX, central_difference(f, x)) <= 1e-4


def test_residual_gradient_flow_with_zero_weights():
    cfg = SubnetConfig(3, 2, 4, 5, 2)
    rng = np.random.default_rng(4)
    params = init_params(cfg, rng)
    params.affines = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params.affines]
    # keep the intermediate chunk output positive so the ReLU between chunks passes everything
    R1, _ = params.residuals[0]
    params.residuals[0] = (R1, np.full(R1.shape[0], 50.0))
    x = rng.normal(size=(4, 3))
    dY = rng.normal(size=(4, 2))
    _, dX = subnet_backward(cfg, params, x, dY)
    J = params.residuals[1][0] @ params.residuals[0][0]
    np.testing.assert_allclose(dX, dY @ J, rtol=1e-12)
    assert np.any(dX)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_piecewise_linear_along_lines(seed):
    cfg = SubnetConfig(4, 1, 4, 8, 2)
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    x, d = rng.normal(size=(2, 4))
    t = np.linspace(-1, 1, 2001)
    y = subnet_forward(cfg, params, x + t[:, None] * d)[:, 0]
    second = np.abs(np.diff(y, 2))
    scale = max(1.0, np.abs(y).max())
    kinks = np.count_nonzero(second > 1e-9 * scale)
    # each ReLU unit switches at most once along a line per chunk input; bounded breakpoints
    assert kinks <= 2 * (3 * 8 + 8)


def test_init_determinism_and_statistics():
    cfg = SubnetConfig(6, 1, 4, 16, 2)
    a = init_params(cfg, np.random.default_rng(7))
    b = init_params(cfg, np.random.default_rng(7))
    for u, v in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(u, v)
    for _, bias in a.affines + a.residuals:
        assert not np.any(bias)
    big = init_params(SubnetConfig(100, 100), np.random.default_rng(0)).affines[0][0]
    sigma = np.sqrt(2.0 / 100)
    assert big.size == 10_000
    assert abs(big.mean()) <= 3 * sigma / np.sqrt(big.size)
    assert abs(big.std() - sigma) <= 0.05 * sigma


def test_stacked_matches_individual():
    cfg = SubnetConfig(3, 1, 4, 8, 2)
    params = init_params(cfg, np.random.default_rng(0), stack=(5,))
    x = np.random.default_rng(1).normal(size=(5, 7, 3))
    y = subnet_forward(cfg, params, x)
    for j in range(5):
        assert np.array_equal(y[j], subnet_forward(cfg, params.select(j), x[j]))
    assert isinstance(params.select(0), SubnetParams)
