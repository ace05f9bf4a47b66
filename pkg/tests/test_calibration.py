import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odtables.calibration import (AdamState, CalibrationError, LossConfig, NetworkWeights, Pipeline,
                                  Scheme, adam_step, load_weights, loss_eval, loss_grad, loss_partials,
                                  loss_terms, nn_backward, nn_forward, nn_init, save_weights)
from odtables.core import ObservedData
from odtables.harris_wilson import SolverConfig
from odtables.intensity import HWParams, IntensityModel


def test_init_draws():
    W = nn_init(np.random.default_rng(0), 5, 3)
    V = nn_init(np.random.default_rng(0), 5, 3)
    assert np.array_equal(W.flat(), V.flat())
    assert W.size == (5 + 1) * 3 + (3 + 1) * 2
    f = W.flat()
    assert f.min() >= 0 and f.max() <= 4
    # draw order W1, b1, W2, b2
    rng = np.random.default_rng(0)
    assert np.array_equal(W.W1, rng.uniform(0, 4, (5, 3)))
    assert np.array_equal(W.b1, rng.uniform(0, 4, 3))


def test_forward_examples():
    W = NetworkWeights(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 2)), np.array([-1.5, 2.0]))
    assert nn_forward(np.ones(3), W) == (1.5, 2.0)
    W = NetworkWeights(np.array([[2.0]]), np.zeros(1), np.array([[-1.0, 1.0]]), np.zeros(2))
    assert nn_forward([3.0], W) == (6.0, 6.0)


@settings(max_examples=30)
@given(st.integers(0, 10 ** 6), st.integers(0, 1))
def test_forward_non_negative_and_sign_flip(seed, k):
    rng = np.random.default_rng(seed)
    W = NetworkWeights(rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=(3, 2)), rng.normal(size=2))
    y = rng.normal(size=4)
    theta = nn_forward(y, W)
    assert min(theta) >= 0
    W2, b2 = W.W2.copy(), W.b2.copy()
    W2[:, k] *= -1
    b2[k] *= -1
    assert nn_forward(y, NetworkWeights(W.W1, W.b1, W2, b2)) == pytest.approx(theta, rel=1e-14)


def test_backward_matches_finite_differences_on_network():
    rng = np.random.default_rng(1)
    W = NetworkWeights(rng.normal(size=(4, 3)), rng.normal(size=3), rng.normal(size=(3, 2)), rng.normal(size=2))
    y = rng.normal(size=4)
    g = np.array([0.7, -1.3])
    analytic = nn_backward(y, W, g).flat()
    f = W.flat()
    num = np.zeros_like(f)
    for k in range(f.size):
        e = np.zeros_like(f)
        e[k] = 1e-6
        up = np.dot(g, nn_forward(y, NetworkWeights.from_flat(f + e, 4, 3)))
        dn = np.dot(g, nn_forward(y, NetworkWeights.from_flat(f - e, 4, 3)))
        num[k] = (up - dn) / 2e-6
    assert np.allclose(analytic, num, atol=1e-7)


def test_abs_subgradient_at_zero():
    W = NetworkWeights(np.zeros((2, 1)), np.zeros(1), np.zeros((1, 2)), np.zeros(2))
    g = nn_backward(np.ones(2), W, [1.0, 1.0])
    assert np.all(g.flat() == 0)


def _data(J=3, I=2, seed=0):
    rng = np.random.default_rng(seed)
    return ObservedData(y=rng.normal(size=J), dist_origin=rng.random(I) * 5), rng.random((I, J))


def test_loss_examples():
    data, C = _data()
    assert loss_eval(LossConfig(), data.y, None, None, data) == 0
    x = data.y + 0.1
    cfg = LossConfig(sigma_d=1e-3)
    assert loss_eval(cfg, x, None, None, data) * 2 * 1e-6 == pytest.approx(np.sum((x - data.y) ** 2))


def test_default_sigma_d():
    assert LossConfig().destination_scale(10) == pytest.approx(0.03 * np.log(10))
    with pytest.raises(ValueError):
        LossConfig().destination_scale(1)


def test_joint_requires_table():
    data, C = _data()
    with pytest.raises(CalibrationError, match="joint"):
        loss_eval(LossConfig(scheme="joint"), data.y, None, None, data)
    with pytest.raises(CalibrationError, match="disjoint"):
        loss_eval(LossConfig(), data.y, None, None, ObservedData())
    with pytest.raises(CalibrationError):
        loss_eval(LossConfig(use_distance_term=True), data.y, None, np.ones((2, 3)), data)


def test_additive_decomposition():
    data, C = _data()
    rng = np.random.default_rng(2)
    x = rng.normal(size=3)
    lam = rng.random((2, 3)) * 10 + 1
    T = rng.poisson(lam)
    disjoint = loss_eval(LossConfig(use_distance_term=True), x, None, lam, data, C)
    joint = loss_terms(LossConfig(scheme="joint", use_distance_term=True), x, T, lam, data, C)
    table = -np.sum(T * np.log(lam) - lam) / 0.07
    assert joint.table == pytest.approx(table, rel=1e-12)
    assert joint.total == pytest.approx(disjoint + table, rel=1e-12, abs=1e-12)


def test_poisson_score_averages_to_zero():
    data, _ = _data()
    rng = np.random.default_rng(3)
    lam = rng.random((2, 3)) * 20 + 5
    T = rng.poisson(lam, size=(20000, 2, 3))
    cfg = LossConfig(scheme="joint")
    g = np.mean([loss_partials(cfg, data.y, t, lam, data)[1] for t in T[:2000]], axis=0)
    se = np.sqrt(lam) / 0.07 / np.sqrt(2000)
    assert np.all(np.abs(g) < 4 * se)


def _pipeline(scheme="joint", kind="total", tau=2, distance=True, sigma=0.0, seed=0):
    rng = np.random.default_rng(seed)
    I, J = 4, 5
    C = rng.random((I, J))
    y = rng.normal(0, 0.3, J)
    model = (IntensityModel("total", C, lambda_total=50.0) if kind == "total"
             else IntensityModel("singly", C, row_totals=rng.random(I) * 20 + 1))
    data = ObservedData(y=y, dist_origin=rng.random(I) * 10)
    return Pipeline(model, HWParams(kappa=10.0, sigma=sigma), SolverConfig(dt=0.01, tau=tau),
                    LossConfig(scheme=scheme, use_distance_term=distance), data)


def _fd(pipe, W, noise, T, h=1e-5):
    f = W.flat()
    out = np.zeros_like(f)
    for k in range(f.size):
        e = np.zeros_like(f)
        e[k] = h
        out[k] = (pipe.loss_value(NetworkWeights.from_flat(f + e, W.J, W.H), noise, T)
                  - pipe.loss_value(NetworkWeights.from_flat(f - e, W.J, W.H), noise, T)) / (2 * h)
    return out


@pytest.mark.parametrize("kind", ["total", "singly"])
@pytest.mark.parametrize("scheme", ["joint", "disjoint"])
def test_gradient_finite_differences(kind, scheme):
    pipe = _pipeline(scheme, kind, sigma=0.05)
    rng = np.random.default_rng(7)
    W = NetworkWeights.from_flat(rng.uniform(-0.5, 0.5, (5 + 1) * 3 + 4 * 2), 5, 3)
    noise = rng.standard_normal((2, 5))
    T = rng.poisson(np.full((4, 5), 2.5))
    g = loss_grad(pipe, W, noise, T).flat()
    num = _fd(pipe, W, noise, T)
    assert np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-6)) < 1e-4


def test_gradient_scales_with_loss():
    pipe = _pipeline(distance=False)
    W = nn_init(np.random.default_rng(3), 5, 3)
    T = np.ones((4, 5), dtype=int)
    g1 = loss_grad(pipe, W, None, T).flat()
    pipe2 = _pipeline(distance=False)
    pipe2.loss = LossConfig(scheme="joint", sigma_d=pipe.loss.destination_scale(5) / np.sqrt(2),
                            sigma_T=0.07 / 2)
    g2 = loss_grad(pipe2, W, None, T).flat()
    assert np.allclose(g2, 2 * g1, rtol=1e-10)


def test_zero_gradient_at_perfect_fit():
    # W1 = 0 makes theta independent of y, so y can be set to the solver
    # output without changing the forward pass
    pipe = _pipeline("disjoint", distance=False, tau=1)
    pipe.x0 = np.zeros(5)
    rng = np.random.default_rng(5)
    W = NetworkWeights(np.zeros((5, 3)), rng.random(3), rng.random((3, 2)), rng.random(2))
    x = pipe.run(W, with_grad=False).x
    pipe.data = ObservedData(y=x)
    res = pipe.run(W)
    assert res.loss == 0
    assert np.all(res.grad.flat() == 0)


def test_clipping_is_straight_through():
    pipe = _pipeline(distance=False)
    W = nn_init(np.random.default_rng(4), 5, 3)
    pipe.theta_max = 1e-3  # both parameters saturate
    res = pipe.run(W, None, np.ones((4, 5), dtype=int))
    assert res.theta == (1e-3, 1e-3)
    assert np.all(res.grad.flat() == 0)


def test_noise_required_when_stochastic():
    pipe = _pipeline(sigma=0.1)
    with pytest.raises(CalibrationError):
        pipe.run(nn_init(np.random.default_rng(0), 5, 3))


def test_adam_examples():
    W = nn_init(np.random.default_rng(0), 2, 2)
    zero = NetworkWeights.from_flat(np.zeros(W.size), 2, 2)
    W1, s = adam_step(W, zero, AdamState.zeros(W.size))
    assert np.array_equal(W1.flat(), W.flat()) and s.step == 1
    g = NetworkWeights.from_flat(np.full(W.size, 3.7), 2, 2)
    W1, _ = adam_step(W, g, AdamState.zeros(W.size, lr=0.002))
    assert np.allclose(W.flat() - W1.flat(), 0.002, rtol=1e-6)


def test_adam_determinism():
    rng = np.random.default_rng(1)
    grads = [NetworkWeights.from_flat(rng.normal(size=12), 2, 2) for _ in range(5)]

    def run():
        W, s = nn_init(np.random.default_rng(9), 2, 2), AdamState.zeros(12)
        for g in grads:
            W, s = adam_step(W, g, s)
        return W.flat()

    assert np.array_equal(run(), run())


def test_checkpoint_round_trip(tmp_path):
    W = nn_init(np.random.default_rng(0), 6, 4)
    save_weights(tmp_path / "w.bin", W)
    raw = (tmp_path / "w.bin").read_bytes()
    assert raw[:4] == b"ODTW" and len(raw) == 24 + 8 * W.size
    V = load_weights(tmp_path / "w.bin")
    assert np.array_equal(V.flat(), W.flat()) and (V.J, V.H) == (6, 4)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.bin")
