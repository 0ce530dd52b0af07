import numpy as np
import pytest

from dygssm.autodiff import Tape, Tensor, backward, mean_scalar, sigmoid
from dygssm.errors import ConfigError, ConsistencyError, ContractError, NumericError
from dygssm.ssm import (AdamState, SsmState, adam_step, apply_ssm_update, blockwise_apply,
                        dynamic_weight, hippo_matrix, ssm_step)


def hippo_oracle(n):
    """Piecewise definition written out with 1-based indices, entry by entry."""
    rows = []
    for i in range(1, n + 1):
        row = []
        for j in range(1, n + 1):
            if i > j:
                row.append((-1) ** (i - j) * (2 * (i - 1) + 1))
            elif i == j:
                row.append(2)
            else:
                row.append(0)
        rows.append(row)
    return rows


@pytest.mark.parametrize("n", range(1, 9))
def test_hippo_matches_formula(n):
    assert hippo_matrix(n).tolist() == hippo_oracle(n)


def test_hippo_small_cases():
    assert hippo_matrix(1).tolist() == [[2]]
    assert hippo_matrix(3).tolist() == [[2, 0, 0], [-3, 2, 0], [5, -5, 2]]
    assert hippo_matrix(4)[3].tolist() == [-7, 7, -7, 2]
    with pytest.raises(ConfigError):
        hippo_matrix(0)


def test_dynamic_weight():
    assert dynamic_weight(0.0, 1e-8) == pytest.approx(1e8)
    assert dynamic_weight(0.5) == pytest.approx(2.0)
    assert dynamic_weight(0.2) > dynamic_weight(0.3)
    with pytest.raises(ContractError):
        dynamic_weight(-0.1)


def test_first_step_from_zero_state_is_weighted_gradient():
    rng = np.random.default_rng(0)
    g = {"a": rng.normal(size=(3, 5)), "b": rng.normal(size=(1, 5))}
    s = ssm_step(SsmState.zeros_like(g, 4), g, 1.7)
    for k in g:
        assert np.array_equal(s.states[k], 1.7 * g[k])


@pytest.mark.parametrize("shape", [(1, 1), (3, 5), (8, 8), (2, 7)])
def test_full_block_equals_dense_application(shape):
    rng = np.random.default_rng(1)
    s0 = rng.normal(size=shape)
    g = rng.normal(size=shape)
    size = int(np.prod(shape))
    state = SsmState(size, {"w": s0})
    out = ssm_step(state, {"w": g}, 0.3).states["w"]
    dense = np.array(hippo_oracle(size), dtype=np.float64) @ s0.reshape(-1) + 0.3 * g.reshape(-1)
    assert np.max(np.abs(out.reshape(-1) - dense)) <= 1e-12


def test_blocks_are_independent():
    rng = np.random.default_rng(2)
    s = rng.normal(size=(1, 10))
    k = hippo_matrix(4).astype(float)
    out = blockwise_apply(k, s).ravel()
    flat = s.ravel()
    assert np.allclose(out[:4], k @ flat[:4])
    assert np.allclose(out[4:8], k @ flat[4:8])
    assert np.allclose(out[8:], (k @ np.r_[flat[8:], 0, 0])[:2])


def test_zero_gradient_is_input_free_recurrence():
    s0 = np.arange(4.0).reshape(1, 4)
    out = ssm_step(SsmState(4, {"w": s0}), {"w": np.zeros((1, 4))}, 5.0).states["w"]
    assert np.array_equal(out.ravel(), hippo_matrix(4) @ s0.ravel())


def test_ssm_step_errors():
    state = SsmState.zeros_like({"w": np.zeros((2, 2))}, 4)
    with pytest.raises(ConsistencyError):
        ssm_step(state, {"v": np.zeros((2, 2))}, 1.0)
    with pytest.raises(ConsistencyError):
        ssm_step(state, {"w": np.zeros((2, 3))}, 1.0)


def test_update_zero_state_is_plain_descent():
    theta = {"w": np.array([[1.0, -2.0]])}
    g = {"w": np.array([[0.5, 0.5]])}
    out = apply_ssm_update(theta, g, SsmState.zeros_like(theta), eta=0.1)
    assert np.allclose(out["w"].data, [[0.95, -2.05]])


def test_update_degenerate_inputs():
    theta = {"w": np.array([[1.0, 3.0]])}
    zero = {"w": np.zeros((1, 2))}
    state = SsmState.zeros_like(theta)
    assert np.array_equal(apply_ssm_update(theta, zero, state, 0.1, "descent")["w"].data, theta["w"])
    assert np.array_equal(apply_ssm_update(theta, zero, state, 0.1, "verbatim")["w"].data, [[0, 0]])


def test_update_scalar_case():
    out = apply_ssm_update({"w": np.array([[1.0]])}, {"w": np.array([[0.2]])},
                           SsmState(1, {"w": np.array([[0.1]])}), eta=0.5)
    assert out["w"].item() == pytest.approx(0.85)


def test_update_errors():
    theta = {"w": np.ones((1, 1))}
    with pytest.raises(ConfigError):
        apply_ssm_update(theta, theta, SsmState.zeros_like(theta), mode="other")
    with pytest.raises(NumericError):
        apply_ssm_update(theta, {"w": np.array([[np.inf]])}, SsmState.zeros_like(theta))


def test_update_is_differentiable_in_theta():
    theta = Tensor([[0.3, -0.4]], requires_grad=True)
    g = np.array([[0.1, 0.2]])
    s = np.array([[0.5, -1.0]])
    eta = 0.2
    with Tape() as tape:
        new = apply_ssm_update({"w": theta}, {"w": g}, SsmState(2, {"w": s}), eta)["w"]
        backward(mean_scalar(sigmoid(new)), tape)
    z = theta.data * (1 - eta * s) - eta * g
    expected = 0.5 * (1 / (1 + np.exp(-z))) * (1 / (1 + np.exp(z))) * (1 - eta * s)
    assert np.allclose(theta.grad, expected)


def test_adam_zero_gradient_first_step():
    p = {"w": Tensor([[1.0, 2.0]])}
    adam_step(AdamState(), p, {"w": np.zeros((1, 2))})
    assert np.array_equal(p["w"].data, [[1.0, 2.0]])


def test_adam_first_step():
    p = {"w": Tensor([[0.0]])}
    adam_step(AdamState(), p, {"w": np.array([[1.0]])})
    assert p["w"].item() == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)


def test_adam_steady_state_is_lr_sign():
    p = {"w": Tensor([[0.0, 0.0]])}
    state = AdamState(lr=1e-2)
    g = np.array([[3.0, -0.01]])
    for _ in range(200):
        before = p["w"].data.copy()
        adam_step(state, p, {"w": g})
    assert np.allclose(p["w"].data - before, -1e-2 * np.sign(g), rtol=1e-5)


def test_adam_skips_missing_gradients():
    p = {"w": Tensor([[1.0]]), "v": Tensor([[2.0]])}
    adam_step(AdamState(), p, {"w": np.array([[1.0]]), "v": None})
    assert p["v"].item() == 2.0
