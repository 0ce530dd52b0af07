"""HiPPO state-space gradient memory and the Adam outer optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, mul_elem
from .errors import ConfigError, ConsistencyError, ContractError, NumericError


def hippo_matrix(n: int) -> np.ndarray:
    """Lower-triangular transition matrix (0-based indices).

    ``K[i, j] = (-1)**(i - j) * (2i + 1)`` below the diagonal, 2 on it, 0 above.
    """
    if n < 1:
        raise ConfigError(f"HiPPO dimension must be >= 1, got {n}")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    sign = np.where((i - j) % 2 == 0, 1, -1)
    k = np.where(i > j, sign * (2 * i + 1), 0)
    k[np.diag_indices(n)] = 2
    return k.astype(np.int64)


def dynamic_weight(loss: float, eps: float = 1e-8) -> float:
    """Inverse-loss gate: high-loss snapshots write less into the state."""
    if loss < 0:
        raise ContractError(f"loss must be non-negative, got {loss}")
    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")
    return 1.0 / (loss + eps)


@dataclass
class SsmState:
    """One state array per parameter tensor, advanced block by block."""

    block_size: int
    states: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.K = hippo_matrix(self.block_size).astype(np.float64)

    @classmethod
    def zeros_like(cls, params: dict, block_size: int = 64) -> "SsmState":
        return cls(block_size, {k: np.zeros(_shape(v)) for k, v in params.items()})

    def copy(self) -> "SsmState":
        return SsmState(self.block_size, {k: v.copy() for k, v in self.states.items()})


def _shape(v) -> tuple:
    return v.shape if hasattr(v, "shape") else np.shape(v)


def _values(v) -> np.ndarray:
    return v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)


def blockwise_apply(K: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Apply ``K`` to consecutive length-B blocks of ``s`` flattened, zero-padding the tail."""
    b = K.shape[0]
    flat = s.reshape(-1)
    nb = -(-flat.size // b)
    padded = np.zeros(nb * b)
    padded[:flat.size] = flat
    out = padded.reshape(nb, b) @ K.T
    # K is lower-triangular, so the padded tail never feeds the kept entries
    return out.reshape(-1)[:flat.size].reshape(s.shape)


def ssm_step(state: SsmState, grads: dict, weight: float) -> SsmState:
    """``s_t = K s_{t-1} + weight * g_t`` for every parameter's state."""
    new = {}
    for name, g in grads.items():
        g = _values(g)
        if name not in state.states:
            raise ConsistencyError(f"no SSM state for parameter {name!r}")
        s = state.states[name]
        if s.shape != g.shape:
            raise ConsistencyError(
                f"SSM state for {name!r} has shape {s.shape}, gradient has {g.shape}")
        new[name] = blockwise_apply(state.K, s) + weight * g
    out = SsmState(state.block_size, dict(state.states))
    out.states.update(new)
    return out


def apply_ssm_update(params: dict, grads: dict, state: SsmState, eta: float = 0.1,
                     mode: str = "descent") -> dict:
    """State-gated parameter update.

    ``descent``:  theta - eta * (grad + theta * s)
    ``verbatim``: grad + theta * s

    Tensor parameters stay differentiable: the update is recorded on the
    active tape with ``grad`` and ``s`` as constants, so a later loss can
    backpropagate into the pre-update parameters.
    """
    if mode not in ("descent", "verbatim"):
        raise ConfigError(f"unknown SSM update mode {mode!r}")
    out = {}
    for name, theta in params.items():
        g = _values(grads[name])
        s = state.states[name]
        if not isinstance(theta, Tensor):
            theta = Tensor(theta)
        if mode == "descent":
            new = add(mul_elem(theta, 1.0 - eta * s), -eta * g)
        else:
            new = add(mul_elem(theta, s), g)
        if not np.isfinite(new.data).all():
            bad = int((~np.isfinite(new.data)).sum())
            raise NumericError(f"SSM update of {name!r} produced {bad} non-finite entries")
        out[name] = new
    return out


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.step,
                         {k: x.copy() for k, x in self.m.items()},
                         {k: x.copy() for k, x in self.v.items()})


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam, in place on ``params`` (Tensors) and ``state``.

    Parameters without a gradient entry are left untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
