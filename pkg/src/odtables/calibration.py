"""Neural calibration of (alpha, beta) through the Harris-Wilson solver.

A one-hidden-layer network maps the observed log attraction ``y`` to
``theta = (alpha, beta)``. The composite map W -> theta -> (x, Lam) -> loss is
differentiated in two pieces: forward-mode tangents through the solver and the
intensity (theta has only two coordinates), then reverse mode through the
network.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import ContingencyTable, ObservedData
from .harris_wilson import SolverConfig, hw_solve_tangent
from .intensity import HWParams, IntensityModel


class Scheme(str, enum.Enum):
    JOINT = "joint"
    DISJOINT = "disjoint"


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkWeights:
    W1: np.ndarray  # (J, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, 2)
    b2: np.ndarray  # (2,)

    @property
    def J(self) -> int:
        return self.W1.shape[0]

    @property
    def H(self) -> int:
        return self.W1.shape[1]

    @property
    def size(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, flat, J: int, H: int) -> "NetworkWeights":
        flat = np.asarray(flat, dtype=np.float64)
        expected = (J + 1) * H + (H + 1) * 2
        if flat.size != expected:
            raise ValueError(f"expected {expected} parameters for J={J}, H={H}, got {flat.size}")
        a = J * H
        return cls(flat[:a].reshape(J, H).copy(), flat[a:a + H].copy(),
                   flat[a + H:a + H + 2 * H].reshape(H, 2).copy(), flat[a + 3 * H:].copy())


def nn_init(rng: np.random.Generator, J: int, H: int = 20) -> NetworkWeights:
    """Every weight and bias i.i.d. Uniform[0, 4]; draw order W1, b1, W2, b2."""
    if J < 1 or H < 1:
        raise ValueError("J and H must be at least 1")
    return NetworkWeights(rng.uniform(0.0, 4.0, (J, H)), rng.uniform(0.0, 4.0, H),
                          rng.uniform(0.0, 4.0, (H, 2)), rng.uniform(0.0, 4.0, 2))


def _forward(y, W: NetworkWeights):
    h = np.asarray(y, dtype=np.float64) @ W.W1 + W.b1
    out = h @ W.W2 + W.b2
    return h, out


def nn_forward(y, W: NetworkWeights) -> tuple[float, float]:
    """theta = |W2^T (W1^T y + b1) + b2|, componentwise."""
    _, out = _forward(y, W)
    theta = np.abs(out)
    return float(theta[0]), float(theta[1])


def nn_backward(y, W: NetworkWeights, grad_theta) -> NetworkWeights:
    """Pull a gradient on theta back to the weights. d|u|/du is taken as 0 at u = 0."""
    y = np.asarray(y, dtype=np.float64)
    h, out = _forward(y, W)
    g_out = np.asarray(grad_theta, dtype=np.float64) * np.sign(out)
    g_h = W.W2 @ g_out
    return NetworkWeights(np.outer(y, g_h), g_h, np.outer(h, g_out), g_out)


@dataclass(frozen=True)
class LossConfig:
    scheme: Scheme = Scheme.DISJOINT
    sigma_d: Optional[float] = None  # None: 0.03 * ln(J)
    sigma_T: float = 0.07
    sigma_L: float = 0.07
    use_distance_term: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        for name in ("sigma_d", "sigma_T", "sigma_L"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def destination_scale(self, J: int) -> float:
        if self.sigma_d is not None:
            return self.sigma_d
        if J < 2:
            raise ValueError("default sigma_d = 0.03 ln J needs J >= 2; set sigma_d explicitly")
        return 0.03 * math.log(J)


@dataclass
class LossTerms:
    destination: float = 0.0
    table: float = 0.0
    distance: float = 0.0

    @property
    def total(self) -> float:
        return self.destination + self.table + self.distance


def _table_cells(T) -> Optional[np.ndarray]:
    if T is None:
        return None
    return T.cells if isinstance(T, ContingencyTable) else np.asarray(T)


def _lam_values(Lam) -> Optional[np.ndarray]:
    if Lam is None:
        return None
    return getattr(Lam, "values", Lam)


def _check_inputs(cfg: LossConfig, T, Lam, data: ObservedData, cost):
    if data.y is None:
        raise CalibrationError(f"{cfg.scheme.value} loss needs observed log attraction y")
    if cfg.scheme is Scheme.JOINT and (T is None or Lam is None):
        raise CalibrationError("joint loss needs both a table and an intensity")
    if cfg.use_distance_term:
        if Lam is None or cost is None or data.dist_origin is None:
            raise CalibrationError(
                f"{cfg.scheme.value} loss with the distance term needs intensity, cost matrix and dist_origin")


def loss_terms(cfg: LossConfig, x, T, Lam, data: ObservedData, cost=None,
               log_lam: Optional[np.ndarray] = None) -> LossTerms:
    """Loss broken into its terms. ``log_lam`` avoids log(0) when Lam underflows."""
    _check_inputs(cfg, T, Lam, data, cost)
    x = np.asarray(x, dtype=np.float64)
    sd = cfg.destination_scale(x.size)
    terms = LossTerms(destination=float(np.sum((x - data.y) ** 2) / (2 * sd ** 2)))
    lam = _lam_values(Lam)
    if cfg.scheme is Scheme.JOINT:
        if log_lam is None:
            log_lam = np.log(lam)
        t = _table_cells(T)
        terms.table = float(-np.sum(t * log_lam - lam) / cfg.sigma_T)
    if cfg.use_distance_term:
        r = (lam * np.asarray(getattr(cost, "values", cost))).sum(axis=1) - data.dist_origin
        terms.distance = float(np.sum(r ** 2) / (2 * cfg.sigma_L ** 2))
    return terms


def loss_eval(cfg: LossConfig, x, T, Lam, data: ObservedData, cost=None) -> float:
    """Destination term, plus the Poisson table term (joint) and distance term (optional)."""
    return loss_terms(cfg, x, T, Lam, data, cost).total


def loss_partials(cfg: LossConfig, x, T, Lam, data: ObservedData, cost=None):
    """Gradient of the loss with respect to x and to log Lam (None when Lam is unused)."""
    x = np.asarray(x, dtype=np.float64)
    sd = cfg.destination_scale(x.size)
    gx = (x - data.y) / sd ** 2
    glog = None
    lam = _lam_values(Lam)
    if cfg.scheme is Scheme.JOINT:
        glog = -(_table_cells(T) - lam) / cfg.sigma_T
    if cfg.use_distance_term:
        c = np.asarray(getattr(cost, "values", cost))
        r = (lam * c).sum(axis=1) - data.dist_origin
        gd = r[:, None] * c * lam / cfg.sigma_L ** 2
        glog = gd if glog is None else glog + gd
    return gx, glog


@dataclass
class ForwardResult:
    theta: tuple[float, float]
    x: np.ndarray
    lam: np.ndarray
    loss: float
    terms: LossTerms
    grad_theta: Optional[np.ndarray] = None
    grad: Optional[NetworkWeights] = None
    log_lam: Optional[np.ndarray] = None


@dataclass
class Pipeline:
    """Forward map W -> theta -> x -> Lam -> loss with a fixed noise path.

    ``x0`` is the solver start (the observed ``y`` by default) and does not
    depend on the weights. ``theta_max`` clips theta straight-through.
    """

    model: IntensityModel
    hw: HWParams
    solver: SolverConfig
    loss: LossConfig
    data: ObservedData
    x0: Optional[np.ndarray] = None
    theta_max: Optional[float] = None

    def __post_init__(self):
        if self.x0 is None:
            self.x0 = np.asarray(self.data.y, dtype=np.float64)

    def _theta(self, W: NetworkWeights):
        alpha, beta = nn_forward(self.data.y, W)
        gate = (1.0, 1.0)
        if self.theta_max is not None:
            gate = (float(alpha < self.theta_max), float(beta < self.theta_max))
            alpha, beta = min(alpha, self.theta_max), min(beta, self.theta_max)
        return (alpha, beta), gate

    def run(self, W: NetworkWeights, noise: Optional[np.ndarray] = None, T=None,
            with_grad: bool = True) -> ForwardResult:
        if self.hw.sigma > 0 and noise is None:
            raise CalibrationError("a noise path is required when sigma > 0")
        (alpha, beta), gate = self._theta(W)

        def jvp(x, dx):
            return self.model.jvp(x, dx, alpha, beta, gate)

        J = self.x0.size
        x, dx = hw_solve_tangent(self.x0, self.hw, jvp, self.solver, noise, np.zeros((2, J)))
        log_lam, dlog = jvp(x, dx)
        lam = np.exp(log_lam)
        terms = loss_terms(self.loss, x, T, lam, self.data, self.model.cost, log_lam=log_lam)
        res = ForwardResult((alpha, beta), x, lam, terms.total, terms, log_lam=log_lam)
        if with_grad:
            gx, glog = loss_partials(self.loss, x, T, lam, self.data, self.model.cost)
            g_theta = dx @ gx
            if glog is not None:
                g_theta = g_theta + np.einsum("kij,ij->k", dlog, glog)
            g_theta = g_theta * np.asarray(gate)
            grad = nn_backward(self.data.y, W, g_theta)
            if not np.all(np.isfinite(grad.flat())):
                raise CalibrationError("non-finite gradient")
            res.grad_theta = g_theta
            res.grad = grad
        return res

    def loss_value(self, W: NetworkWeights, noise=None, T=None) -> float:
        return self.run(W, noise, T, with_grad=False).loss


def loss_grad(pipeline: Pipeline, W: NetworkWeights, noise=None, T=None) -> NetworkWeights:
    """Exact gradient of the pipeline loss with respect to the network weights."""
    return pipeline.run(W, noise, T).grad


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), **kwargs)


def adam_step(W: NetworkWeights, grad: NetworkWeights, state: AdamState) -> tuple[NetworkWeights, AdamState]:
    g = grad.flat()
    if g.shape != state.m.shape:
        raise ValueError("gradient and optimiser state have different sizes")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    flat = W.flat() - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return NetworkWeights.from_flat(flat, W.J, W.H), replace(state, m=m, v=v, step=t)


# Checkpoints: magic b"ODTW", then little-endian uint32 version, int64 J, int64 H,
# then (J+1)*H + (H+1)*2 float64 values in W1 (row-major), b1, W2 (row-major), b2 order.
_MAGIC = b"ODTW"
_HEADER = struct.Struct("<4sIqq")


def save_weights(path, W: NetworkWeights) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, W.J, W.H))
        fh.write(W.flat().astype("<f8").tobytes())


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, J, H = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise ValueError(f"{path} is not a weight checkpoint")
    flat = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    return NetworkWeights.from_flat(flat.astype(np.float64), J, H)
