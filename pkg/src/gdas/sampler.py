"""Differentiable categorical sampling over the candidates of each edge.

Functions accept a single logit vector of length K or a stack of shape
(E, K); everything acts on the last axis.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

logger = logging.getLogger(__name__)

U_CLAMP = 1e-12


def derive_seed(seed: int, *names) -> int:
    """Stable 63-bit seed from a root seed and a path of names/ints."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for n in names:
        h.update(b"/")
        h.update(str(n).encode())
    return int.from_bytes(h.digest(), "little") >> 1


def rng_for(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))


def _values(a) -> np.ndarray:
    return a.data if isinstance(a, Tensor) else np.asarray(a, dtype=np.float64)


def edge_probabilities(a_edge) -> np.ndarray:
    """Softmax over candidates of the logits of one edge (or a stack of edges)."""
    a = _values(a_edge)
    if not np.all(np.isfinite(a)):
        raise ValueError("edge_probabilities: non-finite logits")
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = np.clip(rng.random(shape), U_CLAMP, 1.0 - U_CLAMP)
    return -np.log(-np.log(u))


def noise_for(seed: int, iteration: int, cell_index: int, num_edges: int, k: int,
              phase: str = "W") -> np.ndarray:
    """Gumbel noise (E, K) for one cell instance in one iteration.

    Row e is the noise of edge e; the whole block is a pure function of
    (seed, phase, iteration, cell_index).
    """
    return gumbel_noise(rng_for(seed, "gumbel", phase, iteration, cell_index), (num_edges, k))


def gumbel_argmax(a_edge, noise) -> np.ndarray:
    """One-hot of argmax(A + o); the lowest index wins ties."""
    a = _values(a_edge)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != a.shape:
        raise ValueError(f"gumbel_argmax: noise shape {noise.shape} != logits shape {a.shape}")
    idx = np.argmax(a + noise, axis=-1)
    return np.eye(a.shape[-1])[idx]


def _check_tau(tau: float) -> float:
    tau = float(tau)
    if not (tau > 0 and np.isfinite(tau)):
        raise ValueError(f"temperature must be positive and finite, got {tau}")
    return tau


def gumbel_softmax(a_edge, noise, tau: float) -> Tensor:
    """Relaxed sample softmax((log p + o) / tau), differentiable w.r.t. the logits."""
    tau = _check_tau(tau)
    a = a_edge if isinstance(a_edge, Tensor) else Tensor(a_edge)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != a.shape:
        raise ValueError(f"gumbel_softmax: noise shape {noise.shape} != logits shape {a.shape}")
    logp = T.log_softmax(a)
    return T.softmax(T.scale(T.add_const(logp, noise), 1.0 / tau))


def straight_through_select(a_edge, noise, tau: float) -> tuple[Tensor, Tensor]:
    """Hard one-hot in the forward pass, gradient of the relaxed sample in backward.

    Returns ``(hard, soft)``; ``hard`` carries the one-hot values and routes
    its adjoint unchanged into ``soft``.
    """
    soft = gumbel_softmax(a_edge, noise, tau)
    hard = gumbel_argmax(a_edge, noise)
    return T.straight_through(hard, soft), soft


@dataclass(frozen=True)
class TemperatureSchedule:
    total_steps: int
    tau_start: float = 10.0
    tau_end: float = 0.1

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be positive")


def anneal_tau(schedule: TemperatureSchedule, step: int) -> float:
    """Linear interpolation from tau_start to tau_end; out-of-range steps clamp."""
    if step < 0 or step > schedule.total_steps:
        logger.warning("anneal_tau: step %s outside [0, %s], clamping", step, schedule.total_steps)
        step = min(max(step, 0), schedule.total_steps)
    frac = step / schedule.total_steps
    return schedule.tau_start + (schedule.tau_end - schedule.tau_start) * frac
