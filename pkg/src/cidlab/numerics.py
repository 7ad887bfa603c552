"""Float64 vector helpers, seeded randomness, SGD with momentum, and a
finite-difference gradient checker.

Everything here works in 64-bit precision. Randomness always flows from an
explicit seed through numpy's PCG64 bit generator (never the process-global
state), so any pipeline seeded identically replays bit-for-bit on every
platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonFiniteError, ShapeMismatchError, ZeroVectorError

ZERO_NORM_TOL = 1e-12

_U64 = (1 << 64) - 1


def rng_from_seed(seed: int, *tags: int) -> np.random.Generator:
    """PCG64 generator keyed by ``(seed, *tags)``.

    The same key always yields the same stream; distinct tags yield
    statistically independent streams. Components are folded to unsigned
    64-bit so negative seeds are accepted.
    """
    entropy = tuple(int(v) & _U64 for v in (seed, *tags))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def check_finite(arr, what: str = "array"):
    """Raise NonFiniteError if ``arr`` contains NaN or Inf; return it unchanged."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean norm.

    Raises ZeroVectorError when the norm is at or below 1e-12: a zero vector
    at a normalization step signals an upstream bug, never a value to patch.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ZeroVectorError("cannot normalize an empty vector")
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_NORM_TOL:
        raise ZeroVectorError(f"vector norm {norm!r} is at or below {ZERO_NORM_TOL}")
    return v / norm


def l2_normalize_rows(m) -> np.ndarray:
    """Row-wise unit normalization of a 2-d array; same zero-norm contract."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        raise ZeroVectorError("a row norm is at or below the zero tolerance")
    return m / norms[:, None]


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """Half-cosine decay from ``base_lr`` at step 0 to 0 at ``total_steps``."""
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimizerState:
    """SGD-with-momentum state over a list of parameter arrays.

    ``total_steps`` > 0 selects cosine decay of the learning rate over that
    horizon; 0 keeps the learning rate constant at ``learning_rate_base``.
    Weight decay is folded into the gradient (no decoupled variant).
    """

    learning_rate_base: float
    momentum_coeff: float = 0.9
    weight_decay: float = 0.0
    velocity: list = field(default_factory=list)
    step_count: int = 0
    total_steps: int = 0

    @classmethod
    def for_params(cls, params, learning_rate_base, momentum_coeff=0.9,
                   weight_decay=0.0, total_steps=0):
        state = cls(learning_rate_base=learning_rate_base,
                    momentum_coeff=momentum_coeff,
                    weight_decay=weight_decay,
                    total_steps=total_steps)
        state.velocity = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
        return state

    def current_lr(self) -> float:
        if self.total_steps > 0:
            return cosine_lr(self.step_count, self.total_steps, self.learning_rate_base)
        return self.learning_rate_base


def sgd_momentum_step(params, grads, state: OptimizerState):
    """One SGD-with-momentum update over matching lists of arrays.

    velocity <- momentum * velocity + (grad + weight_decay * param)
    param    <- param - lr(step) * velocity

    Returns the updated parameter list; ``state`` is updated in place
    (velocity, step_count). The learning rate is evaluated at the pre-update
    step count.
    """
    if len(params) != len(grads):
        raise ShapeMismatchError(f"{len(params)} params vs {len(grads)} grads")
    if not state.velocity:
        state.velocity = [np.zeros_like(np.asarray(p, dtype=np.float64)) for p in params]
    if len(state.velocity) != len(params):
        raise ShapeMismatchError("velocity list length does not match params")
    lr = state.current_lr()
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(g, dtype=np.float64)
        if p.shape != g.shape:
            raise ShapeMismatchError(f"param {i} shape {p.shape} vs grad shape {g.shape}")
        if state.velocity[i].shape != p.shape:
            raise ShapeMismatchError(f"velocity {i} shape {state.velocity[i].shape} vs param shape {p.shape}")
        v = state.momentum_coeff * state.velocity[i] + (g + state.weight_decay * p)
        state.velocity[i] = v
        new_params.append(p - lr * v)
    state.step_count += 1
    return new_params, state


def finite_difference_gradcheck(f, grad_f, x, eps: float = 1e-5) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``f`` maps a 1-d point to a scalar, ``grad_f`` to its gradient. The error
    at coordinate i is |analytic_i - numeric_i| / max(1, |analytic_i|); the
    maximum over coordinates is returned. Raises NonFiniteError if any
    evaluation of ``f`` or ``grad_f`` is NaN/Inf.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad_f(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeMismatchError(f"gradient shape {analytic.shape} vs point shape {x.shape}")
    check_finite(analytic, "analytic gradient")
    numeric = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp = float(f(xp))
        fm = float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError("f returned NaN or Inf during finite differencing")
        numeric[i] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
