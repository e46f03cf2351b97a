"""First-order optimizers: Adam, Optimistic Adam, and ADOPT.

All three share the moment bookkeeping of Adam; they differ in how the
moments turn into a parameter update:

* Adam      theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
* OAdam     theta <- theta - 2 * u_t + u_{t-1}  with  u_t the Adam update
            (the extrapolation term is zero on the first step)
* ADOPT     normalizes the gradient by the *previous* second moment before
            it enters the first moment; the very first call only seeds
            v_0 = g_0 ** 2 and moves nothing.  No bias correction.

One state tracks one parameter set (a list of arrays, updated in place).
States are plain data and can be handed between threads, but a single
state must not receive concurrent ``apply_step`` calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

__all__ = ["OPTIMIZER_KINDS", "OptimizerState", "make_optimizer", "apply_step"]

OPTIMIZER_KINDS = ("adam", "oadam", "adopt")

# ADOPT's slow second moment is part of its design; Adam and OAdam use the
# conventional 0.999.
_DEFAULT_BETA2 = {"adam": 0.999, "oadam": 0.999, "adopt": 0.9999}


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    previous_update: list = field(default_factory=list)
    clip_updates: bool = False


def make_optimizer(kind: str, params, learning_rate: float,
                   beta1: float = 0.9, beta2: float | None = None,
                   epsilon: float = 1e-8,
                   clip_updates: bool = False) -> OptimizerState:
    """Create zeroed optimizer state shaped like ``params``.

    ``clip_updates`` enables ADOPT's optional per-step clip of the
    normalized gradient at t**0.25 and is rejected for other kinds.
    """
    kind = str(kind).lower()
    if kind not in OPTIMIZER_KINDS:
        raise ConfigError(f"unknown optimizer {kind!r}; pick from {OPTIMIZER_KINDS}")
    if beta2 is None:
        beta2 = _DEFAULT_BETA2[kind]
    if not learning_rate >= 0:
        raise ConfigError(f"learning_rate must be >= 0, got {learning_rate}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
    if not epsilon > 0:
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    if clip_updates and kind != "adopt":
        raise ConfigError("clip_updates is an ADOPT-only switch")
    state = OptimizerState(kind, float(learning_rate), float(beta1),
                           float(beta2), float(epsilon),
                           clip_updates=clip_updates)
    for p in params:
        state.first_moment.append(np.zeros_like(p, dtype=float))
        state.second_moment.append(np.zeros_like(p, dtype=float))
        if kind == "oadam":
            state.previous_update.append(np.zeros_like(p, dtype=float))
    return state


def apply_step(state: OptimizerState, params, grads) -> OptimizerState:
    """Advance ``state`` one step, updating ``params`` in place."""
    if len(params) != len(state.first_moment) or len(grads) != len(params):
        raise ShapeError(
            f"state tracks {len(state.first_moment)} arrays, got "
            f"{len(params)} params / {len(grads)} grads"
        )
    for p, g, m in zip(params, grads, state.first_moment):
        if p.shape != m.shape or g.shape != m.shape:
            raise ShapeError(
                f"parameter/gradient shape {p.shape}/{g.shape} does not "
                f"match tracked shape {m.shape}"
            )
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to optimizer")

    state.step += 1
    t = state.step
    b1, b2, lr, eps = state.beta1, state.beta2, state.learning_rate, state.epsilon

    if state.kind == "adopt":
        if t == 1:
            # Seed run: v_0 = g_0^2, parameters untouched.
            for g, v in zip(grads, state.second_moment):
                v[...] = g * g
            return state
        for p, g, m, v in zip(params, grads, state.first_moment,
                              state.second_moment):
            normed = g / np.maximum(np.sqrt(v), eps)
            if state.clip_updates:
                c = (t - 1) ** 0.25
                normed = np.clip(normed, -c, c)
            m[...] = b1 * m + (1 - b1) * normed
            p -= lr * m
            v[...] = b2 * v + (1 - b2) * g * g
        return state

    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i]
        v = state.second_moment[i]
        m[...] = b1 * m + (1 - b1) * g
        v[...] = b2 * v + (1 - b2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        if state.kind == "adam":
            p -= update
        else:  # oadam
            p -= 2.0 * update - state.previous_update[i]
            state.previous_update[i][...] = update
    return state
