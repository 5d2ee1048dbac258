"""Central-difference verification of the hand-written backward passes.

Checks run in float64: products of float32-sized values are exact there
and the finite-difference noise floor sits far below the 1e-4 gate.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tape import GradTape
from .tensor import Tensor

DEFAULT_STEP = 1e-4
REL_ERR_FLOOR = 1e-8


def grad_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = DEFAULT_STEP, fallback_steps: Sequence[float] = (1e-5, 1e-6, 1e-3),
               max_coords_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    ``build_loss`` must rebuild the scalar loss from the current values of
    ``params`` each time it is called. Per coordinate the step is
    ``step * max(1, |theta|)`` and the error is
    |g_analytic - g_fd| / max(1e-8, |g_analytic| + |g_fd|). When a tensor
    has more coordinates than ``max_coords_per_tensor`` a deterministic
    random subset is checked.

    A coordinate whose error at the primary step exceeds 1e-5 is retried at
    each fallback step and scores its best agreement: a 1e-4 window often
    straddles a ReLU/max kink in wide layers (smaller steps fix that), while
    near-zero gradients need a larger step to lift the difference quotient
    above float64 noise. A wrong analytic gradient fails at every step.
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 parameters, got {p.dtype}")
        p.requires_grad = True
        p.grad = None

    with GradTape() as tape:
        loss = build_loss()
        if not np.isfinite(loss.item()):
            raise FloatingPointError(f"grad_check: non-finite loss {loss.item()}")
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    if rng is None:
        rng = np.random.default_rng(0)

    def fd_rel_err(flat, i, g_an, h_base):
        theta = flat[i]
        h = h_base * max(1.0, abs(theta))
        flat[i] = theta + h
        f_plus = build_loss().item()
        flat[i] = theta - h
        f_minus = build_loss().item()
        flat[i] = theta
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError("grad_check: non-finite loss during differencing")
        g_fd = (f_plus - f_minus) / (2.0 * h)
        return abs(g_an - g_fd) / max(REL_ERR_FLOOR, abs(g_an) + abs(g_fd))

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        for i in coords:
            g_an = ga.reshape(-1)[i]
            best = fd_rel_err(flat, i, g_an, step)
            for h_base in fallback_steps:
                if best <= 1e-5:
                    break
                best = min(best, fd_rel_err(flat, i, g_an, h_base))
            if best > worst:
                worst = best
    return worst
