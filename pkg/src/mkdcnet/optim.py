"""Optimization machinery: bias-corrected Adam, reduce-on-plateau learning
rate scheduling, and early stopping.

Adam iterates parameters in sorted-name order and rejects non-finite
gradients with the offending parameter named, so training failures point
at a tensor instead of silently corrupting weights.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(RuntimeError):
    pass


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: float = 0.0):
        self.params = dict(sorted(params.items()))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
            grads[name] = g
        if self.grad_clip > 0.0:
            norm = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
            if norm > self.grad_clip:
                s = self.grad_clip / norm
                grads = {name: g * g.dtype.type(s) for name, g in grads.items()}
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * update

    # -- resume support ------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def state_meta(self) -> dict:
        return {"t": self.t, "lr": self.lr}

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for name in self.params:
            self.m[name][...] = arrays[f"opt.m.{name}"].reshape(self.m[name].shape)
            self.v[name][...] = arrays[f"opt.v.{name}"].reshape(self.v[name].shape)
        self.t = int(meta["t"])
        self.lr = float(meta["lr"])


class PlateauScheduler:
    """Multiply the lr by `factor` when the monitored value fails to improve
    for `patience` consecutive epochs (mode: min). Never increases, never
    drops below `min_lr`."""

    def __init__(self, optimizer: Adam, factor: float = 0.5, patience: int = 5,
                 min_lr: float = 1e-7):
        if not (0.0 < factor < 1.0):
            raise ValueError("factor must lie in (0,1)")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = float("inf")
        self.num_bad = 0

    def step(self, value: float) -> bool:
        """Returns True when the lr was reduced this epoch."""
        if value < self.best:
            self.best = value
            self.num_bad = 0
            return False
        self.num_bad += 1
        if self.num_bad >= self.patience:
            self.num_bad = 0
            new_lr = max(self.optimizer.lr * self.factor, self.min_lr)
            if new_lr < self.optimizer.lr:
                self.optimizer.lr = new_lr
                return True
        return False

    def state_meta(self) -> dict:
        return {"best": self.best, "num_bad": self.num_bad}

    def load_state(self, meta: dict) -> None:
        self.best = float(meta["best"])
        self.num_bad = int(meta["num_bad"])


class EarlyStopper:
    """Stop once the monitored value has not improved for more than
    `patience` epochs (triggers when the stale count exceeds patience)."""

    def __init__(self, patience: int = 50):
        self.patience = patience
        self.best = float("inf")
        self.count = 0

    def step(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.count = 0
            return False
        self.count += 1
        return self.count > self.patience

    def state_meta(self) -> dict:
        return {"best": self.best, "count": self.count}

    def load_state(self, meta: dict) -> None:
        self.best = float(meta["best"])
        self.count = int(meta["count"])
