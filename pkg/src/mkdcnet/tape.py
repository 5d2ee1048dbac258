"""Reverse-mode differentiation tape.

Operators append one OpNode per forward call while a GradTape is active;
`backward` replays the nodes in reverse, which visits every consumer
before its producer because the tape is in forward execution order.
Nothing is recorded when no tape is active, so inference pays no cost.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

_TAPE_STACK: list["GradTape"] = []


def active_tape() -> "GradTape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class OpNode:
    """One recorded forward operation.

    `backward_fn` maps the output gradient to a tuple of input gradients
    (entries may be None for non-differentiable inputs). Saved activations
    live in the closure.
    """

    __slots__ = ("kind", "inputs", "output", "backward_fn")

    def __init__(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
                 backward_fn: Callable[[np.ndarray], tuple]):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn

    def __repr__(self):
        return f"OpNode({self.kind}, {len(self.inputs)} inputs)"


class GradTape:
    def __init__(self):
        self.nodes: list[OpNode] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, kind: str, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], tuple]) -> None:
        self.nodes.append(OpNode(kind, inputs, output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of `loss` into every tensor on the tape.

        `loss` must be a single-element tensor. Gradients add into `.grad`
        in reverse tape order, a deterministic sequence.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self.nodes):
            gout = node.output.grad
            if gout is None:
                continue  # this output never reached the loss
            grads = node.backward_fn(gout)
            if len(grads) != len(node.inputs):
                raise RuntimeError(f"{node.kind}: backward returned {len(grads)} grads "
                                   f"for {len(node.inputs)} inputs")
            for t, g in zip(node.inputs, grads):
                if g is None:
                    continue
                if g.shape != t.data.shape:
                    raise RuntimeError(f"{node.kind}: grad shape {g.shape} != input shape {t.data.shape}")
                if t.grad is None:
                    # own the buffer: passthrough grads (g is gout) and views
                    # must be copied or later accumulation would alias
                    t.grad = g.copy() if (g is gout or g.base is not None) else g
                else:
                    t.grad += g
            # intermediate grads are consumed exactly once; free them eagerly
            if not node.output.requires_grad:
                node.output.grad = None


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
