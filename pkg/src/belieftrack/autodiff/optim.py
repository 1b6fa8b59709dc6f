"""Named parameter groups and the Adam update rule."""

import logging

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


class ParameterBlock:
    """An ordered set of named parameter tensors plus their Adam state.

    Blocks are the unit of checkpointing and of optimizer stepping; every
    learnable network in the package owns exactly one.
    """

    def __init__(self, name: str):
        self.name = name
        self.tensors: dict[str, Tensor] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self.tensors:
            raise ValueError(f"duplicate parameter {name!r} in block {self.name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self.tensors[name] = t
        self.moment1[name] = np.zeros_like(t.values)
        self.moment2[name] = np.zeros_like(t.values)
        self.steps[name] = 0
        return t

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def has_grad(self) -> bool:
        """True when any parameter accumulated a nonzero gradient."""
        return any(t._grad is not None and np.any(t._grad != 0.0)
                   for t in self.tensors.values())

    def copy_values(self) -> dict:
        return {k: t.values.copy() for k, t in self.tensors.items()}

    def load_values(self, values: dict):
        for k, v in values.items():
            self.tensors[k].values[...] = v


def adam_step(block: ParameterBlock, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> bool:
    """One Adam update over every tensor of the block; grads are then zeroed.

    A non-finite gradient anywhere in the block skips the whole update (the
    moments would be poisoned otherwise) and reports the event. Returns
    whether the update was applied.
    """
    grads = {k: t.grad for k, t in block.tensors.items()}
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        log.warning("adam: non-finite gradient in block %r, update skipped", block.name)
        block.zero_grads()
        return False
    for k, t in block.tensors.items():
        g = grads[k]
        block.steps[k] += 1
        step = block.steps[k]
        m = block.moment1[k]
        v = block.moment2[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        t.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
    block.zero_grads()
    return True
