"""Named parameter collections and the Adam optimizer."""

from __future__ import annotations

import hashlib

import numpy as np

from .autodiff import Tensor


class MissingGradError(RuntimeError):
    """A trainable parameter reached the optimizer without a gradient."""


class ModelBundle:
    """Ordered mapping of parameter names to tensors with trainable flags.

    The trainable flag is the tensor's ``requires_grad``: frozen parameters
    never receive gradients and the optimizer skips them entirely.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor, trainable: bool = True) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = bool(trainable)
        self._params[name] = tensor
        return tensor

    def merge(self, prefix: str, params: dict[str, Tensor]) -> None:
        for name, tensor in params.items():
            self.add(f"{prefix}.{name}", tensor, trainable=tensor.requires_grad)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def trainable_items(self):
        return [(n, p) for n, p in self._params.items() if p.requires_grad]

    def count_params(self, trainable_only: bool = True, prefix: str = "") -> int:
        """Exact number of scalar entries in the selected parameter buffers."""
        total = 0
        for name, p in self._params.items():
            if prefix and not name.startswith(prefix):
                continue
            if trainable_only and not p.requires_grad:
                continue
            total += p.size
        return total

    def freeze(self, prefix: str = "") -> None:
        """Clear trainable flags (and any stale grads) under ``prefix``."""
        for name, p in self._params.items():
            if name.startswith(prefix):
                p.requires_grad = False
                p.grad = None

    def unfreeze(self, prefix: str = "") -> None:
        for name, p in self._params.items():
            if name.startswith(prefix):
                p.requires_grad = True

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def digest(self, prefix: str = "") -> str:
        """SHA-256 over raw little-endian bytes of parameters under ``prefix``."""
        h = hashlib.sha256()
        for name, p in self._params.items():
            if not name.startswith(prefix):
                continue
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


class Adam:
    """Adam with bias correction over the trainable slice of a bundle.

    Moment buffers exist only for trainable parameters; frozen parameters
    are untouched (bitwise) by :meth:`step`. Gradients are zeroed after a
    step so the next tape starts clean.
    """

    def __init__(self, bundle: ModelBundle, lr: float = 1e-5,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.bundle = bundle
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.bundle.items():
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise MissingGradError(f"trainable parameter {name!r} has no gradient")
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for _, p in self.bundle.trainable_items():
            p.grad = None
