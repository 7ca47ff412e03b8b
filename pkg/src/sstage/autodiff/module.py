"""Named parameters and a small module container."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor


class Parameter(Tensor):
    """A trainable leaf tensor. Its dot-path name is assigned by the owning module."""

    def __init__(self, values, dtype=None):
        super().__init__(values, requires_grad=True, dtype=dtype or DEFAULT_DTYPE)
        self.name = ""


class Module:
    """Container that discovers ``Parameter``, buffer and child-module attributes.

    Buffers are non-trainable float32 arrays (batch-norm running statistics)
    registered through ``register_buffer``.
    """

    def __init__(self):
        self.training = True
        self._buffers: Dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Parameter, Module)):
                yield key, val

    def named_parameters(self, prefix: str = "") -> Dict[str, Parameter]:
        out: Dict[str, Parameter] = {}
        for key, val in self._children():
            path = f"{prefix}{key}"
            if isinstance(val, Parameter):
                val.name = path
                out[path] = val
            else:
                out.update(val.named_parameters(path + "."))
        return dict(sorted(out.items()))

    def named_buffers(self, prefix: str = "") -> Dict[str, np.ndarray]:
        out = {f"{prefix}{k}": v for k, v in self._buffers.items()}
        for key, val in self._children():
            if isinstance(val, Module):
                out.update(val.named_buffers(f"{prefix}{key}."))
        return dict(sorted(out.items()))

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, val in self._children():
            if isinstance(val, Module):
                val.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def astype(self, dtype) -> "Module":
        """Convert every parameter in place (buffers keep their dtype)."""
        for p in self.parameters():
            p.values = p.values.astype(dtype)
            p.grad = np.zeros_like(p.values)
        return self

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {k: p.values.copy() for k, p in self.named_parameters().items()}
        state.update({k: v.copy() for k, v in self.named_buffers().items()})
        return dict(sorted(state.items()))

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {list(state[k].shape)} != {list(p.shape)}")
            p.values = np.ascontiguousarray(state[k], dtype=p.dtype).copy()
            p.grad = np.zeros_like(p.values)
        for k, b in buffers.items():
            b[...] = state[k]
