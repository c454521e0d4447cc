"""Named parameter storage with per-parameter Adam accumulators."""

from __future__ import annotations

import numpy as np

from .autodiff import Node

Array = np.ndarray


class ParameterStore:
    """Flat registry of named float64 parameter arrays.

    Every parameter owns exactly one gradient slot of identical shape
    (zero-initialized) plus Adam first/second moment accumulators.  A single
    global step counter advances by one per optimizer step.
    """

    def __init__(self):
        self.params: dict[str, Node] = {}
        self.adam_m: dict[str, Array] = {}
        self.adam_v: dict[str, Array] = {}
        self.step_count: int = 0
        self._scratch: dict[str, Array] = {}

    def scratch(self, name: str) -> Array:
        """Reusable work buffer shaped like the named parameter."""
        buf = self._scratch.get(name)
        if buf is None:
            buf = np.empty_like(self.params[name].data)
            self._scratch[name] = buf
        return buf

    def add(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already registered")
        arr = np.array(value, dtype=np.float64)
        node = Node(arr, grad=np.zeros_like(arr))
        self.params[name] = node
        self.adam_m[name] = np.zeros_like(arr)
        self.adam_v[name] = np.zeros_like(arr)
        return node

    def __getitem__(self, name: str) -> Node:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def gradients(self) -> dict[str, Array]:
        return {name: p.grad for name, p in self.params.items()}

    def zero_grads(self) -> None:
        for p in self.params.values():
            if p.grad is None or p.grad.shape != p.data.shape:
                p.grad = np.zeros_like(p.data)
            else:
                p.grad[...] = 0.0

    def state_arrays(self) -> dict[str, Array]:
        """All persistent state as named arrays (checkpoint payload)."""
        out: dict[str, Array] = {}
        for name, p in self.params.items():
            out[f"param/{name}"] = p.data
            out[f"adam_m/{name}"] = self.adam_m[name]
            out[f"adam_v/{name}"] = self.adam_v[name]
        out["step_count"] = np.array([float(self.step_count)])
        return out

    def load_state_arrays(self, arrays: dict[str, Array]) -> None:
        for name, p in self.params.items():
            for prefix, target in (("param/", p.data), ("adam_m/", self.adam_m[name]),
                                   ("adam_v/", self.adam_v[name])):
                key = prefix + name
                if key not in arrays:
                    raise KeyError(f"checkpoint missing array {key!r}")
                src = arrays[key]
                if src.shape != target.shape:
                    raise ValueError(
                        f"checkpoint array {key!r} has shape {src.shape}, expected {target.shape}")
                target[...] = src
        self.step_count = int(arrays["step_count"][0])
        self.zero_grads()


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Array:
    """Scaled-uniform initialization, bound 1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine layer ``x @ W + b`` over row-batched inputs."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator):
        self.w = store.add(f"{name}/w", uniform_fan_in(rng, in_dim, (in_dim, out_dim)))
        self.b = store.add(f"{name}/b", uniform_fan_in(rng, in_dim, (out_dim,)))
        self.in_dim = in_dim
        self.out_dim = out_dim

    def __call__(self, tape, x: Node) -> Node:
        from . import autodiff as ad
        xd = x.data if isinstance(x, Node) else np.asarray(x)
        if xd.shape[-1] != self.in_dim:
            raise ValueError(
                f"dense layer expects input width {self.in_dim}, got {xd.shape[-1]}")
        return ad.add(tape, ad.matmul(tape, x, self.w), self.b)
