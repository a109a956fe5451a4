"""Small layer library on top of the tensor core: Linear, PReLU, MLP, BatchNorm.

Modules expose ``named_params()`` (trainable tensors, for the optimizer) and
``named_state()`` (trainable tensors plus persistent buffers such as
batch-norm running statistics, for checkpoints). Attribute insertion order
fixes the traversal order, so names are stable across runs.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, batchnorm, matmul, prelu, relu

__all__ = ["Module", "Linear", "PReLU", "MLP", "BatchNorm", "glorot_uniform"]


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Base class providing parameter/buffer traversal and train/eval mode."""

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def _children(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_params(self):
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
        for cname, child in self._children():
            out.extend((f"{cname}.{n}", p) for n, p in child.named_params())
        return out

    def named_state(self):
        out = []
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out.append((name, val))
        for bname in self._buffers:
            out.append((bname, getattr(self, bname)))
        for cname, child in self._children():
            out.extend((f"{cname}.{n}", t) for n, t in child.named_state())
        return out

    def set_training(self, mode: bool):
        self.training = mode
        for _, child in self._children():
            child.set_training(mode)

    def load_state(self, arrays: dict, prefix: str = ""):
        """Copy arrays (by name) into this module's tensors/buffers."""
        for name, t in self.named_state():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing tensor {key!r}")
            src = arrays[key]
            if isinstance(t, Tensor):
                if t.data.shape != src.shape:
                    raise ValueError(
                        f"shape mismatch for {key!r}: "
                        f"model {t.data.shape} vs checkpoint {src.shape}"
                    )
                t.data = src.astype(np.float64).copy()
            else:
                if t.shape != src.shape:
                    raise ValueError(f"shape mismatch for buffer {key!r}")
                t[...] = src


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias=True):
        super().__init__()
        self.weight = Tensor(glorot_uniform(rng, d_in, d_out), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class PReLU(Module):
    def __init__(self, init_slope: float = 0.25):
        super().__init__()
        self.slope = Tensor(np.asarray(init_slope), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)


class MLP(Module):
    """`depth` linear layers with PReLU between them (none after the last)."""

    def __init__(self, rng, d_in: int, d_hidden: int, d_out: int, depth: int):
        super().__init__()
        if depth < 1:
            raise ValueError("MLP depth must be >= 1")
        dims = [d_in] + [d_hidden] * (depth - 1) + [d_out]
        self.layers = [Linear(rng, dims[i], dims[i + 1]) for i in range(depth)]
        self.acts = [PReLU() for _ in range(depth - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.acts):
                x = self.acts[i](x)
        return x


class FeedForward(Module):
    """One hidden layer of the same width, ReLU in between."""

    def __init__(self, rng, d: int):
        super().__init__()
        self.lin1 = Linear(rng, d, d)
        self.lin2 = Linear(rng, d, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(relu(self.lin1(x)))


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )
