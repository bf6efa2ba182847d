"""Parameterized layers on top of the autodiff ops.

Initialization is uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a per-layer
seeded stream, rounded to float32-representable values so a freshly
initialized model round-trips bit-exactly through the float32 checkpoint
format.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    vals = rng.uniform(-bound, bound, size=shape)
    return vals.astype(np.float32).astype(np.float64)


class Module:
    """Minimal parameter container with named-path traversal."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def register(self, name: str, value) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_child(self, name: str, child: "Module") -> "Module":
        self._children[name] = child
        return child

    def parameters(self):
        """Yield (path, tensor) pairs in deterministic registration order."""
        for name, t in self._params.items():
            yield name, t
        for cname, child in self._children.items():
            for sub, t in child.parameters():
                yield f"{cname}.{sub}", t

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.parameters())
        unknown = set(arrays) - set(own)
        missing = set(own) - set(arrays)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        if missing:
            raise KeyError(f"missing parameter names: {sorted(missing)}")
        for name, t in own.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}")
            t.data = arr.copy()


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng):
        super().__init__()
        self.w = self.register("w", _uniform_init(rng, (in_features, out_features), in_features))
        self.b = self.register("b", _uniform_init(rng, (out_features,), in_features))

    def __call__(self, x: Tensor) -> Tensor:
        """x [..., in] -> [..., out]; leading axes are flattened and restored."""
        lead = x.shape[:-1]
        flat = ad.reshape(x, (-1, x.shape[-1]))
        y = _add_row_bias(ad.matmul(flat, self.w), self.b)
        return ad.reshape(y, lead + (self.w.shape[1],))


def _add_row_bias(y: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add for 2-D activations (explicit, no general broadcast)."""

    def backward(g):
        return (g, g.sum(axis=0))

    return Tensor._result(y.data + b.data[None, :], (y, b), backward, "row_bias")


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng, stride: int = 1,
                 padding: int = 0, zero_init: bool = False):
        super().__init__()
        fan_in = in_ch * kernel
        w = _uniform_init(rng, (out_ch, in_ch, kernel), fan_in)
        b = _uniform_init(rng, (out_ch,), fan_in)
        if zero_init:
            w = np.zeros_like(w)
            b = np.zeros_like(b)
        self.w = self.register("w", w)
        self.b = self.register("b", b)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.w, self.b, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng, stride: int = 1, padding: int = 0):
        super().__init__()
        fan_in = in_ch * kernel
        self.w = self.register("w", _uniform_init(rng, (in_ch, out_ch, kernel), fan_in))
        self.b = self.register("b", _uniform_init(rng, (out_ch,), fan_in))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose1d(x, self.w, self.b, self.stride, self.padding)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-6):
        super().__init__()
        self.g = self.register("g", np.ones(features))
        self.b = self.register("b", np.zeros(features))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.g, self.b, self.eps)


class PReLU(Module):
    def __init__(self, init: float = 0.25):
        super().__init__()
        self.slope = self.register("slope", np.array([init]))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.prelu(x, self.slope)


class GRU(Module):
    """Sequence GRU over [S, R, F] inputs, optionally bidirectional.

    Bidirectional output concatenates forward and backward hidden states on
    the feature axis ([S, R, 2H]).
    """

    def __init__(self, in_features: int, hidden: int, rng, bidirectional: bool = False):
        super().__init__()
        self.hidden = hidden
        self.bidirectional = bidirectional
        self.wi = self.register("wi", _uniform_init(rng, (in_features, 3 * hidden), in_features))
        self.bi = self.register("bi", _uniform_init(rng, (3 * hidden,), in_features))
        self.wh = self.register("wh", _uniform_init(rng, (hidden, 3 * hidden), hidden))
        self.bh = self.register("bh", _uniform_init(rng, (3 * hidden,), hidden))
        if bidirectional:
            self.wi_r = self.register("wi_r", _uniform_init(rng, (in_features, 3 * hidden), in_features))
            self.bi_r = self.register("bi_r", _uniform_init(rng, (3 * hidden,), in_features))
            self.wh_r = self.register("wh_r", _uniform_init(rng, (hidden, 3 * hidden), hidden))
            self.bh_r = self.register("bh_r", _uniform_init(rng, (3 * hidden,), hidden))

    @property
    def out_features(self) -> int:
        return self.hidden * (2 if self.bidirectional else 1)

    def __call__(self, x: Tensor) -> Tensor:
        fwd = ad.gru_seq(x, self.wi, self.bi, self.wh, self.bh)
        if not self.bidirectional:
            return fwd
        bwd = ad.gru_seq(x, self.wi_r, self.bi_r, self.wh_r, self.bh_r, reverse=True)
        return ad.concat([fwd, bwd], axis=2)
