"""A small dense network engine with hand-written backpropagation.

Inputs are either a single vector of shape ``(n_in,)`` or a batch of row
vectors ``(batch, n_in)``. Every layer caches what it needs during
:meth:`Mlp.forward` so that :meth:`Mlp.backward` can accumulate parameter
gradients and hand back the gradient with respect to the network input.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MAGIC = b"RRL1"
FORMAT_VERSION = 1
ACTIVATIONS = ("tanh", "relu", "linear", "scaled_sigmoid")


class DimensionMismatch(ValueError):
    pass


class NoCachedForward(RuntimeError):
    pass


class BlobFormatError(ValueError):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"
    bounds: tuple[float, float] | None = None
    grad_weight: np.ndarray = field(init=False, repr=False)
    grad_bias: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weight = np.array(self.weight, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64, ndmin=1)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(f"bias {self.bias.shape} does not match weight {self.weight.shape}")
        if self.activation == "scaled_sigmoid":
            if self.bounds is None:
                raise ValueError("scaled_sigmoid needs (low, high) bounds")
            lo, hi = self.bounds
            if not lo < hi:
                raise ValueError(f"empty bounds {self.bounds}")
            self.bounds = (float(lo), float(hi))
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None
        self._y = None
        self._z = None

    @property
    def n_in(self) -> int:
        return self.weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.weight.T + self.bias
        act = self.activation
        if act == "tanh":
            y = np.tanh(z)
        elif act == "relu":
            y = np.maximum(z, 0.0)
        elif act == "linear":
            y = z
        else:
            lo, hi = self.bounds
            y = lo + (hi - lo) * _sigmoid(z)
        self._x, self._z, self._y = x, z, y
        return y

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise NoCachedForward("backward called before forward")
        act = self.activation
        if act == "tanh":
            dz = upstream * (1.0 - self._y ** 2)
        elif act == "relu":
            dz = upstream * (self._z > 0)
        elif act == "linear":
            dz = upstream
        else:
            lo, hi = self.bounds
            s = (self._y - lo) / (hi - lo)
            dz = upstream * (hi - lo) * s * (1.0 - s)
        if dz.ndim == 1:
            self.grad_weight += np.outer(dz, self._x)
            self.grad_bias += dz
        else:
            self.grad_weight += dz.T @ self._x
            self.grad_bias += dz.sum(axis=0)
        return dz @ self.weight


class Mlp:
    """Dense feed-forward network."""

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.n_in != prev.n_out:
                raise DimensionMismatch(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")
        self.layers = list(layers)
        self._cached = False

    @classmethod
    def build(cls, sizes: Sequence[int], rng: np.random.Generator, hidden: str = "tanh",
              output: str = "linear", bounds: tuple[float, float] | None = None,
              final_scale: float = 3e-3) -> "Mlp":
        """Hidden layers draw from U(+-1/sqrt(fan_in)), the last layer from U(+-final_scale)."""
        layers = []
        n = len(sizes) - 1
        for k, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            last = k == n - 1
            lim = final_scale if last else 1.0 / np.sqrt(n_in)
            w = rng.uniform(-lim, lim, size=(n_out, n_in))
            b = rng.uniform(-lim, lim, size=n_out)
            layers.append(Layer(w, b, output if last else hidden, bounds if last else None))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def architecture(self) -> list[dict]:
        return [{"in": l.n_in, "out": l.n_out, "activation": l.activation,
                 "bounds": list(l.bounds) if l.bounds else None} for l in self.layers]

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in or x.ndim > 2:
            raise DimensionMismatch(f"expected input width {self.n_in}, got shape {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        self._cached = True
        return x

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        """Forward pass that leaves the backward cache untouched."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in or x.ndim > 2:
            raise DimensionMismatch(f"expected input width {self.n_in}, got shape {x.shape}")
        for layer in self.layers:
            z = x @ layer.weight.T + layer.bias
            if layer.activation == "tanh":
                x = np.tanh(z)
            elif layer.activation == "relu":
                x = np.maximum(z, 0.0)
            elif layer.activation == "linear":
                x = z
            else:
                lo, hi = layer.bounds
                x = lo + (hi - lo) * _sigmoid(z)
        return x

    def backward(self, upstream) -> np.ndarray:
        """Accumulate d(output . upstream)/d(params); return the input gradient."""
        if not self._cached:
            raise NoCachedForward("backward called before forward")
        g = np.asarray(upstream, dtype=np.float64)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.grad_weight.fill(0.0)
            layer.grad_bias.fill(0.0)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.grad_weight, layer.grad_bias]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params():
            raise DimensionMismatch(f"expected {self.n_params()} parameters, got {flat.size}")
        k = 0
        for p in self.parameters():
            p[...] = flat[k:k + p.size].reshape(p.shape)
            k += p.size

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation, l.bounds) for l in self.layers])

    def same_shape(self, other: "Mlp") -> bool:
        return self.architecture() == other.architecture()


class Adam:
    """Adaptive-moment optimizer holding per-parameter moment estimates."""

    def __init__(self, net: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.parameters()]
        self.v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, net: Mlp) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(net.parameters(), net.gradients(), self.m, self.v):
            if p.shape != m.shape:
                raise DimensionMismatch("optimizer state does not mirror the network")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def apply_gradients(net: Mlp, opt: Adam) -> Mlp:
    opt.step(net)
    net.zero_grad()
    return net


Probe = Callable[[np.ndarray], tuple[float, np.ndarray]]


def linear_probe(weights) -> Probe:
    w = np.asarray(weights, dtype=np.float64)
    return lambda out: (float(np.sum(w * out)), np.broadcast_to(w, out.shape).copy())


def quadratic_probe(target=0.0) -> Probe:
    return lambda out: (float(0.5 * np.sum((out - target) ** 2)), out - target)


def gradient_check(net: Mlp, probe: Probe, x, h: float = 1e-5) -> float:
    """Max over parameters of |analytic - numeric| / max(1, |numeric|).

    Numeric derivatives are central differences of ``probe(net(x))``.
    """
    x = np.asarray(x, dtype=np.float64)
    net.zero_grad()
    out = net.forward(x)
    _, g = probe(out)
    net.backward(g)
    analytic = [gr.copy() for gr in net.gradients()]
    net.zero_grad()
    worst = 0.0
    for p, a in zip(net.parameters(), analytic):
        flat, aflat = p.reshape(-1), a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = probe(net.predict(x))[0]
            flat[k] = orig - h
            fm = probe(net.predict(x))[0]
            flat[k] = orig
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, abs(aflat[k] - num) / max(1.0, abs(num)))
    return worst


def save(net: Mlp, path) -> tuple[Path, Path]:
    """Write ``<path>.bin`` (magic, count, little-endian float64) and a ``<path>.json`` sidecar."""
    path = Path(path)
    flat = net.get_flat()
    blob = path.with_suffix(".bin")
    sidecar = path.with_suffix(".json")
    with open(blob, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, flat.size))
        fh.write(flat.astype("<f8").tobytes())
    meta = {"magic": MAGIC.decode(), "version": FORMAT_VERSION, "dtype": "<f8",
            "n_params": int(flat.size), "layout": "per layer: weight (out x in, row-major) then bias",
            "layers": net.architecture()}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return blob, sidecar


def load(path) -> Mlp:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    if meta.get("magic") != MAGIC.decode() or meta.get("version") != FORMAT_VERSION:
        raise BlobFormatError(f"unsupported sidecar {path.with_suffix('.json')}")
    raw = path.with_suffix(".bin").read_bytes()
    if raw[:4] != MAGIC:
        raise BlobFormatError("bad magic header")
    version, count = struct.unpack("<IQ", raw[4:16])
    if version != FORMAT_VERSION or count != meta["n_params"]:
        raise BlobFormatError("blob header disagrees with sidecar")
    flat = np.frombuffer(raw[16:], dtype="<f8")
    if flat.size != count:
        raise BlobFormatError(f"blob holds {flat.size} values, header says {count}")
    layers = []
    for spec in meta["layers"]:
        bounds = tuple(spec["bounds"]) if spec["bounds"] else None
        layers.append(Layer(np.zeros((spec["out"], spec["in"])), np.zeros(spec["out"]),
                            spec["activation"], bounds))
    net = Mlp(layers)
    net.set_flat(flat.astype(np.float64))
    return net
