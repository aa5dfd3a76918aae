"""Layered CNN with exact backpropagation.

Tensors are NCHW. A config's ``input`` is (h, w, c). Layers:
``conv`` (k, out, stride; 'same'-style padding k//2), ``maxpool`` (k),
``relu``, ``flatten`` and ``dense`` (out). The head squashes the last
dense output:

- ``binary_classifier``: one unit, logistic -> probability in (0, 1)
- ``fraction_regressor``: one unit, logistic -> fraction in (0, 1)
- ``scalar_regressor``: one unit, identity
- ``objectness_offset``: two raw logits (objectness, offset)
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from gpplane import kernels

HEADS = ("binary_classifier", "fraction_regressor", "scalar_regressor", "objectness_offset")
_HEAD_UNITS = {"binary_classifier": 1, "fraction_regressor": 1, "scalar_regressor": 1, "objectness_offset": 2}


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """A forward cache was used after the parameters changed."""


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class MicroNetConfig:
    input: tuple[int, int, int]
    layers: list[dict]
    head: str = "binary_classifier"
    param_budget: int | None = None
    name: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "input": list(self.input),
                "layers": self.layers,
                "head": self.head,
                "param_budget": self.param_budget,
                "name": self.name,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MicroNetConfig":
        d = json.loads(text)
        return cls(tuple(d["input"]), d["layers"], d["head"], d.get("param_budget"), d.get("name", ""))

    def shapes(self) -> list[tuple]:
        """Per-layer output shapes (without batch) and parameter shapes, validated."""
        h, w, c = self.input
        shape: tuple = (c, h, w)
        plan = []
        if self.head not in HEADS:
            raise ShapeError(f"unknown head {self.head!r}")
        for i, layer in enumerate(self.layers):
            kind = layer["type"]
            params: list[tuple] = []
            if kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"layer {i}: conv needs a (c, h, w) input")
                k, out, s = layer["k"], layer["out"], layer.get("stride", 1)
                pad = layer.get("pad", k // 2)
                ci, hi, wi = shape
                ho, wo = (hi + 2 * pad - k) // s + 1, (wi + 2 * pad - k) // s + 1
                if ho <= 0 or wo <= 0:
                    raise ShapeError(f"layer {i}: conv output would be empty")
                params = [(out, ci, k, k), (out,)]
                shape = (out, ho, wo)
            elif kind == "maxpool":
                k = layer["k"]
                ci, hi, wi = shape
                if hi // k == 0 or wi // k == 0:
                    raise ShapeError(f"layer {i}: maxpool({k}) on {hi}x{wi}")
                shape = (ci, hi // k, wi // k)
            elif kind == "relu":
                pass
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ShapeError(f"layer {i}: dense needs a flat input; add flatten")
                params = [(shape[0], layer["out"]), (layer["out"],)]
                shape = (layer["out"],)
            else:
                raise ShapeError(f"layer {i}: unknown layer type {kind!r}")
            plan.append((kind, shape, params))
        if shape != (_HEAD_UNITS[self.head],):
            raise ShapeError(f"head {self.head} needs {_HEAD_UNITS[self.head]} outputs, network gives {shape}")
        return plan

    def param_count(self) -> int:
        return sum(int(np.prod(p)) for _, _, ps in self.shapes() for p in ps)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, tuple]:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]  # (N, C, Ho, Wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, (n, c, h, w, ho, wo, xp.shape[2], xp.shape[3])


class MicroNet:
    """Parameters plus config. ``params`` alternates weight, bias per layer."""

    def __init__(self, config: MicroNetConfig, params: list[np.ndarray] | None = None, seed: int = 0):
        self.config = config
        self.plan = config.shapes()
        n = config.param_count()
        if config.param_budget is not None and n > config.param_budget:
            raise ValueError(f"{config.name or 'net'} has {n} parameters, budget is {config.param_budget}")
        if params is None:
            params = self._init(seed)
        self.params = [np.asarray(p) for p in params]
        expected = [ps for _, _, pl in self.plan for ps in pl]
        if [p.shape for p in self.params] != expected:
            raise ShapeError("parameter shapes do not match the config")
        self._version = 0

    def _init(self, seed: int) -> list[np.ndarray]:
        rng = np.random.default_rng(seed)
        params = []
        for _, _, pl in self.plan:
            if not pl:
                continue
            wshape, bshape = pl
            fan_in = int(np.prod(wshape[1:])) if len(wshape) == 4 else wshape[0]
            lim = np.sqrt(6.0 / fan_in)
            params.append(rng.uniform(-lim, lim, size=wshape).astype(np.float32))
            params.append(np.zeros(bshape, dtype=np.float32))
        return params

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def weight_mask(self) -> list[bool]:
        """True for weight tensors, False for biases."""
        return [p.ndim > 1 for p in self.params]

    def touch(self) -> None:
        """Mark parameters as changed; outstanding caches become stale."""
        self._version += 1

    def copy(self, dtype=None) -> "MicroNet":
        params = [p.astype(dtype) if dtype is not None else p.copy() for p in self.params]
        return MicroNet(self.config, params)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x = np.asarray(x)
        h, w, c = self.config.input
        if x.ndim != 4 or x.shape[1:] != (c, h, w):
            raise ShapeError(f"expected input (N, {c}, {h}, {w}), got {x.shape}")
        dtype = self.params[0].dtype
        a = x.astype(dtype, copy=False)
        steps = []
        pi = 0
        for layer, (kind, _, pl) in zip(self.config.layers, self.plan):
            if kind == "conv":
                W, b = self.params[pi], self.params[pi + 1]
                k, s = layer["k"], layer.get("stride", 1)
                pad = layer.get("pad", k // 2)
                cols, meta = _im2col(a, k, s, pad)
                n, _, _, _, ho, wo, _, _ = meta
                out = cols @ W.reshape(W.shape[0], -1).T + b
                steps.append((kind, pi, (cols, meta, k, s, pad)))
                a = out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2)
                a = np.ascontiguousarray(a)
                pi += 2
            elif kind == "maxpool":
                k = layer["k"]
                out, idx = kernels.maxpool_forward(a, k)
                steps.append((kind, None, (idx, a.shape, k)))
                a = out
            elif kind == "relu":
                steps.append((kind, None, a > 0))
                a = np.maximum(a, 0)
            elif kind == "flatten":
                steps.append((kind, None, a.shape))
                a = a.reshape(a.shape[0], -1)
            elif kind == "dense":
                W, b = self.params[pi], self.params[pi + 1]
                steps.append((kind, pi, a))
                a = a @ W + b
                pi += 2
        head = self.config.head
        if head in ("binary_classifier", "fraction_regressor"):
            out = sigmoid(a[:, 0])
        elif head == "scalar_regressor":
            out = a[:, 0].copy()
        else:
            out = a.copy()
        cache = {"steps": steps, "out": out, "version": self._version}
        return out, cache

    @staticmethod
    def activation_pattern(cache: dict) -> bytes:
        """Digest of all ReLU masks and max-pool choices of a forward pass."""
        h = hashlib.sha1()
        for kind, _, saved in cache["steps"]:
            if kind == "relu":
                h.update(np.packbits(saved).tobytes())
            elif kind == "maxpool":
                h.update(saved[0].tobytes())
        return h.digest()

    def predict(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        outs = [self.forward(x[i : i + batch])[0] for i in range(0, len(x), batch)]
        return np.concatenate(outs) if outs else np.empty((0,))

    __call__ = predict

    def backward(self, cache: dict, upstream: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given d(loss)/d(output)."""
        if cache.get("version") != self._version:
            raise StaleCacheError("parameters changed since this forward pass")
        dtype = self.params[0].dtype
        head = self.config.head
        up = np.asarray(upstream, dtype=dtype)
        if head in ("binary_classifier", "fraction_regressor"):
            s = cache["out"]
            d = (up * s * (1 - s))[:, None]
        elif head == "scalar_regressor":
            d = up.reshape(-1, 1)
        else:
            d = up.reshape(cache["out"].shape)
        grads: list[np.ndarray | None] = [None] * len(self.params)
        for kind, pi, saved in reversed(cache["steps"]):
            if kind == "dense":
                W = self.params[pi]
                grads[pi] = saved.T @ d
                grads[pi + 1] = d.sum(axis=0)
                d = d @ W.T
            elif kind == "flatten":
                d = d.reshape(saved)
            elif kind == "relu":
                d = d * saved
            elif kind == "maxpool":
                idx, shape, k = saved
                d = kernels.maxpool_backward(d, idx, shape[2], shape[3], k)
            elif kind == "conv":
                cols, meta, k, s, pad = saved
                n, c, h, w, ho, wo, hp, wp = meta
                W = self.params[pi]
                dout = d.transpose(0, 2, 3, 1).reshape(n * ho * wo, -1)
                grads[pi] = (dout.T @ cols).reshape(W.shape)
                grads[pi + 1] = dout.sum(axis=0)
                if pi == 0:
                    break  # input gradient not needed
                dcols = (dout @ W.reshape(W.shape[0], -1)).reshape(n, ho, wo, c, k, k)
                dxp = kernels.col2im(dcols, hp, wp, s)
                d = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return [g.astype(dtype, copy=False) for g in grads]


def sv_classifier_config(
    size: int = 96, channels=(8, 16, 24, 32), hidden: int = 16, head: str = "binary_classifier"
) -> MicroNetConfig:
    """Four conv/pool stages and a small dense head, single-plane input."""
    return _four_stage(size, 1, channels, hidden, head, "sv-classifier")


def sv_regressor_config(
    size: int = 96, depth: int = 51, channels=(8, 16, 24, 32), hidden: int = 16, head: str = "fraction_regressor"
) -> MicroNetConfig:
    """Same trunk as the classifier on a ``depth``-plane stack, fraction output."""
    return _four_stage(size, depth, channels, hidden, head, "sv-regressor")


def _four_stage(size, depth, channels, hidden, head, name) -> MicroNetConfig:
    layers: list[dict] = []
    for ch in channels:
        layers += [{"type": "conv", "k": 3, "out": ch, "stride": 1}, {"type": "relu"}, {"type": "maxpool", "k": 2}]
    layers.append({"type": "flatten"})
    if hidden:
        layers += [{"type": "dense", "out": hidden}, {"type": "relu"}]
    layers.append({"type": "dense", "out": _HEAD_UNITS[head]})
    return MicroNetConfig((size, size, depth), layers, head, param_budget=40_000, name=name)
