"""Minimal dense-network engine: forward, reverse-mode gradients, Adam.

Everything runs in float64 so finite-difference gradient checks are not
precision-limited. Parameters live in a flat dict ("ParamStore") keyed by
"<net name>/W<i>" and "<net name>/b<i>".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("linear", "relu", "softplus")


class ShapeError(ValueError):
    """Input or parameter shape incompatible with the network."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient became non-finite; training must abort."""


@dataclass(frozen=True)
class Network:
    """A dense MLP: widths[0] inputs -> widths[-1] outputs.

    activations[i] is applied after layer i (len == len(widths) - 1).
    """

    name: str
    widths: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.activations) != len(self.widths) - 1:
            raise ShapeError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ShapeError(f"unknown activation {a!r}")

    @property
    def in_width(self):
        return self.widths[0]

    @property
    def out_width(self):
        return self.widths[-1]

    def param_names(self):
        names = []
        for i in range(len(self.widths) - 1):
            names.append(f"{self.name}/W{i}")
            names.append(f"{self.name}/b{i}")
        return names


def mlp(name, widths, final="linear"):
    """ReLU MLP with a configurable final activation."""
    acts = ["relu"] * (len(widths) - 2) + [final]
    return Network(name, tuple(widths), tuple(acts))


def init_params(net, rng):
    """He-style uniform init, scaled by fan-in. Biases start at zero."""
    params = {}
    for i in range(len(net.widths) - 1):
        fan_in, fan_out = net.widths[i], net.widths[i + 1]
        bound = np.sqrt(6.0 / fan_in)
        params[f"{net.name}/W{i}"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[f"{net.name}/b{i}"] = np.zeros(fan_out)
    return params


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softplus":
        # numerically stable log(1 + exp(z))
        return np.logaddexp(0.0, z)
    return z


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "softplus":
        return 1.0 / (1.0 + np.exp(-z))
    return np.ones_like(z)


def forward(net, params, x):
    """Evaluate the network on x of shape (..., in_width)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_width:
        raise ShapeError(f"input width {x.shape[-1]} != {net.in_width}")
    h = x
    for i, act in enumerate(net.activations):
        z = h @ params[f"{net.name}/W{i}"] + params[f"{net.name}/b{i}"]
        h = _act(z, act)
    return h


def forward_cached(net, params, x):
    """Forward pass keeping pre-activations for backward()."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != net.in_width:
        raise ShapeError(f"input width {x.shape[-1]} != {net.in_width}")
    hs = [x]
    zs = []
    h = x
    for i, act in enumerate(net.activations):
        z = h @ params[f"{net.name}/W{i}"] + params[f"{net.name}/b{i}"]
        zs.append(z)
        h = _act(z, act)
        hs.append(h)
    return h, (hs, zs)


def backward(net, params, cache, upstream):
    """Gradients of sum(output * upstream) w.r.t. params and the input.

    cache comes from forward_cached. upstream has the output's shape.
    Returns (grads dict, dL/dx).
    """
    hs, zs = cache
    u = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if u.shape != (hs[0].shape[0], net.out_width):
        raise ShapeError(f"upstream shape {u.shape} incompatible")
    grads = {}
    delta = u
    for i in reversed(range(len(net.activations))):
        delta = delta * _act_grad(zs[i], net.activations[i])
        grads[f"{net.name}/W{i}"] = hs[i].T @ delta
        grads[f"{net.name}/b{i}"] = delta.sum(axis=0)
        delta = delta @ params[f"{net.name}/W{i}"].T
    return grads, delta


@dataclass
class OptimState:
    """Adam accumulators; one entry per parameter."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def opt_step(params, grads, state):
    """One Adam update with bias correction. Mutates params and state."""
    state.step += 1
    t = state.step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name} at step {t}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        params[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, meta=None):
    """Text header (JSON line: version, entry shapes, meta) + little-endian
    float64 payload in declaration order."""
    names = sorted(params)
    header = {
        "version": CHECKPOINT_VERSION,
        "entries": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for n in names:
            fh.write(np.ascontiguousarray(params[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (params, meta). Raises ValueError on a malformed file."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"malformed checkpoint header: {exc}") from exc
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        params = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise ValueError("truncated checkpoint payload")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return params, header["meta"]
