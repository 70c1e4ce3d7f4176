"""Fixed-structure MLP with explicit per-example backprop and the DP-SGD update.

Parameters live in one flat float64 vector: for each layer the ``[in, out]``
weight matrix (row-major) followed by its bias.

Inputs to the gradient routines may carry a group axis, ``[B, G, d_in]``. The
per-example loss is then the mean over the G rows of that example, which is
how a diffusion example is scored at several (t, noise) draws before clipping.
"""
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import load_tensor, save_tensor
from .errors import ValidationError
from .mechanisms import clip_rows

ACTIVATIONS = ("relu", "tanh")
HEADS = ("linear", "softmax")
LOSSES = {"mse": "linear", "cross_entropy": "softmax"}


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "relu"
    output_head: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValidationError(f"need >= 2 layer sizes, all >= 1; got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"activation must be one of {ACTIVATIONS}")
        if self.output_head not in HEADS:
            raise ValidationError(f"output head must be one of {HEADS}")

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def to_dict(self):
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "output_head": self.output_head}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), d.get("activation", "relu"), d.get("output_head", "linear"))


@dataclass(frozen=True)
class ModelCheckpoint:
    params: np.ndarray
    spec: MlpSpec
    step: int = 0
    rng_state: dict = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.shape != (self.spec.n_params,):
            raise ValidationError(f"spec needs {self.spec.n_params} params, got {params.shape}")
        object.__setattr__(self, "params", params)


@dataclass(frozen=True)
class DpSgdConfig:
    """Clip bound, noise multiplier (``None`` = calibrate to a target), rate, step size, steps."""

    C: float
    sigma: float
    q: float
    lr: float
    steps: int

    def __post_init__(self):
        if not (self.C > 0 and (self.sigma is None or self.sigma >= 0) and 0 < self.q <= 1 and self.lr > 0 and self.steps >= 0):
            raise ValidationError(f"invalid DP-SGD config {self}")


def init_checkpoint(spec, rng, meta=None):
    """He-scaled normal weights (Xavier for tanh), zero biases."""
    chunks = []
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        gain = 2.0 if spec.activation == "relu" and i < len(s) - 2 else 1.0
        chunks.append(rng.normal((s[i], s[i + 1])).ravel() * math.sqrt(gain / s[i]))
        chunks.append(np.zeros(s[i + 1]))
    return ModelCheckpoint(np.concatenate(chunks), spec, 0, None, dict(meta or {}))


def unpack(params, spec):
    layers, off = [], 0
    s = spec.layer_sizes
    for i in range(len(s) - 1):
        W = params[off:off + s[i] * s[i + 1]].reshape(s[i], s[i + 1])
        off += s[i] * s[i + 1]
        b = params[off:off + s[i + 1]]
        off += s[i + 1]
        layers.append((W, b))
    return layers


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward_cache(params, spec, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != spec.layer_sizes[0]:
        raise ValidationError(f"input dim {X.shape[-1]} != {spec.layer_sizes[0]}")
    acts, pres = [X], []
    layers = unpack(params, spec)
    a = X
    for i, (W, b) in enumerate(layers):
        z = a @ W + b
        pres.append(z)
        a = _act(z, spec.activation) if i < len(layers) - 1 else z
        acts.append(a)
    out = softmax(a) if spec.output_head == "softmax" else a
    return out, (acts, pres, layers)


def forward(ckpt, x):
    """Evaluate the network on one input vector or a batch of rows."""
    out, _ = forward_cache(ckpt.params, ckpt.spec, x)
    return out


def hidden_features(ckpt, X):
    """Activations of the last hidden layer (penultimate features)."""
    _, (acts, _, _) = forward_cache(ckpt.params, ckpt.spec, X)
    return acts[-2]


def backward(spec, cache, dz_out, per_example=True):
    """Parameter gradients given the gradient at the last pre-activation.

    ``dz_out`` has the leading shape of the forward input. With
    ``per_example=True`` the result is ``[B, P]`` (any axes between the first
    and the feature axis are summed); otherwise the summed ``[P]`` gradient.
    """
    acts, pres, layers = cache
    B = dz_out.shape[0]
    dz = dz_out.reshape(B, -1, dz_out.shape[-1])
    grads = [None] * (2 * len(layers))
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        a_in = acts[i].reshape(B, -1, acts[i].shape[-1])
        if per_example:
            grads[2 * i] = np.matmul(a_in.transpose(0, 2, 1), dz).reshape(B, -1)
            grads[2 * i + 1] = dz.sum(axis=1)
        else:
            grads[2 * i] = (a_in.reshape(-1, a_in.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])).ravel()
            grads[2 * i + 1] = dz.sum(axis=(0, 1))
        if i:
            da = dz @ W.T
            z = pres[i - 1].reshape(da.shape)
            a = acts[i].reshape(da.shape)
            dz = da * _act_grad(z, a, spec.activation)
    return np.concatenate(grads, axis=-1)


def input_grad(params, spec, cache, dz_out):
    """Gradient with respect to the network input for the given output-side gradient."""
    acts, pres, layers = cache
    dz = dz_out
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        da = dz @ W.T
        if i == 0:
            return da
        dz = da * _act_grad(pres[i - 1], acts[i], spec.activation)


def loss_and_dz(out, targets, loss):
    """Per-row loss and its gradient at the last pre-activation."""
    if loss == "mse":
        diff = out - targets
        d = out.shape[-1]
        return np.mean(diff * diff, axis=-1), 2.0 * diff / d
    p = np.clip(out, 1e-300, None)
    y = np.asarray(targets, dtype=np.int64)
    onehot = np.zeros_like(out)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
    return -np.log(np.take_along_axis(p, y[..., None], axis=-1))[..., 0], out - onehot


def _check_pairing(spec, loss):
    if loss not in LOSSES:
        raise ValidationError(f"unknown loss {loss!r}")
    if LOSSES[loss] != spec.output_head:
        raise ValidationError(f"loss {loss!r} needs a {LOSSES[loss]!r} head, spec has {spec.output_head!r}")


def per_example_grads(ckpt, X, targets, loss):
    """One flat gradient per example: ``[B, P]``.

    For ``X`` of shape ``[B, G, d]`` the per-example loss is the mean over G.
    """
    _check_pairing(ckpt.spec, loss)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValidationError("per_example_grads needs a nonempty batch")
    out, cache = forward_cache(ckpt.params, ckpt.spec, X)
    _, dz = loss_and_dz(out, targets, loss)
    if X.ndim == 3:
        dz = dz / X.shape[1]
    return backward(ckpt.spec, cache, dz, per_example=True)


def batch_loss_grad(ckpt, X, targets, loss):
    """Mean loss and mean gradient over the batch (non-private training)."""
    _check_pairing(ckpt.spec, loss)
    X = np.asarray(X, dtype=np.float64)
    out, cache = forward_cache(ckpt.params, ckpt.spec, X)
    losses, dz = loss_and_dz(out, targets, loss)
    if X.ndim == 3:
        dz = dz / X.shape[1]
    g = backward(ckpt.spec, cache, dz, per_example=False) / X.shape[0]
    return float(np.mean(losses)), g


def poisson_batch(n, q, rng):
    """Indices included independently with probability ``q``."""
    if not 0 < q <= 1:
        raise ValidationError(f"q must be in (0, 1], got {q}")
    if q == 1:
        return np.arange(n)
    return np.flatnonzero(rng.uniform(n) < q)


DPSGD_NORMALIZATION = "realized_batch"


def dpsgd_step(ckpt, grads, cfg, rng):
    """``params - lr * (mean_i clip(g_i) + (C sigma / |B|) z)``.

    Sum and noise are divided by the realized batch size ``|B|``, not ``qN``.

    An empty batch still advances the step counter (the accountant charged it)
    but leaves the parameters unchanged.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.size == 0 or grads.shape[0] == 0:
        return replace(ckpt, step=ckpt.step + 1, rng_state=rng.state)
    clipped = clip_rows(grads, cfg.C)
    norms = np.sqrt(np.einsum("ij,ij->i", clipped, clipped))
    assert np.all(norms <= cfg.C * (1 + 1e-12)), "clipping left a contribution above C"
    B = grads.shape[0]
    update = clipped.mean(axis=0)
    if cfg.sigma > 0:
        update = update + (cfg.C * cfg.sigma / B) * rng.normal(update.shape)
    return replace(ckpt, params=ckpt.params - cfg.lr * update, step=ckpt.step + 1, rng_state=rng.state)


class Adam:
    """Adam optimizer over the flat parameter vector (non-private training only)."""

    def __init__(self, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grad):
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def save_checkpoint(ckpt, path):
    """``<path>.dpsl`` holds the float32 params, ``<path>.json`` the spec sidecar."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_tensor(path + ".dpsl", ckpt.params.astype("<f4"))
    with open(path + ".json", "w") as fh:
        json.dump({"spec": ckpt.spec.to_dict(), "step": ckpt.step, "rng_state": ckpt.rng_state,
                   "meta": ckpt.meta}, fh, indent=2, sort_keys=True)


def load_checkpoint(path):
    params = load_tensor(path + ".dpsl").astype(np.float64)
    with open(path + ".json") as fh:
        side = json.load(fh)
    return ModelCheckpoint(params, MlpSpec.from_dict(side["spec"]), side["step"], side.get("rng_state"),
                           side.get("meta", {}))
