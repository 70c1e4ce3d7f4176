"""DPDM-lite: an MLP noise predictor trained with DP-SGD, plus ancestral sampling.

Images are mapped to [-1, 1] for diffusion. The denoiser input is
``[x_t, time features, label one-hot]``; unconditional models see a zero label
vector. Each example is scored at ``k_mult`` (t, noise) draws and only the
averaged per-example gradient is clipped, so multiplicity costs no privacy.
"""
import math
from dataclasses import dataclass

import numpy as np

from ..accountant import SubsampledGaussian, calibrate_sigma
from ..errors import ValidationError
from ..guard import release_point
from ..tinynn import (
    Adam,
    DpSgdConfig,
    MlpSpec,
    batch_loss_grad,
    dpsgd_step,
    forward,
    init_checkpoint,
    per_example_grads,
    poisson_batch,
)

TIME_FREQS = (1.0, 2.0, 4.0, 8.0, 16.0)
N_TIME = 2 * len(TIME_FREQS)
PRETRAIN_MODES = ("conditional", "unconditional", "random_label")


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or len(beta) < 1 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ValidationError("betas must be a nonempty vector in (0, 1)")
        object.__setattr__(self, "beta", beta)

    @classmethod
    def linear(cls, T=100, beta_min=1e-4, beta_max=0.2):
        return cls(np.linspace(beta_min, beta_max, T))

    @property
    def T(self):
        return len(self.beta)

    @property
    def alphabar(self):
        return np.cumprod(1.0 - self.beta)

    def alphabar_at(self, t):
        """``abar_t`` with ``abar_0 = 1``."""
        t = np.asarray(t)
        ab = np.concatenate([[1.0], self.alphabar])
        return ab[t]


def diffuse_forward(x0, t, e, sched):
    """``sqrt(abar_t) x0 + sqrt(1 - abar_t) e`` for ``1 <= t <= T`` (t may be an array)."""
    t_arr = np.asarray(t)
    if np.any(t_arr < 1) or np.any(t_arr > sched.T):
        raise ValidationError(f"diffusion step must lie in [1, {sched.T}]")
    ab = np.asarray(sched.alphabar_at(t_arr), dtype=np.float64)
    if ab.ndim:
        ab = ab[..., None]
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - ab) * np.asarray(e, dtype=np.float64)


def time_features(t, T):
    s = np.asarray(t, dtype=np.float64)[..., None] / T
    ang = math.pi * s * np.asarray(TIME_FREQS)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def denoiser_spec(d, K, hidden=(128, 128), activation="relu"):
    return MlpSpec((d + N_TIME + K, *hidden, d), activation, "linear")


def _inputs(x_t, t, onehot, T):
    return np.concatenate([x_t, time_features(t, T), onehot], axis=-1)


def _onehot(labels, K, n):
    out = np.zeros((n, K))
    if labels is not None:
        out[np.arange(n), np.asarray(labels, dtype=np.int64)] = 1.0
    return out


def to_signed(X):
    return 2.0 * X - 1.0


def _stratified_steps(n, k, T, rng):
    # one draw per stratum of [1, T]; k = 1 is plain uniform sampling
    u = rng.uniform((n, k))
    t = np.floor((np.arange(k) + u) * T / k).astype(np.int64) + 1
    return np.clip(t, 1, T)


def denoising_batch(x0, onehot, sched, k, rng):
    """Denoiser inputs ``[B, k, in]`` and noise targets ``[B, k, d]`` for clean rows ``x0``."""
    B, d = x0.shape
    t = _stratified_steps(B, k, sched.T, rng)
    e = rng.normal((B, k, d))
    x_t = diffuse_forward(np.broadcast_to(x0[:, None, :], (B, k, d)), t, e, sched)
    oh = np.broadcast_to(onehot[:, None, :], (B, k, onehot.shape[1]))
    return _inputs(x_t, t, oh, sched.T), e


def denoising_loss(ckpt, sched, data, rng, k=8, conditional=True):
    """Monte-Carlo estimate of the noise-prediction loss on ``data`` (a Dataset)."""
    x0 = to_signed(data.flat())
    K = ckpt.meta.get("K", data.K)
    oh = _onehot(data.labels if conditional and ckpt.meta.get("conditional", True) else None, K, len(x0))
    X, e = denoising_batch(x0, oh, sched, k, rng)
    out = forward(ckpt, X)
    return float(np.mean((out - e) ** 2))


def resolve_sigma(target, q, steps, ledger, sigma=None):
    """Noise multiplier: explicit ``sigma`` wins; ``target=None`` means no privacy (0)."""
    if sigma is not None:
        return float(sigma)
    if target is None:
        return 0.0
    return calibrate_sigma(target, q, steps, base=ledger)


def dpdmlite_train(sensitive, sched, target, spec, cfg, k_mult=32, rng=None, ledger=None, init=None,
                   conditional=True, history_every=10):
    """DP-SGD training of the noise predictor on ``sensitive`` (a Dataset of training records).

    ``cfg.sigma`` of ``None`` calibrates the multiplier so the ledger (with any
    earlier events) meets ``target``. One subsampled-Gaussian event covering
    all ``cfg.steps`` is appended to ``ledger``.
    """
    if k_mult < 1:
        raise ValidationError(f"noise multiplicity must be >= 1, got {k_mult}")
    sigma = resolve_sigma(target, cfg.q, cfg.steps, ledger, cfg.sigma)
    cfg = DpSgdConfig(cfg.C, sigma, cfg.q, cfg.lr, cfg.steps)
    K = sensitive.K
    ckpt = init if init is not None else init_checkpoint(spec, rng.spawn(1))
    n = len(sensitive)
    history = []
    for step in range(cfg.steps):
        idx = poisson_batch(n, cfg.q, rng)
        with release_point("dp-sgd step"):
            if len(idx) == 0:
                ckpt = dpsgd_step(ckpt, np.empty((0, spec.n_params)), cfg, rng)
                continue
            batch = sensitive.subset(idx)
            x0 = to_signed(batch.flat())
            oh = _onehot(batch.labels if conditional else None, K, len(idx))
            X, e = denoising_batch(x0, oh, sched, k_mult, rng)
            grads = per_example_grads(ckpt, X, e, "mse")
            ckpt = dpsgd_step(ckpt, grads, cfg, rng)
        if history_every and step % history_every == 0:
            history.append(float(np.mean((forward(ckpt, X) - e) ** 2)))
    if ledger is not None:
        ledger.append(SubsampledGaussian(cfg.q, sigma, cfg.steps), label="dp-sgd")
    meta = dict(ckpt.meta, K=K, conditional=conditional, sigma=sigma, k_mult=k_mult, history=history)
    return type(ckpt)(ckpt.params, ckpt.spec, ckpt.step, ckpt.rng_state, meta)


def pretrain(spec, public, mode, sched, K, iters=500, batch_size=128, lr=1e-3, k_mult=4, rng=None,
             init=None):
    """Non-private noise-predictor training on public images.

    ``conditional`` uses the public labels (they must index the ``K`` sensitive
    classes); ``unconditional`` feeds the zero label vector; ``random_label``
    assigns uniform labels over ``K``.
    """
    if mode not in PRETRAIN_MODES:
        raise ValidationError(f"pretrain mode must be one of {PRETRAIN_MODES}")
    x_all = to_signed(public.flat())
    n = len(x_all)
    if mode == "conditional":
        if public.labels.max() >= K:
            raise ValidationError("conditional pretraining needs public labels inside the sensitive classes")
        oh_all = _onehot(public.labels, K, n)
    elif mode == "random_label":
        oh_all = _onehot(rng.integers(K, size=n), K, n)
    else:
        oh_all = np.zeros((n, K))
    ckpt = init if init is not None else init_checkpoint(spec, rng.spawn(2))
    opt = Adam(lr)
    params = ckpt.params
    for _ in range(iters):
        idx = rng.integers(n, size=min(batch_size, n))
        X, e = denoising_batch(x_all[idx], oh_all[idx], sched, k_mult, rng)
        _, g = batch_loss_grad(type(ckpt)(params, spec), X, e, "mse")
        params = opt.step(params, g)
    meta = dict(ckpt.meta, K=K, conditional=mode != "unconditional", pretrain_mode=mode)
    return type(ckpt)(params, spec, ckpt.step + iters, None, meta)


def generate_diffusion(ckpt, sched, n, labels=None, rng=None):
    """Ancestral sampling from a trained checkpoint; rows in [0, 1].

    ``labels=None`` samples unconditionally (zero label vector).
    """
    K = ckpt.meta.get("K", ckpt.spec.layer_sizes[0] - ckpt.spec.layer_sizes[-1] - N_TIME)

    def eps(x, t, oh):
        return forward(ckpt, _inputs(x, np.full(len(x), t), oh, sched.T))

    return generate_with(eps, ckpt.spec.layer_sizes[-1], sched, n, rng, K, labels)


def generate_with(eps_fn, d, sched, n, rng, K=0, labels=None):
    """Ancestral sampling with any denoiser ``eps_fn(x_t, t, onehot) -> predicted noise``."""
    oh = _onehot(labels, K, n) if labels is not None else np.zeros((n, K))
    beta, ab = sched.beta, sched.alphabar
    x = rng.normal((n, d))
    for t in range(sched.T, 0, -1):
        e_hat = eps_fn(x, t, oh)
        mean = (x - beta[t - 1] / np.sqrt(1.0 - ab[t - 1]) * e_hat) / np.sqrt(1.0 - beta[t - 1])
        x = mean + np.sqrt(beta[t - 1]) * rng.normal((n, d)) if t > 1 else mean
    return np.clip((x + 1.0) / 2.0, 0.0, 1.0)
