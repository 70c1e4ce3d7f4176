"""DP-MERF: one noisy class-conditional mean embedding, then non-private generator fitting.

The sensitive data is touched once, inside the Gaussian release. Class
counts are treated as public label metadata: they weight the per-class
objective and set the label mix at generation time.
"""
import numpy as np

from ..accountant import Gaussian, calibrate_gaussian_sigma
from ..embeddings import noisy_mean_embedding, rff_backprop, rff_features
from ..errors import ValidationError
from ..guard import release_point
from ..tinynn import Adam, MlpSpec, backward, forward, forward_cache, init_checkpoint


def generator_spec(d, K, noise_dim=5, hidden=(64, 64), activation="relu"):
    return MlpSpec((noise_dim + K, *hidden, d), activation, "linear")


def _gen_inputs(z, labels, K):
    oh = np.zeros((len(z), K))
    oh[np.arange(len(z)), labels] = 1.0
    return np.concatenate([z, oh], axis=1)


def _labels_per_class(K, n_per):
    return np.repeat(np.arange(K), n_per)


def merf_objective(params, spec, fmap, targets, weights, Z, labels):
    """``sum_k w_k ||mu_k - mean phi(G(z, k))||^2`` and its parameter gradient."""
    K = len(targets)
    ckpt_out, cache = forward_cache(params, spec, _gen_inputs(Z, labels, K))
    phi = rff_features(ckpt_out, fmap)
    loss = 0.0
    dphi = np.zeros_like(phi)
    for k in range(K):
        rows = labels == k
        if not rows.any() or weights[k] == 0:
            continue
        r = phi[rows].mean(axis=0) - targets[k]
        loss += weights[k] * float(r @ r)
        dphi[rows] = 2.0 * weights[k] * r / rows.sum()
    dY = rff_backprop(ckpt_out, fmap, dphi)
    return loss, backward(spec, cache, dY, per_example=False)


def dpmerf_train(sensitive, fmap, target, spec, iters=2000, rng=None, ledger=None, sigma=None,
                 notion="add_remove_unknown_m", n_per_class=100, lr=1e-2, eval_every=50):
    """Release the noisy embedding (the single ledger event), then fit the generator.

    ``target=None`` (and ``sigma=None``) is the epsilon-infinity run: the
    embedding is exact and the ledger records a sigma-0 release.
    """
    if sigma is None:
        sigma = 0.0 if target is None else calibrate_gaussian_sigma(target, base=ledger)
    K = sensitive.K
    noise_dim = spec.layer_sizes[0] - K
    if noise_dim < 1:
        raise ValidationError("generator input must hold noise dims plus a K-way label")
    with release_point("mean embedding"):
        emb = noisy_mean_embedding(sensitive, fmap, sigma, notion, rng.spawn(7))
    if ledger is not None:
        ledger.append(Gaussian(sigma, 1), label="mean embedding")
    counts = np.asarray(emb.class_counts, dtype=np.float64)
    weights = counts / counts.sum()
    ckpt = init_checkpoint(spec, rng.spawn(8))
    # fixed draws for tracking the objective; training uses fresh noise each step
    eval_rng = rng.spawn(9)
    eval_labels = _labels_per_class(K, n_per_class)
    Z_eval = eval_rng.normal((len(eval_labels), noise_dim))
    history = []
    opt = Adam(lr)
    params = ckpt.params
    labels = _labels_per_class(K, n_per_class)
    for it in range(iters + 1):
        if eval_every and (it % eval_every == 0 or it == iters):
            history.append((it, merf_objective(params, spec, fmap, emb.per_class, weights, Z_eval, eval_labels)[0]))
        if it == iters:
            break
        Z = rng.normal((len(labels), noise_dim))
        _, g = merf_objective(params, spec, fmap, emb.per_class, weights, Z, labels)
        params = opt.step(params, g)
    meta = {"K": K, "sigma": sigma, "notion": notion, "class_weights": weights.tolist(), "history": history,
            "noise_dim": noise_dim}
    return type(ckpt)(params, spec, iters, rng.state, meta)


def generate_merf(ckpt, n, rng, labels=None):
    """Sample ``n`` rows (clipped to [0, 1]); labels follow the stored class mix unless given."""
    K = ckpt.meta["K"]
    if labels is None:
        labels = rng.choice(K, size=n, p=np.asarray(ckpt.meta["class_weights"]))
    labels = np.asarray(labels, dtype=np.int64)
    Z = rng.normal((n, ckpt.meta["noise_dim"]))
    return np.clip(forward(ckpt, _gen_inputs(Z, labels, K)), 0.0, 1.0), labels
