"""PrivImage-style public subset selection from a noisy class histogram of sensitive data."""
import math

import numpy as np

from ..accountant import Gaussian
from ..errors import ValidationError
from ..guard import release_point
from ..tinynn import Adam, MlpSpec, batch_loss_grad, forward, init_checkpoint

DEFAULT_SELECT_FRACTION = 0.05


def train_classifier(ds, hidden=(64,), iters=400, batch_size=128, lr=1e-2, rng=None):
    """Plain (non-private) softmax MLP on a public labelled Dataset."""
    spec = MlpSpec((ds.dim, *hidden, ds.K), "relu", "softmax")
    ckpt = init_checkpoint(spec, rng.spawn(41))
    X, y = ds.flat(), ds.labels
    opt = Adam(lr)
    params = ckpt.params
    for _ in range(iters):
        idx = rng.integers(len(X), size=min(batch_size, len(X)))
        _, g = batch_loss_grad(type(ckpt)(params, spec), X[idx], y[idx], "cross_entropy")
        params = opt.step(params, g)
    return type(ckpt)(params, spec, iters, None, {"K": ds.K})


def privimage_select(public, sensitive, query_clf, k_frac=DEFAULT_SELECT_FRACTION, sigma_sel=0.0, rng=None,
                     ledger=None):
    """Public records whose class is among the top ``ceil(k_frac * K_pub)`` noisy sensitive-class counts.

    The histogram of query-classifier predictions over the sensitive set has
    sensitivity 1 (add-or-remove); it is released once with Gaussian noise of
    multiplier ``sigma_sel``.
    """
    if not 0 < k_frac <= 1:
        raise ValidationError(f"k_frac must be in (0, 1], got {k_frac}")
    K_pub = public.K
    with release_point("public selection"):
        pred = np.argmax(forward(query_clf, sensitive.flat()), axis=1)
        hist = np.bincount(pred, minlength=K_pub).astype(np.float64)
    noisy = hist + sigma_sel * rng.normal(K_pub) if sigma_sel > 0 else hist
    if ledger is not None:
        ledger.append(Gaussian(sigma_sel, 1), label="public selection")
    n_top = math.ceil(k_frac * K_pub)
    # stable sort: ties go to the lower class id
    top = np.argsort(-noisy, kind="stable")[:n_top]
    keep = np.flatnonzero(np.isin(public.labels, top))
    return public.subset(keep), top
