"""Private Evolution: training-free synthesis steered by noisy nearest-neighbour votes.

The "API" is a pair of functions: ``random_api(n, rng)`` draws fresh
candidates and ``variation_api(samples, iteration, rng)`` perturbs selected
ones. Defaults are uniform draws on the unit cube and Gaussian jitter whose
scale decays geometrically per iteration.
"""
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..accountant import Gaussian
from ..guard import release_point

DEFAULT_PE_ITERATIONS = 8


def uniform_api(d):
    def draw(n, rng):
        return rng.uniform((n, d))

    return draw


def jitter_variation(scale=0.1, decay=0.6, low=0.0, high=1.0):
    def vary(samples, iteration, rng):
        s = scale * decay ** (iteration - 1)
        return np.clip(samples + s * rng.normal(samples.shape), low, high)

    return vary


@dataclass
class PeState:
    candidates: np.ndarray
    iteration: int = 0
    histogram: np.ndarray = None
    fallbacks: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


def pe_synthesize(private, n_cand, T_pe=DEFAULT_PE_ITERATIONS, sigma_hist=0.0, threshold_H=None, rng=None,
                  ledger=None, variation_api=None, random_api=None, on_iteration=None):
    """Run ``T_pe`` vote/noise/threshold/resample/vary rounds and return the final :class:`PeState`.

    ``private`` is a ``[N, d]`` array (or a zero-argument callable returning
    one, so guarded data is only read at the vote). The histogram has
    sensitivity 1 under add-or-remove; each round is one Gaussian release of
    multiplier ``sigma_hist``. ``threshold_H`` defaults to ``2 * sigma_hist``.
    """
    read = private if callable(private) else (lambda: private)
    with release_point("pe shape"):
        d = np.asarray(read()).reshape(-1, np.asarray(read()).shape[-1]).shape[1]
    H = 2.0 * sigma_hist if threshold_H is None else threshold_H
    random_api = random_api or uniform_api(d)
    variation_api = variation_api or jitter_variation()
    state = PeState(random_api(n_cand, rng), config={"threshold_H": H, "sigma_hist": sigma_hist,
                                                     "resample": "multinomial over max(h, 0)"})
    if on_iteration is not None:
        on_iteration(0, state.candidates)
    for t in range(1, T_pe + 1):
        with release_point("pe vote"):
            votes = np.asarray(read(), dtype=np.float64)
            hist = kernels.vote_histogram(votes, state.candidates)
            assert hist.sum() == len(votes)
        noisy = hist + sigma_hist * rng.normal(n_cand) if sigma_hist > 0 else hist.astype(np.float64)
        if ledger is not None:
            ledger.append(Gaussian(sigma_hist, 1), label=f"pe histogram {t}")
        kept = np.where(noisy < H, 0.0, noisy)
        weights = np.maximum(kept, 0.0)
        if weights.sum() <= 0:
            state.fallbacks.append(t)
            weights = np.maximum(noisy, 0.0)
            if weights.sum() <= 0:
                weights = np.ones(n_cand)
        idx = rng.choice(n_cand, size=n_cand, p=weights / weights.sum())
        state.candidates = variation_api(state.candidates[idx], t, rng)
        state.histogram = noisy
        state.iteration = t
        if on_iteration is not None:
            on_iteration(t, state.candidates)
    return state
