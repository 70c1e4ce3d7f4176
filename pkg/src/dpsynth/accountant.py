"""Renyi-DP accounting for Gaussian, subsampled-Gaussian and pure-epsilon releases.

The ledger keeps RDP per integer order in ``ORDERS`` (2..256). Conversion to
(epsilon, delta) uses ``eps = min_a RDP(a) + log(1/delta) / (a - 1)``. Pure
epsilon events (Laplace selection) never enter RDP; their epsilon is added
after conversion.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import CalibrationError, ValidationError

ORDERS = np.arange(2, 257)


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValidationError(f"delta must be in (0, 1), got {self.delta}")


def rdp_gaussian(sigma, alpha):
    """RDP of the Gaussian mechanism with noise multiplier ``sigma``: ``alpha / (2 sigma^2)``."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    if not alpha > 1:
        raise ValidationError(f"order must be > 1, got {alpha}")
    return alpha / (2.0 * sigma * sigma)


def rdp_subsampled_gaussian(q, sigma, alpha):
    """RDP at integer order ``alpha`` of one Poisson-subsampled Gaussian step.

    Uses the binomial expansion of the mixture moment
    ``A = sum_k C(a, k) (1-q)^(a-k) q^k exp((k^2 - k) / (2 sigma^2))`` and
    returns ``log(A) / (alpha - 1)``.
    """
    if not 0 < q <= 1:
        raise ValidationError(f"sampling rate must be in (0, 1], got {q}")
    if not sigma > 0:
        raise ValidationError(f"sigma must be > 0, got {sigma}")
    if int(alpha) != alpha or alpha < 2:
        raise ValidationError(f"order must be an integer >= 2, got {alpha}")
    alpha = int(alpha)
    if q == 1.0:
        return rdp_gaussian(sigma, alpha)
    return kernels.rdp_log_a_int(q, sigma, alpha) / (alpha - 1)


@dataclass(frozen=True)
class SubsampledGaussian:
    q: float
    sigma: float
    steps: int

    kind = "subsampled_gaussian"

    def __post_init__(self):
        if not 0 <= self.q <= 1:
            raise ValidationError(f"q must be in [0, 1], got {self.q}")
        if self.sigma < 0 or self.steps < 0:
            raise ValidationError("sigma and steps must be >= 0")

    def rdp(self, orders):
        # q = 0 never touches the data
        if self.steps == 0 or self.q == 0:
            return np.zeros(len(orders))
        if self.sigma == 0:
            return np.full(len(orders), np.inf)
        per_step = np.array([rdp_subsampled_gaussian(self.q, self.sigma, a) for a in orders])
        return per_step * self.steps


@dataclass(frozen=True)
class Gaussian:
    sigma: float
    releases: int = 1

    kind = "gaussian"

    def __post_init__(self):
        if self.sigma < 0 or self.releases < 0:
            raise ValidationError("sigma and releases must be >= 0")

    def rdp(self, orders):
        if self.releases == 0:
            return np.zeros(len(orders))
        if self.sigma == 0:
            return np.full(len(orders), np.inf)
        return np.asarray(orders, dtype=np.float64) / (2.0 * self.sigma**2) * self.releases


@dataclass(frozen=True)
class PureDP:
    epsilon: float

    kind = "pure"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValidationError(f"pure epsilon must be >= 0, got {self.epsilon}")


_EVENT_TYPES = {cls.kind: cls for cls in (SubsampledGaussian, Gaussian, PureDP)}


@dataclass
class AccountantLedger:
    """Append-only list of privacy events.

    ``sigma = 0`` records a non-private release (epsilon = infinity); it is
    how epsilon-infinity runs keep an honest event count.
    """

    events: list = field(default_factory=list)
    orders: np.ndarray = field(default_factory=lambda: ORDERS.copy())
    labels: list = field(default_factory=list)

    def append(self, event, label=""):
        if type(event) not in _EVENT_TYPES.values():
            raise ValidationError(f"unknown event {event!r}")
        self.events.append(event)
        self.labels.append(label)
        return event

    def __len__(self):
        return len(self.events)

    def copy(self):
        return AccountantLedger(list(self.events), self.orders.copy(), list(self.labels))

    def rdp(self):
        total = np.zeros(len(self.orders))
        for ev in self.events:
            if not isinstance(ev, PureDP):
                total = total + ev.rdp(self.orders)
        return total

    def pure_epsilon(self):
        return sum(ev.epsilon for ev in self.events if isinstance(ev, PureDP))

    def epsilon(self, delta):
        return compose_and_convert(self, delta)

    def to_dict(self):
        return {
            "orders": [int(a) for a in self.orders],
            "events": [
                {"type": ev.kind, "label": lab, **asdict(ev)} for ev, lab in zip(self.events, self.labels)
            ],
        }

    @classmethod
    def from_dict(cls, data):
        ledger = cls(orders=np.asarray(data.get("orders", ORDERS), dtype=np.int64))
        for raw in data["events"]:
            raw = dict(raw)
            kind = raw.pop("type")
            label = raw.pop("label", "")
            if kind not in _EVENT_TYPES:
                raise ValidationError(f"unknown event type {kind!r}")
            ledger.append(_EVENT_TYPES[kind](**raw), label)
        return ledger

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def rdp_to_epsilon(rdp, orders, delta):
    """``(eps, best_order)`` minimizing ``rdp + log(1/delta)/(order - 1)`` over the grid."""
    orders = np.asarray(orders, dtype=np.float64)
    eps = np.asarray(rdp, dtype=np.float64) + math.log(1.0 / delta) / (orders - 1.0)
    i = int(np.argmin(eps))
    return float(eps[i]), int(orders[i])


def compose_and_convert(ledger, delta):
    """Total epsilon at ``delta`` for every event in ``ledger``."""
    if len(ledger) == 0:
        raise ValidationError("ledger has no events")
    if not 0 < delta < 1:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    rdp_events = [ev for ev in ledger.events if not isinstance(ev, PureDP)]
    eps = 0.0
    if rdp_events:
        rdp = ledger.rdp()
        if np.all(np.isinf(rdp)):
            return math.inf
        eps, _ = rdp_to_epsilon(rdp, ledger.orders, delta)
    return eps + ledger.pure_epsilon()


SIGMA_BRACKET = (0.3, 1e4)


def calibrate_sigma(target, q, steps, base=None, bracket=SIGMA_BRACKET, iters=80, tol=1e-3):
    """Smallest-noise ``sigma`` (to ``tol`` in epsilon) meeting ``target``.

    Accounts ``steps`` subsampled-Gaussian steps at rate ``q`` (``q = 1`` is a
    plain Gaussian release repeated ``steps`` times) on top of the events in
    ``base``. Bisection over ``bracket``; the returned sigma accounts to an
    epsilon in ``[target.epsilon - tol, target.epsilon]``.
    """
    if steps < 1:
        raise ValidationError(f"steps must be >= 1, got {steps}")
    base = base.copy() if base is not None else AccountantLedger()

    def eps_at(sigma):
        ledger = base.copy()
        ledger.append(SubsampledGaussian(q, sigma, steps))
        return compose_and_convert(ledger, target.delta)

    lo, hi = bracket
    eps_hi = eps_at(hi)
    if eps_hi > target.epsilon:
        raise CalibrationError(
            f"even sigma={hi} gives eps={eps_hi:.4g} > target {target.epsilon}"
        )
    eps_lo = eps_at(lo)
    if eps_lo <= target.epsilon:
        if eps_lo >= target.epsilon - tol:
            return lo
        raise CalibrationError(
            f"sigma={lo} already gives eps={eps_lo:.4g}, below target {target.epsilon} - {tol}"
        )
    for _ in range(iters):
        mid = 0.5 * (lo + hi) if hi / lo < 4 else math.sqrt(lo * hi)
        eps_mid = eps_at(mid)
        if eps_mid > target.epsilon:
            lo = mid
        else:
            hi, eps_hi = mid, eps_mid
            if eps_hi >= target.epsilon - tol:
                break
    return hi


def calibrate_gaussian_sigma(target, releases=1, base=None):
    """Noise multiplier for ``releases`` unsubsampled Gaussian releases."""
    return calibrate_sigma(target, 1.0, releases, base=base)


def delta_default(N):
    """``1 / (N ln N)``; natural log."""
    if N < 3:
        raise ValidationError(f"delta rule needs N >= 3, got {N}")
    return 1.0 / (N * math.log(N))


def parallel_compose(eps_train, eps_val):
    """Disjoint data parts: the total guarantee is the worse of the two."""
    return max(eps_train, eps_val)
