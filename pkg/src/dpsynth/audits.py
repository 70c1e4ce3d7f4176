"""Executable checks of analytical privacy claims.

Each audit returns an :class:`AuditReport`; a failing report always carries the
concrete witness that broke the claim.
"""
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, optimize

from .accountant import ORDERS, AccountantLedger, SubsampledGaussian, rdp_to_epsilon
from .embeddings import NOTIONS, brute_force_sensitivity, sensitivity_mean_embedding
from .errors import SingularityError, ValidationError
from .mechanisms import dppromise_reconstruct
from .rng import SeededRng
from .synthesizers.diffusion import NoiseSchedule, diffuse_forward

EXACT_TOL = 1e-12
RECON_TOL = 1e-9
ACCOUNT_RTOL = 1e-4
DEFAULT_GRID = (
    (1.0, 1.0, 1, 1e-5),
    (0.01, 1.0, 1000, 1e-5),
    (0.01, 1.0, 4000, 1e-5),
    (0.05, 1.5, 500, 1e-6),
    (0.2, 4.0, 100, 1e-5),
    (0.0, 1.0, 100, 1e-5),
)


@dataclass
class AuditReport:
    audit_id: str
    claim: str
    passed: bool
    witness: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and not self.witness:
            raise ValidationError("a failing audit needs a witness")

    def to_dict(self):
        return asdict(self)


def audit_sensitivity(max_m=5, n_unit=3, seed=0):
    """Brute-force neighbour search against the closed-form mean-embedding bounds."""
    rng = SeededRng(seed, stream=0xA0D1)
    unit = rng.normal((n_unit, 2))
    unit /= np.linalg.norm(unit, axis=1, keepdims=True)
    alphabets = {"pm1": np.array([[-1.0], [1.0]]), "random_unit": unit}
    rows, violations, missed = [], [], []
    for name, alphabet in alphabets.items():
        for notion in NOTIONS:
            for m in range(1, max_m + 1):
                bound = sensitivity_mean_embedding(m, notion)
                achieved, wit = brute_force_sensitivity(alphabet, m, notion)
                row = {"alphabet": name, "notion": notion, "m": m, "bound": bound, "achieved": achieved}
                rows.append(row)
                if achieved > bound + EXACT_TOL:
                    violations.append(dict(row, witness=wit))
                tight = notion in ("replace_one", "add_remove_known_m")
                if name == "pm1" and tight and abs(achieved - bound) > EXACT_TOL:
                    missed.append(dict(row, witness=wit))
    passed = not violations and not missed
    witness = {} if passed else {"exceeds_bound": violations, "bound_not_attained": missed}
    return AuditReport("sensitivity", "mean-embedding sensitivity is 2/m (replace, unknown size) and 1/m "
                       "(known size), and the +-1 alphabet attains it", passed, witness,
                       {"exact": EXACT_TOL}, {"rows": rows})


def audit_dppromise(trials=100, sched=None, d=16, seed=0):
    """Releasing ``(x_t, e, t)`` lets anyone recover ``x_0`` exactly.

    The control arm reconstructs with fresh noise instead of the released one
    and should be far off.
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    sched = sched or NoiseSchedule.linear()
    rng = SeededRng(seed, stream=0xA0D2)
    worst, worst_case, control, skipped = 0.0, None, [], 0
    for _ in range(trials):
        x0 = rng.uniform(d) * 2.0 - 1.0
        t = int(rng.integers(sched.T) + 1)
        e = rng.normal(d)
        x_t = diffuse_forward(x0, t, e, sched)
        try:
            rec = dppromise_reconstruct(x_t, e, t, sched)
        except SingularityError:
            skipped += 1
            continue
        err = float(np.max(np.abs(rec - x0)))
        if err >= worst:
            worst, worst_case = err, {"x_t": x_t.tolist(), "e": e.tolist(), "t": t, "x0": x0.tolist()}
        fresh = dppromise_reconstruct(x_t, rng.normal(d), t, sched)
        control.append(float(np.max(np.abs(fresh - x0))))
    passed = worst < RECON_TOL
    return AuditReport("dppromise", "x_0 is recoverable from a released (x_t, e, t)", passed,
                       {"max_error": worst, "triple": worst_case}, {"reconstruction": RECON_TOL},
                       {"trials": trials, "skipped": skipped, "control_mean_error": float(np.mean(control)),
                        "control_min_error": float(np.min(control))})


def _log_integrand(z, q, sigma, alpha):
    # log of mu0(z) * (mu(z) / mu0(z))^alpha with mu0 = N(0, s^2), mu = (1-q) mu0 + q N(1, s^2)
    log_ratio = np.logaddexp(math.log1p(-q), math.log(q) + (2.0 * z - 1.0) / (2.0 * sigma**2)) if q < 1 \
        else (2.0 * z - 1.0) / (2.0 * sigma**2)
    return -z * z / (2.0 * sigma**2) - math.log(sigma * math.sqrt(2.0 * math.pi)) + alpha * log_ratio


def quadrature_log_moment(q, sigma, alpha):
    """``log E_{z ~ N(0, s^2)}[(mu(z)/mu0(z))^alpha]`` by adaptive quadrature.

    Independent of the binomial expansion: integrates the mixture density ratio
    directly, after shifting the integrand by its maximum.
    """
    if q == 0:
        return 0.0
    f = lambda z: _log_integrand(z, q, sigma, alpha)  # noqa: E731
    # the log-integrand is concave-plus-convex; bracket its maximum on a coarse grid first
    grid = np.linspace(-20 * sigma, alpha + 20 * sigma, 4001)
    z0 = grid[int(np.argmax(f(grid)))]
    step = grid[1] - grid[0]
    res = optimize.minimize_scalar(lambda z: -f(z), bounds=(z0 - step, z0 + step), method="bounded",
                                  options={"xatol": 1e-10})
    zm, fm = float(res.x), float(-res.fun)
    g = lambda z: math.exp(f(z) - fm)  # noqa: E731
    left = integrate.quad(g, -np.inf, zm, epsabs=0.0, epsrel=1e-12, limit=500)[0]
    right = integrate.quad(g, zm, np.inf, epsabs=0.0, epsrel=1e-12, limit=500)[0]
    return fm + math.log(left + right)


def quadrature_epsilon(q, sigma, steps, delta, orders=ORDERS):
    rdp = np.array([steps * quadrature_log_moment(q, sigma, int(a)) / (a - 1) for a in orders])
    return rdp_to_epsilon(rdp, orders, delta)[0]


def audit_accountant(grid=DEFAULT_GRID):
    """Ledger epsilon versus the quadrature oracle on every ``(q, sigma, T, delta)`` point."""
    if len(grid) == 0:
        raise ValidationError("accountant audit grid is empty")
    rows, bad = [], []
    for q, sigma, T, delta in grid:
        ledger = AccountantLedger()
        ledger.append(SubsampledGaussian(q, sigma, T))
        got = ledger.epsilon(delta)
        ref = quadrature_epsilon(q, sigma, T, delta)
        gap = abs(got - ref) / abs(ref)
        row = {"q": q, "sigma": sigma, "T": T, "delta": delta, "ledger": got, "oracle": ref, "rel_gap": gap}
        rows.append(row)
        if not gap <= ACCOUNT_RTOL:
            bad.append(row)
    return AuditReport("accountant", "the RDP ledger matches an independent numerical integration", not bad,
                       {"points": bad} if bad else {}, {"relative": ACCOUNT_RTOL}, {"rows": rows})


AUDITS = {
    "sensitivity": audit_sensitivity,
    "dppromise": audit_dppromise,
    "accountant": audit_accountant,
}


def run_audits(only=None):
    if only is not None and only not in AUDITS:
        raise ValidationError(f"unknown audit {only!r}; choose from {sorted(AUDITS)}")
    names = [only] if only else list(AUDITS)
    return [AUDITS[n]() for n in names]
