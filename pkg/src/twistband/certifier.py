"""Trial-function certificates for a bound state below the threshold E.

The trial state is ``Psi(s, t) = f(t) phi(s)`` with ``f`` the fiber ground
state and ``phi`` equal to ``exp(-delta (|s| - s0))`` outside the support.
For real ``f`` the cross term ``int f f'_tau dt`` vanishes, which gives the
exact identity

    Q[Psi] - E ||Psi||^2 = ||f||^2 int phi'^2 ds
                           + ||f'_tau||^2 int (theta_dot^2 - beta0^2) phi^2 ds.

With ``phi = 1`` on the support this is ``delta ||f||^2 + ||f'_tau||^2 I``.
A minus sign in front of the deficit term contradicts the small-delta
expansion ``delta (||f'_tau||^2/||f||^2) I``; the plus sign is used here and the choice is recorded in every certificate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .band_structure import GroundState
from .twist_profile import (TwistProfile, integrate, twist_deficit,
                            validate_profile)

SIGN_NOTE = (
    "Q[Psi]-E||Psi||^2 = delta*||f||^2 + ||f'_tau||^2 * I (plus sign); a minus sign would "
    "contradict the small-delta expansion delta*(||f'_tau||^2/||f||^2)*I and is not used"
)
LOG10_DELTA_RANGE = (-12.0, 0.0)
VERDICT_REL_MARGIN = 1e-3


class CertificateError(ValueError):
    pass


@dataclass
class TrialParams:
    delta: float
    gamma: float
    s0: float

    def __post_init__(self):
        if not self.delta > 0:
            raise CertificateError(f"delta must be positive, got {self.delta}")
        if not self.gamma >= 0:
            raise CertificateError(f"gamma must be non-negative, got {self.gamma}")


@dataclass
class Certificate:
    shifted_quotient: float
    params: TrialParams
    ingredients: dict
    verdict: bool = False
    reason: str = ""
    margin: float = 0.0
    quadrature_error: float = 0.0
    search: dict = field(default_factory=dict)
    sign_convention: str = SIGN_NOTE

    @property
    def upper_bound(self):
        """E + shifted quotient: an upper bound for the bottom of the spectrum."""
        return self.ingredients["E"] + self.shifted_quotient

    def to_dict(self):
        d = asdict(self)
        d["upper_bound"] = self.upper_bound
        return d


def _support_integrals(profile, gamma, order=12, n_panels=128):
    """Quadratures over [-s0, s0] needed by the deformed trial function."""
    b0 = profile.beta0
    beta = profile.beta

    def phi(s):
        return 1.0 + gamma * beta(s)

    pot = integrate(profile, lambda s: ((b0 - beta(s)) ** 2 - b0 * b0) * phi(s) ** 2,
                    order, n_panels)
    norm = integrate(profile, lambda s: phi(s) ** 2, order, n_panels)
    ddot2 = integrate(profile, lambda s: profile.beta_prime(s) ** 2, order, n_panels)
    rev = integrate(profile, lambda s: beta(s) ** 2 * (2 * b0 - beta(s)), order, n_panels)
    return pot, norm, ddot2, rev


def shifted_quotient(norm_sq, ang, deficit_term, kinetic, support_norm, delta):
    """(Q[Psi] - E||Psi||^2) / ||Psi||^2 from its ingredients."""
    num = norm_sq * kinetic + ang * deficit_term
    den = norm_sq * (1.0 / delta + support_norm)
    return num / den


def rayleigh_main(gs: GroundState, profile: TwistProfile, delta: float) -> Certificate:
    """Shifted quotient of the undeformed trial function (phi = 1 on the support)."""
    params = TrialParams(float(delta), 0.0, profile.s0)
    rep = twist_deficit(profile)
    I = rep.deficit_closed_form if rep.deficit_closed_form is not None else rep.deficit
    num = delta * gs.norm_sq + gs.angular_energy * I
    norm_psi = (1.0 / delta + 2 * profile.s0) * gs.norm_sq
    sq = num / norm_psi
    quad_err = 0.0
    if rep.deficit_closed_form is not None:
        quad_err = abs(rep.deficit - rep.deficit_closed_form) * gs.angular_energy / norm_psi
    ingredients = {
        "E": gs.E, "norm_sq": gs.norm_sq, "angular_energy": gs.angular_energy,
        "deficit": I, "deficit_quadrature": rep.deficit,
        "int_theta_ddot_sq": None, "int_reversion": None,
        "support_norm": 2 * profile.s0, "kinetic": delta,
        "psi_norm_sq": norm_psi, "numerator": num,
    }
    return Certificate(shifted_quotient=sq, params=params, ingredients=ingredients,
                       quadrature_error=quad_err)


def rayleigh_critical(gs: GroundState, profile: TwistProfile, delta: float,
                      gamma: float, check=True) -> Certificate:
    """Shifted quotient of the deformed trial phi = 1 + gamma (beta0 - theta_dot) on the support."""
    params = TrialParams(float(delta), float(gamma), profile.s0)
    if check:
        val = validate_profile(profile, "critical")
        if not val.passed:
            raise CertificateError("profile fails the critical hypotheses: "
                                   + "; ".join(val.failures))
    pot, norm, ddot2, rev = _support_integrals(profile, gamma)
    pot_hi, norm_hi, ddot2_hi, _ = _support_integrals(profile, gamma, order=16, n_panels=256)
    kinetic = delta + gamma * gamma * ddot2
    num = gs.norm_sq * kinetic + gs.angular_energy * pot
    norm_psi = gs.norm_sq * (1.0 / delta + norm)
    sq = num / norm_psi
    num_hi = gs.norm_sq * (delta + gamma * gamma * ddot2_hi) + gs.angular_energy * pot_hi
    sq_hi = num_hi / (gs.norm_sq * (1.0 / delta + norm_hi))
    ingredients = {
        "E": gs.E, "norm_sq": gs.norm_sq, "angular_energy": gs.angular_energy,
        "deficit": twist_deficit(profile).deficit, "deficit_weighted": pot,
        "int_theta_ddot_sq": ddot2, "int_reversion": rev,
        "support_norm": norm, "kinetic": kinetic,
        "psi_norm_sq": norm_psi, "numerator": num,
    }
    return Certificate(shifted_quotient=sq, params=params, ingredients=ingredients,
                       quadrature_error=abs(sq - sq_hi))


def golden_section(fn, lo, hi, tol=1e-10, maxiter=200):
    """Minimize a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(maxiter):
        if abs(b - a) <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (c, fc) if fc < fd else (d, fd)


def optimal_delta_main(ratio, deficit, s0):
    """Closed-form minimizer of delta (delta + R I) / (1 + 2 s0 delta) for R I < 0."""
    ri = ratio * deficit
    if ri >= 0:
        return None
    return (-1.0 + math.sqrt(1.0 - 2.0 * s0 * ri)) / (2.0 * s0)


def certify(gs: GroundState, profile: TwistProfile,
            log10_range=LOG10_DELTA_RANGE, rel_margin=VERDICT_REL_MARGIN) -> Certificate:
    """Best certificate over delta for the trial family the profile qualifies for."""
    rep = twist_deficit(profile)
    if rep.classification == "attractive":
        path = "main"

        def make(delta):
            return rayleigh_main(gs, profile, delta)
    elif rep.classification == "critical":
        path = "critical"
        val = validate_profile(profile, "critical")
        if not val.passed:
            cert = rayleigh_main(gs, profile, 1e-3)
            cert.verdict = False
            cert.reason = ("critical profile fails hypotheses: " + "; ".join(val.failures)
                           + "; no certificate from this trial family")
            return cert

        def make(delta):
            return rayleigh_critical(gs, profile, delta, math.sqrt(delta), check=False)
    else:
        cert = rayleigh_main(gs, profile, 1e-3)
        cert.verdict = False
        cert.reason = ("repulsive profile (I > 0): no certificate from this trial family; "
                       "this is not a claim that no bound state exists")
        cert.search = {"path": "none"}
        return cert

    def objective(x):
        return make(10.0 ** x).shifted_quotient

    lo, hi = log10_range
    grid = np.linspace(lo, hi, 100)
    vals = np.array([objective(x) for x in grid])
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, len(grid) - 1)]
    x_best, _ = golden_section(objective, a, b, tol=1e-10)
    cert = make(10.0 ** x_best)
    cert.search = {"path": path, "log10_delta_range": [lo, hi], "grid_points": len(grid),
                   "grid_best_log10_delta": float(grid[k]), "grid_best_value": float(vals[k]),
                   "golden_log10_delta": float(x_best)}
    ratio = gs.ratio
    margin = rel_margin * cert.params.delta * ratio + cert.quadrature_error
    cert.margin = margin
    resolved = gs.angular_resolved and ratio >= 1e-12
    cert.ingredients["angular_energy_tol"] = gs.angular_energy_tol
    cert.verdict = bool(cert.shifted_quotient < -margin and resolved)
    if cert.verdict:
        cert.reason = f"bound state certified by the {path} trial family"
    elif not resolved:
        cert.reason = ("angular energy not resolved above its refinement tolerance "
                       "(rotationally symmetric section or mesh too coarse); no certificate")
    elif profile.max_abs_beta == 0.0:
        cert.reason = "zero deficit, zero deformation"
    else:
        cert.reason = "shifted quotient not below the verdict margin"
    return cert


def sweep(gs, profile, deltas, critical=False):
    """Rows (delta, gamma, shifted_quotient) for a list of deltas."""
    rows = []
    for d in deltas:
        if critical:
            c = rayleigh_critical(gs, profile, d, math.sqrt(d), check=False)
        else:
            c = rayleigh_main(gs, profile, d)
        rows.append((c.params.delta, c.params.gamma, c.shifted_quotient))
    return rows


def sweep_csv(rows):
    lines = ["delta,gamma,shifted_quotient"]
    lines += [f"{d:.17g},{g:.17g},{q:.17g}" for d, g, q in rows]
    return "\n".join(lines) + "\n"


def truncated_trial_quotient(gs, profile, delta, L, gamma=0.0):
    """Exact shifted quotient of the trial state cut off at |s| = L.

    Outside the support the tail is ``sinh(delta (L - |s|)) / sinh(delta (L - s0))``,
    which equals 1 at ``|s| = s0``, vanishes at ``|s| = L`` and differs from
    the exponential tail by O(exp(-2 delta (L - s0))).
    """
    s0 = profile.s0
    if not L > s0:
        raise CertificateError("L must exceed s0")
    x = delta * (L - s0)
    # int_{s0}^{L} tail^2 and int tail'^2, per side
    sh2 = math.sinh(x) ** 2
    tail_norm = (math.sinh(2 * x) / (4 * delta) - (L - s0) / 2) / sh2
    tail_kin = delta ** 2 * (math.sinh(2 * x) / (4 * delta) + (L - s0) / 2) / sh2
    pot, norm, ddot2, _ = _support_integrals(profile, gamma)
    kinetic = 2 * tail_kin + gamma * gamma * ddot2
    num = gs.norm_sq * kinetic + gs.angular_energy * pot
    den = gs.norm_sq * (2 * tail_norm + norm)
    return num / den


def truncated_trial_phi(profile, delta, L, s, gamma=0.0):
    """Axial profile of :func:`truncated_trial_quotient` sampled at ``s``."""
    s = np.asarray(s, dtype=float)
    s0 = profile.s0
    a = np.abs(s)
    tail = np.sinh(delta * np.clip(L - a, 0.0, None)) / math.sinh(delta * (L - s0))
    inner = 1.0 + gamma * profile.beta(s)
    return np.where(a <= s0, inner, tail)
