"""Twist velocity profiles theta_dot(s) = beta0 - beta(s) with compact support.

The perturbation ``beta`` is one of a few closed-form families on
``[-s0, s0]`` (zero outside), or a tabulated profile.  Closed forms of the
integrals of ``beta``, ``beta**2`` and ``beta'**2`` back every quadrature
with an exact cross-check.

===============  =========================================  ============
kind             beta(s) on [-s0, s0]                       params
===============  =========================================  ============
cosine_bump      c (1 + cos(pi s / s0)) / 2                 c
half_cosine      c cos(pi s / (2 s0))                       c
mixed            c1 cos(pi s / (2 s0)) - c2 sin(pi s / s0)  c1, c2
sine             c sin(pi s / s0)                           c
tent             c (1 - |s| / s0)                           c
sampled          piecewise-linear through (s_k, beta_k)     s, beta
===============  =========================================  ============
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np

FAMILIES = ("cosine_bump", "half_cosine", "mixed", "sine", "tent", "sampled")
_PARAM_NAMES = {
    "cosine_bump": ("c",),
    "half_cosine": ("c",),
    "mixed": ("c1", "c2"),
    "sine": ("c",),
    "tent": ("c",),
    "sampled": ("s", "beta"),
}
# families whose beta is smooth inside (-s0, s0), so theta'' exists there
_SMOOTH_INSIDE = {"cosine_bump", "half_cosine", "mixed", "sine"}

CRITICAL_FAIL_SIGN = (
    "a one-signed slowdown 0 < beta < 2*beta0 satisfies beta**2 < 2*beta0*beta pointwise, "
    "so its deficit is strictly negative and it can never be critical; critical profiles "
    "need beta to change sign"
)


class ProfileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TwistProfile:
    kind: str
    beta0: float
    s0: float
    params: dict
    max_abs_beta: float = 0.0
    theta_ddot_l2: bool = True
    lower_accuracy: bool = False

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) <= self.s0
        x = np.where(inside, s, 0.0)
        val = _beta_inside(self, x)
        return np.where(inside, val, 0.0)

    def beta_prime(self, s):
        s = np.asarray(s, dtype=float)
        inside = np.abs(s) < self.s0
        x = np.where(inside, s, 0.0)
        return np.where(inside, _beta_prime_inside(self, x), 0.0)

    def to_dict(self):
        params = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                  for k, v in self.params.items()}
        return {"kind": self.kind, "beta0": self.beta0, "s0": self.s0, "params": params}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return make_profile(d["kind"], beta0=d["beta0"], s0=d["s0"], **d.get("params", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _beta_inside(pr, x):
    p, s0 = pr.params, pr.s0
    k = pr.kind
    if k == "cosine_bump":
        return p["c"] * 0.5 * (1 + np.cos(np.pi * x / s0))
    if k == "half_cosine":
        return p["c"] * np.cos(0.5 * np.pi * x / s0)
    if k == "mixed":
        return p["c1"] * np.cos(0.5 * np.pi * x / s0) - p["c2"] * np.sin(np.pi * x / s0)
    if k == "sine":
        return p["c"] * np.sin(np.pi * x / s0)
    if k == "tent":
        return p["c"] * (1 - np.abs(x) / s0)
    return np.interp(x, p["s"], p["beta"])


def _beta_prime_inside(pr, x):
    p, s0 = pr.params, pr.s0
    k = pr.kind
    if k == "cosine_bump":
        return -p["c"] * 0.5 * (np.pi / s0) * np.sin(np.pi * x / s0)
    if k == "half_cosine":
        return -p["c"] * (0.5 * np.pi / s0) * np.sin(0.5 * np.pi * x / s0)
    if k == "mixed":
        return (-p["c1"] * (0.5 * np.pi / s0) * np.sin(0.5 * np.pi * x / s0)
                - p["c2"] * (np.pi / s0) * np.cos(np.pi * x / s0))
    if k == "sine":
        return p["c"] * (np.pi / s0) * np.cos(np.pi * x / s0)
    if k == "tent":
        return -p["c"] * np.sign(x) / s0
    sk, bk = np.asarray(p["s"]), np.asarray(p["beta"])
    slopes = np.diff(bk) / np.diff(sk)
    j = np.clip(np.searchsorted(sk, x, side="right") - 1, 0, len(slopes) - 1)
    return slopes[j]


def _beta_antiderivative(pr, s):
    """int_0^s beta(u) du for the closed-form families (clamped outside the support)."""
    p, s0 = pr.params, pr.s0
    x = np.clip(np.asarray(s, dtype=float), -s0, s0)
    k = pr.kind
    if k == "cosine_bump":
        return 0.5 * p["c"] * (x + s0 / np.pi * np.sin(np.pi * x / s0))
    if k == "half_cosine":
        return p["c"] * (2 * s0 / np.pi) * np.sin(0.5 * np.pi * x / s0)
    if k == "mixed":
        return (p["c1"] * (2 * s0 / np.pi) * np.sin(0.5 * np.pi * x / s0)
                + p["c2"] * (s0 / np.pi) * (np.cos(np.pi * x / s0) - 1))
    if k == "sine":
        return -p["c"] * (s0 / np.pi) * (np.cos(np.pi * x / s0) - 1)
    if k == "tent":
        return p["c"] * (x - np.sign(x) * x * x / (2 * s0))
    sk, bk = np.asarray(p["s"]), np.asarray(p["beta"])
    # exact cumulative integral of the piecewise-linear interpolant
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (bk[1:] + bk[:-1]) * np.diff(sk))])

    def prim(y):
        j = np.clip(np.searchsorted(sk, y, side="right") - 1, 0, len(sk) - 2)
        dx = y - sk[j]
        slope = (bk[j + 1] - bk[j]) / (sk[j + 1] - sk[j])
        return cum[j] + bk[j] * dx + 0.5 * slope * dx * dx

    return prim(x) - prim(np.float64(0.0))


def closed_form_integrals(pr):
    """Exact (int beta, int beta^2, int beta'^2) over [-s0, s0], or None."""
    p, s0 = pr.params, pr.s0
    k = pr.kind
    pi2 = math.pi ** 2
    if k == "cosine_bump":
        c = p["c"]
        return c * s0, 0.75 * c * c * s0, c * c * pi2 / (4 * s0)
    if k == "half_cosine":
        c = p["c"]
        return 4 * s0 * c / math.pi, c * c * s0, c * c * pi2 / (4 * s0)
    if k == "mixed":
        c1, c2 = p["c1"], p["c2"]
        return (4 * s0 * c1 / math.pi, s0 * (c1 * c1 + c2 * c2),
                c1 * c1 * pi2 / (4 * s0) + c2 * c2 * pi2 / s0)
    if k == "sine":
        c = p["c"]
        return 0.0, c * c * s0, c * c * pi2 / s0
    if k == "tent":
        c = p["c"]
        return c * s0, 2 * c * c * s0 / 3, 2 * c * c / s0
    return None


def make_profile(kind, beta0, s0, **params) -> TwistProfile:
    """Build a validated :class:`TwistProfile` of a named family."""
    if kind not in FAMILIES:
        raise ProfileError(f"unknown profile kind {kind!r}; expected one of {FAMILIES}")
    beta0, s0 = float(beta0), float(s0)
    if not s0 > 0 or not math.isfinite(s0):
        raise ProfileError("s0 must be positive and finite")
    if not beta0 >= 0 or not math.isfinite(beta0):
        raise ProfileError("beta0 must be non-negative and finite")
    names = _PARAM_NAMES[kind]
    missing = [n for n in names if n not in params]
    unknown = [n for n in params if n not in names]
    if missing or unknown:
        raise ProfileError(f"{kind} takes parameters {names}; missing {missing}, unknown {unknown}")
    lower_accuracy = False
    if kind == "sampled":
        sk = np.asarray(params["s"], dtype=float)
        bk = np.asarray(params["beta"], dtype=float)
        if sk.ndim != 1 or sk.shape != bk.shape or len(sk) < 3:
            raise ProfileError("sampled profile needs matching 1-D s and beta arrays")
        if not np.all(np.diff(sk) > 0):
            raise ProfileError("sampled s must be strictly increasing")
        if abs(sk[0] + s0) > 1e-12 * s0 or abs(sk[-1] - s0) > 1e-12 * s0:
            raise ProfileError("sampled s must span exactly [-s0, s0]")
        params = {"s": tuple(sk.tolist()), "beta": tuple(bk.tolist())}
        lower_accuracy = True
    else:
        params = {n: float(params[n]) for n in names}
        if not all(map(math.isfinite, params.values())):
            raise ProfileError("profile parameters must be finite")
    pr = TwistProfile(kind, beta0, s0, params, lower_accuracy=lower_accuracy)
    ends = _beta_inside(pr, np.array([-s0, s0]))
    scale = max(1.0, max(abs(v) for v in _flat_params(params)))
    if np.max(np.abs(ends)) > 1e-12 * scale:
        raise ProfileError(f"{kind} does not vanish at s = +-s0 (beta(+-s0) = {ends.tolist()})")
    grid = np.linspace(-s0, s0, 4001)
    max_abs = float(np.max(np.abs(_beta_inside(pr, grid))))
    if kind == "sampled":
        max_abs = max(max_abs, float(np.max(np.abs(params["beta"]))))
    return TwistProfile(kind, beta0, s0, params, max_abs_beta=max_abs,
                        theta_ddot_l2=kind in _SMOOTH_INSIDE, lower_accuracy=lower_accuracy)


def _flat_params(params):
    for v in params.values():
        if isinstance(v, (tuple, list)):
            yield from v
        else:
            yield v


def sample_theta(profile: TwistProfile, s):
    """Return (theta, theta_dot, theta_ddot) at ``s``; theta(0) = 0.

    ``theta_ddot`` is ``None`` for families without a second derivative
    inside the support.
    """
    s = np.asarray(s, dtype=float)
    theta = profile.beta0 * s - _beta_antiderivative(profile, s)
    theta_dot = profile.beta0 - profile.beta(s)
    theta_ddot = -profile.beta_prime(s) if profile.theta_ddot_l2 else None
    return theta, theta_dot, theta_ddot


def gauss_legendre(a, b, n_panels=64, order=10):
    """Composite Gauss-Legendre nodes and weights on [a, b]."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _quad_grid(profile, order, n_panels):
    if profile.kind == "sampled":
        # panels between consecutive samples integrate the piecewise polynomial exactly
        sk = np.asarray(profile.params["s"])
        x, w = np.polynomial.legendre.leggauss(order)
        half = 0.5 * np.diff(sk)
        mid = 0.5 * (sk[1:] + sk[:-1])
        return ((mid[:, None] + half[:, None] * x).ravel(),
                (half[:, None] * w).ravel())
    if profile.kind == "tent":
        # split at the kink so each panel sees a polynomial
        n1, w1 = gauss_legendre(-profile.s0, 0.0, n_panels // 2, order)
        n2, w2 = gauss_legendre(0.0, profile.s0, n_panels // 2, order)
        return np.concatenate([n1, n2]), np.concatenate([w1, w2])
    return gauss_legendre(-profile.s0, profile.s0, n_panels, order)


def integrate(profile, fn, order=10, n_panels=64):
    """Integrate ``fn(s)`` over the support with composite Gauss-Legendre."""
    nodes, weights = _quad_grid(profile, order, n_panels)
    return float(np.dot(weights, fn(nodes)))


@dataclass
class DeficitReport:
    deficit: float
    deficit_closed_form: float | None
    reversion_margin: float
    classification: str
    tol: float
    quadrature_order: int

    def to_dict(self):
        return dict(self.__dict__)


def twist_deficit(profile: TwistProfile, order=10, n_panels=64) -> DeficitReport:
    """Deficit I = int (theta_dot^2 - beta0^2) ds over the support, classified."""
    if order < 8:
        raise ValueError("quadrature order must be at least 8")
    b0 = profile.beta0
    I = integrate(profile, lambda s: (b0 - profile.beta(s)) ** 2 - b0 * b0, order, n_panels)
    closed = closed_form_integrals(profile)
    I_closed = None
    if closed is not None:
        int_b, int_b2, _ = closed
        I_closed = -2 * b0 * int_b + int_b2
    tol = 1e-10 * (b0 * b0 * 2 * profile.s0 + 1)
    I_ref = I_closed if I_closed is not None else I
    if abs(I_ref) <= tol:
        cls = "critical"
    elif I_ref < 0:
        cls = "attractive"
    else:
        cls = "repulsive"
    grid = np.linspace(-profile.s0, profile.s0, 20001)
    if profile.kind == "sampled":
        grid = np.union1d(grid, profile.params["s"])
    margin = float(np.min(2 * b0 - profile.beta(grid)))
    return DeficitReport(deficit=I, deficit_closed_form=I_closed, reversion_margin=margin,
                         classification=cls, tol=tol, quadrature_order=order)


def _deficit_of(kind, beta0, s0, params):
    pr = TwistProfile(kind, beta0, s0, params)
    int_b, int_b2, _ = closed_form_integrals(pr)
    return -2 * beta0 * int_b + int_b2


def critical_solve(kind, beta0, s0, free, **fixed) -> TwistProfile:
    """Choose the free amplitude ``free`` so the deficit vanishes.

    The deficit of every closed-form family is a quadratic polynomial in each
    amplitude; its positive root is taken, checked by quadrature, and the
    resulting profile must satisfy the hypotheses of the critical theorem.
    """
    if kind not in _PARAM_NAMES or kind == "sampled":
        raise ProfileError(f"critical_solve needs a closed-form family, got {kind!r}")
    names = _PARAM_NAMES[kind]
    if free not in names:
        raise ProfileError(f"{free!r} is not a parameter of {kind}")
    base = {n: float(fixed.get(n, 0.0)) for n in names}

    def I(a):
        return _deficit_of(kind, beta0, s0, {**base, free: a})

    # exact quadratic through three samples
    i0, ip, im = I(0.0), I(1.0), I(-1.0)
    qa = 0.5 * (ip + im) - i0
    qb = 0.5 * (ip - im)
    qc = i0
    if abs(qa) < 1e-300:
        raise ProfileError("deficit does not depend quadratically on the free amplitude")
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        raise ProfileError("no real amplitude makes the deficit vanish")
    r = math.sqrt(disc)
    roots = sorted({(-qb - r) / (2 * qa), (-qb + r) / (2 * qa)})
    positive = [x for x in roots if x > 1e-14]
    one_signed = kind in ("cosine_bump", "half_cosine", "tent") or (
        kind == "mixed" and free == "c1" and base["c2"] == 0.0)
    if not positive:
        if one_signed and beta0 > 0:
            raise ProfileError("no positive root: " + CRITICAL_FAIL_SIGN)
        raise ProfileError("no positive amplitude makes the deficit vanish"
                           + (" (beta0 = 0: only beta = 0 is critical)" if beta0 == 0 else ""))
    amp = positive[0]
    profile = make_profile(kind, beta0, s0, **{**base, free: amp})
    report = twist_deficit(profile)
    if abs(report.deficit) > 1e-12 * max(beta0 * beta0 * 2 * s0, 1e-300):
        raise ProfileError(f"quadrature deficit {report.deficit:.3e} not zero at root {amp!r}")
    if report.reversion_margin <= 0:
        if one_signed:
            raise ProfileError(
                f"root {amp!r} reverts the twist (margin {report.reversion_margin:.3g}): "
                + CRITICAL_FAIL_SIGN)
        raise ProfileError(f"root {amp!r} violates the reversion margin "
                           f"({report.reversion_margin:.3g} <= 0)")
    if not profile.theta_ddot_l2:
        raise ProfileError("second derivative not square-integrable for this family")
    return profile


@dataclass
class ValidationReport:
    theorem: str
    passed: bool
    failures: list
    deficit: DeficitReport

    def to_dict(self):
        return {"theorem": self.theorem, "passed": self.passed, "failures": self.failures,
                "deficit": self.deficit.to_dict()}


def validate_profile(profile: TwistProfile, theorem="main") -> ValidationReport:
    """Check the hypotheses of the bound-state theorems for ``profile``."""
    rep = twist_deficit(profile)
    failures = []
    if theorem == "main":
        if rep.classification != "attractive":
            failures.append(f"deficit not negative ({rep.classification}, I={rep.deficit:.6g})")
    elif theorem == "critical":
        if rep.classification != "critical":
            failures.append(f"deficit nonzero (I={rep.deficit:.6g}, tol={rep.tol:.1e})")
        if not rep.reversion_margin > 0:
            failures.append(f"reversion margin not positive ({rep.reversion_margin:.6g})")
        if not profile.theta_ddot_l2:
            failures.append("second derivative not square-integrable "
                            "(theta'' undefined at an interior kink)")
    else:
        raise ValueError(f"theorem must be 'main' or 'critical', got {theorem!r}")
    return ValidationReport(theorem, not failures, failures, rep)


def samples_csv(profile, s):
    th, thd, thdd = sample_theta(profile, s)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s", "theta", "theta_dot", "theta_ddot"])
    for i, si in enumerate(np.asarray(s, dtype=float)):
        dd = "nan" if thdd is None else f"{thdd[i]:.17g}"
        w.writerow([f"{si:.17g}", f"{th[i]:.17g}", f"{thd[i]:.17g}", dd])
    return buf.getvalue()
