"""Closed-form laws at the special angle and the statistical test harness.

The joint start/duration density, its duration marginal, and the two
evaluations of the exponential functional H (trigonometric closed form vs
direct quadrature of the joint density) are deterministic oracles; the KS and
chi-square wrappers standardize how every distributional criterion reports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import gammaincc

__all__ = [
    "TestReport",
    "HParams",
    "duration_density",
    "duration_cdf",
    "duration_mean",
    "joint_density_mu",
    "start_norm_marginal",
    "closed_form_H",
    "quadrature_Hhat",
    "ks_test",
    "two_sample_ks",
    "chi_square_independence",
]

SQRT3 = np.sqrt(3.0)
# joint density prefactor and the start-point intensity constant
MU_PREFACTOR = 3.0 ** (-0.625) / (8.0 * np.sqrt(2.0 * np.pi))
START_CONST = 3.0 ** 0.125 / 8.0
DURATION_PREFACTOR = 3.0 ** (-0.75) / np.sqrt(2.0 * np.pi)
H_C = 1.0 / (2.0 * SQRT3)

_GL_CACHE = {}


def _gauss_laguerre_half(n: int = 180):
    if n not in _GL_CACHE:
        from scipy.special import roots_genlaguerre

        _GL_CACHE[n] = roots_genlaguerre(n, 0.5)
    return _GL_CACHE[n]


@dataclass
class TestReport:
    name: str
    statistic: float
    p_value: float | None
    sample_sizes: tuple
    tolerance: float
    verdict: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = dict(
            name=self.name,
            statistic=self.statistic,
            p_value=self.p_value,
            sample_sizes=list(self.sample_sizes),
            tolerance=self.tolerance,
            verdict=self.verdict,
            metadata=self.metadata,
        )
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=float)


# -- closed forms ------------------------------------------------------------


def duration_density(t):
    """Density of the excursion duration from a unit-1-norm boundary point."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    tp = t[pos]
    out[pos] = DURATION_PREFACTOR * np.exp(-1.0 / (2.0 * SQRT3 * tp)) * tp**-2.5
    return out if out.ndim else float(out)


def duration_cdf(t):
    """Distribution function of the unit duration law.

    The substitution v = 1/(2*sqrt(3)*s) turns the integral into an upper
    incomplete gamma of order 3/2 with total mass exactly 1.
    """
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = gammaincc(1.5, 1.0 / (2.0 * SQRT3 * t[pos]))
    return out if out.ndim else float(out)


def duration_mean() -> float:
    return 1.0 / SQRT3


def joint_density_mu(l, r, t):
    """Joint start-point/duration density of backward excursions."""
    l, r, t = (np.asarray(v, dtype=float) for v in (l, r, t))
    u = l + r
    return MU_PREFACTOR * np.sqrt(u) * np.exp(-(u * u) / (2.0 * SQRT3 * t)) * t**-2.5


def start_norm_marginal(l, r):
    """Start-point intensity after integrating out the duration."""
    return START_CONST / (np.asarray(l) + np.asarray(r)) ** 2.5


@dataclass(frozen=True)
class HParams:
    """Coordinates for the exponential functional of the excursion measure.

    (a, b) solve the two linear relations tying them to the polar data
    (theta0, r0); validity of the closed form needs lambda > r0^2 / 2.
    """

    theta0: float
    lam: float
    r0: float = 1.0

    def __post_init__(self):
        if not (-np.pi < self.theta0 <= np.pi):
            raise ValueError("theta0 must lie in (-pi, pi]")
        if self.lam <= self.r0**2 / 2.0:
            raise ValueError("lambda must exceed r0^2 / 2")

    @property
    def ab(self) -> tuple:
        s = -self.r0 * np.cos(self.theta0) / 3.0**0.25  # a + b
        d = -self.r0 * np.sin(self.theta0) * 3.0**0.25  # b - a
        return (s - d) / 2.0, (s + d) / 2.0


def closed_form_H(hp: HParams) -> float:
    """Trigonometric closed form of the exponential functional."""
    a, b = hp.ab
    xa = a / np.sqrt(H_C * hp.lam)
    xb = b / np.sqrt(H_C * hp.lam)
    num = xa * xa + xb * xb + xa * xb - 3.0
    den = np.sqrt(2.0 + xb) * (xb - 1.0) + np.sqrt(2.0 + xa) * (xa - 1.0)
    if abs(den) < 1e-14:
        raise ZeroDivisionError("degenerate parameters for the closed form")
    return hp.lam**0.25 * np.sqrt(np.pi) / (2.0**1.25 * 3.0) * num / den


def quadrature_Hhat(hp: HParams) -> float:
    """The same functional by nested quadrature of the joint density.

    The inner integral over the start-point angle is analytic; the remaining
    (u = l + r, t) integrals run numerically, with t traded for s = k/t to
    localize the mass and the exponentials combined to avoid overflow for
    sign-changing (a, b).
    """
    a, b = hp.ab
    lam = hp.lam
    same = abs(a - b) < 1e-13

    # t = k/s turns the t-integral into sqrt(s) e^{-s} against [u - e^{-lam k/s} D(u)].
    # The u-term integrates to Gamma(3/2) u exactly; the remainder factors as
    # D(u) * A(u) with A strictly positive and smooth, so the only numerical
    # inner work is a cancellation-free quadrature for A.
    gamma32 = np.sqrt(np.pi) / 2.0

    def positive_part(m):
        # A(m) = int sqrt(s) e^{-s - m/s} ds via s = sqrt(m) e^v: the
        # integrand decays double-exponentially on the right and
        # exponentially on the left, so a plain trapezoid rule converges
        # to machine accuracy on a modest grid.
        if m < 1e-290:
            return gamma32
        v_hi = np.log(50.0 / np.sqrt(m) + 10.0)
        v = np.arange(-14.0, v_hi, 0.02)
        ex = 1.5 * v - 2.0 * np.sqrt(m) * np.cosh(v) + 0.75 * np.log(m)
        return 0.02 * np.exp(ex).sum()

    def inner(u):
        k = u * u / (2.0 * SQRT3)
        m = lam * k
        logA = np.log(max(positive_part(m), 1e-300))
        if same:
            d = u * np.exp(logA - a * u)
        else:
            # exponents combined: the e^{-2 sqrt(m)} decay inside A dominates
            # any exp(|a| u) growth within the validity domain
            d = (np.exp(logA - b * u) - np.exp(logA - a * u)) / (a - b)
        return k**-1.5 * (gamma32 * u - d)

    def outer(w):
        # u = w^2 removes the integrable u^{-1/2} endpoint singularity
        u = w * w
        return 2.0 * MU_PREFACTOR * np.sqrt(u) * inner(u) * w

    # The angular part of the integrand dies like exp(-rate * u); beyond u_max
    # only the pure duration term survives and its tail integral is exact.
    rate = 2.0 * np.sqrt(H_C * lam) + min(a, b, 0.0)
    if rate <= 0:
        raise RuntimeError("parameters outside the absolutely convergent domain")
    u_max = 40.0 / rate + 20.0
    coef = MU_PREFACTOR * (2.0 * SQRT3) ** 1.5
    val, err = integrate.quad(
        outer, 0.0, np.sqrt(u_max), epsabs=1e-9, epsrel=1e-10, limit=400
    )
    tail = coef * np.sqrt(np.pi) / 2.0 * 2.0 / np.sqrt(u_max)
    # bound on the dropped angular remainder beyond u_max
    dropped = coef * np.sqrt(np.pi) * np.exp(-rate * u_max) * (
        u_max ** -1.5 if same else u_max**-2.5 / abs(a - b)
    )
    if not np.isfinite(val) or err > 2e-7 or dropped > 1e-9:
        raise RuntimeError(f"Hhat quadrature did not converge (err={err:.2e})")
    return val + tail


# -- statistical harness -----------------------------------------------------


def _verdict(p: float, threshold: float) -> str:
    return "pass" if p >= threshold else "fail"


def ks_test(samples, cdf, name="ks", threshold=0.01, metadata=None) -> TestReport:
    samples = np.asarray(samples, dtype=float)
    if samples.size < 30:
        return TestReport(name, float("nan"), None, (samples.size,), threshold, "inconclusive")
    res = stats.kstest(samples, cdf)
    return TestReport(
        name=name,
        statistic=float(res.statistic),
        p_value=float(res.pvalue),
        sample_sizes=(samples.size,),
        tolerance=threshold,
        verdict=_verdict(res.pvalue, threshold),
        metadata=metadata or {},
    )


def two_sample_ks(a, b, name="two_sample_ks", threshold=0.01, metadata=None) -> TestReport:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if min(a.size, b.size) < 30:
        return TestReport(name, float("nan"), None, (a.size, b.size), threshold, "inconclusive")
    if a.size == b.size and np.array_equal(np.sort(a), np.sort(b)):
        return TestReport(name, 0.0, 1.0, (a.size, b.size), threshold, "pass", metadata or {})
    res = stats.ks_2samp(a, b)
    return TestReport(
        name=name,
        statistic=float(res.statistic),
        p_value=float(res.pvalue),
        sample_sizes=(a.size, b.size),
        tolerance=threshold,
        verdict=_verdict(res.pvalue, threshold),
        metadata=metadata or {},
    )


def chi_square_independence(table, name="chi2_indep", threshold=0.01, metadata=None) -> TestReport:
    table = np.asarray(table, dtype=float)
    if table.sum() < 30 or (table.sum(axis=0) == 0).any() or (table.sum(axis=1) == 0).any():
        return TestReport(name, float("nan"), None, (int(table.sum()),), threshold, "inconclusive")
    chi2, p, dof, _ = stats.chi2_contingency(table)
    return TestReport(
        name=name,
        statistic=float(chi2),
        p_value=float(p),
        sample_sizes=(int(table.sum()),),
        tolerance=threshold,
        verdict=_verdict(p, threshold),
        metadata={**(metadata or {}), "dof": int(dof)},
    )
