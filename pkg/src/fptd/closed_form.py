"""Closed-form pieces of the hitting-time law.

``ftilde`` is the (possibly defective) hitting density of level ``z`` for the
drifted Brownian motion m t + W_t, ``bm_defect`` its missing mass and
``ig_cdf`` its distribution function.  ``f_zero`` is the right derivative at
t = 0 of the jump-diffusion hitting CDF.  The remaining functions evaluate
the auxiliary Gaussian identity and the three domination bounds used to
justify the density representation, so that they can be checked on grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, log_ndtr, ndtr

from .errors import DomainError

__all__ = [
    "ftilde",
    "bm_defect",
    "ig_cdf",
    "f_zero",
    "smoothed_ftilde",
    "BoundConstants",
    "ftilde_sharp_bound",
    "ftilde_bound",
    "ftilde_bound_holds",
    "ftilde_sharp_bound_holds",
    "abs_gauss_moment",
    "neg_moment_lhs",
    "neg_moment_rhs",
    "neg_moment_bound_holds",
    "series_term_lhs",
    "series_term_rhs",
    "series_term_bound_holds",
    "series_rhs_ratio",
]

_LOG_2PI = math.log(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Test hook: scales c_eps (mutation check of the bound suite).
_C_EPS_SCALE = 1.0


def _scalar(x, res):
    return float(res) if np.ndim(x) == 0 else res


def ftilde(u, z, m):
    """|z| / sqrt(2 pi u^3) * exp(-(z - m u)^2 / (2u)) for u > 0, else 0.

    Vectorised over ``u`` and ``z``.  Evaluated in log space, so tiny ``u``
    underflows cleanly to 0 rather than producing NaN.
    """
    u_arr = np.asarray(u, dtype=float)
    z_arr = np.asarray(z, dtype=float)
    u_b, z_b = np.broadcast_arrays(u_arr, z_arr)
    out = np.zeros(u_b.shape)
    ok = (u_b > 0) & np.isfinite(u_b) & (z_b != 0)
    if np.any(ok):
        uu = u_b[ok]
        zz = z_b[ok]
        logv = np.log(np.abs(zz)) - 0.5 * (_LOG_2PI + 3.0 * np.log(uu)) - (zz - m * uu) ** 2 / (2.0 * uu)
        out[ok] = np.exp(logv)
    if u_b.ndim == 0:
        return float(out)
    return out


def bm_defect(z, m):
    """P(drifted BM never reaches z) = 1 - exp(m z - |m z|)."""
    if not z > 0:
        raise DomainError("level z must be > 0")
    mz = m * z
    return float(-math.expm1(mz - abs(mz)))


def ig_cdf(t, z, m):
    """P(first hitting time of z by m t + W_t <= t).

    Phi_bar((z - m t)/sqrt t) + exp(2 m z) Phi_bar((z + m t)/sqrt t); the
    second product is formed in log space.  ``t = inf`` returns the total
    (possibly defective) mass.
    """
    if not z > 0:
        raise DomainError("level z must be > 0")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise DomainError("time t must be >= 0")
    out = np.empty(t_arr.shape)
    flat_t = t_arr.reshape(-1)
    flat = out.reshape(-1)
    total = 1.0 - bm_defect(z, m)
    for k, tk in enumerate(flat_t):
        if tk == 0:
            flat[k] = 0.0
        elif math.isinf(tk):
            flat[k] = total
        else:
            s = math.sqrt(tk)
            first = ndtr(-(z - m * tk) / s)
            second = math.exp(2.0 * m * z + log_ndtr(-(z + m * tk) / s))
            flat[k] = min(first + second, 1.0)
    return _scalar(t, out)


def f_zero(x, model):
    """Right derivative at 0 of t -> P(tau_x <= t).

    a/2 (2 - F(x) - F(x-)) + a/4 (F(x) - F(x-)); the second term is the
    contribution of a jump landing exactly on the level.
    """
    if not x > 0:
        raise DomainError("level x must be > 0")
    a = model.a
    F = float(model.jumps.cdf(x))
    F_left = float(model.jumps.cdf_left(x))
    return a / 2.0 * (2.0 - F - F_left) + a / 4.0 * (F - F_left)


def smoothed_ftilde(u, mu, sigma, m):
    """E[ftilde(u, mu + sigma G) 1{mu + sigma G > 0}] for G ~ N(0, 1).

    Uses the Gaussian completion-of-squares identity: the expectation equals
    exp(-(mu - m u)^2 / (2 (sigma^2 + u))) / sqrt(2 pi) times E[(A + B G)_+]
    with A = (mu + sigma^2 m) / (sigma^2 + u)^{3/2} and
    B = sigma / (sqrt(u) (sigma^2 + u)), and E[(A + B G)_+] is
    A Phi(A/B) + B phi(A/B).
    """
    if not u > 0:
        raise DomainError("u must be > 0")
    if not sigma >= 0:
        raise DomainError("sigma must be >= 0")
    s2u = sigma * sigma + u
    A = (mu + sigma * sigma * m) / s2u**1.5
    B = sigma / (math.sqrt(u) * s2u)
    log_pref = -((mu - m * u) ** 2) / (2.0 * s2u)
    if B == 0:
        pos = max(A, 0.0)
        return _INV_SQRT_2PI * math.exp(log_pref) * pos if pos > 0 else 0.0
    r = A / B
    # A Phi(r) + B phi(r) = B (r Phi(r) + phi(r)); stable for r << 0 via the Mills ratio
    if r > -30:
        pos = B * (r * ndtr(r) + _INV_SQRT_2PI * math.exp(-0.5 * r * r))
        return _INV_SQRT_2PI * math.exp(log_pref) * pos
    # r Phi(r) + phi(r) ~ phi(r) / r^2 (1 - 3/r^2 + 15/r^4)
    tail = math.exp(-0.5 * r * r + log_pref) * _INV_SQRT_2PI / (r * r) * (1 - 3 / r**2 + 15 / r**4)
    return _INV_SQRT_2PI * B * tail


@dataclass(frozen=True)
class BoundConstants:
    """Explicit constants of the ftilde domination bound.

    With k = 1/2 + eps, ``c_eps = (k/e)^k = sup_{x>=0} x^k e^{-x}`` and
    ``c_tilde = M^k 2^eps c_eps / sqrt(pi)`` gives the sharp bound
    ftilde(u, z) <= c_tilde u^{-1+eps} |z|^{-2 eps} e^{m z / M}.  Splitting
    the product with x1 x2 <= (x1^2 + x2^2)/2 yields
    ``c_eps_M = c_tilde / 2`` in front of |z|^{-4 eps} + e^{2 m z / M}.
    """

    eps: float
    M: float

    def __post_init__(self):
        if not 0 < self.eps < 0.25:
            raise DomainError("eps must lie in (0, 1/4)")
        if not self.M >= 1:
            raise DomainError("M must be >= 1")

    @property
    def c_eps(self) -> float:
        k = 0.5 + self.eps
        return _C_EPS_SCALE * (k / math.e) ** k

    @property
    def c_tilde(self) -> float:
        k = 0.5 + self.eps
        return self.M**k * 2.0**self.eps * self.c_eps / math.sqrt(math.pi)

    @property
    def c_eps_M(self) -> float:
        return 0.5 * self.c_tilde


def _check_uz(u, z):
    if not u > 0:
        raise DomainError("u must be > 0")
    if z == 0:
        raise DomainError("z must be nonzero")


def ftilde_sharp_bound(u, z, m, bc: BoundConstants) -> float:
    _check_uz(u, z)
    return bc.c_tilde * u ** (-1.0 + bc.eps) * abs(z) ** (-2.0 * bc.eps) * math.exp(m * z / bc.M)


def ftilde_bound(u, z, m, bc: BoundConstants) -> float:
    _check_uz(u, z)
    return bc.c_eps_M * u ** (-1.0 + bc.eps) * (abs(z) ** (-4.0 * bc.eps) + math.exp(2.0 * m * z / bc.M))


def ftilde_sharp_bound_holds(u, z, m, bc: BoundConstants) -> bool:
    return ftilde(u, z, m) <= ftilde_sharp_bound(u, z, m, bc)


def ftilde_bound_holds(u, z, m, bc: BoundConstants) -> bool:
    """ftilde(u, z) <= c_{eps,M} u^{-1+eps} (|z|^{-4 eps} + exp(2 m z / M))."""
    return ftilde(u, z, m) <= ftilde_bound(u, z, m, bc)


def abs_gauss_moment(p: float) -> float:
    """E|G|^p = 2^{p/2} Gamma((p+1)/2) / sqrt(pi), p > -1."""
    return math.exp(0.5 * p * math.log(2.0) + gammaln(0.5 * (p + 1.0)) - 0.5 * math.log(math.pi))


def _check_neg_moment(sigma, alpha):
    if not sigma > 0:
        raise DomainError("sigma must be > 0")
    if not 0 < alpha < 1:
        raise DomainError("alpha must lie in (0, 1)")


def neg_moment_lhs(mu, sigma, alpha):
    """E|mu + sigma G|^{-alpha} by adaptive quadrature.

    Returns ``(value, abserr)``.  In the variable y = |mu + sigma g| the
    singularity sits at y = 0 and is handled by an algebraic weight.
    """
    _check_neg_moment(sigma, alpha)

    def dens(y):
        return (math.exp(-0.5 * ((y - mu) / sigma) ** 2) + math.exp(-0.5 * ((y + mu) / sigma) ** 2)) * (
            _INV_SQRT_2PI / sigma
        )

    upper = abs(mu) + 40.0 * sigma
    # split where the density peaks so the weighted rule sees a smooth factor
    pieces = [0.0, upper] if abs(mu) < sigma else [0.0, abs(mu), upper]
    val, err = integrate.quad(dens, pieces[0], pieces[1], weight="alg", wvar=(-alpha, 0.0),
                              epsabs=1e-13, epsrel=1e-12, limit=200)
    if len(pieces) == 3:
        v2, e2 = integrate.quad(lambda y: dens(y) * y ** (-alpha), pieces[1], pieces[2],
                                epsabs=1e-13, epsrel=1e-12, limit=200, points=[abs(mu)])
        val += v2
        err += e2
    return val, err


def neg_moment_rhs(mu, sigma, alpha):
    """k1/sigma |mu|^{1-alpha} + k2 sigma^{-alpha} with the constants of the proof.

    k1 = E|G| / (1 - alpha) = sqrt(2/pi) / (1 - alpha) and
    k2 = E|G|^{2-alpha} / (1 - alpha).
    """
    _check_neg_moment(sigma, alpha)
    k1 = math.sqrt(2.0 / math.pi) / (1.0 - alpha)
    k2 = abs_gauss_moment(2.0 - alpha) / (1.0 - alpha)
    return k1 / sigma * abs(mu) ** (1.0 - alpha) + k2 * sigma ** (-alpha)


def neg_moment_bound_holds(mu, sigma, alpha, rtol=1e-10) -> bool:
    """LHS <= RHS up to the quadrature error.

    At mu = 0 the bound is attained exactly (Gaussian integration by parts),
    so the comparison must allow for the quadrature error.
    """
    lhs, err = neg_moment_lhs(mu, sigma, alpha)
    rhs = neg_moment_rhs(mu, sigma, alpha)
    return lhs - err <= rhs * (1.0 + rtol)


def _check_series(a, t, i, alpha, gamma):
    if not a > 0:
        raise DomainError("a must be > 0")
    if not t > 0:
        raise DomainError("t must be > 0")
    if int(i) != i or i < 1:
        raise DomainError("i must be a positive integer")
    if not alpha > -1:
        raise DomainError("alpha must be > -1")
    if not gamma > -1:
        raise DomainError("gamma must be > -1")


def series_term_lhs(a, t, i, alpha, gamma):
    """E[1{t > T_i} (t - T_i)^alpha T_i^gamma] with T_i ~ Gamma(i, a)."""
    _check_series(a, t, i, alpha, gamma)
    log_coef = i * math.log(a) - gammaln(i)
    val, _ = integrate.quad(lambda v: math.exp(-a * v), 0.0, t, weight="alg",
                            wvar=(gamma + i - 1.0, alpha), epsabs=0.0, epsrel=1e-12, limit=200)
    return math.exp(log_coef) * val


def series_term_rhs(a, t, i, alpha, gamma):
    """a^i/(i-1)! t^{gamma+i+alpha} Gamma(gamma+i) Gamma(alpha+1) / Gamma(gamma+i+alpha+1)."""
    _check_series(a, t, i, alpha, gamma)
    return math.exp(
        i * math.log(a)
        - gammaln(i)
        + (gamma + i + alpha) * math.log(t)
        + gammaln(gamma + i)
        + gammaln(alpha + 1.0)
        - gammaln(gamma + i + alpha + 1.0)
    )


def series_term_bound_holds(a, t, i, alpha, gamma, rtol=1e-10) -> bool:
    return series_term_lhs(a, t, i, alpha, gamma) <= series_term_rhs(a, t, i, alpha, gamma) * (1.0 + rtol)


def series_rhs_ratio(a, t, i, alpha, gamma):
    """RHS(i+1) / RHS(i) = a t (gamma+i) / (i (gamma+i+alpha+1)); tends to 0."""
    _check_series(a, t, i, alpha, gamma)
    return a * t * (gamma + i) / (i * (gamma + i + alpha + 1.0))
