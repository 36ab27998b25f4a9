"""Jump-diffusion model X_t = m t + W_t + sum_{i <= N_t} Y_i and its jump laws.

Each jump law exposes the right-continuous CDF, its left limit, the atom
mass, the mean, an inverse-transform sampler driven by uniforms and the
exponential-moment parameter beta for which E exp(beta |Y|) < infinity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidParameter

__all__ = [
    "JumpDistribution",
    "PointMass",
    "Exponential",
    "DoubleExponential",
    "Gaussian",
    "FiniteMixture",
    "JumpDiffusionModel",
    "ValidationReport",
    "validate_model",
    "jump_cdf",
    "jump_cdf_left",
    "jump_atom",
    "sample_jump",
    "jump_from_dict",
    "model_from_dict",
]


def _out(y, res):
    return float(res) if np.ndim(y) == 0 else res


class JumpDistribution:
    """Law of a single jump size Y_1."""

    kind: str = ""

    def cdf(self, y):
        raise NotImplementedError

    def cdf_left(self, y):
        raise NotImplementedError

    def atom(self, y):
        return _out(y, np.asarray(self.cdf(y)) - np.asarray(self.cdf_left(y)))

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def second_moment(self) -> float:
        raise NotImplementedError

    @property
    def exp_moment_sup(self) -> float:
        """Supremum of the beta with E exp(beta |Y|) finite (may be excluded)."""
        return math.inf

    @property
    def exp_moment_beta(self) -> float:
        """An admissible beta; ``math.inf`` when every beta is admissible."""
        s = self.exp_moment_sup
        return s if math.isinf(s) else 0.5 * s

    @property
    def support_max(self) -> float:
        """Essential supremum of Y (used for the spectral-negativity check)."""
        raise NotImplementedError

    def from_uniforms(self, u, v=None):
        """Inverse-transform sample.  ``v`` is only consumed by mixtures."""
        raise NotImplementedError

    def sample(self, rng, size=None):
        n = 1 if size is None else int(size)
        u = np.atleast_1d(rng.random(n))
        v = np.atleast_1d(rng.random(n)) if isinstance(self, FiniteMixture) else None
        y = self.from_uniforms(u, v)
        return float(y[0]) if size is None else y

    def check(self) -> None:
        pass

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(JumpDistribution):
    c: float
    kind = "point_mass"

    def cdf(self, y):
        return _out(y, np.where(np.asarray(y, dtype=float) >= self.c, 1.0, 0.0))

    def cdf_left(self, y):
        return _out(y, np.where(np.asarray(y, dtype=float) > self.c, 1.0, 0.0))

    @property
    def mean(self):
        return float(self.c)

    @property
    def second_moment(self):
        return float(self.c) ** 2

    @property
    def support_max(self):
        return float(self.c)

    def from_uniforms(self, u, v=None):
        return np.full(np.shape(u), float(self.c))

    def check(self):
        if not math.isfinite(self.c):
            raise InvalidParameter("c", "must be finite")

    def to_dict(self):
        return {"type": self.kind, "c": self.c}


@dataclass(frozen=True)
class Exponential(JumpDistribution):
    """Y = sign * E with E ~ Exp(rate)."""

    rate: float
    sign: str = "+"
    kind = "exponential"

    @property
    def _positive(self):
        return self.sign == "+"

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        lam = self.rate
        with np.errstate(over="ignore"):
            if self._positive:
                res = np.where(y >= 0, -np.expm1(-lam * np.maximum(y, 0.0)), 0.0)
            else:
                res = np.where(y >= 0, 1.0, np.exp(lam * np.minimum(y, 0.0)))
        return _out(y, res)

    def cdf_left(self, y):
        return self.cdf(y)

    def atom(self, y):
        return _out(y, np.zeros(np.shape(y)))

    @property
    def mean(self):
        return (1.0 if self._positive else -1.0) / self.rate

    @property
    def second_moment(self):
        return 2.0 / self.rate**2

    @property
    def exp_moment_sup(self):
        return float(self.rate)

    @property
    def support_max(self):
        return math.inf if self._positive else 0.0

    def from_uniforms(self, u, v=None):
        u = np.asarray(u, dtype=float)
        if self._positive:
            return -np.log1p(-u) / self.rate
        return np.log(u) / self.rate

    def check(self):
        if not self.rate > 0:
            raise InvalidParameter("rate", "must be > 0")
        if self.sign not in ("+", "-"):
            raise InvalidParameter("sign", "must be '+' or '-'")

    def to_dict(self):
        return {"type": self.kind, "rate": self.rate, "sign": self.sign}


@dataclass(frozen=True)
class DoubleExponential(JumpDistribution):
    """Kou law: Exp(eta1) upward with probability p, else -Exp(eta2)."""

    p: float
    eta1: float
    eta2: float
    kind = "double_exponential"

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        p = self.p
        with np.errstate(over="ignore"):
            neg = (1.0 - p) * np.exp(self.eta2 * np.minimum(y, 0.0))
            pos = (1.0 - p) - p * np.expm1(-self.eta1 * np.maximum(y, 0.0))
        return _out(y, np.where(y >= 0, pos, neg))

    def cdf_left(self, y):
        return self.cdf(y)

    def atom(self, y):
        return _out(y, np.zeros(np.shape(y)))

    @property
    def mean(self):
        return self.p / self.eta1 - (1.0 - self.p) / self.eta2

    @property
    def second_moment(self):
        return 2.0 * self.p / self.eta1**2 + 2.0 * (1.0 - self.p) / self.eta2**2

    @property
    def exp_moment_sup(self):
        rates = []
        if self.p > 0:
            rates.append(self.eta1)
        if self.p < 1:
            rates.append(self.eta2)
        return float(min(rates))

    @property
    def support_max(self):
        return math.inf if self.p > 0 else 0.0

    def from_uniforms(self, u, v=None):
        u = np.asarray(u, dtype=float)
        q = 1.0 - self.p
        with np.errstate(divide="ignore", invalid="ignore"):
            down = np.log(u / q) / self.eta2
            up = -np.log1p(-(u - q) / self.p) / self.eta1
        return np.where(u < q, down, up)

    def check(self):
        if not 0.0 <= self.p <= 1.0:
            raise InvalidParameter("p", "must lie in [0, 1]")
        if not self.eta1 > 0:
            raise InvalidParameter("eta1", "must be > 0")
        if not self.eta2 > 0:
            raise InvalidParameter("eta2", "must be > 0")

    def to_dict(self):
        return {"type": self.kind, "p": self.p, "eta1": self.eta1, "eta2": self.eta2}


@dataclass(frozen=True)
class Gaussian(JumpDistribution):
    mu: float
    sigma: float
    kind = "gaussian"

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        if self.sigma == 0:
            return _out(y, np.where(y >= self.mu, 1.0, 0.0))
        return _out(y, ndtr((y - self.mu) / self.sigma))

    def cdf_left(self, y):
        y = np.asarray(y, dtype=float)
        if self.sigma == 0:
            return _out(y, np.where(y > self.mu, 1.0, 0.0))
        return self.cdf(y)

    @property
    def mean(self):
        return float(self.mu)

    @property
    def second_moment(self):
        return self.mu**2 + self.sigma**2

    @property
    def support_max(self):
        return float(self.mu) if self.sigma == 0 else math.inf

    def from_uniforms(self, u, v=None):
        return self.mu + self.sigma * ndtri(np.asarray(u, dtype=float))

    def check(self):
        if not self.sigma >= 0:
            raise InvalidParameter("sigma", "must be >= 0")
        if not math.isfinite(self.mu):
            raise InvalidParameter("mu", "must be finite")

    def to_dict(self):
        return {"type": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class FiniteMixture(JumpDistribution):
    """Mixture of non-mixture components.

    Sampling uses the first uniform to pick a component and the second one
    inside the component.
    """

    weights: tuple
    components: tuple
    kind = "finite_mixture"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "components", tuple(self.components))

    def _combine(self, y, fn):
        y = np.asarray(y, dtype=float)
        res = sum(w * np.asarray(fn(c, y)) for w, c in zip(self.weights, self.components))
        return _out(y, res)

    def cdf(self, y):
        return self._combine(y, lambda c, v: c.cdf(v))

    def cdf_left(self, y):
        return self._combine(y, lambda c, v: c.cdf_left(v))

    def atom(self, y):
        return self._combine(y, lambda c, v: c.atom(v))

    @property
    def mean(self):
        return float(sum(w * c.mean for w, c in zip(self.weights, self.components)))

    @property
    def second_moment(self):
        return float(sum(w * c.second_moment for w, c in zip(self.weights, self.components)))

    @property
    def exp_moment_sup(self):
        return min(c.exp_moment_sup for w, c in zip(self.weights, self.components) if w > 0)

    @property
    def support_max(self):
        return max(c.support_max for w, c in zip(self.weights, self.components) if w > 0)

    def from_uniforms(self, u, v=None):
        u = np.asarray(u, dtype=float)
        cum = np.cumsum(self.weights)
        cum[-1] = 1.0
        pick = np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)
        draws = np.stack([c.from_uniforms(v) for c in self.components])
        return np.take_along_axis(draws, pick[None, ...], axis=0)[0]

    def check(self):
        if len(self.weights) != len(self.components) or not self.components:
            raise InvalidParameter("weights", "need one weight per component")
        if any(w < 0 for w in self.weights):
            raise InvalidParameter("weights", "must be nonnegative")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise InvalidParameter("weights", "must sum to 1 within 1e-12")
        for c in self.components:
            if isinstance(c, FiniteMixture):
                raise InvalidParameter("components", "nested mixtures are not supported")
            c.check()

    def to_dict(self):
        return {
            "type": self.kind,
            "weights": list(self.weights),
            "components": [c.to_dict() for c in self.components],
        }


@dataclass(frozen=True)
class JumpDiffusionModel:
    """Drift ``m``, Poisson intensity ``a`` and jump law ``jumps``."""

    m: float
    a: float
    jumps: JumpDistribution = field(default_factory=lambda: PointMass(0.0))

    def drift_index(self) -> float:
        """m + a E(Y_1); the hitting time is a.s. finite iff this is >= 0."""
        return self.m + self.a * self.jumps.mean

    def to_dict(self) -> dict:
        return {"m": self.m, "a": self.a, "jumps": self.jumps.to_dict()}


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    a: float
    drift_index: float
    beta: float
    beta_sup: float
    spectrally_negative: bool

    @property
    def valid(self) -> bool:
        return True


def validate_model(model: JumpDiffusionModel) -> ValidationReport:
    """Check parameter ranges; raise :class:`InvalidParameter` on violation."""
    if not math.isfinite(model.m):
        raise InvalidParameter("m", "must be finite")
    if not (model.a >= 0 and math.isfinite(model.a)):
        raise InvalidParameter("a", "must be finite and >= 0")
    if not isinstance(model.jumps, JumpDistribution):
        raise InvalidParameter("jumps", "not a jump distribution")
    model.jumps.check()
    return ValidationReport(
        kind=model.jumps.kind,
        a=model.a,
        drift_index=model.drift_index(),
        beta=model.jumps.exp_moment_beta,
        beta_sup=model.jumps.exp_moment_sup,
        spectrally_negative=model.jumps.support_max <= 0,
    )


def jump_cdf(dist: JumpDistribution, y):
    return dist.cdf(y)


def jump_cdf_left(dist: JumpDistribution, y):
    return dist.cdf_left(y)


def jump_atom(dist: JumpDistribution, y):
    return dist.atom(y)


def sample_jump(dist: JumpDistribution, rng, size=None):
    return dist.sample(rng, size)


_KINDS = {
    "point_mass": (PointMass, ("c",)),
    "exponential": (Exponential, ("rate", "sign")),
    "double_exponential": (DoubleExponential, ("p", "eta1", "eta2")),
    "gaussian": (Gaussian, ("mu", "sigma")),
}


def _number(d, name, where):
    try:
        v = d[name]
    except KeyError:
        raise InvalidParameter(name, f"missing from {where}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InvalidParameter(name, "must be a number")
    return float(v)


def jump_from_dict(d: dict) -> JumpDistribution:
    if not isinstance(d, dict) or "type" not in d:
        raise InvalidParameter("jumps", "expected an object with a 'type' field")
    kind = d["type"]
    if kind == "finite_mixture":
        comps = d.get("components")
        weights = d.get("weights")
        if not isinstance(comps, list) or not isinstance(weights, list):
            raise InvalidParameter("components", "mixture needs 'weights' and 'components' lists")
        dist = FiniteMixture(tuple(_number({"w": w}, "w", "weights") for w in weights),
                             tuple(jump_from_dict(c) for c in comps))
    elif kind in _KINDS:
        cls, names = _KINDS[kind]
        kwargs = {}
        for name in names:
            if name == "sign":
                sign = d.get("sign", "+")
                if sign not in ("+", "-"):
                    raise InvalidParameter("sign", "must be '+' or '-'")
                kwargs[name] = sign
            else:
                kwargs[name] = _number(d, name, kind)
        dist = cls(**kwargs)
    else:
        raise InvalidParameter("type", f"unknown jump kind {kind!r}")
    dist.check()
    return dist


def model_from_dict(d: dict) -> JumpDiffusionModel:
    """Build a model from ``{"m": .., "a": .., "jumps": {"type": .., ...}}``."""
    if not isinstance(d, dict):
        raise InvalidParameter("model", "expected a JSON object")
    m = _number(d, "m", "model")
    a = _number(d, "a", "model")
    jumps = jump_from_dict(d["jumps"]) if "jumps" in d else PointMass(0.0)
    model = JumpDiffusionModel(m, a, jumps)
    validate_model(model)
    return model
