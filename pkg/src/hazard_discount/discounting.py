"""Hazard priors, survival functions, discount functions and weighting densities.

A hazard prior ``p(lambda)`` over the per-episode hazard rate implies a survival
curve ``s(t) = E[exp(-lambda * t)]`` (the Laplace transform of the prior), and
that survival curve is the discount function an agent holding the prior should
use.  Changing variables to ``gamma = exp(-lambda)`` turns the same integral
into a mixture of exponential discounts ``d(t) = int_0^1 w(gamma) gamma^t``,
which is what lets per-gamma Q-values be combined into a non-exponential one.

Three priors are supported:

============  ===========================  ======================  ==========================
kind          density p(lambda)            discount d(t)           weight w(gamma)
============  ===========================  ======================  ==========================
delta         point mass at k              exp(-k t)               point mass at exp(-k)
exponential   (1/k) exp(-lambda / k)       1 / (1 + k t)           (1/k) gamma^(1/k - 1)
uniform       1/k on [0, k]                (1 - exp(-k t)) / (k t) 1/(k gamma) on [exp(-k), 1]
============  ===========================  ======================  ==========================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import DiscountRangeError, DomainError, NumericError

PRIOR_KINDS = ("delta", "exponential", "uniform")
DISCOUNT_KINDS = ("exponential", "hyperbolic", "uniform_hazard", "tabulated")

# Laplace-transform quadrature settings.
QUAD_EPSABS = 1e-9
QUAD_EPSREL = 1e-10
QUAD_LIMITS = (50, 200, 1000)
TAIL_CUTOFF = 1e-15


@dataclass(frozen=True)
class HazardPrior:
    """Distribution over the per-episode hazard rate.

    ``k`` is the location of a delta prior, the mean of an exponential prior
    and the upper bound of a uniform prior.
    """

    kind: str
    k: float

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise DomainError(f"unknown hazard prior kind {self.kind!r}; expected one of {PRIOR_KINDS}")
        k = float(self.k)
        if not math.isfinite(k) or k < 0:
            raise DomainError(f"hazard prior parameter must be finite and >= 0, got k={self.k!r}")
        if self.kind in ("exponential", "uniform") and k == 0:
            raise DomainError(f"{self.kind} prior needs k > 0 (density 1/k), got k=0")
        object.__setattr__(self, "k", k)

    @classmethod
    def delta(cls, k):
        return cls("delta", k)

    @classmethod
    def exponential(cls, k):
        return cls("exponential", k)

    @classmethod
    def uniform(cls, k):
        return cls("uniform", k)

    @property
    def mean(self) -> float:
        return self.k / 2 if self.kind == "uniform" else self.k

    def density(self, lam):
        """Prior density at ``lam``; undefined (raises) for the delta kind."""
        if self.kind == "delta":
            raise DomainError("a delta prior has no finite density")
        lam = np.asarray(lam, dtype=float)
        if self.kind == "exponential":
            out = np.where(lam >= 0, np.exp(-lam / self.k) / self.k, 0.0)
        else:
            out = np.where((lam >= 0) & (lam <= self.k), 1.0 / self.k, 0.0)
        return out if out.ndim else float(out)

    def support(self) -> tuple[float, float]:
        if self.kind == "delta":
            return (self.k, self.k)
        if self.kind == "uniform":
            return (0.0, self.k)
        return (0.0, math.inf)

    def discount_spec(self) -> "DiscountSpec":
        """Discount function implied by this prior."""
        if self.kind == "delta":
            return DiscountSpec.exponential(hazard_to_gamma(self.k))
        if self.kind == "exponential":
            return DiscountSpec.hyperbolic(self.k)
        return DiscountSpec.uniform_hazard(self.k)


@dataclass(frozen=True)
class DiscountSpec:
    """A discount function ``d(t)`` with ``d(0) = 1``.

    Use the class constructors rather than the raw fields:
    ``DiscountSpec.exponential(gamma)``, ``.hyperbolic(k)``,
    ``.uniform_hazard(k)`` or ``.tabulated(values)``.
    """

    kind: str
    param: float | None = None
    values: tuple[float, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in DISCOUNT_KINDS:
            raise DomainError(f"unknown discount kind {self.kind!r}; expected one of {DISCOUNT_KINDS}")
        if self.kind == "tabulated":
            if not self.values:
                raise DomainError("tabulated discount needs at least d(0)")
            vals = np.asarray(self.values, dtype=float)
            if vals[0] != 1.0:
                raise DomainError(f"tabulated discount must have d(0) = 1, got {vals[0]!r}")
            if np.any(vals <= 0) or np.any(vals > 1) or np.any(np.diff(vals) > 0):
                raise DomainError("tabulated discount must be nonincreasing with values in (0, 1]")
            object.__setattr__(self, "values", tuple(float(v) for v in vals))
            return
        p = float(self.param)
        if self.kind == "exponential":
            if not 0 < p <= 1:
                raise DomainError(f"exponential discount needs gamma in (0, 1], got {p!r}")
        elif not (math.isfinite(p) and p >= 0):
            raise DomainError(f"{self.kind} discount needs k >= 0, got {p!r}")
        object.__setattr__(self, "param", p)

    @classmethod
    def exponential(cls, gamma):
        return cls("exponential", gamma)

    @classmethod
    def hyperbolic(cls, k):
        return cls("hyperbolic", k)

    @classmethod
    def uniform_hazard(cls, k):
        return cls("uniform_hazard", k)

    @classmethod
    def tabulated(cls, values):
        """Discount given by a table; ``values`` is a sequence ``d(0), d(1), ...``
        or a mapping ``t -> d(t)`` over a contiguous range starting at 0."""
        if isinstance(values, dict):
            n = len(values)
            if sorted(values) != list(range(n)):
                raise DomainError("tabulated discount keys must be 0..T without gaps")
            values = [values[t] for t in range(n)]
        return cls("tabulated", None, tuple(values))

    def __call__(self, t):
        return discount_value(self, t)


def discount_value(spec: DiscountSpec, t):
    """Evaluate ``d(t)`` in closed form.

    ``t`` may be a scalar or an array of nonnegative times; integer times are
    used on the agent side and real times in the continuous derivations.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"discount needs finite t >= 0, got {t!r}")
    kind = spec.kind
    if kind == "exponential":
        out = np.power(spec.param, t_arr)
    elif kind == "hyperbolic":
        out = 1.0 / (1.0 + spec.param * t_arr)
    elif kind == "uniform_hazard":
        x = spec.param * t_arr
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0)
    else:
        table = np.asarray(spec.values)
        idx = t_arr.astype(int)
        if np.any(idx != t_arr) or np.any(idx >= len(table)):
            raise DiscountRangeError(f"t={t!r} outside tabulated range 0..{len(table) - 1}")
        out = table[idx]
    return out if out.ndim else float(out)


def hazard_to_gamma(lam):
    """Per-step continuation probability ``exp(-lambda)``; ``inf`` maps to 0."""
    lam_arr = np.asarray(lam, dtype=float)
    if np.any(lam_arr < 0):
        raise DomainError(f"hazard must be >= 0, got {lam!r}")
    out = np.exp(-lam_arr)
    return out if out.ndim else float(out)


def gamma_to_hazard(gamma):
    """Inverse of :func:`hazard_to_gamma`: ``-ln(gamma)``; 0 maps to ``inf``."""
    g = np.asarray(gamma, dtype=float)
    if np.any(g < 0) or np.any(g > 1):
        raise DomainError(f"gamma must lie in [0, 1], got {gamma!r}")
    with np.errstate(divide="ignore"):
        out = -np.log(g)
    out = out + 0.0  # turn -0.0 into 0.0
    return out if out.ndim else float(out)


def _laplace_point(prior: HazardPrior, t: float) -> float:
    if prior.kind == "exponential":
        rate = 1.0 / prior.k + t
        # integrand (1/k) exp(-rate * lam) drops below TAIL_CUTOFF past lam_max
        lam_max = max(math.log(1.0 / (prior.k * TAIL_CUTOFF)) / rate, 0.0)
    else:
        lam_max = prior.k
    f = lambda lam: float(prior.density(lam)) * math.exp(-lam * t)  # noqa: E731
    err = math.inf
    for limit in QUAD_LIMITS:
        value, err, *rest = integrate.quad(
            f, 0.0, lam_max, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=limit, full_output=1
        )
        if len(rest) < 2 and err <= QUAD_EPSABS:
            return value
    raise NumericError(
        f"Laplace transform of {prior} at t={t} did not converge (abs error {err:.3g})",
        achieved_tolerance=err,
    )


def survival_from_prior(prior: HazardPrior, t):
    """Survival ``s(t) = int p(lambda) exp(-lambda t) dlambda`` by adaptive quadrature.

    The delta prior is evaluated symbolically as ``exp(-k t)``.

    Raises
    ------
    NumericError
        If quadrature does not reach the absolute tolerance after the largest
        subdivision limit; ``achieved_tolerance`` carries the estimate.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or not np.all(np.isfinite(t_arr)):
        raise DomainError(f"survival needs finite t >= 0, got {t!r}")
    if prior.kind == "delta":
        out = np.exp(-prior.k * t_arr)
    else:
        out = np.array([_laplace_point(prior, float(x)) for x in t_arr.ravel()]).reshape(t_arr.shape)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class DeltaMass:
    """Symbolic point mass of the weighting function at ``location``."""

    location: float


@dataclass(frozen=True)
class WeightDensity:
    """Weighting ``w(gamma)`` satisfying ``d(t) = int_0^1 w(gamma) gamma^t dgamma``."""

    prior: HazardPrior

    @property
    def is_point_mass(self) -> bool:
        return self.prior.kind == "delta"

    def support(self) -> tuple[float, float]:
        if self.prior.kind == "exponential":
            return (0.0, 1.0)
        lo = hazard_to_gamma(self.prior.k)
        return (lo, 1.0) if self.prior.kind == "uniform" else (lo, lo)

    def __call__(self, gamma):
        g = np.asarray(gamma, dtype=float)
        if np.any(g < 0) or np.any(g > 1) or np.any(np.isnan(g)):
            raise DomainError(f"weight density is defined on gamma in [0, 1], got {gamma!r}")
        k = self.prior.k
        if self.prior.kind == "delta":
            return DeltaMass(hazard_to_gamma(k))
        if self.prior.kind == "exponential":
            with np.errstate(divide="ignore"):
                out = np.power(g, 1.0 / k - 1.0) / k
        else:
            lo = math.exp(-k)
            with np.errstate(divide="ignore"):
                out = np.where(g >= lo, 1.0 / (k * np.where(g > 0, g, 1.0)), 0.0)
        return out if out.ndim else float(out)


def weight_density(prior: HazardPrior, gamma):
    """Evaluate ``w(gamma)`` for ``prior``; a delta prior returns a :class:`DeltaMass`."""
    return WeightDensity(prior)(gamma)
