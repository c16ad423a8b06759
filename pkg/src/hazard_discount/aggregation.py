"""Combining per-gamma exponential values into a non-exponential value.

If ``d(t) = int_0^1 w(gamma) gamma^t dgamma`` then the Q-value under ``d`` is
the same mixture of exponentially discounted Q-values.  With values known only
on a finite set of nodes the integral becomes a Riemann sum
``sum_i c_i Q^{gamma_i}``.

Two integrands are available for the exponential (hyperbolic) prior:

``"power"``
    Substitute ``x = gamma**(1/k)`` so that ``1/(1+kt) = int_0^1 x^(kt) dx``;
    the weight is folded into the node spacing, ``c_i = x_{i+1} - x_i``.
    The integrand is smooth near 1, and this is the default.
``"weighted"``
    Integrate ``w(gamma) gamma^t`` directly, ``c_i = (gamma_{i+1} - gamma_i)
    w(gamma_i)``.  For small ``k``, ``w`` is sharply peaked at 1 and the sum
    converges more slowly.  This is the only form for the uniform prior.

Both use left endpoints by default, which gives a lower bound whenever the
integrand is nondecreasing in gamma.  ``rule="midpoint"`` moves the nodes to
interval midpoints, so the Q-values must be available there.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .discounting import HazardPrior, discount_value, hazard_to_gamma, weight_density
from .errors import ConfigurationError, DomainError, ShapeError, SnapWarning
from .ladder import GammaLadder

FORMS = ("power", "weighted")
RULES = ("left", "midpoint")


@dataclass(frozen=True, eq=False)
class AggregationWeights:
    """Riemann-sum coefficients for a ladder and prior.

    ``nodes[j]`` is the discount factor whose Q-value multiplies
    ``coefficients[j]``.  For the left rule the nodes are the ladder points
    themselves (the top rung gets a zero coefficient); for the midpoint rule
    they are the interval midpoints.
    """

    ladder: GammaLadder
    prior: HazardPrior
    nodes: np.ndarray
    coefficients: np.ndarray
    form: str
    rule: str

    def __len__(self):
        return len(self.coefficients)

    @property
    def total_mass(self) -> float:
        return float(self.coefficients.sum())


def default_form(prior: HazardPrior) -> str:
    return "power" if prior.kind == "exponential" else "weighted"


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


def riemann_weights(ladder: GammaLadder, prior: HazardPrior, form=None, rule="left") -> AggregationWeights:
    """Coefficients turning per-gamma values on ``ladder`` into values under ``prior``.

    A delta prior is a single exponential discount: the result is one-hot on
    the ladder point nearest ``exp(-k)``, with a :class:`SnapWarning` when that
    point is farther away than the neighbouring gap.

    Raises
    ------
    ConfigurationError
        If a uniform prior's support ``[exp(-k), 1]`` lies entirely above
        ``gamma_max``, or the ``power`` form is requested for a non-exponential
        prior.
    """
    form = default_form(prior) if form is None else form
    if form not in FORMS:
        raise DomainError(f"unknown form {form!r}; expected one of {FORMS}")
    if rule not in RULES:
        raise DomainError(f"unknown rule {rule!r}; expected one of {RULES}")
    g = np.asarray(ladder.gammas, dtype=float)

    if prior.kind == "delta":
        target = hazard_to_gamma(prior.k)
        j = int(np.argmin(np.abs(g - target)))
        dist = abs(g[j] - target)
        neighbours = [abs(g[j] - g[i]) for i in (j - 1, j + 1) if 0 <= i < len(g)]
        if dist > 1e-12 and dist > min(neighbours):
            warnings.warn(
                f"delta prior at gamma={target:.6g} snapped to ladder node {g[j]:.6g}, "
                f"farther than the local gap {min(neighbours):.3g}",
                SnapWarning,
                stacklevel=2,
            )
        c = np.zeros_like(g)
        c[j] = 1.0
        return AggregationWeights(ladder, prior, _frozen(g), _frozen(c), form, "left")

    if form == "power" and prior.kind != "exponential":
        raise ConfigurationError(f"the power form is only defined for the exponential prior, got {prior.kind}")
    if prior.kind == "uniform" and math.exp(-prior.k) > ladder.gamma_max:
        raise ConfigurationError(
            f"uniform prior support starts at exp(-k)={math.exp(-prior.k):.6g}, "
            f"above gamma_max={ladder.gamma_max!r}: no overlap with the ladder"
        )

    if form == "power":
        x = np.power(g, 1.0 / prior.k)
        dx = np.diff(x)
        if rule == "left":
            nodes, c = g, np.append(dx, 0.0)
        else:
            nodes, c = np.power(0.5 * (x[:-1] + x[1:]), prior.k), dx
    else:
        dg = np.diff(g)
        if rule == "left":
            w_left = weight_density(prior, g[:-1])
            if prior.kind == "exponential" and not np.isfinite(w_left[0]):
                # k > 1: w(0) is infinite but integrable; use the exact mass of [0, gamma_1]
                w_left = w_left.copy()
                w_left[0] = g[1] ** (1.0 / prior.k) / dg[0]
            nodes, c = g, np.append(dg * w_left, 0.0)
        else:
            nodes = 0.5 * (g[:-1] + g[1:])
            c = dg * weight_density(prior, nodes)
    return AggregationWeights(ladder, prior, _frozen(nodes), _frozen(c), form, rule)


def aggregate(q_per_gamma, weights: AggregationWeights):
    """Weighted sum ``sum_j c_j q_j`` over the last axis of ``q_per_gamma``.

    Leading axes are kept, so a ``(states, actions, nodes)`` table aggregates
    to ``(states, actions)``.
    """
    q = np.asarray(q_per_gamma, dtype=float)
    if q.ndim == 0 or q.shape[-1] != len(weights.coefficients):
        raise ShapeError(
            f"expected {len(weights.coefficients)} per-gamma values on the last axis, got shape {q.shape}"
        )
    out = q @ weights.coefficients
    return out if np.ndim(out) else float(out)


def truncation_error(gamma_max: float, k: float, t):
    """Value and error of the hyperbolic integral cut off at ``gamma_max``.

    Returns ``(gamma_max**(k t) / (1 + k t), 1/(1 + k t) - that)``.
    """
    if not 0 < gamma_max < 1:
        raise DomainError(f"gamma_max must lie in (0, 1), got {gamma_max!r}")
    if not k > 0:
        raise DomainError(f"k must be positive, got {k!r}")
    t = np.asarray(t, dtype=float)
    exact = 1.0 / (1.0 + k * t)
    truncated = np.power(gamma_max, k * t) * exact
    err = exact - truncated
    if truncated.ndim:
        return truncated, err
    return float(truncated), float(err)


def discount_curve(ladder: GammaLadder, prior: HazardPrior, horizon: int, form=None, rule="left") -> np.ndarray:
    """Approximate discount ``d_hat(t)`` for ``t = 0..horizon``.

    Aggregates the exact per-gamma discounts ``nodes**t``.
    """
    if int(horizon) != horizon or horizon < 1:
        raise DomainError(f"horizon must be a positive integer, got {horizon!r}")
    w = riemann_weights(ladder, prior, form=form, rule=rule)
    t = np.arange(int(horizon) + 1, dtype=float)
    return np.power(w.nodes[None, :], t[:, None]) @ w.coefficients


def write_curve_csv(path, ladder: GammaLadder, prior: HazardPrior, horizon: int, form=None, rule="left", meta=None):
    """Write ``t, d, d_hat, abs_error`` rows (plus any ``meta`` columns) to ``path``."""
    d_hat = discount_curve(ladder, prior, horizon, form=form, rule=rule)
    t = np.arange(len(d_hat))
    d = np.asarray(discount_value(prior.discount_spec(), t))
    meta = dict(meta or {})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "d", "d_hat", "abs_error", *meta])
        for ti, di, hi in zip(t, d, d_hat):
            writer.writerow([int(ti), repr(float(di)), repr(float(hi)), repr(float(abs(hi - di))), *meta.values()])
    return d_hat
