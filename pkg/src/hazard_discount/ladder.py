"""The finite set of discount factors over which per-gamma values are learned.

Ladder points are ``gamma_i = (1 - b**i) ** k`` for ``i = 0..n_gamma``, with
the base ``b`` chosen so the top rung lands exactly on ``gamma_max``::

    b = exp(ln(1 - gamma_max ** (1/k)) / n_gamma)

Points crowd towards ``gamma_max``, where long-horizon values live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParameterError

UNDERFLOW_FLOOR = 1e-300

# Ladder hyperparameters used with deep agents; kept as a named preset.
ATARI_PRESET = {"gamma_max": 0.99, "n_gamma": 10, "k": 0.01}
PATHWORLD_PRESET = {"gamma_max": 0.9999, "n_gamma": 100, "k": 0.05}


@dataclass(frozen=True, eq=False)
class GammaLadder:
    gamma_max: float
    n_gamma: int
    k: float
    b: float
    gammas: np.ndarray

    def __len__(self):
        return len(self.gammas)

    def __iter__(self):
        return iter(self.gammas)

    def __eq__(self, other):
        if not isinstance(other, GammaLadder):
            return NotImplemented
        return (self.gamma_max, self.n_gamma, self.k) == (other.gamma_max, other.n_gamma, other.k)

    def __hash__(self):
        return hash((self.gamma_max, self.n_gamma, self.k))

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.gammas)

    def to_config_block(self) -> str:
        return f"gamma_max={self.gamma_max!r}\nn_gamma={self.n_gamma}\nk={self.k!r}\n"

    @classmethod
    def from_config_block(cls, text: str) -> "GammaLadder":
        fields = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        try:
            return build_ladder(float(fields["gamma_max"]), int(fields["n_gamma"]), float(fields["k"]))
        except KeyError as exc:
            raise DomainError(f"ladder config block is missing {exc.args[0]!r}") from None

    def csv_row(self) -> str:
        return ",".join(repr(float(g)) for g in self.gammas)


def build_ladder(gamma_max: float, n_gamma: int, k: float) -> GammaLadder:
    """Build the ladder ``[gamma_0 = 0, ..., gamma_n = gamma_max]``.

    Raises
    ------
    DomainError
        For parameters outside ``0 < gamma_max < 1``, ``n_gamma >= 2``, ``k > 0``.
    ParameterError
        When ``1 - gamma_max**(1/k)`` or ``gamma_max**(1/k)`` itself is not
        representable in double precision.
    """
    if not 0 < gamma_max < 1:
        raise DomainError(f"gamma_max must lie in (0, 1), got {gamma_max!r}")
    if int(n_gamma) != n_gamma or n_gamma < 2:
        raise DomainError(f"n_gamma must be an integer >= 2, got {n_gamma!r}")
    if not (math.isfinite(k) and k > 0):
        raise DomainError(f"k must be positive, got {k!r}")
    n_gamma = int(n_gamma)
    log_x = math.log(gamma_max) / k  # x = gamma_max ** (1/k)
    x = math.exp(log_x)
    one_minus = -math.expm1(log_x)
    if not one_minus >= UNDERFLOW_FLOOR:
        raise ParameterError(
            f"1 - gamma_max**(1/k) underflows for (gamma_max={gamma_max!r}, k={k!r})"
        )
    if x == 0.0:
        raise ParameterError(f"gamma_max**(1/k) underflows to 0 for (gamma_max={gamma_max!r}, k={k!r})")
    # log1p keeps ln(1 - x) accurate when x is tiny
    log_b = (math.log1p(-x) if x < 0.5 else math.log(one_minus)) / n_gamma
    i = np.arange(n_gamma + 1, dtype=float)
    gammas = np.power(-np.expm1(i * log_b), k)
    gammas.setflags(write=False)
    return GammaLadder(gamma_max=float(gamma_max), n_gamma=n_gamma, k=float(k), b=math.exp(log_b), gammas=gammas)
