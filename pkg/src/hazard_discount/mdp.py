"""Episodic MDPs under per-episode hazard, exact value oracles, and test environments.

A hazard rate ``lambda`` is drawn once per episode from a :class:`HazardPrior`
and never observed.  Every step the agent survives with probability
``eta = exp(-lambda)``, i.e. the effective kernel is ``eta * P``.  Transition
kernels are sub-stochastic: whatever mass a row lacks is the probability that
the episode ends there.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special

from .discounting import DiscountSpec, HazardPrior, discount_value, hazard_to_gamma, survival_from_prior
from .errors import ConfigurationError, DomainError, HorizonWarning, ShapeError

ROW_SUM_SLACK = 1e-12


@dataclass(eq=False)
class Mdp:
    """Finite MDP with one sparse ``(n_states, n_states)`` kernel per action.

    ``rewards[s, a]`` is paid when action ``a`` is taken in ``s``.  States
    flagged in ``terminal`` end the episode after their reward.
    """

    transitions: tuple
    rewards: np.ndarray
    reward_range: tuple = None
    start_state: int = 0
    terminal: np.ndarray = None
    labels: list = field(default=None, repr=False)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.rewards.ndim != 2:
            raise ShapeError(f"rewards must be (n_states, n_actions), got {self.rewards.shape}")
        n_s, n_a = self.rewards.shape
        kernels = tuple(sparse.csr_matrix(p, dtype=float) for p in self.transitions)
        if len(kernels) != n_a:
            raise ShapeError(f"{n_a} actions in rewards but {len(kernels)} transition kernels")
        for a, p in enumerate(kernels):
            if p.shape != (n_s, n_s):
                raise ShapeError(f"kernel for action {a} has shape {p.shape}, expected {(n_s, n_s)}")
            if p.nnz and p.data.min() < 0:
                raise DomainError(f"kernel for action {a} has negative entries")
            sums = np.asarray(p.sum(axis=1)).ravel()
            if np.any(sums > 1 + ROW_SUM_SLACK):
                s = int(np.argmax(sums))
                raise DomainError(f"row ({s}, {a}) sums to {sums[s]!r} > 1")
        self.transitions = kernels
        if self.reward_range is None:
            self.reward_range = (float(self.rewards.min()), float(self.rewards.max()))
        lo, hi = self.reward_range
        if self.rewards.min() < lo or self.rewards.max() > hi:
            raise DomainError(f"rewards fall outside the declared range {self.reward_range}")
        if self.terminal is None:
            self.terminal = self.continue_probs.max(axis=1) == 0
        self.terminal = np.asarray(self.terminal, dtype=bool)
        if not 0 <= self.start_state < n_s:
            raise DomainError(f"start state {self.start_state} out of range")

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    @property
    def continue_probs(self) -> np.ndarray:
        """``(n_states, n_actions)`` probability that the episode goes on."""
        return np.stack([np.asarray(p.sum(axis=1)).ravel() for p in self.transitions], axis=1)

    @property
    def r_abs_max(self) -> float:
        return float(max(abs(self.reward_range[0]), abs(self.reward_range[1])))

    @classmethod
    def from_dense(cls, P, R, **kwargs) -> "Mdp":
        """Build from a dense ``(S, A, S')`` kernel and ``(S, A)`` rewards."""
        P = np.asarray(P, dtype=float)
        return cls(tuple(P[:, a, :] for a in range(P.shape[1])), R, **kwargs)

    def dense(self) -> np.ndarray:
        return np.stack([p.toarray() for p in self.transitions], axis=1)

    def backup(self, values: np.ndarray) -> np.ndarray:
        """``sum_s' P(s'|s,a) values[s', ...]`` shaped ``(S, A, ...)``."""
        return np.stack([p @ values for p in self.transitions], axis=1)

    def step(self, state: int, action: int, rng) -> tuple[float, int | None]:
        """Sample one transition; the next state is ``None`` when the episode ends."""
        r = float(self.rewards[state, action])
        if self.terminal[state]:
            return r, None
        row = self.transitions[action].getrow(state)
        u = rng.random()
        cum = np.cumsum(row.data)
        j = int(np.searchsorted(cum, u, side="right"))
        return r, (int(row.indices[j]) if j < len(cum) else None)

    def longest_episode(self) -> int | None:
        """Maximum number of steps an episode can last, or ``None`` if the support has cycles."""
        support = sum((p != 0).astype(np.int64) for p in self.transitions)
        support = sparse.csr_matrix(support)
        frontier = np.ones(self.n_states, dtype=np.int64)
        for m in range(1, self.n_states + 2):
            frontier = (support @ frontier > 0).astype(np.int64)
            if not frontier.any():
                return m
        return None

    def to_json(self) -> str:
        triplets = []
        for a, p in enumerate(self.transitions):
            coo = p.tocoo()
            triplets += [[int(s), a, int(s2), float(v)] for s, s2, v in zip(coo.row, coo.col, coo.data)]
        triplets.sort()
        return json.dumps(
            {
                "n_states": self.n_states,
                "n_actions": self.n_actions,
                "start_state": self.start_state,
                "reward_range": list(self.reward_range),
                "rewards": self.rewards.tolist(),
                "terminal": [int(s) for s in np.flatnonzero(self.terminal)],
                "transitions": triplets,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "Mdp":
        doc = json.loads(text)
        n_s, n_a = doc["n_states"], doc["n_actions"]
        mats = [sparse.lil_matrix((n_s, n_s)) for _ in range(n_a)]
        for s, a, s2, p in doc["transitions"]:
            mats[a][s, s2] = p
        terminal = np.zeros(n_s, dtype=bool)
        terminal[doc["terminal"]] = True
        return cls(
            tuple(mats),
            np.asarray(doc["rewards"], dtype=float),
            reward_range=tuple(doc["reward_range"]),
            start_state=doc["start_state"],
            terminal=terminal,
        )


def random_mdp(n_states, n_actions, rng, continue_range=(0.5, 0.95), reward_range=(-1.0, 1.0)) -> Mdp:
    """Dense random episodic MDP whose rows sum to values drawn from ``continue_range``."""
    P = rng.random((n_states, n_actions, n_states))
    P /= P.sum(axis=-1, keepdims=True)
    P *= rng.uniform(*continue_range, size=(n_states, n_actions, 1))
    R = rng.uniform(*reward_range, size=(n_states, n_actions))
    return Mdp.from_dense(P, R, reward_range=tuple(reward_range), terminal=np.zeros(n_states, dtype=bool))


# ---------------------------------------------------------------------------
# hazard sampling and simulation
# ---------------------------------------------------------------------------


def sample_hazards(prior: HazardPrior, size, rng) -> np.ndarray:
    """Draw ``size`` hazard rates; exponential draws use the inverse CDF."""
    if prior.kind == "delta":
        return np.full(size, prior.k)
    u = rng.random(size)
    if prior.kind == "exponential":
        return -prior.k * np.log1p(-u)
    return prior.k * u


def sample_hazard(prior: HazardPrior, seed: int) -> float:
    return float(sample_hazards(prior, 1, np.random.default_rng(seed))[0])


@dataclass
class HazardousEpisode:
    """One rollout.  ``trace`` holds ``(state, action, reward, survived)`` per step,
    where ``survived`` says whether the hazard check after that step was passed."""

    lam: float
    seed: int
    trace: list = field(default_factory=list)

    @property
    def eta(self) -> float:
        return hazard_to_gamma(self.lam)

    @property
    def total_reward(self) -> float:
        return float(sum(r for _, _, r, _ in self.trace))

    def __len__(self):
        return len(self.trace)


def _policy_probs(policy, n_states, n_actions) -> np.ndarray:
    pol = np.asarray(policy)
    if pol.ndim == 1:
        if pol.shape[0] != n_states:
            raise ShapeError(f"deterministic policy needs {n_states} entries, got {pol.shape[0]}")
        probs = np.zeros((n_states, n_actions))
        probs[np.arange(n_states), pol.astype(int)] = 1.0
        return probs
    if pol.shape != (n_states, n_actions):
        raise ShapeError(f"stochastic policy must be {(n_states, n_actions)}, got {pol.shape}")
    return pol.astype(float)


def simulate_episode(mdp: Mdp, policy, hazard, seed: int, max_steps=100_000, state=None, action=None) -> HazardousEpisode:
    """Roll out one episode under a hazard prior (or a fixed rate).

    The hazard is drawn from ``np.random.default_rng(seed)``; batches of
    episodes use ``seed = run_seed + episode_index``.
    """
    rng = np.random.default_rng(seed)
    lam = float(hazard) if not isinstance(hazard, HazardPrior) else float(sample_hazards(hazard, 1, rng)[0])
    eta = hazard_to_gamma(lam)
    probs = _policy_probs(policy, mdp.n_states, mdp.n_actions)
    s = mdp.start_state if state is None else state
    a = action
    ep = HazardousEpisode(lam=lam, seed=seed)
    for _ in range(max_steps):
        if a is None:
            a = int(rng.choice(mdp.n_actions, p=probs[s]))
        r, nxt = mdp.step(s, a, rng)
        survived = bool(rng.random() < eta)
        ep.trace.append((s, a, r, survived))
        if not survived or nxt is None:
            break
        s, a = nxt, None
    return ep


def rollout_returns(mdp: Mdp, policy, hazard, state, action, n_episodes, rng, discount=None, max_steps=100_000):
    """Vectorised Monte-Carlo returns from ``(state, action)``.

    Each episode draws its own hazard from ``hazard`` (a prior or ``None``)
    and applies a Bernoulli continuation check on every step.  ``discount``
    defaults to no discounting.
    """
    P = mdp.dense()
    cdf = np.cumsum(P, axis=-1)
    probs = _policy_probs(policy, mdp.n_states, mdp.n_actions)
    pcdf = np.cumsum(probs, axis=-1)
    lam = np.zeros(n_episodes) if hazard is None else sample_hazards(hazard, n_episodes, rng)
    eta = np.exp(-lam)
    s = np.full(n_episodes, state, dtype=np.int64)
    a = np.full(n_episodes, action, dtype=np.int64)
    returns = np.zeros(n_episodes)
    alive = np.arange(n_episodes)
    for t in range(max_steps):
        if alive.size == 0:
            break
        w = 1.0 if discount is None else discount_value(discount, t)
        sa, aa = s[alive], a[alive]
        returns[alive] += w * mdp.rewards[sa, aa]
        survive = rng.random(alive.size) < eta[alive]
        nxt = (cdf[sa, aa] < rng.random(alive.size)[:, None]).sum(axis=1)
        keep = survive & (nxt < mdp.n_states) & ~mdp.terminal[sa]
        alive = alive[keep]
        s[alive] = nxt[keep]
        a[alive] = (pcdf[s[alive]] < rng.random(alive.size)[:, None]).sum(axis=1)
    return returns


def write_trace_csv(path, episodes):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "seed", "lambda", "t", "state", "action", "reward", "survived"])
        for e, ep in enumerate(episodes):
            for t, (s, a, r, ok) in enumerate(ep.trace):
                writer.writerow([e, ep.seed, repr(ep.lam), t, s, a, repr(r), int(ok)])


# ---------------------------------------------------------------------------
# exact dynamic programming
# ---------------------------------------------------------------------------


def _effective_discount(discount: DiscountSpec, hazard: HazardPrior | None, horizon: int):
    """Per-step weights and kernel scale folding the hazard into the backup."""
    t = np.arange(horizon + 1, dtype=float)
    d = np.asarray(discount_value(discount, t), dtype=float) if discount.kind != "tabulated" else None
    if d is None:
        vals = np.asarray(discount.values)
        if horizon + 1 > len(vals):
            # beyond the table the discount is treated as its last entry times zero
            d = np.concatenate([vals, np.zeros(horizon + 1 - len(vals))])
        else:
            d = vals[: horizon + 1].copy()
    eta = 1.0
    if hazard is not None:
        if hazard.kind == "delta":
            eta = hazard_to_gamma(hazard.k)
        else:
            # unobserved lambda: the chance of still being alive at t is s(t)
            d = d * np.asarray(discount_value(hazard.discount_spec(), t))
    return d, eta


def _tail_bound(mdp: Mdp, d_next: float, eta: float, horizon: int, geometric=1.0) -> float:
    """Bound on the value beyond ``horizon``; ``geometric`` is the discount's
    per-step ratio when it is exponential (1 otherwise, as d is nonincreasing)."""
    longest = mdp.longest_episode()
    if longest is not None and horizon >= longest:
        return 0.0
    rho = eta * float(mdp.continue_probs.max())
    if rho * geometric < 1:
        return mdp.r_abs_max * d_next * rho**horizon / (1 - rho * geometric)
    return math.inf


def default_horizon(mdp: Mdp, eta=1.0, tol=1e-10) -> int:
    """Steps needed for the ignored tail to fall below ``tol``.

    ``eta`` is a per-step factor multiplying the kernel, such as a fixed
    survival probability or an exponential discount.
    """
    longest = mdp.longest_episode()
    if longest is not None:
        return longest
    rho = eta * float(mdp.continue_probs.max())
    if rho >= 1:
        raise ConfigurationError("MDP may never terminate; pass an explicit horizon")
    if mdp.r_abs_max == 0:
        return 1
    return max(1, math.ceil(math.log(tol * (1 - rho) / mdp.r_abs_max) / math.log(rho)))


def exact_q(mdp: Mdp, discount: DiscountSpec, hazard: HazardPrior | None = None, horizon=None,
            policy=None, tol=1e-10, hazard_method="survival") -> np.ndarray:
    """Exact ``Q(s, a)`` under discount ``d(t)`` and a hazard prior.

    Backward induction over time-indexed backups
    ``Q_t = d(t) R + eta P W_{t+1}``, where ``W`` is the greedy (or the
    given ``policy``'s) value.  Without a policy the returned values belong to
    the best non-stationary plan from time 0.

    A delta hazard scales the kernel by ``exp(-k)``.  Other priors are folded
    in as the survival curve ``s(t)`` multiplying ``d(t)`` (``"survival"``),
    or, for a fixed policy, by averaging per-lambda values over the prior with
    Gauss quadrature (``"quadrature"``).

    When ``horizon`` leaves a tail larger than ``tol`` a :class:`HorizonWarning`
    is issued.
    """
    if hazard is not None and hazard.kind != "delta" and hazard_method == "quadrature":
        if policy is None:
            raise ConfigurationError("quadrature over lambda needs a fixed policy")
        lams, wts = _hazard_quadrature(hazard)
        return sum(w * exact_q(mdp, discount, HazardPrior.delta(l), horizon, policy, tol) for l, w in zip(lams, wts))
    if hazard_method not in ("survival", "quadrature"):
        raise DomainError(f"unknown hazard_method {hazard_method!r}")

    eta = hazard_to_gamma(hazard.k) if hazard is not None and hazard.kind == "delta" else 1.0
    geometric = discount.param if discount.kind == "exponential" else 1.0
    if horizon is None:
        horizon = default_horizon(mdp, eta * geometric, tol)
    horizon = int(horizon)
    d, eta = _effective_discount(discount, hazard, horizon)
    bound = _tail_bound(mdp, d[horizon], eta, horizon, geometric)
    if bound >= tol:
        warnings.warn(f"horizon {horizon} leaves a tail of up to {bound:.3g} (tol {tol:.3g})", HorizonWarning, stacklevel=2)
    probs = None if policy is None else _policy_probs(policy, mdp.n_states, mdp.n_actions)
    alive = (~mdp.terminal).astype(float)
    W = np.zeros(mdp.n_states)
    Q = np.zeros_like(mdp.rewards)
    for t in range(horizon - 1, -1, -1):
        Q = d[t] * mdp.rewards + eta * mdp.backup(W) * alive[:, None]
        W = Q.max(axis=1) if probs is None else (probs * Q).sum(axis=1)
    return Q


def exact_q_multi(mdp: Mdp, gammas, horizon=None, policy=None, tol=1e-10) -> np.ndarray:
    """Exponentially discounted Q-values for many discount factors at once.

    Returns an ``(S, A, len(gammas))`` array; each slice equals
    ``exact_q(mdp, DiscountSpec.exponential(g), horizon=horizon, policy=policy)``.
    """
    g = np.asarray(gammas, dtype=float)
    if horizon is None:
        horizon = default_horizon(mdp, float(g.max()), tol)
    probs = None if policy is None else _policy_probs(policy, mdp.n_states, mdp.n_actions)
    alive = (~mdp.terminal).astype(float)
    W = np.zeros((mdp.n_states, len(g)))
    Q = np.zeros((mdp.n_states, mdp.n_actions, len(g)))
    for _ in range(int(horizon)):
        Q = mdp.rewards[:, :, None] + g * mdp.backup(W) * alive[:, None, None]
        W = Q.max(axis=1) if probs is None else np.einsum("sa,sak->sk", probs, Q)
    return Q


def _hazard_quadrature(prior: HazardPrior, n=80):
    if prior.kind == "exponential":
        x, w = special.roots_laguerre(n)
        return prior.k * x, w
    x, w = special.roots_legendre(n)
    return 0.5 * prior.k * (x + 1), 0.5 * w


def greedy_actions(q: np.ndarray, atol=1e-9) -> list[set]:
    """Per-state set of actions within ``atol`` of the best value."""
    q = np.asarray(q)
    best = q.max(axis=1, keepdims=True)
    return [set(np.flatnonzero(row)) for row in (q >= best - atol)]


# ---------------------------------------------------------------------------
# Pathworld
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathworldConfig:
    """Single-decision world: path ``i`` is ``i**2`` steps long and pays ``i`` at the end."""

    n_paths: int = 10
    k_true: float = 0.05
    prior_kind: str = "exponential"

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise DomainError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if self.prior_kind not in ("exponential", "uniform", "delta"):
            raise DomainError(f"unsupported environment prior {self.prior_kind!r}")

    @property
    def paths(self) -> np.ndarray:
        return np.arange(1, self.n_paths + 1)

    @property
    def lengths(self) -> np.ndarray:
        return self.paths**2

    @property
    def rewards(self) -> np.ndarray:
        return self.paths.astype(float)

    @property
    def env_prior(self) -> HazardPrior:
        return HazardPrior(self.prior_kind, self.k_true)


def pathworld_chain_starts(n_paths: int) -> np.ndarray:
    """Index of the first chain state of each path (state 0 is the start)."""
    lengths = np.arange(1, n_paths + 1) ** 2
    return 1 + np.concatenate([[0], np.cumsum(lengths)[:-1]])


def pathworld_build(config) -> Mdp:
    """Start state with one action per path, each leading down a deterministic chain.

    All chain states share the same ``n_paths`` actions, which all advance
    along the chain.  The last state of chain ``i`` pays ``i`` and ends the
    episode.
    """
    if not isinstance(config, PathworldConfig):
        config = PathworldConfig(n_paths=int(config))
    n = config.n_paths
    starts = pathworld_chain_starts(n)
    n_states = 1 + int(config.lengths.sum())
    rows, cols = [], []
    rewards = np.zeros((n_states, n))
    terminal = np.zeros(n_states, dtype=bool)
    labels = ["start"]
    for i, (first, length) in enumerate(zip(starts, config.lengths), start=1):
        chain = np.arange(first, first + length)
        rows += list(chain[:-1])
        cols += list(chain[1:])
        rewards[chain[-1], :] = i
        terminal[chain[-1]] = True
        labels += [f"path{i}/{j}" for j in range(1, length + 1)]
    advance = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_states, n_states))
    kernels = []
    for a in range(n):
        start_row = sparse.csr_matrix(([1.0], ([0], [starts[a]])), shape=(n_states, n_states))
        kernels.append(advance + start_row)
    return Mdp(tuple(kernels), rewards, reward_range=(0.0, float(n)), start_state=0, terminal=terminal, labels=labels)


def pathworld_true_value(prior: HazardPrior, path: int) -> float:
    """Undiscounted expected return of ``path`` under hazard: ``i * s(i**2)``."""
    if int(path) != path or path < 1:
        raise DomainError(f"path index must be a positive integer, got {path!r}")
    return float(path) * survival_from_prior(prior, float(path) ** 2)


def pathworld_true_values(prior: HazardPrior, n_paths: int) -> np.ndarray:
    """Closed-form ``i * s(i**2)`` for ``i = 1..n_paths``."""
    i = np.arange(1, n_paths + 1, dtype=float)
    return i * np.asarray(discount_value(prior.discount_spec(), i**2))


def pathworld_gamma_values(n_paths: int, gammas) -> np.ndarray:
    """Start-state values ``gamma**(i**2) * i`` without hazard, shaped ``(n_paths, len(gammas))``."""
    i = np.arange(1, n_paths + 1, dtype=float)
    return np.power(np.asarray(gammas, dtype=float)[None, :], (i**2)[:, None]) * i[:, None]


def pathworld_mc_values(prior: HazardPrior, n_paths: int, n_episodes: int, rng):
    """Monte-Carlo returns per path: means and standard errors.

    A reward ``d`` steps away is collected when all ``d`` per-step continuation
    checks pass, which for a drawn ``lambda`` happens with probability
    ``exp(-lambda d)``; that product is sampled with a single uniform.
    """
    means, ses = np.zeros(n_paths), np.zeros(n_paths)
    for idx in range(n_paths):
        i = idx + 1
        lam = sample_hazards(prior, n_episodes, rng)
        ret = np.where(rng.random(n_episodes) < np.exp(-lam * i * i), float(i), 0.0)
        means[idx] = ret.mean()
        ses[idx] = ret.std(ddof=1) / math.sqrt(n_episodes)
    return means, ses


# ---------------------------------------------------------------------------
# hazard gridworld
# ---------------------------------------------------------------------------

MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))  # up, right, down, left


def hazard_gridworld(size=5, hazard_cells=None, death_prob=0.25, start=(0, 0), goal=None, goal_reward=1.0) -> Mdp:
    """Grid with four moves, a rewarding goal cell and a region of per-step death risk.

    Moves off the grid leave the agent in place.  Leaving a hazard cell
    succeeds with probability ``1 - death_prob``; otherwise the episode ends.
    The default hazard region is the block of interior cells.
    """
    goal = (size - 1, size - 1) if goal is None else tuple(goal)
    if hazard_cells is None:
        hazard_cells = {(r, c) for r in range(1, size - 1) for c in range(1, size - 1)}
    hazard_cells = set(map(tuple, hazard_cells)) - {goal}
    idx = lambda r, c: r * size + c  # noqa: E731
    n = size * size
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    terminal = np.zeros(n, dtype=bool)
    for r in range(size):
        for c in range(size):
            s = idx(r, c)
            if (r, c) == goal:
                R[s, :] = goal_reward
                terminal[s] = True
                continue
            keep = 1.0 - death_prob if (r, c) in hazard_cells else 1.0
            for a, (dr, dc) in enumerate(MOVES):
                r2, c2 = r + dr, c + dc
                if not (0 <= r2 < size and 0 <= c2 < size):
                    r2, c2 = r, c
                P[s, a, idx(r2, c2)] = keep
    labels = [f"({r},{c})" for r in range(size) for c in range(size)]
    return Mdp.from_dense(P, R, reward_range=(0.0, goal_reward), start_state=idx(*start), terminal=terminal, labels=labels)
