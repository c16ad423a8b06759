"""Multi-horizon Q-learning: one value head per discount factor, learned side by side.

Every head sees the same transitions and differs only in the discount used
in its bootstrap target.  Acting can follow a single head or the aggregated
value obtained by combining heads with :func:`aggregation.aggregate`.
"""

from __future__ import annotations

import copy
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregationWeights, aggregate
from .discounting import DiscountSpec
from .errors import BoundWarning, ConfigurationError, DomainError, HorizonWarning, NumericError
from .ladder import GammaLadder
from .mdp import Mdp, exact_q, pathworld_build

PRIORITY_SCHEMES = ("mean_td", "largest_gamma_td")


def _as_gammas(gammas) -> np.ndarray:
    if isinstance(gammas, GammaLadder):
        gammas = gammas.gammas
    elif isinstance(gammas, AggregationWeights):
        gammas = gammas.nodes
    g = np.array(gammas, dtype=float)
    if g.ndim != 1 or g.size == 0 or np.any(g < 0) or np.any(g > 1):
        raise DomainError("gammas must be a non-empty 1-D array with entries in [0, 1]")
    return g


class MultiHorizonTable:
    """Tabular ``Q[s, a, i]`` for each discount ``gammas[i]``.

    ``lr="visits"`` uses ``alpha = 1 / (1 + visits(s, a))``, counting visits
    before the update, so the first update of a pair copies its target.  A
    float gives a constant step size.  ``r_max`` (if known) enables the
    ``|q_i| <= r_max / (1 - gamma_i)`` sanity check.
    """

    def __init__(self, n_states, n_actions, gammas, lr="visits", r_max=None):
        self.gammas = _as_gammas(gammas)
        self.n_states, self.n_actions = int(n_states), int(n_actions)
        if lr != "visits" and not (isinstance(lr, (int, float)) and 0 < lr <= 1):
            raise DomainError(f"lr must be 'visits' or a number in (0, 1], got {lr!r}")
        self.lr = lr
        self.r_max = r_max
        self.q = np.zeros((self.n_states, self.n_actions, len(self.gammas)))
        self.visits = np.zeros((self.n_states, self.n_actions), dtype=np.int64)

    @property
    def n_heads(self) -> int:
        return len(self.gammas)

    def values(self, state) -> np.ndarray:
        """``(n_actions, n_heads)`` values at ``state``."""
        return self.q[state]

    def snapshot(self) -> "MultiHorizonTable":
        return copy.deepcopy(self)

    def step_size(self, states, actions):
        if self.lr == "visits":
            return 1.0 / (1.0 + self.visits[states, actions])
        return np.full(np.shape(states), float(self.lr))

    def _check(self, s, a):
        if not (0 <= s < self.n_states and 0 <= a < self.n_actions):
            raise DomainError(f"state/action ({s}, {a}) outside the table")

    def update(self, s, a, r, s2, done, weight=1.0) -> np.ndarray:
        """One Q-learning step on every head; returns the per-head TD errors."""
        self._check(s, a)
        if not done:
            self._check(s2, 0)
        if not (np.isfinite(r) and np.isfinite(weight)):
            raise NumericError(f"non-finite transition input r={r!r}, weight={weight!r}")
        boot = 0.0 if done else self.q[s2].max(axis=0)
        delta = r + self.gammas * boot - self.q[s, a]
        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite TD error; table left unchanged")
        self.q[s, a] += float(self.step_size(s, a)) * weight * delta
        self.visits[s, a] += 1
        if self.r_max is not None:
            self._bounds_check(s, a)
        return delta

    def update_batch(self, s, a, r, s2, done, weight=None) -> np.ndarray:
        """Vectorised :meth:`update` over a batch; errors use the pre-update table."""
        s, a, s2 = (np.asarray(x, dtype=np.int64) for x in (s, a, s2))
        r = np.asarray(r, dtype=float)
        done = np.asarray(done, dtype=bool)
        weight = np.ones(len(s)) if weight is None else np.asarray(weight, dtype=float)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(weight))):
            raise NumericError("non-finite rewards or weights in batch")
        boot = np.where(done[:, None], 0.0, self.q[np.where(done, 0, s2)].max(axis=1))
        delta = r[:, None] + self.gammas[None, :] * boot - self.q[s, a]
        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite TD error; table left unchanged")
        step = (self.step_size(s, a) * weight)[:, None] * delta
        np.add.at(self.q, (s, a), step)
        np.add.at(self.visits, (s, a), 1)
        return delta

    def _bounds_check(self, s, a):
        with np.errstate(divide="ignore"):
            bound = self.r_max / (1.0 - self.gammas)
        if np.any(np.abs(self.q[s, a]) > bound * (1 + 1e-9)):
            warnings.warn(f"values at ({s}, {a}) exceed r_max / (1 - gamma)", BoundWarning, stacklevel=3)


class LinearMultiHorizon:
    """Shared state features with one affine map per head.

    ``q_i(s, a) = features[s] @ W[i, a] + c[i, a]``.  Semi-gradient Q-learning,
    constant step size.  With ``bias=False`` the offsets stay at zero, and
    one-hot features then reproduce a constant-step table exactly.
    """

    def __init__(self, features, n_actions, gammas, lr=0.1, bias=True):
        self.features = np.asarray(features, dtype=float)
        self.gammas = _as_gammas(gammas)
        self.n_states, n_feat = self.features.shape
        self.n_actions = int(n_actions)
        self.lr = float(lr)
        self.bias = bool(bias)
        self.W = np.zeros((len(self.gammas), self.n_actions, n_feat))
        self.c = np.zeros((len(self.gammas), self.n_actions))

    @property
    def n_heads(self) -> int:
        return len(self.gammas)

    @property
    def q(self) -> np.ndarray:
        return np.einsum("sf,kaf->sak", self.features, self.W) + self.c.T[None]

    def values(self, state) -> np.ndarray:
        return (self.W @ self.features[state]).T + self.c.T

    def update(self, s, a, r, s2, done, weight=1.0) -> np.ndarray:
        if not (np.isfinite(r) and np.isfinite(weight)):
            raise NumericError(f"non-finite transition input r={r!r}, weight={weight!r}")
        boot = 0.0 if done else self.values(s2).max(axis=0)
        delta = r + self.gammas * boot - self.values(s)[a]
        if not np.all(np.isfinite(delta)):
            raise NumericError("non-finite TD error; model left unchanged")
        g = self.lr * weight * delta
        self.W[:, a, :] += g[:, None] * self.features[s][None, :]
        if self.bias:
            self.c[:, a] += g
        return delta


def td_update(table, transition, weight=1.0) -> np.ndarray:
    """Apply one ``(s, a, r, s_next, done)`` transition to every head; returns the TD errors."""
    s, a, r, s2, done = transition
    return table.update(s, a, r, s2, done, weight)


@dataclass(frozen=True)
class ActingPolicy:
    """Epsilon-greedy over one head or over aggregated values.

    Ties go to the lowest action index.
    """

    kind: str
    index: int | None = None
    weights: AggregationWeights | None = field(default=None, repr=False)
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in ("single_gamma", "aggregated"):
            raise DomainError(f"unknown acting policy kind {self.kind!r}")
        if self.kind == "aggregated" and self.weights is None:
            raise ConfigurationError("aggregated acting needs aggregation weights")
        if not 0 <= self.epsilon <= 1:
            raise DomainError(f"epsilon must lie in [0, 1], got {self.epsilon!r}")

    @classmethod
    def single_gamma(cls, index, epsilon=0.0):
        return cls("single_gamma", index=index, epsilon=epsilon)

    @classmethod
    def largest_gamma(cls, epsilon=0.0):
        return cls("single_gamma", index=-1, epsilon=epsilon)

    @classmethod
    def aggregated(cls, weights, epsilon=0.0):
        return cls("aggregated", weights=weights, epsilon=epsilon)

    def action_values(self, table, state) -> np.ndarray:
        v = table.values(state)
        if self.kind == "single_gamma":
            return v[:, self.index]
        return aggregate(v, self.weights)

    def greedy(self, table) -> np.ndarray:
        """Greedy action in every state."""
        return np.array([int(np.argmax(self.action_values(table, s))) for s in range(table.n_states)])


def act(policy: ActingPolicy, table, state, rng) -> int:
    if policy.epsilon > 0 and rng.random() < policy.epsilon:
        return int(rng.integers(table.n_actions))
    return int(np.argmax(policy.action_values(table, state)))


def bellman_residual(table: MultiHorizonTable, mdp: Mdp) -> float:
    """Largest expected one-step Q-learning error over visited pairs and all heads.

    Pairs never updated carry no information and are skipped.
    """
    alive = (~mdp.terminal).astype(float)[:, None, None]
    target = mdp.rewards[:, :, None] + table.gammas * mdp.backup(table.q.max(axis=1)) * alive
    err = np.abs(target - table.q)[table.visits > 0]
    return float(err.max()) if err.size else 0.0


def train_pathworld(gammas, n_paths, sweeps=1, lr="visits", order="backward", mdp=None) -> MultiHorizonTable:
    """TD-train every head on Pathworld without hazard.

    Each sweep plays one episode down every path.  With ``order="backward"``
    the episode's transitions are applied last-to-first, so values flow from
    the reward to the start within a sweep; ``"forward"`` is plain online
    order and needs many more sweeps.
    """
    if order not in ("backward", "forward"):
        raise DomainError(f"order must be 'backward' or 'forward', got {order!r}")
    mdp = pathworld_build(n_paths) if mdp is None else mdp
    table = MultiHorizonTable(mdp.n_states, mdp.n_actions, gammas, lr=lr)
    rng = np.random.default_rng(0)  # Pathworld is deterministic; rng is never consumed by a choice
    episodes = []
    for a0 in range(mdp.n_actions):
        s, a, trans = mdp.start_state, a0, []
        while True:
            r, nxt = mdp.step(s, a, rng)
            trans.append((s, a, r, 0 if nxt is None else nxt, nxt is None))
            if nxt is None:
                break
            s, a = nxt, 0
        episodes.append(trans[::-1] if order == "backward" else trans)
    for _ in range(int(sweeps)):
        for trans in episodes:
            for tr in trans:
                td_update(table, tr)
    return table


# ---------------------------------------------------------------------------
# prioritised replay
# ---------------------------------------------------------------------------


def priority_from_td(deltas, scheme: str):
    """Replay priority from per-head TD errors (last axis).

    ``mean_td`` averages ``|delta_i|`` over heads; ``largest_gamma_td`` uses
    ``|delta|`` of the head with the largest discount (the last one).
    """
    d = np.abs(np.asarray(deltas, dtype=float))
    if scheme == "mean_td":
        return d.mean(axis=-1)
    if scheme == "largest_gamma_td":
        return d[..., -1]
    raise DomainError(f"unknown priority scheme {scheme!r}; expected one of {PRIORITY_SCHEMES}")


class PrioritizedReplayBuffer:
    """Proportional prioritised replay over a fixed-capacity ring buffer.

    Sampling probability is ``(p_j + eps) ** alpha / sum``; importance weights
    ``(N P_j) ** -beta`` are normalised by their maximum.  New items get the
    largest priority seen so far.  :meth:`sample` returns ``None`` until
    ``min_fill`` items are stored.
    """

    def __init__(self, capacity, alpha=0.6, beta=0.4, eps=1e-6, min_fill=1, rng=None):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = int(capacity)
        self.alpha, self.beta, self.eps = float(alpha), float(beta), float(eps)
        self.min_fill = max(1, int(min_fill))
        self.rng = np.random.default_rng() if rng is None else rng
        self.items = [None] * self.capacity
        self.priorities = np.zeros(self.capacity)
        self.size = 0
        self.cursor = 0
        self.max_priority = 1.0

    def __len__(self):
        return self.size

    def add(self, transition, priority=None):
        p = self.max_priority if priority is None else float(priority)
        if p < 0 or not np.isfinite(p):
            raise DomainError(f"priority must be finite and >= 0, got {p!r}")
        self.items[self.cursor] = transition
        self.priorities[self.cursor] = p
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.max_priority = max(self.max_priority, p)

    def probabilities(self) -> np.ndarray:
        scaled = (self.priorities[: self.size] + self.eps) ** self.alpha
        return scaled / scaled.sum()

    def sample(self, batch_size):
        """``(indices, transitions, importance_weights)`` or ``None`` below ``min_fill``."""
        if self.size < self.min_fill:
            return None
        probs = self.probabilities()
        idx = self.rng.choice(self.size, size=batch_size, p=probs)
        w = (self.size * probs[idx]) ** -self.beta
        return idx, [self.items[i] for i in idx], w / w.max()

    def update_priorities(self, indices, priorities):
        priorities = np.asarray(priorities, dtype=float)
        if np.any(priorities < 0) or not np.all(np.isfinite(priorities)):
            raise DomainError("priorities must be finite and >= 0")
        self.priorities[np.asarray(indices)] = priorities
        if priorities.size:
            self.max_priority = max(self.max_priority, float(priorities.max()))


@dataclass(frozen=True)
class ReplayConfig:
    """Budget and hyperparameters for :func:`train_with_replay`."""

    steps: int = 20_000
    buffer_size: int = 10_000
    batch_size: int = 32
    min_fill: int = 256
    lr: float = 0.2
    epsilon: float = 0.2
    alpha: float = 0.6
    beta: float = 0.4
    max_episode_steps: int = 100
    exploring_starts: bool = True
    eval_every: int = 1_000
    audit_every: int = 1


@dataclass
class ReplayAudit:
    """Logged batches: sampled indices, per-head TD errors and assigned priorities."""

    scheme: str
    batches: list = field(default_factory=list)

    def log(self, step, indices, deltas, priorities):
        self.batches.append(
            {"step": step, "indices": np.array(indices), "deltas": np.array(deltas), "priorities": np.array(priorities)}
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "slot", "index", "priority", "deltas"])
            for b in self.batches:
                for j, (i, p, d) in enumerate(zip(b["indices"], b["priorities"], b["deltas"])):
                    writer.writerow([b["step"], j, int(i), repr(float(p)), " ".join(repr(float(x)) for x in d)])


def undiscounted_return(mdp: Mdp, policy, horizon) -> float:
    """Exact expected undiscounted return of a deterministic policy over ``horizon`` steps."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HorizonWarning)
        q = exact_q(mdp, DiscountSpec.exponential(1.0), horizon=horizon, policy=policy)
    return float(q[mdp.start_state, policy[mdp.start_state]])


def train_with_replay(mdp: Mdp, gammas, scheme: str, config: ReplayConfig = ReplayConfig(), seed: int = 0):
    """Multi-horizon Q-learning from a prioritised replay buffer.

    Exploration is epsilon-greedy on the largest-gamma head, and with
    ``exploring_starts`` each episode begins in a uniformly drawn
    non-terminal state so every region gets visited.  After every
    environment step one batch is replayed, each sample scaled by its
    importance weight, and priorities are refreshed from the new TD errors
    by ``scheme``.  Every ``eval_every`` steps the curve records the exact
    undiscounted return of the current greedy policy.

    Returns ``(table, curve, audit)`` where ``curve`` is a list of
    ``(step, return)`` pairs.
    """
    if scheme not in PRIORITY_SCHEMES:
        raise DomainError(f"unknown priority scheme {scheme!r}; expected one of {PRIORITY_SCHEMES}")
    rng = np.random.default_rng(seed)
    table = MultiHorizonTable(mdp.n_states, mdp.n_actions, gammas, lr=config.lr)
    buf = PrioritizedReplayBuffer(config.buffer_size, config.alpha, config.beta, min_fill=config.min_fill, rng=rng)
    explore = ActingPolicy.largest_gamma(config.epsilon)
    greedy = ActingPolicy.largest_gamma()
    audit = ReplayAudit(scheme)
    curve = []
    starts = np.flatnonzero(~mdp.terminal) if config.exploring_starts else np.array([mdp.start_state])
    s, t_ep = int(rng.choice(starts)), 0
    for step in range(1, config.steps + 1):
        a = act(explore, table, s, rng)
        r, nxt = mdp.step(s, a, rng)
        done = nxt is None
        buf.add((s, a, r, 0 if done else nxt, done))
        t_ep += 1
        if done or t_ep >= config.max_episode_steps:
            s, t_ep = int(rng.choice(starts)), 0
        else:
            s = nxt
        batch = buf.sample(config.batch_size)
        if batch is not None:
            idx, items, w = batch
            cols = list(zip(*items))
            deltas = table.update_batch(*cols, weight=w)
            prio = priority_from_td(deltas, scheme)
            buf.update_priorities(idx, prio)
            if step % config.audit_every == 0:
                audit.log(step, idx, deltas, prio)
        if step % config.eval_every == 0 or step == config.steps:
            curve.append((step, undiscounted_return(mdp, greedy.greedy(table), config.max_episode_steps)))
    return table, curve, audit


def write_table_csv(path, table):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "action", "head", "gamma", "q", "visits"])
        for s in range(table.n_states):
            for a in range(table.n_actions):
                for i, g in enumerate(table.gammas):
                    writer.writerow([s, a, i, repr(float(g)), repr(float(table.q[s, a, i])), int(table.visits[s, a])])


def write_learning_curve_csv(path, curve, meta=None):
    meta = dict(meta or {})
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "undiscounted_return", *meta])
        for step, ret in curve:
            writer.writerow([step, repr(float(ret)), *meta.values()])

