"""Seeded Pathworld experiments with CSV artifacts.

Each experiment combines a ladder, an agent (a hazard prior used to
aggregate per-gamma values, or a single discount factor) and an
environment prior.  Its result is the mean over paths of the squared error
between the agent's start-state value and the true undiscounted expected
return under hazard.

Every artifact row carries ``config_hash``, ``mode`` and ``seed``.  Wall
times are kept in memory only, so repeated runs write identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import PRIORITY_SCHEMES, ActingPolicy, ReplayConfig, bellman_residual, train_pathworld, train_with_replay
from .aggregation import aggregate, riemann_weights
from .discounting import DiscountSpec, HazardPrior, discount_value
from .errors import ConfigurationError, DomainError
from .ladder import ATARI_PRESET, build_ladder
from .mdp import exact_q, greedy_actions, hazard_gridworld, pathworld_build, pathworld_gamma_values, pathworld_mc_values, pathworld_true_values

AGENT_KINDS = ("exponential", "uniform", "delta", "gamma")
MODES = ("analytic", "monte_carlo")
ESTIMATORS = ("analytic", "td")
CALIBRATION_RANGE = range(5, 16)
# Bellman residual above which a TD-trained table is reported as not converged
RESIDUAL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a Pathworld run.

    ``agent_k`` is the prior parameter for prior-based agents and the
    discount factor itself for ``agent_kind="gamma"``.  ``ladder_k`` defaults
    to ``agent_k`` for exponential agents and to ``0.05`` otherwise.
    """

    experiment: str = "pathworld"
    gamma_max: float = 0.9999
    n_gamma: int = 100
    ladder_k: float | None = None
    agent_kind: str = "exponential"
    agent_k: float = 0.05
    env_kind: str = "exponential"
    env_k: float = 0.05
    n_paths: int = 15
    form: str | None = None
    rule: str = "left"
    mode: str = "analytic"
    estimator: str = "analytic"
    n_episodes: int | None = None
    td_sweeps: int = 2
    seed: int = 0
    out_dir: str = "results"

    def __post_init__(self):
        if self.agent_kind not in AGENT_KINDS:
            raise DomainError(f"agent_kind must be one of {AGENT_KINDS}, got {self.agent_kind!r}")
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.estimator not in ESTIMATORS:
            raise DomainError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.mode == "monte_carlo" and not self.n_episodes:
            raise ConfigurationError("monte_carlo mode must declare n_episodes")

    @property
    def effective_ladder_k(self) -> float:
        if self.ladder_k is not None:
            return self.ladder_k
        return self.agent_k if self.agent_kind == "exponential" else 0.05

    @property
    def env_prior(self) -> HazardPrior:
        return HazardPrior(self.env_kind, self.env_k)

    @property
    def label(self) -> str:
        if self.agent_kind == "gamma":
            return f"gamma={self.agent_k:g}"
        return f"{self.agent_kind}(k={self.agent_k:g})"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def config_hash(config: ExperimentConfig) -> str:
    """Short sha256 of the sorted config, ignoring where output goes."""
    d = config.to_dict()
    d.pop("out_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(name, text):
    text = text.strip()
    default = next(f.default for f in dataclasses.fields(ExperimentConfig) if f.name == name)
    if text.lower() in ("none", ""):
        return None
    if name in ("n_gamma", "n_paths", "n_episodes", "td_sweeps", "seed"):
        return int(float(text))
    if name in ("gamma_max", "ladder_k", "agent_k", "env_k"):
        return float(text)
    return type(default)(text) if default is not None else text


def parse_config_text(text: str) -> dict:
    """``key=value`` lines (``#`` comments allowed) to typed overrides."""
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in names:
            raise ConfigurationError(f"line {lineno}: expected key=value with a known key, got {line!r}")
        out[key] = _coerce(key, value)
    return out


@dataclass
class ExperimentResult:
    """Per-path estimates against true values, with the run metadata."""

    config: ExperimentConfig
    estimates: np.ndarray
    true_values: np.ndarray
    true_se: np.ndarray | None = None
    flagged: bool = False
    notes: str = ""
    wall_time: float = field(default=0.0, compare=False)

    @property
    def label(self) -> str:
        return self.config.label

    @property
    def paths(self) -> np.ndarray:
        return np.arange(1, len(self.estimates) + 1)

    @property
    def squared_errors(self) -> np.ndarray:
        return (self.estimates - self.true_values) ** 2

    @property
    def mse(self) -> float:
        return float(self.squared_errors.mean())

    @property
    def mse_se(self) -> float:
        """Delta-method standard error of the MSE from Monte-Carlo true values (0 in analytic mode)."""
        if self.true_se is None:
            return 0.0
        n = len(self.estimates)
        grad = 2.0 * (self.true_values - self.estimates) / n
        return float(np.sqrt(np.sum((grad * self.true_se) ** 2)))

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    @property
    def greedy_path(self) -> int:
        return int(np.argmax(self.estimates)) + 1


def agent_estimates(config: ExperimentConfig):
    """Start-state value of each path as the agent sees it.

    Returns ``(estimates, flagged, notes)``.  Per-gamma values (exact or
    TD-trained without hazard) are aggregated with the agent prior's
    weights; a single-gamma agent reads its own discount directly and a
    delta agent is scored through the same discount path as the
    environment.
    """
    n = config.n_paths
    i = np.arange(1, n + 1, dtype=float)
    if config.agent_kind == "gamma":
        if config.estimator == "td":
            table = train_pathworld([config.agent_k], n, sweeps=config.td_sweeps)
            return table.q[0, :, 0].copy(), *_residual_flag(table, n)
        return np.power(config.agent_k, i**2) * i, False, ""
    prior = HazardPrior(config.agent_kind, config.agent_k)
    if prior.kind == "delta" and config.estimator == "analytic":
        return i * np.asarray(discount_value(prior.discount_spec(), i**2)), False, ""
    ladder = build_ladder(config.gamma_max, config.n_gamma, config.effective_ladder_k)
    weights = riemann_weights(ladder, prior, form=config.form, rule=config.rule)
    if config.estimator == "td":
        table = train_pathworld(weights.nodes, n, sweeps=config.td_sweeps)
        return aggregate(table.q[0], weights), *_residual_flag(table, n)
    return aggregate(pathworld_gamma_values(n, weights.nodes), weights), False, ""


def _residual_flag(table, n_paths):
    mdp = pathworld_build(n_paths)
    unseen = int(np.sum(table.visits[mdp.start_state] == 0))
    if unseen:
        return True, f"{unseen} start actions never updated"
    res = bellman_residual(table, mdp)
    if res > RESIDUAL_THRESHOLD:
        return True, f"max Bellman residual {res:.3g} above {RESIDUAL_THRESHOLD:g}"
    return False, ""


def run_value_profile(config: ExperimentConfig) -> ExperimentResult:
    """Score one agent on Pathworld against the environment's hazard prior."""
    t0 = time.perf_counter()
    est, flagged, notes = agent_estimates(config)
    if config.mode == "analytic":
        truth, se = pathworld_true_values(config.env_prior, config.n_paths), None
    else:
        rng = np.random.default_rng(config.seed)
        truth, se = pathworld_mc_values(config.env_prior, config.n_paths, config.n_episodes, rng)
    return ExperimentResult(config, np.asarray(est, dtype=float), truth, se, flagged, notes, time.perf_counter() - t0)


def _run_many(configs, workers=1):
    if workers <= 1:
        return [run_value_profile(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_value_profile, configs))


# Each table: environment overrides, one override set per row, reported MSEs.
TABLES = {
    "baselines": {
        "env": {"env_kind": "exponential", "env_k": 0.05},
        "rows": [
            {"agent_kind": "exponential", "agent_k": 0.05},
            {"agent_kind": "gamma", "agent_k": 0.975},
            {"agent_kind": "gamma", "agent_k": 0.95},
            {"agent_kind": "gamma", "agent_k": 0.9},
            {"agent_kind": "gamma", "agent_k": 0.99},
            {"agent_kind": "gamma", "agent_k": 0.75},
        ],
        "reference": [0.002, 0.566, 1.461, 2.253, 2.288, 2.809],
    },
    "mismatched_k": {
        "env": {"env_kind": "exponential", "env_k": 0.05},
        "rows": [{"agent_kind": "exponential", "agent_k": k} for k in (0.05, 0.1, 0.025, 0.2)],
        "reference": [0.002, 0.493, 0.814, 1.281],
    },
    "uniform_hazard": {
        "env": {"env_kind": "uniform", "env_k": 0.1},
        "rows": [
            {"agent_kind": "exponential", "agent_k": 0.05},
            {"agent_kind": "gamma", "agent_k": 0.975},
            {"agent_kind": "gamma", "agent_k": 0.95},
            {"agent_kind": "gamma", "agent_k": 0.99},
        ],
        "reference": [0.235, 0.266, 0.470, 4.029],
    },
    "truncation": {
        "env": {"env_kind": "exponential", "env_k": 0.05, "agent_kind": "exponential", "agent_k": 0.05, "n_gamma": 10_000},
        "rows": [{"gamma_max": g} for g in (0.999, 0.9999, 0.99, 0.95, 0.9)],
        "reference": [0.002, 0.003, 0.233, 1.638, 2.281],
    },
}


def table_configs(name: str, base: ExperimentConfig) -> list[ExperimentConfig]:
    if name not in TABLES:
        raise DomainError(f"unknown table {name!r}; expected one of {sorted(TABLES)}")
    spec = TABLES[name]
    return [base.replace(experiment=name, **spec["env"], **row) for row in spec["rows"]]


def run_mismatch_sweep(config: ExperimentConfig, agents=None, table=None, workers=1) -> list[ExperimentResult]:
    """One result per agent setting, all scored against ``config``'s environment.

    ``agents`` is a list of override dicts such as ``{"agent_kind": "gamma",
    "agent_k": 0.95}``; alternatively ``table`` names a preset sweep.
    """
    if table is not None:
        configs = table_configs(table, config)
    elif agents:
        configs = [config.replace(**a) for a in agents]
    else:
        raise ConfigurationError("give either agents or a table name")
    return _run_many(configs, workers)


def run_truncation_study(config: ExperimentConfig, gamma_maxes=(0.9, 0.95, 0.99, 0.999, 0.9999), n_gamma=10_000,
                         workers=1) -> list[ExperimentResult]:
    """Pathworld MSE for each ``gamma_max`` with an otherwise fixed agent."""
    configs = [config.replace(experiment="truncation", gamma_max=g, n_gamma=n_gamma) for g in gamma_maxes]
    return _run_many(configs, workers)


def ordering_holds(mses, tol=0.0) -> bool:
    """True when ``mses`` is strictly increasing (by more than ``tol``)."""
    return all(b - a > tol for a, b in zip(mses, mses[1:]))


@dataclass
class CalibrationReport:
    target: str
    reference: list
    sweep: list  # (n_paths, deviation, [mse per row])
    best_n: int
    within_factor_2: bool

    @property
    def failed(self) -> bool:
        return not self.within_factor_2


def calibrate_paths(target: str, base: ExperimentConfig = ExperimentConfig(), n_range=CALIBRATION_RANGE) -> CalibrationReport:
    """Pick the path count whose analytic MSEs sit closest to a reference table.

    The deviation is the total absolute difference over the table's rows.
    ``within_factor_2`` reports whether every row at the chosen count lies
    within a factor two of its reference.
    """
    if base.mode != "analytic":
        raise ConfigurationError("calibration runs in analytic mode")
    ref = np.asarray(TABLES[target]["reference"]) if target in TABLES else None
    if ref is None:
        raise DomainError(f"unknown table {target!r}; expected one of {sorted(TABLES)}")
    sweep = []
    for n in n_range:
        mses = [r.mse for r in run_mismatch_sweep(base.replace(n_paths=n), table=target)]
        sweep.append((n, float(np.abs(np.asarray(mses) - ref).sum()), mses))
    best = min(sweep, key=lambda row: row[1])
    ratio = np.asarray(best[2]) / ref
    return CalibrationReport(target, list(ref), sweep, best[0], bool(np.all((ratio >= 0.5) & (ratio <= 2.0))))


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _meta(result: ExperimentResult):
    return [result.config_hash, result.config.mode, result.config.seed]


def write_results(results, out_dir, name) -> tuple[Path, Path]:
    """Write ``<name>_values.csv`` (one row per path) and ``<name>_summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    values, summary = out / f"{name}_values.csv", out / f"{name}_summary.csv"
    with open(values, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "path", "estimate", "true_value", "true_se", "squared_error", "config_hash", "mode", "seed"])
        for r in results:
            se = r.true_se if r.true_se is not None else np.zeros_like(r.estimates)
            for p, e, t, s, q in zip(r.paths, r.estimates, r.true_values, se, r.squared_errors):
                w.writerow([r.label, int(p), repr(float(e)), repr(float(t)), repr(float(s)), repr(float(q)), *_meta(r)])
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "gamma_max", "n_gamma", "n_paths", "form", "rule", "estimator", "mse", "mse_se",
                    "greedy_path", "flagged", "config_hash", "mode", "seed"])
        for r in results:
            c = r.config
            w.writerow([r.label, repr(c.gamma_max), c.n_gamma, c.n_paths, c.form or "default", c.rule, c.estimator,
                        repr(r.mse), repr(r.mse_se), r.greedy_path, int(r.flagged), *_meta(r)])
    return values, summary


def write_calibration(report: CalibrationReport, out_dir, base: ExperimentConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"calibrate_{report.target}.csv"
    h = config_hash(base)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_paths", "deviation", *[f"mse_row{j}" for j in range(len(report.reference))], "chosen",
                    "config_hash", "mode", "seed"])
        w.writerow(["reference", "", *[repr(x) for x in report.reference], "", h, base.mode, base.seed])
        for n, dev, mses in report.sweep:
            w.writerow([n, repr(dev), *[repr(m) for m in mses], int(n == report.best_n), h, base.mode, base.seed])
    return path


def format_summary(results) -> str:
    lines = [f"{'label':<24}{'mse':>12}{'se':>10}  flagged"]
    for r in results:
        lines.append(f"{r.label:<24}{r.mse:>12.4f}{r.mse_se:>10.2g}  {'yes' if r.flagged else 'no'}")
    return "\n".join(lines)



# ---------------------------------------------------------------------------
# replay on the hazard gridworld
# ---------------------------------------------------------------------------


def reachable_states(mdp, policy) -> list[int]:
    """States reachable from the start when following a deterministic policy."""
    seen, stack = {mdp.start_state}, [mdp.start_state]
    while stack:
        s = stack.pop()
        if mdp.terminal[s]:
            continue
        row = mdp.transitions[int(policy[s])].getrow(s)
        for s2 in row.indices[row.data > 0]:
            if s2 not in seen:
                seen.add(int(s2))
                stack.append(int(s2))
    return sorted(seen)


def policy_is_optimal(mdp, policy, q_opt, atol=1e-9) -> bool:
    """Whether ``policy`` picks an optimal action in every state it can reach."""
    sets = greedy_actions(q_opt, atol)
    return all(int(policy[s]) in sets[s] for s in reachable_states(mdp, policy) if not mdp.terminal[s])


@dataclass
class ReplayRun:
    scheme: str
    table: object
    curve: list
    audit: object
    optimal: bool


def run_gridworld_replay(seed=0, replay: ReplayConfig = ReplayConfig(), ladder_params=None, schemes=PRIORITY_SCHEMES):
    """Train with each priority scheme and compare the greedy policy to the DP optimum.

    The optimum is for exponential discounting at the ladder's largest
    gamma, the head that drives acting.
    """
    params = dict(ATARI_PRESET if ladder_params is None else ladder_params)
    ladder = build_ladder(**params)
    mdp = hazard_gridworld()
    q_opt = exact_q(mdp, DiscountSpec.exponential(ladder.gamma_max))
    runs = []
    for scheme in schemes:
        table, curve, audit = train_with_replay(mdp, ladder, scheme, replay, seed)
        policy = ActingPolicy.largest_gamma().greedy(table)
        runs.append(ReplayRun(scheme, table, curve, audit, policy_is_optimal(mdp, policy, q_opt)))
    return mdp, ladder, runs
