import csv

import numpy as np
import pytest
from scipy import stats

from hazard_discount.agents import (
    ActingPolicy,
    LinearMultiHorizon,
    MultiHorizonTable,
    PrioritizedReplayBuffer,
    ReplayConfig,
    act,
    bellman_residual,
    priority_from_td,
    td_update,
    train_pathworld,
    train_with_replay,
    write_learning_curve_csv,
    write_table_csv,
)
from hazard_discount.aggregation import riemann_weights
from hazard_discount.discounting import HazardPrior
from hazard_discount.errors import BoundWarning, ConfigurationError, DomainError, NumericError, ShapeError
from hazard_discount.ladder import build_ladder
from hazard_discount.mdp import hazard_gridworld, pathworld_build, pathworld_gamma_values

GAMMAS = [0.0, 0.5, 0.9, 0.99]


class TestTdUpdate:
    def test_zero_fixed_point(self):
        table = MultiHorizonTable(3, 2, GAMMAS)
        delta = td_update(table, (0, 1, 0.0, 2, False))
        np.testing.assert_array_equal(delta, 0.0)
        np.testing.assert_array_equal(table.q, 0.0)

    def test_terminal_masks_bootstrap(self):
        table = MultiHorizonTable(3, 2, GAMMAS, lr=1.0)
        table.q[2] = 5.0
        td_update(table, (0, 1, 1.0, 2, True))
        np.testing.assert_array_equal(table.q[0, 1], 1.0)

    def test_per_head_targets(self):
        table = MultiHorizonTable(2, 1, GAMMAS, lr=1.0)
        table.q[1, 0] = 2.0
        delta = td_update(table, (0, 0, 1.0, 1, False))
        np.testing.assert_allclose(delta, 1.0 + 2.0 * np.array(GAMMAS))
        np.testing.assert_allclose(table.q[0, 0], 1.0 + 2.0 * np.array(GAMMAS))

    def test_visit_schedule(self):
        table = MultiHorizonTable(1, 1, [0.0])
        for r in (3.0, 5.0, 7.0):
            td_update(table, (0, 0, r, 0, True))
        # 1/(1+visits) gives the running mean
        np.testing.assert_allclose(table.q[0, 0, 0], 5.0)
        assert table.visits[0, 0] == 3

    def test_non_finite_leaves_table(self):
        table = MultiHorizonTable(2, 2, GAMMAS)
        table.q[1] = 1.0
        before = table.q.copy()
        with pytest.raises(NumericError):
            td_update(table, (0, 0, float("nan"), 1, False))
        table.q[1, 0, 2] = np.inf
        before = table.q.copy()
        with pytest.raises(NumericError):
            td_update(table, (0, 0, 0.0, 1, False))
        np.testing.assert_array_equal(table.q, before)
        assert table.visits.sum() == 0

    def test_bounds(self):
        with pytest.raises(DomainError):
            td_update(MultiHorizonTable(2, 2, GAMMAS), (2, 0, 0.0, 0, True))
        with pytest.raises(DomainError):
            MultiHorizonTable(2, 2, GAMMAS, lr=0.0)

    def test_bound_warning(self):
        table = MultiHorizonTable(2, 1, [0.5], lr=1.0, r_max=1.0)
        table.q[1, 0, 0] = 10.0
        with pytest.warns(BoundWarning):
            td_update(table, (0, 0, 1.0, 1, False))

    def test_batch_matches_sequential_on_distinct_pairs(self):
        rng = np.random.default_rng(0)
        a, b = MultiHorizonTable(6, 2, GAMMAS, lr=0.3), MultiHorizonTable(6, 2, GAMMAS, lr=0.3)
        a.q[:] = b.q[:] = rng.normal(size=a.q.shape)
        batch = [(0, 0, 1.0, 3, False), (1, 1, -1.0, 4, False), (2, 0, 0.5, 5, True)]
        deltas = a.update_batch(*zip(*batch))
        for j, tr in enumerate(batch):
            np.testing.assert_allclose(td_update(b, tr), deltas[j])
        np.testing.assert_allclose(a.q, b.q)

    def test_head_permutation(self):
        rng = np.random.default_rng(1)
        perm = np.array([2, 0, 3, 1])
        a = MultiHorizonTable(4, 2, GAMMAS)
        b = MultiHorizonTable(4, 2, np.array(GAMMAS)[perm])
        for _ in range(300):
            tr = (int(rng.integers(4)), int(rng.integers(2)), float(rng.normal()), int(rng.integers(4)), bool(rng.random() < 0.2))
            td_update(a, tr)
            td_update(b, tr)
        np.testing.assert_array_equal(a.q[:, :, perm], b.q)

    def test_linear_variant_one_hot_matches_table(self):
        lin = LinearMultiHorizon(np.eye(3), 2, GAMMAS, lr=0.5, bias=False)
        tab = MultiHorizonTable(3, 2, GAMMAS, lr=0.5)
        rng = np.random.default_rng(2)
        for _ in range(200):
            tr = (int(rng.integers(3)), int(rng.integers(2)), float(rng.normal()), int(rng.integers(3)), bool(rng.random() < 0.3))
            np.testing.assert_allclose(td_update(lin, tr), td_update(tab, tr), atol=1e-12)
        np.testing.assert_allclose(lin.q, tab.q, atol=1e-12)

    def test_linear_variant_with_bias_learns_start_value(self):
        from hazard_discount.discounting import DiscountSpec
        from hazard_discount.mdp import exact_q, greedy_actions

        g = hazard_gridworld()
        lin = LinearMultiHorizon(np.eye(25), 4, [0.9], lr=0.1)
        rng = np.random.default_rng(0)
        for _ in range(60_000):
            s, a = int(rng.integers(25)), int(rng.integers(4))
            r, nxt = g.step(s, a, rng)
            td_update(lin, (s, a, r, 0 if nxt is None else nxt, nxt is None))
        q = exact_q(g, DiscountSpec.exponential(0.9))
        assert abs(lin.q[0, :, 0].max() - q[0].max()) < 0.05
        assert int(lin.q[0, :, 0].argmax()) in greedy_actions(q)[0]


class TestActing:
    def setup_method(self):
        self.table = MultiHorizonTable(2, 3, GAMMAS)
        self.table.q[0, :, -1] = [0.1, 0.7, 0.3]
        self.table.q[0, :, 0] = [0.9, 0.0, 0.0]

    def test_largest_gamma_greedy(self):
        assert act(ActingPolicy.largest_gamma(), self.table, 0, np.random.default_rng(0)) == 1
        assert act(ActingPolicy.single_gamma(0), self.table, 0, np.random.default_rng(0)) == 0

    def test_ties_lowest_index(self):
        assert act(ActingPolicy.largest_gamma(), self.table, 1, np.random.default_rng(0)) == 0

    def test_full_exploration_is_uniform(self):
        rng = np.random.default_rng(3)
        draws = [act(ActingPolicy.largest_gamma(epsilon=1.0), self.table, 0, rng) for _ in range(100_000)]
        counts = np.bincount(draws, minlength=3)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_deterministic_given_seed(self):
        pol = ActingPolicy.largest_gamma(epsilon=0.5)
        a = [act(pol, self.table, 0, np.random.default_rng(9)) for _ in range(5)]
        assert len(set(a)) == 1

    def test_aggregated_needs_weights(self):
        with pytest.raises(ConfigurationError):
            ActingPolicy("aggregated")
        with pytest.raises(DomainError):
            ActingPolicy.largest_gamma(epsilon=1.5)

    def test_aggregated_head_mismatch(self):
        w = riemann_weights(build_ladder(0.99, 10, 1.0), HazardPrior.exponential(1.0))
        with pytest.raises(ShapeError):
            act(ActingPolicy.aggregated(w), self.table, 0, np.random.default_rng(0))


class TestPathworldTraining:
    def test_heads_converge(self):
        ladder = build_ladder(0.9999, 100, 0.05)
        table = train_pathworld(ladder, 8, sweeps=2)
        np.testing.assert_allclose(table.q[0], pathworld_gamma_values(8, ladder.gammas), atol=1e-3)
        assert bellman_residual(table, pathworld_build(8)) < 1e-12

    def test_forward_order_needs_more_sweeps(self):
        gammas = [0.9, 0.99]
        slow = train_pathworld(gammas, 4, sweeps=1, order="forward")
        assert bellman_residual(slow, pathworld_build(4)) > 0.1
        with pytest.raises(DomainError):
            train_pathworld(gammas, 4, order="sideways")

    def test_aggregated_choice(self):
        ladder = build_ladder(0.9999, 100, 0.05)
        table = train_pathworld(ladder, 10, sweeps=2)
        pol = ActingPolicy.aggregated(riemann_weights(ladder, HazardPrior.exponential(0.05)))
        i = np.arange(1, 11)
        exact = i / (1 + 0.05 * i**2)
        best = set(np.flatnonzero(np.isclose(exact, exact.max(), rtol=1e-12)) + 1)
        assert act(pol, table, 0, np.random.default_rng(0)) + 1 in best

    def test_table_csv(self, tmp_path):
        table = train_pathworld([0.5, 0.9], 2)
        write_table_csv(tmp_path / "t.csv", table)
        rows = list(csv.DictReader(open(tmp_path / "t.csv")))
        assert len(rows) == table.q.size


class TestReplay:
    def test_defers_until_min_fill(self):
        buf = PrioritizedReplayBuffer(10, min_fill=3, rng=np.random.default_rng(0))
        buf.add("a")
        buf.add("b")
        assert buf.sample(2) is None
        buf.add("c")
        assert buf.sample(2) is not None

    def test_uniform_priorities_sample_uniformly(self):
        buf = PrioritizedReplayBuffer(8, rng=np.random.default_rng(4))
        for j in range(8):
            buf.add(j, priority=0.3)
        idx = np.concatenate([buf.sample(64)[0] for _ in range(2000)])
        assert stats.chisquare(np.bincount(idx, minlength=8)).pvalue > 1e-3
        _, _, w = buf.sample(16)
        np.testing.assert_allclose(w, 1.0)

    def test_proportional(self):
        buf = PrioritizedReplayBuffer(2, alpha=1.0, eps=0.0, rng=np.random.default_rng(0))
        buf.add("x", 1.0)
        buf.add("y", 3.0)
        np.testing.assert_allclose(buf.probabilities(), [0.25, 0.75])
        _, _, w = buf.sample(200)
        assert set(np.round(w, 12)) <= {1.0, round((2 * 0.75 / (2 * 0.25)) ** -0.4, 12)}

    def test_new_items_get_max_priority(self):
        buf = PrioritizedReplayBuffer(4)
        buf.add("a", 5.0)
        buf.add("b")
        assert buf.priorities[1] == 5.0

    def test_ring_overwrites_oldest(self):
        buf = PrioritizedReplayBuffer(2)
        for x in "abc":
            buf.add(x)
        assert len(buf) == 2 and buf.items[0] == "c"

    def test_invalid_priority(self):
        buf = PrioritizedReplayBuffer(2)
        with pytest.raises(DomainError):
            buf.add("a", -1.0)
        buf.add("a")
        with pytest.raises(DomainError):
            buf.update_priorities([0], [np.nan])

    def test_priority_schemes(self):
        d = np.array([[1.0, -2.0, 3.0], [0.0, 0.5, -0.25]])
        np.testing.assert_allclose(priority_from_td(d, "mean_td"), [2.0, 0.25])
        np.testing.assert_array_equal(priority_from_td(d, "largest_gamma_td"), [3.0, 0.25])
        with pytest.raises(DomainError):
            priority_from_td(d, "max")

    @pytest.mark.parametrize("scheme", ["mean_td", "largest_gamma_td"])
    def test_audit_and_determinism(self, scheme, tmp_path):
        cfg = ReplayConfig(steps=600, min_fill=50, eval_every=200)
        ladder = build_ladder(0.99, 4, 0.01)
        t1, c1, a1 = train_with_replay(hazard_gridworld(), ladder, scheme, cfg, seed=5)
        t2, c2, a2 = train_with_replay(hazard_gridworld(), ladder, scheme, cfg, seed=5)
        np.testing.assert_array_equal(t1.q, t2.q)
        assert c1 == c2 and len(c1) == 3
        assert len(a1.batches) == 600 - 50 + 1
        for b in a1.batches:
            np.testing.assert_array_equal(b["priorities"], priority_from_td(b["deltas"], scheme))
        a1.write_csv(tmp_path / "audit.csv")
        write_learning_curve_csv(tmp_path / "curve.csv", c1, {"seed": 5})
        assert (tmp_path / "audit.csv").read_text().startswith("step,slot,index,priority,deltas")

    def test_unknown_scheme(self):
        with pytest.raises(DomainError):
            train_with_replay(hazard_gridworld(), [0.9], "random")
