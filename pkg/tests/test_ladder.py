import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hazard_discount.errors import DomainError, ParameterError
from hazard_discount.ladder import ATARI_PRESET, PATHWORLD_PRESET, GammaLadder, build_ladder


class TestBuildLadder:
    def test_atari_preset(self):
        ladder = build_ladder(**ATARI_PRESET)
        # high-precision evaluation of exp(ln(1 - 0.99**100) / 10)
        np.testing.assert_allclose(ladder.b, 0.9554472402468116, rtol=1e-14)
        np.testing.assert_allclose(ladder.gammas[-1], 0.99, atol=1e-12)
        assert len(ladder) == 11

    def test_small_worked_example(self):
        ladder = build_ladder(0.9, 4, 1.0)
        np.testing.assert_allclose(ladder.b, 0.1**0.25, rtol=1e-14)
        np.testing.assert_allclose(ladder.gammas, [0.0, 0.437659, 0.683772, 0.822172, 0.9], atol=1e-6)

    def test_first_point_is_zero(self):
        assert build_ladder(**PATHWORLD_PRESET).gammas[0] == 0.0

    def test_base_formula(self):
        ladder = build_ladder(0.999, 50, 0.2)
        np.testing.assert_allclose(ladder.b, math.exp(math.log(1 - 0.999**5) / 50), rtol=1e-14)

    def test_read_only(self):
        ladder = build_ladder(0.9, 4, 1.0)
        with pytest.raises(ValueError):
            ladder.gammas[1] = 0.5

    @pytest.mark.parametrize(
        "args", [(1.0, 10, 1.0), (0.0, 10, 1.0), (0.9, 1, 1.0), (0.9, 2.5, 1.0), (0.9, 10, 0.0), (0.9, 10, -1.0)]
    )
    def test_domain(self, args):
        with pytest.raises(DomainError):
            build_ladder(*args)

    def test_underflow_names_parameters(self):
        with pytest.raises(ParameterError, match=r"gamma_max=0.9999999999999999.*k=1e\+290"):
            build_ladder(1 - 2**-53, 10, 1e290)

    def test_power_underflow(self):
        with pytest.raises(ParameterError, match="underflows to 0"):
            build_ladder(0.5, 10, 1e-4)

    def test_tiny_power_keeps_top_rung(self):
        # gamma_max**(1/k) ~ 1.8e-19 is below double epsilon relative to 1
        ladder = build_ladder(0.0625, 2, 0.0625)
        np.testing.assert_allclose(ladder.gammas[-1], 0.0625, rtol=1e-12)
        assert np.all(np.diff(ladder.gammas) > 0)

    @settings(max_examples=1000, deadline=None)
    @given(
        gamma_max=st.floats(min_value=1e-3, max_value=0.99999),
        n_gamma=st.integers(min_value=2, max_value=2000),
        k=st.floats(min_value=0.01, max_value=10.0),
    )
    def test_reconstruction_and_ordering(self, gamma_max, n_gamma, k):
        ladder = build_ladder(gamma_max, n_gamma, k)
        if gamma_max ** (1 / k) > 1e-6:
            # b**n is ill-conditioned once b rounds towards 1
            np.testing.assert_allclose((1 - ladder.b**n_gamma) ** k, gamma_max, atol=1e-10)
        np.testing.assert_allclose(ladder.gammas[-1], gamma_max, rtol=1e-12)
        g = ladder.gammas
        assert g[0] == 0.0
        assert np.all(np.diff(g) > 0)
        assert np.all(g <= gamma_max + 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        gamma_max=st.floats(min_value=0.5, max_value=0.9999),
        n_gamma=st.integers(min_value=2, max_value=500),
        k=st.floats(min_value=0.01, max_value=1.0),
    )
    def test_gaps_shrink_towards_one_for_small_exponent(self, gamma_max, n_gamma, k):
        gaps = build_ladder(gamma_max, n_gamma, k).gaps
        assert np.all(np.diff(gaps) <= 1e-15)


class TestSerialisation:
    def test_config_block_round_trip(self):
        ladder = build_ladder(0.9999, 100, 0.05)
        again = GammaLadder.from_config_block(ladder.to_config_block())
        assert again == ladder
        assert hash(again) == hash(ladder)
        np.testing.assert_array_equal(again.gammas, ladder.gammas)

    def test_config_block_comments(self):
        ladder = GammaLadder.from_config_block("# ladder\ngamma_max = 0.9\nn_gamma=4  # rungs\nk=1\n")
        assert ladder == build_ladder(0.9, 4, 1.0)

    def test_missing_key(self):
        with pytest.raises(DomainError, match="k"):
            GammaLadder.from_config_block("gamma_max=0.9\nn_gamma=4\n")

    def test_csv_row(self):
        row = build_ladder(0.9, 4, 1.0).csv_row().split(",")
        assert len(row) == 5
        np.testing.assert_allclose(float(row[-1]), 0.9, atol=1e-15)
