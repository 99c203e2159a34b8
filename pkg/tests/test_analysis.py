from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from pocsim.analysis import (AttackParams, EnergyParams, as_json_number, energy_model,
                             fork_success_prob, rebuild_time)


class TestForkProbability:
    def test_values(self):
        assert fork_success_prob(0) == 1
        assert fork_success_prob(7) == Fraction(1, 128)
        assert float(fork_success_prob(7)) == 0.0078125
        assert fork_success_prob(2, Fraction(1, 4)) == Fraction(1, 16)

    @given(st.integers(0, 200))
    def test_geometric(self, b):
        assert fork_success_prob(b + 1) == fork_success_prob(b) / 2

    def test_bad_input(self):
        with pytest.raises(ValueError):
            fork_success_prob(-1)
        with pytest.raises(ValueError):
            fork_success_prob(1, Fraction(3, 2))


class TestRebuildTime:
    def test_examples(self):
        assert rebuild_time(12, 1, 2) == 24
        assert rebuild_time(12, 2, 1) == 6
        assert rebuild_time(1, 3, 1) == Fraction(1, 3)
        assert rebuild_time(12.0, 1, 2) == 24.0

    def test_errors(self):
        with pytest.raises(ZeroDivisionError):
            rebuild_time(1, 0, 1)
        with pytest.raises(ValueError):
            rebuild_time(-1, 1, 1)

    @given(st.fractions(min_value=0, max_value=100),
           st.fractions(min_value=Fraction(1, 100), max_value=100),
           st.fractions(min_value=Fraction(1, 100), max_value=100))
    def test_scaling(self, alpha, m, h):
        assert rebuild_time(alpha, m, h) * m == alpha * h


class TestEnergy:
    @pytest.mark.parametrize("n", [1, 2, 7, 64, 128])
    def test_factor_n(self, n):
        res = energy_model(n, 3, 10)
        assert res["poc"].energy * n == res["pow"].energy
        assert res["poc"].resources == res["pow"].resources
        assert res["poc"].time * n == res["pow"].time

    def test_exact_types(self):
        assert energy_model(4, 1, 8)["poc"].time == 2
        assert energy_model(3, 1, 8)["poc"].time == Fraction(8, 3)

    def test_params(self):
        with pytest.raises(ValueError):
            EnergyParams(0, 1, 1)
        with pytest.raises(ValueError):
            AttackParams(m=0)


def test_json_number():
    assert as_json_number(Fraction(4, 2)) == 2 and as_json_number(Fraction(1, 8)) == 0.125
    assert as_json_number(3.5) == 3.5
