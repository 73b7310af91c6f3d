import numpy as np
import pytest

from dimgp.clinic import ClinicConfig, clinic_grid, get_clinic
from dimgp.dimensions import individual_dim_gap
from dimgp.rules import (
    EVOLVED_RULES,
    MANUAL_RULES,
    RULE_NAMES,
    NamedRule,
    dome_profile,
    evolved_individual,
    offset_regimes,
    schedule,
)

C4 = ClinicConfig(4, 0.4, L=84)  # M = 21


class TestSchedules:
    def test_ibfi(self):
        assert schedule("IBFI", C4).tolist() == [0, 21, 42, 63]

    def test_2beg(self):
        assert schedule("2BEG", C4).tolist() == [0, 0, 21, 42]

    def test_mbfi(self):
        assert schedule("MBFI", C4).tolist() == [0, 0, 42, 42]

    def test_rule7(self):
        c = ClinicConfig(20, 0.6)
        assert (c.M, c.V) == pytest.approx((10.5, 6.3))
        assert schedule("RULE7", c)[2] == pytest.approx(10.5 + 0.3 * 6.3)

    def test_unknown_rule(self):
        with pytest.raises(ValueError):
            schedule("FIFO", C4)

    @pytest.mark.parametrize("name", RULE_NAMES)
    def test_feasible_on_every_clinic(self, name):
        for c in clinic_grid():
            s = schedule(name, c)
            assert s.shape == (c.P,) and np.all(np.diff(s) >= 0)
            assert s[0] >= 0 and s[-1] <= c.L

    def test_structural_properties(self):
        for c in clinic_grid():
            assert np.allclose(np.diff(schedule("IBFI", c)), c.M)
            assert (schedule("2BEG", c) == 0).sum() == 2
            assert (schedule("RULE7", c) == 0).sum() == 2

    def test_offset_without_variability_is_ibfi(self):
        c = ClinicConfig(10, 0.0)
        assert np.allclose(schedule("OFFSET", c), schedule("IBFI", c))

    def test_cut_points(self):
        assert NamedRule("OFFSET").cut_points(10) == {"k": 5}
        assert NamedRule("DOME").cut_points(20) == {"k1": 7, "k2": 14}
        assert NamedRule("DOME", {"k1": 2, "k2": 3}).cut_points(10) == {"k1": 2, "k2": 3}
        with pytest.raises(ValueError):
            NamedRule("DOME", {"k1": 5, "k2": 3}).cut_points(10)
        with pytest.raises(ValueError):
            NamedRule("OFFSET", {"k": 11}).cut_points(10)

    def test_cut_point_override_changes_schedule(self):
        c = get_clinic(1)
        a = schedule(NamedRule("DOME"), c)
        b = schedule(NamedRule("DOME", {"k1": 1, "k2": 8}), c)
        assert not np.allclose(a, b)


class TestDomeProfile:
    def test_single_peak(self):
        p = dome_profile([0, 10, 25, 45, 60, 70])
        assert p.intervals.tolist() == [10, 15, 20, 15, 10]
        assert p.is_dome and p.peak == 3

    def test_flat_is_degenerate_dome(self):
        assert dome_profile(schedule("IBFI", get_clinic(1))).is_dome

    def test_increasing_only(self):
        p = dome_profile([0, 1, 3, 6, 10])
        assert p.is_dome and p.peak == 4

    def test_valley_is_not_dome(self):
        assert not dome_profile([0, 10, 15, 18, 23, 33]).is_dome

    def test_trailing_zero_intervals_ignored(self):
        assert dome_profile([0, 10, 25, 35, 35, 35]).is_dome

    def test_rejects_decreasing(self):
        with pytest.raises(ValueError):
            dome_profile([0, 5, 3])


class TestEvolvedFixtures:
    @pytest.mark.parametrize("name", list(EVOLVED_RULES))
    def test_consistent_and_dome(self, name):
        ind = evolved_individual(name)
        assert individual_dim_gap(ind) == 0
        clinic = get_clinic(EVOLVED_RULES[name][1])
        assert dome_profile(schedule(name, clinic)).is_dome

    def test_rule_24_regimes(self):
        c = get_clinic(9)
        assert c.CR == 0.1
        times = schedule("EVOLVED24", c)
        assert offset_regimes(times, c.M) == (4, 7)

    def test_rule_24_by_hand(self):
        # i - CR + min(0.02 i^2, 0.8) - 0.2, times M, clamped at 0 for i = 0
        c = get_clinic(9)
        i = np.arange(10)
        expected = (i - 0.1 + np.minimum(0.02 * i**2, 0.8) - 0.2) * c.M
        expected[0] = 0
        assert np.allclose(schedule("EVOLVED24", c), expected)

    def test_all_names(self):
        assert set(MANUAL_RULES) | set(EVOLVED_RULES) == set(RULE_NAMES)
