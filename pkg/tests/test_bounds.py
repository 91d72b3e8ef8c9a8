import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_system
from timely_sched import bounds
from timely_sched.dual import eval_dual, price_cap, subgradient_search
from timely_sched.model import ChannelModel, ResourceGrid, SuccessCurve, ValidationError
from timely_sched.sps import solve
from timely_sched.static_analytic import StaticUser, as_system, improvement_bounds


class TestExtremeStates:
    def test_preset(self, preset):
        for u in preset.users:
            assert bounds.extreme_states(u, preset.grid) == (3, 0)

    def test_single_state(self):
        s = small_system(K=1)
        assert bounds.extreme_states(s.users[0], s.grid) == (0, 0)

    def test_crossing_rows(self):
        s = small_system(K=2).replace(grid=ResourceGrid(np.array([0.0, 0.5, 1.0])))
        u = s.users[0].replace(curve=SuccessCurve.table([[0.0, 0.3, 0.4], [0.0, 0.2, 0.5]]))
        with pytest.raises(ValidationError):
            bounds.extreme_states(u, s.grid)


class TestValueBounds:
    @pytest.mark.parametrize("lam", [0.1, 0.8, 2.5])
    def test_single_state_one_step(self, lam):
        s = small_system(K=1)
        u = s.users[0]
        Vl, Vu = bounds.value_bounds_perfect(u, lam, s.grid)
        vt, _ = solve(u, lam, s.grid, "perfect")
        assert max(0.0, Vl[1]) == pytest.approx(vt.V[1, 0], abs=1e-12)
        assert Vu[1] == pytest.approx(vt.V[1, 0], abs=1e-12)

    def test_large_price(self, small):
        lam = price_cap(small) * 2
        for u in small.users:
            Vl, Vu = bounds.value_bounds_perfect(u, lam, small.grid)
            assert np.all(Vl[1:] < 0)
            assert np.all(Vu >= 0)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(0, 3))
    def test_perfect_sandwich(self, lam, K, window):
        s = small_system(K=K, window=window)
        for u in s.users:
            Vl, Vu = bounds.value_bounds_perfect(u, lam, s.grid)
            vt, _ = solve(u, lam, s.grid, "perfect")
            lo = np.maximum(0.0, Vl)[:, None]
            hi = np.minimum(u.weight, Vu)[:, None]
            assert np.all(lo <= vt.V + 1e-12)
            assert np.all(vt.V <= hi + 1e-12)
            assert np.all(np.diff(Vu) >= -1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(1, 3), st.floats(0.55, 1.0))
    def test_imperfect_sandwich(self, lam, K, window, p):
        s = small_system(K=K, window=window, p=p)
        for u in s.users:
            Lt, Ut = bounds.value_bounds_imperfect(u, lam, s.grid)
            vt, _ = solve(u, lam, s.grid, "imperfect")
            tn = u.deadline
            for w in range(1, window + 1):
                lo = max(0.0, Lt[tn], Lt[tn + w])
                hi = min(p * u.weight, Ut[tn + w])
                assert np.all(lo <= vt.V[tn + w] + 1e-12)
                assert np.all(vt.V[tn + w] <= hi + 1e-12)

    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_reveal_row_scaling(self, small, lam):
        for u in small.users:
            Vl, Vu = bounds.value_bounds_perfect(u, lam, small.grid)
            Lt, Ut = bounds.value_bounds_imperfect(u, lam, small.grid)
            t = u.deadline
            assert Lt[t] == pytest.approx(u.p * Vl[t], abs=1e-12)
            assert Ut[t] == pytest.approx(u.p * Vu[t], abs=1e-12)
            np.testing.assert_array_equal(Lt[:t], Vl[:t])
            np.testing.assert_array_equal(Ut[:t], Vu[:t])

    def test_exact_prediction_reduces(self, small):
        s = small.map_users(p=1.0, q=0.0)
        for u in s.users:
            Vl, Vu = bounds.value_bounds_perfect(u, 0.4, s.grid)
            Lt, Ut = bounds.value_bounds_imperfect(u, 0.4, s.grid)
            np.testing.assert_allclose(Lt, Vl, atol=1e-12)
            np.testing.assert_allclose(Ut, Vu, atol=1e-12)

    def test_tiny_success_series(self):
        z = np.array([1e-12, 0.5])
        G = bounds._geometric(z, 3)
        assert G[0] == pytest.approx(3.0, abs=1e-9)
        assert G[1] == pytest.approx(1.75)


class TestDualBounds:
    @pytest.mark.parametrize("mode", ["zero", "perfect", "imperfect"])
    def test_sandwich(self, small, mode):
        for lam in np.linspace(0, price_cap(small), 20):
            lo, hi = bounds.dual_bounds(small, lam, mode)
            g = eval_dual(small, lam, mode)
            assert lo - 1e-12 <= g <= hi + 1e-12

    def test_gap_independent_of_budget(self, small):
        for lam in (0.2, 0.9):
            a = bounds.dual_bounds(small, lam, "imperfect")
            b = bounds.dual_bounds(small.replace(budget=50.0), lam, "imperfect")
            assert a[1] - a[0] == pytest.approx(b[1] - b[0], abs=1e-12)

    def test_curve_csv(self, small, tmp_path):
        rows = bounds.bound_curve(small, "perfect", [0.0, 0.5])
        text = bounds.bound_curve_csv(rows, tmp_path / "b.csv")
        assert text.splitlines()[0] == "lambda,g,g_lower,g_upper"
        assert (tmp_path / "b.csv").read_text() == text


class TestImprovementBounds:
    def test_no_window(self, small):
        s = small.map_users(window=0)
        lo, hi = bounds.improvement_bounds_general(s, "perfect")
        assert lo <= 0.0 <= hi

    @pytest.mark.parametrize("mode", ["perfect", "imperfect"])
    def test_contains_true_gain(self, small, mode):
        gain = subgradient_search(small, mode).phi - subgradient_search(small, "zero").phi
        lo, hi = bounds.improvement_bounds_general(small, mode)
        assert lo - 1e-6 <= gain <= hi + 1e-6

    def test_single_state_matches_closed_form(self):
        users = [
            StaticUser(zeta=0.45, beta=2.0, a=0.6, tau=2, D=2),
            StaticUser(zeta=0.3, beta=3.1, a=0.4, tau=3, D=2),
        ]
        system = as_system(users, 1.3)
        general = bounds.improvement_bounds_general(system, "perfect")
        closed = improvement_bounds(users, 1.3, "perfect")
        assert general == pytest.approx(closed, abs=1e-6)

    def test_zero_mode_rejected(self, small):
        with pytest.raises(ValueError):
            bounds.improvement_bounds_general(small, "zero")
