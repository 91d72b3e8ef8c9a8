import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timely_sched.experiments import PRESET_P
from timely_sched.model import (
    ChannelModel,
    ErgodicityError,
    GridError,
    ResourceGrid,
    SuccessCurve,
    ValidationError,
    check,
    check_ergodic,
    config_from_dict,
    config_to_dict,
    effective_user,
    load_config,
    predicted_rate,
    save_config,
    stationary_distribution,
    success_prob,
    validate,
)


def dense_stationary(P):
    """Oracle: solve (P^T - I) eta = 0 with the normalisation row replacing one equation."""
    K = P.shape[0]
    A = P.T - np.eye(K)
    A[-1, :] = 1.0
    b = np.zeros(K)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


class TestStationary:
    def test_symmetric_two_state(self):
        np.testing.assert_allclose(stationary_distribution([[0.5, 0.5], [0.5, 0.5]]), [0.5, 0.5])

    def test_single_state(self):
        np.testing.assert_array_equal(stationary_distribution([[1.0]]), [1.0])

    def test_reference_matrix_matches_dense_solve(self):
        P = np.array(PRESET_P)
        eta = stationary_distribution(P)
        np.testing.assert_allclose(eta, dense_stationary(P), atol=1e-10)
        np.testing.assert_allclose(eta @ P, eta, atol=1e-10)
        assert math.isclose(eta.sum(), 1.0, abs_tol=1e-12)

    def test_non_stochastic_rejected(self):
        with pytest.raises(ValidationError):
            stationary_distribution([[0.5, 0.4], [0.5, 0.5]])

    def test_reducible_rejected(self):
        with pytest.raises(ErgodicityError):
            check_ergodic(np.eye(2))

    def test_periodic_rejected(self):
        with pytest.raises(ErgodicityError):
            check_ergodic(np.array([[0.0, 1.0], [1.0, 0.0]]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6).flatmap(lambda k: st.lists(st.floats(0.05, 1.0), min_size=k * k, max_size=k * k)))
    def test_invariant_under_one_more_step(self, flat):
        K = int(round(len(flat) ** 0.5))
        P = np.array(flat).reshape(K, K)
        P /= P.sum(axis=1, keepdims=True)
        eta = stationary_distribution(P)
        np.testing.assert_allclose(eta @ P, eta, atol=1e-10)
        np.testing.assert_allclose(eta, dense_stationary(P), atol=1e-10)


class TestSuccessCurve:
    grid = ResourceGrid.uniform(1e-4, 60001)

    def test_zero_resource_gives_zero(self):
        for s in (1.0, 2.0, 4.0):
            assert success_prob(SuccessCurve.logistic(1.3), 0, 0.0, states=(s,), grid=self.grid) == 0.0

    def test_logistic_hand_value(self):
        z = success_prob(SuccessCurve.logistic(1.1), 0, 1.331, states=(1.0,), grid=self.grid)
        assert z == pytest.approx(2 / (1 + math.exp(-2)) - 1, abs=1e-12)
        assert z == pytest.approx(0.76159, abs=1e-5)

    def test_table_lookup(self):
        grid = ResourceGrid(np.array([0.0, 0.5, 1.0]))
        curve = SuccessCurve.table([[0.0, 0.3, 0.5]])
        assert success_prob(curve, 0, 0.5, states=(1.0,), grid=grid) == 0.3

    def test_off_grid_level(self):
        with pytest.raises(GridError):
            success_prob(SuccessCurve.logistic(1.0), 0, 0.00005, states=(1.0,), grid=self.grid)

    def test_state_out_of_range(self):
        with pytest.raises(IndexError):
            success_prob(SuccessCurve.logistic(1.0), 2, 0.0, states=(1.0,), grid=self.grid)

    def test_memoized_per_grid(self):
        curve = SuccessCurve.logistic(1.2)
        a = curve.matrix((1.0, 2.0), self.grid)
        assert curve.matrix((1.0, 2.0), self.grid) is a

    def test_preset_curves_monotone_concave(self, preset):
        for u in preset.users:
            Z = u.zeta(preset.grid)
            d = np.diff(Z, axis=1)
            assert np.all(d > 0)
            assert np.all(np.diff(d, axis=1) <= 1e-12)


class TestPredictedRate:
    def test_reference_user(self):
        assert predicted_rate(0.7, 0.8, 0.2, 1) == pytest.approx(0.5 / 0.6, abs=1e-12)

    def test_perfect(self):
        assert predicted_rate(0.37, 1.0, 0.0, 1) == pytest.approx(0.37, abs=1e-15)

    def test_violation(self):
        with pytest.raises(ValidationError):
            predicted_rate(0.1, 0.8, 0.2, 1)

    def test_p_not_above_q(self):
        with pytest.raises(ValidationError):
            predicted_rate(0.4, 0.3, 0.5, 1)

    @given(
        st.integers(1, 4),
        st.floats(0.0, 0.49),
        st.floats(0.51, 1.0),
        st.floats(0.0, 1.0),
    )
    def test_round_trip(self, A, q, p, frac):
        a = A * (q + frac * (p - q))
        at = predicted_rate(a, p, q, A)
        assert 0 <= at <= A
        assert at * p + (A - at) * q == pytest.approx(a, abs=1e-12)


class TestValidation:
    def test_preset_is_valid(self, preset):
        assert validate(preset) == []

    def test_p_below_q(self, preset):
        bad = preset.replace(users=(preset.users[0].replace(p=0.3, q=0.5),) + preset.users[1:])
        msgs = [v.message for v in validate(bad)]
        assert "p > q" in msgs

    def test_curve_with_positive_zero(self):
        grid = ResourceGrid(np.array([0.0, 0.5, 1.0]))
        from conftest import small_system

        s = small_system().replace(grid=grid)
        curve = SuccessCurve.table([[0.1, 0.3, 0.4], [0.1, 0.2, 0.3]])
        s = s.map_users(curve=curve)
        msgs = [v.message for v in validate(s)]
        assert "ζ(i,0)=0" in msgs
        assert all(v.user in (0, 1, None) for v in validate(s))

    def test_deadline_above_cap(self, preset):
        msgs = [v.message for v in validate(preset.replace(deadline_cap=3))]
        assert "τ ≤ Γ" in msgs

    def test_check_raises_with_violations(self, preset):
        with pytest.raises(ValidationError) as info:
            check(preset.replace(deadline_cap=3))
        assert info.value.violations

    def test_crossing_curves_rejected(self):
        from conftest import small_system

        s = small_system().replace(grid=ResourceGrid(np.array([0.0, 0.5, 1.0])))
        s = s.map_users(curve=SuccessCurve.table([[0.0, 0.3, 0.4], [0.0, 0.2, 0.5]]))
        assert any("total order" in v.message for v in validate(s))


class TestModes:
    def test_zero_drops_window(self, preset):
        u = effective_user(preset.users[0], "zero")
        assert u.window == 0 and u.p == 1.0 and u.q == 0.0

    def test_perfect_keeps_window(self, preset):
        u = effective_user(preset.users[0], "perfect")
        assert u.window == 2 and u.p == 1.0


class TestSerialization:
    def test_round_trip_dict(self, preset):
        assert config_from_dict(config_to_dict(preset)) == preset

    def test_round_trip_file(self, preset, tmp_path):
        path = tmp_path / "cfg.json"
        save_config(preset, path)
        doc = json.loads(path.read_text())
        assert doc["grid"] == {"step": 0.0001, "count": 60001}
        assert doc["users"][0]["curve"] == {"kind": "logistic", "d": 1.1}
        assert load_config(path) == preset

    def test_explicit_grid_list(self):
        g = ResourceGrid.from_json([0.0, 0.25, 1.0])
        assert g.to_json() == [0.0, 0.25, 1.0]
