import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_system
from timely_sched.model import ChannelModel, ResourceGrid, SuccessCurve, UserConfig
from timely_sched.sps import (
    PolicyTable,
    expected_resource,
    expected_reward,
    solve,
    solve_imperfect,
    solve_perfect,
    table_to_csv,
)
from timely_sched.static_analytic import StaticUser, value_imperfect_static, value_perfect_static


def brute_force(user, lam, grid, imperfect=False):
    """Plain-loop backward induction written from the three-regime description."""
    Z = user.zeta(grid).tolist()
    P = user.channel.P.tolist()
    levels = grid.levels.tolist()
    K, tau_n, D, beta, p = user.channel.K, user.deadline, user.window, user.weight, user.p
    H = tau_n + D
    V = [[0.0] * K]
    for tau in range(1, H + 1):
        row = []
        for i in range(K):
            cont = sum(P[i][j] * V[tau - 1][j] for j in range(K))
            if imperfect and tau == tau_n + 1:
                succ, fail = p * beta, p * cont
            elif imperfect and tau > tau_n + 1:
                succ, fail = p * beta, cont
            else:
                succ, fail = beta, cont
            row.append(max(-lam * e + z * succ + (1 - z) * fail for e, z in zip(levels, Z[i])))
        V.append(row)
    return np.array(V)


def static_user(zeta, beta, tau, D=0, p=1.0, q=0.0, a=0.5):
    return StaticUser(zeta=zeta, beta=beta, a=a, tau=tau, D=D, p=p, q=q)


class TestPerfect:
    def test_enumeration_example(self):
        grid = ResourceGrid(np.array([0.0, 0.5, 1.0]))
        user = UserConfig(1.0, 2, 2.0, 0, 1.0, 0.0, ChannelModel.static(), SuccessCurve.table([[0.0, 0.5, 1.0]]))
        vt, pt = solve_perfect(user, 0.5, grid)
        assert vt.V[1, 0] == pytest.approx(1.5, abs=1e-15)
        assert pt.levels[1, 0] == 1.0
        assert vt.V[2, 0] == pytest.approx(1.5, abs=1e-15)
        assert pt.levels[2, 0] == 0.0

    def test_static_closed_form(self):
        su = static_user(0.5, 3.0, 2)
        vt, _ = solve_perfect(su.to_user(), 1.0, ResourceGrid.binary())
        assert vt.V[1, 0] == pytest.approx(0.5, abs=1e-12)
        assert vt.V[2, 0] == pytest.approx(0.75, abs=1e-12)
        assert vt.V[2, 0] == pytest.approx(value_perfect_static(su, 1.0, 2), abs=1e-12)

    def test_expired_row_zero(self, preset):
        vt, _ = solve(preset.users[3], 0.25, preset.grid, "perfect")
        assert np.all(vt.V[0] == 0)
        assert vt.horizon == 7

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(0, 2))
    def test_matches_brute_force(self, lam, K, window):
        s = small_system(K=K, levels=21, window=window)
        for u in s.users:
            vt, _ = solve_perfect(u, lam, s.grid)
            np.testing.assert_allclose(vt.V, brute_force(u, lam, s.grid), atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3))
    def test_value_properties(self, lam, K):
        s = small_system(K=K)
        for u in s.users:
            vt, pt = solve_perfect(u, lam, s.grid)
            assert np.all(vt.V >= 0) and np.all(vt.V < u.weight)
            assert np.all(np.diff(vt.V, axis=0) >= -1e-12)
            big, _ = solve_perfect(u, lam, s.grid, tie="largest")
            np.testing.assert_allclose(big.V, vt.V, atol=1e-12)
            assert np.all(np.isin(pt.levels, s.grid.levels))

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(0, 3))
    def test_lazy_policy(self, lam, K, window):
        s = small_system(K=K, levels=81, step=0.025, window=window)
        for u in s.users:
            _, pt = solve_perfect(u, lam, s.grid)
            assert np.all(pt.levels[2:] <= pt.levels[1:-1])


class TestImperfect:
    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(1, 3), st.floats(0.55, 1.0))
    def test_matches_brute_force(self, lam, K, window, p):
        s = small_system(K=K, levels=21, window=window, p=p)
        for u in s.users:
            vt, _ = solve_imperfect(u, lam, s.grid)
            np.testing.assert_allclose(vt.V, brute_force(u, lam, s.grid, imperfect=True), atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.integers(1, 3))
    def test_perfect_prediction_is_special_case(self, lam, K, window):
        s = small_system(K=K, window=window, p=1.0, q=0.0)
        for u in s.users:
            a, pa = solve_imperfect(u, lam, s.grid)
            b, pb = solve_perfect(u, lam, s.grid)
            assert np.array_equal(a.V, b.V)
            assert np.array_equal(pa.index, pb.index)

    @settings(max_examples=20, deadline=None)
    @given(st.floats(0.0, 3.0), st.integers(1, 3), st.floats(0.55, 0.99))
    def test_value_bounds(self, lam, K, p):
        s = small_system(K=K, p=p)
        for u in s.users:
            vt, _ = solve_imperfect(u, lam, s.grid)
            assert np.all(vt.V >= 0) and np.all(vt.V < u.weight)
            assert np.all(vt.V[u.deadline + 1 :] < p * u.weight)

    def test_rows_below_reveal_equal_zero_prediction(self, preset):
        u = preset.users[1]
        a, _ = solve(u, 0.3, preset.grid, "imperfect")
        b, _ = solve(u, 0.3, preset.grid, "zero")
        assert np.array_equal(a.V[: u.deadline + 1], b.V)

    @pytest.mark.parametrize("p, expected", [(0.9, 0.575), (0.5, 0.25)])
    def test_static_closed_form(self, p, expected):
        su = static_user(0.5, 3.0, 1, D=1, p=p, q=0.0, a=0.5)
        vt, _ = solve_imperfect(su.to_user(), 1.0, ResourceGrid.binary())
        assert vt.V[2, 0] == pytest.approx(expected, abs=1e-12)
        assert vt.V[2, 0] == pytest.approx(value_imperfect_static(su, 1.0, 1), abs=1e-12)

    def test_needs_window(self, preset):
        with pytest.raises(ValueError):
            solve_imperfect(preset.users[0].replace(window=0), 0.1, preset.grid)

    def test_negative_price(self, preset):
        with pytest.raises(ValueError):
            solve_perfect(preset.users[0], -0.1, preset.grid)


class TestExpectedResource:
    def test_static_always_transmit(self):
        su = static_user(0.5, 3.0, 2)
        user = su.to_user()
        _, pt = solve_perfect(user, 0.1, ResourceGrid.binary())
        E = expected_resource(user, pt, ResourceGrid.binary())
        assert np.all(pt.levels[1:] == 1.0)
        assert E[2, 0] == pytest.approx(1.5, abs=1e-12)

    def test_zero_policy(self, small):
        u = small.users[0]
        idx = np.zeros((u.deadline + u.window + 1, u.channel.K), dtype=np.int64)
        pt = PolicyTable(idx, small.grid.levels[idx], u.deadline, u.window, 1.0, "perfect")
        assert np.all(expected_resource(u, pt, small.grid) == 0)
        assert np.all(expected_reward(u, pt, small.grid) == 0)

    def test_dimension_mismatch(self, small):
        u = small.users[0]
        _, pt = solve_perfect(u, 0.5, small.grid)
        with pytest.raises(ValueError):
            expected_resource(u.replace(window=0), pt, small.grid)

    @pytest.mark.parametrize("mode", ["perfect", "imperfect"])
    def test_monte_carlo(self, small, mode):
        """Energy and reward of 10^6 simulated packet lifetimes started from the stationary law."""
        u = small.users[1]
        lam = 0.6
        _, pt = solve(u, lam, small.grid, mode)
        E = expected_resource(u, pt, small.grid)
        R = expected_reward(u, pt, small.grid)
        rng = np.random.default_rng(7)
        n, H, K = 10**6, u.deadline + u.window, u.channel.K
        Z, P = u.zeta(small.grid), u.channel.P
        state = rng.choice(K, size=n, p=u.channel.stationary)
        real = rng.random(n) < (u.p if mode == "imperfect" else 1.0)
        alive = np.ones(n, dtype=bool)
        energy, reward = np.zeros(n), np.zeros(n)
        for j in range(H):
            tau = H - j
            if mode == "imperfect" and tau == u.deadline:
                alive &= real
            k = pt.index[tau, state]
            energy += np.where(alive, small.grid.levels[k], 0.0)
            ok = alive & (rng.random(n) < Z[state, k])
            reward += np.where(ok & real, u.weight, 0.0)
            alive &= ~ok
            cum = np.cumsum(P, axis=1)[state]
            state = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), K - 1)
        eta = u.channel.stationary
        for sample, table in ((energy, E), (reward, R)):
            sigma = sample.std() / np.sqrt(n)
            assert abs(sample.mean() - eta @ table[H]) <= 3 * sigma + 1e-12


def test_csv_layout(small):
    u = small.users[0]
    _, pt = solve(u, 0.5, small.grid, "imperfect")
    text = table_to_csv(pt)
    lines = text.strip().splitlines()
    assert lines[0] == "state,2+2,2+1,2,1"
    assert lines[1].startswith("s1,")
    assert len(lines) == 1 + u.channel.K
