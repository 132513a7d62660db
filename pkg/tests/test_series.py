import math

import numpy as np
import pytest

from lobqueue import series as S
from lobqueue.errors import DomainError, IllConditionedError
from lobqueue.model import CorrelationTriple, uptick_probability

SURROGATE = CorrelationTriple(-0.1, 0.7, -0.7)
UNCORRELATED = CorrelationTriple(-0.3, 0.0, 0.0)
TRADE = S.EventKind.NEAR_SIDE_TRADE

# Brute-force walk (tests/oracles.py, first_event_3d) from (1, 1, 1) at the
# surrogate correlations, 10^6 paths, dt=1e-3, seed=12: p_trade and its SE.
ORACLE_3D_TRADE = 0.349649
ORACLE_3D_SE = 0.000477


def random_triples(rng, n):
    out = []
    while len(out) < n:
        r = rng.uniform(-0.9, 0.9, 3)
        if 1 - r @ r + 2 * r.prod() > 0.05:
            out.append(CorrelationTriple(*r))
    return out


class TestGalerkinSystem:
    def test_flat_boundary_is_diagonal(self):
        n = 12
        J, I = S.assemble_system(UNCORRELATED, TRADE, n)
        pm = math.acos(0.3)
        k = math.pi * np.arange(1, n + 1) / pm
        np.testing.assert_allclose(J, np.diag(np.full(n, pm / 2)), atol=1e-13)
        np.testing.assert_allclose(I, (1 - (-1.0) ** np.arange(1, n + 1)) / k, atol=1e-13)

    def test_symmetric(self):
        for c in random_triples(np.random.default_rng(0), 5):
            J, _ = S.assemble_system(c, TRADE, 10)
            np.testing.assert_allclose(J, J.T, rtol=0, atol=1e-14 * np.abs(J).max())

    def test_quadrature_self_convergence(self):
        c = CorrelationTriple(-0.2, 0.3, 0.1)
        J1, I1 = S.assemble_system(c, TRADE, 8, S.QuadratureSpec(64))
        J2, I2 = S.assemble_system(c, TRADE, 8, S.QuadratureSpec(128))
        assert np.abs(J1 - J2).max() < 1e-10
        assert np.abs(I1 - I2).max() < 1e-10

    def test_needs_modes(self):
        with pytest.raises(ValueError):
            S.assemble_system(SURROGATE, TRADE, 0)


class TestCoefficients:
    def test_diagonal_solve(self):
        n = 9
        J, I = S.assemble_system(UNCORRELATED, TRADE, n)
        c = S.solve_coefficients(J, I)
        pm = math.acos(0.3)
        m = np.arange(1, n + 1)
        expected = 2 * (1 - (-1.0) ** m) / (math.pi * m / pm * pm)
        np.testing.assert_allclose(c, expected, atol=1e-13)
        assert np.all(np.abs(c[1::2]) < 1e-15)

    def test_random_systems(self):
        rng = np.random.default_rng(1)
        for n in (3, 10, 25):
            a = rng.standard_normal((n, n))
            J = a @ a.T + n * np.eye(n)
            I = rng.standard_normal(n)
            c = S.solve_coefficients(J, I)
            assert np.abs(J @ c - I).max() < 1e-10

    def test_singular_rejected(self):
        J = np.ones((3, 3))
        with pytest.raises(IllConditionedError):
            S.solve_coefficients(J, np.ones(3))

    def test_normal_equations_agree_with_least_squares(self):
        c = CorrelationTriple(-0.2, 0.3, 0.1)
        a = S.build_solution(c, TRADE, 10, frame="xy", method="normal")
        b = S.build_solution(c, TRADE, 10, frame="xy", method="lstsq")
        pts = np.random.default_rng(2).uniform(0.1, 3, (50, 3))
        np.testing.assert_allclose(a.raw(pts), b.raw(pts), atol=1e-9)

    def test_many_modes_stay_finite(self):
        ev = S.solve_events(SURROGATE, 80)
        p = ev.probabilities(1.0, 1.0, 1.0)
        assert all(0 <= v <= 1 for v in p)


class TestConvergence:
    def test_plain_series_mismatch_shrinks_when_uncorrelated(self):
        # Without corner terms the boundary data jumps at the corners, so the
        # sup norm stays at the Gibbs overshoot; the RMS mismatch must shrink.
        rms = [S.boundary_mismatch(S.build_solution(UNCORRELATED, TRADE, n, frame="xy",
                                                    corner_terms=False)).rms
               for n in (5, 10, 20, 40, 80)]
        assert all(b < a for a, b in zip(rms, rms[1:]))

    def test_corner_terms_make_uncorrelated_case_exact(self):
        sol = S.build_solution(UNCORRELATED, TRADE, 10, frame="xy")
        assert S.boundary_mismatch(sol).max_abs < 1e-11

    def test_surrogate_boundary(self):
        ev = S.solve_events(SURROGATE, 40)
        assert max(S.boundary_mismatch(s).max_abs for s in ev) < 5e-3


class TestEvaluation:
    def test_trade_vanishes_deep_in_z(self):
        sols = S.solve_events(UNCORRELATED, 40)
        assert sols.probabilities(1.0, 1.0, 1e4)[2] < 1e-3
        assert sols.probabilities(1.0, 1.0, 1e4)[2] > sols.probabilities(1.0, 1.0, 1e5)[2]

    def test_trade_near_floor(self):
        for c in (UNCORRELATED, SURROGATE):
            ev = S.solve_events(c, 40)
            tol = S.boundary_mismatch(ev.trade).max_abs + 1e-6
            assert ev.probabilities(1.0, 1.0, 1e-9)[2] == pytest.approx(1.0, abs=tol)

    def test_surrogate_against_walk_oracle(self):
        p = S.event_probabilities(1.0, 1.0, 1.0, SURROGATE)[2]
        assert abs(p - ORACLE_3D_TRADE) <= 3 * ORACLE_3D_SE

    def test_sum_to_one(self):
        rng = np.random.default_rng(3)
        for c in random_triples(rng, 10):
            pts = rng.uniform(0.05, 4, (20, 3))
            up, down, trade = S.event_probabilities(pts[:, 0], pts[:, 1], pts[:, 2], c)
            np.testing.assert_allclose(up + down + trade, 1.0, atol=2e-3)

    def test_mirror_symmetric_correlations(self):
        # Swapping bid and ask maps (rho_xz, rho_yz) to (rho_yz, rho_xz).
        c = CorrelationTriple(-0.1, 0.5, 0.5)
        for z in (0.3, 1.0, 4.0):
            up, down, _ = S.event_probabilities(1.3, 1.3, z, c)
            assert abs(up - down) < 1e-10

    def test_opposite_cross_correlations_are_not_symmetric(self):
        up, down, _ = S.event_probabilities(1.0, 1.0, 3.5, SURROGATE)
        assert up - down > 0.01

    def test_mirror_relation(self):
        c = CorrelationTriple(-0.2, 0.4, 0.1)
        up, down, trade = S.event_probabilities(0.7, 1.9, 1.1, c)
        up_m, down_m, trade_m = S.event_probabilities(1.9, 0.7, 1.1, c.mirrored())
        assert up == pytest.approx(down_m, abs=2e-3)
        assert trade == pytest.approx(trade_m, abs=2e-3)

    def test_uncorrelated_limit_is_two_dimensional(self):
        for x, y in ((1.0, 1.0), (0.4, 1.6), (1.8, 0.2)):
            up, down, _ = S.event_probabilities(x, y, 1e5, UNCORRELATED)
            assert up == pytest.approx(uptick_probability(x, y, -0.3), abs=1e-4)
            assert down == pytest.approx(1 - uptick_probability(x, y, -0.3), abs=1e-4)

    def test_vectorized_shapes(self):
        x = np.linspace(0.1, 2, 7)
        up, down, trade = S.event_probabilities(x, 1.0, 2.0, SURROGATE)
        assert up.shape == down.shape == trade.shape == (7,)
        assert isinstance(S.event_probabilities(1.0, 1.0, 1.0, SURROGATE)[0], float)

    def test_outside_orthant(self):
        with pytest.raises(DomainError):
            S.event_probabilities(-1.0, 1.0, 1.0, SURROGATE)
        with pytest.raises(DomainError):
            S.event_probabilities(0.0, 1.0, 1.0, SURROGATE)

    def test_eval_probability_clamps(self):
        ev = S.solve_events(SURROGATE, 40)
        val, excess = S.eval_probability(ev.trade, 1.0, 1.0, 1e-9, return_excess=True)
        assert 0.0 <= val <= 1.0 and excess >= 0.0

    def test_frames_reported(self):
        ev = S.solve_events(SURROGATE, 40)
        frames = ev.frame_at(np.full(3, 1.0), np.full(3, 1.0), np.array([0.5, 2.0, 6.0]))
        assert set(frames) <= set(S.FRAMES)
        with pytest.raises(ValueError):
            S.build_solution(SURROGATE, TRADE, 5, frame="zz")

    def test_error_estimate_tracks_fixed_frame_error(self):
        # Far from the z = 0 plane and close to y = 0 the xz frame is at its
        # worst; the estimate flags it and the reference is the yz frame.
        st = (1.8, 0.2, 6.0)
        xz = S.solve_events(SURROGATE, 40, frame="xz")
        yz = S.solve_events(SURROGATE, 40, frame="yz")
        err_xz = xz.raw(*st)[2] - yz.raw(*st)[2]
        est_xz = xz.trade.error_estimate(np.array(st))
        assert abs(err_xz) > 3e-4
        assert est_xz == pytest.approx(err_xz, rel=0.5)
        assert abs(yz.trade.error_estimate(np.array(st))) < 1e-5


class TestSerialization:
    def test_text_round_trip(self):
        sol = S.solve_events(SURROGATE, 20).trade
        back = S.SeriesSolution.from_text(sol.to_text())
        pts = np.random.default_rng(4).uniform(0.1, 3, (20, 3))
        np.testing.assert_array_equal(back.raw(pts), sol.raw(pts))
        assert back.frame == sol.frame and back.n_modes == 20

    def test_bad_version(self):
        text = S.solve_events(SURROGATE, 5).trade.to_text().replace("version 1", "version 9")
        with pytest.raises(ValueError):
            S.SeriesSolution.from_text(text)

    def test_boundary_report_faces(self):
        rep = S.boundary_mismatch(S.solve_events(SURROGATE, 20).trade)
        assert set(rep.per_face) == {"x=0", "y=0", "z=0"}
        assert rep.rms <= rep.max_abs
