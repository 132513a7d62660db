import math

import numpy as np
import pytest

from lobqueue.errors import DomainError
from lobqueue.model import (CorrelationTriple, EmpiricalReset, LogNormalReset, ModelParams,
                            OrthantState, SphericalPoint, WedgeState, boundary_Z,
                            compute_imbalance, decorrelate_2d, decorrelate_3d, from_spherical,
                            phi_max, recorrelate_2d, recorrelate_3d, state_from_imbalance,
                            strip_coordinates, theta_of_zeta, to_polar, to_spherical,
                            uptick_probability, uptick_probability_polar, whitening_matrix,
                            zeta_of_theta)

SURROGATE = CorrelationTriple(-0.1, 0.7, -0.7)

# Brute-force correlated walk (tests/oracles.py, hitting_2d) at x=1, y=2,
# rho=-0.5 with 10^6 paths, dt=1e-3, seed=11.
ORACLE_2D_MEAN = 0.318481
ORACLE_2D_SE = 0.000466


def random_triples(rng, n):
    out = []
    while len(out) < n:
        r = rng.uniform(-0.9, 0.9, 3)
        if 1 - r @ r + 2 * r.prod() > 0.05:
            out.append(CorrelationTriple(*r))
    return out


class TestImbalance:
    @pytest.mark.parametrize("qb, qa, expected", [(100, 100, 0.0), (300, 100, 0.5),
                                                  (0, 250, -1.0)])
    def test_examples(self, qb, qa, expected):
        assert compute_imbalance(qb, qa) == expected

    def test_vectorized(self):
        np.testing.assert_array_equal(compute_imbalance([1, 3], [1, 1]), [0.0, 0.5])

    @pytest.mark.parametrize("qb, qa", [(0, 0), (-1, 2)])
    def test_invalid(self, qb, qa):
        with pytest.raises(DomainError):
            compute_imbalance(qb, qa)


class TestWedge:
    @pytest.mark.parametrize("rho, expected", [(0.0, math.pi / 2), (-0.1, 1.470629),
                                               (-0.5, math.pi / 3)])
    def test_phi_max(self, rho, expected):
        assert phi_max(rho) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
    def test_phi_max_invalid(self, rho):
        with pytest.raises(DomainError):
            phi_max(rho)

    def test_decorrelate_examples(self):
        assert decorrelate_2d(1.0, 1.0, 0.0) == (1.0, 1.0)
        a, b = decorrelate_2d(1.0, 0.0, -0.5)
        assert (a, b) == (1.0, pytest.approx(0.5 / math.sqrt(0.75), abs=1e-15))

    def test_decorrelate_round_trip(self):
        rng = np.random.default_rng(0)
        x, y = rng.uniform(0, 5, (2, 50))
        for rho in (-0.9, -0.1, 0.0, 0.6):
            xx, yy = recorrelate_2d(*decorrelate_2d(x, y, rho), rho)
            np.testing.assert_allclose(xx, x, atol=1e-12)
            np.testing.assert_allclose(yy, y, atol=1e-12)

    @pytest.mark.parametrize("ab, r, phi", [((0, 1), 1.0, 0.0), ((1, 0), 1.0, math.pi / 2),
                                            ((1, 1), math.sqrt(2), math.pi / 4)])
    def test_polar(self, ab, r, phi):
        assert to_polar(*ab) == (pytest.approx(r), pytest.approx(phi))

    def test_polar_origin(self):
        with pytest.raises(DomainError):
            to_polar(0.0, 0.0)

    @pytest.mark.parametrize("rho", [-0.9, -0.5, 0.0, 0.3, 0.9])
    def test_uptick_symmetric_state(self, rho):
        assert uptick_probability(2.5, 2.5, rho) == pytest.approx(0.5, abs=1e-15)

    def test_uptick_boundary(self):
        assert uptick_probability(1.0, 1e-12, 0.0) == pytest.approx(1.0, abs=1e-9)
        assert uptick_probability(1.0, 0.0, 0.0) == 1.0
        assert uptick_probability(0.0, 1.0, 0.0) == 0.0

    def test_uptick_matches_polar_form(self):
        rng = np.random.default_rng(1)
        for rho in (-0.8, -0.1, 0.0, 0.5):
            x, y = rng.uniform(0.01, 3, (2, 100))
            np.testing.assert_allclose(uptick_probability(x, y, rho),
                                       uptick_probability_polar(x, y, rho), atol=1e-13)

    def test_uptick_against_walk_oracle(self):
        p = uptick_probability(1.0, 2.0, -0.5)
        assert abs(p - ORACLE_2D_MEAN) <= 3 * ORACLE_2D_SE

    def test_uptick_invalid(self):
        with pytest.raises(DomainError):
            uptick_probability(1.0, 1.0, 1.0)
        with pytest.raises(DomainError):
            uptick_probability(0.0, 0.0, 0.1)


class TestCorrelationTriple:
    def test_paper_figure_triple_is_not_positive_definite(self):
        with pytest.raises(DomainError, match="D = -0.162"):
            CorrelationTriple(-0.1, 0.8, -0.8)

    def test_det_and_cholesky(self):
        c = SURROGATE
        assert c.det == pytest.approx(np.linalg.det(c.matrix()), abs=1e-14)
        L = c.cholesky()
        np.testing.assert_allclose(L @ L.T, c.matrix(), atol=1e-14)

    def test_mirrored_swaps_cross_terms(self):
        m = CorrelationTriple(0.2, 0.3, -0.1).mirrored()
        assert (m.rho_xy, m.rho_xz, m.rho_yz) == (0.2, -0.1, 0.3)

    @pytest.mark.parametrize("rho", [(1.0, 0, 0), (0, -1.2, 0), (0.9, 0.9, -0.9)])
    def test_invalid(self, rho):
        with pytest.raises(DomainError):
            CorrelationTriple(*rho)


class TestOrthantMaps:
    def test_identity_at_zero_correlation(self):
        assert decorrelate_3d(1.0, 2.0, 3.0, CorrelationTriple(0, 0, 0)) == (1.0, 2.0, 3.0)

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        for c in random_triples(rng, 10):
            x, y, z = rng.uniform(0, 4, (3, 20))
            back = recorrelate_3d(*decorrelate_3d(x, y, z, c), c)
            for u, v in zip(back, (x, y, z)):
                np.testing.assert_allclose(u, v, atol=1e-12)

    def test_whitening_matrix_consistent(self):
        A = whitening_matrix(SURROGATE)
        np.testing.assert_allclose(A @ SURROGATE.matrix() @ A.T, np.eye(3), atol=1e-13)

    def test_sample_covariance_is_whitened(self):
        n = 100_000
        rng = np.random.default_rng(3)
        c = SURROGATE
        xyz = rng.standard_normal((n, 3)) @ c.cholesky().T
        abc = np.array(decorrelate_3d(xyz[:, 0], xyz[:, 1], xyz[:, 2], c))
        corr = np.corrcoef(abc)
        off = corr[np.triu_indices(3, 1)]
        assert np.all(np.abs(off) < 3 / math.sqrt(n))

    @pytest.mark.parametrize("abg, r, theta, phi", [
        ((1, 0, 0), 1.0, math.pi / 2, math.pi / 2),
        ((0, 1, 1), math.sqrt(2), math.pi / 4, 0.0),
    ])
    def test_spherical(self, abg, r, theta, phi):
        p = to_spherical(*abg)
        assert (p.r, p.theta, p.phi) == (pytest.approx(r), pytest.approx(theta), pytest.approx(phi))
        assert not p.polar
        np.testing.assert_allclose(from_spherical(p), abg, atol=1e-15)

    def test_spherical_pole(self):
        p = to_spherical(0.0, 0.0, 1.0)
        assert (p.r, p.theta, p.polar) == (1.0, 0.0, True)
        with pytest.raises(DomainError):
            to_spherical(0.0, 0.0, 0.0)
        assert from_spherical(SphericalPoint(2.0, 0.0, 0.0, True)) == (0.0, 0.0, 2.0)

    def test_zeta(self):
        assert zeta_of_theta(math.pi / 2) == pytest.approx(0.0, abs=1e-15)
        th = np.linspace(0.05, 1.5, 20)
        np.testing.assert_allclose(zeta_of_theta(th), -zeta_of_theta(math.pi - th), atol=1e-14)
        np.testing.assert_allclose(theta_of_zeta(zeta_of_theta(th)), th, atol=1e-12)
        with pytest.raises(DomainError):
            zeta_of_theta(0.0)

    def test_boundary_flat_when_trade_process_uncorrelated(self):
        phi = np.linspace(0, phi_max(-0.3), 11)
        np.testing.assert_array_equal(boundary_Z(phi, CorrelationTriple(-0.3, 0, 0)), 0.0)

    def test_boundary_is_image_of_floor(self):
        rng = np.random.default_rng(4)
        for c in [SURROGATE] + random_triples(rng, 5):
            for x, y in rng.uniform(0.01, 5, (20, 2)):
                p = to_spherical(*decorrelate_3d(x, y, 0.0, c))
                assert zeta_of_theta(p.theta) == pytest.approx(boundary_Z(p.phi, c), abs=1e-10)

    def test_interior_below_boundary(self):
        rng = np.random.default_rng(5)
        for c in [SURROGATE] + random_triples(rng, 5):
            x, y, z = rng.uniform(0.01, 5, (3, 200))
            phi, zeta = strip_coordinates(x, y, z, c)
            assert np.all(zeta < boundary_Z(phi, c))


class TestStates:
    def test_from_imbalance(self):
        p = ModelParams(SURROGATE, phi0=3.5, sigma_b=1.5, sigma_a=1.5)
        assert state_from_imbalance(0.0, 3.0, p) == OrthantState(1.0, 1.0, 3.5)
        p = ModelParams(SURROGATE, phi0=0.5)
        assert state_from_imbalance(-0.5, 4.0, p) == OrthantState(1.0, 3.0, 0.5)

    def test_edge_and_clamp(self):
        p = ModelParams(SURROGATE)
        assert state_from_imbalance(1.0, 2.0, p).y == 0.0
        st = state_from_imbalance(1.0, 2.0, p, clamp=True)
        assert st.y > 0 and st.interior

    @pytest.mark.parametrize("imb, depth", [(1.5, 2.0), (0.0, 0.0)])
    def test_invalid(self, imb, depth):
        with pytest.raises(DomainError):
            state_from_imbalance(imb, depth, ModelParams(SURROGATE))

    def test_state_validation(self):
        with pytest.raises(DomainError):
            WedgeState(0.0, 0.0)
        with pytest.raises(DomainError):
            OrthantState(0.0, 0.0, 1.0)
        assert not OrthantState(0.0, 1.0, 1.0).interior


class TestParams:
    def test_defaults_and_replace(self):
        p = ModelParams(SURROGATE)
        q = p.replace(phi0=1.0)
        assert (p.phi0, q.phi0, q.corr) == (3.5, 1.0, SURROGATE)

    @pytest.mark.parametrize("kw", [dict(phi0=-1.0), dict(sigma_b=0.0), dict(tick=0.0),
                                    dict(depth=-2.0)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            ModelParams(SURROGATE, **kw)

    def test_rho_xy_cap(self):
        with pytest.raises(DomainError):
            ModelParams(CorrelationTriple(0.995, 0, 0))

    def test_resets(self):
        rng = np.random.default_rng(0)
        assert LogNormalReset(2.0, 0.0).sample(rng, 3).tolist() == [2.0, 2.0, 2.0]
        e = EmpiricalReset((1.0, 2.0, 9.0))
        assert e.median == 2.0 and set(e.sample(rng, 50)) <= {1.0, 2.0, 9.0}
        with pytest.raises(DomainError):
            EmpiricalReset((1.0, 0.0))
        with pytest.raises(DomainError):
            LogNormalReset(0.0)
