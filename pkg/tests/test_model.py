import numpy as np
import pytest

from snaklat import lattice, model
from snaklat.lattice import OFFSITE, ONSITE
from snaklat.model import PatternId, UBAR, VBAR, anti_continuum_pattern

MUS = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99]

ALL = [model.cubic_quintic(), model.quadratic_cubic(), model.cubic_logistic()]


class TestBuiltins:
    def test_cubic_quintic_roots(self):
        nl = model.cubic_quintic()
        assert nl.u_minus(0.75) == pytest.approx(np.sqrt(0.5), abs=1e-15)
        assert nl.u_plus(0.75) == pytest.approx(np.sqrt(1.5), abs=1e-15)
        assert nl.f(nl.u_minus(0.75), 0.75) == pytest.approx(0.0, abs=1e-13)
        assert nl.u_minus(1.0) == nl.u_plus(1.0) == 1.0

    def test_quadratic_cubic_roots(self):
        nl = model.quadratic_cubic()
        assert nl.u_minus(0.75) == 0.5
        assert nl.u_plus(0.75) == 1.5
        # -0.375 + 0.5 - 0.125 = 0
        assert nl.f(0.5, 0.75) == pytest.approx(0.0, abs=1e-16)

    def test_cubic_logistic_roots(self):
        nl = model.cubic_logistic()
        for mu in MUS:
            assert nl.u_minus(mu) == mu
            assert nl.u_plus(mu) == 1.0

    @pytest.mark.parametrize("nl", ALL, ids=lambda n: n.family)
    def test_roots_and_sign_pattern(self, nl):
        for mu in MUS:
            um, up = nl.u_minus(mu), nl.u_plus(mu)
            assert 0.0 <= um < up
            assert abs(nl.f(um, mu)) < 1e-12
            assert abs(nl.f(up, mu)) < 1e-12
            assert nl.f_u(0.0, mu) < 0
            assert nl.f_u(um, mu) > 0
            assert nl.f_u(up, mu) < 0

    @pytest.mark.parametrize("nl", ALL, ids=lambda n: n.family)
    def test_zero_is_root(self, nl):
        for mu in MUS:
            assert nl.f(0.0, mu) == 0.0

    def test_oddness_cubic_quintic(self):
        nl = model.cubic_quintic()
        rng = np.random.default_rng(0)
        u = rng.uniform(-2, 2, size=50)
        mu = rng.uniform(0, 1, size=50)
        assert np.allclose(nl.f(-u, mu), -nl.f(u, mu), atol=1e-14)

    @pytest.mark.parametrize("nl", ALL, ids=lambda n: n.family)
    def test_derivatives_match_finite_differences(self, nl):
        rng = np.random.default_rng(1)
        h = 1e-5
        for _ in range(20):
            u = rng.uniform(-1.5, 1.5)
            mu = rng.uniform(0.05, 0.95)
            fd_u = (nl.f(u + h, mu) - nl.f(u - h, mu)) / (2 * h)
            fd_mu = (nl.f(u, mu + h) - nl.f(u, mu - h)) / (2 * h)
            fd_uu = (nl.f_u(u + h, mu) - nl.f_u(u - h, mu)) / (2 * h)
            fd_umu = (nl.f_u(u, mu + h) - nl.f_u(u, mu - h)) / (2 * h)
            assert abs(fd_u - nl.f_u(u, mu)) < 200 * h**2
            assert abs(fd_mu - nl.f_mu(u, mu)) < 200 * h**2
            assert abs(fd_uu - nl.f_uu(u, mu)) < 200 * h**2
            assert abs(fd_umu - nl.f_umu(u, mu)) < 200 * h**2

    def test_window_enforced(self):
        nl = model.cubic_quintic()
        with pytest.raises(ValueError):
            nl.u_plus(1.5)

    def test_builtin_lookup(self):
        assert model.builtin_nonlinearity("cubic_quintic").family == "cubic_quintic"
        with pytest.raises(ValueError):
            model.builtin_nonlinearity("unknown")

    def test_endpoint_classification(self):
        assert model.cubic_quintic().endpoint_lo == model.PITCHFORK
        assert model.cubic_quintic().endpoint_hi == model.FOLD
        assert model.quadratic_cubic().endpoint_lo == model.TRANSCRITICAL
        assert model.quadratic_cubic().endpoint_hi == model.FOLD
        assert model.cubic_logistic().endpoint_lo == model.TRANSCRITICAL
        assert model.cubic_logistic().endpoint_hi == model.TRANSCRITICAL


class TestPolynomialFamily:
    def test_reproduces_cubic_quintic(self):
        # f = -mu*u + 2u^3 - u^5: c[1][1] = -1, c[0][3] = 2, c[0][5] = -1
        c = np.zeros((2, 6))
        c[1, 1] = -1.0
        c[0, 3] = 2.0
        c[0, 5] = -1.0
        nl = model.polynomial(c)
        ref = model.cubic_quintic()
        for mu in [0.2, 0.5, 0.8]:
            assert nl.u_minus(mu) == pytest.approx(ref.u_minus(mu), abs=1e-10)
            assert nl.u_plus(mu) == pytest.approx(ref.u_plus(mu), abs=1e-10)
            u = np.linspace(-1.5, 1.5, 7)
            assert np.allclose(nl.f(u, mu), ref.f(u, mu), atol=1e-13)
            assert np.allclose(nl.f_u(u, mu), ref.f_u(u, mu), atol=1e-13)
            assert np.allclose(nl.f_mu(u, mu), ref.f_mu(u, mu), atol=1e-13)


class TestPatterns:
    def test_ubar_placement(self):
        nl = model.cubic_quintic()
        g = lattice.wedge(4, OFFSITE)
        u = anti_continuum_pattern(PatternId(2, 1, UBAR, OFFSITE), 0.5, nl, grid=g)
        up = nl.u_plus(0.5)
        assert u[(1, 1)] == up
        assert u[(2, 1)] == up
        assert u[(2, 2)] == 0.0
        for m in (1, 2, 3):
            assert u[(3, m)] == 0.0
        for m in (1, 2, 3, 4):
            assert u[(4, m)] == 0.0

    def test_vbar_placement(self):
        nl = model.cubic_quintic()
        g = lattice.wedge(4, OFFSITE)
        v = anti_continuum_pattern(PatternId(2, 2, VBAR, OFFSITE), 0.5, nl, grid=g)
        assert v[(1, 1)] == nl.u_plus(0.5)
        assert v[(2, 1)] == nl.u_plus(0.5)
        assert v[(2, 2)] == nl.u_minus(0.5)
        assert v[(3, 1)] == 0.0

    def test_ubar_equals_vbar_at_mu_one(self):
        nl = model.cubic_quintic()
        g = lattice.wedge(5, ONSITE)
        for N, M in [(1, 1), (3, 2), (4, 4)]:
            u = anti_continuum_pattern(PatternId(N, M, UBAR, ONSITE), 1.0, nl, grid=g)
            v = anti_continuum_pattern(PatternId(N, M, VBAR, ONSITE), 1.0, nl, grid=g)
            assert np.array_equal(u.values, v.values)

    def test_junction_at_mu_zero(self):
        nl = model.cubic_quintic()
        g = lattice.wedge(5, OFFSITE)
        u = anti_continuum_pattern(PatternId(3, 1, UBAR, OFFSITE), 0.0, nl, grid=g)
        v = anti_continuum_pattern(PatternId(3, 2, VBAR, OFFSITE), 0.0, nl, grid=g)
        assert np.array_equal(u.values, v.values)
        u = anti_continuum_pattern(PatternId(2, 2, UBAR, OFFSITE), 0.0, nl, grid=g)
        v = anti_continuum_pattern(PatternId(3, 1, VBAR, OFFSITE), 0.0, nl, grid=g)
        assert np.array_equal(u.values, v.values)

    def test_pattern_exceeds_domain(self):
        nl = model.cubic_quintic()
        g = lattice.wedge(3, OFFSITE)
        with pytest.raises(ValueError, match="exceeds"):
            anti_continuum_pattern(PatternId(4, 1, UBAR, OFFSITE), 0.5, nl, grid=g)

    def test_pattern_id_validation(self):
        with pytest.raises(ValueError):
            PatternId(2, 3, UBAR, OFFSITE)
        with pytest.raises(ValueError):
            PatternId(2, 0, UBAR, OFFSITE)


class TestGammaPath:
    def test_traversal_and_junctions(self):
        segments, junctions, exceptional = model.gamma_path(4)
        ids = [(p.N, p.M, p.variant) for p, _ in segments]
        assert ids[0] == (1, 1, VBAR)
        assert ids[1] == (1, 1, UBAR)
        assert ids[-1] == (4, 4, UBAR)
        assert len(segments) == 2 * 10  # (N,M) pairs with M <= N <= 4
        ju = {(a.N, a.M, a.variant, b.N, b.M, b.variant, mu)
              for a, b, mu in junctions}
        assert (3, 1, UBAR, 3, 2, VBAR, 0.0) in ju
        assert (2, 2, UBAR, 3, 1, VBAR, 0.0) in ju
        assert (3, 1, VBAR, 3, 1, UBAR, 1.0) in ju

    def test_exceptional_set(self):
        exceptional = model.exceptional_set(6)
        tagged = {(p.N, p.M, p.variant, mu) for p, mu in exceptional}
        assert (4, 2, UBAR, 1.0) in tagged
        assert (3, 1, UBAR, 1.0) not in tagged
        assert (3, 3, UBAR, 0.0) in tagged
        assert (2, 2, UBAR, 0.0) not in tagged
        assert (5, 3, UBAR, 1.0) in tagged
