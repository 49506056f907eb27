import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qss_sim import _kernels, analysis, qcore
from qss_sim.adversary import FakeSignalParams
from qss_sim.analysis import OverlapParams
from qss_sim.errors import DomainError, EmptyBatchError, NormalizationError

R = 1 / math.sqrt(2)
EPR_SUM = 16 / math.sqrt(2)


@st.composite
def feasible_params(draw):
    z = draw(st.floats(0.0, 1.0))
    r = draw(st.floats(0.0, 1.0)) * 2 * math.sqrt(z * (1 - z))
    th = draw(st.floats(0.0, 2 * math.pi))
    return OverlapParams(r * math.cos(th), r * math.sin(th), z)


def random_fake_signal(rng, dim_e=3):
    v = rng.normal(size=2 * dim_e) + 1j * rng.normal(size=2 * dim_e)
    v /= np.linalg.norm(v)
    return FakeSignalParams(v[:dim_e], v[dim_e:])


class TestOverlapParams:
    def test_cauchy_schwarz_enforced(self):
        with pytest.raises(NormalizationError):
            OverlapParams(1.0, 0.5, 0.5)

    def test_z_plus_t(self):
        with pytest.raises(NormalizationError):
            OverlapParams(0, 0, 0.5, 0.6)

    @settings(max_examples=60)
    @given(feasible_params())
    def test_realize_roundtrip(self, p):
        fp = p.realize()
        assert fp.x == pytest.approx(p.x, abs=1e-12)
        assert fp.q == pytest.approx(p.q, abs=1e-12)
        assert fp.z == pytest.approx(p.z, abs=1e-12)


class TestEightStates:
    def test_epr_states(self):
        s = analysis.eight_states(FakeSignalParams.epr())
        assert s[0].isclose(qcore.PHI_PLUS)
        assert s[1].isclose(qcore.BipartiteState(-qcore.PSI_MINUS.amplitudes))
        expected5 = (qcore.PHI_MINUS.amplitudes + qcore.PSI_PLUS.amplitudes) * R
        np.testing.assert_allclose(s[4].amplitudes, expected5, atol=1e-12)

    def test_norms(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            for s in analysis.eight_states(random_fake_signal(rng)):
                assert abs(np.vdot(s.amplitudes, s.amplitudes) - 1) < 1e-12

    def test_degenerate_product(self):
        s = analysis.eight_states(FakeSignalParams([1, 0], [0, 0]))
        assert s[0].isclose(s[2])
        np.testing.assert_allclose(s[0].amplitudes, [1, 0, 0, 0], atol=1e-12)

    def test_matches_explicit_expansion(self):
        """Each state built by hand from the |0>,|1>,|+>,|-> expansions."""
        rng = np.random.default_rng(11)
        fp = random_fake_signal(rng, dim_e=2)
        al, be = fp.alpha, fp.beta
        k0, k1 = np.array([1, 0]), np.array([0, 1])
        kp, km = (k0 + k1) * R, (k0 - k1) * R
        hand = [
            np.kron(k0, al) + np.kron(k1, be),
            -np.kron(k1, al) + np.kron(k0, be),
            np.kron(k0, al) - np.kron(k1, be),
            np.kron(k1, al) + np.kron(k0, be),
            np.kron(kp, al) + np.kron(km, be),
            -np.kron(km, al) + np.kron(kp, be),
            np.kron(kp, al) - np.kron(km, be),
            np.kron(km, al) + np.kron(kp, be),
        ]
        for got, want in zip(analysis.eight_states(fp), hand):
            np.testing.assert_allclose(got.amplitudes, want, atol=1e-12)

    def test_epr_gram_structure(self):
        """Only {1,2}x{7,8} and {3,4}x{5,6} overlap (1/sqrt2) at the EPR point."""
        g = np.abs(analysis.gram(analysis.eight_states(FakeSignalParams.epr())))
        nonzero = {(i, j) for i in (0, 1) for j in (6, 7)} | {(i, j) for i in (2, 3) for j in (4, 5)}
        nonzero |= {(j, i) for i, j in nonzero}
        for i, j in itertools.product(range(8), repeat=2):
            if i == j:
                assert abs(g[i, j] - 1) < 1e-12
            elif (i, j) in nonzero:
                assert abs(g[i, j] - R) < 1e-12
            else:
                assert g[i, j] < 1e-12

    @settings(max_examples=40)
    @given(feasible_params())
    def test_gram_hermitian_unit_diagonal(self, p):
        g = analysis.gram(analysis.eight_states(p.realize()))
        np.testing.assert_allclose(g, g.conj().T, atol=1e-12)
        np.testing.assert_allclose(np.diag(g), np.ones(8), atol=1e-12)


class TestOverlapSums:
    def test_direct_at_epr(self):
        assert analysis.overlap_sum_direct(analysis.eight_states(FakeSignalParams.epr())) == pytest.approx(
            EPR_SUM, abs=1e-9
        )

    def test_direct_orthonormal_set(self):
        assert analysis.overlap_sum_direct(list(np.eye(8))) == 0.0

    def test_formula_values(self):
        assert analysis.overlap_sum_formula(OverlapParams.epr()) == pytest.approx(EPR_SUM, abs=1e-12)
        # z=1: 8|z-t| + (8/sqrt2)(1 + 1) + 16/sqrt2
        assert analysis.overlap_sum_formula(OverlapParams(0, 0, 1)) == pytest.approx(8 + 32 / math.sqrt(2))
        # x=1 sits on the boundary x^2 <= 4zt at z=t=1/2; terms: 0 + 0 + 8 + 8/sqrt2 + 8/sqrt2 + 16/sqrt2
        edge = OverlapParams(1, 0, 0.5)
        assert analysis.overlap_sum_formula(edge) == pytest.approx(8 + 32 / math.sqrt(2), abs=1e-12)
        states = analysis.eight_states(edge.realize())
        assert analysis.overlap_sum_direct(states) == pytest.approx(30.6274, abs=1e-4)

    def test_z1_by_enumeration(self):
        """beta = 0: states collapse to |0>,|1>,|+>,|-> times alpha; count overlaps by hand."""
        states = analysis.eight_states(FakeSignalParams([1, 0], [0, 0]))
        # 4 coincident pairs (x2 ordered) at 1, 16 Z/X cross pairs (x2) at 1/sqrt2
        assert analysis.overlap_sum_direct(states) == pytest.approx(8 + 32 * R, abs=1e-12)

    @settings(max_examples=60)
    @given(feasible_params())
    def test_formula_agrees_with_gram(self, p):
        rep = analysis.bound_report(p)
        assert not rep.formula_mismatch
        assert rep.overlap_sum_direct == pytest.approx(rep.overlap_sum_formula, abs=1e-9)

    def test_higher_dimensional_ancilla(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            fp = random_fake_signal(rng, dim_e=4)
            rep = analysis.bound_report(fp)
            assert not rep.formula_mismatch

    @pytest.mark.parametrize("use_numba", [False, True])
    def test_kernel_matches_gram(self, use_numba):
        rng = np.random.default_rng(8)
        pts = []
        for _ in range(50):
            z = rng.uniform()
            r = 2 * math.sqrt(z * (1 - z)) * rng.uniform()
            th = rng.uniform(0, 2 * math.pi)
            pts.append((r * math.cos(th), r * math.sin(th), z))
        x, q, z = np.array(pts).T
        fast = _kernels.overlap_sum_grid(x, q, z, use_numba=use_numba)
        for k, (xi, qi, zi) in enumerate(pts):
            states = analysis.eight_states(OverlapParams(xi, qi, zi).realize())
            assert fast[k] == pytest.approx(analysis.overlap_sum_direct(states), abs=1e-10)


class TestBounds:
    def test_p1_epr(self):
        assert analysis.p1_bound(OverlapParams.epr()) == pytest.approx(1 - math.sqrt(2) / 7, abs=1e-9)

    def test_p1_orthonormal(self):
        assert analysis.p1_bound(list(np.eye(8))) == 1.0

    def test_p1_degenerate_smaller(self):
        assert analysis.p1_bound(OverlapParams(0, 0, 1)) < analysis.p1_bound(OverlapParams.epr())

    def test_p2_epr(self):
        assert analysis.p2_bound(OverlapParams.epr()) == pytest.approx(1 - math.sqrt(2) / 6, abs=1e-9)

    def test_set_sum_epr(self):
        states = analysis.eight_states(FakeSignalParams.epr())
        assert analysis.set_overlap_sum_direct(states) == pytest.approx(math.sqrt(2) / 6, abs=1e-9)

    def test_p2_orthogonal_sets(self):
        assert analysis.p2_bound(list(np.eye(8))) == 1.0

    @settings(max_examples=60)
    @given(feasible_params())
    def test_bounds_in_unit_interval_and_epr_is_best(self, p):
        rep = analysis.bound_report(p)
        assert 0.0 <= rep.p1 <= 1.0 and 0.0 <= rep.p2 <= 1.0
        assert rep.p1 <= 1 - math.sqrt(2) / 7 + 1e-9
        assert rep.p2 <= 1 - math.sqrt(2) / 6 + 1e-9
        assert rep.set_sum_direct == pytest.approx(rep.set_sum_formula, abs=1e-9)


class TestMinimize:
    def test_default(self):
        p, v = analysis.minimize_overlap()
        assert abs(p.x) < 1e-6 and abs(p.q) < 1e-6 and abs(p.z - 0.5) < 1e-6
        assert v == pytest.approx(EPR_SUM, abs=1e-6)

    def test_slice_z_half(self):
        p, v = analysis.minimize_overlap(fixed_z=0.5)
        assert v == pytest.approx(EPR_SUM, abs=1e-6)
        assert abs(p.x) < 1e-6 and abs(p.q) < 1e-6

    def test_feasible(self):
        p, _ = analysis.minimize_overlap(seed=3)
        assert p.x**2 + p.q**2 <= 4 * p.z * p.t + 1e-12

    def test_restart_invariance(self):
        found = [analysis.minimize_overlap(seed=s)[0] for s in range(16)]
        for p in found:
            assert abs(p.x) < 1e-6 and abs(p.q) < 1e-6 and abs(p.z - 0.5) < 1e-6


class TestPredictions:
    def test_m2(self):
        assert analysis.analytic_predictions(2) == {"error_rate_lb": 0.25, "not_last_prob": 0.5}

    def test_m3(self):
        pr = analysis.analytic_predictions(3)
        assert pr["error_rate_lb"] == pytest.approx(1 / 3)
        assert pr["not_last_prob"] == pytest.approx(2 / 3)

    def test_monotone_limits(self):
        vals = [analysis.analytic_predictions(m) for m in range(2, 200)]
        e = [v["error_rate_lb"] for v in vals]
        n = [v["not_last_prob"] for v in vals]
        assert all(a < b for a, b in zip(e, e[1:])) and e[-1] < 0.5 and e[-1] > 0.497
        assert all(a < b for a, b in zip(n, n[1:])) and n[-1] < 1.0

    def test_domain(self):
        with pytest.raises(DomainError):
            analysis.analytic_predictions(1)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatchError):
            analysis.empirical_report([])
