import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmnet.correlators import (correlator_report, global_correlator, reduced_correlators, sector_correlators,
                               sector_sector_correlator)
from gmnet.google_core import gpvm
from gmnet.tables import format_grid

from conftest import registry
from oracles import kappa_ss_loop, node


def random_prob(n, seed, zeros=0):
    p = np.random.default_rng(seed).random(n)
    p[:zeros] = 0
    return p / p.sum()


prob_pairs = st.tuples(st.integers(2, 6), st.integers(1, 5), st.integers(0, 10_000))


class TestGlobal:
    def test_uniform(self):
        p = np.full(10, 0.1)
        assert global_correlator(p, p) == pytest.approx(0, abs=1e-15)

    def test_same_point_mass(self):
        e1 = np.eye(10)[0]
        assert global_correlator(e1, e1) == 9

    def test_disjoint(self):
        assert global_correlator(np.eye(10)[0], np.eye(10)[1]) == -1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            global_correlator(np.ones(3) / 3, np.ones(4) / 4)

    @given(prob_pairs)
    def test_lower_bound(self, args):
        nc, ns, seed = args
        n = nc * ns
        assert global_correlator(random_prob(n, seed), random_prob(n, seed + 1)) >= -1


class TestSectorSector:
    def test_uniform_is_zero(self):
        reg = registry(4, 3)
        p = np.full(12, 1 / 12)
        np.testing.assert_allclose(sector_sector_correlator(p, p, reg), 0, atol=1e-14)

    def test_single_country_concentration(self):
        nc, ns = 4, 3
        p = np.zeros(nc * ns)
        p[:ns] = 1 / ns
        kss = sector_sector_correlator(p, p, registry(nc, ns))
        np.testing.assert_allclose(kss, nc - 1, rtol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_double_loop(self, seed):
        nc, ns = 4, 3
        P, Ps = random_prob(12, seed), random_prob(12, seed + 100)
        np.testing.assert_allclose(sector_sector_correlator(P, Ps, registry(nc, ns)),
                                   kappa_ss_loop(P, Ps, nc, ns), atol=1e-12)

    def test_zero_marginal_is_masked(self):
        nc, ns = 3, 3
        P = random_prob(9, 1)
        for c in range(nc):
            P[node(c, 1, ns)] = 0.0
        P /= P.sum()
        kss = sector_sector_correlator(P, random_prob(9, 2), registry(nc, ns))
        assert kss.mask[1].all()
        assert not kss.mask[0].any()
        text = format_grid(kss, ["S1", "S2", "S3"], ["S1", "S2", "S3"])
        assert text.splitlines()[2] == "S2,NA,NA,NA"

    def test_diagonal(self, mid_tensor):
        res = gpvm(mid_tensor)
        reg = mid_tensor.registry
        kss = sector_sector_correlator(res.pagerank, res.cheirank, reg)
        ks = sector_correlators(res.pagerank, res.cheirank, reg)
        np.testing.assert_array_equal(ks, np.diag(kss))

    @settings(max_examples=25)
    @given(prob_pairs, st.randoms())
    def test_sector_relabeling_permutes(self, args, rnd):
        nc, ns, seed = args
        P, Ps = random_prob(nc * ns, seed), random_prob(nc * ns, seed + 1)
        perm = list(range(ns))
        rnd.shuffle(perm)
        reg = registry(nc, ns)
        a = sector_sector_correlator(P, Ps, reg)
        b = sector_sector_correlator(P.reshape(nc, ns)[:, perm].ravel(), Ps.reshape(nc, ns)[:, perm].ravel(), reg)
        np.testing.assert_allclose(b, a[np.ix_(perm, perm)], rtol=1e-10, atol=1e-12)


class TestReduced:
    def test_uniform(self):
        p = np.full(12, 1 / 12)
        kc, ks = reduced_correlators(p, p, registry(4, 3))
        assert kc == pytest.approx(0, abs=1e-14) and ks == pytest.approx(0, abs=1e-14)

    def test_one_country(self):
        p = np.zeros(12)
        p[3:6] = 1 / 3
        kc, _ = reduced_correlators(p, p, registry(4, 3))
        assert kc == pytest.approx(3)

    def test_matches_brute_force(self):
        nc, ns = 5, 4
        P, Ps = random_prob(20, 8), random_prob(20, 9)
        pc = [sum(P[node(c, s, ns)] for s in range(ns)) for c in range(nc)]
        psc = [sum(Ps[node(c, s, ns)] for s in range(ns)) for c in range(nc)]
        pss = [sum(P[node(c, s, ns)] for c in range(nc)) for s in range(ns)]
        psss = [sum(Ps[node(c, s, ns)] for c in range(nc)) for s in range(ns)]
        kc, ks = reduced_correlators(P, Ps, registry(nc, ns))
        assert kc == pytest.approx(nc * sum(a * b for a, b in zip(pc, psc)) - 1, abs=1e-13)
        assert ks == pytest.approx(ns * sum(a * b for a, b in zip(pss, psss)) - 1, abs=1e-13)

    @given(prob_pairs, st.randoms())
    def test_country_relabeling_keeps_value(self, args, rnd):
        nc, ns, seed = args
        P, Ps = random_prob(nc * ns, seed), random_prob(nc * ns, seed + 1)
        perm = list(range(nc))
        rnd.shuffle(perm)
        reg = registry(nc, ns)
        kc, _ = reduced_correlators(P, Ps, reg)
        kc2, _ = reduced_correlators(P.reshape(nc, ns)[perm].ravel(), Ps.reshape(nc, ns)[perm].ravel(), reg)
        assert kc2 == pytest.approx(kc, abs=1e-12)


class TestReport:
    def test_summary(self, small_tensor):
        res = gpvm(small_tensor)
        rep = correlator_report(res.pagerank, res.cheirank, small_tensor.registry, "gpvm")
        s = rep.summary()
        assert s["basis"] == "gpvm"
        assert s["kappa"] == rep.kappa >= -1
        assert len(s["kappa_s"]) == 3
