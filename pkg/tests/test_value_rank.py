import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gmnet.errors import DegenerateInputError
from gmnet.net_model import MoneyTensor, synth_generate
from gmnet.value_rank import (RankVector, format_rank_table, import_export_values, rank_order,
                              reduce_over_countries, reduce_over_sectors, sector_shares, value_probabilities)

from conftest import registry, tensor_from_cells
from oracles import node, values_loop


class TestImportExportValues:
    def test_single_cell(self):
        t = tensor_from_cells(2, 1, {(1, 2, 1, 1): 5.0})
        vt = import_export_values(t)
        np.testing.assert_array_equal(vt.imports, [5.0, 0.0])
        np.testing.assert_array_equal(vt.exports, [0.0, 5.0])
        assert vt.total == 5.0

    def test_symmetric_tensor_balances_each_node(self):
        rng = np.random.default_rng(3)
        v = rng.random((3, 3, 2, 2))
        v = v + v.transpose(1, 0, 3, 2)
        vt = import_export_values(MoneyTensor(registry(3, 2), v))
        np.testing.assert_allclose(vt.imports, vt.exports, rtol=1e-14)

    def test_random_matches_quadruple_loop(self):
        t = synth_generate(4, 3, 0.8, seed=5)
        imp, exp, tot = values_loop(t.values)
        vt = import_export_values(t)
        np.testing.assert_allclose(vt.imports, imp, rtol=1e-13)
        np.testing.assert_allclose(vt.exports, exp, rtol=1e-13)
        assert vt.total == pytest.approx(tot, rel=1e-13)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 10_000))
    def test_totals_agree(self, nc, ns, seed):
        vt = import_export_values(synth_generate(nc, ns, seed=seed))
        assert vt.imports.sum() == pytest.approx(vt.total, rel=1e-13)
        assert vt.exports.sum() == pytest.approx(vt.total, rel=1e-13)


class TestValueProbabilities:
    def test_single_cell(self):
        imp, exp = value_probabilities(import_export_values(tensor_from_cells(2, 1, {(1, 2, 1, 1): 5.0})))
        np.testing.assert_array_equal(imp.p, [1.0, 0.0])
        assert imp.ranks[0] == 1
        np.testing.assert_array_equal(exp.p, [0.0, 1.0])

    def test_zero_total_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            value_probabilities(import_export_values(MoneyTensor(registry(2, 1), np.zeros((2, 2, 1, 1)))))

    def test_shares_match_oracle(self, mid_tensor):
        imp_v, exp_v, tot = values_loop(mid_tensor.values)
        imp, exp = value_probabilities(import_export_values(mid_tensor))
        np.testing.assert_allclose(imp.p, imp_v / tot, rtol=1e-12)
        np.testing.assert_allclose(exp.p, exp_v / tot, rtol=1e-12)
        assert imp.p.sum() == pytest.approx(1, abs=1e-12)
        assert exp.p.sum() == pytest.approx(1, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000), st.floats(1e-3, 1e6))
    def test_scaling_leaves_orderings(self, seed, k):
        t = synth_generate(4, 3, seed=seed)
        a = value_probabilities(import_export_values(t))
        b = value_probabilities(import_export_values(t.with_values(t.values * k)))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.ranks, y.ranks)


class TestRankOrder:
    def test_strict(self):
        np.testing.assert_array_equal(rank_order([0.5, 0.3, 0.2]), [1, 2, 3])

    def test_tie_broken_by_index(self):
        np.testing.assert_array_equal(rank_order([0.4, 0.4, 0.2]), [1, 2, 3])
        np.testing.assert_array_equal(rank_order([0.2, 0.4, 0.4]), [3, 1, 2])

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            rank_order([0.1, np.nan])

    def test_matches_sort_oracle(self):
        p = np.random.default_rng(9).random(100)
        expected = sorted(range(100), key=lambda i: (-p[i], i))
        ranks = rank_order(p)
        for k, i in enumerate(expected, 1):
            assert ranks[i] == k

    @given(arrays(float, st.integers(1, 60), elements=st.sampled_from([0.0, 0.1, 0.25, 0.5, 1.0])))
    def test_ranks_sort_nonincreasing(self, p):
        rv = RankVector(p, "x")
        assert sorted(rv.ranks) == list(range(1, p.size + 1))
        assert np.all(np.diff(rv.sorted_p()) <= 0)


class TestReductions:
    def test_uniform(self):
        reg = registry(4, 3)
        p = np.full(12, 1 / 12)
        np.testing.assert_allclose(reduce_over_sectors(p, reg).p, 1 / 4)
        np.testing.assert_allclose(reduce_over_countries(p, reg).p, 1 / 3)

    def test_point_mass(self):
        reg = registry(4, 3)
        p = np.zeros(12)
        p[node(2, 1, 3)] = 1.0
        np.testing.assert_array_equal(reduce_over_sectors(p, reg).p, [0, 0, 1, 0])
        np.testing.assert_array_equal(reduce_over_countries(p, reg).p, [0, 1, 0])

    def test_random_matches_double_loop(self):
        nc, ns = 5, 4
        reg = registry(nc, ns)
        p = np.random.default_rng(1).random(nc * ns)
        p /= p.sum()
        pc = [sum(p[node(c, s, ns)] for s in range(ns)) for c in range(nc)]
        ps = [sum(p[node(c, s, ns)] for c in range(nc)) for s in range(ns)]
        rc, rs = reduce_over_sectors(p, reg), reduce_over_countries(p, reg)
        np.testing.assert_allclose(rc.p, pc, rtol=1e-13)
        np.testing.assert_allclose(rs.p, ps, rtol=1e-13)
        assert rc.p.sum() == pytest.approx(1, abs=1e-12)
        assert rs.p.sum() == pytest.approx(1, abs=1e-12)
        np.testing.assert_array_equal(rc.ranks, rank_order(pc))
        assert rc.scope == "country" and rs.scope == "sector"


class TestTables:
    def test_node_table(self):
        reg = registry(2, 2)
        text = format_rank_table(RankVector(np.array([0.1, 0.4, 0.2, 0.3]), "x"), reg)
        lines = text.splitlines()
        assert lines[0] == "rank,node,country_code,sector_code,probability"
        assert lines[1] == "1,2,C1,S2,0.4"
        assert lines[4] == "4,1,C1,S1,0.1"

    def test_reduced_table(self):
        reg = registry(2, 2)
        text = format_rank_table(reduce_over_sectors(np.array([0.1, 0.25, 0.25, 0.4]), reg), reg)
        assert text.splitlines() == ["rank,country,code,probability", "1,2,C2,0.65", "2,1,C1,0.35"]

    def test_sector_shares(self, small_tensor):
        imp, exp = sector_shares(import_export_values(small_tensor), small_tensor.registry)
        v = small_tensor.values
        np.testing.assert_allclose(imp, v.sum(axis=(0, 1, 3)) / v.sum())
        np.testing.assert_allclose(exp, v.sum(axis=(0, 1, 2)) / v.sum())
