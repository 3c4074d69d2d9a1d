import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmnet import sensitivity as sens
from gmnet.errors import LinearityError
from gmnet.net_model import MoneyTensor, synth_generate
from gmnet.sensitivity import (COUNTRY_LABOR, GPVM, SCALE_DESTINATION, SECTOR_PRICE, VALUE, ShockSpec, apply_shock,
                               balance, balance_derivative_matrix, basis_probabilities, rank_derivatives,
                               resolve_target, shock_derivatives)

from conftest import registry, tensor_from_cells
from oracles import gpvm_loop, shock_loop


class TestApplyShock:
    def test_zero_is_identity(self, small_tensor):
        out = apply_shock(small_tensor, ShockSpec(SECTOR_PRICE, 2, 0.0))
        np.testing.assert_array_equal(out.values, small_tensor.values)

    def test_single_cell(self):
        t = tensor_from_cells(2, 2, {(1, 2, 1, 2): 4.0, (2, 1, 2, 1): 3.0})
        out = apply_shock(t, ShockSpec(SECTOR_PRICE, 2, 0.1))
        assert out.values[0, 1, 0, 1] == pytest.approx(4.4)
        assert out.values[1, 0, 1, 0] == 3.0

    @pytest.mark.parametrize("kind", [SECTOR_PRICE, COUNTRY_LABOR])
    @pytest.mark.parametrize("source", [True, False])
    def test_matches_loop(self, mid_tensor, kind, source):
        conv = "scale_source" if source else SCALE_DESTINATION
        out = apply_shock(mid_tensor, ShockSpec(kind, 3, 0.05, conv))
        np.testing.assert_array_equal(out.values, shock_loop(mid_tensor.values, kind, 2, 0.05, source))

    def test_does_not_mutate_input(self, small_tensor):
        before = small_tensor.values.copy()
        apply_shock(small_tensor, ShockSpec(COUNTRY_LABOR, 1, 0.5))
        np.testing.assert_array_equal(small_tensor.values, before)

    def test_validation(self, small_tensor):
        with pytest.raises(ValueError):
            ShockSpec("tax", 1, 0.1)
        with pytest.raises(ValueError):
            ShockSpec(SECTOR_PRICE, 1, -1.0)
        with pytest.raises(ValueError):
            resolve_target(small_tensor.registry, SECTOR_PRICE, "S9")
        assert resolve_target(small_tensor.registry, COUNTRY_LABOR, 2) == 2


class TestBalance:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 5), st.integers(0, 10_000))
    def test_sectors_add_up(self, nc, ns, seed):
        rng = np.random.default_rng(seed)
        P, Ps = rng.random(nc * ns), rng.random(nc * ns)
        rep = balance(P / P.sum(), Ps / Ps.sum(), registry(nc, ns))
        np.testing.assert_allclose(rep.country_sector.sum(axis=1), rep.country, atol=1e-12)
        assert np.all(np.abs(rep.country) <= 1 + 1e-12)

    def test_pure_exporter(self):
        P = np.array([0.0, 0.0, 0.5, 0.5])
        Ps = np.array([0.3, 0.2, 0.25, 0.25])
        rep = balance(P, Ps, registry(2, 2))
        assert rep.country[0] == 1.0

    def test_equal_probabilities(self):
        p = np.random.default_rng(4).random(12)
        rep = balance(p / p.sum(), p / p.sum(), registry(4, 3))
        np.testing.assert_array_equal(rep.country, 0)

    def test_absent_country_masked(self):
        P = np.array([0.0, 0.0, 0.5, 0.5])
        rep = balance(P, P, registry(2, 2))
        assert rep.country.mask[0] and not rep.country.mask[1]


class TestValueBasisClosedForm:
    """Shares of a scaled slice move by ``share * (hit - scaled_fraction)`` to first order."""

    @pytest.mark.parametrize("target", [1, 2, 3])
    def test_price_shock(self, small_tensor, target):
        v = small_tensor.values
        total = v.sum()
        f = v[:, :, :, target - 1].sum() / total
        tab = rank_derivatives(small_tensor, SECTOR_PRICE, target, basis=VALUE, step=1e-6)
        shocked = np.zeros((4, 3), dtype=bool)
        shocked[:, target - 1] = True
        expected_star = np.where(shocked.ravel(), 1 - f, -f)
        np.testing.assert_allclose(tab.D_star_log.filled(np.nan), expected_star, atol=1e-6)
        imports = v.sum(axis=(1, 3))
        g = (v[:, :, :, target - 1].sum(axis=1) / imports).ravel()
        np.testing.assert_allclose(tab.D_log.filled(np.nan), g - f, atol=1e-6)

    def test_labor_shock(self, mid_tensor):
        v = mid_tensor.values
        f = v[:, 2].sum() / v.sum()
        tab = rank_derivatives(mid_tensor, COUNTRY_LABOR, 3, basis=VALUE, step=1e-6)
        expected = np.full(40, -f)
        expected[10:15] = 1 - f
        np.testing.assert_allclose(tab.D_star_log.compressed(), expected[~tab.D_star_log.mask], atol=1e-6)


class TestDerivatives:
    @pytest.mark.parametrize("basis", [GPVM, VALUE])
    def test_uniform_global_shock(self, small_tensor, basis):
        tab = shock_derivatives(small_tensor, lambda t, h: t.with_values(t.values * (1 + h)), basis=basis)
        np.testing.assert_allclose(tab.D, 0, atol=1e-10)
        np.testing.assert_allclose(tab.D_star, 0, atol=1e-10)
        np.testing.assert_allclose(tab.dB_c, 0, atol=1e-10)

    def test_zero_step(self, small_tensor):
        tab = rank_derivatives(small_tensor, SECTOR_PRICE, 1, step=0)
        assert not tab.D.any() and not tab.D_star.any()
        assert not np.ma.filled(tab.dB_cs, 1).any()

    def test_probabilities_keep_unit_mass(self, small_tensor):
        tab = rank_derivatives(small_tensor, COUNTRY_LABOR, 2, basis=VALUE)
        assert abs(tab.D.sum()) < 1e-9 and abs(tab.D_star.sum()) < 1e-9

    def test_nonlinear_response_raises(self, small_tensor):
        def perturb(t, h):
            v = t.values.copy()
            v[0, 1] *= 1 + np.sqrt(h)
            return t.with_values(v)

        with pytest.raises(LinearityError):
            shock_derivatives(small_tensor, perturb, basis=VALUE, step=0.01)

    def test_symmetric_countries(self):
        # swapping the two countries maps the tensor onto itself
        rng = np.random.default_rng(6)
        ns = 3
        a = rng.random((ns, ns))
        b = rng.random((ns, ns))
        v = np.zeros((2, 2, ns, ns))
        v[0, 1], v[1, 0] = a, a
        v[0, 0], v[1, 1] = b, b
        t = MoneyTensor(registry(2, ns), v, keep_intra=True)
        sweep = balance_derivative_matrix(t, COUNTRY_LABOR, basis=VALUE)
        assert not sweep.failures
        d = sweep.dB_c
        assert d[0, 0] == pytest.approx(d[1, 1], rel=1e-6)
        assert d[0, 1] == pytest.approx(d[1, 0], rel=1e-6)


class TestSweep:
    def test_matches_independent_two_point_rerun(self):
        t = synth_generate(5, 3, 0.8, seed=3)
        reg = t.registry
        sweep = balance_derivative_matrix(t, SECTOR_PRICE, basis=GPVM)
        assert not sweep.failures
        base = gpvm_loop(t.values)
        for k, tab in enumerate(sweep.tables):
            h = tab.step
            shocked = gpvm_loop(shock_loop(t.values, SECTOR_PRICE, k, h))
            np.testing.assert_allclose(tab.D, (shocked["p"] - base["p"]) / h, atol=1e-7)
            np.testing.assert_allclose(tab.D_star, (shocked["p_star"] - base["p_star"]) / h, atol=1e-7)

            def bc(res):
                P, Ps = res["p"].reshape(5, 3).sum(axis=1), res["p_star"].reshape(5, 3).sum(axis=1)
                return (Ps - P) / (Ps + P)

            np.testing.assert_allclose(sweep.dB_c[:, k], (bc(shocked) - bc(base)) / h, atol=1e-7)
        assert sweep.targets == [s.code for s in reg.sectors]

    def test_failures_are_recorded(self, small_tensor, monkeypatch):
        real = sens.rank_derivatives

        def flaky(tensor, kind, target, **kw):
            if target == 2:
                raise LinearityError("forced", worst=None)
            return real(tensor, kind, target, **kw)

        monkeypatch.setattr(sens, "rank_derivatives", flaky)
        sweep = balance_derivative_matrix(small_tensor, SECTOR_PRICE, basis=VALUE)
        assert list(sweep.failures) == ["S02"]
        assert sweep.dB_c.mask[:, 1].all() and not sweep.dB_c.mask[:, 0].any()

    def test_cross_sector_and_diagonal(self, small_tensor):
        sweep = balance_derivative_matrix(small_tensor, SECTOR_PRICE, basis=VALUE)
        m = sweep.cross_sector(2)
        assert m.shape == (3, 3)
        np.testing.assert_allclose(sweep.without_diagonal()[1, 0], sweep.dB_c[1, 0] - m[0, 0])
        np.testing.assert_allclose(sweep.dB_cs.sum(axis=1), sweep.dB_c, atol=1e-9)

    def test_workers_match_serial(self, small_tensor):
        a = balance_derivative_matrix(small_tensor, COUNTRY_LABOR, basis=VALUE)
        b = balance_derivative_matrix(small_tensor, COUNTRY_LABOR, basis=VALUE, workers=3)
        np.testing.assert_array_equal(a.dB_c, b.dB_c)

    def test_held_personalization(self, small_tensor):
        base = basis_probabilities(small_tensor, GPVM)
        tab = rank_derivatives(small_tensor, SECTOR_PRICE, 1, baseline=base, hold_personalization=True,
                               step=1e-4, rtol=1.0)
        assert tab.D.shape == (12,)
