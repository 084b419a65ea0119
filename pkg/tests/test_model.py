import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smdp_risk import (
    Deterministic,
    Exponential,
    Mixture,
    NoCertificate,
    Uniform,
    Weibull,
    certify_assumption1,
    default_delta,
    validate,
)
from smdp_risk.model import build_model, cdf, quantile, sojourn_from_dict

from conftest import constant_cost_model


def two_state(P1=(0.5, 0.5), c1=0.5, law=None):
    law = law or Exponential(2.0)
    return build_model(
        ["0", "1"],
        [["a"], ["a"]],
        [[[0.3, 0.7]], [list(P1)]],
        [[law], [law]],
        [[0.2], [c1]],
        c_bar=1.0,
        alpha=0.5,
    )


class TestValidate:
    def test_row_not_stochastic(self):
        report = validate(two_state(P1=(0.5, 0.4)))
        assert any("row not stochastic at (1,a)" in msg for msg in report)

    def test_negative_cost(self):
        report = validate(two_state(c1=-1.0))
        assert any("negative cost at (1,a)" in msg for msg in report)

    def test_well_formed(self):
        assert validate(two_state()) == []

    def test_fixture_is_valid(self, maintenance):
        assert validate(maintenance) == []

    def test_cost_above_c_bar(self):
        assert any("exceeds c_bar" in msg for msg in validate(two_state(c1=1.5)))

    def test_missing_law(self):
        m = build_model(["0", "1"], [["a"], ["a"]], [[[0.5, 0.5]], [[1.0, 0.0]]],
                        [[[Exponential(1.0), None]], [Exponential(1.0)]], [[0.1], [0.1]], 1.0, 1.0)
        assert any("missing sojourn law" in msg for msg in validate(m))

    def test_mass_at_zero(self):
        m = two_state(law=Uniform(0.0, 1.0))
        assert validate(m) == []  # uniform(0, 1) has F(0) = 0
        m = two_state(law=Mixture((Deterministic(1.0), Exponential(1.0)), (0.5, 0.5)))
        assert validate(m) == []

    def test_rows_sum_to_one(self, maintenance):
        for i in range(maintenance.n_states):
            assert np.allclose(maintenance.transition[i].sum(axis=1), 1.0, atol=1e-12)


class TestCertificate:
    def test_exponential(self):
        cert = certify_assumption1(two_state(law=Exponential(2.0)), delta=0.1)
        assert cert.epsilon == pytest.approx(math.exp(-0.2), rel=1e-12)

    def test_deterministic(self):
        cert = certify_assumption1(two_state(law=Deterministic(1.0)), delta=0.5)
        assert cert.epsilon == 1.0

    def test_uniform_no_certificate(self):
        with pytest.raises(NoCertificate):
            certify_assumption1(two_state(law=Uniform(0.0, 1.0)), delta=1.0)

    def test_rho_in_unit_interval(self, maintenance):
        cert = certify_assumption1(maintenance)
        assert 0.0 < cert.rho(maintenance.alpha) < 1.0

    def test_default_delta(self, maintenance):
        p10 = min(
            float(maintenance.sojourn[i][a][j].quantile(0.1))
            for i, a in maintenance.pairs()
            for j in maintenance.successors(i, a)
        )
        assert default_delta(maintenance) == pytest.approx(p10 / 2)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
    def test_antitone_in_delta(self, d1, d2):
        m = constant_cost_model()
        lo, hi = sorted((d1, d2))
        try:
            e_hi = certify_assumption1(m, hi).epsilon
        except NoCertificate:
            return
        assert certify_assumption1(m, lo).epsilon >= e_hi


class TestLaws:
    def test_exponential_cdf(self):
        assert cdf(Exponential(1.0), math.log(2)) == pytest.approx(0.5, abs=1e-15)

    def test_uniform_quantile(self):
        assert quantile(Uniform(0.0, 2.0), 0.25) == pytest.approx(0.5)

    def test_weibull_cdf(self):
        from scipy import integrate

        law = Weibull(1.0, 2.0)
        assert cdf(law, 2.0) == pytest.approx(1 - math.exp(-1), abs=1e-12)
        dens = lambda s: math.exp(-s / 2) / 2
        assert integrate.quad(dens, 0, 2)[0] == pytest.approx(cdf(law, 2.0), abs=1e-10)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
    def test_quantile_domain(self, p):
        with pytest.raises(ValueError):
            quantile(Exponential(1.0), p)

    LAWS = [
        Exponential(1.7),
        Uniform(0.3, 2.0),
        Weibull(2.0, 1.5),
        Weibull(0.7, 0.5),
        Mixture((Uniform(0.5, 1.0), Exponential(1.0)), (0.3, 0.7)),
    ]

    @pytest.mark.parametrize("law", LAWS, ids=lambda l: type(l).__name__)
    def test_roundtrip(self, law):
        rng = np.random.default_rng(1)
        p = rng.uniform(1e-6, 1 - 1e-6, 1000)
        s = law.quantile(p)
        assert np.allclose(law.cdf(s), p, rtol=1e-8, atol=1e-10)
        s = law.quantile(rng.uniform(0.01, 0.99, 1000))
        assert np.allclose(law.quantile(law.cdf(s)), s, rtol=1e-8)

    def test_deterministic_quantile(self):
        law = Deterministic(1.0)
        assert np.all(law.quantile(np.array([0.01, 0.5, 0.99])) == 1.0)
        assert law.cdf(1.0) >= 0.5

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-6, 1 - 1e-6))
    def test_cdf_of_quantile_at_least_p(self, p):
        law = Mixture((Deterministic(0.5), Exponential(1.0)), (0.7, 0.3))
        assert float(law.cdf(law.quantile(p))) >= p - 1e-12

    @pytest.mark.parametrize("law", LAWS + [Deterministic(0.8)], ids=lambda l: type(l).__name__)
    def test_dict_roundtrip(self, law):
        assert sojourn_from_dict(law.to_dict()) == law

    def test_mean_discount_closed_form(self):
        assert Exponential(2.0).mean_discount(0.5) == pytest.approx(2.0 / 2.5)
        assert Weibull(1.0, 0.5).mean_discount(0.5) == pytest.approx(2.0 / 2.5, rel=1e-8)

    @pytest.mark.parametrize("bad", [lambda: Exponential(0.0), lambda: Uniform(1.0, 1.0), lambda: Deterministic(0.0)])
    def test_bad_parameters(self, bad):
        with pytest.raises(ValueError):
            bad()
