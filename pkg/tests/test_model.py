import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ppso.model import (
    DEGENERATE_CASE_II_TOL,
    FeeCase,
    ParameterError,
    PolicyParams,
    classify_fee_case,
    crediting_rate,
    derive_thresholds,
    drift_pi,
    generator_H,
    intrinsic_value,
    payoff_h,
    running_cost,
)

P = PolicyParams()
xs = st.floats(min_value=0.0, max_value=20.0, allow_nan=False)


class TestPolicyParams:
    def test_defaults(self):
        assert (P.T, P.r, P.sigma, P.r_g, P.delta, P.beta, P.gamma, P.alpha) == (
            10.0, 0.015, 0.18, 0.01, 0.1, 3.0, 0.4, 0.1)

    @pytest.mark.parametrize(
        "changes, rule",
        [
            ({"r_g": 0.02}, "r_g < r"),
            ({"r_g": 0.0}, "0 < r_g"),
            ({"gamma": 1.0}, "gamma"),
            ({"alpha": 0.0}, "alpha"),
            ({"sigma": -0.1}, "sigma"),
            ({"T": 0.0}, "T > 0"),
            ({"p": -1e-3}, "p >= 0"),
            ({"q": -1e-3}, "q >= 0"),
            ({"delta": 0.0}, "delta"),
            ({"beta": 0.0}, "beta"),
            ({"a0": 0.0}, "a0"),
        ],
    )
    def test_invalid_names_the_rule(self, changes, rule):
        with pytest.raises(ParameterError, match=rule):
            P.replace(**changes)

    def test_non_finite_rejected(self):
        with pytest.raises(ParameterError, match="finite"):
            P.replace(sigma=math.nan)

    def test_replace_returns_new(self):
        q = P.replace(gamma=0.2)
        assert q.gamma == 0.2 and P.gamma == 0.4


class TestThresholds:
    def test_base_values(self):
        th = derive_thresholds(P)
        assert th.x_alpha == pytest.approx(math.log(10.0), abs=1e-15)
        assert th.x_bar0 == pytest.approx(3.15, abs=1e-15)
        assert th.x_g == pytest.approx(3.1, abs=1e-15)
        assert th.fee_case is FeeCase.NO_FEE_BASELINE
        assert th.hat_x1 is None and th.hat_x2 is None

    def test_knife_edge_alpha(self):
        th = derive_thresholds(P.replace(alpha=math.exp(-P.beta - P.r / P.delta)))
        assert th.x_alpha == pytest.approx(th.x_bar0, abs=1e-14)

    def test_fee_thresholds_case_i(self):
        th = derive_thresholds(P.replace(p=0.001, q=0.002))
        assert th.x_bar_q == pytest.approx(3.17, abs=1e-12)
        assert th.x_bar_q_gamma == pytest.approx(3 + (0.015 + 0.002 / 0.6) / 0.1, abs=1e-12)
        assert th.fee_case is FeeCase.CASE_I
        assert th.fee_report.discriminant == pytest.approx(math.log(60.0) - th.x_bar_q_gamma - 1.0)
        assert th.fee_report.discriminant < 0

    @given(q=st.floats(0, 0.05), gamma=st.floats(0.05, 0.95))
    def test_ordering(self, q, gamma):
        th = derive_thresholds(P.replace(q=q, gamma=gamma))
        assert th.x_g < th.x_bar0 <= th.x_bar_q <= th.x_bar_q_gamma


class TestPayoff:
    def test_examples(self):
        assert payoff_h(0.0, P) == 1.0
        assert payoff_h(P.x_alpha, P) == pytest.approx(0.1, abs=1e-15)
        e3 = math.exp(-3.0)
        assert payoff_h(3.0, P) == pytest.approx(e3 + 0.4 * (0.1 - e3), abs=1e-15)
        assert payoff_h(3.0, P) == pytest.approx(0.069872, abs=1e-6)

    def test_negative_rejected(self):
        with pytest.raises(ParameterError):
            payoff_h(-0.1, P)

    def test_array_in_array_out(self):
        out = payoff_h(np.array([0.0, 1.0]), P)
        assert isinstance(out, np.ndarray) and out.shape == (2,)
        assert isinstance(payoff_h(1.0, P), float)

    @given(x=xs, y=xs)
    def test_lipschitz_and_decreasing(self, x, y):
        lo, hi = min(x, y), max(x, y)
        diff = payoff_h(lo, P) - payoff_h(hi, P)
        assert -1e-15 <= diff <= hi - lo + 1e-15
        if hi - lo > 1e-9 and hi < 30:
            assert diff > 0

    @given(x=xs, y=xs)
    def test_convex(self, x, y):
        assert payoff_h(0.5 * (x + y), P) <= 0.5 * (payoff_h(x, P) + payoff_h(y, P)) + 1e-15

    @given(x=xs)
    def test_range(self, x):
        assert P.alpha * P.gamma - 1e-15 <= payoff_h(x, P) <= 1.0


class TestDrift:
    def test_examples(self):
        assert drift_pi(2.0, P) == pytest.approx(0.0212, abs=1e-15)
        assert drift_pi(3.1, P) == pytest.approx(0.0212, abs=1e-15)
        assert drift_pi(4.0, P) == pytest.approx(-0.0688, abs=1e-15)

    def test_continuous_at_kink(self):
        xg = derive_thresholds(P).x_g
        assert drift_pi(xg - 1e-12, P) == pytest.approx(drift_pi(xg + 1e-12, P), abs=1e-12)

    @given(x=st.floats(-5, 30), y=st.floats(-5, 30))
    def test_delta_lipschitz(self, x, y):
        assert abs(drift_pi(x, P) - drift_pi(y, P)) <= P.delta * abs(x - y) + 1e-15


class TestCrediting:
    def test_examples(self):
        assert crediting_rate(1.0, 1.0, P) == P.r_g
        assert crediting_rate(math.exp(3.0), 1.0, P) == P.r_g
        assert crediting_rate(math.exp(3.4), 1.0, P) == pytest.approx(0.04, abs=1e-12)
        assert crediting_rate(math.exp(3.15), 1.0, P) == pytest.approx(P.r, abs=1e-12)

    def test_domain(self):
        with pytest.raises(ParameterError):
            crediting_rate(0.0, 1.0, P)
        with pytest.raises(ParameterError):
            crediting_rate(1.0, -1.0, P)

    @given(x=st.floats(-10, 20))
    def test_floor(self, x):
        assert crediting_rate(math.exp(x), 1.0, P) >= P.r_g


class TestIntrinsic:
    def test_examples(self):
        assert intrinsic_value(1000.0, 100.0, P) == 100.0
        assert intrinsic_value(2000.0, 100.0, P) == pytest.approx(140.0)
        assert intrinsic_value(500.0, 100.0, P) == 100.0

    def test_domain(self):
        with pytest.raises(ParameterError):
            intrinsic_value(1000.0, -1.0, P)

    @given(x=xs)
    def test_matches_reduced_payoff(self, x):
        a = 1000.0
        assert intrinsic_value(a, a * math.exp(-x), P) / a == pytest.approx(payoff_h(x, P), abs=1e-13)


class TestGenerator:
    def test_at_zero(self):
        assert generator_H(0.0, P) == pytest.approx(-(P.r - P.r_g), abs=1e-15)

    def test_sign_change_at_x_bar0(self):
        x0 = derive_thresholds(P).x_bar0
        assert generator_H(x0 + 1e-9, P) > 0
        assert generator_H(x0 - 1e-9, P) < 0

    def test_jump_ratio_at_x_alpha(self):
        xa = P.x_alpha
        left = generator_H(xa, P)
        right = generator_H(np.nextafter(xa, np.inf), P)
        assert right / left == pytest.approx(1 - P.gamma, rel=1e-9)

    @given(x=xs)
    def test_sign_and_bounds(self, x):
        x0 = derive_thresholds(P).x_bar0
        H = generator_H(x, P)
        assert -(P.r - P.r_g) - 1e-15 <= H <= P.delta + 1e-15
        if abs(x - x0) > 1e-9:
            assert np.sign(H) == np.sign(x - x0)


class TestRunningCost:
    def test_examples(self):
        assert running_cost(3.0, P) == 0.0
        fees = P.replace(p=0.001, q=0.002)
        assert running_cost(0.0, fees) == pytest.approx(0.003)
        assert running_cost(math.log(2.0), fees) == pytest.approx(0.002)


class TestFeeCase:
    def test_no_fee(self):
        rep = classify_fee_case(P)
        assert rep.case is FeeCase.NO_FEE_BASELINE and rep.roots is None

    def test_case_i_large_p(self):
        rep = classify_fee_case(P.replace(p=0.05))
        assert rep.case is FeeCase.CASE_I
        assert rep.discriminant == pytest.approx(math.log(1.2) - 4.15)

    def test_case_ii(self):
        params = P.replace(p=1e-5)
        rep = classify_fee_case(params)
        assert rep.case is FeeCase.CASE_II
        assert rep.discriminant == pytest.approx(math.log(6000.0) - 4.15)
        lo, hi = rep.roots
        xqg = derive_thresholds(params).x_bar_q_gamma
        assert xqg < lo < rep.x_star < hi
        for root in rep.roots:
            assert abs(root - xqg - (1e-5 / 0.1) / 0.6 * math.exp(root)) <= 1e-10
        assert rep.root_residuals <= 1e-10

    def test_degenerate_case_warns(self):
        # choose p so that the discriminant is about DEGENERATE_CASE_II_TOL / 2
        base = P.replace(p=1e-3)
        xqg = derive_thresholds(base).x_bar_q_gamma
        p = P.delta * (1 - P.gamma) * math.exp(-(1 + xqg + DEGENERATE_CASE_II_TOL / 2))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            rep = classify_fee_case(P.replace(p=p))
        assert rep.case is FeeCase.CASE_I
        assert 0 < rep.discriminant <= DEGENERATE_CASE_II_TOL
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    @settings(max_examples=40)
    @given(p=st.floats(1e-7, 1e-3), gamma=st.floats(0.05, 0.9))
    def test_roots_straddle_peak(self, p, gamma):
        rep = classify_fee_case(P.replace(p=p, gamma=gamma))
        if rep.case is FeeCase.CASE_II:
            assert rep.roots[0] < rep.x_star < rep.roots[1]
            assert rep.root_residuals <= 1e-10
        else:
            assert rep.discriminant <= DEGENERATE_CASE_II_TOL
