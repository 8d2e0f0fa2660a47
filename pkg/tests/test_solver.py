import math

import numpy as np
import pytest
from scipy.special import ndtr

from conftest import interesting_multipliers, random_concave_envelope
from phara.concavify import concave_envelope
from phara.errors import BadTime, HeterogeneousRisk, InfeasibleBudget, UnboundedDemand
from phara.market import sample_kernel_terminal
from phara.presets import CONTRACT_PARAMS
from phara.solver import (budget, d0, d1, d_next, d_transform,
                          optimal_terminal_wealth, portfolio_general,
                          portfolio_unified, sahara_portfolio, solve_multiplier,
                          state_price_for_wealth, truncated_kernel_moments,
                          wealth_process, wealth_total, weights)
from phara.utility import INF, PharaPiece, PharaUtility, cara_utility


def norm_pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


class TestDTransform:
    def test_two_forms_agree(self, market):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            z = math.exp(rng.uniform(-8, 8))
            t = rng.uniform(0.0, market.T - 1e-6)
            a = d_transform(z, 1.0, market, t)
            b = d1(z, market, t)
            assert a == pytest.approx(b, rel=1e-12, abs=1e-12)

    def test_arithmetic_example(self, market):
        # -(0.05 - 0.0072) * 10 / (0.12 sqrt(10))
        expect = -(0.05 - 0.0072) * 10.0 / (0.12 * math.sqrt(10.0))
        assert d1(1.0, market, 0.0) == pytest.approx(expect, rel=1e-13)

    def test_numerator_cancellation(self, market):
        t = 3.0
        tau = market.T - t
        z = math.exp(-(market.r - 0.5 * market.theta_norm**2) * tau)
        assert d1(z, market, t) == pytest.approx(0.0, abs=1e-12)

    def test_limit_conventions(self, market):
        assert d1(0.0, market, 0.0) == INF
        assert d1(INF, market, 0.0) == -INF
        assert d_transform(0.0, 0.3, market, 1.0) == INF

    def test_log_piece_uses_d0(self, market):
        rng = np.random.default_rng(2)
        for _ in range(50):
            z = math.exp(rng.uniform(-4, 4))
            t = rng.uniform(0, market.T - 0.1)
            assert d_next(z, 1.0, market, t) == d0(z, market, t)

    def test_bad_time(self, market):
        with pytest.raises(BadTime):
            d1(1.0, market, market.T)


class TestTruncatedMoments:
    def test_untruncated_first_moment(self, market):
        m1, _, _ = truncated_kernel_moments(0.0, INF, market, 2.0, 1.0, 0.5)
        assert m1 == pytest.approx(math.exp(-market.r * (market.T - 2.0)),
                                   rel=1e-13)

    def test_against_monte_carlo(self, market):
        t, xi_t, R = 3.0, 1.2, 0.7
        a, b = 0.4 * xi_t, 1.5 * xi_t
        n = 400_000
        xi_T = sample_kernel_terminal(market, t, xi_t, n, seed=99)
        ind = (xi_T > a) & (xi_T < b)
        m1, mR, mlog = truncated_kernel_moments(a, b, market, t, xi_t, R)
        for closed, sample in [
            (m1, xi_T * ind / xi_t),
            (mR, xi_T ** (1 - 1 / R) * ind / xi_t),
            (mlog, xi_T * np.log(np.where(ind, xi_T, 1.0)) * ind / xi_t),
        ]:
            se = sample.std(ddof=1) / math.sqrt(n)
            assert abs(sample.mean() - closed) <= 3 * se

    def test_degenerate_interval(self, market):
        a = 0.7
        m1, mR, mlog = truncated_kernel_moments(a, a * (1 + 1e-15), market,
                                                1.0, 1.0, 0.5)
        assert m1 == pytest.approx(0.0, abs=1e-12)
        assert mR == pytest.approx(0.0, abs=1e-12)
        assert mlog == pytest.approx(0.0, abs=1e-12)


class TestTerminalWealth:
    def test_crra_inverse_marginal(self, crra_envelope):
        # U'(x) = x^{-1/2}: demand (y xi)^{-2}
        for c in (0.3, 1.0, 2.5):
            got = optimal_terminal_wealth(crra_envelope, c, 1.0)
            assert got == pytest.approx(c**-2.0, rel=1e-13)

    def test_kink_atom(self, demo_envelope, demo_dual):
        env = demo_envelope.envelope
        # strictly between the two chord slopes: park at the kink x=12
        w = 0.5 * (0.08660254037844385 + 0.23170989120926735)
        got = optimal_terminal_wealth(env, demo_dual.y_star,
                                      w / demo_dual.y_star)
        assert got == 12.0

    def test_tie_conventions(self, demo_envelope, demo_dual):
        env = demo_envelope.envelope
        y = demo_dual.y_star
        chord_slope = env.pieces[2].anchor_slope  # the tangent chord 12 -> 28
        got = optimal_terminal_wealth(env, y, chord_slope / y)
        assert got == pytest.approx(12.0, abs=1e-9)
        kink_plus = env.gamma_plus(4)  # right slope at the kink 40
        got = optimal_terminal_wealth(env, y, kink_plus / y)
        assert got == pytest.approx(40.0, rel=1e-12)

    def test_nonincreasing_in_state_price(self, demo_envelope, demo_dual):
        xi = np.geomspace(1e-6, 1e4, 301)
        x = optimal_terminal_wealth(demo_envelope.envelope, demo_dual.y_star, xi)
        assert np.all(np.diff(x) <= 1e-12)

    def test_matches_argmax_inside_pieces(self, contract_envelope, contract_dual):
        env = contract_envelope.envelope
        y = contract_dual.y_star
        # inside the top branch
        m = 0.5 / math.sqrt(1.5)
        w = 0.5 * 0.88 * m
        x = optimal_terminal_wealth(env, y, w / y)
        assert env.deriv(x, "right") == pytest.approx(w, rel=1e-10)


class TestMultiplier:
    def test_crra_closed_form(self, crra_envelope, market):
        R = 0.5
        beta = 1.0 - 1.0 / R
        th = market.theta_norm
        growth = math.exp(-beta * (market.r + 0.5 * th * th) * market.T
                          + 0.5 * beta * beta * th * th * market.T)
        for x0 in (1.0, 10.0, 77.0):
            sol = solve_multiplier(crra_envelope, market, x0)
            assert sol.y_star == pytest.approx((x0 / growth) ** (-R), rel=1e-10)
            assert abs(sol.budget_residual) <= 1e-10 * max(1.0, x0)

    def test_homogeneity(self, crra_envelope, market):
        y1 = solve_multiplier(crra_envelope, market, 5.0).y_star
        y2 = solve_multiplier(crra_envelope, market, 10.0).y_star
        assert y2 == pytest.approx(y1 * 2.0 ** (-0.5), rel=1e-9)

    def test_scale_shift_scales_multiplier(self, demo_envelope, market,
                                           demo_dual):
        a = 3.7
        scaled = demo_envelope.envelope.scale_shift(a, 2.0)
        sol = solve_multiplier(scaled, market, 25.0)
        assert sol.y_star == pytest.approx(a * demo_dual.y_star, rel=1e-9)
        # terminal wealth is unchanged pathwise
        xi = np.geomspace(0.01, 100.0, 50)
        x1 = optimal_terminal_wealth(demo_envelope.envelope, demo_dual.y_star, xi)
        x2 = optimal_terminal_wealth(scaled, sol.y_star, xi)
        assert np.allclose(x1, x2, rtol=1e-9)

    def test_budget_decreasing(self, demo_envelope, market):
        ys = np.geomspace(1e-4, 1e3, 100)
        vals = [budget(demo_envelope.envelope, market, y) for y in ys]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_infeasible(self, demo_envelope, market):
        floor = math.exp(-market.r * market.T) * 4.0
        with pytest.raises(InfeasibleBudget):
            solve_multiplier(demo_envelope.envelope, market, floor)

    def test_linear_tail_rejected(self, market):
        head = PharaPiece(a_lo=0.0, a_hi=1.0, R=0.5, A=-0.5, anchor_x=0.0,
                          anchor_u=0.0, anchor_slope=2.0)
        tail = PharaPiece(a_lo=1.0, a_hi=INF, R=0.0, anchor_x=1.0,
                          anchor_u=float(head.value(1.0)),
                          anchor_slope=0.5 * head.slope_hi)
        env = PharaUtility(a0=0.0, pieces=(head, tail))
        with pytest.raises(UnboundedDemand):
            solve_multiplier(env, market, 5.0)


class TestWealthProcess:
    def test_budget_identity(self, demo_envelope, market, demo_dual):
        total = wealth_total(demo_envelope.envelope, market,
                             demo_dual.y_star, 0.0, 1.0)
        assert total == pytest.approx(25.0, abs=1e-10 * 25.0)

    def test_terminal_continuity(self, demo_envelope, market, demo_dual):
        env = demo_envelope.envelope
        t = market.T - 1e-6
        for xi in (0.05, 0.3, 1.0, 4.0, 50.0):
            terminal = optimal_terminal_wealth(env, demo_dual.y_star, xi)
            process = wealth_total(env, market, demo_dual.y_star, t, xi)
            assert process == pytest.approx(terminal, abs=1e-3)

    def test_crra_single_term(self, crra_envelope, market):
        wd = wealth_process(crra_envelope, market, 0.4, 3.0, 1.2)
        assert wd.xD == pytest.approx([0.0], abs=0.0)
        assert wd.xA == pytest.approx([0.0], abs=0.0)
        assert wd.xAbar == pytest.approx([0.0], abs=0.0)
        assert wd.xRbar == pytest.approx([0.0], abs=0.0)
        assert wd.total == pytest.approx(float(wd.xR[0]), rel=1e-15)

    def test_decomposition_sums_to_total(self, demo_envelope, market, demo_dual):
        wd = wealth_process(demo_envelope.envelope, market, demo_dual.y_star,
                            2.0, 0.9)
        parts = wd.xD.sum() + wd.xA.sum() + wd.xAbar.sum() + wd.xR.sum() \
            + wd.xRbar.sum()
        assert wd.total == pytest.approx(parts, rel=1e-14)

    def test_phi_ratio_identity(self, demo_envelope, market, demo_dual):
        # the curvature term equals its density-ratio form on finite-slope pieces
        env = demo_envelope.envelope
        t, xi = 4.0, 1.1
        tau = market.T - t
        disc = math.exp(-market.r * tau)
        w = demo_dual.y_star * xi
        wd = wealth_process(env, market, demo_dual.y_star, t, xi)
        for k, piece in enumerate(env.pieces):
            if piece.R == 0.0 or not np.isfinite(env.gamma_plus(k)):
                continue
            gp = env.gamma_plus(k)
            gn = env.gamma_minus(k + 1)
            ratio = norm_pdf(d1(gp / w, market, t)) \
                / norm_pdf(d_next(gp / w, piece.R, market, t))
            expect = disc * (piece.a_lo - piece.A) * ratio * (
                ndtr(d_next(gn / w, piece.R, market, t))
                - ndtr(d_next(gp / w, piece.R, market, t)))
            assert float(wd.xR[k]) == pytest.approx(expect, rel=1e-11)


class TestPortfolios:
    def test_crra_is_merton(self, crra_envelope, market):
        sol = solve_multiplier(crra_envelope, market, 10.0)
        for t, xi in [(0.0, 1.0), (5.0, 0.5), (9.9, 2.0)]:
            dec = portfolio_unified(crra_envelope, market, sol.y_star, t, xi)
            assert dec.percentage[0] == pytest.approx(0.8, abs=1e-12)
            assert np.allclose(dec.risk_seeking, 0.0)
            assert np.allclose(dec.loss_aversion, 0.0)
            assert np.allclose(dec.first_order_ra, 0.0)

    def test_pure_cara_constant_amount(self, market):
        alpha = 2.0
        env = concave_envelope(cara_utility(alpha)).envelope
        t = 4.0
        tau = market.T - t
        expect = math.exp(-market.r * tau) / alpha * market.theta_norm / 0.3
        for xi in (0.2, 1.0, 5.0):
            pi = portfolio_general(env, market, 0.7, t, xi)
            assert pi[0] == pytest.approx(expect, rel=1e-12)

    def test_contract_against_expanded_formula(self, contract_envelope, market, contract_dual):
        gamma = CONTRACT_PARAMS["gamma"]
        alpha = CONTRACT_PARAMS["wealth_share"]
        delta = CONTRACT_PARAMS["bonus_share"]
        L = CONTRACT_PARAMS["guarantee"]
        env = contract_envelope.envelope
        y = contract_dual.y_star
        K = gamma * (L / (1 - gamma) - L) ** (gamma - 1.0)
        m = gamma * (L / alpha - L) ** (gamma - 1.0)
        sigma = float(market.sigma[0, 0])
        theta = float(market.theta[0])
        a0, a1, a2 = 0.0, L / (1 - gamma), L / alpha
        A1, A2 = L, (1 - delta) * L / (1 - delta * alpha)

        for t, xi in [(0.0, 1.0), (2.0, 0.7), (5.0, 1.0), (9.0, 1.4)]:
            tau = market.T - t
            s = theta * math.sqrt(tau)
            disc = math.exp(-market.r * tau)
            w = y * xi

            def dd1(z):
                return -(math.log(z) + (market.r - theta**2 / 2) * tau) / s

            p0 = ndtr(dd1(K / w))
            q1 = ndtr(dd1(m / w)) - ndtr(dd1(K / w))
            p2 = ndtr(dd1((1 - delta * alpha) * m / w)) - ndtr(dd1(m / w))
            q2 = 1.0 - ndtr(dd1((1 - delta * alpha) * m / w))
            x_t = wealth_total(env, market, y, t, xi)
            manual = (theta / (sigma * (1 - gamma)) * x_t
                      + disc / (sigma * math.sqrt(tau)) * (a1 - a0)
                      * norm_pdf(dd1(K / w))
                      - theta * disc / (sigma * (1 - gamma)) * (A1 * q1 + A2 * q2)
                      - theta * disc / (sigma * (1 - gamma)) * (a0 * p0 + a2 * p2))
            dec = portfolio_unified(env, market, y, t, xi)
            assert dec.total[0] == pytest.approx(manual, rel=1e-10)
            general = portfolio_general(env, market, y, t, xi)
            assert general[0] == pytest.approx(manual, rel=1e-10)

    def test_demo_term_structure(self, demo_envelope, market, demo_dual):
        # chords feed risk-seeking; benchmarks feed loss-aversion; kinks feed
        # the first-order term
        env = demo_envelope.envelope
        y = demo_dual.y_star
        t, xi = 5.0, 1.0
        tau = market.T - t
        s = market.theta_norm * math.sqrt(tau)
        disc = math.exp(-market.r * tau)
        w = y * xi
        sigma = 0.3
        R = 0.5
        wv = weights(env, market, y, t, xi)
        dec = portfolio_unified(env, market, y, t, xi)

        a = env.partition
        chord1, chord2 = env.pieces[1], env.pieces[2]
        rs_manual = disc / (sigma * math.sqrt(tau)) * (
            (a[2] - a[1]) * norm_pdf(d1(chord1.anchor_slope / w, market, t))
            + (a[3] - a[2]) * norm_pdf(d1(chord2.anchor_slope / w, market, t)))
        assert dec.risk_seeking[0] == pytest.approx(rs_manual, rel=1e-11)

        A_terms = sum(env.pieces[k].A * wv.q[k] for k in (0, 3, 4))
        la_manual = -market.theta_norm * disc / (sigma * R) * A_terms
        assert dec.loss_aversion[0] == pytest.approx(la_manual, rel=1e-11)

        fo_manual = -market.theta_norm * disc / (sigma * R) * float(
            np.sum(a[:-1] * wv.p))
        assert dec.first_order_ra[0] == pytest.approx(fo_manual, rel=1e-11)
        total = dec.merton[0] + dec.risk_seeking[0] + dec.loss_aversion[0] \
            + dec.first_order_ra[0]
        assert dec.total[0] == pytest.approx(total, rel=1e-14)

    def test_unified_equals_general_randomized(self, market):
        rng = np.random.default_rng(7)
        worst = 0.0
        checked = 0
        for _ in range(30):
            env = random_concave_envelope(rng)
            y = math.exp(rng.uniform(-1.0, 1.0))
            for w in interesting_multipliers(env, rng, 10):
                t = rng.uniform(0.0, market.T - 1e-3)
                xi = w / y
                dec = portfolio_unified(env, market, y, t, xi)
                gen = portfolio_general(env, market, y, t, xi)
                scale = max(np.linalg.norm(gen), np.linalg.norm(dec.total))
                if scale < 1e-5 * (1.0 + abs(dec.wealth)):
                    continue  # portfolio numerically zero: no relative measure
                worst = max(worst, np.linalg.norm(dec.total - gen) / scale)
                checked += 1
        assert checked > 200
        assert worst <= 1e-9

    def test_affine_invariance(self, demo_envelope, market, demo_dual):
        a = 2.2
        scaled = demo_envelope.envelope.scale_shift(a, -0.7)
        sol = solve_multiplier(scaled, market, 25.0)
        for t, xi in [(1.0, 0.8), (6.0, 1.5)]:
            d_orig = portfolio_unified(demo_envelope.envelope, market,
                                       demo_dual.y_star, t, xi)
            d_new = portfolio_unified(scaled, market, sol.y_star, t, xi)
            assert np.allclose(d_new.total, d_orig.total, rtol=1e-9)
            assert d_new.wealth == pytest.approx(d_orig.wealth, rel=1e-9)

    def test_heterogeneous_risk_rejected(self, market):
        head = PharaPiece(a_lo=0.0, a_hi=2.0, R=0.5, A=-1.0, anchor_x=0.0,
                          anchor_u=0.0, anchor_slope=1.0)
        tail = PharaPiece(a_lo=2.0, a_hi=INF, R=2.0, A=1.0, anchor_x=2.0,
                          anchor_u=float(head.value(2.0)),
                          anchor_slope=0.9 * head.slope_hi)
        env = PharaUtility(a0=0.0, pieces=(head, tail))
        with pytest.raises(HeterogeneousRisk):
            portfolio_unified(env, market, 0.5, 1.0, 1.0)
        # the general form still works there
        pi = portfolio_general(env, market, 0.5, 1.0, 1.0)
        assert np.all(np.isfinite(pi))

    def test_bad_time(self, crra_envelope, market):
        with pytest.raises(BadTime):
            portfolio_general(crra_envelope, market, 0.4, market.T, 1.0)


class TestWeights:
    def test_sum_to_one(self, demo_envelope, market, demo_dual):
        for t, xi in [(0.0, 1.0), (5.0, 0.2), (9.5, 3.0)]:
            wv = weights(demo_envelope.envelope, market, demo_dual.y_star,
                         t, xi)
            assert wv.p.sum() + wv.q.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(wv.p >= -1e-15)
            assert np.all(wv.q >= -1e-15)

    def test_zero_at_tangency_and_chords(self, contract_envelope, market, contract_dual):
        wv = weights(contract_envelope.envelope, market, contract_dual.y_star, 3.0, 1.0)
        # tangency point: slopes equal up to the root-find residual
        assert abs(wv.p[1]) <= 1e-14
        assert wv.q[0] == 0.0          # chord cell: exactly equal end slopes

    def test_contract_slope_constants(self, contract_envelope, market, contract_dual):
        gamma = CONTRACT_PARAMS["gamma"]
        alpha = CONTRACT_PARAMS["wealth_share"]
        delta = CONTRACT_PARAMS["bonus_share"]
        L = CONTRACT_PARAMS["guarantee"]
        K = gamma * (L / (1 - gamma) - L) ** (gamma - 1.0)
        m = gamma * (L / alpha - L) ** (gamma - 1.0)
        assert K == pytest.approx(0.5, abs=1e-12)
        assert m == pytest.approx(0.5 / math.sqrt(1.5), abs=1e-12)
        assert (1 - delta * alpha) * m == pytest.approx(
            0.88 * 0.5 / math.sqrt(1.5), abs=1e-12)

        env = contract_envelope.envelope
        assert env.gamma_plus(0) == pytest.approx(K, abs=1e-12)
        assert env.gamma_minus(2) == pytest.approx(m, abs=1e-12)
        assert env.gamma_plus(2) == pytest.approx((1 - delta * alpha) * m,
                                                  abs=1e-12)

        t, xi = 4.0, 0.9
        w = contract_dual.y_star * xi
        wv = weights(env, market, contract_dual.y_star, t, xi)
        assert wv.p[0] == pytest.approx(float(ndtr(d1(K / w, market, t))),
                                        abs=1e-14)
        assert wv.q[2] == pytest.approx(
            1.0 - float(ndtr(d1((1 - delta * alpha) * m / w, market, t))),
            abs=1e-14)


class TestSahara:
    def test_positive_at_zero_wealth(self, market):
        pi = sahara_portfolio(market, alpha=2.0, beta=1.0, t=0.0, x=0.0)
        expect = 0.12 / (2.0 * 0.3) * math.exp(-(0.05 - 0.0144 / 8.0) * 10.0)
        assert pi[0] == pytest.approx(expect, rel=1e-12)
        assert pi[0] > 0.0

    def test_zero_beta_limit(self, market):
        for x in (-3.0, 0.0, 2.0):
            pi = sahara_portfolio(market, alpha=2.0, beta=0.0, t=1.0, x=x)
            assert pi[0] == pytest.approx(0.12 / 0.6 * abs(x), rel=1e-12)


class TestWealthInversion:
    def test_roundtrip(self, demo_envelope, market, demo_dual):
        env = demo_envelope.envelope
        for t in (0.0, 5.0, 9.99):
            disc = math.exp(-market.r * (market.T - t))
            for x in (disc * 6.0, disc * 20.0, disc * 45.0):
                xi = state_price_for_wealth(env, market, demo_dual.y_star, t, x)
                back = wealth_total(env, market, demo_dual.y_star, t, xi)
                assert back == pytest.approx(x, rel=1e-8)

    def test_floor_saturates(self, demo_envelope, market, demo_dual):
        t = 5.0
        floor = math.exp(-market.r * (market.T - t)) * 4.0
        xi = state_price_for_wealth(demo_envelope.envelope, market,
                                    demo_dual.y_star, t, floor)
        assert xi == 1e18
