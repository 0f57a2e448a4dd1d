# tests/test_rge.py

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzsgd.attacks import AttackKind
from byzsgd.datagen import HeteroModelSpec, generate, planted_gradients
from byzsgd.errors import FilterCollapsedError, InfeasibleFilterError
from byzsgd.model import ObjectiveSpec, local_full_gradient
from byzsgd.rge import (
    FilterState,
    SaddleSolution,
    column_fit,
    default_sigma0_sq,
    default_sigma0_sq_compressed,
    default_sigma0_sq_full_batch,
    estimate,
    filter_cap,
    filter_round,
    full_batch_concentration_check,
    max_eig_deviation,
    min_active,
    solve_saddle,
)
from byzsgd.trainer import UPSILON_CONST


def solution_with(tau, scale=1.0):
    tau = np.asarray(tau, dtype=float)
    return SaddleSolution(
        weights=np.eye(tau.size),
        direction=np.array([1.0]),
        tau=tau,
        phi=float(tau.sum()),
        scale=scale,
        iterations=1,
        converged=True,
    )


class TestRadius:
    def test_default_sigma0_sq_value(self):
        # 24 / 0.5 * (1 + 1 / (0.5 * 2)) = 96
        assert default_sigma0_sq(1.0, 1, 0.0, 0.0, 0.5, 1, 2) == pytest.approx(96.0)

    def test_kappa_term(self):
        base = default_sigma0_sq(1.0, 4, 0.0, 0.1, 0.05, 10, 20)
        assert default_sigma0_sq(1.0, 4, 2.0, 0.1, 0.05, 10, 20) == pytest.approx(base + 64.0)

    def test_compressed_full_set(self):
        # k = d: 24 d G^2 / (d b eps') (1 + d / honest)
        value = default_sigma0_sq_compressed(2.0, 1, 0.0, 0.0, 0.5, 3, 3, 6)
        assert value == pytest.approx(24.0 * 2.0 / 0.5 * (1.0 + 3.0 / 3.0))

    def test_full_batch(self):
        assert default_sigma0_sq_full_batch(1.5) == pytest.approx(9.0)

    @pytest.mark.parametrize("eps, eps_prime", [(0.0, 0.0), (0.5, 0.5), (-0.1, 0.1)])
    def test_bad_fractions(self, eps, eps_prime):
        with pytest.raises(ValueError):
            default_sigma0_sq(1.0, 1, 0.0, eps, eps_prime, 2, 10)

    def test_compressed_rejects_bad_k(self):
        with pytest.raises(ValueError):
            default_sigma0_sq_compressed(1.0, 1, 0.0, 0.0, 0.1, 3, 4, 10)


class TestCap:
    def test_alpha_one(self):
        assert filter_cap(1.0, 4) == pytest.approx(0.25)
        assert min_active(1.0, 4) == 4

    def test_known_value(self):
        assert filter_cap(0.75, 10) == pytest.approx(3.25 / 20.625)
        assert min_active(0.75, 10) == 7

    def test_eps_tilde_quarter_needs_most_columns(self):
        assert min_active(0.8, 10) == 7

    @pytest.mark.parametrize("alpha", [0.0, 1.5])
    def test_bad_alpha(self, alpha):
        with pytest.raises(ValueError):
            filter_cap(alpha, 10)


class TestColumnFit:
    def test_interior_target_is_hit(self):
        w, fitted = column_fit(np.array([1.0, 3.0]), 2.0, 1.0)
        assert fitted == pytest.approx(2.0)
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_target_below_range_clamps(self):
        w, fitted = column_fit(np.array([1.0, 3.0]), 0.0, 0.8)
        assert fitted == pytest.approx(1.4)
        np.testing.assert_allclose(w, [0.8, 0.2])

    def test_constant_projections(self):
        w, fitted = column_fit(np.full(4, 2.0), 5.0, 0.5)
        assert fitted == pytest.approx(2.0)
        assert w.sum() == pytest.approx(1.0)

    def test_infeasible_cap(self):
        with pytest.raises(InfeasibleFilterError):
            column_fit(np.ones(3), 0.0, 0.3)

    def test_empty_projections(self):
        with pytest.raises(ValueError):
            column_fit(np.array([]), 0.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=12),
        st.floats(-150, 150),
        st.floats(0.0, 1.0),
    )
    def test_feasible_and_no_worse_than_uniform(self, values, t, mix):
        s = np.array(values)
        n = s.size
        cap = 1.0 / n + mix * (1.0 - 1.0 / n)
        w, fitted = column_fit(s, t, cap)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(w >= -1e-12)
        assert np.all(w <= cap + 1e-9)
        assert float(s @ w) == pytest.approx(fitted, abs=1e-7)
        assert abs(fitted - t) <= abs(float(s.mean()) - t) + 1e-7


class TestSolveSaddle:
    def test_one_dimensional_outlier(self):
        G = np.array([[0.0, 0.0, 10.0]])
        sol = solve_saddle(G, np.ones(3), 0.788)
        assert sol.converged
        assert sol.phi == pytest.approx(2.12**2, rel=1e-9)
        np.testing.assert_allclose(sol.tau, [0.0, 0.0, 2.12**2], atol=1e-9)
        assert sol.scale == pytest.approx(100.0)

    def test_identical_columns_have_zero_error(self):
        G = np.tile(np.array([[1.0], [2.0]]), (1, 4))
        sol = solve_saddle(G, np.ones(4), 0.5)
        assert sol.phi == pytest.approx(0.0, abs=1e-20)
        assert sol.converged

    def test_weights_are_capped_column_stochastic(self, rng):
        G = rng.standard_normal((5, 8))
        sol = solve_saddle(G, np.ones(8), 0.2)
        np.testing.assert_allclose(sol.weights.sum(axis=0), 1.0)
        assert np.all(sol.weights <= 0.2 + 1e-12)
        assert np.all(sol.weights >= 0.0)
        assert np.linalg.norm(sol.direction) == pytest.approx(1.0)

    def test_phi_never_exceeds_uniform_start(self, rng):
        G = rng.standard_normal((6, 10))
        sol = solve_saddle(G, np.ones(10), 0.15)
        uniform_residual = G - G.mean(axis=1, keepdims=True)
        assert sol.phi <= np.linalg.norm(uniform_residual, 2) ** 2 + 1e-9

    def test_zero_alternations_reports_not_converged(self, rng):
        sol = solve_saddle(rng.standard_normal((3, 5)), np.ones(5), 0.5, max_alternations=0)
        assert sol.iterations == 0
        assert not sol.converged

    def test_infeasible(self):
        with pytest.raises(InfeasibleFilterError):
            solve_saddle(np.ones((2, 3)), np.ones(3), 0.2)

    def test_weight_shape_checked(self):
        with pytest.raises(ValueError):
            solve_saddle(np.ones((2, 3)), np.ones(2), 0.5)


class TestFilterRound:
    def test_downweights_and_drops(self):
        state = FilterState.initial(2, 1.0, 0.0)
        new, done = filter_round(state, solution_with([2.0, 1.0]), 2)
        assert not done
        np.testing.assert_allclose(new.c, [0.0, 0.5])
        assert new.active == (1,)
        assert new.rounds == 1

    def test_terminates_under_threshold(self):
        state = FilterState.initial(2, 1.0, 1.0)
        new, done = filter_round(state, solution_with([2.0, 1.0]), 2)
        assert done
        assert new is state

    def test_tied_maximisers_empty_the_set(self):
        state = FilterState.initial(2, 1.0, 0.0)
        with pytest.raises(FilterCollapsedError):
            filter_round(state, solution_with([2.0, 2.0]), 2)

    def test_tau_length_checked(self):
        with pytest.raises(ValueError):
            filter_round(FilterState.initial(3, 1.0, 0.0), solution_with([1.0, 1.0]), 3)

    def test_negative_sigma0(self):
        with pytest.raises(ValueError):
            FilterState.initial(2, 1.0, -1.0)


class TestEstimate:
    def test_removes_far_pair_around_identical_inliers(self):
        g = np.array([1.0, -2.0, 0.5])
        outlier = g + np.array([100.0, 0.0, 0.0])
        G = np.column_stack([g] * 8 + [outlier] * 2)
        ghat, report = estimate(G, 1.0, 0.2)
        np.testing.assert_allclose(ghat, g, atol=1e-6)
        assert report.removed_indices == (8, 9)
        assert report.active_indices == tuple(range(8))
        assert report.sum_c_tau_final <= 4 * 10 * 1.0

    def test_no_outliers_returns_mean(self, rng):
        G = rng.standard_normal((3, 12)) * 0.01
        ghat, report = estimate(G, 1.0, 0.0)
        np.testing.assert_allclose(ghat, G.mean(axis=1))
        assert report.rounds == 0
        assert report.removed_indices == ()

    def test_planted_omniscient_shift(self):
        inst = planted_gradients(np.random.default_rng(3), 50, 20, 1.0, 0.2)
        ghat, report = estimate(inst.grads, 1.0, 0.2)
        assert set(inst.corrupt.tolist()) <= set(report.removed_indices)
        assert np.linalg.norm(ghat - inst.inlier_mean) < 2.0
        assert inst.naive_error > 5.0

    def test_zero_sigma_with_distinct_columns_collapses(self):
        G = np.array([[0.0, 1.0, 2.0, 3.0]])
        with pytest.raises((FilterCollapsedError, InfeasibleFilterError)):
            estimate(G, 0.0, 0.0)

    @pytest.mark.parametrize(
        "G, eps_tilde",
        [
            (np.ones((2, 1)), 0.1),
            (np.ones((2, 4)), 0.3),
            (np.ones((2, 4)), -0.1),
            (np.array([[1.0, np.nan]]), 0.0),
            (np.ones(4), 0.0),
        ],
    )
    def test_invalid_inputs(self, G, eps_tilde):
        with pytest.raises(ValueError):
            estimate(G, 1.0, eps_tilde)

    def test_report_to_dict(self):
        G = np.column_stack([np.ones(2)] * 4)
        _, report = estimate(G, 1.0, 0.0)
        data = report.to_dict()
        assert data["active_indices"] == [0, 1, 2, 3]
        assert data["removed_indices"] == []
        assert data["converged"] is True


@pytest.mark.slow
@pytest.mark.parametrize(
    "kind",
    [AttackKind.OMNISCIENT_SHIFT, AttackKind.SIGN_FLIP, AttackKind.CONSTANT, AttackKind.GAUSSIAN_NOISE],
)
def test_planted_error_bounded_across_seeds(kind):
    errors = []
    for seed in range(100):
        inst = planted_gradients(np.random.default_rng(seed), 50, 20, 1.0, 0.2, kind)
        ghat, _ = estimate(inst.grads, 1.0, 0.2)
        errors.append(float(np.linalg.norm(ghat - inst.inlier_mean)))
    assert max(errors) < 2.0


class TestConcentration:
    def test_max_eig_deviation_two_points(self):
        assert max_eig_deviation(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2)) == pytest.approx(1.0)

    def test_identical_points(self):
        assert max_eig_deviation(np.ones((3, 2)), np.ones(2)) == 0.0

    def test_empty_points(self):
        with pytest.raises(ValueError):
            max_eig_deviation(np.zeros((0, 2)), np.zeros(2))

    def test_full_batch_check(self):
        G = np.array([[1.0, -1.0]])
        lam, ok = full_batch_concentration_check(G, 1.0)
        assert lam == pytest.approx(1.0)
        assert ok
        _, ok = full_batch_concentration_check(G, 0.1)
        assert not ok

    @pytest.mark.parametrize("seed", range(5))
    def test_max_eig_deviation_matches_dense(self, seed):
        rng = np.random.default_rng(seed)
        points = rng.standard_normal((6, 5))
        center = rng.standard_normal(5)
        dev = points - center
        dense = np.linalg.eigvalsh(dev.T @ dev / 6)[-1]
        assert max_eig_deviation(points, center) == pytest.approx(dense, rel=1e-8)

    def test_full_batch_bound_on_random_federations(self):
        rng = np.random.default_rng(2024)
        failures = []
        for trial in range(100):
            d = int(rng.integers(2, 9))
            spec = HeteroModelSpec(
                d=d,
                R=int(rng.integers(5, 21)),
                n=int(rng.integers(10, 41)),
                noise_std=float(rng.uniform(0.0, 0.5)),
                shift_radius=float(rng.uniform(0.1, 2.0)),
            )
            worlds = generate(rng, spec).worlds
            x = rng.standard_normal(d)
            G = np.column_stack([local_full_gradient(ObjectiveSpec(), ds, x) for ds in worlds])
            kappa = float(np.max(np.linalg.norm(G - G.mean(axis=1, keepdims=True), axis=0)))
            _, ok = full_batch_concentration_check(G, kappa)
            if not ok:
                failures.append(trial)
        assert failures == []


def _filter_trace(G, sigma0_sq, eps_tilde):
    """Run the filter loop by hand, returning (before, solution, after, done) per round"""
    m = G.shape[1]
    alpha = 1.0 - eps_tilde
    cap = filter_cap(alpha, m)
    state = FilterState.initial(m, alpha, sigma0_sq)
    trace = []
    for _ in range(m + 1):
        active = np.asarray(state.active, dtype=np.int64)
        sol = solve_saddle(G[:, active], state.c[active], cap)
        new, done = filter_round(state, sol, m)
        trace.append((state, sol, new, done))
        if done:
            break
        state = new
    return trace


class TestFilterInvariants:
    @pytest.mark.parametrize("kind", [AttackKind.OMNISCIENT_SHIFT, AttackKind.SIGN_FLIP])
    @pytest.mark.parametrize("eps_tilde", [0.1, 0.2, 0.25])
    def test_structure_holds_on_planted_instances(self, kind, eps_tilde):
        R = 50
        alpha = 1.0 - eps_tilde
        for seed in range(10):
            inst = planted_gradients(np.random.default_rng(seed), R, 20, 1.0, eps_tilde, kind)
            trace = _filter_trace(inst.grads, 1.0, eps_tilde)
            assert len(trace) - 1 <= R
            for before, sol, after, done in trace:
                assert np.all(after.c <= before.c)
                assert len(after.active) >= min_active(alpha, R)
                if not done:
                    worst = before.active[int(np.argmax(sol.tau))]
                    assert worst not in after.active

    @pytest.mark.parametrize("kind", [AttackKind.OMNISCIENT_SHIFT, AttackKind.SIGN_FLIP])
    @pytest.mark.parametrize("eps_tilde", [0.1, 0.2, 0.25])
    def test_few_inliers_removed(self, kind, eps_tilde):
        R = 50
        alpha = 1.0 - eps_tilde
        limit = 2.0 * alpha * (1.0 - alpha) * R / (4.0 - alpha)
        for seed in range(20):
            inst = planted_gradients(np.random.default_rng(seed), R, 20, 1.0, eps_tilde, kind)
            _, report = estimate(inst.grads, 1.0, eps_tilde)
            inliers_removed = set(report.removed_indices) - set(inst.corrupt.tolist())
            assert len(inliers_removed) <= limit
            assert len(report.active_indices) >= min_active(alpha, R)


def test_converged_saddle_is_a_mutual_best_response():
    cap = filter_cap(0.8, 12)
    checked = 0
    for seed in range(100):
        G = np.random.default_rng(seed).standard_normal((6, 12))
        c = np.ones(12)
        sol = solve_saddle(G, c, cap)
        if not sol.converged:
            continue
        checked += 1
        # direction side: v is the top singular direction of the residual
        top = np.linalg.svd(G - G @ sol.weights, compute_uv=False)[0] ** 2
        assert sol.phi == pytest.approx(top, rel=1e-9)
        # weight side: no column fit lowers the error along v
        s = G.T @ sol.direction
        best = sum((s[i] - column_fit(s, s[i], cap)[1]) ** 2 for i in range(12))
        assert sol.phi - best <= 1e-6 * sol.scale
    assert checked >= 10


@pytest.mark.slow
@pytest.mark.parametrize("kind", [AttackKind.OMNISCIENT_SHIFT, AttackKind.SIGN_FLIP])
@pytest.mark.parametrize("eps_tilde", [0.1, 0.2, 0.25])
def test_planted_error_within_resilience_radius(kind, eps_tilde):
    errors, naive = [], []
    for seed in range(100):
        inst = planted_gradients(np.random.default_rng(seed), 50, 20, 1.0, eps_tilde, kind)
        ghat, _ = estimate(inst.grads, 1.0, eps_tilde)
        errors.append(float(np.linalg.norm(ghat - inst.inlier_mean)))
        naive.append(inst.naive_error)
    assert max(errors) <= UPSILON_CONST * np.sqrt(eps_tilde)
    if kind is AttackKind.OMNISCIENT_SHIFT:
        assert np.median(errors) <= 0.1 * np.median(naive)
