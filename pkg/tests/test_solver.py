import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vapor.mdp import backward_induction, check_flow, occupancy_from_policy, random_mdp
from vapor.solver import (
    SolverOptions,
    VaporProblem,
    certify,
    closed_form_tau,
    dual_certificate,
    dual_value,
    smoothed_gradient,
    smoothed_objective,
    solve_frank_wolfe,
    solve_vapor_lite_tabular,
    solve_weighted_max_entropy,
    vapor_lite_gradient,
    vapor_lite_objective,
    vapor_lite_schedule,
    vapor_objective,
    vapor_objective_tau,
    weighted_entropy_flat,
)

SYM = 2 * 0.5 * np.sqrt(2 * np.log(2))


def one_state(r, sigma):
    r = np.asarray([r], dtype=float)
    return VaporProblem([], np.array([1.0]), [r], [np.asarray([sigma], dtype=float)])


def random_problem(rng, max_L=4, max_S=4, max_A=3, sigma_scale=1.0):
    L = int(rng.integers(1, max_L + 1))
    sizes = tuple(int(x) for x in rng.integers(1, max_S + 1, size=L))
    A = int(rng.integers(2, max_A + 1))
    m = random_mdp(rng, sizes, A)
    sigma = [sigma_scale * rng.random((S, A)) for S in sizes]
    return VaporProblem(m.P, m.rho, m.r, sigma)


def random_feasible(rng, prob):
    pol = [rng.dirichlet(np.ones(prob.layout.A), size=S) for S in prob.layout.layer_sizes]
    return occupancy_from_policy(prob.P, prob.rho, pol)


# --- objective ------------------------------------------------------------------


def test_objective_unit_mass_is_reward():
    prob = one_state([0.7], [3.0])
    assert vapor_objective([np.array([[1.0]])], prob) == pytest.approx(0.7)


def test_objective_without_uncertainty_is_linear():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, sigma_scale=0.0)
    lam = random_feasible(rng, prob)
    lin = sum(float(np.sum(x * r)) for x, r in zip(lam, prob.r))
    assert vapor_objective(lam, prob) == pytest.approx(lin, abs=1e-14)


def test_objective_symmetric_two_actions():
    prob = one_state([0.0, 0.0], [1.0, 1.0])
    assert vapor_objective([np.array([[0.5, 0.5]])], prob) == pytest.approx(1.17741, abs=1e-5)
    # grid oracle: the symmetric point is the constrained maximum
    xs = np.linspace(0, 1, 100001)
    vals = [vapor_objective([np.array([[x, 1 - x]])], prob) for x in xs[::100]]
    assert max(vals) <= vapor_objective([np.array([[0.5, 0.5]])], prob) + 1e-12


def test_objective_zero_mass_convention():
    prob = one_state([1.0, 2.0], [1.0, 1.0])
    assert vapor_objective([np.array([[1.0, 0.0]])], prob) == pytest.approx(1.0)


def test_tau_objective_at_closed_form_equals_objective():
    rng = np.random.default_rng(1)
    for _ in range(20):
        prob = random_problem(rng)
        lam = random_feasible(rng, prob)
        tau = closed_form_tau(lam, prob.sigma)
        assert vapor_objective_tau(lam, tau, prob) == pytest.approx(vapor_objective(lam, prob), abs=1e-12)


def test_tau_objective_is_upper_envelope():
    rng = np.random.default_rng(2)
    for _ in range(20):
        prob = random_problem(rng)
        lam = random_feasible(rng, prob)
        base = vapor_objective(lam, prob)
        for scale in (0.01, 0.3, 1.0, 7.0, 100.0):
            tau = [scale * (rng.random(s.shape) + 0.1) for s in prob.sigma]
            assert vapor_objective_tau(lam, tau, prob) >= base - 1e-10


def test_envelope_attained_at_closed_form():
    rng = np.random.default_rng(3)
    prob = random_problem(rng)
    lam = random_feasible(rng, prob)
    tau_star = closed_form_tau(lam, prob.sigma)
    best = vapor_objective_tau(lam, tau_star, prob)
    for f in np.geomspace(0.1, 10, 41):
        tau = [np.where(np.isfinite(t), t * f, t) for t in tau_star]
        assert vapor_objective_tau(lam, tau, prob) >= best - 1e-10
    assert best == pytest.approx(vapor_objective(lam, prob), abs=1e-10)


def test_tau_objective_rejects_nonpositive_tau():
    prob = one_state([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        vapor_objective_tau([np.array([[0.5, 0.5]])], [np.array([[1.0, 0.0]])], prob)


def test_tau_objective_cold_limit_without_uncertainty():
    rng = np.random.default_rng(4)
    prob = random_problem(rng, sigma_scale=0.0)
    lam = random_feasible(rng, prob)
    tau = [np.full(s.shape, 1e-6) for s in prob.sigma]
    lin = sum(float(np.sum(x * r)) for x, r in zip(lam, prob.r))
    val = vapor_objective_tau(lam, tau, prob)
    assert val >= lin and val - lin < 1e-4


def test_closed_form_tau_values():
    t = closed_form_tau([np.array([[np.exp(-2.0), 0.3]])], [np.array([[1.0, 0.0]])])
    assert t[0][0, 0] == pytest.approx(0.5)
    assert np.isinf(t[0][0, 1])
    assert np.isinf(closed_form_tau(np.array([[1.0]]), np.array([[2.0]]))[0, 0])


def test_closed_form_tau_balances_terms():
    x, s = 0.37, 1.3
    tau = closed_form_tau(np.array([[x]]), np.array([[s]]))[0, 0]
    assert s**2 / (2 * tau) - tau * np.log(x) == pytest.approx(s * np.sqrt(-2 * np.log(x)))


@pytest.mark.parametrize("seed", range(5))
def test_concavity(seed):
    rng = np.random.default_rng(10 + seed)
    prob = random_problem(rng)
    for _ in range(20):
        a, b = random_feasible(rng, prob), random_feasible(rng, prob)
        t = rng.random()
        mix = [t * x + (1 - t) * y for x, y in zip(a, b)]
        lhs = vapor_objective(mix, prob)
        rhs = t * vapor_objective(a, prob) + (1 - t) * vapor_objective(b, prob)
        assert lhs >= rhs - 1e-9


# --- smoothed gradient ------------------------------------------------------------


def fd_check(value, grad, x, h=1e-6):
    g = grad(x)
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        num[idx] = (value(x + e) - value(x - e)) / (2 * h)
    return g, num


def test_smoothed_gradient_finite_differences():
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        prob = random_problem(rng, max_L=2, max_S=3)
        x = prob.layout.stack(random_feasible(rng, prob))
        x = np.clip(x, 1e-3, 0.99)  # keep the stencil away from the kinks
        delta = 1e-3
        g, num = fd_check(lambda z: smoothed_objective(z, prob, delta), lambda z: smoothed_gradient(z, prob, delta), x)
        worst = max(worst, float(np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-8))))
    assert worst <= 1e-4


def test_smoothed_gradient_without_uncertainty_is_reward():
    rng = np.random.default_rng(21)
    prob = random_problem(rng, sigma_scale=0.0)
    lam = random_feasible(rng, prob)
    for g, r in zip(smoothed_gradient(lam, prob, 1e-3), prob.r):
        np.testing.assert_array_equal(g, r)


def test_smoothed_gradient_clamped_branch():
    delta = 1e-3
    prob = one_state([0.4, -0.2], [2.0, 2.0])
    g = smoothed_gradient([np.array([[1 - delta, delta]])], prob, delta)
    assert g[0][0, 0] == 0.4
    assert g[0][0, 1] != -0.2


def test_smoothed_gradient_rejects_bad_delta():
    prob = one_state([0.0], [1.0])
    with pytest.raises(ValueError):
        smoothed_gradient([np.array([[1.0]])], prob, 0.0)


# --- Frank-Wolfe -----------------------------------------------------------------------


def test_fw_without_uncertainty_is_greedy_vertex():
    rng = np.random.default_rng(30)
    m = random_mdp(rng, (2, 3, 2), 3)
    prob = VaporProblem(m.P, m.rho, m.r, [np.zeros_like(x) for x in m.r])
    lam, diag = solve_frank_wolfe(prob)
    values, pi = backward_induction(m)
    target = occupancy_from_policy(m.P, m.rho, pi)
    for a, b in zip(lam, target):
        np.testing.assert_allclose(a, b, atol=1e-9)
    assert diag.objective == pytest.approx(m.rho @ values.V[0], abs=1e-9)


def test_fw_symmetric_problem():
    prob = one_state([0.0, 0.0], [1.0, 1.0])
    lam, diag = solve_frank_wolfe(prob)
    np.testing.assert_allclose(lam[0][0], [0.5, 0.5], atol=1e-3)
    assert diag.objective == pytest.approx(SYM, abs=1e-4)


def test_fw_diagnostics_and_trace(tmp_path):
    rng = np.random.default_rng(31)
    prob = random_problem(rng)
    lam, diag = solve_frank_wolfe(prob, SolverOptions(gap_tol=1e-6))
    assert diag.fw_gap <= 1e-6
    assert check_flow(lam, prob.P, prob.rho, 1e-8)[0]
    assert np.all(np.diff(diag.objective_trace) >= -1e-9)
    path = tmp_path / "trace.csv"
    diag.dump_trace(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,objective,fw_gap,max_flow_residual"
    assert len(lines) == len(diag.objective_trace) + 1


def test_fw_reports_nonconvergence_without_raising():
    rng = np.random.default_rng(32)
    prob = random_problem(rng)
    _, diag = solve_frank_wolfe(prob, SolverOptions(max_iters=1, gap_tol=1e-14))
    assert diag.iterations == 1


@pytest.mark.parametrize("step", ["pairwise", "line_search", "open_loop"])
def test_step_rules_stay_feasible(step):
    rng = np.random.default_rng(33)
    prob = random_problem(rng)
    lam, diag = solve_frank_wolfe(prob, SolverOptions(step=step, max_iters=300))
    assert check_flow(lam, prob.P, prob.rho, 1e-8)[0]


@pytest.mark.parametrize("A", [2, 3, 4])
def test_fw_matches_simplex_grid_on_one_state(A):
    rng = np.random.default_rng(40 + A)
    for _ in range(3):
        prob = one_state(rng.normal(size=A) * 0.5, rng.random(A))
        _, diag = solve_frank_wolfe(prob, SolverOptions(gap_tol=1e-8, accuracy=1e-6))
        step = 1e-3 if A == 2 else (1e-2 if A == 3 else 2.5e-2)
        n = int(round(1 / step))
        best = -np.inf
        for c in itertools.product(range(n + 1), repeat=A - 1):
            if sum(c) > n:
                continue
            x = np.array(list(c) + [n - sum(c)]) * step
            best = max(best, vapor_objective([x[None, :]], prob))
        # coarse grids only bound the maximum from below
        assert diag.objective >= best - 1e-4
        if A == 2:
            assert diag.objective <= best + 1e-4


# --- dual ---------------------------------------------------------------------------


def test_dual_substitution():
    rng = np.random.default_rng(50)
    m = random_mdp(rng, (2, 3), 2)
    prob = VaporProblem(m.P, m.rho, [np.zeros_like(x) for x in m.r], [np.zeros_like(x) for x in m.r])
    V = [np.zeros(2), np.zeros(3)]
    tau = [np.ones((2, 2)), np.ones((3, 2))]
    assert dual_value(V, tau, prob) == pytest.approx(10 * np.exp(-1.0))


def test_weak_duality_sampled_pairs():
    rng = np.random.default_rng(51)
    for _ in range(50):
        prob = random_problem(rng)
        V = [rng.normal(size=S) * 2 for S in prob.layout.layer_sizes]
        tau = [rng.random(s.shape) * 3 + 1e-3 for s in prob.sigma]
        d = dual_value(V, tau, prob)
        for _ in range(5):
            assert d >= vapor_objective(random_feasible(rng, prob), prob) - 1e-12


def test_dual_rejects_nonpositive_tau():
    prob = one_state([0.0], [1.0])
    with pytest.raises(ValueError):
        dual_value([np.zeros(1)], [np.zeros((1, 1))], prob)


def test_certificate_closes_gap_on_small_instances():
    rng = np.random.default_rng(52)
    for _ in range(10):
        prob = random_problem(rng, max_L=3, max_S=3)
        lam, _ = solve_frank_wolfe(prob, SolverOptions(gap_tol=1e-6))
        d, p, gap = certify(lam, prob)
        assert -1e-9 <= gap <= 1e-3


def test_certificate_without_refinement_is_valid_bound():
    rng = np.random.default_rng(53)
    prob = random_problem(rng, max_L=2, max_S=3)
    lam, _ = solve_frank_wolfe(prob)
    V, tau = dual_certificate(lam, prob, refine=False)
    assert dual_value(V, tau, prob) >= vapor_objective(lam, prob) - 1e-9


# --- VAPOR-lite ------------------------------------------------------------------------


def test_lite_schedule():
    assert vapor_lite_schedule(1, 1, 1) == pytest.approx(np.sqrt(2))
    with pytest.raises(ValueError):
        vapor_lite_schedule(1, 1, 0)


def test_lite_without_uncertainty_is_greedy():
    rng = np.random.default_rng(60)
    m = random_mdp(rng, (2, 2, 3), 2)
    prob = VaporProblem(m.P, m.rho, m.r, [np.zeros_like(x) for x in m.r])
    lam, _ = solve_vapor_lite_tabular(prob, 2.0)
    _, pi = backward_induction(m)
    for a, b in zip(lam, occupancy_from_policy(m.P, m.rho, pi)):
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_lite_gradient_finite_differences():
    rng = np.random.default_rng(61)
    worst = 0.0
    for _ in range(100):
        prob = random_problem(rng, max_L=2, max_S=3)
        x = prob.layout.stack(random_feasible(rng, prob))
        x = np.clip(x, 1e-3, None)
        c = 1.0 + rng.random()
        g, num = fd_check(lambda z: vapor_lite_objective(z, prob, c), lambda z: vapor_lite_gradient(z, prob, c), x)
        worst = max(worst, float(np.max(np.abs(g - num) / np.maximum(np.abs(num), 1e-8))))
    assert worst <= 1e-4


def test_lite_upper_bounds_vapor_objective():
    # c = sqrt(2)(1 + log(1/eta)) dominates up to sqrt(2) sigma_max eta per (layer, state) pair
    rng = np.random.default_rng(62)
    for _ in range(10):
        prob = random_problem(rng, max_L=3, max_S=3)
        S, L = prob.layout.n_states, prob.layout.L
        eta = 1.0 / (S * L)
        c = np.sqrt(2) * (1 + np.log(1 / eta))
        bias = np.sqrt(2) * prob.sigma_max * S * eta
        lam, _ = solve_vapor_lite_tabular(prob, c, SolverOptions(max_iters=500))
        for x in [lam] + [random_feasible(rng, prob) for _ in range(5)]:
            assert vapor_lite_objective(x, prob, c, floor=1e-300) >= vapor_objective(x, prob) - bias


def test_lite_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        solve_vapor_lite_tabular(one_state([0.0], [1.0]), 0.0)


# --- weighted max-entropy --------------------------------------------------------------


def test_max_entropy_symmetric():
    lam, _ = solve_weighted_max_entropy([np.ones((1, 2))], [], np.array([1.0]))
    np.testing.assert_allclose(lam[0][0], [0.5, 0.5], atol=1e-4)


def test_max_entropy_zero_weight_cell_absorbs_slack():
    # -x log x peaks at 1/e, so weighted cells stop there and the unweighted one takes the rest
    w = [np.array([[1.0, 0.0, 1.0]])]
    lam, _ = solve_weighted_max_entropy(w, [], np.array([1.0]), SolverOptions(gap_tol=1e-8))
    e = np.exp(-1.0)
    np.testing.assert_allclose(lam[0][0], [e, 1 - 2 * e, e], atol=1e-4)


def test_max_entropy_objective_and_feasibility():
    rng = np.random.default_rng(70)
    m = random_mdp(rng, (2, 3, 3), 2)
    w = [rng.random((S, 2)) for S in (2, 3, 3)]
    lam, diag = solve_weighted_max_entropy(w, m.P, m.rho)
    assert check_flow(lam, m.P, m.rho, 1e-8)[0]
    for _ in range(20):
        pol = [rng.dirichlet(np.ones(2), size=S) for S in (2, 3, 3)]
        other = np.concatenate(occupancy_from_policy(m.P, m.rho, pol))
        assert weighted_entropy_flat(other, np.concatenate(w), 0.0) <= diag.objective + 1e-6


def test_max_entropy_rejects_negative_weights():
    with pytest.raises(ValueError):
        solve_weighted_max_entropy([np.array([[-1.0, 1.0]])], [], np.array([1.0]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_property_solver_output_feasible_and_monotone(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, max_L=3, max_S=3)
    lam, diag = solve_frank_wolfe(prob, SolverOptions(max_iters=400))
    assert check_flow(lam, prob.P, prob.rho, 1e-8)[0]
    assert np.all(np.diff(diag.objective_trace) >= -1e-9)
