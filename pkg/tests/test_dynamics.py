import numpy as np
import pytest
from scipy.linalg import expm

from memhjb.dynamics import (
    BlowUpError,
    ControlLaw,
    Dynamics,
    PicardDivergenceError,
    check_lipschitz,
    continuity_ratio,
    picard_constant,
    picard_ratio_bound,
    picard_solve,
    shift_history,
    solve_cauchy,
    weak_continuity_probe,
)
from memhjb.kernel import HistoryState, Kernel
from memhjb.problems import make_problem, problem_names


def _linear_memory_oracle(x0, m0, t, u=0.0):
    """y' = u + m, m' = y - m, solved with an augmented matrix exponential."""
    M = np.array([[0.0, 1.0, u], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    return (expm(M * t) @ np.array([x0, m0, 1.0]))[0]


def test_linear_memory_matches_matrix_exponential():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], 0.0, 0.05, 2.0)
    tr = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 1.0, 0.025)
    assert tr.y[-1, 0] == pytest.approx(_linear_memory_oracle(1.0, 0.0, 1.0), abs=1e-8)
    assert tr.y[-1, 0] == pytest.approx(1.39729651650004, abs=1e-8)


def test_controlled_memory_with_exponential_past():
    p = make_problem("controlled_memory_lq")
    # z = 0.5 e^{-s} with an exponential tail: the initial channel value is 0.25
    alpha = HistoryState.from_function([0.3], lambda s: 0.5 * np.exp(-s), 0.001, 4.0, tail_rate=1.0)
    tr = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(2), 1.5, 0.01)
    assert tr.y[-1, 0] == pytest.approx(_linear_memory_oracle(0.3, 0.25, 1.5, u=1.0), abs=1e-6)


def test_rk4_fourth_order():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], 0.0, 0.05, 2.0)
    exact = _linear_memory_oracle(1.0, 0.0, 1.0)
    err = [abs(solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 1.0, h).y[-1, 0] - exact)
           for h in (0.2, 0.1)]
    assert 12 < err[0] / err[1] < 20


def test_uncontrolled_decay_is_exact_exponential():
    p = make_problem("uncontrolled_lq")
    alpha = HistoryState.from_function([2.0], 1.0, 0.1, 3.0)
    tr = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 2.0, 0.01)
    np.testing.assert_allclose(tr.y[:, 0], 2.0 * np.exp(-tr.t), atol=1e-10)


def test_quadrature_mode_agrees_with_channel():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], lambda s: np.exp(-2 * s), 0.005, 10.0)
    u = ControlLaw.constant(0)
    a = solve_cauchy(p.dyn, p.kernel, alpha, u, 1.0, 0.005, memory="channel").y
    b = solve_cauchy(p.dyn, p.kernel, alpha, u, 1.0, 0.005, memory="quadrature").y
    assert np.max(np.abs(a - b)) < 1e-5


def test_tabulated_kernel_reproduces_exponential():
    p = make_problem("linear_memory")
    s = np.linspace(0, 20, 8001)
    tab = Kernel.tabulated(s[1], np.exp(-s))
    alpha = HistoryState.from_function([1.0], 0.0, 0.05, 2.0)
    tr = solve_cauchy(p.dyn, tab, alpha, ControlLaw.constant(0), 1.0, 0.005)
    assert tr.y[-1, 0] == pytest.approx(_linear_memory_oracle(1.0, 0.0, 1.0), abs=1e-5)


def test_compact_kernel_forgets_old_past():
    # with A supported on [0, 1] the state on [0, 1) never sees z beyond lag 2
    p = make_problem("linear_memory")
    tab = Kernel.tabulated(0.5, [1.0, 0.5, 0.0])
    a = HistoryState.from_function([1.0], lambda s: np.where(s > 2.0, 5.0, 0.0), 0.05, 4.0)
    b = HistoryState.from_function([1.0], 0.0, 0.05, 4.0)
    ya = solve_cauchy(p.dyn, tab, a, ControlLaw.constant(0), 1.0, 0.05).y
    yb = solve_cauchy(p.dyn, tab, b, ControlLaw.constant(0), 1.0, 0.05).y
    np.testing.assert_array_equal(ya, yb)


def test_blow_up_is_reported():
    dyn = Dynamics(lambda x, u, a: 100.0 * x**3, np.zeros(1), lipschitz=1.0)
    alpha = HistoryState.from_function([10.0], 0.0, 0.1, 1.0)
    with np.errstate(all="ignore"), pytest.raises(BlowUpError) as info:
        solve_cauchy(dyn, Kernel.zero(), alpha, ControlLaw.constant(0), 1.0, 0.01)
    assert 0 < info.value.time <= 1.0


def test_control_law_steps_and_shift():
    u = ControlLaw.uniform([0, 2, 1], 1.5)
    np.testing.assert_array_equal(u.step_indices(0.25, 8), [0, 0, 2, 2, 1, 1, 1, 1])
    v = u.shifted(0.75)
    np.testing.assert_allclose(v.breakpoints, [0.0, 0.25, 0.75])
    np.testing.assert_array_equal(v.indices, [2, 1])
    with pytest.raises(ValueError):
        u.step_indices(0.2, 8)
    with pytest.raises(ValueError):
        ControlLaw(np.array([0.0, 1.0, 0.5]), np.array([0, 1]))


def test_horizon_must_be_on_grid():
    p = make_problem("zero")
    alpha = HistoryState.from_function([1.0], 0.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 1.0, 0.3)


@pytest.mark.parametrize("name", problem_names())
def test_declared_lipschitz_constants_hold(name, rng):
    p = make_problem(name)
    assert check_lipschitz(p.dyn, rng) <= p.dyn.lipschitz + 1e-12


def test_picard_contracts_within_bound():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], lambda s: 0.5 * np.exp(-s), 0.01, 10.0)
    C = picard_constant(p.dyn, p.kernel)
    assert C == 1.0
    theta = 2 * C + 1
    tr, dist = picard_solve(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 1.0, 1e-3, theta)
    ratios = dist[1:] / dist[:-1]
    ratios = ratios[dist[:-1] > 1e-12]
    assert np.max(ratios) <= picard_ratio_bound(C, theta)
    ref = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 1.0, 1e-3)
    assert np.max(np.abs(tr.y - ref.y)) < 1e-6


def test_picard_ratio_bound_formula():
    assert picard_ratio_bound(1.0, 3.0) == pytest.approx(1 / 3 + 1 / (np.sqrt(2) * 3**1.5))


def test_picard_divergence_detected():
    dyn = Dynamics(lambda x, u, a: 50.0 * x, np.zeros(1), lipschitz=50.0)
    alpha = HistoryState.from_function([1.0], 0.0, 0.1, 1.0)
    with pytest.raises(PicardDivergenceError):
        picard_solve(dyn, Kernel.zero(), alpha, ControlLaw.constant(0), 1.0, 0.01, theta=0.1)


def test_shift_history_semigroup():
    p = make_problem("linear_memory")
    h = 0.01
    alpha = HistoryState.from_function([1.0], lambda s: np.exp(-s), h, 10.0, tail_rate=1.0)
    full = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 2.0, h)
    mid = shift_history(full, 1.0)
    assert mid.x[0] == full.y[100, 0]
    np.testing.assert_allclose(mid.z[:101, 0], full.y[100::-1, 0])
    np.testing.assert_allclose(mid.z[101:, 0], alpha.z[1:-100, 0])
    rest = solve_cauchy(p.dyn, p.kernel, mid, ControlLaw.constant(0), 1.0, h)
    assert rest.y[-1, 0] == pytest.approx(full.y[-1, 0], abs=1e-4)


def test_continuity_ratio_zero_for_identical_states():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], 0.0, 0.05, 2.0)
    assert continuity_ratio(p.dyn, p.kernel, alpha, alpha, ControlLaw.constant(0), 1.0, 0.01, 3.0) == 0.0


def test_weak_continuity_decays_with_frequency():
    p = make_problem("linear_memory")
    alpha = HistoryState.from_function([1.0], 0.0, 0.001, 10.0)
    gaps = [weak_continuity_probe(p.dyn, p.kernel, alpha, n, ControlLaw.constant(0), 1.0, 0.01) for n in (1, 10, 100)]
    assert gaps[0] > gaps[1] > gaps[2]
    # int_0^inf e^{-s} sin(n s) ds = n / (1 + n^2) sets the size of the kick
    assert gaps[2] < 3 * 100 / (1 + 100**2)


def test_trajectory_csv(tmp_path):
    p = make_problem("zero")
    alpha = HistoryState.from_function([1.5], 0.0, 0.1, 1.0)
    tr = solve_cauchy(p.dyn, p.kernel, alpha, ControlLaw.constant(0), 0.5, 0.1)
    rows = np.loadtxt(tr.to_csv(tmp_path / "t.csv"), delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 0], np.arange(6) * 0.1)
    np.testing.assert_array_equal(rows[:, 1], 1.5)
