import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from memhjb.kernel import (
    HistoryState,
    Kernel,
    exp_memory_channel,
    history_memory,
    kernel_norms,
    load_tabulated_kernel,
    memory_integral,
    trapezoid_weights,
)

SQRT_HALF = 0.7071067811865476


# -- norms ---------------------------------------------------------------

def test_norms_unit_exponential():
    n = kernel_norms(Kernel.exponential(1.0))
    assert n == pytest.approx((1.0, SQRT_HALF, SQRT_HALF), rel=1e-14)
    assert n.h1 == pytest.approx(1.0)


def test_norms_scaled_exponential():
    n = kernel_norms(Kernel.exponential(3.0, 2.0))
    assert n == pytest.approx((2 / 3, 2 / np.sqrt(6), 6 / np.sqrt(6)), rel=1e-14)


def test_norms_zero_kernel():
    assert tuple(kernel_norms(Kernel.zero())) == (0.0, 0.0, 0.0)
    assert tuple(kernel_norms(Kernel.tabulated(0.1, np.zeros(11)))) == (0.0, 0.0, 0.0)


def test_norms_sum_of_exponentials_against_mpmath():
    k = Kernel.sum_of_exponentials([(1.0, 1.0), (2.5, -0.7)])
    f = lambda s: mp.e ** (-s) - 0.7 * mp.e ** (-2.5 * s)  # noqa: E731
    df = lambda s: -mp.e ** (-s) + 1.75 * mp.e ** (-2.5 * s)  # noqa: E731
    l1 = mp.quad(lambda s: abs(f(s)), [0, mp.log(0.7) / -1.5, mp.inf])
    l2 = mp.sqrt(mp.quad(lambda s: f(s) ** 2, [0, mp.inf]))
    dl2 = mp.sqrt(mp.quad(lambda s: df(s) ** 2, [0, mp.inf]))
    assert kernel_norms(k) == pytest.approx((float(l1), float(l2), float(dl2)), rel=1e-8)


def test_tabulated_norms_converge_to_closed_form():
    s = np.linspace(0.0, 40.0, 40001)
    k = Kernel.tabulated(s[1], np.exp(-s))
    assert kernel_norms(k) == pytest.approx((1.0, SQRT_HALF, SQRT_HALF), rel=1e-6)


def test_non_smooth_tabulated_has_no_derivative_norm():
    k = Kernel.tabulated(0.5, [1.0, 0.0, 1.0], smooth=False)
    assert kernel_norms(k).dl2 is None
    assert kernel_norms(k).h1 is None


def test_kernel_validation():
    with pytest.raises(ValueError):
        Kernel.exponential(0.0)
    with pytest.raises(ValueError):
        Kernel.exponential(-1.0)
    with pytest.raises(ValueError):
        Kernel.tabulated(0.0, [1.0, 2.0])


def test_tabulated_evaluation_and_support():
    k = Kernel.tabulated(0.5, [1.0, 0.5, 0.0])
    assert k.support == 1.0
    np.testing.assert_allclose(k(np.array([0.0, 0.25, 1.0, 1.5]))[:, 0, 0], [1.0, 0.75, 0.0, 0.0])


def test_matrix_kernel_shapes():
    k = Kernel.exponential(1.0, np.array([[1.0, 2.0]]))
    assert (k.k, k.d) == (1, 2)
    assert k(np.zeros(3)).shape == (3, 1, 2)


def test_load_tabulated_csv(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("s,A\n0,1\n0.5,0.5\n1.0,0\n")
    k = load_tabulated_kernel(path)
    assert k.support == 1.0
    assert k(np.array([0.5]))[0, 0, 0] == 0.5


# -- history states --------------------------------------------------------

def test_history_grid_and_norm_reproducible():
    a = HistoryState.from_function([1.0], lambda s: np.exp(-s), 0.01, 5.0)
    b = HistoryState.from_function([1.0], lambda s: np.exp(-s), 0.01, 5.0)
    assert a.s_max == 5.0 and a.n == 500
    assert a.l2_norm() == b.l2_norm()  # bit-for-bit
    assert a.l2_norm() == pytest.approx(np.sqrt((1 - np.exp(-10)) / 2), rel=5e-5)


def test_history_exponential_tail_norm():
    a = HistoryState.from_function([0.0], lambda s: np.exp(-s), 0.001, 5.0, tail_rate=1.0)
    assert a.l2_norm() == pytest.approx(SQRT_HALF, rel=1e-6)


def test_e0_membership():
    assert HistoryState.from_function([1.0], 1.0, 0.1, 1.0).in_e0()
    assert not HistoryState.from_function([1.0], 0.0, 0.1, 1.0).in_e0()
    assert HistoryState.from_function([1.0], 0.0, 0.1, 1.0).in_e0(tol=1.0)


def test_history_arithmetic_and_validation():
    a = HistoryState.from_function([1.0], 1.0, 0.1, 1.0)
    b = HistoryState.from_function([2.0], lambda s: s, 0.1, 1.0)
    c = a * 2.0 - b
    np.testing.assert_allclose(c.x, [0.0])
    np.testing.assert_allclose(c.z[:, 0], 2.0 - b.grid)
    with pytest.raises(ValueError):
        a + HistoryState.from_function([1.0], 1.0, 0.05, 1.0)
    with pytest.raises(ValueError):
        HistoryState(x=[1.0], z=np.ones((5, 2)), h=0.1)
    with pytest.raises(ValueError):
        HistoryState(x=[np.nan], z=np.ones(5), h=0.1)
    with pytest.raises(ValueError):
        HistoryState.from_function([1.0], 1.0, 0.3, 1.0)


def test_history_is_immutable():
    a = HistoryState.from_function([1.0], 1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        a.z[0, 0] = 3.0


# -- memory integral ---------------------------------------------------------

def test_memory_integral_zero_history():
    a = HistoryState.from_function([0.0], 0.0, 0.01, 5.0)
    assert memory_integral(Kernel.exponential(1.0), a, np.zeros(11), 0.1)[0] == 0.0


def test_memory_integral_exponential_history():
    # int_0^inf e^{-s} e^{-s} ds = 1/2
    a = HistoryState.from_function([1.0], lambda s: np.exp(-s), 1e-3, 30.0)
    assert memory_integral(Kernel.exponential(1.0), a)[0] == pytest.approx(0.5, abs=1e-6)
    # exponential tail makes the window length irrelevant
    b = HistoryState.from_function([1.0], lambda s: np.exp(-s), 1e-3, 3.0, tail_rate=1.0)
    assert memory_integral(Kernel.exponential(1.0), b)[0] == pytest.approx(0.5, abs=1e-6)


def test_memory_integral_constant_past():
    a = HistoryState.from_function([1.0], 1.0, 0.01, 5.0, tail_rate=1e-12)
    k = Kernel.exponential(1.0)
    for t_steps in (0, 37, 200):
        y = np.ones(t_steps + 1)
        assert memory_integral(k, a, y, 0.01)[0] == pytest.approx(1.0, abs=1e-4)


def test_memory_integral_against_mpmath():
    k = Kernel.exponential(3.0, 2.0)
    f = lambda s: np.cos(s) * np.exp(-0.5 * s)  # noqa: E731
    a = HistoryState.from_function([1.0], f, 1e-3, 25.0)
    y = np.cos(1e-3 * np.arange(1001))  # y(t) = cos t on [0, 1]
    t = 1.0
    own = mp.quad(lambda s: 2 * mp.e ** (-3 * s) * mp.cos(t - s), [0, t])
    past = mp.quad(lambda s: 2 * mp.e ** (-3 * (t + s)) * mp.cos(s) * mp.e ** (-0.5 * s), [0, 25])
    assert memory_integral(k, a, y, 1e-3)[0] == pytest.approx(float(own + past), abs=1e-6)


def test_memory_integral_compact_tabulated_kernel():
    # A(s) = (1 - s) on [0, 1]: int_0^1 (1 - s) ds = 1/2 for a constant past
    k = Kernel.tabulated(0.25, [1.0, 0.75, 0.5, 0.25, 0.0])
    a = HistoryState.from_function([1.0], 1.0, 0.05, 3.0)
    assert memory_integral(k, a)[0] == pytest.approx(0.5, abs=1e-12)
    assert memory_integral(k, a, np.ones(41), 0.05)[0] == pytest.approx(0.5, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.integers(0, 2**32 - 1))
def test_memory_integral_linearity(a, b, seed):
    r = np.random.default_rng(seed)
    k = Kernel.sum_of_exponentials([(1.0, 1.0), (0.3, -2.0)])
    h1 = HistoryState(x=[0.0], z=r.normal(size=51), h=0.1)
    h2 = HistoryState(x=[0.0], z=r.normal(size=51), h=0.1)
    y1, y2 = r.normal(size=21), r.normal(size=21)
    combo = memory_integral(k, h1 * a + h2 * b, a * y1 + b * y2, 0.1)
    parts = a * memory_integral(k, h1, y1, 0.1) + b * memory_integral(k, h2, y2, 0.1)
    np.testing.assert_allclose(combo, parts, rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 201, elements=st.floats(-5, 5)), st.floats(0.2, 4.0), st.floats(0.0, 3.0))
def test_history_memory_cauchy_schwarz(z, rate, t):
    h = 0.05
    k = Kernel.exponential(rate)
    hist = HistoryState(x=[0.0], z=z, h=h)
    s = h * np.arange(len(z))
    a_sq = trapezoid_weights(len(z), h) @ np.exp(-2 * rate * (t + s))
    assert abs(history_memory(k, hist, t)[0]) <= np.sqrt(a_sq) * hist.l2_norm() * (1 + 1e-12) + 1e-14


# -- exact channel ---------------------------------------------------------

def test_channel_pure_decay():
    m = exp_memory_channel(1.0, np.zeros(101), 0.01, 1.0)
    assert m[-1, 0] == pytest.approx(np.exp(-1.0), rel=1e-14)


def test_channel_steady_state():
    m = exp_memory_channel(1.0, np.ones(4001), 0.01, 0.0)
    assert m[-1, 0] == pytest.approx(1.0, abs=1e-13)
    # exact for linear data at any step
    np.testing.assert_allclose(m[:, 0], 1 - np.exp(-0.01 * np.arange(4001)), atol=1e-14)


def test_channel_rejects_bad_rate():
    with pytest.raises(ValueError):
        exp_memory_channel(0.0, np.zeros(3), 0.1, 0.0)


def test_channel_matches_quadrature_for_decaying_path():
    h = 1e-3
    t = h * np.arange(1001)
    x = np.exp(-t)
    past = HistoryState.from_function([1.0], 1.0, 0.01, 5.0, tail_rate=1e-12)
    m0 = memory_integral(Kernel.exponential(1.0), past)
    m = exp_memory_channel(1.0, x, h, m0)
    G = memory_integral(Kernel.exponential(1.0), past, x, h)
    assert m[-1, 0] == pytest.approx(G[0], abs=1e-6)
    assert m[-1, 0] == pytest.approx(2 * np.exp(-1.0), abs=1e-5)


def test_channel_vs_quadrature_second_order():
    k = Kernel.exponential(1.0)
    past = HistoryState.from_function([1.0], 0.0, 0.1, 1.0)

    def discrepancy(h):
        t = h * np.arange(int(round(2 / h)) + 1)
        x = np.cos(3 * t)
        m = exp_memory_channel(1.0, x, h, 0.0)[:, 0]
        G = np.array([memory_integral(k, past, x[: n + 1], h)[0] for n in range(0, len(t), int(round(0.25 / h)))])
        return np.max(np.abs(m[:: int(round(0.25 / h))] - G))

    ratio = discrepancy(0.02) / discrepancy(0.01)
    assert 3.5 < ratio < 4.5
