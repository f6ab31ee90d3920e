import numpy as np
import pytest

from memhjb.hilbert import (
    DomainError,
    InternalConsistencyError,
    apply_B,
    apply_B_fd,
    apply_T,
    apply_Tstar,
    b_image_norm,
    b_norm_routes,
    b_norm_sq,
    dual_h1_norm,
    inner,
    inverse_check,
    lower_bound_ratio,
    tb_form,
    tb_form_closed,
)
from memhjb.kernel import HistoryState


def point(x, f, h=1e-3, S=30.0):
    return HistoryState.from_function([x], f, h, S)


def exp_point(x, h=1e-3):
    return point(x, lambda s: np.exp(-s), h)


# hand-solved: z = e^{-s} gives w = (A + s/2) e^{-s} with 3A - 1 = x

def test_closed_form_unit_point():
    B = apply_B(exp_point(1.0))
    assert B.y[0] == pytest.approx(5 / 6, abs=1e-6)
    assert B.w0[0] == pytest.approx(2 / 3, abs=1e-6)
    np.testing.assert_allclose(B.w[:, 0], (2 / 3 + B.s / 2) * np.exp(-B.s), atol=1e-6)
    assert b_norm_sq(exp_point(1.0)) == pytest.approx(31 / 24, abs=1e-6)
    assert tb_form(exp_point(1.0)) == pytest.approx(3 / 8, abs=1e-6)


def test_closed_form_pure_history_and_pure_state():
    B = apply_B(exp_point(0.0))
    assert (B.y[0], B.w0[0]) == pytest.approx((1 / 6, 1 / 3), abs=1e-6)
    B = apply_B(point(1.0, 0.0))
    assert (B.y[0], B.w0[0]) == pytest.approx((2 / 3, 1 / 3), abs=1e-12)


def test_frozen_values():
    a = exp_point(1.0)
    assert b_norm_sq(a) == pytest.approx(1.2916668, abs=1e-7)
    assert tb_form(a) == pytest.approx(0.37499998, abs=1e-7)
    assert dual_h1_norm(a.z, a.h) == pytest.approx(0.61237249, abs=1e-7)


def test_dual_norm_closed_form():
    # representer r = (1 + s) e^{-s} / 2, ||r||_H1^2 = <z, r> = 3/8
    z = np.exp(-1e-3 * np.arange(30001))
    assert dual_h1_norm(z, 1e-3) == pytest.approx(np.sqrt(3 / 8), abs=1e-6)
    assert dual_h1_norm(np.zeros(10), 0.1) == 0.0


def test_dual_norm_below_l2(rng):
    for _ in range(5):
        c = rng.normal(size=3)
        a = point(0.0, lambda s: np.exp(-s) * (c[0] + c[1] * np.cos(3 * s) + c[2] * np.sin(s)), 0.01, 20.0)
        assert dual_h1_norm(a.z, a.h) <= a.l2_norm() + 1e-12


def test_residuals_and_derivatives():
    a = point(0.3, lambda s: np.exp(-0.5 * s) * np.cos(2 * s), 1e-3)
    B = apply_B(a)
    assert B.residual < 1e-12
    assert B.robin_residual < 1e-12
    np.testing.assert_allclose(B.dw[1:-1], np.gradient(B.w, B.h, axis=0)[1:-1], atol=1e-5)


def test_finite_difference_route_is_second_order():
    f = lambda s: np.exp(-0.5 * s) * np.cos(2 * s)  # noqa: E731
    gaps = [apply_B(point(0.3, f, h)).fd_gap for h in (4e-3, 2e-3, 1e-3)]
    assert gaps == pytest.approx([1.198e-6, 2.995e-7, 7.49e-8], rel=0.01)
    orders = np.log2(np.array(gaps[:-1]) / np.array(gaps[1:]))
    assert np.all(np.abs(orders - 2.0) < 0.05)


def test_cross_check_raises_on_tight_tolerance():
    with pytest.raises(InternalConsistencyError):
        apply_B(exp_point(1.0, h=0.01), fd_tol=1e-14)


def test_fd_solution_close():
    a = exp_point(1.0, h=1e-3)
    assert apply_B_fd(a).w0[0] == pytest.approx(2 / 3, abs=1e-5)


def test_two_norm_routes_agree_to_second_order():
    f = lambda s: np.exp(-s) * np.sin(3 * s) + 0.2 * np.exp(-0.3 * s)  # noqa: E731
    rel = []
    for h in (1e-3, 5e-4):
        d, i = b_norm_routes(point(0.5, f, h))
        rel.append(abs(d - i) / abs(d))
    assert rel[1] < 1e-6
    assert 3.5 < rel[0] / rel[1] < 4.5


def test_b_is_symmetric_positive_and_contractive(rng):
    def rand_point():
        c = rng.normal(size=4)
        return point(c[0], lambda s: np.exp(-s) * (c[1] + c[2] * np.cos(2 * s)) + c[3] * np.exp(-0.2 * s), 2e-3)

    for _ in range(5):
        a, b = rand_point(), rand_point()
        Ba, Bb = apply_B(a).as_point(), apply_B(b).as_point()
        assert inner(Ba, b) == pytest.approx(inner(a, Bb), abs=1e-5)
        assert 0 < b_norm_sq(a) <= inner(a, a)
        assert b_image_norm(a) <= np.sqrt(inner(a, a))
        assert 0 < lower_bound_ratio(a) <= 1.0 + 1e-9


def test_tb_routes_agree():
    a = point(-0.4, lambda s: np.exp(-s) * np.cos(s), 1e-3)
    assert tb_form(a) == pytest.approx(tb_form_closed(a), abs=1e-6)


def test_inverse_identity():
    a = point(0.7, lambda s: np.exp(-0.5 * s) * np.cos(2 * s), 1e-3)
    x_err, z_err, dom = inverse_check(a)
    assert x_err < 1e-12
    assert z_err < 1e-5 and dom < 1e-5


def test_T_and_Tstar_are_adjoint():
    h = 1e-3
    s = h * np.arange(30001)
    w = np.exp(-s) * np.cos(s)
    z = np.exp(-2 * s) * (1 + s)
    Tyw = apply_T([0.4], w, h)
    xz = HistoryState(x=[z[0]], z=z, h=h)
    lhs = inner(Tyw, xz)
    rhs = inner(HistoryState(x=[0.4], z=w, h=h), apply_Tstar(xz))
    assert lhs == pytest.approx(rhs, abs=1e-6)


def test_T_of_known_pair():
    a = apply_T([1.0], np.exp(-1e-3 * np.arange(2001)), 1e-3)
    assert a.x[0] == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(a.z[:, 0], np.exp(-1e-3 * np.arange(2001)), atol=1e-6)


def test_Tstar_domain():
    with pytest.raises(DomainError):
        apply_Tstar(exp_point(0.0))
    apply_Tstar(exp_point(1.0))


def test_tail_points_rejected():
    a = HistoryState.from_function([1.0], 1.0, 0.1, 1.0, tail_rate=1.0)
    with pytest.raises(ValueError):
        apply_B(a)


def test_b_csv(tmp_path):
    B = apply_B(exp_point(1.0, h=0.1), cross_check=False)
    rows = np.loadtxt(B.to_csv(tmp_path / "b.csv"), delimiter=",", skiprows=1)
    assert rows.shape == (301, 4)
    np.testing.assert_allclose(rows[:, 1], B.w[:, 0])
