"""The operators ``T``, ``T*`` and ``B = (I + T*T)^{-1}`` on ``E = R^d x L^2(0, inf)``.

Points of ``E`` reuse :class:`~memhjb.kernel.HistoryState` with a zero tail:
``z`` is the piecewise-linear interpolant of its samples on ``[0, S]`` and
vanishes beyond.  ``B(x, z) = (y, w)`` where ``w`` solves

    -w'' + w = z  on (0, inf),   -2 w'(0) + w(0) = x,   w decaying,

and ``y = (x + w(0)) / 2``.  With ``p(s) = 1/2 int exp(-|s - t|) z(t) dt`` the
solution is ``w = p + c exp(-s)``, ``c = (x + p(0)) / 3``.  The convolution is
computed exactly for the interpolant by two exponential sweeps, so the
derivative channels are closed-form rather than differenced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_banded

from . import _core
from .kernel import HistoryState, linear_exp_weights, trapezoid_weights

__all__ = [
    "DomainError",
    "InternalConsistencyError",
    "BResult",
    "inner",
    "apply_T",
    "apply_Tstar",
    "apply_B",
    "apply_B_fd",
    "b_norm_routes",
    "b_norm_sq",
    "b_image_norm",
    "tb_form",
    "tb_form_closed",
    "dual_h1_norm",
    "lower_bound_ratio",
    "inverse_check",
]


class DomainError(ValueError):
    """The point is outside the domain of the operator."""


class InternalConsistencyError(RuntimeError):
    """Two independent computations of the same quantity disagree."""


def _require_zero_tail(alpha: HistoryState):
    if alpha.tail_rate is not None:
        raise ValueError("operator identities are computed for zero-tail points only")


def _grid(z):
    z = np.asarray(z, dtype=float)
    return z[:, None] if z.ndim == 1 else z


def inner(alpha: HistoryState, beta: HistoryState) -> float:
    """``x . x' + int z . z'`` (trapezoid; zero tails)."""
    _require_zero_tail(alpha)
    _require_zero_tail(beta)
    alpha._check_compatible(beta)
    return float(alpha.x @ beta.x + np.einsum("n,nd,nd->", alpha.weights(), alpha.z, beta.z))


def _diff(w, h):
    return np.gradient(w, h, axis=0, edge_order=2)


def apply_T(y, w, h: float, dw=None) -> HistoryState:
    """``T(y, w) = (y - w(0), -w')``; ``w'`` by differences unless ``dw`` is supplied."""
    w = _grid(w)
    y = np.asarray(y, dtype=float).reshape(w.shape[1])
    dw = _diff(w, h) if dw is None else _grid(dw)
    return HistoryState(x=y - w[0], z=-dw, h=h)


def apply_Tstar(alpha: HistoryState, tol: float = 1e-9) -> HistoryState:
    """``T*(x, z) = (x, z')`` on the domain ``{z(0) = x}``."""
    _require_zero_tail(alpha)
    if not alpha.in_e0(tol):
        raise DomainError(f"|x - z(0)| = {np.linalg.norm(alpha.x - alpha.z[0]):.3e} exceeds {tol:g}")
    return HistoryState(x=alpha.x.copy(), z=_diff(alpha.z, alpha.h), h=alpha.h)


@dataclass(frozen=True, eq=False)
class BResult:
    """``B(alpha) = (y, w)`` with closed-form derivative channels and boundary residuals."""

    y: np.ndarray
    w: np.ndarray
    dw: np.ndarray
    ddw: np.ndarray
    x: np.ndarray
    z: np.ndarray
    h: float
    fd_gap: float | None = None

    @property
    def w0(self) -> np.ndarray:
        return self.w[0]

    @property
    def dw0(self) -> np.ndarray:
        return self.dw[0]

    @property
    def s(self) -> np.ndarray:
        return self.h * np.arange(self.w.shape[0])

    @property
    def interior_residual(self) -> np.ndarray:
        return -self.ddw + self.w - self.z

    @property
    def robin_residual(self) -> float:
        return float(np.linalg.norm(-2.0 * self.dw0 + self.w0 - self.x))

    @property
    def residual(self) -> float:
        return max(float(np.max(np.abs(self.interior_residual))), self.robin_residual)

    def as_point(self) -> HistoryState:
        return HistoryState(x=self.y, z=self.w, h=self.h)

    def h1_sq(self) -> float:
        """``||w||_H1^2``; beyond the grid ``w`` decays like ``w(S) exp(-(s - S))``."""
        wts = trapezoid_weights(self.w.shape[0], self.h)
        return float(np.einsum("n,nd->", wts, self.w**2 + self.dw**2) + self.w[-1] @ self.w[-1])

    def l2_sq(self) -> float:
        wts = trapezoid_weights(self.w.shape[0], self.h)
        return float(np.einsum("n,nd->", wts, self.w**2) + 0.5 * self.w[-1] @ self.w[-1])

    def to_csv(self, path) -> Path:
        """Rows ``s, w_i, dw_i, residual_i``."""
        path = Path(path)
        d = self.w.shape[1]
        res = self.interior_residual
        header = ["s"] + [f"w_{i + 1}" for i in range(d)] + [f"dw_{i + 1}" for i in range(d)]
        header += [f"residual_{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for n, s in enumerate(self.s):
                vals = [s, *self.w[n], *self.dw[n], *res[n]]
                writer.writerow([format(float(v), ".17g") for v in vals])
        return path


def _green(z, h):
    """``p``, ``p'`` and ``p''`` for ``p = 1/2 int_0^S exp(-|s - t|) z(t) dt`` (``z`` interpolated)."""
    e, a, b = linear_exp_weights(1.0, h)
    fwd, bwd = _core.exp_sweeps(np.ascontiguousarray(z), e, a, b)
    p = 0.5 * (fwd + bwd)
    return p, 0.5 * (bwd - fwd), p - z


def apply_B(alpha: HistoryState, cross_check: bool = True, fd_tol: float | None = None) -> BResult:
    """Solve the Robin problem in closed form.

    With ``cross_check`` the finite-difference solve runs as well and an
    :class:`InternalConsistencyError` is raised when the two differ by more
    than ``fd_tol`` (default ``1e3 h^2`` times the data scale).
    """
    _require_zero_tail(alpha)
    h = alpha.h
    z = alpha.z
    p, dp, ddp = _green(z, h)
    c = (alpha.x + p[0]) / 3.0
    decay = np.exp(-h * np.arange(z.shape[0]))[:, None]
    w = p + decay * c
    res = BResult(
        y=0.5 * (alpha.x + w[0]),
        w=w,
        dw=dp - decay * c,
        ddw=ddp + decay * c,
        x=alpha.x,
        z=z,
        h=h,
    )
    if not cross_check:
        return res
    w_fd = apply_B_fd(alpha).w
    gap = float(np.max(np.abs(w_fd - w)))
    if fd_tol is None:
        scale = 1.0 + float(np.max(np.abs(alpha.x))) + float(np.max(np.abs(z)))
        scale += float(np.max(np.abs(np.diff(z, axis=0)))) / h if z.shape[0] > 1 else 0.0
        fd_tol = 1e3 * h * h * scale
    if gap > fd_tol:
        raise InternalConsistencyError(f"closed-form and finite-difference B differ by {gap:.3e} > {fd_tol:.3e}")
    return BResult(res.y, res.w, res.dw, res.ddw, res.x, res.z, h, fd_gap=gap)


def apply_B_fd(alpha: HistoryState) -> BResult:
    """Second-order finite-difference solve on ``[0, S]``.

    Ghost points carry the Robin condition ``w'(0) = (w(0) - x) / 2`` and
    the decay condition ``w'(S) = -w(S)``.  Derivative channels are
    differenced.
    """
    _require_zero_tail(alpha)
    h = alpha.h
    z = alpha.z
    n = z.shape[0]
    if n < 3:
        raise ValueError("need at least three grid points")
    ab = np.zeros((3, n))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0 + h * h
    ab[2, :-1] = -1.0
    # ghost w_{-1} = w_1 - h (w_0 - x) and w_{n} = w_{n-2} - 2 h w_{n-1}
    ab[1, 0] = 2.0 + h + h * h
    ab[0, 1] = -2.0
    ab[1, -1] = 2.0 + 2.0 * h + h * h
    ab[2, -2] = -2.0
    rhs = h * h * z.copy()
    rhs[0] += h * alpha.x
    w = solve_banded((1, 1), ab, rhs)
    dw = _diff(w, h)
    ddw = np.empty_like(w)
    ddw[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (h * h)
    ddw[0] = ddw[1]
    ddw[-1] = ddw[-2]
    return BResult(y=0.5 * (alpha.x + w[0]), w=w, dw=dw, ddw=ddw, x=alpha.x, z=z, h=h)


def b_norm_routes(alpha: HistoryState, B: BResult | None = None) -> tuple[float, float]:
    """``<B alpha, alpha> = y.x + int w.z`` and ``|x|^2/2 + |w(0)|^2/2 + ||w||_H1^2``."""
    B = apply_B(alpha, cross_check=False) if B is None else B
    direct = float(B.y @ alpha.x + np.einsum("n,nd,nd->", alpha.weights(), B.w, alpha.z))
    identity = 0.5 * float(alpha.x @ alpha.x) + 0.5 * float(B.w0 @ B.w0) + B.h1_sq()
    return direct, identity


def b_norm_sq(alpha: HistoryState) -> float:
    """``||alpha||_B^2 = <B alpha, alpha>``; a value below ``-1e-12`` is an error."""
    val = b_norm_routes(alpha)[0]
    if val < -1e-12:
        raise InternalConsistencyError(f"negative B-norm square {val:.3e}")
    return max(val, 0.0)


def b_image_norm(alpha: HistoryState, B: BResult | None = None) -> float:
    """``||B alpha|| = (|y|^2 + ||w||_L2^2)^{1/2}``."""
    B = apply_B(alpha, cross_check=False) if B is None else B
    return float(np.sqrt(B.y @ B.y + B.l2_sq()))


def tb_form(alpha: HistoryState, B: BResult | None = None) -> float:
    """``<T B alpha, alpha>`` through ``apply_T`` with the closed-form ``w'``."""
    B = apply_B(alpha, cross_check=False) if B is None else B
    tb = apply_T(B.y, B.w, B.h, dw=B.dw)
    return inner(tb, alpha)


def tb_form_closed(alpha: HistoryState, B: BResult | None = None) -> float:
    """``3/8 |x - w(0)|^2 + x . w(0) / 2``."""
    B = apply_B(alpha, cross_check=False) if B is None else B
    diff = alpha.x - B.w0
    return float(0.375 * diff @ diff + 0.5 * alpha.x @ B.w0)


def dual_h1_norm(z, h: float) -> float:
    """Norm of ``z`` in the dual of ``H^1(0, inf)``.

    This is ``||r||_H1`` for the representer ``-r'' + r = z``, ``r'(0) = 0``,
    ``r`` decaying: ``r = p + p(0) exp(-s)``.
    """
    z = _grid(z)
    p, dp, _ = _green(z, h)
    decay = np.exp(-h * np.arange(z.shape[0]))[:, None]
    r = p + decay * p[0]
    dr = dp - decay * p[0]
    wts = trapezoid_weights(z.shape[0], h)
    sq = float(np.einsum("n,nd->", wts, r**2 + dr**2) + r[-1] @ r[-1])
    return float(np.sqrt(max(sq, 0.0)))


def lower_bound_ratio(alpha: HistoryState) -> float:
    """``||alpha||_B^2 / (|x|^2 + ||z||_{(H1)'}^2)``, the constant of the lower bound at this point."""
    den = float(alpha.x @ alpha.x) + dual_h1_norm(alpha.z, alpha.h) ** 2
    if den == 0:
        raise ValueError("zero point")
    return b_norm_sq(alpha) / den


def inverse_check(alpha: HistoryState, B: BResult | None = None) -> tuple[float, float, float]:
    """Apply ``I + T*T`` to ``B alpha`` with differenced derivatives.

    ``(I + T*T)(y, w) = (2y - w(0), w - w'')`` on the domain ``-w'(0) = y - w(0)``.
    Returns the error in ``x``, the interior sup error in ``z`` and the
    domain defect; the last two are ``O(h^2)``.
    """
    B = apply_B(alpha, cross_check=False) if B is None else B
    h = B.h
    w = B.w
    dw = _diff(w, h)
    ddw = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (h * h)
    x_err = float(np.linalg.norm(2.0 * B.y - w[0] - alpha.x))
    z_err = float(np.max(np.abs(w[1:-1] - ddw - alpha.z[1:-1])))
    domain = float(np.linalg.norm(-dw[0] - (B.y - w[0])))
    return x_err, z_err, domain
