"""Exponential-kernel reduction to a two-dimensional HJB equation.

For ``A(s) = exp(-delta s)`` with ``d = k = 1`` the memory enters only through
the moment ``y(z) = int_0^inf exp(-delta s) z(s) ds``, which moves with drift
``x - delta y`` along trajectories, and ``v(x, z) = w(x, y(z))`` where

    lam w + H0(x, y, w_x) - w_y (x - delta y) = 0,
    H0(x, y, p) = max_u { -L(x, u) - p F(x, u, y) }.

``w`` is computed by semi-Lagrangian value iteration on a box with clamped
foot points and bilinear interpolation.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _core
from .dynamics import Dynamics
from .kernel import HistoryState, Kernel, trapezoid_weights
from .value import ControlFamily, CostModel, ValueEstimate, value_estimate

logger = logging.getLogger(__name__)

__all__ = [
    "ReducedProblem",
    "ReducedValueGrid",
    "ConvergenceError",
    "OutOfDomainError",
    "XValResult",
    "moment",
    "reduced_drift",
    "solve_reduced_hjb",
    "reduced_pde_residual",
    "cross_validate",
]


class ConvergenceError(RuntimeError):
    def __init__(self, updates):
        self.updates = [float(u) for u in updates]
        super().__init__(f"value iteration did not converge; last update {self.updates[-1]:.3e}")


class OutOfDomainError(ValueError):
    """A point falls outside the reduced grid box."""


def moment(z, delta: float, h: float | None = None, tail_rate: float | None = None) -> float:
    """``int_0^inf exp(-delta s) z(s) ds``: trapezoid on the grid plus the tail policy's analytic tail.

    ``z`` is a :class:`HistoryState` (its grid and tail are used) or a 1-D sample array with ``h``.
    """
    if not delta > 0:
        raise ValueError("moment rate must be positive")
    if isinstance(z, HistoryState):
        if z.d != 1:
            raise ValueError("the reduction is scalar")
        z, h, tail_rate = z.z[:, 0], z.h, z.tail_rate
    z = np.asarray(z, dtype=float).ravel()
    n = z.shape[0]
    s = h * np.arange(n)
    val = float(trapezoid_weights(n, h) @ (np.exp(-delta * s) * z))
    if tail_rate is not None:
        val += float(z[-1] * np.exp(-delta * s[-1]) / (delta + tail_rate))
    return val


def reduced_drift(x, y, delta: float):
    """Drift ``x - delta y`` of the moment along a trajectory."""
    return np.asarray(x) - delta * np.asarray(y) if np.ndim(x) or np.ndim(y) else float(x - delta * y)


@dataclass(frozen=True, eq=False)
class ReducedProblem:
    """Scalar dynamics ``F(x, u, y)`` and cost on the box ``[x_min, x_max] x [y_min, y_max]``."""

    dyn: Dynamics
    cost: CostModel
    delta: float
    box: tuple[float, float, float, float]
    nx: int
    ny: int

    def __post_init__(self):
        if self.dyn.d != 1 or self.dyn.k != 1:
            raise ValueError("the reduction needs d = k = 1")
        if not self.delta > 0:
            raise ValueError("kernel rate must be positive")
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid sizes must be at least 3")
        x0, x1, y0, y1 = self.box
        if not (x1 > x0 and y1 > y0):
            raise ValueError("empty box")

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.box[0], self.box[1], self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.box[2], self.box[3], self.ny)

    def refined(self, nx: int, ny: int, dyn: Dynamics | None = None) -> "ReducedProblem":
        return ReducedProblem(dyn or self.dyn, self.cost, self.delta, self.box, nx, ny)


@dataclass(frozen=True, eq=False)
class ReducedValueGrid:
    xs: np.ndarray
    ys: np.ndarray
    w: np.ndarray
    iterations: int
    updates: np.ndarray
    dt: float

    @property
    def final_update(self) -> float:
        return float(self.updates[-1]) if len(self.updates) else 0.0

    def contraction_ratios(self) -> np.ndarray:
        u = self.updates
        ok = u[:-1] > 0
        return u[1:][ok] / u[:-1][ok]

    def __call__(self, x: float, y: float) -> float:
        """Bilinear read; raises :class:`OutOfDomainError` outside the box."""
        xs, ys = self.xs, self.ys
        if not (xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]):
            raise OutOfDomainError(f"({x:.6g}, {y:.6g}) lies outside the reduced box")
        i, a = _cell(np.array([x]), xs)
        j, b = _cell(np.array([y]), ys)
        i, j, a, b = i[0], j[0], a[0], b[0]
        w = self.w
        return float((1 - a) * ((1 - b) * w[i, j] + b * w[i, j + 1]) + a * ((1 - b) * w[i + 1, j] + b * w[i + 1, j + 1]))

    def to_csv(self, path) -> Path:
        path = Path(path)
        X, Y = np.meshgrid(self.xs, self.ys, indexing="ij")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "w"])
            for x, y, w in zip(X.ravel(), Y.ravel(), self.w.ravel()):
                writer.writerow([format(float(x), ".17g"), format(float(y), ".17g"), format(float(w), ".17g")])
        return path


def _cell(v: np.ndarray, grid: np.ndarray):
    """Cell index and fractional position of each value on a uniform grid (clamped)."""
    step = (grid[-1] - grid[0]) / (len(grid) - 1)
    pos = (np.clip(v, grid[0], grid[-1]) - grid[0]) / step
    i = np.minimum(np.floor(pos).astype(np.int64), len(grid) - 2)
    return i, pos - i


def _feet(prob: ReducedProblem, dt: float):
    """Per-control foot cells, weights and stage costs, shape ``(nK, nx, ny)``."""
    X, Y = np.meshgrid(prob.xs, prob.ys, indexing="ij")
    nK = prob.dyn.n_controls
    shape = (nK,) + X.shape
    ix = np.empty(shape, dtype=np.int64)
    iy = np.empty(shape, dtype=np.int64)
    tx = np.empty(shape)
    ty = np.empty(shape)
    L = np.empty(shape)
    xf, yf = X.reshape(-1, 1), Y.reshape(-1, 1)
    beta = np.exp(-prob.cost.lam * dt)
    weight = -np.expm1(-prob.cost.lam * dt) / prob.cost.lam
    for k in range(nK):
        u = np.repeat(prob.dyn.controls[k][None], xf.shape[0], axis=0)
        fx = prob.dyn(xf, u, yf)[:, 0]
        foot_x = X.ravel() + dt * fx
        foot_y = Y.ravel() + dt * reduced_drift(X.ravel(), Y.ravel(), prob.delta)
        i, a = _cell(foot_x, prob.xs)
        j, b = _cell(foot_y, prob.ys)
        ix[k], iy[k] = i.reshape(X.shape), j.reshape(X.shape)
        tx[k], ty[k] = a.reshape(X.shape), b.reshape(X.shape)
        L[k] = (weight * prob.cost(xf, u)).reshape(X.shape)
    return ix, iy, tx, ty, L, beta


def solve_reduced_hjb(
    prob: ReducedProblem,
    dt: float,
    tol: float = 1e-10,
    max_iter: int | None = None,
    iterations: int | None = None,
) -> ReducedValueGrid:
    """Semi-Lagrangian value iteration from ``w = 0``.

    One sweep is ``w <- min_u { (1 - beta)/lam L(x,u) + beta w(foot) }`` with
    ``beta = exp(-lam dt)`` and foot ``(x + dt F, y + dt (x - delta y))``.
    Stops when the sup update is ``<= tol``, or after exactly ``iterations``
    sweeps when given.  Raises :class:`ConvergenceError` past ``max_iter``.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    ix, iy, tx, ty, L, beta = _feet(prob, dt)
    if max_iter is None:
        max_iter = int(np.ceil(np.log(max(tol, 1e-300)) / np.log(beta))) + 1000 if tol > 0 else 10**6
    w = np.zeros((prob.nx, prob.ny))
    out = np.empty_like(w)
    updates = []
    n_target = iterations if iterations is not None else max_iter
    for it in range(n_target):
        upd = _core.sl_sweep(w, ix, iy, tx, ty, L, beta, out)
        w, out = out, w
        updates.append(upd)
        if iterations is None and upd <= tol:
            break
    else:
        if iterations is None:
            raise ConvergenceError(updates)
    logger.debug("value iteration: %d sweeps, last update %.3e", len(updates), updates[-1])
    return ReducedValueGrid(prob.xs, prob.ys, w.copy(), len(updates), np.asarray(updates), dt)


def reduced_hamiltonian(prob: ReducedProblem, x, y, p) -> np.ndarray:
    """``H0(x, y, p) = max_u { -L(x,u) - p F(x,u,y) }`` elementwise."""
    x, y, p = (np.asarray(v, dtype=float).ravel() for v in (x, y, p))
    best = np.full(x.shape, -np.inf)
    for k in range(prob.dyn.n_controls):
        u = np.repeat(prob.dyn.controls[k][None], x.shape[0], axis=0)
        val = -prob.cost(x[:, None], u) - p * prob.dyn(x[:, None], u, y[:, None])[:, 0]
        best = np.maximum(best, val)
    return best


def reduced_pde_residual(grid: ReducedValueGrid, prob: ReducedProblem, margin: float = 0.0) -> float:
    """Sup of ``|lam w + H0(x, y, w_x) - w_y (x - delta y)|`` over interior nodes (centered differences).

    ``margin`` excludes that fraction of the box on each side.
    """
    xs, ys, w = grid.xs, grid.ys, grid.w
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    wx = (w[2:, 1:-1] - w[:-2, 1:-1]) / (2 * hx)
    wy = (w[1:-1, 2:] - w[1:-1, :-2]) / (2 * hy)
    X, Y = np.meshgrid(xs[1:-1], ys[1:-1], indexing="ij")
    H = reduced_hamiltonian(prob, X, Y, wx).reshape(X.shape)
    res = prob.cost.lam * w[1:-1, 1:-1] + H - wy * reduced_drift(X, Y, prob.delta)
    x0, x1, y0, y1 = prob.box
    mx, my = margin * (x1 - x0), margin * (y1 - y0)
    keep = (X >= x0 + mx - 1e-12) & (X <= x1 - mx + 1e-12) & (Y >= y0 + my - 1e-12) & (Y <= y1 - my + 1e-12)
    return float(np.max(np.abs(res[keep])))


@dataclass(frozen=True, eq=False)
class XValResult:
    v_direct: float
    w_reduced: float
    gap: float
    moment: float
    estimate: ValueEstimate


def cross_validate(
    dyn: Dynamics,
    cost: CostModel,
    delta: float,
    alpha: HistoryState,
    grid: ReducedValueGrid,
    family: ControlFamily,
    T: float | None = None,
    h: float = 0.01,
    mode: str = "exhaustive",
) -> XValResult:
    """Compare the direct value estimate with the reduced grid read at ``(x, moment(z))``."""
    y = moment(alpha, delta)
    x = float(alpha.x[0])
    w = grid(x, y)
    est = value_estimate(dyn, Kernel.exponential(delta), cost, alpha, family, T, h, mode=mode)
    return XValResult(est.value, w, abs(est.value - w), y, est)
