"""The controlled Cauchy problem with memory.

    y'(t) = F(y(t), u(t), G(t)),   G(t) = int_0^inf A(s) y(t - s) ds,
    y(0) = x,  y(-s) = z(s) for s > 0.

Two independent solvers are provided.  :func:`solve_cauchy` is a classical
fourth-order one-step method; for exponential kernels the memory is carried
exactly as extra ODE channels ``m' = y - rate * m``, otherwise ``G`` is
re-evaluated at each stage by trapezoid quadrature over the recorded past.
:func:`picard_solve` iterates the integral map ``y -> x + int F(y, u, G_y)``
on the same grid and measures the iterate distances in the weighted norm
``||y||_theta = sup_t exp(-theta t) |y(t)|``.

``F`` is called on batches: ``F(x, u, a)`` with ``x`` of shape ``(B, d)``,
``u`` of shape ``(B, c)`` and ``a`` of shape ``(B, k)``, returning ``(B, d)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import _core
from .kernel import HistoryState, Kernel, history_memory_batch, kernel_norms, linear_exp_weights, trapezoid_weights

logger = logging.getLogger(__name__)

__all__ = [
    "Dynamics",
    "ControlLaw",
    "Trajectory",
    "BlowUpError",
    "PicardDivergenceError",
    "solve_cauchy",
    "simulate",
    "picard_solve",
    "picard_constant",
    "picard_ratio_bound",
    "growth_estimate",
    "shift_history",
    "continuity_ratio",
    "weak_continuity_probe",
    "check_lipschitz",
]


class BlowUpError(FloatingPointError):
    """The state left the finite floats."""

    def __init__(self, time: float):
        super().__init__(f"non-finite state at t = {time:.6g}")
        self.time = time


class PicardDivergenceError(RuntimeError):
    """Picard iterate distances stopped shrinking."""

    def __init__(self, ratios):
        self.ratios = [float(r) for r in ratios]
        super().__init__(f"Picard iteration is not contracting; distance ratios {self.ratios[-3:]}")


@dataclass(frozen=True, eq=False)
class Dynamics:
    """Right-hand side ``F`` with its finite control set and Lipschitz constant ``C1``."""

    F: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    controls: np.ndarray
    lipschitz: float
    d: int = 1
    k: int = 1
    name: str = ""

    def __post_init__(self):
        ctrl = np.asarray(self.controls, dtype=float)
        if ctrl.ndim == 1:
            ctrl = ctrl[:, None]
        if ctrl.ndim != 2 or ctrl.shape[0] == 0:
            raise ValueError("controls must be a non-empty list of control points")
        ctrl.setflags(write=False)
        object.__setattr__(self, "controls", ctrl)
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be nonnegative")

    @property
    def n_controls(self) -> int:
        return self.controls.shape[0]

    def __call__(self, x, u, a) -> np.ndarray:
        return self.F(x, u, a)


def check_lipschitz(dyn: Dynamics, rng: np.random.Generator, n: int = 1000, scale: float = 2.0) -> float:
    """Largest observed ``|F(x,u,a) - F(y,u,b)| / (|x-y| + |a-b|)`` over random pairs."""
    x = rng.uniform(-scale, scale, (n, dyn.d))
    y = rng.uniform(-scale, scale, (n, dyn.d))
    a = rng.uniform(-scale, scale, (n, dyn.k))
    b = rng.uniform(-scale, scale, (n, dyn.k))
    u = dyn.controls[rng.integers(0, dyn.n_controls, n)]
    num = np.linalg.norm(dyn(x, u, a) - dyn(y, u, b), axis=1)
    den = np.linalg.norm(x - y, axis=1) + np.linalg.norm(a - b, axis=1)
    return float(np.max(num / den))


@dataclass(frozen=True, eq=False)
class ControlLaw:
    """Piecewise-constant control: ``controls[indices[i]]`` on ``[breakpoints[i], breakpoints[i+1])``.

    Past the last breakpoint the last value is held.
    """

    breakpoints: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        idx = np.asarray(self.indices, dtype=int)
        if bp.ndim != 1 or idx.ndim != 1 or len(bp) != len(idx) + 1 or len(idx) == 0:
            raise ValueError("need m + 1 breakpoints for m control values")
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must start at 0 and increase")
        bp.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def constant(cls, index: int, horizon: float = 1.0) -> "ControlLaw":
        return cls(np.array([0.0, horizon]), np.array([index]))

    @classmethod
    def uniform(cls, indices, span: float) -> "ControlLaw":
        idx = np.asarray(indices, dtype=int)
        return cls(np.linspace(0.0, span, len(idx) + 1), idx)

    def step_indices(self, h: float, n_steps: int) -> np.ndarray:
        """Control index used on each step ``[n h, (n+1) h)``."""
        pos = self.breakpoints[1:-1] / h
        if np.any(np.abs(pos - np.round(pos)) > 1e-7):
            raise ValueError("control breakpoints must lie on the step grid")
        starts = np.round(pos).astype(int)
        steps = np.arange(n_steps)
        return self.indices[np.searchsorted(starts, steps, side="right")]

    def shifted(self, t: float) -> "ControlLaw":
        """The law ``s -> u(t + s)``."""
        bp = self.breakpoints - t
        keep = bp[1:] > 1e-12
        if not np.any(keep):
            return ControlLaw(np.array([0.0, 1.0]), self.indices[-1:])
        first = int(np.argmax(keep))
        new_bp = np.concatenate([[0.0], bp[first + 1:]])
        return ControlLaw(new_bp, self.indices[first:])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution on the step grid ``t = 0, h, ..., T`` with its memory channel."""

    t: np.ndarray
    y: np.ndarray
    G: np.ndarray
    u_index: np.ndarray
    history: HistoryState
    control: ControlLaw
    h: float

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def index(self, t: float) -> int:
        i = int(round(t / self.h))
        if abs(i * self.h - t) > 1e-7 * max(1.0, abs(t)) or not 0 <= i < len(self.t):
            raise ValueError(f"time {t} is not a node of the trajectory grid")
        return i

    def to_csv(self, path) -> Path:
        """Write ``t, y_1..y_d, G_1..G_k, u_index`` rows."""
        path = Path(path)
        d = self.y.shape[1]
        k = self.G.shape[1]
        header = ["t"] + [f"y_{i + 1}" for i in range(d)] + [f"G_{i + 1}" for i in range(k)] + ["u_index"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for n in range(len(self.t)):
                row = [_fmt(self.t[n])] + [_fmt(v) for v in self.y[n]] + [_fmt(v) for v in self.G[n]]
                writer.writerow(row + [str(int(self.u_index[n]))])
        return path


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _n_steps(T: float, h: float) -> int:
    if not h > 0 or not T >= 0:
        raise ValueError("need h > 0 and T >= 0")
    n = int(round(T / h))
    if abs(n * h - T) > 1e-7 * max(1.0, T):
        raise ValueError(f"horizon {T} is not a multiple of the step {h}")
    return n


# ---------------------------------------------------------------------------
# batched engine


@dataclass
class SimResult:
    """Raw output of :func:`simulate`; path arrays are ``None`` unless recorded."""

    y_final: np.ndarray
    y: np.ndarray | None
    G: np.ndarray | None
    cost: np.ndarray | None
    channel_final: np.ndarray | None = None


class _ChannelMemory:
    """Exact memory for sums of exponentials: ``G = sum_j M_j m_j`` with ``m_j' = y - r_j m_j``."""

    def __init__(self, kernel: Kernel, z: np.ndarray, hz: float, tail_rate):
        self.rates = kernel.rates
        self.coefs = kernel.coefs
        n = z.shape[1] - 1
        s = hz * np.arange(n + 1)
        wts = trapezoid_weights(n + 1, hz)
        m0 = np.einsum("n,nj,bnd->bjd", wts, np.exp(-np.outer(s, self.rates)), z)
        if tail_rate is not None:
            m0 = m0 + np.einsum("j,bd->bjd", np.exp(-self.rates * n * hz) / (self.rates + tail_rate), z[:, -1])
        self.m0 = m0

    def G(self, m):
        return np.einsum("jkd,bjd->bk", self.coefs, m)

    def dm(self, y, m):
        return y[:, None, :] - self.rates[None, :, None] * m


class _QuadratureMemory:
    """Trapezoid evaluation of ``G`` at node and half-step stage times."""

    def __init__(self, kernel: Kernel, z: np.ndarray, hz: float, tail_rate, h: float, n_steps: int):
        self.h = h
        if kernel.is_exponential:
            n_lag = n_steps + 2
        else:
            n_lag = min(n_steps + 2, int(np.floor(kernel.support / h + 1e-9)) + 1)
        self.n_lag = max(n_lag, 1)
        lags = h * np.arange(self.n_lag + 1)
        self.a_int = kernel(lags)  # A(j h)
        self.a_half = kernel(lags + 0.5 * h)  # A((j + 1/2) h)
        self.a0 = self.a_int[0]
        self.support_steps = np.inf if kernel.is_exponential else kernel.support / h
        taus = 0.5 * h * np.arange(2 * n_steps + 1)
        self.hist = history_memory_batch(kernel, z, hz, tail_rate, taus)  # (2N+1, B, k)

    def _weights(self, n_nodes: int, end_weight: float, lag_offset: float) -> np.ndarray:
        """Trapezoid weights for past nodes, newest first, truncated to the kernel support."""
        h = self.h
        w = np.full(n_nodes, h)
        w[-1] = 0.5 * h  # oldest node, sigma = 0
        w[0] = end_weight
        if n_nodes == 1:
            w[0] = end_weight - 0.5 * h if end_weight > 0.5 * h else 0.0
        lag = np.arange(n_nodes) + lag_offset
        if np.isfinite(self.support_steps):
            w[lag > self.support_steps + 1e-9] = 0.0
        return w

    def node(self, buf, n):
        """``G(t_n)`` from recorded ``buf[0..n]``."""
        out = self.hist[2 * n].copy()
        if n == 0:
            return out
        m = min(n + 1, self.n_lag)
        wts = trapezoid_weights(n + 1, self.h)[::-1][:m].copy()
        if m < n + 1:
            wts[-1] = 0.5 * self.h
        return out + np.einsum("j,jkd,jbd->bk", wts, self.a_int[:m], buf[n::-1][:m])

    def stage(self, buf, n, Y, frac):
        """``G(t_n + frac h)`` using the stage value ``Y`` at the newest point."""
        h = self.h
        out = self.hist[2 * n + (1 if frac == 0.5 else 2)].copy()
        out += (0.5 * h * frac) * np.einsum("kd,bd->bk", self.a0, Y)
        m = min(n + 1, self.n_lag)
        if frac == 0.5:
            samples = self.a_half[:m]
        else:
            samples = self.a_int[1:m + 1]
        # node weights: newest recorded node borders the partial panel
        wts = np.full(m, h)
        if n == 0:
            wts[0] = 0.5 * h * frac
        else:
            wts[0] = 0.5 * h * frac + 0.5 * h
            if m == n + 1:
                wts[-1] = 0.5 * h
        if m < n + 1:
            wts[-1] = 0.5 * h
        return out + np.einsum("j,jkd,jbd->bk", wts, samples, buf[n::-1][:m])


def simulate(
    dyn: Dynamics,
    kernel: Kernel,
    x0,
    z,
    hz: float,
    tail_rate,
    u_steps,
    h: float,
    *,
    record: bool = True,
    cost: Callable | None = None,
    lam: float | None = None,
    memory: str = "auto",
    hist_index=None,
) -> SimResult:
    """Integrate a batch of trajectories with classical RK4.

    ``x0`` is ``(B, d)``; ``z`` is ``(B, n+1, d)`` or a shared ``(n+1, d)``
    history, or ``(H, n+1, d)`` distinct histories selected per row by
    ``hist_index``; ``u_steps`` is ``(B, N)`` control indices per step.  With
    ``cost`` and ``lam`` the discounted running cost is accumulated with
    exact exponential weights against the per-step linear interpolant of
    ``L`` (control held at both ends).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B, d = x0.shape
    z = np.asarray(z, dtype=float)
    if z.ndim == 2:
        z = z[None]
    if hist_index is None:
        hist_index = np.zeros(B, dtype=int) if z.shape[0] == 1 else np.arange(B)
    hist_index = np.asarray(hist_index, dtype=int)
    if hist_index.shape != (B,) or hist_index.max() >= z.shape[0]:
        raise ValueError("history index does not match the batch")
    u_steps = np.asarray(u_steps, dtype=int)
    if u_steps.ndim == 1:
        u_steps = np.broadcast_to(u_steps, (B, u_steps.shape[0]))
    N = u_steps.shape[1]
    if kernel.d != d or dyn.d != d or kernel.k != dyn.k:
        raise ValueError("kernel, dynamics and state dimensions disagree")
    if memory == "auto":
        memory = "channel" if kernel.is_exponential else "quadrature"
    if memory == "channel" and not kernel.is_exponential:
        raise ValueError("the exact memory channel needs an exponential-form kernel")
    controls = dyn.controls
    F = dyn.F
    acc = np.zeros(B) if cost is not None else None
    if cost is not None:
        if lam is None:
            raise ValueError("discount rate lam is required with a cost")
        # exact weights of exp(-lam s) against the linear interpolant of L on a step
        _, w_new, w_old = linear_exp_weights(lam, h)

    y = x0.copy()
    ys = Gs = None
    half = 0.5 * h

    if memory == "channel":
        mem = _ChannelMemory(kernel, z, hz, tail_rate)
        m = mem.m0[hist_index]
        if record:
            ys = np.empty((N + 1, B, d))
            Gs = np.empty((N + 1, B, kernel.k))
            ys[0] = y
            Gs[0] = mem.G(m)
        for n in range(N):
            u = controls[u_steps[:, n]]
            k1y = F(y, u, mem.G(m))
            k1m = mem.dm(y, m)
            y2 = y + half * k1y
            m2 = m + half * k1m
            k2y = F(y2, u, mem.G(m2))
            k2m = mem.dm(y2, m2)
            y3 = y + half * k2y
            m3 = m + half * k2m
            k3y = F(y3, u, mem.G(m3))
            k3m = mem.dm(y3, m3)
            y4 = y + h * k3y
            m4 = m + h * k3m
            k4y = F(y4, u, mem.G(m4))
            k4m = mem.dm(y4, m4)
            y_new = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            m = m + (h / 6.0) * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
            if not np.all(np.isfinite(y_new)):
                raise BlowUpError((n + 1) * h)
            if acc is not None:
                acc += np.exp(-lam * n * h) * (w_old * cost(y, u) + w_new * cost(y_new, u))
            y = y_new
            if record:
                ys[n + 1] = y
                Gs[n + 1] = mem.G(m)
        return SimResult(y_final=y, y=ys, G=Gs, cost=acc, channel_final=m)

    mem = _QuadratureMemory(kernel, z, hz, tail_rate, h, N)
    mem.hist = mem.hist[:, hist_index]
    buf = np.empty((N + 1, B, d))
    buf[0] = y
    Gs = np.empty((N + 1, B, kernel.k)) if record else None
    g = mem.node(buf, 0)
    for n in range(N):
        if record:
            Gs[n] = g
        u = controls[u_steps[:, n]]
        k1 = F(y, u, g)
        Y = y + half * k1
        k2 = F(Y, u, mem.stage(buf, n, Y, 0.5))
        Y = y + half * k2
        k3 = F(Y, u, mem.stage(buf, n, Y, 0.5))
        Y = y + h * k3
        k4 = F(Y, u, mem.stage(buf, n, Y, 1.0))
        y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y_new)):
            raise BlowUpError((n + 1) * h)
        if acc is not None:
            acc += np.exp(-lam * n * h) * (w_old * cost(y, u) + w_new * cost(y_new, u))
        y = y_new
        buf[n + 1] = y
        g = mem.node(buf, n + 1)
    if record:
        Gs[N] = g
    return SimResult(y_final=y, y=buf if record else None, G=Gs, cost=acc)


def solve_cauchy(
    dyn: Dynamics,
    kernel: Kernel,
    alpha: HistoryState,
    u: ControlLaw,
    T: float,
    h: float,
    memory: str = "auto",
) -> Trajectory:
    """Solve the state equation with memory from ``alpha = (x, z)`` under ``u`` on ``[0, T]``."""
    N = _n_steps(T, h)
    steps = u.step_indices(h, N)
    if np.any(steps >= dyn.n_controls) or np.any(steps < 0):
        raise ValueError("control law uses an index outside the control set")
    res = simulate(dyn, kernel, alpha.x[None], alpha.z, alpha.h, alpha.tail_rate, steps[None], h, memory=memory)
    u_nodes = np.concatenate([steps, steps[-1:]]) if N > 0 else np.array([u.indices[0]])
    return Trajectory(
        t=h * np.arange(N + 1),
        y=res.y[:, 0, :],
        G=res.G[:, 0, :],
        u_index=u_nodes,
        history=alpha,
        control=u,
        h=h,
    )


# ---------------------------------------------------------------------------
# Picard iteration


def picard_constant(dyn: Dynamics, kernel: Kernel) -> float:
    """Constant ``C`` in ``||Ty1 - Ty2||_theta <= C (1/theta + 1/(sqrt 2 theta^{3/2})) ||y1 - y2||_theta``."""
    return float(dyn.lipschitz * max(1.0, kernel_norms(kernel).l2))


def picard_ratio_bound(C: float, theta: float) -> float:
    return float(C * (1.0 / theta + 1.0 / (np.sqrt(2.0) * theta**1.5)))


def growth_estimate(dyn: Dynamics, kernel: Kernel) -> float:
    """A safe exponential growth rate ``C1 (1 + ||A||_L1 + ||A||_L2) + 1``."""
    n = kernel_norms(kernel)
    return float(dyn.lipschitz * (1.0 + n.l1 + n.l2) + 1.0)


def _own_memory(kernel: Kernel, y: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid ``int_0^{t_n} A(s) y(t_n - s) ds`` at every node, shape ``(N+1, k)``."""
    N = y.shape[0] - 1
    if kernel.is_exponential:
        n_lag = N + 1
    else:
        n_lag = min(N + 1, int(np.floor(kernel.support / h + 1e-9)) + 1)
    a = kernel(h * np.arange(max(n_lag, 2)))
    out = np.zeros((N + 1, kernel.k))
    for i in range(kernel.k):
        for j in range(kernel.d):
            col = np.ascontiguousarray(a[:, i, j])
            if np.any(col):
                out[:, i] += _core.causal_trapezoid(col, np.ascontiguousarray(y[:, j]), h)
    return out


def picard_solve(
    dyn: Dynamics,
    kernel: Kernel,
    alpha: HistoryState,
    u: ControlLaw,
    T: float,
    h: float,
    theta: float,
    max_iter: int = 200,
    tol: float = 1e-13,
):
    """Fixed point of the integral map on the step grid.

    Returns ``(trajectory, distances)`` where ``distances[i]`` is the
    weighted sup distance between consecutive iterates.  Raises
    :class:`PicardDivergenceError` when the distance ratio is ``>= 1`` on
    three consecutive iterations.
    """
    N = _n_steps(T, h)
    steps = u.step_indices(h, N)
    t = h * np.arange(N + 1)
    weight = np.exp(-theta * t)
    hist = history_memory_batch(kernel, alpha.z[None], alpha.h, alpha.tail_rate, t)[:, 0, :]
    ctrl_steps = dyn.controls[steps]
    y = np.repeat(alpha.x[None], N + 1, axis=0)
    distances = []
    ratios = []
    for _ in range(max_iter):
        G = _own_memory(kernel, y, h) + hist
        if N > 0:
            f_left = dyn(y[:-1], ctrl_steps, G[:-1])
            f_right = dyn(y[1:], ctrl_steps, G[1:])
            incr = 0.5 * h * (f_left + f_right)
            y_new = np.concatenate([alpha.x[None], alpha.x[None] + np.cumsum(incr, axis=0)])
        else:
            y_new = y.copy()
        if not np.all(np.isfinite(y_new)):
            raise PicardDivergenceError(ratios + [np.inf])
        dist = float(np.max(weight * np.linalg.norm(y_new - y, axis=1)))
        distances.append(dist)
        y = y_new
        scale = float(np.max(weight * np.linalg.norm(y, axis=1)))
        if dist <= tol * max(1.0, scale):
            break
        if len(distances) > 1 and distances[-2] > 0:
            ratios.append(dist / distances[-2])
            if len(ratios) >= 3 and all(r >= 1.0 for r in ratios[-3:]):
                raise PicardDivergenceError(ratios)
    else:
        logger.warning("Picard iteration hit max_iter=%d at distance %.3e", max_iter, distances[-1])
    G = _own_memory(kernel, y, h) + hist
    u_nodes = np.concatenate([steps, steps[-1:]]) if N > 0 else np.array([u.indices[0]])
    traj = Trajectory(t=t, y=y, G=G, u_index=u_nodes, history=alpha, control=u, h=h)
    return traj, np.asarray(distances)


# ---------------------------------------------------------------------------
# shifts and continuity probes


def _shift_values(y_path: np.ndarray, h: float, n_t: int, z: np.ndarray, hz: float, tail_rate) -> np.ndarray:
    """History ``s -> y(t - s)`` (``s <= t``) continued by ``z(s - t)``, sampled on the ``hz`` grid.

    ``y_path`` is ``(n_t + 1, B, d)``; ``z`` is ``(B, n + 1, d)``.  Returns ``(B, n + 1, d)``.
    """
    t = n_t * h
    n = z.shape[1] - 1
    s = hz * np.arange(n + 1)
    out = np.empty((z.shape[0], n + 1, z.shape[2]))
    own = s <= t + 1e-12 * max(1.0, t)
    if np.any(own):
        tau = np.clip((t - s[own]) / h, 0.0, n_t)
        i0 = np.minimum(np.floor(tau + 1e-9).astype(int), max(n_t - 1, 0))
        frac = np.clip(tau - i0, 0.0, 1.0)[:, None, None]
        if n_t == 0:
            vals = np.repeat(y_path[:1], own.sum(), axis=0)
        else:
            vals = (1.0 - frac) * y_path[i0] + frac * y_path[i0 + 1]
        out[:, own] = np.transpose(vals, (1, 0, 2))
    old = ~own
    if np.any(old):
        lag = s[old] - t
        pos = lag / hz
        inside = pos <= n + 1e-9
        vals = np.zeros((z.shape[0], old.sum(), z.shape[2]))
        if np.any(inside):
            p = pos[inside]
            j0 = np.minimum(np.floor(p + 1e-9).astype(int), n - 1)
            fr = np.clip(p - j0, 0.0, 1.0)[None, :, None]
            vals[:, inside] = (1.0 - fr) * z[:, j0] + fr * z[:, j0 + 1]
        if tail_rate is not None and np.any(~inside):
            decay = np.exp(-tail_rate * (lag[~inside] - n * hz))
            vals[:, ~inside] = z[:, -1][:, None, :] * decay[None, :, None]
        out[:, old] = vals
    return out


def shift_history(traj: Trajectory, t: float) -> HistoryState:
    """The state ``(y(t), y(t - .))`` reached at time ``t``, on the original history grid."""
    n_t = traj.index(t)
    if n_t == 0:
        return traj.history
    a = traj.history
    z_new = _shift_values(traj.y[: n_t + 1, None, :], traj.h, n_t, a.z[None], a.h, a.tail_rate)[0]
    return HistoryState(x=traj.y[n_t], z=z_new, h=a.h, tail_rate=a.tail_rate)


def continuity_ratio(
    dyn: Dynamics,
    kernel: Kernel,
    alpha0: HistoryState,
    alpha1: HistoryState,
    u: ControlLaw,
    T: float,
    h: float,
    theta: float,
) -> float:
    """``sup_t e^{-theta t} |y1(t) - y0(t)| / (|x1 - x0| + ||z1 - z0||)``; zero for identical states."""
    delta = float(np.linalg.norm(alpha1.x - alpha0.x) + (alpha1 - alpha0).l2_norm())
    if delta == 0.0:
        return 0.0
    y0 = solve_cauchy(dyn, kernel, alpha0, u, T, h).y
    y1 = solve_cauchy(dyn, kernel, alpha1, u, T, h).y
    t = h * np.arange(y0.shape[0])
    return float(np.max(np.exp(-theta * t) * np.linalg.norm(y1 - y0, axis=1)) / delta)


def weak_continuity_probe(
    dyn: Dynamics,
    kernel: Kernel,
    alpha: HistoryState,
    n: float,
    u: ControlLaw,
    T: float,
    h: float,
) -> float:
    """``sup_[0,T] |y_n - y|`` where ``y_n`` starts from ``z + sin(n s)`` on the stored window."""
    bump = np.sin(n * alpha.grid)[:, None] * np.ones(alpha.d)
    base = solve_cauchy(dyn, kernel, alpha, u, T, h).y
    pert = solve_cauchy(dyn, kernel, alpha.with_values(z=alpha.z + bump), u, T, h).y
    return float(np.max(np.linalg.norm(pert - base, axis=1)))
