"""Discounted costs, value estimates, the dynamic programming split and the Hamiltonian.

The value of a history state ``alpha`` is

    v(alpha) = inf_u int_0^inf exp(-lam s) L(y(s), u(s)) ds.

It is estimated by minimizing over a finite family of piecewise-constant
controls and truncating the horizon at ``T`` with ``||L||_inf exp(-lam T) / lam``
below a set tolerance.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dynamics import Dynamics, Trajectory, _n_steps, _shift_values, growth_estimate, simulate
from .kernel import HistoryState, Kernel, history_memory, linear_exp_weights, trapezoid_weights

__all__ = [
    "CostModel",
    "ControlFamily",
    "ValueEstimate",
    "FamilyTooLarge",
    "DPPResult",
    "HolderResult",
    "RegularitySamples",
    "discounted_cost",
    "truncation_horizon",
    "value_estimate",
    "dpp_residual",
    "hamiltonian",
    "hamiltonian_regularity_gap",
    "regularity_constants",
    "regularity_samples",
    "holder_probe",
    "check_cost_lipschitz",
    "write_value_csv",
]


class FamilyTooLarge(ValueError):
    """The control family exceeds the exhaustive-search budget."""


@dataclass(frozen=True, eq=False)
class CostModel:
    """Running cost ``L(x, u)`` with sup bound, Lipschitz constant ``C2`` and discount ``lam``.

    ``L`` is called on batches ``L(x, u)`` with ``x`` of shape ``(B, d)`` and
    ``u`` of shape ``(B, c)``, returning ``(B,)``.
    """

    L: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lam: float
    sup_bound: float
    lipschitz: float
    name: str = ""

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("discount rate must be positive")
        if self.sup_bound < 0 or self.lipschitz < 0:
            raise ValueError("cost bounds must be nonnegative")

    def __call__(self, x, u) -> np.ndarray:
        return self.L(x, u)

    @property
    def value_bound(self) -> float:
        return self.sup_bound / self.lam


def check_cost_lipschitz(cost: CostModel, controls, rng: np.random.Generator, d: int = 1, n: int = 1000,
                         scale: float = 3.0) -> float:
    """Largest observed ``|L(x,u) - L(y,u)| / |x - y|`` over random pairs."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] == 1 and controls.shape[1] > 1:
        controls = controls.T
    x = rng.uniform(-scale, scale, (n, d))
    y = rng.uniform(-scale, scale, (n, d))
    u = controls[rng.integers(0, controls.shape[0], n)]
    return float(np.max(np.abs(cost(x, u) - cost(y, u)) / np.linalg.norm(x - y, axis=1)))


def truncation_horizon(cost: CostModel, h: float, eps: float = 1e-8) -> float:
    """Smallest multiple of ``h`` with ``||L||_inf exp(-lam T) / lam <= eps``."""
    if cost.sup_bound == 0.0:
        return h
    T = max(np.log(cost.sup_bound / (cost.lam * eps)) / cost.lam, h)
    return float(np.ceil(T / h - 1e-9) * h)


def tail_bound(cost: CostModel, T: float) -> float:
    return float(cost.sup_bound * np.exp(-cost.lam * T) / cost.lam)


def discounted_cost(traj: Trajectory, cost: CostModel, T: float | None = None, controls=None) -> tuple[float, float]:
    """``int_0^T exp(-lam s) L(y, u) ds`` and the tail bound beyond ``T``.

    On each step ``exp(-lam s)`` is integrated exactly against the linear
    interpolant of ``L`` between the nodes, using that step's control at both ends.  ``controls``
    is the control array the trajectory's indices refer to.
    """
    n = len(traj.t) - 1 if T is None else traj.index(T)
    if controls is None:
        raise ValueError("pass the control array the trajectory indices refer to")
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] == 1 and controls.shape[1] > 1:
        controls = controls.T
    if n == 0:
        return 0.0, tail_bound(cost, 0.0)
    u = controls[traj.u_index[:n]]
    _, w_new, w_old = linear_exp_weights(cost.lam, traj.h)
    disc = np.exp(-cost.lam * traj.t[:n])
    steps = disc * (w_old * cost(traj.y[:n], u) + w_new * cost(traj.y[1 : n + 1], u))
    return float(np.sum(steps)), tail_bound(cost, traj.t[n])


@dataclass(frozen=True)
class ControlFamily:
    """``m`` uniform intervals on ``[0, span]`` with values from a subset of the control set.

    ``controls`` lists indices into ``Dynamics.controls`` (``None`` for all);
    after ``span`` the last value is held.
    """

    m: int
    span: float
    controls: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.m < 1 or not self.span > 0:
            raise ValueError("need m >= 1 intervals on a positive span")
        if self.controls is not None:
            object.__setattr__(self, "controls", tuple(int(c) for c in self.controls))

    def subset(self, n_controls: int) -> tuple[int, ...]:
        sub = tuple(range(n_controls)) if self.controls is None else self.controls
        if not sub or min(sub) < 0 or max(sub) >= n_controls:
            raise ValueError("control subset outside the control set")
        return sub

    def size(self, n_controls: int) -> int:
        return len(self.subset(n_controls)) ** self.m

    def candidates(self, n_controls: int) -> np.ndarray:
        """All index sequences in declared order, shape ``(n, m)``."""
        sub = self.subset(n_controls)
        return np.array(list(itertools.product(sub, repeat=self.m)), dtype=int).reshape(-1, self.m)

    def steps_per_interval(self, h: float) -> int:
        q = self.span / (self.m * h)
        if abs(q - round(q)) > 1e-7 or round(q) < 1:
            raise ValueError("control intervals must be whole multiples of the step")
        return int(round(q))

    def step_map(self, h: float, n_steps: int) -> np.ndarray:
        """Interval number used on each step."""
        q = self.steps_per_interval(h)
        return np.minimum(np.arange(n_steps) // q, self.m - 1)

    def descriptor(self, n_controls: int) -> dict:
        return {"m": self.m, "span": self.span, "n_controls": len(self.subset(n_controls))}


@dataclass(frozen=True, eq=False)
class ValueEstimate:
    value: float
    horizon: float
    tail_bound: float
    family: dict
    best: tuple[int, ...]
    n_evaluated: int
    mode: str
    trace: tuple[float, ...] = ()

    def as_row(self) -> dict:
        return {
            "value": self.value,
            "tail_bound": self.tail_bound,
            "horizon": self.horizon,
            "m": self.family["m"],
            "span": self.family["span"],
            "n_controls": self.family["n_controls"],
            "mode": self.mode,
        }


def _costs(dyn, kernel, cost, x0, z, hz, tail_rate, hist_index, seqs, step_map, h, chunk):
    """Discounted cost of each row: start ``x0[row]`` with history ``z[hist_index[row]]``."""
    out = np.empty(seqs.shape[0])
    for lo in range(0, seqs.shape[0], chunk):
        hi = min(lo + chunk, seqs.shape[0])
        res = simulate(dyn, kernel, x0[lo:hi], z, hz, tail_rate, seqs[lo:hi][:, step_map], h,
                       record=False, cost=cost, lam=cost.lam, hist_index=hist_index[lo:hi])
        out[lo:hi] = res.cost
    return out


def value_estimate(
    dyn: Dynamics,
    kernel: Kernel,
    cost: CostModel,
    alpha: HistoryState,
    family: ControlFamily,
    T: float | None = None,
    h: float = 0.01,
    mode: str = "exhaustive",
    max_candidates: int = 200_000,
    chunk: int = 8192,
    max_sweeps: int = 20,
) -> ValueEstimate:
    """Minimize the discounted cost over ``family``.

    ``exhaustive`` evaluates every sequence (first in declared order wins
    ties) and raises :class:`FamilyTooLarge` above ``max_candidates``.
    ``improvement`` starts from the best constant control and sweeps the
    intervals one at a time, keeping strict improvements.
    """
    if T is None:
        T = truncation_horizon(cost, h)
    N = _n_steps(T, h)
    step_map = family.step_map(h, N)
    nK = dyn.n_controls
    z = alpha.z[None]

    def evaluate(seqs):
        seqs = np.atleast_2d(seqs)
        x0 = np.repeat(alpha.x[None], seqs.shape[0], axis=0)
        return _costs(dyn, kernel, cost, x0, z, alpha.h, alpha.tail_rate, np.zeros(seqs.shape[0], dtype=int),
                      seqs, step_map, h, chunk)

    if mode == "exhaustive":
        size = family.size(nK)
        if size > max_candidates:
            raise FamilyTooLarge(f"{size} control sequences exceed the exhaustive budget {max_candidates}")
        seqs = family.candidates(nK)
        vals = evaluate(seqs)
        i = int(np.argmin(vals))
        best, value, n_eval, trace = seqs[i], float(vals[i]), len(seqs), (float(vals[i]),)
    elif mode == "improvement":
        sub = family.subset(nK)
        consts = np.repeat(np.array(sub)[:, None], family.m, axis=1)
        vals = evaluate(consts)
        i = int(np.argmin(vals))
        best, value = consts[i].copy(), float(vals[i])
        n_eval = len(consts)
        trace = [value]
        for _ in range(max_sweeps):
            improved = False
            for j in range(family.m):
                trial = np.repeat(best[None], len(sub), axis=0)
                trial[:, j] = sub
                tv = evaluate(trial)
                n_eval += len(sub)
                k = int(np.argmin(tv))
                if tv[k] < value:
                    best, value, improved = trial[k].copy(), float(tv[k]), True
            trace.append(value)
            if not improved:
                break
        trace = tuple(trace)
    else:
        raise ValueError(f"unknown optimization mode {mode!r}")
    return ValueEstimate(
        value=value,
        horizon=float(T),
        tail_bound=tail_bound(cost, T),
        family=family.descriptor(nK),
        best=tuple(int(b) for b in best),
        n_evaluated=n_eval,
        mode=mode,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# dynamic programming split


@dataclass(frozen=True)
class DPPResult:
    residual: float
    lhs: float
    rhs: float
    t: float
    outer_best: tuple[int, ...]
    inner_best: tuple[int, ...]
    n_evaluated: int


def dpp_residual(
    dyn: Dynamics,
    kernel: Kernel,
    cost: CostModel,
    alpha: HistoryState,
    t: float,
    family: ControlFamily,
    T: float | None = None,
    h: float = 0.01,
    outer: ControlFamily | None = None,
    inner: ControlFamily | None = None,
    max_candidates: int = 2_000_000,
    chunk: int = 16384,
) -> DPPResult:
    """``|v(alpha) - inf_u {segment cost on [0,t] + exp(-lam t) v(shifted state)}|``.

    The left side is the exhaustive estimate over ``family``.  The right side
    minimizes over ``outer`` controls on ``[0, t]`` (default: ``family.m``
    intervals on ``[0, t]``) and, for each, over ``inner`` controls from the
    shifted state with horizon ``T - t`` (default: ``family.m`` intervals on
    ``[0, span - t]``), so both sides integrate up to the same ``T``.
    """
    if T is None:
        T = truncation_horizon(cost, h)
    N = _n_steps(T, h)
    n_t = _n_steps(t, h)
    if not 0 < n_t < N:
        raise ValueError("split time must lie strictly inside the horizon")
    if outer is None:
        outer = ControlFamily(family.m, t, family.controls)
    if inner is None:
        inner = ControlFamily(family.m, max(family.span - t, h), family.controls)
    nK = dyn.n_controls
    n_outer, n_inner = outer.size(nK), inner.size(nK)
    if n_outer * n_inner > max_candidates:
        raise FamilyTooLarge(f"{n_outer} x {n_inner} split sequences exceed the budget {max_candidates}")

    lhs = value_estimate(dyn, kernel, cost, alpha, family, T, h, max_candidates=max_candidates)

    # outer segments, recorded so their end states can be shifted
    o_seqs = outer.candidates(nK)
    o_map = outer.step_map(h, n_t)
    seg = simulate(dyn, kernel, np.repeat(alpha.x[None], len(o_seqs), axis=0), alpha.z[None], alpha.h,
                   alpha.tail_rate, o_seqs[:, o_map], h, record=True, cost=cost, lam=cost.lam)
    z_shift = _shift_values(seg.y, h, n_t, np.broadcast_to(alpha.z, (len(o_seqs),) + alpha.z.shape), alpha.h,
                            alpha.tail_rate)
    x_shift = seg.y[n_t]

    # inner value at every shifted state, evaluated on the outer x inner product
    i_seqs = inner.candidates(nK)
    i_map = inner.step_map(h, N - n_t)
    rows_o = np.repeat(np.arange(len(o_seqs)), len(i_seqs))
    rows_i = np.tile(np.arange(len(i_seqs)), len(o_seqs))
    costs = _costs(dyn, kernel, cost, x_shift[rows_o], z_shift, alpha.h, alpha.tail_rate, rows_o,
                   i_seqs[rows_i], i_map, h, chunk).reshape(len(o_seqs), len(i_seqs))
    inner_arg = np.argmin(costs, axis=1)
    inner_val = costs[np.arange(len(o_seqs)), inner_arg]
    total = seg.cost + np.exp(-cost.lam * n_t * h) * inner_val
    o = int(np.argmin(total))
    rhs = float(total[o])
    return DPPResult(
        residual=abs(lhs.value - rhs),
        lhs=lhs.value,
        rhs=rhs,
        t=float(t),
        outer_best=tuple(int(v) for v in o_seqs[o]),
        inner_best=tuple(int(v) for v in i_seqs[inner_arg[o]]),
        n_evaluated=lhs.n_evaluated + len(o_seqs) * (1 + len(i_seqs)),
    )


# ---------------------------------------------------------------------------
# Hamiltonian


def hamiltonian(cost: CostModel, dyn: Dynamics, kernel: Kernel, alpha: HistoryState, p, return_control: bool = False):
    """``max_u { -L(x,u) - p . F(x, u, int A z) }`` over the control set; first maximizer wins ties."""
    p = np.asarray(p, dtype=float).reshape(dyn.d)
    a = history_memory(kernel, alpha, 0.0)
    nK = dyn.n_controls
    x = np.repeat(alpha.x[None], nK, axis=0)
    vals = -cost(x, dyn.controls) - dyn(x, dyn.controls, np.repeat(a[None], nK, axis=0)) @ p
    i = int(np.argmax(vals))
    return (float(vals[i]), i) if return_control else float(vals[i])


@dataclass(frozen=True, eq=False)
class RegularitySamples:
    """Pairs ``(x, z, p)`` and ``(y, w, q)`` on a shared history grid (zero tail)."""

    x: np.ndarray
    z: np.ndarray
    p: np.ndarray
    y: np.ndarray
    w: np.ndarray
    q: np.ndarray
    h: float

    def __len__(self):
        return self.x.shape[0]


def _smooth_histories(rng, n, d, s, scale):
    amp = rng.normal(0.0, scale, (n, 3, d))
    rate = rng.uniform(0.2, 2.0, (n, 3, 1))
    freq = rng.uniform(0.0, 3.0, (n, 3, 1))
    phase = rng.uniform(0.0, 2 * np.pi, (n, 3, 1))
    basis = np.exp(-rate * s) * np.cos(freq * s + phase)  # (n, 3, S)
    return np.einsum("njs,njd->nsd", basis, amp)


def regularity_samples(rng: np.random.Generator, n: int, d: int = 1, h: float = 0.01, s_max: float = 20.0,
                       scale: float = 1.0, identical: bool = False) -> RegularitySamples:
    """Random smooth sample pairs; ``identical`` makes each pair coincide."""
    s = h * np.arange(int(round(s_max / h)) + 1)
    x = rng.uniform(-2.0, 2.0, (n, d)) * scale
    z = _smooth_histories(rng, n, d, s, scale)
    p = rng.normal(0.0, 2.0, (n, d))
    if identical:
        return RegularitySamples(x, z, p, x.copy(), z.copy(), p.copy(), h)
    y = x + rng.normal(0.0, 0.5, (n, d)) * scale
    w = z + _smooth_histories(rng, n, d, s, 0.5 * scale)
    q = p + rng.normal(0.0, 1.0, (n, d))
    return RegularitySamples(x, z, p, y, w, q, h)


def _grid_norms(kernel: Kernel, h: float, n: int):
    """Trapezoid ``||A||_L2`` and ``||A||_H1`` on the sample grid (Frobenius)."""
    s = h * np.arange(n)
    wts = trapezoid_weights(n, h)
    a = kernel(s).reshape(n, -1)
    l2 = float(np.sqrt(np.sum(wts[:, None] * a**2)))
    da = np.gradient(a, h, axis=0, edge_order=2)
    h1 = float(np.sqrt(l2**2 + np.sum(wts[:, None] * da**2)))
    return l2, h1


def regularity_constants(cost: CostModel, dyn: Dynamics, kernel: Kernel, h: float, n: int) -> tuple[float, float, float]:
    """Constants of the three Hamiltonian bounds from ``C1``, ``C2``, ``max |F(0,u,0)|`` and kernel norms."""
    l2, h1 = _grid_norms(kernel, h, n)
    if kernel.is_exponential:
        from .kernel import kernel_norms

        h1 = max(h1, kernel_norms(kernel).h1)
    nK = dyn.n_controls
    f0 = float(np.max(np.linalg.norm(dyn(np.zeros((nK, dyn.d)), dyn.controls, np.zeros((nK, dyn.k))), axis=1)))
    c1 = max(cost.lipschitz, dyn.lipschitz * max(1.0, l2))
    c2 = max(f0, dyn.lipschitz, dyn.lipschitz * l2)
    c3 = max(cost.lipschitz, dyn.lipschitz * max(1.0, h1))
    return c1, c2, c3


def _batch_hamiltonian(cost, dyn, a, x, p):
    n, nK = x.shape[0], dyn.n_controls
    xr = np.repeat(x, nK, axis=0)
    ur = np.tile(dyn.controls, (n, 1))
    ar = np.repeat(a, nK, axis=0)
    vals = -cost(xr, ur) - np.einsum("bd,bd->b", dyn(xr, ur, ar), np.repeat(p, nK, axis=0))
    return vals.reshape(n, nK).max(axis=1)


def hamiltonian_regularity_gap(cost: CostModel, dyn: Dynamics, kernel: Kernel, samples: RegularitySamples,
                               constants=None) -> tuple[float, float, float]:
    """Max over samples of ``LHS - C * RHS`` for the three Hamiltonian bounds (all should be ``<= 0``).

    1. ``|H(x,z,p) - H(y,w,p)| <= C (|x-y| + ||z-w||) (1 + |p|)``
    2. ``|H(x,z,p) - H(x,z,q)| <= C |p-q| (1 + |x| + ||z||)``
    3. bound 1 with ``||z-w||`` replaced by the dual H1 norm (kernel in H1)
    """
    from .hilbert import dual_h1_norm

    n_s = samples.z.shape[1]
    wts = trapezoid_weights(n_s, samples.h)
    a_grid = kernel(samples.h * np.arange(n_s))  # (S, k, d)
    mem_z = np.einsum("s,skd,nsd->nk", wts, a_grid, samples.z)
    mem_w = np.einsum("s,skd,nsd->nk", wts, a_grid, samples.w)
    c1, c2, c3 = constants if constants is not None else regularity_constants(cost, dyn, kernel, samples.h, n_s)

    def l2(v):
        return np.sqrt(np.einsum("s,nsd->n", wts, v**2))

    H_xzp = _batch_hamiltonian(cost, dyn, mem_z, samples.x, samples.p)
    H_ywp = _batch_hamiltonian(cost, dyn, mem_w, samples.y, samples.p)
    H_xzq = _batch_hamiltonian(cost, dyn, mem_z, samples.x, samples.q)
    dx = np.linalg.norm(samples.x - samples.y, axis=1)
    pn = np.linalg.norm(samples.p, axis=1)
    lhs1 = np.abs(H_xzp - H_ywp)
    gap1 = lhs1 - c1 * (dx + l2(samples.z - samples.w)) * (1.0 + pn)
    gap2 = np.abs(H_xzp - H_xzq) - c2 * np.linalg.norm(samples.p - samples.q, axis=1) * (
        1.0 + np.linalg.norm(samples.x, axis=1) + l2(samples.z))
    dual = np.array([dual_h1_norm(samples.z[i] - samples.w[i], samples.h) for i in range(len(samples))])
    gap3 = lhs1 - c3 * (dx + dual) * (1.0 + pn)
    return float(gap1.max()), float(gap2.max()), float(gap3.max())


# ---------------------------------------------------------------------------
# Hoelder continuity probe


@dataclass(frozen=True)
class HolderResult:
    deltas: np.ndarray
    gaps: np.ndarray
    slope: float
    predicted: float
    theta_hat: float
    constant: float


def holder_probe(
    dyn: Dynamics,
    kernel: Kernel,
    cost: CostModel,
    alpha0: HistoryState,
    direction: HistoryState,
    deltas: Sequence[float],
    family: ControlFamily,
    h: float,
    T: float | None = None,
) -> HolderResult:
    """Log-log slope of ``|v(alpha0 + eps d) - v(alpha0)|`` against the perturbation size.

    ``direction`` is scaled so that ``|dx| + ||dz||`` equals each requested
    size.  The predicted exponent is ``min(1, lam / theta_hat)`` with the
    growth estimate ``theta_hat``.
    """
    theta = growth_estimate(dyn, kernel)
    unit = float(np.linalg.norm(direction.x) + direction.l2_norm())
    if unit == 0:
        raise ValueError("perturbation direction is zero")
    v0 = value_estimate(dyn, kernel, cost, alpha0, family, T, h).value
    deltas = np.asarray(deltas, dtype=float)
    gaps = np.empty_like(deltas)
    for i, eps in enumerate(deltas):
        a1 = alpha0 + direction * (eps / unit)
        gaps[i] = abs(value_estimate(dyn, kernel, cost, a1, family, T, h).value - v0)
    slope = float(np.polyfit(np.log(deltas), np.log(gaps), 1)[0])
    predicted = min(1.0, cost.lam / theta)
    return HolderResult(deltas, gaps, slope, predicted, theta, float(np.max(gaps / deltas**predicted)))


def write_value_csv(path, estimates: Sequence[ValueEstimate], inputs: Sequence[dict]) -> Path:
    """One row per estimate: the given input columns followed by value, tail bound and family."""
    path = Path(path)
    rows = [dict(inp) | est.as_row() for inp, est in zip(inputs, estimates, strict=True)]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["value"], lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format(v, ".17g") if isinstance(v, float) else v for k, v in row.items()})
    return path
