"""Memory kernels, history states and the memory integral.

A memory kernel ``A`` maps a lag ``s >= 0`` to a ``k x d`` matrix.  The state
equation only sees the past through

    G(t) = int_0^inf A(s) y(t - s) ds,

which splits into a part over the computed trajectory on ``[0, t]`` and a
part over the initial history ``z``.  Every quadrature here is the composite
trapezoid rule on a uniform grid; tails beyond the stored window are handled
analytically according to the history's tail policy.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Kernel",
    "KernelNorms",
    "HistoryState",
    "kernel_norms",
    "memory_integral",
    "history_memory",
    "history_memory_batch",
    "exp_memory_channel",
    "linear_exp_weights",
    "trapezoid_weights",
    "load_tabulated_kernel",
]


def trapezoid_weights(n_points: int, h: float) -> np.ndarray:
    """Composite trapezoid weights for ``n_points`` equally spaced nodes."""
    if n_points < 1:
        raise ValueError("need at least one node")
    wts = np.full(n_points, float(h))
    wts[0] = wts[-1] = 0.5 * h
    if n_points == 1:
        wts[0] = 0.0
    return wts


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _as_matrix(coef, k: int | None = None, d: int | None = None) -> np.ndarray:
    m = np.asarray(coef, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ValueError("kernel coefficient must be a k x d matrix")
    if k is not None and m.shape != (k, d):
        raise ValueError(f"coefficient shape {m.shape} does not match ({k}, {d})")
    return m


class KernelNorms(NamedTuple):
    l1: float
    l2: float
    dl2: float | None

    @property
    def h1(self) -> float | None:
        if self.dl2 is None:
            return None
        return float(np.hypot(self.l2, self.dl2))


@dataclass(frozen=True, eq=False)
class Kernel:
    """A matrix-valued memory weight.

    Build one with :meth:`exponential`, :meth:`sum_of_exponentials` or
    :meth:`tabulated` rather than calling the constructor directly.
    """

    form: str
    rates: np.ndarray = field(default_factory=lambda: _frozen([]))
    coefs: np.ndarray = field(default_factory=lambda: _frozen(np.zeros((0, 1, 1))))
    step: float | None = None
    samples: np.ndarray | None = None
    smooth: bool = True

    # -- constructors ---------------------------------------------------
    @classmethod
    def exponential(cls, rate: float, coef=1.0) -> "Kernel":
        """``A(s) = coef * exp(-rate * s)``."""
        return cls.sum_of_exponentials([(rate, coef)], _form="exponential")

    @classmethod
    def sum_of_exponentials(cls, terms: Sequence[tuple[float, object]], _form="sum_exp") -> "Kernel":
        if not terms:
            raise ValueError("at least one exponential term is required")
        rates = []
        mats = []
        for rate, coef in terms:
            if not np.isfinite(rate) or rate <= 0:
                raise ValueError(f"exponential rates must be positive, got {rate}")
            rates.append(float(rate))
            mats.append(_as_matrix(coef))
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise ValueError("all exponential terms need the same k x d shape")
        return cls(form=_form, rates=_frozen(rates), coefs=_frozen(np.stack(mats)))

    @classmethod
    def tabulated(cls, step: float, samples, smooth: bool = True) -> "Kernel":
        """Piecewise-linear kernel through ``samples[i] = A(i * step)``, zero past the last node."""
        if not step > 0:
            raise ValueError("tabulated kernel step must be positive")
        arr = np.asarray(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None, None]
        elif arr.ndim == 2:
            arr = arr[:, None, :]
        if arr.ndim != 3 or arr.shape[0] < 2:
            raise ValueError("tabulated kernel needs at least two samples of shape (k, d)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tabulated kernel samples must be finite")
        return cls(form="tabulated", step=float(step), samples=_frozen(arr), smooth=bool(smooth))

    @classmethod
    def zero(cls, d: int = 1, k: int = 1) -> "Kernel":
        return cls.tabulated(1.0, np.zeros((2, k, d)))

    # -- shape and evaluation -----------------------------------------
    @property
    def is_exponential(self) -> bool:
        return self.form in ("exponential", "sum_exp")

    @property
    def k(self) -> int:
        return int(self.coefs.shape[1] if self.is_exponential else self.samples.shape[1])

    @property
    def d(self) -> int:
        return int(self.coefs.shape[2] if self.is_exponential else self.samples.shape[2])

    @property
    def support(self) -> float:
        if self.is_exponential:
            return np.inf
        return self.step * (self.samples.shape[0] - 1)

    def __call__(self, s) -> np.ndarray:
        """Evaluate at lags ``s`` (any shape); result has shape ``s.shape + (k, d)``."""
        s = np.asarray(s, dtype=float)
        if self.is_exponential:
            decay = np.exp(-np.multiply.outer(s, self.rates))  # s.shape + (J,)
            return np.einsum("...j,jkd->...kd", decay, self.coefs)
        flat = s.reshape(-1)
        pos = flat / self.step
        n_last = self.samples.shape[0] - 1
        i0 = np.clip(np.floor(pos).astype(int), 0, n_last - 1)
        frac = (pos - i0)[:, None, None]
        vals = (1.0 - frac) * self.samples[i0] + frac * self.samples[i0 + 1]
        vals[(flat < 0) | (flat > self.support * (1 + 1e-12))] = 0.0
        return vals.reshape(s.shape + (self.k, self.d))

    def norms(self) -> KernelNorms:
        return kernel_norms(self)


def kernel_norms(kernel: Kernel) -> KernelNorms:
    """``(||A||_L1, ||A||_L2, ||A'||_L2)`` with the Frobenius norm on matrices.

    Exponential forms use closed-form integrals (the L1 norm of a sum with
    mixed-sign terms falls back to adaptive quadrature).  Tabulated kernels
    are integrated as the piecewise-linear interpolant of their samples;
    the derivative norm is ``None`` when the kernel is flagged non-smooth.
    """
    if kernel.is_exponential:
        rates = kernel.rates
        mats = kernel.coefs
        gram = np.einsum("ikd,jkd->ij", mats, mats)
        rate_sum = rates[:, None] + rates[None, :]
        l2 = np.sqrt(max(np.sum(gram / rate_sum), 0.0))
        dl2 = np.sqrt(max(np.sum(gram * np.outer(rates, rates) / rate_sum), 0.0))
        if len(rates) == 1:
            l1 = np.linalg.norm(mats[0]) / rates[0]
        else:
            from scipy.integrate import quad

            l1 = quad(lambda s: np.linalg.norm(kernel(s)), 0.0, np.inf, limit=200)[0]
        return KernelNorms(float(l1), float(l2), float(dl2))

    h = kernel.step
    frob = np.sqrt(np.einsum("nkd,nkd->n", kernel.samples, kernel.samples))
    # exact integrals of |linear interpolant| per panel would need the
    # componentwise form; the trapezoid rule on the node values is used.
    l1 = float(np.sum(trapezoid_weights(len(frob), h) * frob))
    # exact L2 norm of the piecewise-linear interpolant
    a = kernel.samples[:-1]
    b = kernel.samples[1:]
    l2_sq = h / 3.0 * np.sum(a * a + a * b + b * b)
    if not kernel.smooth:
        dl2 = None
    else:
        diff = np.diff(kernel.samples, axis=0)
        dl2 = float(np.sqrt(np.sum(diff * diff) / h))
    return KernelNorms(l1, float(np.sqrt(l2_sq)), dl2)


@dataclass(frozen=True, eq=False)
class HistoryState:
    """A point ``(x, z)`` of the state space ``R^d x L^2(0, inf; R^d)``.

    ``z[i]`` holds ``z(i * h)`` for ``i = 0..n``, so the stored window is
    ``[0, s_max]`` with ``s_max = n * h``.  Beyond the window the history is
    either zero (``tail_rate=None``) or continues as
    ``z(s_max) * exp(-tail_rate * (s - s_max))``.
    """

    x: np.ndarray
    z: np.ndarray
    h: float
    tail_rate: float | None = None

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if x.ndim != 1 or z.ndim != 2 or z.shape[1] != x.shape[0]:
            raise ValueError(f"history of shape {z.shape} does not match state of dimension {x.shape}")
        if z.shape[0] < 2:
            raise ValueError("history needs at least two samples")
        if not self.h > 0:
            raise ValueError("history step must be positive")
        if self.tail_rate is not None and not self.tail_rate > 0:
            raise ValueError("exponential tail rate must be positive")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ValueError("history state must be finite")
        x.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def from_function(cls, x, func: Callable | float, h: float, s_max: float, tail_rate=None) -> "HistoryState":
        """Sample ``func`` (callable or constant) on the grid ``0, h, ..., s_max``."""
        n = int(round(s_max / h))
        if abs(n * h - s_max) > 1e-9 * max(1.0, s_max):
            raise ValueError("s_max must be a multiple of h")
        s = h * np.arange(n + 1)
        d = np.atleast_1d(np.asarray(x, dtype=float)).shape[0]
        if callable(func):
            vals = np.asarray(func(s), dtype=float)
        else:
            vals = np.broadcast_to(np.asarray(func, dtype=float), (n + 1, d)).copy()
        if vals.ndim == 1:
            vals = np.repeat(vals[:, None], d, axis=1)
        return cls(x=x, z=vals, h=h, tail_rate=tail_rate)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.z.shape[0] - 1

    @property
    def s_max(self) -> float:
        return self.n * self.h

    @property
    def grid(self) -> np.ndarray:
        return self.h * np.arange(self.n + 1)

    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.n + 1, self.h)

    def l2_norm(self) -> float:
        sq = float(np.sum(self.weights() * np.einsum("nd,nd->n", self.z, self.z)))
        if self.tail_rate is not None:
            sq += float(self.z[-1] @ self.z[-1]) / (2.0 * self.tail_rate)
        return float(np.sqrt(sq))

    def norm(self) -> float:
        """``(|x|^2 + ||z||^2)^{1/2}``."""
        return float(np.hypot(np.linalg.norm(self.x), self.l2_norm()))

    def in_e0(self, tol: float = 1e-9) -> bool:
        """Whether the current state matches the history's endpoint, ``|x - z(0)| <= tol``."""
        return bool(np.linalg.norm(self.x - self.z[0]) <= tol)

    def with_values(self, x=None, z=None) -> "HistoryState":
        return HistoryState(
            x=self.x if x is None else x, z=self.z if z is None else z, h=self.h, tail_rate=self.tail_rate
        )

    def __add__(self, other: "HistoryState") -> "HistoryState":
        self._check_compatible(other)
        return self.with_values(self.x + other.x, self.z + other.z)

    def __sub__(self, other: "HistoryState") -> "HistoryState":
        self._check_compatible(other)
        return self.with_values(self.x - other.x, self.z - other.z)

    def __mul__(self, c: float) -> "HistoryState":
        return self.with_values(c * self.x, c * self.z)

    __rmul__ = __mul__

    def _check_compatible(self, other):
        if self.z.shape != other.z.shape or self.h != other.h or self.tail_rate != other.tail_rate:
            raise ValueError("history states live on different grids")


def _exp_tail(kernel: Kernel, t: float, s_max: float, z_last: np.ndarray, tail_rate: float | None) -> np.ndarray:
    """``int_{s_max}^inf A(t + s) z_tail(s) ds`` for the exponential tail policy."""
    if tail_rate is None:
        return np.zeros(kernel.k)
    if kernel.is_exponential:
        fac = np.exp(-kernel.rates * (t + s_max)) / (kernel.rates + tail_rate)
        return np.einsum("j,jkd,d->k", fac, kernel.coefs, z_last)
    # finite support: integrate the overlap numerically on a fine grid
    end = kernel.support - t
    if end <= s_max:
        return np.zeros(kernel.k)
    n = max(int(np.ceil((end - s_max) / (kernel.step / 4))), 2)
    s = np.linspace(s_max, end, n + 1)
    wts = trapezoid_weights(n + 1, s[1] - s[0])
    decay = np.exp(-tail_rate * (s - s_max))
    return np.einsum("n,nkd,d->k", wts * decay, kernel(t + s), z_last)


def history_memory_batch(kernel: Kernel, z, h: float, tail_rate, times) -> np.ndarray:
    """Batched ``int_0^inf A(t + s) z_b(s) ds`` for every ``t`` in ``times``.

    ``z`` has shape ``(B, n + 1, d)``; the result has shape ``(len(times), B, k)``.
    """
    z = np.asarray(z, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    n = z.shape[1] - 1
    s = h * np.arange(n + 1)
    s_max = n * h
    wts = trapezoid_weights(n + 1, h)
    if kernel.is_exponential:
        # A(t + s) = sum_j M_j e^{-r_j t} e^{-r_j s}: reduce to moments of z
        moments = np.einsum("n,nj,bnd->bjd", wts, np.exp(-np.outer(s, kernel.rates)), z)
        if tail_rate is not None:
            moments = moments + np.einsum("j,bd->bjd", np.exp(-kernel.rates * s_max) / (kernel.rates + tail_rate), z[:, -1])
        return np.einsum("tj,jkd,bjd->tbk", np.exp(-np.outer(times, kernel.rates)), kernel.coefs, moments)
    out = np.zeros((len(times), z.shape[0], kernel.k))
    for i, t in enumerate(times):
        keep = s + t <= kernel.support * (1 + 1e-12)
        if np.any(keep):
            cut = int(np.nonzero(keep)[0][-1]) + 1
            w = wts[:cut].copy()
            if cut <= n:
                # the kernel support ends inside the window
                w[-1] = 0.5 * h if cut > 1 else 0.0
            out[i] = np.einsum("n,nkd,bnd->bk", w, kernel(t + s[:cut]), z[:, :cut])
        if tail_rate is not None:
            for b in range(z.shape[0]):
                out[i, b] += _exp_tail(kernel, t, s_max, z[b, -1], tail_rate)
    return out


def history_memory(kernel: Kernel, history: HistoryState, t: float = 0.0) -> np.ndarray:
    """``int_0^inf A(t + s) z(s) ds``: the history's share of ``G(t)``."""
    if kernel.d != history.d:
        raise ValueError("kernel and history dimensions differ")
    return history_memory_batch(kernel, history.z[None], history.h, history.tail_rate, [t])[0, 0]


def memory_integral(kernel: Kernel, history: HistoryState, y=None, h: float | None = None) -> np.ndarray:
    """``G(t) = int_0^t A(s) y(t - s) ds + int_0^inf A(t + s) z(s) ds``.

    ``y`` holds the computed trajectory at ``0, h, ..., t`` (so ``t = (len(y)-1) h``);
    with ``y=None`` the result is ``G(0)``, the memory seen at time zero.
    """
    if y is None:
        return history_memory(kernel, history, 0.0)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if h is None or not h > 0:
        raise ValueError("trajectory step h is required")
    n = y.shape[0] - 1
    t = n * h
    lags = h * np.arange(n + 1)
    wts = trapezoid_weights(n + 1, h)
    if not kernel.is_exponential:
        inside = lags <= kernel.support * (1 + 1e-12)
        top = int(np.nonzero(inside)[0][-1])
        if top < n:
            wts = wts.copy()
            wts[top + 1:] = 0.0
            wts[top] = 0.5 * h if top > 0 else 0.0
    own = np.einsum("n,nkd,nd->k", wts, kernel(lags), y[::-1])
    return own + history_memory(kernel, history, t)


def linear_exp_weights(rate: float, h: float) -> tuple[float, float, float]:
    """Weights ``(e, a, b)`` with ``int_0^h e^{-rate (h - t)} f(t) dt = a f(0) + b f(h)`` for linear ``f``.

    ``e = exp(-rate h)``.  Evaluated without cancellation for small ``rate h``.
    """
    x = rate * h
    one_minus_e = -np.expm1(-x)
    if x < 0.1:
        # (x - 1 + e^{-x}) / x^2 = sum_n (-x)^n / (n + 2)!
        g = sum((-x) ** n / math.factorial(n + 2) for n in range(12))
    else:
        g = (x - one_minus_e) / (x * x)
    b = h * g
    a = h * (one_minus_e / x - g)
    return 1.0 - one_minus_e, a, b


def exp_memory_channel(rate: float, x_path, h: float, m0) -> np.ndarray:
    """Integrate ``m' = x(t) - rate * m`` from ``m(0) = m0`` along ``x_path``.

    ``x_path`` is sampled at ``0, h, 2h, ...`` and treated as piecewise
    linear; each step is integrated exactly for that interpolant.  Returns
    the channel at every node, shape ``(len(x_path), d)``.
    """
    if not rate > 0:
        raise ValueError("channel rate must be positive")
    x = np.asarray(x_path, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    m = np.empty_like(x)
    m[0] = np.broadcast_to(np.asarray(m0, dtype=float), x.shape[1:])
    e, a, b = linear_exp_weights(rate, h)
    for i in range(1, x.shape[0]):
        m[i] = e * m[i - 1] + a * x[i - 1] + b * x[i]
    return m


def load_tabulated_kernel(path, k: int = 1, d: int = 1, smooth: bool = True) -> Kernel:
    """Read a kernel from a CSV of rows ``s, A_11, A_12, ..., A_kd`` (row-major).

    A header row is skipped if present; the ``s`` column must be uniformly spaced from 0.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
                continue  # header
    data = np.asarray(rows, dtype=float)
    if data.ndim != 2 or data.shape[1] != 1 + k * d:
        raise ValueError(f"expected {1 + k * d} columns in {path}")
    s = data[:, 0]
    step = s[1] - s[0]
    if abs(s[0]) > 1e-12 or not np.allclose(np.diff(s), step, rtol=1e-8, atol=1e-12):
        raise ValueError("kernel CSV must start at s=0 with uniform spacing")
    return Kernel.tabulated(step, data[:, 1:].reshape(-1, k, d), smooth=smooth)
