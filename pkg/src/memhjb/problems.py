"""Built-in scalar problems with declared Lipschitz constants and cost bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import Dynamics
from .kernel import Kernel
from .value import CostModel

__all__ = ["Problem", "PROBLEMS", "make_problem", "problem_names"]


@dataclass(frozen=True, eq=False)
class Problem:
    name: str
    dyn: Dynamics
    cost: CostModel
    kernel: Kernel
    description: str

    @property
    def delta(self) -> float | None:
        """Rate of a single-exponential kernel with unit coefficient, else ``None``."""
        k = self.kernel
        if k.form == "exponential" and np.allclose(k.coefs, 1.0):
            return float(k.rates[0])
        return None


def _controls(n_controls: int, u_max: float) -> np.ndarray:
    if n_controls == 1:
        return np.zeros(1)
    return np.linspace(-u_max, u_max, n_controls)


def _kernel(rate: float, coef: float) -> Kernel:
    return Kernel.exponential(rate, coef) if coef != 0 else Kernel.zero()


def _clamped_square(clamp):
    def L(x, u):
        return np.minimum(x[:, 0] ** 2, clamp)

    return L


def constant_cost(lam=1.0, rate=1.0, coef=1.0, n_controls=3, u_max=1.0):
    dyn = Dynamics(lambda x, u, a: u + a, _controls(n_controls, u_max), lipschitz=1.0)
    cost = CostModel(lambda x, u: np.ones(x.shape[0]), lam, sup_bound=1.0, lipschitz=0.0, name="one")
    return dyn, cost, _kernel(rate, coef), "F = u + G, L = 1"


def uncontrolled_lq(lam=1.0, rate=1.0, coef=1.0, clamp=4.0):
    dyn = Dynamics(lambda x, u, a: -x, np.zeros(1), lipschitz=1.0)
    cost = CostModel(_clamped_square(clamp), lam, sup_bound=clamp, lipschitz=2.0 * np.sqrt(clamp), name="min(x^2, c)")
    return dyn, cost, _kernel(rate, coef), "F = -x, L = min(x^2, c), no control"


def controlled_memory_lq(lam=1.0, rate=1.0, coef=1.0, clamp=4.0, n_controls=3, u_max=1.0, control_weight=0.1):
    dyn = Dynamics(lambda x, u, a: u + a, _controls(n_controls, u_max), lipschitz=1.0)
    sq = _clamped_square(clamp)

    def L(x, u):
        return sq(x, u) + control_weight * u[:, 0] ** 2

    cost = CostModel(L, lam, sup_bound=clamp + control_weight * u_max**2, lipschitz=2.0 * np.sqrt(clamp),
                     name="min(x^2, c) + r u^2")
    return dyn, cost, _kernel(rate, coef), "F = u + G, L = min(x^2, c) + r u^2"


def bang_bang(lam=1.0, rate=1.0, coef=1.0, clamp=4.0, n_controls=3, u_max=1.0):
    dyn = Dynamics(lambda x, u, a: u.copy(), _controls(n_controls, u_max), lipschitz=0.0)
    cost = CostModel(_clamped_square(clamp), lam, sup_bound=clamp, lipschitz=2.0 * np.sqrt(clamp), name="min(x^2, c)")
    return dyn, cost, _kernel(rate, coef), "F = u, L = min(x^2, c)"


def expanding(lam=1.0, kappa=4.0):
    dyn = Dynamics(lambda x, u, a: kappa * x, np.zeros(1), lipschitz=abs(kappa))
    cost = CostModel(lambda x, u: np.minimum(np.abs(x[:, 0]), 1.0), lam, sup_bound=1.0, lipschitz=1.0,
                     name="min(|x|, 1)")
    return dyn, cost, Kernel.zero(), "F = kappa x, no memory, L = min(|x|, 1)"


def linear_memory(lam=1.0, rate=1.0, coef=1.0, clamp=4.0):
    dyn = Dynamics(lambda x, u, a: a.copy(), np.zeros(1), lipschitz=1.0)
    cost = CostModel(_clamped_square(clamp), lam, sup_bound=clamp, lipschitz=2.0 * np.sqrt(clamp), name="min(x^2, c)")
    return dyn, cost, _kernel(rate, coef), "F = G, L = min(x^2, c)"


def zero(lam=1.0, rate=1.0, coef=1.0):
    dyn = Dynamics(lambda x, u, a: np.zeros_like(x), np.zeros(1), lipschitz=0.0)
    cost = CostModel(lambda x, u: np.zeros(x.shape[0]), lam, sup_bound=0.0, lipschitz=0.0, name="zero")
    return dyn, cost, _kernel(rate, coef), "F = 0, L = 0"


PROBLEMS: dict[str, Callable] = {
    "constant_cost": constant_cost,
    "uncontrolled_lq": uncontrolled_lq,
    "controlled_memory_lq": controlled_memory_lq,
    "bang_bang": bang_bang,
    "expanding": expanding,
    "linear_memory": linear_memory,
    "zero": zero,
}


def problem_names() -> list[str]:
    return sorted(PROBLEMS)


def make_problem(name: str, **params) -> Problem:
    """Build a library problem; ``params`` override its coefficients (``lam``, ``rate``, ``coef``, ...)."""
    try:
        builder = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {problem_names()}") from None
    dyn, cost, kernel, desc = builder(**params)
    return Problem(name, Dynamics(dyn.F, dyn.controls, dyn.lipschitz, name=name), cost, kernel, desc)
