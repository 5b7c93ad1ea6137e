"""Fluid-limit analysis of the overloaded cell.

In overload (rho > 1) the scaled occupancy process concentrates around a
deterministic equilibrium in which the global reneging rate S balances the
excess input. S is the unique positive root of

    f(S) = sum_k lambda_k / (mu_k + S) - 1 = 0,

f being strictly decreasing with f(0) = rho - 1 > 0. From S follow the
per-class reneging probabilities S / (mu_k + S), the identity
sum_k lambda_k P_k = S, and the QoE perturbation of class k,

    dS/dlambda_k = [ (mu_k + S) * sum_j lambda_j / (mu_j + S)^2 ]^(-1),

by implicit differentiation of f. None of these quantities involve the
impatience rate, which is what makes them usable for pricing without
estimating user patience.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotOverloadedError
from .model import CellModel, replace_class_arrival_rates, with_arrival_rate

FIXED_POINT_TOL = 1e-15
_BISECTION_STEPS = 40
_NEWTON_STEPS = 60


def _excess_input(model: CellModel, s: float) -> float:
    return math.fsum(
        lam / (mu + s) for lam, mu in zip(model.class_arrival_rates, model.service_rates)
    ) - 1.0


def solve_fixed_point(model: CellModel) -> float:
    """Global reneging rate S in fluid equilibrium (flows per second).

    Bisection on [0, total arrival rate] (the root always lies inside:
    f(0) = rho - 1 > 0 and f(lambda) < 0) followed by Newton polish down to
    |f(S)| at machine level. Deterministic.

    Raises:
        NotOverloadedError: if rho <= 1; the root would be non-positive and
            outside the regime where the fluid picture is meaningful.
    """
    if model.load <= 1:
        raise NotOverloadedError(model.load)
    lo, hi = 0.0, float(model.arrival_rate)
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if _excess_input(model, mid) > 0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    best, best_val = s, abs(_excess_input(model, s))
    for _ in range(_NEWTON_STEPS):
        val = _excess_input(model, s)
        if abs(val) < best_val:
            best, best_val = s, abs(val)
        if abs(val) <= FIXED_POINT_TOL:
            break
        slope = -math.fsum(
            lam / (mu + s) ** 2
            for lam, mu in zip(model.class_arrival_rates, model.service_rates)
        )
        step = val / slope
        if s - step <= 0:
            break
        s -= step
        if abs(step) <= 1e-18 * max(s, 1.0):
            break
    return best


def fluid_reneging_prob(model: CellModel, s: float, k: int) -> float:
    """Fluid reneging probability of class k: S / (mu_k + S)."""
    return s / (model.service_rates[k] + s)


def global_impatience_rate(model: CellModel, s: float) -> float:
    """Total abandonment rate recombined from the per-class probabilities.

    Equals sum_j lambda_j * S / (mu_j + S); by the fixed point this is S
    itself, so the difference is a direct measure of the solver residual.
    """
    return math.fsum(
        lam * fluid_reneging_prob(model, s, k)
        for k, lam in enumerate(model.class_arrival_rates)
    )


def qoe_perturbation(model: CellModel, s: float, k: int) -> float:
    """Marginal increase of the global reneging rate per extra class-k demand."""
    curvature = math.fsum(
        lam / (mu + s) ** 2 for lam, mu in zip(model.class_arrival_rates, model.service_rates)
    )
    return 1.0 / ((model.service_rates[k] + s) * curvature)


@dataclass(frozen=True)
class FluidSolution:
    """Fluid equilibrium summary for one overloaded model.

    Attributes:
        rate: global reneging rate S.
        reneging_probs: per-class fluid reneging probability.
        recombined_rate: sum_j lambda_j * reneging_probs[j]; equals rate up
            to the solver residual.
        perturbations: per-class QoE perturbation dS/dlambda_k.
        residual: |f(S)| achieved by the root solve.
    """

    rate: float
    reneging_probs: np.ndarray
    recombined_rate: float
    perturbations: np.ndarray
    residual: float

    def __post_init__(self):
        self.reneging_probs.flags.writeable = False
        self.perturbations.flags.writeable = False


def solve_fluid(model: CellModel) -> FluidSolution:
    """Solve the fixed point and assemble all fluid quantities."""
    s = solve_fixed_point(model)
    probs = np.asarray([fluid_reneging_prob(model, s, k) for k in range(model.num_classes)])
    gammas = np.asarray([qoe_perturbation(model, s, k) for k in range(model.num_classes)])
    return FluidSolution(
        rate=s,
        reneging_probs=probs,
        recombined_rate=global_impatience_rate(model, s),
        perturbations=gammas,
        residual=abs(_excess_input(model, s)),
    )


def perturbation_sensitivity_check(model: CellModel, k: int, h: float):
    """Compare the analytic perturbation against a central finite difference.

    Re-solves the fixed point with the class-k arrival rate shifted by +-h
    (other classes untouched) and returns
    ``(analytic, finite_difference, relative_error)``.

    Raises:
        NotOverloadedError: if the model, or either shifted model, is not
            overloaded.
    """
    s = solve_fixed_point(model)
    analytic = qoe_perturbation(model, s, k)
    rates = model.class_arrival_rates.copy()
    up = rates.copy()
    up[k] += h
    down = rates.copy()
    down[k] -= h
    s_up = solve_fixed_point(replace_class_arrival_rates(model, up))
    s_down = solve_fixed_point(replace_class_arrival_rates(model, down))
    estimate = (s_up - s_down) / (2.0 * h)
    rel_error = abs(estimate - analytic) / abs(analytic)
    return analytic, estimate, rel_error


@dataclass(frozen=True)
class SweepTable:
    """Fluid quantities across an arrival-rate grid (class mix fixed).

    ``skipped`` lists the grid points that were not overloaded, with the
    offered load that disqualified them.
    """

    arrival_rates: np.ndarray
    rates: np.ndarray
    reneging_probs: np.ndarray  # shape (grid, K)
    perturbations: np.ndarray  # shape (grid, K)
    skipped: tuple[tuple[float, float], ...]

    @property
    def num_classes(self) -> int:
        return self.reneging_probs.shape[1]


def load_sweep(model: CellModel, arrival_rates) -> SweepTable:
    """Evaluate the fluid solution across total arrival rates.

    Grid points with rho <= 1 are skipped and reported in ``skipped``
    rather than aborting the sweep.
    """
    kept: list[float] = []
    rates: list[float] = []
    probs: list[np.ndarray] = []
    gammas: list[np.ndarray] = []
    skipped: list[tuple[float, float]] = []
    for lam in arrival_rates:
        scaled = with_arrival_rate(model, float(lam))
        if scaled.load <= 1:
            skipped.append((float(lam), scaled.load))
            continue
        sol = solve_fluid(scaled)
        kept.append(float(lam))
        rates.append(sol.rate)
        probs.append(sol.reneging_probs)
        gammas.append(sol.perturbations)
    k = model.num_classes
    return SweepTable(
        arrival_rates=np.asarray(kept),
        rates=np.asarray(rates),
        reneging_probs=np.asarray(probs).reshape(len(kept), k),
        perturbations=np.asarray(gammas).reshape(len(kept), k),
        skipped=tuple(skipped),
    )
