"""Cell and traffic parameterization shared by all solvers.

A cell serves K classes of users in processor sharing: class k gets
throughput ``c_k`` when alone and ``c_k / n`` when n flows are active.
Flow volumes are exponential with mean ``mean_flow_volume``, arrivals are
Poisson with rate ``arrival_rate`` split across classes by weight, and
every flow abandons at the expiration of an exponential patience timer
with rate ``impatience_rate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ImpatienceError,
    InstabilityError,
    NonPositiveParameter,
    OrderingError,
    WeightSumError,
)

WEIGHT_SUM_TOL = 1e-12

StateVector = tuple[int, ...]


@dataclass(frozen=True)
class ClassProfile:
    """One radio-condition class: peak throughput and traffic share.

    Classes are ordered from cell center (fastest) to cell edge (slowest).
    """

    throughput: float
    weight: float


@dataclass(frozen=True)
class CellModel:
    """Validated cell parameterization with derived per-class rates.

    Derived on construction:
      service_rates[k]        mu_k = c_k / E(volume), per second
      class_arrival_rates[k]  lambda_k = lambda * p_k, flows per second
      class_loads[k]          rho_k = lambda_k / mu_k
      load                    rho = sum_k rho_k

    Instances are immutable (arrays are write-locked) and safe to share
    across threads.
    """

    classes: tuple[ClassProfile, ...]
    mean_flow_volume: float
    arrival_rate: float
    impatience_rate: float
    service_rates: np.ndarray = field(repr=False, default=None)
    class_arrival_rates: np.ndarray = field(repr=False, default=None)
    class_loads: np.ndarray = field(repr=False, default=None)
    load: float = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def throughputs(self) -> np.ndarray:
        return np.asarray([c.throughput for c in self.classes])

    @property
    def weights(self) -> np.ndarray:
        return np.asarray([c.weight for c in self.classes])


def build_cell_model(
    classes: list[ClassProfile] | tuple[ClassProfile, ...],
    mean_flow_volume: float,
    arrival_rate: float,
    impatience_rate: float,
) -> CellModel:
    """Validate parameters and construct a :class:`CellModel`.

    Args:
        classes: non-empty list of profiles with strictly decreasing
            throughput (cell center first, cell edge last).
        mean_flow_volume: mean data volume per flow, same data unit as the
            throughputs times one second (only the ratio matters).
        arrival_rate: total flow arrival rate, per second. Zero is allowed
            (closed scenarios used by the tagged-customer analysis).
        impatience_rate: patience-timer rate, per second. Must be strictly
            below the slowest class service rate; zero models fully patient
            users.

    Raises:
        NonPositiveParameter: on non-positive throughputs, weights, or
            volume, or negative rates.
        OrderingError: throughputs not strictly decreasing.
        WeightSumError: weights do not sum to one.
        ImpatienceError: impatience rate at or above the slowest service
            rate.
    """
    if not classes:
        raise NonPositiveParameter("at least one class profile is required")
    classes = tuple(classes)
    for i, profile in enumerate(classes):
        if not profile.throughput > 0:
            raise NonPositiveParameter(f"class {i}: throughput must be > 0, got {profile.throughput}")
        if not 0 < profile.weight <= 1:
            raise NonPositiveParameter(f"class {i}: weight must be in (0, 1], got {profile.weight}")
    if not mean_flow_volume > 0:
        raise NonPositiveParameter(f"mean flow volume must be > 0, got {mean_flow_volume}")
    if arrival_rate < 0:
        raise NonPositiveParameter(f"arrival rate must be >= 0, got {arrival_rate}")
    if impatience_rate < 0:
        raise NonPositiveParameter(f"impatience rate must be >= 0, got {impatience_rate}")

    throughputs = [c.throughput for c in classes]
    if any(a <= b for a, b in zip(throughputs, throughputs[1:])):
        raise OrderingError(f"throughputs must be strictly decreasing, got {throughputs}")

    weight_sum = math.fsum(c.weight for c in classes)
    if abs(weight_sum - 1.0) > WEIGHT_SUM_TOL:
        raise WeightSumError(f"class weights must sum to 1, got {weight_sum!r}")

    mu = np.asarray([c.throughput / mean_flow_volume for c in classes])
    if impatience_rate >= mu[-1]:
        raise ImpatienceError(
            f"impatience rate {impatience_rate} must be below the slowest service rate {mu[-1]}"
        )

    lam = np.asarray([arrival_rate * c.weight for c in classes])
    loads = lam / mu
    for arr in (mu, lam, loads):
        arr.flags.writeable = False
    return CellModel(
        classes=classes,
        mean_flow_volume=mean_flow_volume,
        arrival_rate=arrival_rate,
        impatience_rate=impatience_rate,
        service_rates=mu,
        class_arrival_rates=lam,
        class_loads=loads,
        load=float(loads.sum()),
    )


def replace_class_arrival_rates(model: CellModel, rates) -> CellModel:
    """Rebuild the model with the given per-class arrival rates.

    The total rate becomes their sum and the weights their normalized
    shares; every other parameter is kept. Used for sensitivity analysis
    of the fluid fixed point.
    """
    rates = [float(r) for r in rates]
    if len(rates) != model.num_classes:
        raise NonPositiveParameter(f"expected {model.num_classes} rates, got {len(rates)}")
    total = math.fsum(rates)
    if total <= 0 or any(r <= 0 for r in rates):
        raise NonPositiveParameter("per-class arrival rates must all be positive")
    classes = tuple(
        ClassProfile(throughput=c.throughput, weight=r / total)
        for c, r in zip(model.classes, rates)
    )
    return build_cell_model(classes, model.mean_flow_volume, total, model.impatience_rate)


def with_arrival_rate(model: CellModel, arrival_rate: float) -> CellModel:
    """Rebuild the model with a new total arrival rate, weights unchanged."""
    return build_cell_model(model.classes, model.mean_flow_volume, arrival_rate, model.impatience_rate)


def with_impatience_rate(model: CellModel, impatience_rate: float) -> CellModel:
    """Rebuild the model with a new impatience rate, traffic unchanged."""
    return build_cell_model(model.classes, model.mean_flow_volume, model.arrival_rate, impatience_rate)


def product_form_probability(model: CellModel, state: StateVector) -> float:
    """Stationary probability of a state in the no-impatience baseline.

    For offered load rho < 1 the multiclass processor-sharing queue has the
    product-form stationary law

        P(n) = (1 - rho) * (|n|! / (n_1! ... n_K!)) * prod_k rho_k^{n_k},

    whose |n|-marginal is geometric with ratio rho. The (1 - rho) prefactor
    is the unique constant that makes the probabilities sum to one.

    Raises:
        InstabilityError: if rho >= 1 (no stationary law without impatience).
    """
    if model.load >= 1:
        raise InstabilityError(f"product form requires rho < 1, got rho = {model.load:.6g}")
    if len(state) != model.num_classes:
        raise NonPositiveParameter(f"state length {len(state)} != {model.num_classes} classes")
    if any(n < 0 for n in state):
        raise NonPositiveParameter(f"state components must be >= 0, got {state}")
    total = sum(state)
    log_weight = math.lgamma(total + 1)
    for n_k, rho_k in zip(state, model.class_loads):
        if n_k == 0:
            continue
        if rho_k == 0:
            return 0.0
        log_weight += n_k * math.log(rho_k) - math.lgamma(n_k + 1)
    return (1.0 - model.load) * math.exp(log_weight)
