"""Two-part tariff driven by the QoE perturbation metric.

A subscription combines a flat access component (billed per period, covers
attachment, authentication, roaming) with an elastic per-Mbyte component
proportional to the perturbation a flow in the user's radio condition
inflicts on everyone else. Because the fluid perturbation does not depend
on the impatience rate, the operator only needs the radio-condition mix to
set these prices. A tariff snapshots the fluid solution it was built from;
re-estimating traffic and rebuilding the tariff is the refresh policy.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NegativeParameter, UnknownClass
from .fluid import FluidSolution
from .model import CellModel, StateVector
from .reneging import RenegingField, perturbation_state


@dataclass(frozen=True)
class Tariff:
    """Immutable price sheet: flat component plus per-class per-Mbyte prices."""

    flat_rate: float
    elastic_coefficient: float
    prices_per_mbyte: tuple[float, ...]
    fluid: FluidSolution


@dataclass(frozen=True)
class RightsBudget:
    """Prepaid congestion rights, drained in proportion to perturbation."""

    remaining: float
    decrement_coefficient: float


def build_tariff(
    model: CellModel, fluid: FluidSolution, flat_rate: float, elastic_coefficient: float
) -> Tariff:
    """Per-class elastic prices proportional to the fluid perturbation.

    price_k = elastic_coefficient * perturbation_k (currency per Mbyte);
    worse radio conditions perturb more and therefore pay more per Mbyte.

    Raises:
        NegativeParameter: on negative flat rate or coefficient.
    """
    if flat_rate < 0:
        raise NegativeParameter(f"flat rate must be >= 0, got {flat_rate}")
    if elastic_coefficient < 0:
        raise NegativeParameter(f"elastic coefficient must be >= 0, got {elastic_coefficient}")
    prices = tuple(float(elastic_coefficient * g) for g in fluid.perturbations)
    return Tariff(flat_rate, elastic_coefficient, prices, fluid)


def bill_session(tariff: Tariff, k: int, volume_mbyte: float) -> float:
    """Elastic charge for one session: price_k times the volume.

    The flat component is billed per period, not per session, and is not
    part of this amount.

    Raises:
        UnknownClass: bad class index.
        NegativeParameter: negative volume.
    """
    if not 0 <= k < len(tariff.prices_per_mbyte):
        raise UnknownClass(f"class index {k} outside [0, {len(tariff.prices_per_mbyte)})")
    if volume_mbyte < 0:
        raise NegativeParameter(f"volume must be >= 0, got {volume_mbyte}")
    return tariff.prices_per_mbyte[k] * volume_mbyte


def consume_rights(
    budget: RightsBudget, fluid: FluidSolution, k: int, volume_mbyte: float
) -> tuple[RightsBudget, bool]:
    """Drain rights for a class-k session and flag throttling on exhaustion.

    The new budget is max(0, remaining - beta * perturbation_k * volume);
    the flag is True exactly when the clamp hit zero.
    """
    if not 0 <= k < len(fluid.perturbations):
        raise UnknownClass(f"class index {k} outside [0, {len(fluid.perturbations)})")
    if volume_mbyte < 0:
        raise NegativeParameter(f"volume must be >= 0, got {volume_mbyte}")
    spent = budget.decrement_coefficient * float(fluid.perturbations[k]) * volume_mbyte
    remaining = max(0.0, budget.remaining - spent)
    return RightsBudget(remaining, budget.decrement_coefficient), remaining == 0.0


def price_table_notification(
    model: CellModel,
    tariff: Tariff,
    mode: str = "fluid",
    state: StateVector | None = None,
    fields: tuple[RenegingField, ...] | None = None,
) -> list[dict]:
    """Per-class price/perturbation table to push to clients.

    In ``fluid`` mode the table carries the load-independent perturbations
    snapshotted in the tariff and does not depend on any current state. In
    ``state`` mode it carries the exact state-dependent perturbations at
    occupancy ``state`` (solved fields required), priced with the same
    elastic coefficient.

    Rows are JSON-ready: class_index (1-based), throughput, gamma,
    price_per_mbyte.

    Raises:
        OutOfSpaceError: state mode too close to the truncation boundary.
    """
    if mode == "fluid":
        gammas = list(tariff.fluid.perturbations)
    elif mode == "state":
        if state is None or fields is None:
            raise ValueError("state mode needs a state and solved reneging fields")
        gammas = [
            perturbation_state(fields, model, state, k).value for k in range(model.num_classes)
        ]
    else:
        raise ValueError(f"unknown pricing mode {mode!r}")
    table = []
    for k, gamma in enumerate(gammas):
        table.append(
            {
                "class_index": k + 1,
                "throughput": float(model.classes[k].throughput),
                "gamma": float(gamma),
                "price_per_mbyte": float(tariff.elastic_coefficient * gamma),
            }
        )
    return table
