"""Generator assembly and stationary analysis of the impatience chain.

With exponential volumes the per-class occupancy process is a Markov jump
process on the truncated space. From state n the nonzero rates are

    n -> n + e_k   at  lambda * p_k                       (arrival)
    n -> n - e_k   at  n_k * mu_k / |n| + n_k * mu_0      (completion or
                                                           abandonment)

Processor sharing makes the aggregate completion rate of class k equal to
its fair share n_k/|n| of the class capacity; every customer additionally
carries its own impatience clock. Impatience keeps the chain positive
recurrent at any offered load.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ConvergenceError
from .model import CellModel, StateVector
from .statespace import TruncatedSpace

DEFAULT_STATIONARY_TOL = 1e-10

# Uniformization constant safety factor over the largest exit rate.
UNIFORMIZATION_MARGIN = 1.01


def transition_rates(model: CellModel, state: StateVector) -> list[tuple[StateVector, float]]:
    """Nonzero jump rates out of a state (no self-loop entry).

    Returns (target state, rate) pairs: one arrival per class with positive
    weight, and one departure per occupied class combining the processor-
    sharing completion share with the per-customer impatience rate.
    """
    state = tuple(int(v) for v in state)
    total = sum(state)
    mu = model.service_rates
    mu0 = model.impatience_rate
    out: list[tuple[StateVector, float]] = []
    for k, lam_k in enumerate(model.class_arrival_rates):
        if lam_k > 0:
            up = state[:k] + (state[k] + 1,) + state[k + 1:]
            out.append((up, float(lam_k)))
    for k, n_k in enumerate(state):
        if n_k > 0:
            down = state[:k] + (n_k - 1,) + state[k + 1:]
            out.append((down, n_k * mu[k] / total + n_k * mu0))
    return out


def build_generator(model: CellModel, space: TruncatedSpace) -> sparse.csr_matrix:
    """Sparse generator of the chain restricted to the truncated space.

    Arrivals out of the top level are dropped and the diagonal compensates,
    so every row sums to zero (arrivals are rejected at the truncation
    boundary rather than absorbed; the neglected mass is controlled by the
    M/M/infinity tail bound used to pick the level).
    """
    size = space.size
    n_max = space.n_max
    lookup = {tuple(int(v) for v in s): i for i, s in enumerate(space.states)}
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for i in range(size):
        state = tuple(int(v) for v in space.states[i])
        exit_rate = 0.0
        for target, rate in transition_rates(model, state):
            if sum(target) > n_max:
                continue
            rows.append(i)
            cols.append(lookup[target])
            vals.append(rate)
            exit_rate += rate
        if exit_rate > 0:
            rows.append(i)
            cols.append(i)
            vals.append(-exit_rate)
    gen = sparse.coo_matrix((vals, (rows, cols)), shape=(size, size), dtype=np.float64)
    return gen.tocsr()


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary probability vector with the solver's achieved residual."""

    probabilities: np.ndarray
    residual: float
    iterations: int

    def __post_init__(self):
        self.probabilities.flags.writeable = False


def stationary_distribution(
    generator: sparse.csr_matrix,
    tol: float = DEFAULT_STATIONARY_TOL,
    max_iters: int = 2_000_000,
) -> StationaryDistribution:
    """Solve pi Q = 0, sum(pi) = 1 by uniformized power iteration.

    The chain is uniformized with constant Lambda = 1.01 * max exit rate;
    iterating pi <- pi + (pi Q) / Lambda is a power sweep of the embedded
    stochastic matrix and yields the residual ||pi Q||_inf for free each
    step. Single-threaded and deterministic.

    Raises:
        ConvergenceError: iteration budget exhausted before the residual
            dropped below ``tol``.
    """
    size = generator.shape[0]
    exit_rates = -generator.diagonal()
    uniform_rate = float(exit_rates.max()) * UNIFORMIZATION_MARGIN
    if uniform_rate <= 0:
        # No transitions at all: any probability vector is stationary.
        pi = np.full(size, 1.0 / size)
        return StationaryDistribution(pi, 0.0, 0)
    pi = np.full(size, 1.0 / size)
    qt = generator.T.tocsr()  # pi Q computed as Q^T @ pi
    residual = np.inf
    for iteration in range(1, max_iters + 1):
        flow = qt @ pi
        residual = float(np.abs(flow).max())
        if residual <= tol:
            break
        pi += flow / uniform_rate
        np.maximum(pi, 0.0, out=pi)
        pi /= pi.sum()
    else:
        raise ConvergenceError(
            "stationary solve did not converge", residual=residual, iterations=max_iters
        )
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    return StationaryDistribution(pi, residual, iteration)


def mean_population(dist: StationaryDistribution, space: TruncatedSpace) -> np.ndarray:
    """Per-class stationary mean occupancy E[n_k]."""
    return space.states.T.astype(np.float64) @ dist.probabilities


def mean_total_population(dist: StationaryDistribution, space: TruncatedSpace) -> float:
    """Stationary mean of the total population E[|n|]."""
    return float(space.levels @ dist.probabilities)


def departure_rates(model: CellModel, dist: StationaryDistribution, space: TruncatedSpace):
    """Stationary per-class throughput-completion and reneging rates.

    Completion rate of class k is E[n_k mu_k / |n|]; reneging rate is
    mu_0 E[n_k]. Used by the rate-conservation cross-checks.
    """
    pi = dist.probabilities
    levels = space.levels.astype(np.float64)
    counts = space.states.astype(np.float64)
    safe_levels = np.where(levels > 0, levels, 1.0)
    shares = counts / safe_levels[:, None]
    shares[levels == 0] = 0.0
    completion = (pi[:, None] * shares * model.service_rates[None, :]).sum(axis=0)
    reneging = model.impatience_rate * (pi[:, None] * counts).sum(axis=0)
    return completion, reneging


def dump_stationary_csv(space: TruncatedSpace, dist: StationaryDistribution, path) -> None:
    """Write the stationary law as CSV: one row per state, columns n_1..n_K, probability."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"n_{k + 1}" for k in range(space.num_classes)] + ["probability"])
        for state, p in zip(space.states, dist.probabilities):
            writer.writerow([*(int(v) for v in state), f"{p:.9g}"])
