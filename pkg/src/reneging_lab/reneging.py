"""Per-state and per-class reneging probabilities and QoE perturbation.

Tag one class-k customer arriving while the background occupancy is n.
By memorylessness, the probability that it eventually reneges, P_k(n),
satisfies a linear recurrence over the background state: conditioning on
the first event after the arrival,

    P_k(n) = mu_0 / D_k(n)
           + sum_l (lambda p_l / D_k(n)) * P_k(n + e_l)
           + sum_l ((n_l mu_l / (|n|+1) + n_l mu_0) / D_k(n)) * P_k(n - e_l)

where D_k(n) = lambda + sum_l (n_l + [l==k]) mu_l / (|n|+1) + (|n|+1) mu_0
is the total event rate with the tagged customer present. In matrix form
(I - M_k) P_k = u_k with M_k >= 0 and u_k(n) = mu_0 / D_k(n); equivalently
P_k = sum_r M_k^r u_k, the probability of reneging at the r-th step of the
tagged customer's jump chain.

On a truncated space the unknown values just outside the boundary are
replaced once by 0 and once by 1. Monotone Gauss-Seidel sweeps (by level,
ascending) started at x=0 and x=1 then converge from below and above to
the two substituted solutions, so at any stopping point the pair is a
certified bracket of the true infinite-space field.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ConvergenceError, GapTooLarge, OutOfSpaceError
from .model import CellModel, StateVector
from .statespace import TruncatedSpace

DEFAULT_FIELD_TOL = 1e-6
DEFAULT_ESCALATION_STEP = 5
DEFAULT_MAX_ESCALATIONS = 10
INNER_TOL = 1e-12


def tagged_event_denominators(model: CellModel, space: TruncatedSpace, k: int) -> np.ndarray:
    """Total event rate D_k(n) for each state, tagged class-k customer included."""
    counts = space.states.astype(np.float64)
    occupancy = space.levels.astype(np.float64) + 1.0  # background plus the tagged customer
    service = counts @ model.service_rates + model.service_rates[k]
    return model.arrival_rate + service / occupancy + occupancy * model.impatience_rate


def tagged_jump_system(model: CellModel, space: TruncatedSpace, k: int):
    """One-step matrix of the tagged customer's background chain.

    Returns ``(M, u, boundary)``: M holds the in-space jump probabilities
    of the background state between the tagged customer's arrival and its
    absorption (completion or reneging), u(n) is the probability that the
    next event is the tagged customer's own reneging, and boundary(n) is
    the probability mass of jumps leaving the truncated space (nonzero only
    on the top level). Row sums of M + boundary stay strictly below one,
    the tagged customer's own absorption chances making up the difference.
    """
    denom = tagged_event_denominators(model, space, k)
    u = model.impatience_rate / denom
    boundary = np.zeros(space.size)
    size = space.size
    n_max = space.n_max
    mu = model.service_rates
    mu0 = model.impatience_rate
    lam_k = model.class_arrival_rates
    lookup = {tuple(int(v) for v in s): i for i, s in enumerate(space.states)}
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for i in range(size):
        state = tuple(int(v) for v in space.states[i])
        level = int(space.levels[i])
        d = denom[i]
        for j, lam_j in enumerate(lam_k):
            if lam_j <= 0:
                continue
            if level == n_max:
                boundary[i] += lam_j / d
                continue
            up = state[:j] + (state[j] + 1,) + state[j + 1:]
            rows.append(i)
            cols.append(lookup[up])
            vals.append(lam_j / d)
        for j, n_j in enumerate(state):
            if n_j == 0:
                continue
            down = state[:j] + (n_j - 1,) + state[j + 1:]
            rows.append(i)
            cols.append(lookup[down])
            vals.append((n_j * mu[j] / (level + 1) + n_j * mu0) / d)
    m = sparse.coo_matrix((vals, (rows, cols)), shape=(size, size), dtype=np.float64).tocsr()
    return m, u, boundary


@dataclass(frozen=True)
class RenegingField:
    """Bracketed per-state reneging probabilities for one class.

    ``lower`` and ``upper`` sandwich the infinite-space P_k(n) on every
    state of ``space``; ``gap`` is the largest state-wise width achieved.
    """

    class_index: int
    lower: np.ndarray
    upper: np.ndarray
    gap: float
    space: TruncatedSpace
    solve_n_max: int

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def _level_blocks(m: sparse.csr_matrix, space: TruncatedSpace) -> list[sparse.csr_matrix]:
    return [m[space.level_slice(lev), :] for lev in range(space.n_max + 1)]


def bracket_solve(
    model: CellModel,
    space: TruncatedSpace,
    k: int,
    inner_tol: float = INNER_TOL,
    max_sweeps: int = 200_000,
):
    """Solve the bracketing pair on one grid, without escalation.

    Returns ``(lower, upper)`` over the whole grid. Both vectors come from
    level-ordered Gauss-Seidel sweeps: the lower one ascends from zero on
    the boundary-0 system, the upper one descends from one on the
    boundary-1 system. The sweeps stop once the certified fixed-point error
    (residual amplified by 1/(1 - max row mass)) is below ``inner_tol``; by
    monotonicity the pair brackets the truth at any stopping point.
    """
    if model.impatience_rate == 0:
        # Reneging requires the patience clock to fire; with rate zero the
        # field is exactly zero everywhere, a valid lower and upper bound.
        zero = np.zeros(space.size)
        return zero, zero.copy()
    m, u, boundary = tagged_jump_system(model, space, k)
    row_mass = np.asarray(m.sum(axis=1)).ravel() + boundary
    amplification = 1.0 / (1.0 - float(row_mass.max()))
    blocks = _level_blocks(m, space)
    slices = [space.level_slice(lev) for lev in range(space.n_max + 1)]

    def sweep_to_convergence(x: np.ndarray, b: np.ndarray) -> np.ndarray:
        for sweep in range(1, max_sweeps + 1):
            for sl, block in zip(slices, blocks):
                x[sl] = b[sl] + block @ x
            if sweep % 8 == 0 or sweep <= 2:
                residual = float(np.abs(b + m @ x - x).max())
                if residual * amplification <= inner_tol:
                    return x
        raise ConvergenceError(
            f"reneging-field sweeps for class {k} did not converge",
            residual=residual * amplification,
            iterations=max_sweeps,
        )

    lower = sweep_to_convergence(np.zeros(space.size), u)
    upper = sweep_to_convergence(np.ones(space.size), u + boundary)
    np.minimum(upper, 1.0, out=upper)
    np.maximum(lower, 0.0, out=lower)
    return lower, upper


def solve_reneging_field(
    model: CellModel,
    space: TruncatedSpace,
    k: int,
    tol: float = DEFAULT_FIELD_TOL,
    max_escalations: int = DEFAULT_MAX_ESCALATIONS,
    escalation_step: int = DEFAULT_ESCALATION_STEP,
    inner_tol: float = INNER_TOL,
) -> RenegingField:
    """Bracket P_k(n) on ``space`` to a state-wise gap of at most ``tol``.

    Right at a solve boundary the bracket is loose by construction (the
    unknown neighbors are replaced by 0 and 1), so the pair is solved on
    progressively enlarged grids and restricted to the caller's space until
    the widest gap over the caller's states is within tolerance. Level
    ordering makes the restriction a prefix slice.

    Raises:
        GapTooLarge: the gap still exceeds ``tol`` after ``max_escalations``
            enlargements; the truncation, not the solver, is the obstacle.
        ConvergenceError: the inner sweeps exhausted their budget.
    """
    if not 0 <= k < model.num_classes:
        raise OutOfSpaceError(f"class index {k} outside [0, {model.num_classes})")
    gap = np.inf
    lower = upper = None
    solve_n_max = space.n_max
    for escalation in range(1, max_escalations + 1):
        solve_n_max = space.n_max + escalation_step * escalation
        grid = TruncatedSpace(space.num_classes, solve_n_max)
        full_lower, full_upper = bracket_solve(model, grid, k, inner_tol=inner_tol)
        lower = full_lower[: space.size]
        upper = full_upper[: space.size]
        gap = float((upper - lower).max())
        if gap <= tol:
            break
    else:
        raise GapTooLarge(gap, tol, solve_n_max)
    return RenegingField(
        class_index=k,
        lower=lower,
        upper=upper,
        gap=gap,
        space=space,
        solve_n_max=solve_n_max,
    )


def neumann_reneging_field(
    model: CellModel,
    space: TruncatedSpace,
    k: int,
    tol: float = INNER_TOL,
    max_terms: int = 500_000,
) -> np.ndarray:
    """Sum the series sum_r M_k^r u_k on the given grid directly.

    Partial sums are computed by the recursion x <- u + M x, each term
    adding the probability of reneging exactly at one more step of the
    tagged customer's chain; they increase monotonically from zero and stay
    below one. Independent route to the boundary-0 solution of
    :func:`bracket_solve`, used to cross-check it.
    """
    if model.impatience_rate == 0:
        return np.zeros(space.size)
    m, u, _ = tagged_jump_system(model, space, k)
    row_mass = np.asarray(m.sum(axis=1)).ravel()
    amplification = 1.0 / (1.0 - float(row_mass.max()))
    x = u.copy()
    for _ in range(max_terms):
        nxt = u + m @ x
        delta = float(np.abs(nxt - x).max())
        x = nxt
        if delta * amplification <= tol:
            return x
    raise ConvergenceError(
        f"series summation for class {k} did not converge",
        residual=delta * amplification,
        iterations=max_terms,
    )


@dataclass(frozen=True)
class RenegingEstimate:
    """Stationary reneging probability of one class with its truncation bracket."""

    class_index: int
    value: float
    lower: float
    upper: float


def reneging_probability(
    model: CellModel, pi: np.ndarray, field: RenegingField
) -> RenegingEstimate:
    """Long-run probability that a class-k arrival reneges.

    Poisson arrivals see time averages, so the per-arrival probability is
    the stationary average of the per-state field: sum_n pi(n) P_k(n),
    reported at the bracket midpoint together with the interval
    [pi . lower, pi . upper].
    """
    lo = float(pi @ field.lower)
    hi = float(pi @ field.upper)
    return RenegingEstimate(field.class_index, 0.5 * (lo + hi), lo, hi)


def first_event_reneging_average(
    model: CellModel, space: TruncatedSpace, pi: np.ndarray, k: int
) -> float:
    """Stationary chance that a tagged arrival's first event is its own reneging.

    This is the pi-average of u_k(n) = mu_0 / D_k(n), the one-step term of
    the series, not the full absorption probability. Reported by the
    validation command alongside the field average so rate conservation can
    arbitrate between the two.
    """
    denom = tagged_event_denominators(model, space, k)
    return float(pi @ (model.impatience_rate / denom))


@dataclass(frozen=True)
class PerturbationEstimate:
    """QoE perturbation value with its bracket-propagated interval."""

    value: float
    lower: float
    upper: float
    excluded_mass: float = 0.0


def perturbation_state(
    fields: Sequence[RenegingField], model: CellModel, state: StateVector, k: int
) -> PerturbationEstimate:
    """Extra reneging probability an additional class-k flow inflicts in state n.

    Weighted over the arriving-class mix: sum_j p_j (P_j(n + e_k) - P_j(n)),
    evaluated at bracket midpoints, with an interval version from the
    bracket ends.

    Raises:
        OutOfSpaceError: if n + e_k leaves the truncated space.
    """
    space = fields[0].space
    state = tuple(int(v) for v in state)
    if sum(state) + 1 > space.n_max:
        raise OutOfSpaceError(
            f"perturbation at level {sum(state)} needs level {sum(state) + 1} <= {space.n_max}"
        )
    i = space.rank(state)
    up = state[:k] + (state[k] + 1,) + state[k + 1:]
    j_up = space.rank(up)
    value = lo = hi = 0.0
    for weight, field in zip(model.weights, fields):
        value += weight * (field.midpoint[j_up] - field.midpoint[i])
        lo += weight * (field.lower[j_up] - field.upper[i])
        hi += weight * (field.upper[j_up] - field.lower[i])
    return PerturbationEstimate(value, lo, hi)


def perturbation_mean(
    fields: Sequence[RenegingField], pi: np.ndarray, model: CellModel, k: int
) -> PerturbationEstimate:
    """Stationary average of the state perturbation for class k.

    Top-level states have no in-space upward neighbor and are excluded;
    their probability mass is reported as ``excluded_mass`` so callers can
    bound the omission.
    """
    space = fields[0].space
    cut = int(space.level_offsets[space.n_max])
    up = space.up_neighbor_indices(k)
    value = lo = hi = 0.0
    weights_pi = pi[:cut]
    for weight, field in zip(model.weights, fields):
        mid = field.midpoint
        value += weight * float(weights_pi @ (mid[up] - mid[:cut]))
        lo += weight * float(weights_pi @ (field.lower[up] - field.upper[:cut]))
        hi += weight * float(weights_pi @ (field.upper[up] - field.lower[:cut]))
    excluded = float(pi[cut:].sum())
    return PerturbationEstimate(value, lo, hi, excluded)


def dump_fields_csv(fields: Sequence[RenegingField], path) -> None:
    """Write bracketed fields as CSV: n_1..n_K then lower/upper per class."""
    space = fields[0].space
    header = [f"n_{j + 1}" for j in range(space.num_classes)]
    for field in fields:
        header += [f"P_{field.class_index + 1}_lower", f"P_{field.class_index + 1}_upper"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(space.size):
            row = [int(v) for v in space.states[i]]
            for field in fields:
                row += [f"{field.lower[i]:.9g}", f"{field.upper[i]:.9g}"]
            writer.writerow(row)
