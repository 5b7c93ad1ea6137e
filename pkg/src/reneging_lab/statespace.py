"""Enumeration, ranking, and truncation of the multiclass occupancy space.

States are K-tuples of non-negative occupancy counts. The space is
organized by levels: level n holds the C(n+K-1, n) states whose counts sum
to n. Within a level states are ordered reverse-lexicographically (first
component descending, then the second, and so on), so class-1-heavy states
come first. The global index of a state is its level offset plus its
within-level rank; this order is the contract by which probability and
reneging-field vectors are exchanged between modules.
"""

from __future__ import annotations

from math import comb
from typing import Iterator

import numpy as np
from scipy import stats

from .errors import InstabilityError, NonPositiveParameter, OutOfSpaceError
from .model import CellModel, StateVector

# Memory-safety cap on the total number of enumerated states.
MAX_STATES = 50_000_000

TRUNCATION_FLOOR = 10


def level_size(n: int, num_classes: int) -> int:
    """Number of states with total occupancy n: C(n + K - 1, n), exact."""
    if n < 0 or num_classes < 1:
        raise NonPositiveParameter(f"need n >= 0 and K >= 1, got n={n}, K={num_classes}")
    return comb(n + num_classes - 1, n)


def space_size(n_max: int, num_classes: int) -> int:
    """Total states across levels 0..n_max: C(n_max + K, K), exact."""
    if n_max < 0 or num_classes < 1:
        raise NonPositiveParameter(f"need n_max >= 0 and K >= 1, got {n_max}, {num_classes}")
    return comb(n_max + num_classes, num_classes)


def enumerate_level(n: int, num_classes: int) -> list[StateVector]:
    """All states of level n in reverse-lexicographic order, no duplicates."""
    if num_classes < 1 or n < 0:
        raise NonPositiveParameter(f"need n >= 0 and K >= 1, got n={n}, K={num_classes}")
    return list(_compositions(n, num_classes))


def _compositions(total: int, k: int) -> Iterator[StateVector]:
    if k == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, k - 1):
            yield (first,) + rest


def _rank_in_level(state: StateVector) -> int:
    # States with a larger leading component precede; the count of those is
    # a hockey-stick sum that collapses to a single binomial coefficient.
    rank = 0
    remaining = sum(state)
    k_left = len(state)
    for value in state:
        if k_left == 1:
            break
        if remaining - value - 1 >= 0:
            rank += comb(remaining - value - 1 + k_left - 1, k_left - 1)
        remaining -= value
        k_left -= 1
    return rank


class TruncatedSpace:
    """All states with total occupancy up to ``n_max``, globally indexed.

    Enumeration is level-by-level, reverse-lexicographic within a level, so
    a space with a smaller ``n_max`` is a prefix of any larger one with the
    same K.
    """

    def __init__(self, num_classes: int, n_max: int):
        if num_classes < 1 or n_max < 0:
            raise NonPositiveParameter(f"need K >= 1 and n_max >= 0, got {num_classes}, {n_max}")
        total = space_size(n_max, num_classes)
        if total > MAX_STATES:
            raise OverflowError(
                f"truncated space would hold {total} states (cap {MAX_STATES}); "
                "lower n_max or the tail mass bound"
            )
        self.num_classes = num_classes
        self.n_max = n_max
        offsets = np.zeros(n_max + 2, dtype=np.int64)
        for lev in range(n_max + 1):
            offsets[lev + 1] = offsets[lev] + level_size(lev, num_classes)
        self.level_offsets = offsets
        states = np.empty((total, num_classes), dtype=np.int64)
        row = 0
        for lev in range(n_max + 1):
            for s in _compositions(lev, num_classes):
                states[row] = s
                row += 1
        states.flags.writeable = False
        self.states = states
        self.levels = states.sum(axis=1)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def __len__(self) -> int:
        return self.size

    def rank(self, state: StateVector) -> int:
        """Global index of a state, computed combinatorially.

        Raises:
            OutOfSpaceError: if the state's level exceeds n_max.
        """
        if len(state) != self.num_classes:
            raise OutOfSpaceError(f"state has {len(state)} components, space has {self.num_classes}")
        if any(v < 0 for v in state):
            raise OutOfSpaceError(f"negative occupancy in state {state}")
        lev = sum(state)
        if lev > self.n_max:
            raise OutOfSpaceError(f"state level {lev} exceeds truncation level {self.n_max}")
        return int(self.level_offsets[lev]) + _rank_in_level(tuple(state))

    def unrank(self, index: int) -> StateVector:
        """State at a global index (inverse of :meth:`rank`)."""
        if not 0 <= index < self.size:
            raise OutOfSpaceError(f"index {index} outside [0, {self.size})")
        return tuple(int(v) for v in self.states[index])

    def level_slice(self, level: int) -> slice:
        """Index range of the states at one level."""
        if not 0 <= level <= self.n_max:
            raise OutOfSpaceError(f"level {level} outside [0, {self.n_max}]")
        return slice(int(self.level_offsets[level]), int(self.level_offsets[level + 1]))

    def up_neighbor_indices(self, k: int) -> np.ndarray:
        """Index of state + e_k for every state below the top level.

        Entry i is the global index of ``states[i] + e_k``; defined only for
        the first ``level_offsets[n_max]`` states (the top level has no
        in-space upward neighbor). Cached per class.
        """
        if not 0 <= k < self.num_classes:
            raise OutOfSpaceError(f"class index {k} outside [0, {self.num_classes})")
        cache = getattr(self, "_up_maps", None)
        if cache is None:
            cache = self._up_maps = {}
        if k not in cache:
            cut = int(self.level_offsets[self.n_max])
            out = np.empty(cut, dtype=np.int64)
            for i in range(cut):
                state = tuple(int(v) for v in self.states[i])
                up = state[:k] + (state[k] + 1,) + state[k + 1:]
                out[i] = self.rank(up)
            out.flags.writeable = False
            cache[k] = out
        return cache[k]


def choose_truncation(model: CellModel, tail_mass_bound: float) -> int:
    """Smallest truncation level whose neglected tail mass is below the bound.

    The total population is stochastically dominated by an M/M/infinity queue
    with arrival rate lambda and per-customer rate mu_0 (each customer leaves
    at least at its own impatience rate), whose stationary law is
    Poisson(lambda/mu_0). The returned level is the smallest N with
    P(Poisson > N) < bound, floored at 10 to avoid degenerate spaces.

    Without impatience the domination argument is empty; for rho < 1 the
    geometric tail of the product-form population law is used instead, and
    for rho >= 1 no finite truncation is justified.
    """
    if not 0 < tail_mass_bound < 1:
        raise NonPositiveParameter(f"tail mass bound must be in (0, 1), got {tail_mass_bound}")
    if model.impatience_rate > 0:
        mean = model.arrival_rate / model.impatience_rate
        guess = stats.poisson.isf(tail_mass_bound, mean) if mean > 0 else 0.0
        n = int(guess) if np.isfinite(guess) else 0
        while n > 0 and stats.poisson.sf(n - 1, mean) < tail_mass_bound:
            n -= 1
        while stats.poisson.sf(n, mean) >= tail_mass_bound:
            n += 1
    else:
        if model.load >= 1:
            raise InstabilityError(
                "cannot pick a truncation level: no impatience and rho >= 1"
            )
        rho = model.load
        n = 0
        tail = rho  # P(|n| > N) = rho^(N+1)
        while tail >= tail_mass_bound:
            n += 1
            tail *= rho
    return max(n, TRUNCATION_FLOOR)
