"""Seeded discrete-event simulation of the impatience model.

The model has exponential clocks only, so the jump process is simulated
through its embedded chain: in occupancy n the next event arrives after an
Exp(total rate) holding time and its type is chosen proportionally to the
individual rates (arrivals per class, processor-sharing completions per
class, one impatience clock per customer). This is an implementation of
the system description itself, independent of the matrix solvers it is
used to cross-check.

Reproducibility: every replication r draws from its own PCG64 stream
seeded with SeedSequence((seed, r)), so results are bit-identical for a
given (seed, config) regardless of how replications are scheduled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError, NonPositiveParameter, RenegingLabError
from .model import CellModel, StateVector

_MAX_EPISODE_STEPS = 50_000_000


class _UniformStream:
    """Buffered uniforms from one PCG64 stream, consumed one at a time."""

    __slots__ = ("_rng", "_block", "_buf", "_pos")

    def __init__(self, seed_material, block: int = 8192):
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed_material)))
        self._block = block
        self._buf = self._rng.random(block).tolist()
        self._pos = 0

    def next(self) -> float:
        pos = self._pos
        if pos == self._block:
            self._buf = self._rng.random(self._block).tolist()
            pos = 0
        self._pos = pos + 1
        return self._buf[pos]


@dataclass
class SimConfig:
    """Simulation settings.

    ``warmup`` defaults to ten times a fluid relaxation-time guess,
    max(1/mu_0, equilibrium population / lambda); pass an explicit value to
    override. ``initial_state`` seeds the occupancy (empty by default).
    The tagged fields preset :func:`tagged_customer`.
    """

    duration: float
    warmup: float | None = None
    seed: int = 0
    replications: int = 1
    initial_state: tuple[int, ...] | None = None
    tagged_class: int | None = None
    tagged_state: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.duration <= 0:
            raise NonPositiveParameter(f"duration must be > 0, got {self.duration}")
        if self.warmup is not None and self.warmup < 0:
            raise NonPositiveParameter(f"warmup must be >= 0, got {self.warmup}")
        if self.replications < 1:
            raise NonPositiveParameter(f"replications must be >= 1, got {self.replications}")


def default_warmup(model: CellModel) -> float:
    """Ten relaxation times of the fluid dynamics, a safe settle-in period."""
    mu0 = model.impatience_rate
    lam = model.arrival_rate
    if mu0 > 0:
        if model.load > 1:
            from .fluid import solve_fixed_point

            population = solve_fixed_point(model) / mu0
        else:
            population = lam / mu0  # M/M/inf bound on the equilibrium size
        relax = max(1.0 / mu0, population / lam if lam > 0 else 1.0 / mu0)
    else:
        if model.load >= 1:
            raise InstabilityError("no impatience and rho >= 1: the system has no steady state")
        slowest = float(model.service_rates[-1])
        relax = 1.0 / (slowest * (1.0 - model.load))
    return 10.0 * relax


@dataclass
class SimEstimates:
    """Point estimates and raw counts from one simulation run.

    The count identity offered = completions + renegings + in_system_end
    holds exactly per class, where offered covers the whole run (initial
    occupants plus every arrival). Probability estimates use only the
    measurement window; their standard errors are within-run binomial
    approximations, use :func:`replicate` for honest errors.
    """

    sim_time: float
    warmup: float
    events: int
    reneging_prob: np.ndarray
    reneging_prob_se: np.ndarray
    mean_population: np.ndarray
    mean_total_population: float
    total_population_pmf: np.ndarray
    arrival_seen_pmf: np.ndarray
    window_offered: np.ndarray
    window_renegings: np.ndarray
    offered: np.ndarray
    completions: np.ndarray
    renegings: np.ndarray
    in_system_end: np.ndarray

    def to_dict(self) -> dict:
        return {
            "sim_time": self.sim_time,
            "warmup": self.warmup,
            "events": self.events,
            "reneging_prob": self.reneging_prob.tolist(),
            "reneging_prob_se": self.reneging_prob_se.tolist(),
            "mean_population": self.mean_population.tolist(),
            "mean_total_population": self.mean_total_population,
            "total_population_pmf": self.total_population_pmf.tolist(),
            "arrival_seen_pmf": self.arrival_seen_pmf.tolist(),
            "counts": {
                "window_offered": self.window_offered.tolist(),
                "window_renegings": self.window_renegings.tolist(),
                "offered": self.offered.tolist(),
                "completions": self.completions.tolist(),
                "renegings": self.renegings.tolist(),
                "in_system_end": self.in_system_end.tolist(),
            },
        }


# Stream namespaces: (seed, _STEADY_NS, replication) and (seed, _TAGGED_NS, 0).
_STEADY_NS = 0
_TAGGED_NS = 1


def simulate(model: CellModel, config: SimConfig) -> SimEstimates:
    """Run one replication (stream index 0) and estimate steady-state metrics."""
    return _run_once(model, config, _UniformStream((config.seed, _STEADY_NS, 0)))


def _run_once(model: CellModel, config: SimConfig, uni: _UniformStream) -> SimEstimates:
    num = model.num_classes
    lam = float(model.arrival_rate)
    lam_k = model.class_arrival_rates.tolist()
    mu = model.service_rates.tolist()
    mu0 = float(model.impatience_rate)
    warmup = config.warmup if config.warmup is not None else default_warmup(model)
    horizon = warmup + config.duration

    n = [0] * num
    if config.initial_state is not None:
        if len(config.initial_state) != num or any(v < 0 for v in config.initial_state):
            raise NonPositiveParameter(f"bad initial state {config.initial_state}")
        n = [int(v) for v in config.initial_state]

    offered = np.zeros(num, dtype=np.int64)
    offered += np.asarray(n, dtype=np.int64)
    completions = np.zeros(num, dtype=np.int64)
    renegings = np.zeros(num, dtype=np.int64)
    window_offered = np.zeros(num, dtype=np.int64)
    window_renegings = np.zeros(num, dtype=np.int64)
    time_in_class = [0.0] * num
    time_by_level: dict[int, float] = {}
    seen_by_level: dict[int, int] = {}
    events = 0
    t = 0.0
    crossed = warmup == 0.0
    if crossed:
        window_offered += np.asarray(n, dtype=np.int64)

    while t < horizon:
        ntot = sum(n)
        if ntot > 0:
            comp_rates = [n[j] * mu[j] / ntot for j in range(num)]
            total = lam + math.fsum(comp_rates) + ntot * mu0
        else:
            comp_rates = [0.0] * num
            total = lam
        if total <= 0:
            t_next = horizon  # frozen system, run out the clock
        else:
            t_next = t + -math.log(1.0 - uni.next()) / total

        if not crossed and t_next > warmup:
            crossed = True
            window_offered += np.asarray(n, dtype=np.int64)
        overlap = min(t_next, horizon) - max(t, warmup)
        if overlap > 0:
            for j in range(num):
                time_in_class[j] += n[j] * overlap
            time_by_level[ntot] = time_by_level.get(ntot, 0.0) + overlap
        if t_next >= horizon:
            break
        t = t_next
        events += 1
        in_window = t >= warmup

        u = uni.next() * total
        if u < lam:
            j = 0
            while j < num - 1 and u >= lam_k[j]:
                u -= lam_k[j]
                j += 1
            if in_window:
                window_offered[j] += 1
                seen_by_level[ntot] = seen_by_level.get(ntot, 0) + 1
            offered[j] += 1
            n[j] += 1
            continue
        u -= lam
        departed = -1
        for j in range(num):
            if u < comp_rates[j]:
                departed = j
                completions[j] += 1
                break
            u -= comp_rates[j]
        if departed < 0:
            # impatience: every customer carries the same clock rate
            pick = uni.next() * ntot
            j = 0
            while j < num - 1 and pick >= n[j]:
                pick -= n[j]
                j += 1
            departed = j
            renegings[j] += 1
            if in_window:
                window_renegings[j] += 1
        n[departed] -= 1

    duration = config.duration
    mean_pop = np.asarray(time_in_class) / duration
    max_level = max(time_by_level) if time_by_level else 0
    pmf = np.zeros(max_level + 1)
    for lev, w in time_by_level.items():
        pmf[lev] = w / duration
    max_seen = max(seen_by_level) if seen_by_level else 0
    seen_total = sum(seen_by_level.values())
    seen = np.zeros(max_seen + 1)
    for lev, c in seen_by_level.items():
        seen[lev] = c / seen_total if seen_total else 0.0

    with np.errstate(divide="ignore", invalid="ignore"):
        prob = np.where(window_offered > 0, window_renegings / window_offered, 0.0)
        se = np.where(
            window_offered > 0,
            np.sqrt(np.maximum(prob * (1.0 - prob), 0.0) / np.maximum(window_offered, 1)),
            0.0,
        )
    return SimEstimates(
        sim_time=duration,
        warmup=warmup,
        events=events,
        reneging_prob=prob,
        reneging_prob_se=se,
        mean_population=mean_pop,
        mean_total_population=float(mean_pop.sum()),
        total_population_pmf=pmf,
        arrival_seen_pmf=seen,
        window_offered=window_offered,
        window_renegings=window_renegings,
        offered=offered,
        completions=completions,
        renegings=renegings,
        in_system_end=np.asarray(n, dtype=np.int64),
    )


@dataclass
class TaggedEstimate:
    """Monte-Carlo estimate of one tagged arrival's reneging probability."""

    class_index: int
    initial_state: tuple[int, ...]
    value: float
    std_error: float
    replications: int
    renegings: int

    def to_dict(self) -> dict:
        return {
            "class_index": self.class_index + 1,
            "initial_state": list(self.initial_state),
            "value": self.value,
            "std_error": self.std_error,
            "replications": self.replications,
            "renegings": self.renegings,
        }


def tagged_customer(
    model: CellModel,
    config: SimConfig,
    k: int | None = None,
    initial_state: StateVector | None = None,
) -> TaggedEstimate:
    """Estimate P_k(n): inject one class-k customer into state n, track its fate.

    Each replication injects a fresh tagged customer into a fresh copy of
    state n and follows the system until the tagged customer completes or
    reneges. Only jump-chain probabilities matter for the absorbed
    fraction, so holding times are not sampled. Departing customers are
    drawn uniformly within their class, which is what ties the tagged
    customer's fate to the processor-sharing dynamics without reusing any
    of the matrix solver's structure.
    """
    if k is None:
        k = config.tagged_class
    if initial_state is None:
        initial_state = config.tagged_state
    if k is None or initial_state is None:
        raise NonPositiveParameter("tagged mode needs a class index and an initial state")
    if not 0 <= k < model.num_classes:
        raise NonPositiveParameter(f"tagged class {k} outside [0, {model.num_classes})")
    initial = tuple(int(v) for v in initial_state)
    if len(initial) != model.num_classes or any(v < 0 for v in initial):
        raise NonPositiveParameter(f"bad tagged initial state {initial_state}")

    num = model.num_classes
    lam = float(model.arrival_rate)
    lam_k = model.class_arrival_rates.tolist()
    mu = model.service_rates.tolist()
    mu0 = float(model.impatience_rate)
    reps = config.replications
    uni = _UniformStream((config.seed, _TAGGED_NS, 0))

    reneged = 0
    for _ in range(reps):
        n = list(initial)
        steps = 0
        while True:
            steps += 1
            if steps > _MAX_EPISODE_STEPS:
                raise RenegingLabError("tagged episode exceeded the step cap")
            ntot = sum(n) + 1  # background plus the tagged customer
            comp_rates = [(n[j] + (1 if j == k else 0)) * mu[j] / ntot for j in range(num)]
            total = lam + math.fsum(comp_rates) + ntot * mu0
            u = uni.next() * total
            if u < lam:
                j = 0
                while j < num - 1 and u >= lam_k[j]:
                    u -= lam_k[j]
                    j += 1
                n[j] += 1
                continue
            u -= lam
            chosen = -1
            for j in range(num):
                if u < comp_rates[j]:
                    chosen = j
                    break
                u -= comp_rates[j]
            if chosen >= 0:
                # completion of class `chosen`; the tagged customer is one of
                # the n_chosen+1 members when chosen == k
                if chosen == k and uni.next() * (n[k] + 1) < 1.0:
                    outcome = 0
                    break
                n[chosen] -= 1
                continue
            # impatience clock fired for one of the ntot customers
            if uni.next() * ntot < 1.0:
                outcome = 1
                break
            pick = uni.next() * (ntot - 1)
            j = 0
            while j < num - 1 and pick >= n[j]:
                pick -= n[j]
                j += 1
            n[j] -= 1
        reneged += outcome

    value = reneged / reps
    se = math.sqrt(max(value * (1.0 - value), 0.0) / reps)
    return TaggedEstimate(k, initial, value, se, reps, reneged)


@dataclass
class ReplicatedEstimates:
    """Across-replication aggregation: means, standard errors, 95% CIs."""

    replications: int
    reneging_prob: np.ndarray
    reneging_prob_se: np.ndarray
    mean_population: np.ndarray
    mean_population_se: np.ndarray
    mean_total_population: float
    mean_total_population_se: float
    per_replication: tuple[SimEstimates, ...] = field(repr=False, default=())

    @property
    def reneging_prob_ci(self) -> np.ndarray:
        half = 1.96 * self.reneging_prob_se
        return np.stack([self.reneging_prob - half, self.reneging_prob + half], axis=1)

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "reneging_prob": self.reneging_prob.tolist(),
            "reneging_prob_se": self.reneging_prob_se.tolist(),
            "reneging_prob_ci": self.reneging_prob_ci.tolist(),
            "mean_population": self.mean_population.tolist(),
            "mean_population_se": self.mean_population_se.tolist(),
            "mean_total_population": self.mean_total_population,
            "mean_total_population_se": self.mean_total_population_se,
        }


def replicate(model: CellModel, config: SimConfig) -> ReplicatedEstimates:
    """Run independent replications on split streams and aggregate.

    Requires at least two replications so the standard error across runs is
    defined. Aggregation is order-independent (plain means over the
    replication table).
    """
    if config.replications < 2:
        raise NonPositiveParameter("replicate needs at least 2 replications")
    runs = [
        _run_once(model, config, _UniformStream((config.seed, _STEADY_NS, rep)))
        for rep in range(config.replications)
    ]
    prob = np.stack([r.reneging_prob for r in runs])
    pop = np.stack([r.mean_population for r in runs])
    tot = np.asarray([r.mean_total_population for r in runs])
    reps = config.replications
    return ReplicatedEstimates(
        replications=reps,
        reneging_prob=prob.mean(axis=0),
        reneging_prob_se=prob.std(axis=0, ddof=1) / math.sqrt(reps),
        mean_population=pop.mean(axis=0),
        mean_population_se=pop.std(axis=0, ddof=1) / math.sqrt(reps),
        mean_total_population=float(tot.mean()),
        mean_total_population_se=float(tot.std(ddof=1) / math.sqrt(reps)),
        per_replication=tuple(runs),
    )
