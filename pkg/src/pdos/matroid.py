"""Multiple selection on unitary partition matroids, and moving rules between sampling rates."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .core import ThresholdSchedule
from .simulator import Stream, ThresholdRule, _key, _thresholds, _uniform


@dataclass(frozen=True)
class UnitaryPartitionMatroid:
    """Parts of capacity one; elements of ``forbidden_part`` are never independent."""

    ground_size: int
    part_of: tuple[int, ...]
    forbidden_part: int | None = None

    def __post_init__(self):
        if len(self.part_of) != self.ground_size:
            raise ValueError("every element needs exactly one part")
        if any(q < 0 for q in self.part_of):
            raise ValueError("part ids must be non-negative")

    @property
    def parts(self) -> list[list[int]]:
        out: dict[int, list[int]] = {}
        for e, q in enumerate(self.part_of):
            out.setdefault(q, []).append(e)
        return [out[q] for q in sorted(out) if q != self.forbidden_part]

    def is_independent(self, elements) -> bool:
        used = set()
        for e in elements:
            q = self.part_of[e]
            if q == self.forbidden_part or q in used:
                return False
            used.add(q)
        return True

    @classmethod
    def from_parts(cls, ground_size: int, parts, forbidden=()) -> UnitaryPartitionMatroid:
        part_of = [-1] * ground_size
        for q, members in enumerate(parts):
            for e in members:
                if part_of[e] != -1:
                    raise ValueError(f"element {e} appears in two parts")
                part_of[e] = q
        fid = len(parts) if forbidden else None
        for e in forbidden:
            if part_of[e] != -1:
                raise ValueError(f"element {e} appears in two parts")
            part_of[e] = fid
        if -1 in part_of:
            raise ValueError(f"element {part_of.index(-1)} has no part")
        return cls(ground_size, tuple(part_of), fid)

    @classmethod
    def from_json(cls, text: str) -> UnitaryPartitionMatroid:
        d = json.loads(text)
        return cls.from_parts(int(d["ground_size"]), d["parts"], d.get("forbidden", []))

    def to_json(self) -> str:
        forbidden = [e for e, q in enumerate(self.part_of) if q == self.forbidden_part]
        return json.dumps({"ground_size": self.ground_size, "parts": self.parts, "forbidden": forbidden})


@njit(cache=True)
def _parallel_trial(key, part, rank, nparts, psize, p, t, K):
    n = part.shape[0]
    u = np.empty(n)
    for e in range(n):
        u[e] = _uniform(key, e)
    order = np.argsort(u)
    seen = np.zeros((nparts, psize + 1), dtype=np.int64)
    done = np.zeros(nparts, dtype=np.bool_)
    pick = -np.ones(nparts, dtype=np.int64)
    best = -np.ones(nparts, dtype=np.int64)
    for r in range(n):
        e = order[r]
        q = part[e]
        if q < 0:
            continue
        j = rank[e]
        if u[e] >= p and (best[q] < 0 or j < rank[best[q]]):
            best[q] = e
        if done[q]:
            continue
        ell = 1
        for b in range(1, j):
            ell += seen[q, b]
        seen[q, j] = 1
        if u[e] >= p and ell <= K and u[e] >= t[ell - 1]:
            pick[q] = e
            done[q] = True
    return pick, best


@njit(cache=True)
def _parallel_batch(seed, first, trials, part, rank, nparts, psize, p, t, K):
    picks = np.empty((trials, nparts), dtype=np.int64)
    bests = np.empty((trials, nparts), dtype=np.int64)
    for n in range(trials):
        a, b = _parallel_trial(_key(seed, first + n), part, rank, nparts, psize, p, t, K)
        picks[n] = a
        bests[n] = b
    return picks, bests


@dataclass(frozen=True)
class ParallelRun:
    """Per trial and part: chosen element and best online element (-1 = none)."""

    picks: np.ndarray
    best_online: np.ndarray
    parts: list[list[int]]

    def selections(self, trial: int) -> frozenset[int]:
        return frozenset(int(e) for e in self.picks[trial] if e >= 0)

    def weights(self, weights) -> tuple[np.ndarray, np.ndarray]:
        w = np.append(np.asarray(weights, dtype=float), 0.0)
        return w[self.picks], w[self.best_online]


def _layout(matroid: UnitaryPartitionMatroid, weights):
    w = np.asarray(weights, dtype=float)
    if w.shape != (matroid.ground_size,) or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per element")
    parts = matroid.parts
    part = -np.ones(matroid.ground_size, dtype=np.int64)
    rank = np.zeros(matroid.ground_size, dtype=np.int64)
    for q, members in enumerate(parts):
        order = sorted(members, key=lambda e: (-w[e], e))
        for r, e in enumerate(order, start=1):
            part[e] = q
            rank[e] = r
    psize = max((len(m) for m in parts), default=0)
    return parts, part, rank, psize


def simulate_parallel(matroid: UnitaryPartitionMatroid, weights, p: float, schedule: ThresholdSchedule,
                      trials: int, seed: int, first_trial: int = 0) -> ParallelRun:
    if abs(schedule.p - p) > 1e-12:
        raise ValueError("schedule.p must equal p")
    parts, part, rank, psize = _layout(matroid, weights)
    t, K = _thresholds(schedule, max(psize, 1))
    picks, bests = _parallel_batch(np.uint64(seed), np.uint64(first_trial), trials, part, rank,
                                   len(parts), psize, float(p), t, K)
    return ParallelRun(picks, bests, parts)


def parallel_threshold_select(matroid: UnitaryPartitionMatroid, weights, p: float,
                              schedule: ThresholdSchedule, seed: int, trial: int = 0) -> frozenset[int]:
    """Run the single-selection threshold rule inside every part at once."""
    return simulate_parallel(matroid, weights, p, schedule, 1, seed, trial).selections(0)


Algorithm = Callable[..., "int | None"]


@dataclass(frozen=True)
class LiftedAlgorithm:
    """A rule built for sampling rate p1, run at the higher rate p2.

    Items arriving before f = (p2 - p1)/(1 - p1) get value zero and fresh
    arrival times on [f, 1]; time is then rescaled so that [f, 1] maps onto
    [0, 1], where the history fraction is exactly p1.
    """

    p1: float
    p2: float
    base: Algorithm

    @property
    def f(self) -> float:
        return (self.p2 - self.p1) / (1 - self.p1)

    def __call__(self, values, times, online_from, stream: Stream):
        f = self.f
        times = np.asarray(times, dtype=float)
        early = times < f
        sim_values = np.where(early, 0.0, np.asarray(values, dtype=float))
        redrawn = f + (1 - f) * stream.substream(1).uniforms(len(times))
        sim_times = (np.where(early, redrawn, times) - f) / (1 - f)
        pick = self.base(sim_values, sim_times, self.p1, stream.substream(2))
        if pick is None or early[pick]:
            return None
        return pick


def lift_policy(p1: float, p2: float, base_algorithm) -> LiftedAlgorithm:
    if not 0 <= p1 < p2 < 1:
        raise ValueError("need 0 <= p1 < p2 < 1")
    if isinstance(base_algorithm, ThresholdSchedule):
        base_algorithm = ThresholdRule(base_algorithm)
    return LiftedAlgorithm(p1, p2, base_algorithm)
