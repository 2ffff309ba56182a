"""Seeded Monte Carlo for threshold rules and stopping-rule matrices.

Every random number is a hash of (seed, trial, counter), so any trial can be
replayed on its own and results do not depend on how trials are batched.
Item ranks are 1..N (1 = largest value, ties broken by index); the item of
rank j arrives at time u_j = U(seed, trial, j - 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from .core import Dependent, Independent, Instance, ThresholdSchedule
from .finite_lp import StoppingRuleMatrix

TOP_J = 64  # ranks simulated eagerly on the fast path


class DegenerateOpt(ZeroDivisionError):
    pass


# --- counter-based RNG ----------------------------------------------------------------


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _key(seed, trial):
    return _mix(_mix(np.uint64(seed) + np.uint64(0x9E3779B97F4A7C15)) ^ (np.uint64(trial) * np.uint64(0xD1B54A32D192ED03)))


@njit(cache=True, inline="always")
def _uniform(key, counter):
    z = _mix(key + (np.uint64(counter) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15))
    # 53 random bits in (0, 1)
    return ((z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


def uniforms(seed: int, trial: int, n: int, offset: int = 0) -> np.ndarray:
    return _uniform_block(np.uint64(seed), np.uint64(trial), n, offset)


@dataclass(frozen=True)
class Stream:
    """Random numbers of one trial; counters below ``2**32`` are reserved for the engine."""

    seed: int
    trial: int

    def uniforms(self, n: int, offset: int = 0) -> np.ndarray:
        return uniforms(self.seed, self.trial, n, offset)

    def substream(self, tag: int) -> Stream:
        return Stream(self.seed, self.trial + (tag << 40))


@njit(cache=True)
def _uniform_block(seed, trial, n, offset):
    key = _key(seed, trial)
    out = np.empty(n)
    for c in range(n):
        out[c] = _uniform(key, offset + c)
    return out


# --- threshold rule, one trial ------------------------------------------------------------


@njit(cache=True)
def _bit_add(tree, i):
    n = tree.shape[0] - 1
    while i <= n:
        tree[i] += 1
        i += i & (-i)


@njit(cache=True)
def _bit_sum(tree, i):
    s = 0
    while i > 0:
        s += tree[i]
        i -= i & (-i)
    return s


@njit(cache=True)
def _full_scan(key, N, online_from, t, K):
    """Exact scan over all N items; online means time >= online_from.

    Returns (selected rank or 0, stop time, best online rank or 0).
    """
    u = np.empty(N)
    for j in range(N):
        u[j] = _uniform(key, j)
    order = np.argsort(u)
    tree = np.zeros(N + 1, dtype=np.int64)
    best_online = 0
    for r in range(N):
        j = order[r] + 1
        if u[j - 1] >= online_from and (best_online == 0 or j < best_online):
            best_online = j
    for r in range(N):
        j = order[r] + 1
        uj = u[j - 1]
        ell = 1 + _bit_sum(tree, j - 1)
        _bit_add(tree, j)
        if uj >= online_from and ell <= K and uj >= t[ell - 1]:
            return j, uj, best_online
    return 0, -1.0, best_online


@njit(cache=True)
def reference_trial(seed, trial, N, online_from, t, K):
    """Full O(N log N) scan of one trial; the fast path must agree with it."""
    return _full_scan(_key(seed, trial), N, online_from, t, K)


@njit(cache=True)
def _dependent_cut(key, N, h):
    """Smallest online time: the (h+1)-th smallest of the N arrival times."""
    if h == 0:
        return 0.0
    u = np.empty(N)
    for j in range(N):
        u[j] = _uniform(key, j)
    return np.sort(u)[h]


@njit(cache=True)
def _threshold_trial(seed, trial, N, p, h, dependent, t, K):
    key = _key(seed, trial)
    if dependent:
        return _full_scan(key, N, _dependent_cut(key, N, h), t, K)
    J = min(N, 64)
    u = np.empty(J)
    for j in range(J):
        u[j] = _uniform(key, j)
    order = np.argsort(u)
    seen = np.zeros(J + 1, dtype=np.int64)
    sel, stop = 0, 1.0
    best_online = 0
    for r in range(J):
        j = order[r] + 1
        if u[j - 1] >= p and (best_online == 0 or j < best_online):
            best_online = j
    for r in range(J):
        j = order[r] + 1
        uj = u[j - 1]
        ell = 1
        for b in range(1, j):
            ell += seen[b]
        seen[j] = 1
        if uj >= p and ell <= K and uj >= t[ell - 1]:
            sel, stop = j, uj
            break
    if J == N:
        return sel, (stop if sel > 0 else -1.0), best_online
    if best_online == 0:
        return _full_scan(key, N, p, t, K)
    # can an item ranked below J be accepted before `stop`?  Its local rank is
    # at least 1 + (top-J arrivals before it); compare with thresholds open then.
    start = max(p, t[0])
    c = 0
    for r in range(J + 1):
        seg_hi = u[order[r]] if r < J else 1.0
        if seg_hi > start:
            right = min(seg_hi, stop)
            k_open = 0
            while k_open < K and t[k_open] <= right:
                k_open += 1
            if 1 + c <= k_open:
                return _full_scan(key, N, p, t, K)
            if seg_hi >= stop:
                break
        c += 1
    return sel, (stop if sel > 0 else -1.0), best_online


@njit(cache=True)
def _threshold_batch(seed, first, trials, N, p, h, dependent, t, K):
    sel = np.empty(trials, dtype=np.int64)
    stop = np.empty(trials)
    best = np.empty(trials, dtype=np.int64)
    for n in range(trials):
        a, b, c = _threshold_trial(seed, first + n, N, p, h, dependent, t, K)
        sel[n] = a
        stop[n] = b
        best[n] = c
    return sel, stop, best


@njit(cache=True)
def threshold_pick(times, ranks, online_from, t, K):
    """Index of the item a threshold rule takes, or -1; ``ranks`` are 1..n."""
    n = times.shape[0]
    order = np.argsort(times)
    tree = np.zeros(n + 1, dtype=np.int64)
    for r in range(n):
        e = order[r]
        j = ranks[e]
        ell = 1 + _bit_sum(tree, j - 1)
        _bit_add(tree, j)
        if times[e] >= online_from and ell <= K and times[e] >= t[ell - 1]:
            return e
    return -1


def value_ranks(values) -> np.ndarray:
    """Ranks 1..n by decreasing value, ties broken by index."""
    order = np.lexsort((np.arange(len(values)), -np.asarray(values, dtype=float)))
    ranks = np.empty(len(values), dtype=np.int64)
    ranks[order] = np.arange(1, len(values) + 1)
    return ranks


@dataclass(frozen=True)
class ThresholdRule:
    """A threshold schedule as a callable algorithm over explicit values."""

    schedule: ThresholdSchedule

    def __call__(self, values, times, online_from, stream=None):
        t, K = _thresholds(self.schedule, len(values))
        e = threshold_pick(np.asarray(times, dtype=float), value_ranks(values), float(online_from), t, K)
        return None if e < 0 else int(e)


# --- stopping-rule matrix, one trial ------------------------------------------------------


@njit(cache=True)
def _policy_trial(seed, trial, N, h, accept):
    key = _key(seed, trial)
    u = np.empty(N)
    for j in range(N):
        u[j] = _uniform(key, j)
    order = np.argsort(u)
    tree = np.zeros(N + 1, dtype=np.int64)
    best_online = 0
    for r in range(h, N):
        j = order[r] + 1
        if best_online == 0 or j < best_online:
            best_online = j
    for r in range(N):
        j = order[r] + 1
        ell = 1 + _bit_sum(tree, j - 1)
        _bit_add(tree, j)
        i = r + 1
        if i > h:
            a = accept[i, ell]
            if a > 0.0 and _uniform(key, N + i) < a:
                return j, i, ell, best_online
    return 0, 0, 0, best_online


@njit(cache=True)
def _policy_batch(seed, first, trials, N, h, accept):
    sel = np.empty(trials, dtype=np.int64)
    step = np.empty(trials, dtype=np.int64)
    loc = np.empty(trials, dtype=np.int64)
    best = np.empty(trials, dtype=np.int64)
    for n in range(trials):
        a, b, c, d = _policy_trial(seed, first + n, N, h, accept)
        sel[n] = a
        step[n] = b
        loc[n] = c
        best[n] = d
    return sel, step, loc, best


# --- aggregation ----------------------------------------------------------------------


@njit(cache=True)
def _kahan_moments(x):
    s = 0.0
    cs = 0.0
    q = 0.0
    cq = 0.0
    for v in x:
        y = v - cs
        tt = s + y
        cs = (tt - s) - y
        s = tt
        y2 = v * v - cq
        t2 = q + y2
        cq = (t2 - q) - y2
        q = t2
    return s, q


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    trials: int

    @classmethod
    def from_samples(cls, x: np.ndarray) -> Estimate:
        n = len(x)
        if n < 1:
            raise ValueError("need at least one trial")
        s, q = _kahan_moments(np.asarray(x, dtype=float))
        mean = s / n
        var = max(q / n - mean * mean, 0.0) * n / max(n - 1, 1)
        return cls(mean, math.sqrt(var / n), n)


@dataclass(frozen=True)
class TrialRecord:
    selected_rank: int | None
    selected_value: float
    opt_value: float
    stop_time: float | None


@dataclass(frozen=True)
class ThresholdRun:
    """Raw per-trial outcomes: selected rank (0 = none), stop time, best online rank (0 = none)."""

    selected: np.ndarray
    stop_time: np.ndarray
    best_online: np.ndarray

    def values(self, instance: Instance) -> tuple[np.ndarray, np.ndarray]:
        y = np.append(np.asarray(instance.values), instance.value(instance.N + 1))
        # index N picks the tail for "none"
        sel = np.where(self.selected > 0, self.selected - 1, instance.N)
        opt = np.where(self.best_online > 0, self.best_online - 1, instance.N)
        return y[sel], y[opt]


def _model_args(model, N: int):
    if isinstance(model, Independent):
        return model.p, 0, False
    if isinstance(model, Dependent):
        if model.N != N:
            raise ValueError("sampling model size differs from the instance")
        return model.p, model.h, True
    raise TypeError("model must be Independent or Dependent")


def _thresholds(schedule: ThresholdSchedule, N: int) -> tuple[np.ndarray, int]:
    if not schedule.tail_is_one:
        raise ValueError("simulation needs a schedule whose tail is one")
    K = min(schedule.K, N)
    t = np.ones(max(K, 1))
    t[:K] = schedule.times[:K]
    return t, K


def simulate_threshold(N: int, schedule: ThresholdSchedule, model, trials: int, seed: int,
                       first_trial: int = 0) -> ThresholdRun:
    p, h, dep = _model_args(model, N)
    if schedule.p < p - 1e-12:
        raise ValueError("schedule.p is below the sampling rate of the model")
    t, K = _thresholds(schedule, N)
    sel, stop, best = _threshold_batch(np.uint64(seed), np.uint64(first_trial), trials, N, p, h, dep, t, K)
    return ThresholdRun(sel, stop, best)


def run_threshold_alg(instance: Instance, schedule: ThresholdSchedule, model, seed: int,
                      trial: int = 0) -> TrialRecord:
    run = simulate_threshold(instance.N, schedule, model, 1, seed, trial)
    alg, opt = run.values(instance)
    r = int(run.selected[0])
    return TrialRecord(r if r > 0 else None, float(alg[0]), float(opt[0]),
                       float(run.stop_time[0]) if r > 0 else None)


@dataclass(frozen=True)
class PolicyRun:
    selected: np.ndarray
    step: np.ndarray
    local: np.ndarray
    best_online: np.ndarray

    def joint_frequencies(self, N: int) -> np.ndarray:
        out = np.zeros((N + 1, N + 1))
        m = self.step > 0
        np.add.at(out, (self.step[m], self.local[m]), 1.0)
        return out / len(self.step)


def simulate_policy(rule: StoppingRuleMatrix, trials: int, seed: int, first_trial: int = 0) -> PolicyRun:
    acc = np.ascontiguousarray(rule.accept_prob())
    s, st, lo, b = _policy_batch(np.uint64(seed), np.uint64(first_trial), trials, rule.N, rule.h, acc)
    return PolicyRun(s, st, lo, b)


def run_policy_matrix(instance: Instance, rule: StoppingRuleMatrix, seed: int, trial: int = 0) -> TrialRecord:
    if rule.N != instance.N:
        raise ValueError("rule dimensions differ from the instance")
    run = simulate_policy(rule, 1, seed, trial)
    y = np.append(np.asarray(instance.values), instance.value(instance.N + 1))
    r = int(run.selected[0])
    b = int(run.best_online[0])
    return TrialRecord(r if r > 0 else None, float(y[r - 1] if r else y[-1]), float(y[b - 1] if b else y[-1]), None)


# --- estimators -----------------------------------------------------------------------


@dataclass(frozen=True)
class RatioEstimate:
    alg: Estimate
    opt: Estimate
    ratio: float


def estimate_ratio(instance: Instance, algorithm, model, trials: int, seed: int) -> RatioEstimate:
    """Paired estimates of E[ALG] and E[online max] on common random numbers.

    ``algorithm`` is a ThresholdSchedule, a StoppingRuleMatrix (dependent
    model), or a callable ``(values, times, online_from, stream) -> index or
    None``; items with ``times < online_from`` are history.
    """
    if trials < 2:
        raise ValueError("need at least two trials")
    if isinstance(algorithm, ThresholdSchedule):
        alg, opt = simulate_threshold(instance.N, algorithm, model, trials, seed).values(instance)
    elif isinstance(algorithm, StoppingRuleMatrix):
        run = simulate_policy(algorithm, trials, seed)
        y = np.append(np.asarray(instance.values), instance.value(instance.N + 1))
        alg = y[np.where(run.selected > 0, run.selected - 1, instance.N)]
        opt = y[np.where(run.best_online > 0, run.best_online - 1, instance.N)]
    elif callable(algorithm):
        alg, opt = _callable_values(instance, algorithm, model, trials, seed)
    else:
        raise TypeError("unsupported algorithm")
    a, o = Estimate.from_samples(alg), Estimate.from_samples(opt)
    if o.mean == 0:
        raise DegenerateOpt("online maximum has zero mean")
    return RatioEstimate(a, o, a.mean / o.mean)


def _callable_values(instance: Instance, algorithm: Callable, model, trials: int, seed: int):
    N = instance.N
    p, h, dep = _model_args(model, N)
    y = np.append(np.asarray(instance.values, dtype=float), instance.value(N + 1))
    alg = np.empty(trials)
    opt = np.empty(trials)
    for n in range(trials):
        stream = Stream(seed, n)
        u = stream.uniforms(N)
        cut = np.sort(u)[h] if dep and h < N else (2.0 if dep else p)
        pick = algorithm(y[:N], u, cut, stream)
        if pick is not None and u[pick] < cut:
            raise ValueError("algorithm selected a history item")
        alg[n] = y[pick] if pick is not None else y[N]
        online = np.flatnonzero(u >= cut)
        opt[n] = y[online].max() if len(online) else y[N]
    return alg, opt


def empirical_stop_distribution(instance: Instance, schedule: ThresholdSchedule, model, trials: int,
                                seed: int, jmax: int | None = None) -> dict[int, Estimate]:
    if trials < 10_000:
        raise ValueError("need at least 10^4 trials")
    run = simulate_threshold(instance.N, schedule, model, trials, seed)
    jmax = instance.N if jmax is None else jmax
    return {j: Estimate.from_samples((run.selected == j).astype(float)) for j in range(1, jmax + 1)}


@dataclass(frozen=True)
class SweepRow:
    k: int
    alg: Estimate
    opt_exact: float
    opt: Estimate
    ratio: float


def worst_k_sweep(schedule: ThresholdSchedule, N: int, ks, model, trials: int, seed: int) -> list[SweepRow]:
    """Ratios on the 0/1 instances with k ones, all from one batch of trials."""
    from .core import opt_dist_dependent_cumulative

    run = simulate_threshold(N, schedule, model, trials, seed)
    rows = []
    if isinstance(model, Dependent):
        D = opt_dist_dependent_cumulative(N, model.h)
    for k in ks:
        hit = ((run.selected > 0) & (run.selected <= k)).astype(float)
        best = ((run.best_online > 0) & (run.best_online <= k)).astype(float)
        exact = 1.0 - model.p**k if isinstance(model, Independent) else float(D[min(k, model.h + 1) - 1])
        a = Estimate.from_samples(hit)
        rows.append(SweepRow(k, a, exact, Estimate.from_samples(best), a.mean / exact))
    return rows
