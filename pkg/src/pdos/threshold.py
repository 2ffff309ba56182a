"""Limit kernel of threshold policies and the reduced optimization over thresholds.

For a schedule t with T_i = t_1 * ... * t_i, the probability of stopping on an
item of global rank <= k in the large-N limit is

    F_k(t) = sum_i int_{t_i}^{t_{i+1}} T_i tau^-(i+1) E[min(Bin(k, tau), i)] dtau.

E[min(Bin(k, tau), i)] = tau * sum_{k' < k} P(Bin(k', tau) <= i - 1), so all
k <= k_max come out of one pass over each interval.  Integrals are stored
scaled by t_i^i, which keeps them bounded for any i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from .core import Instance, ThresholdSchedule

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)


class Diverged(ArithmeticError):
    pass


class MaxSweeps(RuntimeError):
    pass


# --- numba kernel -----------------------------------------------------------------


@njit(cache=True)
def _node_vector(i, x, km, loga, buf):
    # buf[k-1] = (a/x)^i * sum_{k'<k} P(Bin(k', x) <= i-1)
    w = math.exp(i * (loga - math.log(x)))
    m = i - 1
    c = 1.0
    pm = 0.0
    acc = 0.0
    for n in range(km):
        acc += c
        buf[n] = w * acc
        if n == m:
            pm = x**m
        elif n > m:
            pm = pm * (1.0 - x) * n / (n - m)
        if n >= m:
            c -= x * pm
            if c < 0.0:
                c = 0.0


@njit(cache=True)
def _gl_panel(i, lo, hi, km, loga, xs, ws, out, buf):
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    for k in range(km):
        out[k] = 0.0
    for g in range(xs.shape[0]):
        _node_vector(i, mid + rad * xs[g], km, loga, buf)
        wg = rad * ws[g]
        for k in range(km):
            out[k] += wg * buf[k]


@njit(cache=True)
def _scaled_interval(i, a, b, km, tol, xs, ws):
    """int_a^b (a/tau)^i sum_{k'<k} P(Bin(k',tau) <= i-1) dtau for k = 1..km, and an error bound."""
    total = np.zeros(km)
    if b <= a or a <= 0.0:
        return total, 0.0
    loga = math.log(a)
    buf = np.empty(km)
    whole = np.empty(km)
    left = np.empty(km)
    right = np.empty(km)
    stack_lo = np.empty(256)
    stack_hi = np.empty(256)
    stack_w = np.empty((256, km))
    _gl_panel(i, a, b, km, loga, xs, ws, whole, buf)
    top = 0
    stack_lo[0] = a
    stack_hi[0] = b
    stack_w[0, :] = whole
    err_total = 0.0
    span = b - a
    while top >= 0:
        lo = stack_lo[top]
        hi = stack_hi[top]
        for k in range(km):
            whole[k] = stack_w[top, k]
        top -= 1
        mid = 0.5 * (lo + hi)
        _gl_panel(i, lo, mid, km, loga, xs, ws, left, buf)
        _gl_panel(i, mid, hi, km, loga, xs, ws, right, buf)
        err = 0.0
        for k in range(km):
            d = abs(left[k] + right[k] - whole[k])
            if d > err:
                err = d
        if err <= tol * (hi - lo) / span or top >= 250 or hi - lo < 1e-14:
            for k in range(km):
                total[k] += left[k] + right[k]
            err_total += err
        else:
            top += 1
            stack_lo[top] = lo
            stack_hi[top] = mid
            stack_w[top, :] = left
            top += 1
            stack_lo[top] = mid
            stack_hi[top] = hi
            stack_w[top, :] = right
    return total, err_total


def scaled_interval(i: int, a: float, b: float, km: int, tol: float = 1e-13):
    return _scaled_interval(i, float(a), float(b), int(km), float(tol), _GL_X, _GL_W)


# --- kernel evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class KernelEvaluation:
    schedule: ThresholdSchedule
    per_k: np.ndarray
    quadrature_error: float

    def __getitem__(self, k: int) -> float:
        return float(self.per_k[k - 1])


class _KernelState:
    """Cached per-interval integrals for fast single-coordinate updates."""

    def __init__(self, times: np.ndarray, km: int, tol: float):
        self.t = np.array(times, dtype=float)
        self.K = len(self.t)
        self.km = km
        self.tol = tol
        self.J = np.zeros((self.K, km))
        self.err = np.zeros(self.K)
        for s in range(1, self.K + 1):
            self._refresh_interval(s)

    def upper(self, s: int) -> float:
        return self.t[s] if s < self.K else 1.0

    def _refresh_interval(self, s: int):
        self.J[s - 1], self.err[s - 1] = scaled_interval(s, self.t[s - 1], self.upper(s), self.km, self.tol)

    def log_coeffs(self) -> np.ndarray:
        # log(T_{i-1} / t_i^{i-1}); -inf when a threshold is zero
        i = np.arange(1, self.K + 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.log(self.t)
            cs = np.concatenate([[0.0], np.cumsum(lt)[:-1]])
            out = cs - (i - 1) * lt
        out[~np.isfinite(out)] = -np.inf
        return out

    def F(self) -> np.ndarray:
        w = np.exp(self.log_coeffs())
        return w @ self.J

    def error(self) -> float:
        w = np.exp(self.log_coeffs())
        return float(w @ self.err)

    def split(self, s: int):
        """Pieces of F that stay fixed while t_s moves: (head, coeff of J_{s-1}, tail per unit t_s, log T_{s-1})."""
        lc = self.log_coeffs()
        w = np.exp(lc)
        head = w[: max(s - 2, 0)] @ self.J[: max(s - 2, 0)] if s > 2 else np.zeros(self.km)
        c_prev = w[s - 2] if s >= 2 else 0.0
        ts = self.t[s - 1]
        if s < self.K and ts > 0:
            tail = (w[s:] @ self.J[s:]) / ts
        else:
            tail = np.zeros(self.km)
        logT_prev = float(np.sum(np.log(self.t[: s - 1]))) if s > 1 else 0.0
        return head, c_prev, tail, logT_prev

    def F_at(self, s: int, x: float, parts) -> np.ndarray:
        head, c_prev, tail, logT_prev = parts
        out = head.copy()
        if s >= 2:
            Jp, _ = scaled_interval(s - 1, self.t[s - 2], x, self.km, self.tol)
            out += c_prev * Jp
        if x > 0:
            Js, _ = scaled_interval(s, x, self.upper(s), self.km, self.tol)
            out += math.exp(logT_prev - (s - 1) * math.log(x)) * Js
            out += x * tail
        return out

    def set(self, s: int, x: float):
        self.t[s - 1] = x
        if s >= 2:
            self._refresh_interval(s - 1)
        self._refresh_interval(s)


def _check_schedule(schedule: ThresholdSchedule):
    if not isinstance(schedule, ThresholdSchedule):
        raise TypeError("expected a ThresholdSchedule")
    # construction already validates monotonicity; re-check for mutated copies
    t = np.asarray(schedule.times)
    if len(t) and (t[0] < schedule.p - 1e-15 or np.any(np.diff(t) < 0) or t[-1] > 1):
        raise ValueError("schedule violates p <= t_1 <= ... <= 1")


def eval_Fk_all(schedule: ThresholdSchedule, kmax: int, tol: float = 1e-11) -> KernelEvaluation:
    """F_1..F_kmax for a schedule whose thresholds past K are one."""
    _check_schedule(schedule)
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    if not schedule.tail_is_one:
        raise ValueError("kernel evaluation needs tail_is_one schedules")
    K = max(schedule.K, 1)
    times = schedule.padded(K)
    st = _KernelState(times, kmax, tol / K)
    F = np.clip(st.F(), 0.0, 1.0)
    return KernelEvaluation(schedule, F, st.error())


def eval_Fk(schedule: ThresholdSchedule, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(eval_Fk_all(schedule, k).per_k[-1])


def stop_distribution(schedule: ThresholdSchedule, jmax: int) -> np.ndarray:
    """Limit probability of selecting global rank j, j = 1..jmax."""
    F = eval_Fk_all(schedule, jmax).per_k
    return np.diff(np.concatenate([[0.0], F]))


# --- reduced problem -------------------------------------------------------------


@dataclass(frozen=True)
class RpValue:
    value: float
    truncation_error: float
    quadrature_error: float


def rp_objective(instance: Instance, schedule: ThresholdSchedule) -> RpValue:
    """Y_1 - sum_k (Y_k - Y_{k+1}) (1 - F_k(t)) in the large-N limit."""
    if instance.tail_step is not None:
        if schedule.tail_is_one:
            raise Diverged("arithmetic tail with a terminating schedule has unbounded loss")
        d = instance.diffs()
        if not np.allclose(d, d[0]):
            raise ValueError("arithmetic tails need constant value gaps")
        rank = min_rank_expected(np.asarray(schedule.times))
        return RpValue(instance.values[0] - d[0] * (rank - 1.0), 0.0, 0.0)
    d = instance.diffs()
    ev = eval_Fk_all(schedule, len(d))
    # finitely many gaps: the sum is exact up to quadrature
    value = instance.values[0] - float(d @ (1.0 - ev.per_k))
    return RpValue(value, 0.0, float(np.sum(np.abs(d))) * ev.quadrature_error)


def golden_max(f, lo: float, hi: float, tol: float = 1e-11) -> tuple[float, float]:
    """Maximize a unimodal f on [lo, hi]; endpoints are candidates too."""
    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, f(x)
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    best = max(((fc, c), (fd, d), (f(lo), lo), (f(hi), hi)))
    return best[1], best[0]


def coordinate_ascent(state: _KernelState, score, p: float, tol: float = 1e-12,
                      max_sweeps: int = 500, x_tol: float = 1e-11, trace: list | None = None) -> float:
    """Cyclic golden-section ascent of score(F) over t_1..t_K, keeping p <= t_1 <= ... <= 1.

    ``trace`` collects the score after every sweep.
    """
    current = score(state.F())
    if trace is not None:
        trace.append(current)
    for _ in range(max_sweeps):
        start = current
        for s in range(1, state.K + 1):
            lo = max(p, state.t[s - 2] if s >= 2 else p)
            hi = state.upper(s)
            parts = state.split(s)
            x, fx = golden_max(lambda x: score(state.F_at(s, x, parts)), lo, hi, x_tol)
            if fx > score(state.F_at(s, state.t[s - 1], parts)):
                state.set(s, x)
        current = score(state.F())
        if trace is not None:
            trace.append(current)
        if current - start < tol:
            return current
    raise MaxSweeps(f"no convergence in {max_sweeps} sweeps")


@dataclass(frozen=True)
class RpSolution:
    schedule: ThresholdSchedule
    value: float
    restart_values: tuple[float, ...] = field(default=())

    @property
    def restart_spread(self) -> float:
        """Gap between best and worst restart; agreement is reported, not asserted."""
        return max(self.restart_values) - min(self.restart_values) if self.restart_values else 0.0


def optimize_rp(instance: Instance, p: float, K: int | None = None, restarts: int = 5,
                seed: int = 0, max_sweeps: int = 500, trace: list | None = None) -> RpSolution:
    """Coordinate ascent over t_1..t_K; thresholds past K stay at one."""
    if instance.tail_step is not None:
        sol = optimize_min_rank(K or instance.N, p)
        rank = min_rank_expected(np.asarray(sol.schedule.times))
        d = instance.diffs()[0]
        return RpSolution(sol.schedule, instance.values[0] - d * (rank - 1.0), sol.restart_values)
    d = instance.diffs()
    nz = np.nonzero(d)[0]
    m = int(nz[-1]) + 1 if len(nz) else 1
    K = m if K is None else K
    if K < m:
        raise ValueError("K must cover every nonzero value gap")
    base = instance.value(instance.N + 1)
    km = len(d)

    def score(F):
        return base + float(d @ F)

    rng = np.random.default_rng(seed)
    starts = [p + (1.0 - p) * np.arange(1, K + 1) / (K + 1)]
    for _ in range(restarts):
        starts.append(np.sort(rng.uniform(p, 1.0, K)))
    best, vals = None, []
    for t0 in starts:
        st = _KernelState(t0, km, 1e-13)
        run: list | None = [] if trace is not None else None
        v = coordinate_ascent(st, score, p, max_sweeps=max_sweeps, trace=run)
        if trace is not None:
            trace.append(run)
        vals.append(v)
        if best is None or v > best[0]:
            best = (v, st.t.copy())
    sched = ThresholdSchedule(p, tuple(best[1]), True)
    return RpSolution(sched, best[0], tuple(vals))


# --- minimum rank -------------------------------------------------------------------


def _rank_tail_log(s: int, terms: int = 200_000) -> float:
    """log of prod_{m >= s} (m/(m+2))^{1/(m+1)}, with the series remainder in closed form."""
    m = np.arange(s, s + terms, dtype=float)
    head = float(np.sum(np.log1p(-2.0 / (m + 2.0)) / (m + 1.0)))
    M = s + terms
    # summand = -2/m^2 + 4/m^3 - 20/(3 m^4) + ...; Euler-Maclaurin on each power
    tail = -2.0 / M + 1.0 / M**2 - 5.0 / (9.0 * M**3)
    return head + tail


def min_rank_expected(times: np.ndarray, p: float = 0.0) -> float:
    """Expected rank of the selected item when thresholds past K follow the stationary tail.

    With u_i = T_{i-1} / t_i^i the expected rank is sum_i u_i / 2.  Past K the
    stationarity conditions fix u_{i+1} / u_i = i / (i+2), which sums the tail
    to (K+2) u_{K+1} / 2.
    """
    t = np.asarray(times, dtype=float)
    K = len(t)
    L = np.log(t)
    cs = np.concatenate([[0.0], np.cumsum(L)])
    i = np.arange(1, K + 1)
    u = np.exp(cs[:-1] - i * L)
    tail = (K + 2) * math.exp(cs[-1] - (K + 1) * _rank_tail_log(K + 1))
    return 0.5 * (float(u.sum()) + tail)


def optimize_min_rank(K: int = 500, p: float = 0.0, tol: float = 1e-13,
                      max_sweeps: int = 20_000) -> RpSolution:
    """Coordinate descent on expected rank over t_1..t_K with the stationary tail.

    Along t_s the rank reads c * t_s^-s + B * t_s + const, a convex function of
    log t_s with a closed-form minimizer that is clipped to the feasible range.
    """
    lt_next = _rank_tail_log(K + 1)
    L = np.log(p + (1.0 - p) * np.arange(1, K + 1) / (K + 1) if p > 0 else np.arange(1, K + 1) / (K + 1))
    lp = math.log(p) if p > 0 else -np.inf
    i = np.arange(1, K + 1)
    rank = min_rank_expected(np.exp(L))
    for _ in range(max_sweeps):
        start = rank
        for s in range(K):
            cs = np.concatenate([[0.0], np.cumsum(L)])
            u = np.exp(cs[:-1] - i * L)
            tail = (K + 2) * math.exp(cs[-1] - (K + 1) * lt_next)
            c = u[s] * math.exp((s + 1) * L[s])
            B = (u[s + 1 :].sum() + tail) * math.exp(-L[s])
            x = math.log((s + 1) * c / B) / (s + 2)
            lo = L[s - 1] if s > 0 else lp
            hi = L[s + 1] if s < K - 1 else lt_next
            L[s] = min(max(x, lo), hi)
        rank = min_rank_expected(np.exp(L))
        if start - rank < tol:
            sched = ThresholdSchedule(p, tuple(np.exp(L)), tail_is_one=False)
            return RpSolution(sched, -rank, (-rank,))
    raise MaxSweeps(f"no convergence in {max_sweeps} sweeps")


# --- classic problems ---------------------------------------------------------------


class Classic(str, Enum):
    SECRETARY = "secretary"
    ONE_TWO = "one-two"
    MIN_RANK = "min-rank"


def _one_two_t1() -> float:
    from scipy.optimize import brentq

    return brentq(lambda x: x - math.log(x) - 1.0 - math.log(1.5), 1e-6, 1.0 - 1e-12, xtol=1e-15)


def classic_closed_forms(problem: Classic | str, K: int = 500) -> tuple[ThresholdSchedule, float]:
    problem = Classic(problem)
    if problem is Classic.SECRETARY:
        t1 = 1.0 / math.e
        return ThresholdSchedule(0.0, (t1,)), t1
    if problem is Classic.ONE_TWO:
        x, y = _one_two_t1(), 2.0 / 3.0
        value = x * x + 2.0 * x * (math.log(y / x) + 1.0) - 3.0 * x * y
        return ThresholdSchedule(0.0, (x, y)), value
    times = tuple(math.exp(_rank_tail_log(s)) for s in range(1, K + 1))
    return ThresholdSchedule(0.0, times, tail_is_one=False), -min_rank_expected(np.array(times))
