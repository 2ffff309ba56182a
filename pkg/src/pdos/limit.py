"""Worst-case competitive ratio alpha(p) in the large-N limit.

Covers the i.i.d. prophet constant alpha*, the explicit threshold
construction with its fixed point alpha_tilde(p), the closed form for small
p, and two numerical programs that bracket alpha(p): a threshold max-min
problem (lower bound) and a discretized dominance LP (upper bound).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ThresholdSchedule
from .quadrature import integrate
from .simplex import LpModel, solve_lp
from .threshold import MaxSweeps, _KernelState, eval_Fk_all, golden_max

SERIES_TOL = 1e-12
SERIES_CAP = 10**6


class LimitExceedsOne(ValueError):
    """The construction's thresholds pass one, so it is not a valid policy."""


# --- alpha* ---------------------------------------------------------------------------


def _star_integral(alpha: float, tol: float = 1e-14) -> float:
    c = 1.0 / alpha - 1.0

    def f(y):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = y * (1.0 - np.log(y))
        v = np.where(y > 0, v, 0.0)
        return 1.0 / (v + c)

    return float(integrate(f, 0.0, 1.0, tol=tol, max_panels=20000).value)


def alpha_star(tol: float = 1e-13) -> float:
    """Unique alpha with int_0^1 dy / (y(1 - ln y) + 1/alpha - 1) = 1."""
    lo, hi = 0.5, 0.99
    # integral is increasing in alpha
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _star_integral(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_ALPHA_STAR: float | None = None


def cached_alpha_star() -> float:
    global _ALPHA_STAR
    if _ALPHA_STAR is None:
        _ALPHA_STAR = alpha_star()
    return _ALPHA_STAR


# --- construction ---------------------------------------------------------------------


def gammas(p: float, alpha: float, kmax: int) -> np.ndarray:
    """gamma_k = 1 - alpha + alpha [k p^{k-1} - (k-1) p^k] for k = 1..kmax."""
    k = np.arange(1, kmax + 1, dtype=float)
    with np.errstate(under="ignore"):
        r = k * p ** (k - 1) - (k - 1) * p**k
    return 1.0 - alpha + alpha * r


def _f_side(p: float, alpha: float) -> float:
    return math.log(p) + alpha * (1.0 - p) ** 2 / p


@dataclass(frozen=True)
class SeriesValue:
    value: float
    terms: int
    tail_bound: float


def g_series(p: float, alpha: float, tol: float = SERIES_TOL, cap: int = SERIES_CAP) -> SeriesValue:
    """sum_{i>=1} ln(gamma_{i+1}) / (i(i+1)).

    Since sum 1/(i(i+1)) = 1 the constant part ln(1 - alpha) is taken out
    exactly; what remains decays like p^i.
    """
    if not (0.0 < p < 1.0 and 0.0 < alpha < 1.0):
        raise ValueError("need p, alpha in (0, 1)")
    base = math.log1p(-alpha)
    ratio = alpha / (1.0 - alpha)
    total, n, chunk = 0.0, 0, 4096
    bound = math.inf
    while n < cap:
        i = np.arange(n + 1, min(n + chunk, cap) + 1, dtype=float)
        k = i + 1
        with np.errstate(under="ignore"):
            r = k * p ** (k - 1) - (k - 1) * p**k
        total += float(np.sum(np.log1p(ratio * r) / (i * (i + 1))))
        n = int(i[-1])
        # ln(1+x) <= x and r_k <= k p^{k-1}: tail <= ratio * p^n / (n (1-p))
        bound = ratio * p**n / (n * (1.0 - p))
        if bound < tol:
            break
        chunk *= 2
    return SeriesValue(base + total, n, bound)


def alpha_tilde(p: float, tol: float = 1e-14) -> float:
    """Fixed point where the construction's thresholds end exactly at one."""
    if not 0.0 < p < 1.0:
        raise ValueError("need 0 < p < 1")
    lo, hi = 1e-6, 1.0 - 1e-6

    def h(a):
        return _f_side(p, a) - g_series(p, a).value

    if h(lo) > 0:
        return lo
    if h(hi) < 0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if h(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ConstructionState:
    p: float
    alpha: float
    gammas: np.ndarray  # gamma_1..gamma_K
    times: ThresholdSchedule
    mus: np.ndarray  # mu_k for k = 3..K+1, index k-3
    limit_log: float  # log of lim t_k
    slack: float  # g - f; >= 0 iff the limit is at most one

    def T_over_t(self) -> np.ndarray:
        """T_k / t_k^{k-1} for k = 1..K from the actual times."""
        t = np.asarray(self.times.times)
        L = np.log(t)
        k = np.arange(1, len(t) + 1)
        return np.exp(np.cumsum(L) - (k - 1) * L)


def construct_thresholds(p: float, alpha: float, K: int, tol: float = 1e-12) -> ConstructionState:
    """t_1 = p, t_2 = p exp(alpha (1-p)^2 / p), (t_k / t_{k+1})^{k-1} = gamma_k / gamma_{k-1}."""
    if not (0.0 < p < 1.0 and 0.0 < alpha < 1.0):
        raise ValueError("need p, alpha in (0, 1)")
    if K < 2:
        raise ValueError("need K >= 2")
    g = gammas(p, alpha, K + 1)
    L = np.empty(K)
    L[0] = math.log(p)
    L[1] = L[0] + alpha * (1.0 - p) ** 2 / p
    for k in range(2, K):
        L[k] = L[k - 1] + (math.log(g[k - 2]) - math.log(g[k - 1])) / (k - 1)
    f = _f_side(p, alpha)
    gs = g_series(p, alpha)
    slack = gs.value - f
    if slack < -tol or L[-1] > tol:
        raise LimitExceedsOne(f"thresholds exceed one (slack {slack:.3g})")
    times = np.minimum(np.exp(L), 1.0)
    k = np.arange(3, K + 2, dtype=float)
    mus = p * (1.0 - alpha + alpha * p ** (k - 2)) / (k - 2)
    # lim log t_k = ln p + alpha (1-p)^2/p - g + ln(gamma_inf) telescoped: equals f - g
    return ConstructionState(p, alpha, g[:K], ThresholdSchedule(p, tuple(times)), mus, f - gs.value, slack)


def construction_feasibility(state: ConstructionState, grid: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """t q(t, l) + int_p^t sum_l q for the construction's q on a grid of t (l <= active rank).

    On [t_i, t_{i+1}) the density is q(t, l) = T_i / t^{i+1} for l <= i.
    """
    t = np.asarray(state.times.times)
    K = len(t)
    edges = np.append(t, 1.0)
    logT = np.cumsum(np.log(t))

    def total_density(s):
        s = np.atleast_1d(s)
        i = np.clip(np.searchsorted(edges, s, side="right"), 1, K)
        return i * np.exp(logT[i - 1] - (i + 1) * np.log(s))

    out = []
    for x in grid:
        x = min(max(float(x), t[0]), 1.0)
        i = int(np.clip(np.searchsorted(edges, x, side="right"), 1, K))
        q = math.exp(logT[i - 1] - (i + 1) * math.log(x))
        mass = 0.0
        for j in range(1, i + 1):
            lo, hi = edges[j - 1], min(edges[j], x)
            if hi > lo:
                mass += float(integrate(total_density, lo, hi, tol=tol / K).value)
        out.append(x * q + mass)
    return np.array(out)


# --- closed form for small p ------------------------------------------------------------


def closed_alpha_small_p(p: float, check: bool = True) -> float:
    """1/(e(1-p)) for p <= 1/e, attained by accepting the first best-so-far item after 1/e."""
    if not 0.0 <= p <= 1.0 / math.e + 1e-15:
        raise ValueError("closed form holds only for p <= 1/e")
    value = 1.0 / (math.e * (1.0 - p))
    if check:
        km = max(2, _lbp_kmax(p))
        F = eval_Fk_all(ThresholdSchedule(p, (1.0 / math.e,)), km).per_k
        k = np.arange(1, km + 1)
        ratio = float(np.min(F / (1.0 - p**k)))
        if ratio < value - 1e-9:
            raise ArithmeticError(f"schedule (1/e, 1, ...) reaches only {ratio}")
    return value


# --- lower bound program ------------------------------------------------------------------


def _lbp_kmax(p: float) -> int:
    if p <= 0.0:
        return 2
    return max(2, math.ceil(math.log(0.001) / math.log(p)))


def lbp_denominators(p: float, k_max: int) -> np.ndarray:
    k = np.arange(1, k_max + 1)
    den = 1.0 - p**k
    den[-1] = 1.0
    return den


def lbp_value(schedule: ThresholdSchedule, k_max: int) -> float:
    """min_k F_k / (1 - p^k) over k < k_max, with F_{k_max} / 1 as the last ratio."""
    F = eval_Fk_all(schedule, k_max).per_k
    return float(np.min(F / lbp_denominators(schedule.p, k_max)))


def _softmin(r: np.ndarray, beta: float) -> float:
    m = float(r.min())
    return m - math.log(float(np.sum(np.exp(-beta * (r - m))))) / beta


def _lbp_starts(p: float, km: int) -> list[np.ndarray]:
    starts = [p + (1.0 - p) * np.arange(1, km + 1) / (km + 1)]
    sec = np.ones(km)
    sec[0] = max(p, 1.0 / math.e)
    starts.append(sec)
    if p > 0:
        try:
            st = construct_thresholds(p, alpha_tilde(p) * (1 - 1e-9), max(km, 2))
            starts.append(np.asarray(st.times.times[:km]))
        except LimitExceedsOne:
            pass
    return starts


@dataclass(frozen=True)
class LbpResult:
    value: float
    schedule: ThresholdSchedule
    start_values: tuple[float, ...]


def lbp_lower_bound(p: float, k_max: int | None = None,
                    betas: tuple[float, ...] = (30.0, 100.0, 300.0, 1e3, 3e3, 1e4, 1e5),
                    sweeps_per_beta: int = 40, x_tol: float = 1e-9) -> LbpResult:
    """Max-min over thresholds t_1..t_kmax (t_{kmax+1} = 1) of the truncated dominance ratios.

    Ascent runs on a softened minimum with increasing sharpness; the reported
    value is the exact minimum at the final schedule, so it is a valid lower
    bound whatever the optimizer reached.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("need 0 <= p < 1")
    km = _lbp_kmax(p) if k_max is None else k_max
    if km < 2:
        raise ValueError("need k_max >= 2")
    den = lbp_denominators(p, km)
    best, vals = None, []
    for t0 in _lbp_starts(p, km):
        st = _KernelState(np.clip(t0, p, 1.0), km, 1e-13)
        for beta in betas:
            score = lambda F, b=beta: _softmin(F / den, b)
            cur = score(st.F())
            for _ in range(sweeps_per_beta):
                start = cur
                for s in range(1, km + 1):
                    lo = max(p, st.t[s - 2] if s >= 2 else p)
                    hi = st.upper(s)
                    parts = st.split(s)
                    x, fx = golden_max(lambda x: score(st.F_at(s, x, parts)), lo, hi, x_tol)
                    if fx > score(st.F_at(s, st.t[s - 1], parts)):
                        st.set(s, x)
                cur = score(st.F())
                if cur - start < 1e-10:
                    break
        sched = ThresholdSchedule(p, tuple(st.t))
        v = lbp_value(sched, km)
        vals.append(v)
        if best is None or v > best[0]:
            best = (v, sched)
    return LbpResult(best[0], best[1], tuple(vals))


# --- upper bound program ------------------------------------------------------------------


def ubp_kmax(p: float, N: int) -> int:
    return max(1, math.ceil(math.log(N / (1.0 - p))))


def build_ubp(p: float, N: int, k_max: int) -> LpModel:
    """Dominance LP on N(1-p) equal time cells with local ranks up to k_max.

    Cell i covers ((i-1)/N, i/N]; x[i, l] is the stopping mass there.  The
    factor (1-t)^{j-l} t^l is replaced by its upper bound over the cell.
    """
    h = round(p * N)
    if abs(h - p * N) > 1e-9:
        raise ValueError("p * N must be integral")
    if k_max < 1:
        raise ValueError("need k_max >= 1")
    model = LpModel()
    cols = {}
    for i in range(h + 1, N + 1):
        for ell in range(1, k_max + 1):
            cols[i, ell] = model.add_var(("x", i, ell))
    a = model.add_var("alpha")
    model.objective[a] = 1.0
    earlier: list[int] = []
    for i in range(h + 1, N + 1):
        step = [cols[i, ell] for ell in range(1, k_max + 1)]
        for c in step:
            row = dict.fromkeys(earlier, 1.0)
            row[c] = float(i)
            model.add_row(row, "<=", 1.0)
        earlier.extend(step)
    # coef[i, l, k] = sum_{j=l}^{k} C(j-1, l-1) (i/N)^l (1 - (i-1)/N)^{j-l}
    for k in range(1, k_max + 1):
        row = {a: 1.0 - p**k}
        for i in range(h + 1, N + 1):
            up, down = i / N, 1.0 - (i - 1) / N
            for ell in range(1, k + 1):
                v = sum(math.comb(j - 1, ell - 1) * up**ell * down ** (j - ell) for j in range(ell, k + 1))
                row[cols[i, ell]] = -v
        model.add_row(row, "<=", 0.0)
    return model


def ubp_upper_bound(p: float, N: int, k_max: int | None = None, backend: str = "simplex") -> float:
    km = ubp_kmax(p, N) if k_max is None else k_max
    return float(solve_lp(build_ubp(p, N, km), backend=backend).optimum)


# --- certificates -------------------------------------------------------------------------


class LowerMethod(str, Enum):
    CLOSED_FORM = "ClosedForm1e"
    CONSTRUCTION = "Construction"
    LBP = "LBP"


class UpperMethod(str, Enum):
    CLOSED_FORM = "ClosedForm1e"
    UBP = "UBP"
    ALPHA_STAR = "AlphaStarCap"


@dataclass(frozen=True)
class AlphaCertificate:
    p: float
    lower: float
    upper: float
    method_lower: LowerMethod
    method_upper: UpperMethod
    params: dict = field(default_factory=dict)
    runtime_ms: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper + 1e-12 <= 1.0 + 1e-12:
            raise ValueError(f"inconsistent bounds {self.lower} > {self.upper}")


def certify(p: float, N: int = 300, k_max: int | None = None, backend: str = "simplex") -> AlphaCertificate:
    """Best lower and upper bounds on alpha(p) from every available route."""
    t0 = time.perf_counter()
    lows: list[tuple[float, LowerMethod]] = []
    ups: list[tuple[float, UpperMethod]] = [(cached_alpha_star(), UpperMethod.ALPHA_STAR)]
    if p <= 1.0 / math.e:
        c = closed_alpha_small_p(p)
        lows.append((c, LowerMethod.CLOSED_FORM))
        ups.append((c, UpperMethod.CLOSED_FORM))
    else:
        if p > 0:
            lows.append((alpha_tilde(p) * (1 - 1e-12), LowerMethod.CONSTRUCTION))
        lb = lbp_lower_bound(p, k_max)
        lows.append((lb.value, LowerMethod.LBP))
        km_u = ubp_kmax(p, N)
        ups.append((ubp_upper_bound(p, N, km_u, backend=backend), UpperMethod.UBP))
    lower = max(lows, key=lambda v: v[0])
    upper = min(ups, key=lambda v: v[0])
    params = {"N": N, "k_max": ubp_kmax(p, N) if p > 1.0 / math.e else _lbp_kmax(p)}
    return AlphaCertificate(p, lower[0], upper[0], lower[1], upper[1], params,
                            1000.0 * (time.perf_counter() - t0))
