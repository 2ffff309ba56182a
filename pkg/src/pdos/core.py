"""Domain types and exact probability kernels for sample-driven optimal stopping.

Items carry values ``Y_1 >= Y_2 >= ... >= Y_N``; a fraction of them is seen
up front as a history set (only relative ranks are visible) and the rest
arrive online in random order.  Everything here is a pure function of its
arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12
EXACT_BINOM_MAX = 60


class ProbabilityError(ValueError):
    """A computed probability left [0, 1] by more than round-off."""


def clamp_prob(x: float, tol: float = PROB_TOL) -> float:
    if 0.0 <= x <= 1.0:
        return x
    if -tol <= x < 0.0:
        return 0.0
    if 1.0 < x <= 1.0 + tol:
        return 1.0
    raise ProbabilityError(f"probability {x!r} outside [0, 1]")


# --- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    """Non-increasing values plus the reward for selecting nothing.

    ``tail_step`` marks an arithmetic continuation ``Y_{N+m} = Y_N - m*tail_step``
    (minimum-rank style objectives); ``default_tail`` is then unused.
    """

    values: tuple[float, ...]
    default_tail: float = 0.0
    tail_step: float | None = None

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "default_tail", float(self.default_tail))
        if not vals:
            raise ValueError("instance needs at least one value")
        for a, b in zip(vals, vals[1:]):
            if b > a:
                raise ValueError("values must be non-increasing")
        if self.default_tail > vals[-1]:
            raise ValueError("default_tail must not exceed the last value")
        if self.tail_step is not None and self.tail_step < 0:
            raise ValueError("tail_step must be non-negative")

    @property
    def N(self) -> int:
        return len(self.values)

    def value(self, j: int) -> float:
        """Y_j with 1-based rank; ranks past N give the tail."""
        if j <= self.N:
            return self.values[j - 1]
        if self.tail_step is not None:
            return self.values[-1] - (j - self.N) * self.tail_step
        return self.default_tail

    def diffs(self) -> np.ndarray:
        """d_k = Y_k - Y_{k+1} for k = 1..N (last uses the tail)."""
        y = np.array(self.values + (self.value(self.N + 1),))
        return y[:-1] - y[1:]

    @property
    def is_adversarial(self) -> bool:
        return self.default_tail == 0.0 and self.values[-1] >= 0.0 and self.tail_step is None

    @classmethod
    def step(cls, k: int, N: int) -> Instance:
        """0/1 instance with k ones followed by zeros."""
        if not 1 <= k <= N:
            raise ValueError("need 1 <= k <= N")
        return cls(tuple([1.0] * k + [0.0] * (N - k)))

    @classmethod
    def secretary(cls, N: int) -> Instance:
        return cls.step(1, N)


@dataclass(frozen=True)
class Independent:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise ValueError("need 0 <= p < 1")


@dataclass(frozen=True)
class Dependent:
    h: int
    N: int

    def __post_init__(self):
        if not 0 <= self.h < self.N:
            raise ValueError("need 0 <= h < N")

    @property
    def p(self) -> float:
        return self.h / self.N

    @classmethod
    def from_rate(cls, p: float, N: int) -> Dependent:
        return cls(int(math.floor(p * N + 1e-9)), N)


SamplingModel = Independent | Dependent


@dataclass(frozen=True)
class ThresholdSchedule:
    """Accept an l-local maximum arriving at time >= t_l.

    ``tail_is_one`` means t_i = 1 for i > K (never accept deeper local ranks).
    """

    p: float
    times: tuple[float, ...]
    tail_is_one: bool = True

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if not 0.0 <= self.p < 1.0:
            raise ValueError("need 0 <= p < 1")
        prev = self.p
        for t in ts:
            if t < prev - 1e-15 or t > 1.0:
                raise ValueError("times must satisfy p <= t_1 <= ... <= t_K <= 1")
            prev = t

    @property
    def K(self) -> int:
        return len(self.times)

    def padded(self, n: int) -> np.ndarray:
        """First n thresholds, filling past K with ones."""
        t = np.ones(n)
        m = min(n, self.K)
        t[:m] = self.times[:m]
        return t

    def to_json(self) -> dict:
        return {"p": self.p, "times": list(self.times), "tail_is_one": self.tail_is_one}

    @classmethod
    def from_json(cls, d: dict) -> ThresholdSchedule:
        return cls(float(d["p"]), tuple(d["times"]), bool(d.get("tail_is_one", True)))


# --- combinatorics ------------------------------------------------------------


def binom(n: int, k: int) -> float:
    if k < 0 or k > n or n < 0:
        return 0.0
    if n <= EXACT_BINOM_MAX:
        return float(math.comb(n, k))
    return math.exp(math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1))


def _log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def negbin_le(k: int, ell: int, t: float) -> float:
    """P(the ell-th success of a Bernoulli(t) stream occurs by trial k)."""
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    if k < ell:
        return 0.0
    if t == 0.0:
        return 0.0
    # term_j = C(j-1, ell-1) (1-t)^{j-ell} t^ell, advanced by ratio
    term = t**ell
    total = term
    q = 1.0 - t
    for j in range(ell + 1, k + 1):
        term *= q * (j - 1) / (j - ell)
        total += term
    return clamp_prob(total)


def local_rank_prob(N: int, i: int, j: int, ell: int) -> float:
    """P(item of global rank j is ell-th best so far | it arrives at step i)."""
    if not (1 <= ell <= i <= N and 1 <= j <= N):
        raise ValueError("need 1 <= ell <= i <= N and 1 <= j <= N")
    if ell > j or i - ell > N - j:
        return 0.0
    if N <= EXACT_BINOM_MAX:
        num = math.comb(j - 1, ell - 1) * math.comb(N - j, i - ell)
        return clamp_prob(num / math.comb(N - 1, i - 1))
    lg = _log_binom(j - 1, ell - 1) + _log_binom(N - j, i - ell) - _log_binom(N - 1, i - 1)
    return clamp_prob(math.exp(lg))


def local_rank_prob_exact(N: int, i: int, j: int, ell: int) -> Fraction:
    if ell > j or i - ell > N - j:
        return Fraction(0)
    return Fraction(math.comb(j - 1, ell - 1) * math.comb(N - j, i - ell), math.comb(N - 1, i - 1))


def opt_dist_dependent(N: int, h: int, j: int) -> float:
    """P(best online item has global rank j) when the history holds h of N items."""
    if not 0 <= h < N:
        raise ValueError("need 0 <= h < N")
    if not 1 <= j <= N:
        raise ValueError("need 1 <= j <= N")
    if j > h + 1:
        return 0.0
    prod = 1.0
    for s in range(j - 1):
        prod *= (h - s) / (N - s)
    return clamp_prob(prod * (N - h) / (N - j + 1))


def opt_dist_dependent_cumulative(N: int, h: int) -> np.ndarray:
    """Partial sums D_k = sum_{j<=k} opt_dist_dependent(N, h, j) for k = 1..h+1."""
    out = np.empty(h + 1)
    prod, acc = 1.0, 0.0
    for j in range(1, h + 2):
        acc += prod * (N - h) / (N - j + 1)
        out[j - 1] = acc
        prod *= (h - j + 1) / (N - j + 1)
    return np.minimum(out, 1.0)


def opt_dist_independent(p: float, j: int) -> float:
    if not 0.0 <= p < 1.0:
        raise ValueError("need 0 <= p < 1")
    if j < 1:
        raise ValueError("need j >= 1")
    return (1.0 - p) * p ** (j - 1)


# --- exact optimum by backward induction ----------------------------------------


def _accept_values(instance: Instance, i: int, exact: bool):
    N = instance.N
    if exact:
        ys = [Fraction(v).limit_denominator(10**12) if not isinstance(v, Fraction) else v
              for v in instance.values]
        scale = Fraction(i, N)
        return [scale * sum(ys[j - 1] * local_rank_prob_exact(N, i, j, ell) for j in range(ell, N + 1))
                for ell in range(1, i + 1)]
    ys = instance.values
    return [(i / N) * sum(ys[j - 1] * local_rank_prob(N, i, j, ell) for j in range(ell, N + 1))
            for ell in range(1, i + 1)]


def dp_optimal(instance: Instance, h: int, exact: bool = False):
    """Optimal expected reward given h history items, by backward induction.

    The state is (step i, local rank ell).  The accept value is the posterior
    mean of Y given an ell-local item at step i.  ``exact=True`` runs in
    rationals.
    """
    N = instance.N
    if not 0 <= h <= N:
        raise ValueError("need 0 <= h <= N")
    tail = instance.value(N + 1)
    V = Fraction(tail).limit_denominator(10**12) if exact else tail
    for i in range(N, h, -1):
        acc = _accept_values(instance, i, exact)
        V = sum(max(a, V) for a in acc) / i
    return V


def expected_online_max_dependent(instance: Instance, h: int) -> float:
    """E[max online value] with h of N items in the history."""
    N = instance.N
    return sum(instance.values[j - 1] * opt_dist_dependent(N, h, j) for j in range(1, h + 2))


def expected_online_max_independent(instance: Instance, p: float) -> float:
    """E[max online value] with independent sampling; empty online set pays the tail."""
    N = instance.N
    tot = sum(instance.values[j - 1] * opt_dist_independent(p, j) for j in range(1, N + 1))
    return tot + instance.default_tail * p**N
