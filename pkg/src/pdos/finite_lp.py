"""Finite linear programs over stopping rules and their executable policies.

A stopping rule is described by x[i, l], the probability of stopping at step
i on an item that is the l-th best seen so far.  Steps 1..h are the history,
so only h < i <= N carry variables.  Any x satisfying

    i * x[i, l] + sum_{j < i} sum_s x[j, s] <= 1

is realized by accepting an l-local item at step i with probability
i * x[i, l] / (1 - sum_{j < i} sum_s x[j, s]).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import Instance, local_rank_prob, local_rank_prob_exact, opt_dist_dependent_cumulative
from .simplex import LpModel, LpSolution, solve_lp

FEAS_TOL = 1e-9


def _rank_weights(N: int, i: int, exact: bool = False):
    """W[l-1, j-1] = P(rank j and l-local | stop at step i on an l-local item) scaled to x.

    P(ALG picks Y_j) = sum_{i,l} x[i,l] * W_i[l-1, j-1].
    """
    if exact:
        return [[Fraction(i, N) * local_rank_prob_exact(N, i, j, ell) for j in range(1, N + 1)]
                for ell in range(1, i + 1)]
    W = np.zeros((i, N))
    for ell in range(1, i + 1):
        for j in range(ell, N - (i - ell) + 1):
            W[ell - 1, j - 1] = (i / N) * local_rank_prob(N, i, j, ell)
    return W


def _add_feasibility(model: LpModel, h: int, N: int, ell_max=None):
    cols = {}
    for i in range(h + 1, N + 1):
        for ell in range(1, (i if ell_max is None else min(i, ell_max)) + 1):
            cols[i, ell] = model.add_var(("x", i, ell))
    earlier: list[int] = []
    for i in range(h + 1, N + 1):
        step_cols = [cols[i, ell] for ell in range(1, (i if ell_max is None else min(i, ell_max)) + 1)]
        for c in step_cols:
            row = {e: 1.0 for e in earlier}
            row[c] = float(i)
            model.add_row(row, "<=", 1.0)
        earlier.extend(step_cols)
    return cols


def build_known_values_lp(instance: Instance, h: int, exact: bool = False) -> LpModel:
    """LP whose optimum is the best expected reward given h history items."""
    N = instance.N
    if not 0 <= h < N:
        raise ValueError("need 0 <= h < N")
    model = LpModel()
    cols = _add_feasibility(model, h, N)
    tail = instance.value(N + 1)
    if exact:
        ys = [Fraction(v) for v in instance.values]
        t = Fraction(tail)
    else:
        ys = np.asarray(instance.values)
        t = tail
    for i in range(h + 1, N + 1):
        W = _rank_weights(N, i, exact)
        for ell in range(1, i + 1):
            if exact:
                coef = sum(w * y for w, y in zip(W[ell - 1], ys)) - t
            else:
                coef = float(W[ell - 1] @ ys) - t
            if coef != 0:
                model.objective[cols[i, ell]] = coef
    model.offset = t
    return model


def _opt_cumulative_exact(N: int, h: int) -> list[Fraction]:
    out, prod, acc = [], Fraction(1), Fraction(0)
    for j in range(1, h + 2):
        acc += prod * Fraction(N - h, N - j + 1)
        out.append(acc)
        prod *= Fraction(h - j + 1, N - j + 1)
    return out


def build_sdlp(N: int, h: int, exact: bool = False) -> LpModel:
    """Stochastic-dominance LP; its optimum is the best worst-case ratio for N items, h in history.

    Variables are x[i, l] and alpha.  For k = 1..h+1 the rows read
    D_k * alpha - sum_{j<=k} P(ALG picks Y_j) <= 0, with D_k the chance that the
    online maximum has rank at most k.  ``exact`` keeps every coefficient rational.
    """
    if not 0 <= h < N:
        raise ValueError("need 0 <= h < N")
    model = LpModel()
    cols = _add_feasibility(model, h, N)
    a = model.add_var("alpha")
    model.objective[a] = 1.0
    K = h + 1
    if exact:
        D = _opt_cumulative_exact(N, h)
        cum = {}
        for i in range(h + 1, N + 1):
            W = _rank_weights(N, i, exact=True)
            cum[i] = [[sum(W[ell][:k], Fraction(0)) for k in range(1, K + 1)] for ell in range(i)]
    else:
        D = opt_dist_dependent_cumulative(N, h)
        cum = {i: np.cumsum(_rank_weights(N, i)[:, :K], axis=1) for i in range(h + 1, N + 1)}
    for k in range(1, K + 1):
        row = {a: D[k - 1] if exact else float(D[k - 1])}
        for i in range(h + 1, N + 1):
            for ell in range(1, min(i, k) + 1):
                v = cum[i][ell - 1][k - 1]
                if v:
                    row[cols[i, ell]] = -v if exact else -float(v)
        model.add_row(row, "<=", 0.0)
    return model


@dataclass(frozen=True)
class StoppingRuleMatrix:
    h: int
    N: int
    x: np.ndarray  # shape (N+1, N+1); x[i, l] for h < i <= N, 1 <= l <= i

    def __post_init__(self):
        x = self.x
        if x.shape != (self.N + 1, self.N + 1):
            raise ValueError("x must have shape (N+1, N+1)")
        if np.any(x < -FEAS_TOL):
            raise ValueError("negative stop probability")
        before = 0.0
        for i in range(self.h + 1, self.N + 1):
            worst = i * x[i, 1 : i + 1].max() + before
            if worst > 1 + FEAS_TOL:
                raise ValueError(f"feasibility violated at step {i}")
            before += x[i, 1 : i + 1].sum()
        if before > 1 + FEAS_TOL:
            raise ValueError("total stop probability exceeds one")

    def accept_prob(self) -> np.ndarray:
        """Conditional acceptance probability of an l-local item at step i."""
        out = np.zeros_like(self.x)
        before = 0.0
        for i in range(self.h + 1, self.N + 1):
            rem = 1.0 - before
            if rem > FEAS_TOL:
                out[i, 1 : i + 1] = np.clip(i * self.x[i, 1 : i + 1] / rem, 0.0, 1.0)
            before += self.x[i, 1 : i + 1].sum()
        return out

    def rank_distribution(self) -> np.ndarray:
        """P(ALG picks Y_j), j = 1..N."""
        P = np.zeros(self.N)
        for i in range(self.h + 1, self.N + 1):
            P += self.x[i, 1 : i + 1] @ _rank_weights(self.N, i)
        return P

    def value(self, instance: Instance) -> float:
        P = self.rank_distribution()
        return float(P @ np.asarray(instance.values) + (1 - P.sum()) * instance.value(self.N + 1))


def extract_policy(assignment: dict, h: int, N: int) -> StoppingRuleMatrix:
    x = np.zeros((N + 1, N + 1))
    for key, v in assignment.items():
        if isinstance(key, tuple) and key[0] == "x":
            _, i, ell = key
            x[i, ell] = max(float(v), 0.0)
    return StoppingRuleMatrix(h, N, x)


def solve_known(instance: Instance, h: int, **kw) -> tuple[float, StoppingRuleMatrix]:
    sol = solve_lp(build_known_values_lp(instance, h, kw.get("exact", False)), **kw)
    if kw.get("exact"):
        return sol.optimum, extract_policy({k: float(v) for k, v in sol.assignment.items()}, h, instance.N)
    return sol.optimum, extract_policy(sol.assignment, h, instance.N)


def solve_sdlp(N: int, h: int, **kw) -> tuple[float, StoppingRuleMatrix, LpSolution]:
    sol = solve_lp(build_sdlp(N, h, exact=kw.get("exact", False)), **kw)
    assign = {k: float(v) for k, v in sol.assignment.items()}
    return float(sol.optimum), extract_policy(assign, h, N), sol
