"""Dense tableau simplex for small and mid-sized LPs.

Maximizes ``c.x + offset`` subject to rows ``a.x <= b`` or ``a.x = b`` with
``x >= 0``.  Pricing is Dantzig's largest coefficient; after a run of
degenerate pivots it switches to Bland's rule, which cannot cycle.  Pass
``exact=True`` to pivot in rationals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable

import numpy as np
from scipy.linalg import lu_factor, lu_solve


class LpError(RuntimeError):
    pass


class Infeasible(LpError):
    pass


class Unbounded(LpError):
    pass


class IterationLimit(LpError):
    pass


@dataclass
class LpModel:
    """Sparse LP: maximize objective . x + offset, rows (coeffs, rel, rhs), x >= 0."""

    var_names: list[Hashable] = field(default_factory=list)
    objective: dict[int, float] = field(default_factory=dict)
    rows: list[tuple[dict[int, float], str, float]] = field(default_factory=list)
    offset: float = 0.0
    _index: dict[Hashable, int] = field(default_factory=dict, repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_var(self, name: Hashable) -> int:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        self._index[name] = len(self.var_names)
        self.var_names.append(name)
        return self._index[name]

    def col(self, name: Hashable) -> int:
        return self._index[name]

    def add_row(self, coeffs: dict[int, float], rel: str, rhs: float) -> int:
        if rel not in ("<=", "="):
            raise ValueError("relation must be '<=' or '='")
        if not np.isfinite(float(rhs)):
            raise ValueError("rhs must be finite")
        row = {c: v for c, v in coeffs.items() if v != 0}
        for c in row:
            if not 0 <= c < self.n_vars:
                raise ValueError(f"unknown column {c}")
        self.rows.append((row, rel, rhs))
        return len(self.rows) - 1

    def dense(self, dtype=float):
        m, n = self.n_rows, self.n_vars
        A = np.zeros((m, n), dtype=dtype)
        for r, (row, _, _) in enumerate(self.rows):
            for c, v in row.items():
                A[r, c] = v
        b = np.array([rhs for _, _, rhs in self.rows], dtype=dtype)
        c = np.zeros(n, dtype=dtype)
        for k, v in self.objective.items():
            c[k] = v
        rels = [rel for _, rel, _ in self.rows]
        return A, b, c, rels

    # plain-text sparse format
    def dumps(self) -> str:
        nnz = []
        for k in sorted(self.objective):
            nnz.append((0, k, self.objective[k]))
        for r, (row, _, _) in enumerate(self.rows, start=1):
            for k in sorted(row):
                nnz.append((r, k, row[k]))
        out = [f"vars {self.n_vars} rows {self.n_rows} maximize", f"offset {float(self.offset):.17g}"]
        out += [f"{r} {k} {float(v):.17g}" for r, k, v in nnz]
        out += [f"{rel} {float(rhs):.17g}" for _, rel, rhs in self.rows]
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str) -> LpModel:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[0] != "vars" or head[2] != "rows" or head[4] != "maximize":
            raise ValueError("line 1: bad header")
        n, m = int(head[1]), int(head[3])
        model = cls()
        for k in range(n):
            model.add_var(k)
        pos = 1
        if lines[pos].startswith("offset"):
            model.offset = float(lines[pos].split()[1])
            pos += 1
        n_nnz = len(lines) - pos - m
        rows: list[dict[int, float]] = [dict() for _ in range(m)]
        for ln_no in range(pos, pos + n_nnz):
            parts = lines[ln_no].split()
            if len(parts) != 3:
                raise ValueError(f"line {ln_no + 1}: expected 'row col coeff'")
            r, k, v = int(parts[0]), int(parts[1]), float(parts[2])
            if r == 0:
                model.objective[k] = v
            else:
                rows[r - 1][k] = v
        for r, ln_no in enumerate(range(pos + n_nnz, len(lines))):
            rel, rhs = lines[ln_no].split()
            model.rows.append((rows[r], rel, float(rhs)))
        return model


@dataclass
class LpSolution:
    optimum: float
    x: np.ndarray
    names: list
    tight_rows: list[int]
    iterations: int

    @property
    def assignment(self) -> dict:
        return {nm: v for nm, v in zip(self.names, self.x)}


def _to_fraction(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(v)


REFRESH_EVERY = 100


class _Tableau:
    """Rows 0..m-1 are constraints, row m is the reduced-cost row (z - c)."""

    def __init__(self, T, basis, exact, eps, max_iter, refresh=None):
        self.T = T
        self.refresh = refresh
        self.basis = basis
        self.exact = exact
        self.eps = 0 if exact else eps
        self.max_iter = max_iter
        self.iterations = 0

    def _entering(self, allowed: int, bland: bool) -> int:
        z = self.T[-1, :allowed]
        if bland:
            for j in range(allowed):
                if z[j] < -self.eps:
                    return j
            return -1
        j = int(np.argmin(z))
        return j if z[j] < -self.eps else -1

    def _leaving(self, j: int) -> int:
        col = self.T[:-1, j]
        rhs = self.T[:-1, -1]
        if self.exact:
            best, best_r = None, -1
            for r in range(len(col)):
                if col[r] <= 0:
                    continue
                ratio = rhs[r] / col[r]
                if best is None or ratio < best or (ratio == best and self.basis[r] < self.basis[best_r]):
                    best, best_r = ratio, r
            return best_r
        cand = np.nonzero(col > self.eps)[0]
        if len(cand) == 0:
            return -1
        ratios = rhs[cand] / col[cand]
        lo = ratios.min()
        ties = cand[ratios <= lo + 1e-12]
        # lowest basic variable index among ties
        return int(ties[np.argmin(np.asarray(self.basis)[ties])])

    def pivot(self, r: int, j: int):
        T = self.T
        T[r] = T[r] / T[r, j]
        colj = T[:, j].copy()
        colj[r] = 0
        nz = np.nonzero(colj)[0]
        if len(nz):
            T[nz] -= np.outer(colj[nz], T[r])
        self.basis[r] = j

    def run(self, allowed: int):
        degenerate = 0
        since = 0
        while True:
            if self.refresh is not None and since >= REFRESH_EVERY:
                self.refresh(self)
                since = 0
            bland = degenerate > 50
            j = self._entering(allowed, bland)
            if j < 0:
                return
            r = self._leaving(j)
            if r < 0:
                raise Unbounded("objective unbounded above")
            if self.iterations >= self.max_iter:
                raise IterationLimit(f"no convergence in {self.max_iter} pivots")
            step = self.T[r, -1]
            self.pivot(r, j)
            self.iterations += 1
            since += 1
            degenerate = degenerate + 1 if step <= self.eps else 0


def _solve_simplex(model: LpModel, exact: bool, eps: float, max_iter: int) -> LpSolution:
    dtype = object if exact else float
    A, b, c, rels = model.dense(dtype=dtype)
    if exact:
        A = np.vectorize(_to_fraction, otypes=[object])(A) if A.size else A
        b = np.array([_to_fraction(v) for v in b], dtype=object)
        c = np.array([_to_fraction(v) for v in c], dtype=object)
    m, n = A.shape
    zero = Fraction(0) if exact else 0.0
    one = Fraction(1) if exact else 1.0

    # normalize rhs >= 0; '<=' rows with b >= 0 get a slack basis, the rest artificials
    slack_cols, art_rows = [], []
    sign = np.ones(m, dtype=int)
    for r in range(m):
        if b[r] < 0:
            sign[r] = -1
        if rels[r] == "<=":
            slack_cols.append(r)
        if rels[r] == "=" or sign[r] < 0:
            art_rows.append(r)
    n_slack, n_art = len(slack_cols), len(art_rows)
    width = n + n_slack + n_art + 1
    T = np.empty((m + 1, width), dtype=dtype)
    T[...] = zero
    basis = [-1] * m
    for r in range(m):
        T[r, :n] = A[r] * sign[r]
        T[r, -1] = b[r] * sign[r]
    for s, r in enumerate(slack_cols):
        T[r, n + s] = one * sign[r]
        if sign[r] > 0:
            basis[r] = n + s
    for a, r in enumerate(art_rows):
        T[r, n + n_slack + a] = one
        basis[r] = n + n_slack + a

    tab = _Tableau(T, basis, exact, eps, max_iter)
    if n_art:
        # phase one: minimize the sum of artificials
        T[-1, :] = zero
        for r in art_rows:
            T[-1, :] -= T[r, :]
        for a in range(n_art):
            T[-1, n + n_slack + a] = zero
        tab.run(width - 1)
        infeas = -T[-1, -1]
        if (infeas > 0) if exact else (infeas > 1e-7 * max(1.0, float(np.max(np.abs(b))) if m else 1.0)):
            raise Infeasible("no feasible point")
        # drive remaining artificials out of the basis
        for r in range(m):
            if basis[r] >= n + n_slack:
                row = T[r, : n + n_slack]
                cand = [j for j in range(n + n_slack) if abs(row[j]) > (0 if exact else eps)]
                if cand:
                    tab.pivot(r, cand[0])
        T[:, n + n_slack : -1] = zero
    T[-1, :] = zero
    T[-1, :n] = -c
    for r in range(m):
        j = basis[r]
        if j < n and T[-1, j] != 0:
            T[-1, :] -= T[-1, j] * T[r, :]
    if exact:
        tab.run(n + n_slack)
    else:
        # rebuild the tableau from the original rows to shed accumulated round-off
        M = np.zeros((m, n + n_slack))
        M[:, :n] = A * sign[:, None]
        for s, r in enumerate(slack_cols):
            M[r, n + s] = sign[r]
        bs = b * sign
        cfull = np.zeros(n + n_slack)
        cfull[:n] = c

        def refresh(tb):
            lu = lu_factor(M[:, tb.basis])
            tb.T[:-1, : n + n_slack] = lu_solve(lu, M)
            tb.T[:-1, n + n_slack : -1] = 0.0
            tb.T[:-1, -1] = lu_solve(lu, bs)
            y = lu_solve(lu, cfull[tb.basis], trans=1)
            tb.T[-1, : n + n_slack] = y @ M - cfull
            tb.T[-1, -1] = y @ bs

        tab.refresh = refresh
        for _ in range(5):
            tab.run(n + n_slack)
            before = tab.iterations
            refresh(tab)
            if T[:-1, -1].min() < -1e-9:
                raise LpError("basis lost feasibility after refresh")
            tab.run(n + n_slack)
            if tab.iterations == before:
                break

    x = np.empty(n, dtype=dtype)
    x[...] = zero
    for r in range(m):
        if basis[r] < n:
            x[basis[r]] = T[r, -1]
    opt = T[-1, -1] + (_to_fraction(model.offset) if exact else model.offset)
    if not exact:
        x = np.maximum(x.astype(float), 0.0)
    act = A.dot(x) if m else np.zeros(0)
    tight = [r for r in range(m) if (act[r] == b[r] if exact else abs(act[r] - b[r]) <= 1e-9 * (1 + abs(b[r])))]
    return LpSolution(opt if exact else float(opt), x, list(model.var_names), tight, tab.iterations)


def _solve_highs(model: LpModel) -> LpSolution:
    from scipy.optimize import linprog
    from scipy.sparse import csr_matrix

    n = model.n_vars
    c = np.zeros(n)
    for k, v in model.objective.items():
        c[k] = v
    ub_r, ub_c, ub_v, ub_b, eq_r, eq_c, eq_v, eq_b = [], [], [], [], [], [], [], []
    order = []
    for row, rel, rhs in model.rows:
        if rel == "<=":
            r = len(ub_b)
            ub_b.append(rhs)
            for k, v in row.items():
                ub_r.append(r); ub_c.append(k); ub_v.append(v)
        else:
            r = len(eq_b)
            eq_b.append(rhs)
            for k, v in row.items():
                eq_r.append(r); eq_c.append(k); eq_v.append(v)
        order.append(rel)
    kw = {}
    if ub_b:
        kw["A_ub"] = csr_matrix((ub_v, (ub_r, ub_c)), shape=(len(ub_b), n))
        kw["b_ub"] = np.array(ub_b)
    if eq_b:
        kw["A_eq"] = csr_matrix((eq_v, (eq_r, eq_c)), shape=(len(eq_b), n))
        kw["b_eq"] = np.array(eq_b)
    res = linprog(-c, bounds=(0, None), method="highs", **kw)
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0:
        raise IterationLimit(res.message)
    x = np.maximum(res.x, 0.0)
    A, b, _, _ = model.dense()
    act = A @ x
    tight = [r for r in range(model.n_rows) if abs(act[r] - b[r]) <= 1e-9 * (1 + abs(b[r]))]
    return LpSolution(float(c @ x + model.offset), x, list(model.var_names), tight, int(res.nit))


def solve_lp(model: LpModel, *, exact: bool = False, backend: str = "simplex",
             eps: float = 1e-11, max_iter: int = 200_000) -> LpSolution:
    """Solve ``model``; ``backend='highs'`` delegates to scipy for large cross-checks."""
    if backend == "highs":
        return _solve_highs(model)
    if backend != "simplex":
        raise ValueError(f"unknown backend {backend!r}")
    return _solve_simplex(model, exact, eps, max_iter)
