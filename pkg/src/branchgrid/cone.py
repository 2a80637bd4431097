"""Linear-objective second-order cone programs and a verified conic solve.

The in-memory form is explicit (objective vector, constraint triplets, cone
index groups over variables) so programs can be dumped and cross-checked.
Solving delegates to the Clarabel primal-dual interior-point solver; primal
residuals are re-verified here against this representation and a solve that
cannot certify the requested tolerance raises instead of returning.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import clarabel
import numpy as np
import scipy.sparse as sp

SOC = "soc"    # x[g0] >= || x[g1:] ||
RSOC = "rsoc"  # 2 x[g0] x[g1] >= sum x[g2:]^2, x[g0] >= 0, x[g1] >= 0

_SQRT2 = np.sqrt(2.0)

DEFAULT_TOL = 1e-7
_MAX_ITERS = 200


class NumericalFailure(RuntimeError):
    """The interior-point solve could not certify the requested accuracy."""


@dataclass(frozen=True)
class ConeProgram:
    n: int
    c: np.ndarray                  # (n,) objective coefficients
    c0: float                      # objective constant
    eq_rows: np.ndarray            # (nnz,) row index per equality triplet
    eq_cols: np.ndarray
    eq_vals: np.ndarray
    b_eq: np.ndarray               # (m_eq,)
    ub_rows: np.ndarray            # triplets of A_ub x <= b_ub
    ub_cols: np.ndarray
    ub_vals: np.ndarray
    b_ub: np.ndarray
    lb: np.ndarray                 # (n,) -inf allowed
    ub: np.ndarray                 # (n,) +inf allowed
    cones: tuple[tuple[str, tuple[int, ...]], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        for kind, group in self.cones:
            if kind not in (SOC, RSOC):
                raise ValueError(f"unknown cone kind {kind!r}")
            if len(group) < 2:
                raise ValueError("cone group needs at least 2 members")
            if any(not 0 <= i < self.n for i in group):
                raise ValueError("cone index out of range")


class ProgramBuilder:
    """Incremental assembly of a ConeProgram."""

    def __init__(self):
        self._names: list[str] = []
        self._cost: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._c0 = 0.0
        self._eq: list[tuple[int, int, float]] = []
        self._b_eq: list[float] = []
        self._ineq: list[tuple[int, int, float]] = []
        self._b_ub: list[float] = []
        self._cones: list[tuple[str, tuple[int, ...]]] = []

    def var(self, name: str, lb: float = -np.inf, ub: float = np.inf,
            cost: float = 0.0) -> int:
        self._names.append(name)
        self._cost.append(float(cost))
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        return len(self._names) - 1

    def add_cost(self, idx: int, coef: float) -> None:
        self._cost[idx] += float(coef)

    def add_const_cost(self, value: float) -> None:
        self._c0 += float(value)

    def eq(self, terms: list[tuple[int, float]], rhs: float) -> None:
        row = len(self._b_eq)
        self._eq.extend((row, int(i), float(v)) for i, v in terms if v != 0.0)
        self._b_eq.append(float(rhs))

    def ub_row(self, terms: list[tuple[int, float]], rhs: float) -> None:
        row = len(self._b_ub)
        self._ineq.extend((row, int(i), float(v)) for i, v in terms if v != 0.0)
        self._b_ub.append(float(rhs))

    def soc(self, head: int, tail: list[int]) -> None:
        self._cones.append((SOC, (int(head), *map(int, tail))))

    def rsoc(self, u: int, v: int, w: list[int]) -> None:
        self._cones.append((RSOC, (int(u), int(v), *map(int, w))))

    def build(self) -> ConeProgram:
        def triplets(rows):
            if not rows:
                return (np.zeros(0, dtype=np.int64),) * 2 + (np.zeros(0),)
            r, c, v = zip(*rows)
            return np.array(r, dtype=np.int64), np.array(c, dtype=np.int64), np.array(v)

        eq_r, eq_c, eq_v = triplets(self._eq)
        ub_r, ub_c, ub_v = triplets(self._ineq)
        return ConeProgram(
            n=len(self._names), c=np.array(self._cost), c0=self._c0,
            eq_rows=eq_r, eq_cols=eq_c, eq_vals=eq_v, b_eq=np.array(self._b_eq),
            ub_rows=ub_r, ub_cols=ub_c, ub_vals=ub_v, b_ub=np.array(self._b_ub),
            lb=np.array(self._lb), ub=np.array(self._ub),
            cones=tuple(self._cones), names=tuple(self._names))


@dataclass(frozen=True)
class Residuals:
    eq: float       # max |Ax - b|, scaled by 1 + max|b|
    ineq: float     # max inequality/bound violation
    cone: float     # max cone violation
    dual: float     # solver-reported dual residual
    gap: float      # |primal - dual objective| / (1 + |primal|)

    @property
    def worst(self) -> float:
        return max(self.eq, self.ineq, self.cone, self.dual, self.gap)


@dataclass(frozen=True)
class ConeSolution:
    x: np.ndarray
    objective: float  # includes the constant term
    status: str
    residuals: Residuals
    iterations: int


def primal_residuals(program: ConeProgram, x: np.ndarray) -> tuple[float, float, float]:
    """(eq, ineq+bounds, cone) violation magnitudes of a candidate point."""
    if program.b_eq.size:
        ax = np.bincount(program.eq_rows, weights=program.eq_vals * x[program.eq_cols],
                         minlength=program.b_eq.size)
        eq = float(np.max(np.abs(ax - program.b_eq)) / (1.0 + np.max(np.abs(program.b_eq))))
    else:
        eq = 0.0
    ineq = 0.0
    if program.b_ub.size:
        ax = np.bincount(program.ub_rows, weights=program.ub_vals * x[program.ub_cols],
                         minlength=program.b_ub.size)
        ineq = float(np.max(np.maximum(ax - program.b_ub, 0.0))
                     / (1.0 + np.max(np.abs(program.b_ub))))
    finite_lb = np.isfinite(program.lb)
    finite_ub = np.isfinite(program.ub)
    if finite_lb.any():
        ineq = max(ineq, float(np.max(np.maximum(program.lb[finite_lb] - x[finite_lb], 0.0))))
    if finite_ub.any():
        ineq = max(ineq, float(np.max(np.maximum(x[finite_ub] - program.ub[finite_ub], 0.0))))
    cone = 0.0
    for kind, group in program.cones:
        g = x[list(group)]
        if kind == SOC:
            viol = np.linalg.norm(g[1:]) - g[0]
        else:
            viol = max(np.sum(g[2:] ** 2) - 2.0 * g[0] * g[1], -g[0], -g[1])
        cone = max(cone, float(viol) / (1.0 + float(np.abs(g).max(initial=0.0))))
    return eq, ineq, cone


def _standard_form(program: ConeProgram):
    """Rewrite to min c'x s.t. Ax + s = b with s in (Zero, Nonneg, SOC...).

    Fixed variables (lb == ub) join the equality block; finite bounds and
    linear inequalities fill the nonnegative block; each cone group becomes
    one second-order cone (rotated cones via the (u+v, u-v, sqrt2*w) map).
    """
    n = program.n
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    b: list[float] = []
    cones: list = []
    nrow = 0

    fixed = [(i, float(program.lb[i])) for i in range(n)
             if np.isfinite(program.lb[i]) and program.lb[i] == program.ub[i]]
    m_eq = program.b_eq.size + len(fixed)
    if m_eq:
        rows.extend(int(r) for r in program.eq_rows)
        cols.extend(int(c) for c in program.eq_cols)
        vals.extend(float(v) for v in program.eq_vals)
        b.extend(program.b_eq)
        r = program.b_eq.size
        for i, v in fixed:
            rows.append(r); cols.append(i); vals.append(1.0); b.append(v)
            r += 1
        cones.append(clarabel.ZeroConeT(m_eq))
        nrow = m_eq

    n_l = 0
    if program.b_ub.size:
        rows.extend(nrow + int(r) for r in program.ub_rows)
        cols.extend(int(c) for c in program.ub_cols)
        vals.extend(float(v) for v in program.ub_vals)
        b.extend(program.b_ub)
        nrow += program.b_ub.size
        n_l += program.b_ub.size
    for i in range(n):
        lo, hi = program.lb[i], program.ub[i]
        if np.isfinite(lo) and lo == hi:
            continue
        if np.isfinite(hi):
            rows.append(nrow); cols.append(i); vals.append(1.0); b.append(float(hi))
            nrow += 1; n_l += 1
        if np.isfinite(lo):
            rows.append(nrow); cols.append(i); vals.append(-1.0); b.append(-float(lo))
            nrow += 1; n_l += 1
    if n_l:
        cones.append(clarabel.NonnegativeConeT(n_l))

    for kind, group in program.cones:
        if kind == SOC:
            for idx in group:
                rows.append(nrow); cols.append(idx); vals.append(-1.0); b.append(0.0)
                nrow += 1
        else:
            u, v, *w = group
            rows.append(nrow); cols.append(u); vals.append(-1.0)
            rows.append(nrow); cols.append(v); vals.append(-1.0)
            b.append(0.0); nrow += 1
            rows.append(nrow); cols.append(u); vals.append(-1.0)
            rows.append(nrow); cols.append(v); vals.append(1.0)
            b.append(0.0); nrow += 1
            for idx in w:
                rows.append(nrow); cols.append(idx); vals.append(-_SQRT2); b.append(0.0)
                nrow += 1
        cones.append(clarabel.SecondOrderConeT(len(group)))

    A = sp.csc_matrix((vals, (rows, cols)), shape=(nrow, n))
    P = sp.csc_matrix((n, n))
    return P, np.ascontiguousarray(program.c, dtype=np.float64), A, np.array(b), cones


def solve_cone(program: ConeProgram, tol: float = DEFAULT_TOL) -> ConeSolution:
    """Solve to certified accuracy `tol`; deterministic for fixed inputs.

    Raises NumericalFailure when the iteration cap is reached or the returned
    point fails the residual re-check.
    """
    P, q, A, b, cones = _standard_form(program)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = _MAX_ITERS
    settings.tol_feas = min(tol, 1e-8)
    settings.tol_gap_rel = min(tol, 1e-8)
    settings.tol_gap_abs = min(tol, 1e-8)
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if status != "Solved":
        raise NumericalFailure(
            f"conic solve ended with status {status!r} "
            f"(iteration cap {_MAX_ITERS})")

    x = np.asarray(sol.x, dtype=np.float64)
    eq, ineq, cone = primal_residuals(program, x)
    primal_obj = float(program.c @ x)
    gap = abs(sol.obj_val - sol.obj_val_dual) / (1.0 + abs(primal_obj))
    res = Residuals(eq=eq, ineq=ineq, cone=cone, dual=float(sol.r_dual),
                    gap=float(gap))
    if res.worst > tol:
        raise NumericalFailure(
            f"solution residuals {res} exceed tolerance {tol:g} "
            f"(iteration cap {_MAX_ITERS})")
    return ConeSolution(x=x, objective=primal_obj + program.c0,
                        status="optimal", residuals=res,
                        iterations=int(sol.iterations))


def dump_program(program: ConeProgram) -> str:
    """Plain-text dump for external cross-checking."""
    out = io.StringIO()
    out.write(f"vars {program.n}\n")
    out.write(f"const {float(program.c0)!r}\n")
    for i in range(program.n):
        name = program.names[i] if program.names else f"x{i}"
        out.write(f"var {i} {name} lb={float(program.lb[i])!r} "
                  f"ub={float(program.ub[i])!r} cost={float(program.c[i])!r}\n")
    for row in range(program.b_eq.size):
        mask = program.eq_rows == row
        terms = " ".join(f"{c}:{float(v)!r}" for c, v in
                         zip(program.eq_cols[mask], program.eq_vals[mask]))
        out.write(f"eq {float(program.b_eq[row])!r} {terms}\n")
    for row in range(program.b_ub.size):
        mask = program.ub_rows == row
        terms = " ".join(f"{c}:{float(v)!r}" for c, v in
                         zip(program.ub_cols[mask], program.ub_vals[mask]))
        out.write(f"le {float(program.b_ub[row])!r} {terms}\n")
    for kind, group in program.cones:
        out.write(f"{kind} {' '.join(str(i) for i in group)}\n")
    return out.getvalue()
