import numpy as np
import pytest

from branchgrid.cone import (ConeProgram, NumericalFailure, ProgramBuilder,
                             dump_program, primal_residuals, solve_cone)


def test_bound_active_lp():
    b = ProgramBuilder()
    b.var("x", lb=3.0, cost=1.0)
    sol = solve_cone(b.build())
    assert abs(sol.x[0] - 3.0) <= 1e-7
    assert sol.status == "optimal"
    assert sol.residuals.worst <= 1e-7


def test_rotated_cone_boundary():
    # min t s.t. 2 t v >= w^2 with v = w = 1  ->  t = 0.5
    b = ProgramBuilder()
    t = b.var("t", lb=0.0, cost=1.0)
    v = b.var("v", lb=1.0, ub=1.0)
    w = b.var("w", lb=1.0, ub=1.0)
    b.rsoc(t, v, [w])
    sol = solve_cone(b.build())
    assert abs(sol.x[t] - 0.5) <= 1e-6


def test_standard_cone():
    b = ProgramBuilder()
    y = b.var("y", cost=1.0)
    a1 = b.var("a1", lb=3.0, ub=3.0)
    a2 = b.var("a2", lb=4.0, ub=4.0)
    b.soc(y, [a1, a2])
    sol = solve_cone(b.build())
    assert abs(sol.x[y] - 5.0) <= 1e-6


def test_equality_and_objective_constant():
    # min 2x + 7 s.t. x + y = 5, x >= 0, y >= 0  ->  x = 0, objective 7
    b = ProgramBuilder()
    x = b.var("x", lb=0.0, cost=2.0)
    y = b.var("y", lb=0.0)
    b.eq([(x, 1.0), (y, 1.0)], 5.0)
    b.add_const_cost(7.0)
    sol = solve_cone(b.build())
    assert abs(sol.x[x]) <= 1e-6
    assert abs(sol.objective - 7.0) <= 1e-5


def test_infeasible_raises():
    b = ProgramBuilder()
    x = b.var("x", lb=0.0, ub=1.0, cost=1.0)
    b.eq([(x, 1.0)], 5.0)
    with pytest.raises(NumericalFailure):
        solve_cone(b.build())


def test_deterministic_bitwise():
    def run():
        b = ProgramBuilder()
        t = b.var("t", lb=0.0, cost=1.0)
        v = b.var("v", lb=0.7, ub=1.3)
        w = b.var("w", lb=1.0, ub=1.0)
        b.rsoc(t, v, [w])
        b.ub_row([(t, 1.0), (v, -0.2)], 1.0)
        return solve_cone(b.build()).x.tobytes()
    assert run() == run()


def test_primal_residuals_flag_violations():
    b = ProgramBuilder()
    x = b.var("x", lb=0.0, ub=2.0)
    y = b.var("y", lb=0.0)
    b.eq([(x, 1.0), (y, 1.0)], 2.0)
    b.soc(x, [y])
    program = b.build()
    eq, ineq, cone = primal_residuals(program, np.array([0.5, 2.0]))
    assert eq > 0.1          # 0.5 + 2.0 != 2.0
    assert cone > 0.1        # 0.5 < |2.0|
    eq, ineq, cone = primal_residuals(program, np.array([3.0, -1.0]))
    assert ineq > 0.1        # x above ub, y below lb


def test_dump_contains_structure():
    b = ProgramBuilder()
    t = b.var("t", lb=0.0, cost=1.0)
    v = b.var("v", lb=1.0, ub=1.0)
    w = b.var("w")
    b.rsoc(t, v, [w])
    b.eq([(w, 1.0)], 1.0)
    text = dump_program(b.build())
    assert "vars 3" in text
    assert "rsoc 0 1 2" in text
    assert "eq 1.0 2:1.0" in text


def test_cone_group_validation():
    with pytest.raises(ValueError, match="at least 2"):
        ConeProgram(n=1, c=np.zeros(1), c0=0.0,
                    eq_rows=np.zeros(0, dtype=np.int64),
                    eq_cols=np.zeros(0, dtype=np.int64), eq_vals=np.zeros(0),
                    b_eq=np.zeros(0), ub_rows=np.zeros(0, dtype=np.int64),
                    ub_cols=np.zeros(0, dtype=np.int64), ub_vals=np.zeros(0),
                    b_ub=np.zeros(0), lb=np.full(1, -np.inf),
                    ub=np.full(1, np.inf), cones=(("soc", (0,)),))
