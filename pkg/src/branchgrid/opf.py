"""Branch-flow SOCP dispatch: single-period OPF around fixed battery powers,
the free-battery variant used by the myopic baseline, and the time-coupled
perfect-information relaxation.

Network quantities are per-unit inside the cone program; device data and the
reported solution are kW/kvar. The quadratic fuel cost enters through rotated
epigraph cones, and every bus carries penalized slack injections so the
program is feasible for any action.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cone import (ConeProgram, ConeSolution, NumericalFailure, ProgramBuilder,
                   Residuals, solve_cone, DEFAULT_TOL)
from .grid import (DeviceSet, ExogenousDay, NetworkTopology, ScenarioConfig,
                   ValidationError, SOLAR, WIND)

EXACTNESS_ALARM = 1e-5


@dataclass(frozen=True)
class OpfInstance:
    """One period's inputs with battery powers fixed by the agent.

    bess_power is the signed net injection per device (kW, positive =
    discharge). prev_dg_p enables DG ramp limits; None disables them
    (used at the first period of a day).
    """
    t: int
    bess_power: np.ndarray
    solar_avail: np.ndarray
    wind_avail: np.ndarray
    load_p: np.ndarray
    price_buy: float
    price_sell: float
    prev_dg_p: np.ndarray | None = None


def validate_instance(instance: OpfInstance, devices: DeviceSet,
                      cfg: ScenarioConfig) -> None:
    if instance.bess_power.shape != (devices.n_bess,):
        raise ValidationError("bess_power length does not match device count")
    for d, p in zip(devices.bess, instance.bess_power):
        if abs(p) > d.p_max + 1e-9:
            raise ValidationError(f"bess at bus {d.bus}: |{p}| kW exceeds p_max {d.p_max}")
    for name in ("solar_avail", "wind_avail", "load_p"):
        if np.any(getattr(instance, name) < 0):
            raise ValidationError(f"negative {name}")
    if instance.price_buy < instance.price_sell:
        raise ValidationError("sell price above buy price")
    if cfg.rho <= instance.price_buy:
        raise ValidationError("slack penalty rho must exceed the buy price")


@dataclass(frozen=True)
class PeriodLayout:
    """Variable indices for one dispatch period."""
    dg_p: np.ndarray
    dg_q: np.ndarray
    fuel_t: np.ndarray       # -1 where the DG has no quadratic term
    curt: np.ndarray         # per renewable, device order
    p_buy: int
    p_sell: int
    q_grid: int
    v: np.ndarray            # per bus
    l: np.ndarray            # per branch
    P: np.ndarray
    Q: np.ndarray
    sp_pos: np.ndarray       # active slack injection per bus
    sp_neg: np.ndarray       # active slack absorption
    sq_pos: np.ndarray
    sq_neg: np.ndarray
    bess_ch: np.ndarray      # -1 in fixed-battery mode
    bess_dis: np.ndarray


@dataclass(frozen=True)
class PeriodData:
    """Exogenous inputs for one period, kW at device resolution."""
    solar: np.ndarray
    wind: np.ndarray
    load_p: np.ndarray
    price_buy: float
    price_sell: float
    bess_fixed: np.ndarray | None      # signed net kW, or None for free mode
    bess_ch_max: np.ndarray | None     # free-mode charge bound, kW
    bess_dis_max: np.ndarray | None
    prev_dg_p: np.ndarray | None


@dataclass(frozen=True)
class CostBreakdown:
    fuel: float
    exchange: float
    degradation: float
    curtailment: float
    penalty: float
    total: float


@dataclass(frozen=True)
class OpfSolution:
    dg_p: np.ndarray          # kW
    dg_q: np.ndarray          # kvar
    curtail: np.ndarray       # kW per renewable
    p_buy: float              # kW
    p_sell: float
    q_grid: float             # kvar at the root
    bess_p: np.ndarray        # realized signed net kW
    v: np.ndarray             # p.u.^2 per bus
    l: np.ndarray             # p.u.^2 per branch
    branch_p: np.ndarray      # kW at sending end
    branch_q: np.ndarray
    slack_kw: float           # total active slack magnitude
    slack_kvar: float
    cost: CostBreakdown
    status: str
    residuals: Residuals
    balance_residual: float   # max nodal power mismatch, p.u.


@dataclass(frozen=True)
class OpfProgram:
    program: ConeProgram
    layout: PeriodLayout
    data: PeriodData
    topology: NetworkTopology
    devices: DeviceSet
    cfg: ScenarioConfig


@dataclass(frozen=True)
class MultiPeriodProgram:
    program: ConeProgram
    layouts: tuple[PeriodLayout, ...]
    soc: np.ndarray           # (n_bess, T+1) variable indices
    datas: tuple[PeriodData, ...]
    topology: NetworkTopology
    devices: DeviceSet
    cfg: ScenarioConfig


def _load_q(devices: DeviceSet, load_p: np.ndarray) -> np.ndarray:
    return load_p * np.tan([ld.pf_angle for ld in devices.loads])


def _add_period(b: ProgramBuilder, topology: NetworkTopology, devices: DeviceSet,
                cfg: ScenarioConfig, data: PeriodData, tag: str) -> PeriodLayout:
    S = topology.base_kva
    dt = cfg.dt
    idx = topology.bus_index()
    root = idx[topology.root]
    n_bus = topology.n_buses
    n_br = len(topology.branches)

    root_bus = topology.buses[root]
    if not (root_bus.v_min <= 1.0 <= root_bus.v_max):
        raise ValidationError("root bus voltage bounds must admit 1.0 p.u.^2")

    # generators: ramp folds into the box bounds because prev output is data
    dg_p = np.empty(len(devices.dgs), dtype=np.int64)
    dg_q = np.empty_like(dg_p)
    fuel_t = np.full(len(devices.dgs), -1, dtype=np.int64)
    for g_i, g in enumerate(devices.dgs):
        lo, hi = g.p_min, g.p_max
        if data.prev_dg_p is not None:
            lo = max(lo, data.prev_dg_p[g_i] - g.ramp)
            hi = min(hi, data.prev_dg_p[g_i] + g.ramp)
        dg_p[g_i] = b.var(f"{tag}dg{g_i}_p", lb=lo / S, ub=hi / S, cost=dt * g.b * S)
        dg_q[g_i] = b.var(f"{tag}dg{g_i}_q", lb=g.q_min / S, ub=g.q_max / S)
        b.add_const_cost(dt * g.c)
        if g.a > 0.0:
            t_i = b.var(f"{tag}dg{g_i}_t", lb=0.0, cost=dt * g.a * S * S)
            half = b.var(f"{tag}dg{g_i}_half", lb=0.5, ub=0.5)
            b.rsoc(t_i, half, [dg_p[g_i]])
            fuel_t[g_i] = t_i

    avail = np.concatenate([data.solar, data.wind]) if devices.renewables else np.zeros(0)
    curt = np.empty(len(devices.renewables), dtype=np.int64)
    for r_i in range(len(devices.renewables)):
        curt[r_i] = b.var(f"{tag}curt{r_i}", lb=0.0, ub=avail[r_i] / S,
                          cost=dt * cfg.lambda_curt * S)

    bess_ch = np.full(devices.n_bess, -1, dtype=np.int64)
    bess_dis = np.full(devices.n_bess, -1, dtype=np.int64)
    if data.bess_fixed is None:
        for d_i, d in enumerate(devices.bess):
            ch_hi = d.p_max if data.bess_ch_max is None else data.bess_ch_max[d_i]
            dis_hi = d.p_max if data.bess_dis_max is None else data.bess_dis_max[d_i]
            bess_ch[d_i] = b.var(f"{tag}bess{d_i}_ch", lb=0.0, ub=ch_hi / S,
                                 cost=dt * d.k_b * S)
            bess_dis[d_i] = b.var(f"{tag}bess{d_i}_dis", lb=0.0, ub=dis_hi / S,
                                  cost=dt * d.k_b * S)
    else:
        b.add_const_cost(dt * float(np.sum([d.k_b * abs(p) for d, p in
                                            zip(devices.bess, data.bess_fixed)])))

    grid_hi = devices.p_grid_max / S
    p_buy = b.var(f"{tag}p_buy", lb=0.0, ub=grid_hi, cost=dt * data.price_buy * S)
    p_sell = b.var(f"{tag}p_sell", lb=0.0, ub=grid_hi, cost=-dt * data.price_sell * S)
    q_grid = b.var(f"{tag}q_grid", lb=-grid_hi, ub=grid_hi)

    v = np.empty(n_bus, dtype=np.int64)
    for b_i, bus in enumerate(topology.buses):
        if b_i == root:
            v[b_i] = b.var(f"{tag}v{bus.id}", lb=1.0, ub=1.0)
        else:
            v[b_i] = b.var(f"{tag}v{bus.id}", lb=bus.v_min, ub=bus.v_max)

    l = np.empty(n_br, dtype=np.int64)
    P = np.empty(n_br, dtype=np.int64)
    Q = np.empty(n_br, dtype=np.int64)
    for k, br in enumerate(topology.branches):
        l[k] = b.var(f"{tag}l{k}", lb=0.0, ub=br.l_max)
        P[k] = b.var(f"{tag}P{k}")
        Q[k] = b.var(f"{tag}Q{k}")
        vhalf = b.var(f"{tag}vh{k}")
        fi, ti = idx[br.from_bus], idx[br.to_bus]
        # v_to = v_from - 2(rP + xQ) + (r^2 + x^2) l
        b.eq([(v[ti], 1.0), (v[fi], -1.0), (P[k], 2.0 * br.r), (Q[k], 2.0 * br.x),
              (l[k], -(br.r ** 2 + br.x ** 2))], 0.0)
        b.eq([(vhalf, 1.0), (v[fi], -0.5)], 0.0)
        b.rsoc(l[k], vhalf, [P[k], Q[k]])

    sp_pos = np.empty(n_bus, dtype=np.int64)
    sp_neg = np.empty(n_bus, dtype=np.int64)
    sq_pos = np.empty(n_bus, dtype=np.int64)
    sq_neg = np.empty(n_bus, dtype=np.int64)
    for b_i in range(n_bus):
        sp_pos[b_i] = b.var(f"{tag}sp+{b_i}", lb=0.0, cost=dt * cfg.rho * S)
        sp_neg[b_i] = b.var(f"{tag}sp-{b_i}", lb=0.0, cost=dt * cfg.rho * S)
        sq_pos[b_i] = b.var(f"{tag}sq+{b_i}", lb=0.0, cost=dt * cfg.rho * S)
        sq_neg[b_i] = b.var(f"{tag}sq-{b_i}", lb=0.0, cost=dt * cfg.rho * S)

    # nodal balance; constants (loads, availability, fixed battery power) on the RHS
    load_q = _load_q(devices, data.load_p)
    rhs_p = np.zeros(n_bus)
    rhs_q = np.zeros(n_bus)
    for ld_i, ld in enumerate(devices.loads):
        rhs_p[idx[ld.bus]] += data.load_p[ld_i] / S
        rhs_q[idx[ld.bus]] += load_q[ld_i] / S
    for r_i, r in enumerate(devices.renewables):
        rhs_p[idx[r.bus]] -= avail[r_i] / S
    if data.bess_fixed is not None:
        for d_i, d in enumerate(devices.bess):
            rhs_p[idx[d.bus]] -= data.bess_fixed[d_i] / S

    terms_p: list[list[tuple[int, float]]] = [[] for _ in range(n_bus)]
    terms_q: list[list[tuple[int, float]]] = [[] for _ in range(n_bus)]
    for k, br in enumerate(topology.branches):
        fi, ti = idx[br.from_bus], idx[br.to_bus]
        terms_p[fi].append((P[k], -1.0))
        terms_p[ti].append((P[k], 1.0))
        terms_p[ti].append((l[k], -br.r))
        terms_q[fi].append((Q[k], -1.0))
        terms_q[ti].append((Q[k], 1.0))
        terms_q[ti].append((l[k], -br.x))
    for g_i, g in enumerate(devices.dgs):
        terms_p[idx[g.bus]].append((dg_p[g_i], 1.0))
        terms_q[idx[g.bus]].append((dg_q[g_i], 1.0))
    for r_i, r in enumerate(devices.renewables):
        terms_p[idx[r.bus]].append((curt[r_i], -1.0))
    if data.bess_fixed is None:
        for d_i, d in enumerate(devices.bess):
            terms_p[idx[d.bus]].append((bess_dis[d_i], 1.0))
            terms_p[idx[d.bus]].append((bess_ch[d_i], -1.0))
    terms_p[root].append((p_buy, 1.0))
    terms_p[root].append((p_sell, -1.0))
    terms_q[root].append((q_grid, 1.0))
    for b_i in range(n_bus):
        terms_p[b_i].append((sp_pos[b_i], 1.0))
        terms_p[b_i].append((sp_neg[b_i], -1.0))
        terms_q[b_i].append((sq_pos[b_i], 1.0))
        terms_q[b_i].append((sq_neg[b_i], -1.0))
        b.eq(terms_p[b_i], rhs_p[b_i])
        b.eq(terms_q[b_i], rhs_q[b_i])

    return PeriodLayout(dg_p=dg_p, dg_q=dg_q, fuel_t=fuel_t, curt=curt,
                        p_buy=p_buy, p_sell=p_sell, q_grid=q_grid, v=v, l=l,
                        P=P, Q=Q, sp_pos=sp_pos, sp_neg=sp_neg, sq_pos=sq_pos,
                        sq_neg=sq_neg, bess_ch=bess_ch, bess_dis=bess_dis)


def build_opf(instance: OpfInstance, topology: NetworkTopology,
              devices: DeviceSet, cfg: ScenarioConfig) -> OpfProgram:
    """Single-period program with the agent's battery powers held fixed."""
    validate_instance(instance, devices, cfg)
    data = PeriodData(solar=instance.solar_avail, wind=instance.wind_avail,
                      load_p=instance.load_p, price_buy=instance.price_buy,
                      price_sell=instance.price_sell,
                      bess_fixed=np.asarray(instance.bess_power, dtype=np.float64),
                      bess_ch_max=None, bess_dis_max=None,
                      prev_dg_p=instance.prev_dg_p)
    b = ProgramBuilder()
    layout = _add_period(b, topology, devices, cfg, data, tag="")
    return OpfProgram(program=b.build(), layout=layout, data=data,
                      topology=topology, devices=devices, cfg=cfg)


def build_opf_free_bess(instance: OpfInstance, topology: NetworkTopology,
                        devices: DeviceSet, cfg: ScenarioConfig,
                        ch_max: np.ndarray, dis_max: np.ndarray) -> OpfProgram:
    """Myopic variant: battery powers are continuous decision variables inside
    [-ch_max, dis_max] (already intersected with SoC headroom by the caller)."""
    data = PeriodData(solar=instance.solar_avail, wind=instance.wind_avail,
                      load_p=instance.load_p, price_buy=instance.price_buy,
                      price_sell=instance.price_sell, bess_fixed=None,
                      bess_ch_max=np.asarray(ch_max, dtype=np.float64),
                      bess_dis_max=np.asarray(dis_max, dtype=np.float64),
                      prev_dg_p=instance.prev_dg_p)
    b = ProgramBuilder()
    layout = _add_period(b, topology, devices, cfg, data, tag="")
    return OpfProgram(program=b.build(), layout=layout, data=data,
                      topology=topology, devices=devices, cfg=cfg)


def build_multiperiod_relaxation(day: ExogenousDay, topology: NetworkTopology,
                                 devices: DeviceSet,
                                 cfg: ScenarioConfig) -> MultiPeriodProgram:
    """Perfect-information program over the whole day with continuous
    charge/discharge split variables and the SoC recursion; the exclusivity
    binaries are relaxed away (a valid lower bound)."""
    T = cfg.n_steps
    if day.n_steps != T:
        raise ValidationError(f"day has {day.n_steps} steps, scenario expects {T}")
    if cfg.rho <= float(day.price_buy.max(initial=0.0)):
        raise ValidationError("slack penalty rho must exceed every buy price")
    S = topology.base_kva
    b = ProgramBuilder()
    layouts = []
    datas = []
    for t in range(T):
        data = PeriodData(solar=day.solar[:, t], wind=day.wind[:, t],
                          load_p=day.load[:, t], price_buy=float(day.price_buy[t]),
                          price_sell=float(day.price_sell[t]), bess_fixed=None,
                          bess_ch_max=None, bess_dis_max=None, prev_dg_p=None)
        datas.append(data)
        layouts.append(_add_period(b, topology, devices, cfg, data, tag=f"t{t}."))

    soc = np.empty((devices.n_bess, T + 1), dtype=np.int64)
    for d_i, d in enumerate(devices.bess):
        soc[d_i, 0] = b.var(f"soc{d_i}.0", lb=d.soc_init, ub=d.soc_init)
        for t in range(T):
            soc[d_i, t + 1] = b.var(f"soc{d_i}.{t + 1}", lb=d.soc_min, ub=d.soc_max)
            # soc' = soc + (eta_ch * p_ch - p_dis / eta_dis) * dt / e_cap, powers in kW
            k_ch = d.eta_ch * S * cfg.dt / d.e_cap
            k_dis = S * cfg.dt / (d.eta_dis * d.e_cap)
            b.eq([(soc[d_i, t + 1], 1.0), (soc[d_i, t], -1.0),
                  (layouts[t].bess_ch[d_i], -k_ch),
                  (layouts[t].bess_dis[d_i], k_dis)], 0.0)

    for g_i, g in enumerate(devices.dgs):
        for t in range(1, T):
            b.ub_row([(layouts[t].dg_p[g_i], 1.0), (layouts[t - 1].dg_p[g_i], -1.0)],
                     g.ramp / S)
            b.ub_row([(layouts[t].dg_p[g_i], -1.0), (layouts[t - 1].dg_p[g_i], 1.0)],
                     g.ramp / S)

    return MultiPeriodProgram(program=b.build(), layouts=tuple(layouts),
                              soc=soc, datas=tuple(datas), topology=topology,
                              devices=devices, cfg=cfg)


def _extract_period(x: np.ndarray, layout: PeriodLayout, data: PeriodData,
                    topology: NetworkTopology, devices: DeviceSet,
                    cfg: ScenarioConfig, sol: ConeSolution) -> OpfSolution:
    S = topology.base_kva
    dt = cfg.dt
    # sign-constrained quantities get interior-point noise (~1e-10) clipped off
    dg_p = x[layout.dg_p] * S if layout.dg_p.size else np.zeros(0)
    dg_q = x[layout.dg_q] * S if layout.dg_q.size else np.zeros(0)
    curtail = np.maximum(x[layout.curt], 0.0) * S if layout.curt.size else np.zeros(0)
    p_buy = max(float(x[layout.p_buy]), 0.0) * S
    p_sell = max(float(x[layout.p_sell]), 0.0) * S
    if data.bess_fixed is not None:
        bess_p = data.bess_fixed.copy()
        degradation = dt * float(np.sum([d.k_b * abs(p) for d, p in
                                         zip(devices.bess, bess_p)]))
    else:
        ch = np.maximum(x[layout.bess_ch], 0.0) * S if layout.bess_ch.size else np.zeros(0)
        dis = np.maximum(x[layout.bess_dis], 0.0) * S if layout.bess_dis.size else np.zeros(0)
        bess_p = dis - ch
        degradation = dt * float(np.sum([d.k_b * (c + dd) for d, c, dd in
                                         zip(devices.bess, ch, dis)]))

    fuel = dt * float(np.sum([g.a * p * p + g.b * p + g.c
                              for g, p in zip(devices.dgs, dg_p)]))
    exchange = dt * (data.price_buy * p_buy - data.price_sell * p_sell)
    curtailment = dt * cfg.lambda_curt * float(np.sum(curtail))
    slack_p = np.maximum(x[layout.sp_pos], 0.0) + np.maximum(x[layout.sp_neg], 0.0)
    slack_q = np.maximum(x[layout.sq_pos], 0.0) + np.maximum(x[layout.sq_neg], 0.0)
    penalty = dt * cfg.rho * float(np.sum(slack_p) + np.sum(slack_q)) * S
    total = fuel + exchange + degradation + curtailment + penalty
    cost = CostBreakdown(fuel=fuel, exchange=exchange, degradation=degradation,
                         curtailment=curtailment, penalty=penalty, total=total)

    # nodal balance recheck in per-unit from the extracted point
    idx = topology.bus_index()
    n_bus = topology.n_buses
    mis_p = np.zeros(n_bus)
    mis_q = np.zeros(n_bus)
    for ld_i, ld in enumerate(devices.loads):
        mis_p[idx[ld.bus]] -= data.load_p[ld_i] / S
        mis_q[idx[ld.bus]] -= data.load_p[ld_i] * np.tan(ld.pf_angle) / S
    avail = np.concatenate([data.solar, data.wind]) if devices.renewables else np.zeros(0)
    for r_i, r in enumerate(devices.renewables):
        mis_p[idx[r.bus]] += (avail[r_i] - curtail[r_i]) / S
    for g_i, g in enumerate(devices.dgs):
        mis_p[idx[g.bus]] += dg_p[g_i] / S
        mis_q[idx[g.bus]] += dg_q[g_i] / S
    for d_i, d in enumerate(devices.bess):
        mis_p[idx[d.bus]] += bess_p[d_i] / S
    root = idx[topology.root]
    mis_p[root] += (p_buy - p_sell) / S
    mis_q[root] += float(x[layout.q_grid])
    mis_p += x[layout.sp_pos] - x[layout.sp_neg]
    mis_q += x[layout.sq_pos] - x[layout.sq_neg]
    for k, br in enumerate(topology.branches):
        fi, ti = idx[br.from_bus], idx[br.to_bus]
        mis_p[fi] -= x[layout.P[k]]
        mis_p[ti] += x[layout.P[k]] - br.r * x[layout.l[k]]
        mis_q[fi] -= x[layout.Q[k]]
        mis_q[ti] += x[layout.Q[k]] - br.x * x[layout.l[k]]
    balance = float(max(np.max(np.abs(mis_p)), np.max(np.abs(mis_q))))

    return OpfSolution(
        dg_p=dg_p, dg_q=dg_q, curtail=curtail, p_buy=p_buy, p_sell=p_sell,
        q_grid=float(x[layout.q_grid]) * S, bess_p=bess_p,
        v=x[layout.v].copy(),
        l=np.maximum(x[layout.l], 0.0) if layout.l.size else np.zeros(0),
        branch_p=x[layout.P] * S if layout.P.size else np.zeros(0),
        branch_q=x[layout.Q] * S if layout.Q.size else np.zeros(0),
        slack_kw=float(np.sum(slack_p)) * S, slack_kvar=float(np.sum(slack_q)) * S,
        cost=cost, status=sol.status, residuals=sol.residuals,
        balance_residual=balance)


def solve_opf(built: OpfProgram, tol: float = DEFAULT_TOL) -> OpfSolution:
    sol = solve_cone(built.program, tol=tol)
    return _extract_period(sol.x, built.layout, built.data, built.topology,
                           built.devices, built.cfg, sol)


@dataclass(frozen=True)
class MultiPeriodSolution:
    periods: tuple[OpfSolution, ...]
    soc: np.ndarray           # (n_bess, T+1) fractions
    total_cost: float
    objective: float          # solver objective, matches total_cost within tol


def solve_multiperiod(built: MultiPeriodProgram,
                      tol: float = DEFAULT_TOL) -> MultiPeriodSolution:
    sol = solve_cone(built.program, tol=tol)
    periods = tuple(
        _extract_period(sol.x, layout, data, built.topology, built.devices,
                        built.cfg, sol)
        for layout, data in zip(built.layouts, built.datas))
    total = float(np.sum([p.cost.total for p in periods]))
    return MultiPeriodSolution(periods=periods, soc=sol.x[built.soc].copy(),
                               total_cost=total, objective=sol.objective)


@dataclass(frozen=True)
class ExactnessReport:
    max_gap: float            # max normalized l*v - (P^2 + Q^2) over branches
    worst_branch: int         # -1 when there are no branches
    exact: bool


def check_exactness(solution: OpfSolution, topology: NetworkTopology,
                    alarm: float = EXACTNESS_ALARM) -> ExactnessReport:
    """Relaxation-tightness diagnostic of the branch cones at a solution."""
    if not topology.branches:
        return ExactnessReport(max_gap=0.0, worst_branch=-1, exact=True)
    idx = topology.bus_index()
    S = topology.base_kva
    worst, worst_k = 0.0, -1
    for k, br in enumerate(topology.branches):
        v_from = solution.v[idx[br.from_bus]]
        lv = solution.l[k] * v_from
        flow2 = (solution.branch_p[k] / S) ** 2 + (solution.branch_q[k] / S) ** 2
        gap = (lv - flow2) / max(1.0, abs(lv))
        if gap > worst:
            worst, worst_k = gap, k
    return ExactnessReport(max_gap=worst, worst_branch=worst_k,
                           exact=worst <= alarm)
