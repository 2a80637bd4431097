import dataclasses
import math

import numpy as np
import pytest

from branchgrid.grid import (Bess, Branch, Bus, DeviceSet, ExogenousDay,
                             Generator, Load, NetworkTopology, ScenarioConfig,
                             ValidationError, synth_dataset, validate_devices,
                             validate_topology)
from branchgrid.opf import (OpfInstance, build_multiperiod_relaxation,
                            build_opf, check_exactness, solve_multiperiod,
                            solve_opf, validate_instance)
from branchgrid.samples import network_33bus, network_6bus

from conftest import constant_day


def instance(load_kw, price_buy=0.1, price_sell=0.05, bess=0, solar=0, wind=0,
             t=0, prev=None):
    return OpfInstance(
        t=t, bess_power=np.zeros(bess) if isinstance(bess, int) else np.asarray(bess),
        solar_avail=np.zeros(solar) if isinstance(solar, int) else np.asarray(solar),
        wind_avail=np.zeros(wind) if isinstance(wind, int) else np.asarray(wind),
        load_p=np.asarray(load_kw, dtype=np.float64),
        price_buy=price_buy, price_sell=price_sell, prev_dg_p=prev)


def test_zero_load_zero_price_costs_fixed_fuel(two_bus, scenario):
    topology, devices = two_bus
    sol = solve_opf(build_opf(instance([0.0], price_buy=0.0, price_sell=0.0),
                              topology, devices, scenario))
    assert sol.cost.total == pytest.approx(1.2, abs=1e-6)
    assert sol.slack_kw == pytest.approx(0.0, abs=1e-6)


def test_forced_import_lossless(scenario):
    topology = validate_topology(NetworkTopology(
        buses=(Bus(0, 0.81, 1.21), Bus(1, 0.81, 1.21)),
        branches=(Branch(0, 1, 0.0, 0.0, 4.0),),
        root=0, base_kva=1000.0, base_kv=12.66))
    devices = validate_devices(DeviceSet(
        dgs=(), renewables=(), bess=(), loads=(Load("load0", 1, 0.0),),
        p_grid_max=1000.0), topology)
    sol = solve_opf(build_opf(instance([100.0]), topology, devices, scenario))
    assert sol.cost.total == pytest.approx(10.0, abs=1e-5)
    assert sol.p_buy == pytest.approx(100.0, abs=1e-4)


def test_import_matches_scalar_brute_force(two_bus, scenario):
    """1.0 p.u. load behind r = 0.01: the sending-end flow P solves
    P - r P^2 = load; bisection gives the independent value."""
    topology, devices = two_bus
    sol = solve_opf(build_opf(instance([1000.0]), topology, devices, scenario))

    r = topology.branches[0].r
    lo, hi = 1.0, 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid - r * mid * mid < 1.0:
            lo = mid
        else:
            hi = mid
    expected_kw = 0.5 * (lo + hi) * 1000.0
    # DG fuel b=0.2 exceeds the 0.1 import price, so everything is imported
    assert abs(sol.p_buy - expected_kw) / expected_kw <= 1e-4
    assert sol.balance_residual <= 1e-6


def test_exactness_zero_flow(two_bus, scenario):
    # zero load under positive prices: losses are costly, so flows and the
    # squared current all settle at zero and the cone binds trivially
    topology, devices = two_bus
    sol = solve_opf(build_opf(instance([0.0]), topology, devices, scenario))
    assert np.abs(sol.branch_p).max() <= 1e-3
    report = check_exactness(sol, topology)
    assert report.max_gap <= 1e-5


def test_exactness_positive_prices(two_bus, scenario):
    topology, devices = two_bus
    sol = solve_opf(build_opf(instance([800.0]), topology, devices, scenario))
    report = check_exactness(sol, topology)
    assert report.exact
    assert report.max_gap <= 1e-5


def test_exactness_flags_inflated_current(two_bus, scenario):
    topology, devices = two_bus
    sol = solve_opf(build_opf(instance([800.0]), topology, devices, scenario))
    doctored = dataclasses.replace(sol, l=sol.l + 0.5)
    report = check_exactness(doctored, topology)
    assert not report.exact
    assert report.worst_branch == 0


def test_no_simultaneous_buy_sell(scenario):
    topology, devices = network_6bus()
    day = synth_dataset(3, 1, devices, scenario)[0]
    for t in (0, 10, 15, 20):
        inst = OpfInstance(
            t=t, bess_power=np.zeros(1), solar_avail=day.solar[:, t],
            wind_avail=day.wind[:, t], load_p=day.load[:, t],
            price_buy=float(day.price_buy[t]), price_sell=float(day.price_sell[t]))
        sol = solve_opf(build_opf(inst, topology, devices, scenario))
        assert sol.p_buy * sol.p_sell <= 1e-8 * topology.base_kva ** 2


def test_energy_conservation(scenario):
    topology, devices = network_6bus()
    day = synth_dataset(4, 1, devices, scenario)[0]
    for t in (0, 6, 12, 18):
        inst = OpfInstance(
            t=t, bess_power=np.array([25.0]), solar_avail=day.solar[:, t],
            wind_avail=day.wind[:, t], load_p=day.load[:, t],
            price_buy=float(day.price_buy[t]), price_sell=float(day.price_sell[t]))
        sol = solve_opf(build_opf(inst, topology, devices, scenario))
        losses = sum(br.r * sol.l[k] for k, br in enumerate(topology.branches))
        balance = (sol.p_buy - sol.p_sell + sol.dg_p.sum()
                   + (day.solar[:, t].sum() + day.wind[:, t].sum() - sol.curtail.sum())
                   + sol.bess_p.sum() - day.load[:, t].sum()
                   - losses * topology.base_kva + sol.slack_kw)
        assert abs(balance) <= 1e-3  # kW
        assert sol.balance_residual <= 1e-6


def test_cost_monotone_in_availability(scenario):
    topology, devices = network_6bus()
    day = synth_dataset(5, 1, devices, scenario)[0]
    t = 12
    base = OpfInstance(
        t=t, bess_power=np.zeros(1), solar_avail=day.solar[:, t],
        wind_avail=day.wind[:, t], load_p=day.load[:, t],
        price_buy=float(day.price_buy[t]), price_sell=float(day.price_sell[t]))
    cost = solve_opf(build_opf(base, topology, devices, scenario)).cost.total
    for bump in (1.0, 5.0, 20.0):
        more = dataclasses.replace(
            base, solar_avail=np.minimum(day.solar[:, t] + bump,
                                         [r.rated for r in devices.renewables_of("solar")]))
        cost_more = solve_opf(build_opf(more, topology, devices, scenario)).cost.total
        assert cost_more <= cost + 1e-6
        cost = cost_more


def test_instance_validation(two_bus, scenario):
    topology, devices = two_bus
    with pytest.raises(ValidationError, match="rho"):
        bad_cfg = ScenarioConfig(rho=0.05)
        validate_instance(instance([10.0], price_buy=0.1), devices, bad_cfg)
    with pytest.raises(ValidationError, match="sell"):
        validate_instance(instance([10.0], price_buy=0.1, price_sell=0.2),
                          devices, scenario)


def test_bess_injection_respected(battery_bus, scenario):
    topology, devices = battery_bus
    inst = instance([40.0], bess=[30.0])
    sol = solve_opf(build_opf(inst, topology, devices, scenario))
    # battery discharge displaces imports: 40 - 30 = 10 kW
    assert sol.p_buy == pytest.approx(10.0, abs=1e-4)
    assert sol.cost.degradation == pytest.approx(0.02 * 30.0, abs=1e-9)


def test_reward_matches_itemization(battery_bus, scenario):
    topology, devices = battery_bus
    sol = solve_opf(build_opf(instance([40.0], bess=[-20.0]), topology,
                              devices, scenario))
    c = sol.cost
    assert c.total == c.fuel + c.exchange + c.degradation + c.curtailment + c.penalty


# -- multiperiod ---------------------------------------------------------------


def lossless_battery_system(p_max=30.0, e_cap=100.0, soc_init=0.0):
    topology = validate_topology(NetworkTopology(
        buses=(Bus(0, 0.81, 1.21),), branches=(), root=0,
        base_kva=1000.0, base_kv=12.66))
    devices = validate_devices(DeviceSet(
        dgs=(), renewables=(),
        bess=(Bess(bus=0, e_cap=e_cap, p_max=p_max, eta_ch=1.0, eta_dis=1.0,
                   soc_min=0.0, soc_max=1.0, soc_init=soc_init, k_b=0.001),),
        loads=(Load("load0", 0, 0.0),), p_grid_max=500.0), topology)
    return topology, devices


def test_two_period_arbitrage_forced():
    topology, devices = lossless_battery_system()
    cfg = ScenarioConfig(dt=1.0, horizon=2.0)
    day = ExogenousDay(day=0, solar=np.zeros((0, 2)), wind=np.zeros((0, 2)),
                       load=np.full((1, 2), 50.0),
                       price_buy=np.array([0.05, 0.50]),
                       price_sell=np.array([0.04, 0.40]))
    built = build_multiperiod_relaxation(day, topology, devices, cfg)
    sol = solve_multiperiod(built, tol=1e-8)
    # charge at the cheap step to the power limit, discharge at the dear step
    assert sol.periods[0].bess_p[0] == pytest.approx(-30.0, abs=1e-3)
    assert sol.periods[1].bess_p[0] == pytest.approx(30.0, abs=1e-3)
    assert sol.soc[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert sol.soc[0, 1] == pytest.approx(0.3, abs=1e-5)


def test_constant_prices_idle_battery(battery_bus):
    topology, devices = battery_bus
    # degradation price above the buy price: any cycling adds cost
    devices = dataclasses.replace(
        devices, bess=(dataclasses.replace(devices.bess[0], k_b=0.2),))
    cfg = ScenarioConfig()
    day = constant_day(devices, cfg, load_kw=40.0, price_buy=0.1, price_sell=0.05)
    sol = solve_multiperiod(build_multiperiod_relaxation(day, topology, devices, cfg))
    throughput = sum(abs(p.bess_p[0]) for p in sol.periods)
    assert throughput <= 1e-3


def test_multiperiod_matches_brute_force_single_battery():
    """Lossless single battery, T=3: enumerate charge/discharge programs on a
    grid and compare the relaxation optimum."""
    topology, devices = lossless_battery_system(p_max=20.0, soc_init=0.0)
    cfg = ScenarioConfig(dt=1.0, horizon=3.0)
    prices = np.array([0.10, 0.30, 0.05])
    day = ExogenousDay(day=0, solar=np.zeros((0, 3)), wind=np.zeros((0, 3)),
                       load=np.full((1, 3), 30.0),
                       price_buy=prices, price_sell=prices * 0.8)
    sol = solve_multiperiod(build_multiperiod_relaxation(day, topology, devices, cfg))

    # brute force over battery powers on a 1 kW grid (net power per step)
    k_b = devices.bess[0].k_b
    best = np.inf
    grid = np.arange(-20.0, 20.0 + 0.5, 1.0)
    for p0 in grid:
        for p1 in grid:
            for p2 in grid:
                soc = [0.0]
                ok = True
                for p in (p0, p1, p2):
                    nxt = soc[-1] + (-p) / 100.0
                    if nxt < -1e-12 or nxt > 1.0 + 1e-12:
                        ok = False
                        break
                    soc.append(nxt)
                if not ok:
                    continue
                cost = 0.0
                for t, p in enumerate((p0, p1, p2)):
                    net = 30.0 - p  # import if positive
                    cost += (prices[t] * max(net, 0.0)
                             - prices[t] * 0.8 * max(-net, 0.0)
                             + k_b * abs(p))
                best = min(best, cost)
    assert sol.total_cost <= best + 1e-6
    assert sol.total_cost >= best - 0.5  # coarse grid upper bound


def test_33bus_multiperiod_runs(scenario):
    topology, devices = network_33bus()
    day = synth_dataset(11, 1, devices, scenario)[0]
    sol = solve_multiperiod(build_multiperiod_relaxation(day, topology, devices,
                                                         scenario))
    assert len(sol.periods) == 24
    assert all(p.slack_kw <= 1e-4 for p in sol.periods)
    assert abs(sol.objective - sol.total_cost) <= 1e-4 * (1 + abs(sol.total_cost))
