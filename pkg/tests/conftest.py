import numpy as np
import pytest

from branchgrid.grid import (Bess, Branch, Bus, DeviceSet, ExogenousDay,
                             Generator, Load, NetworkTopology, ScenarioConfig,
                             validate_devices, validate_topology)


@pytest.fixture
def scenario():
    return ScenarioConfig()


@pytest.fixture
def two_bus():
    """Root plus one load bus, one DG at the load bus."""
    topology = validate_topology(NetworkTopology(
        buses=(Bus(0, 0.81, 1.21), Bus(1, 0.81, 1.21)),
        branches=(Branch(0, 1, 0.01, 0.005, 4.0),),
        root=0, base_kva=1000.0, base_kv=12.66))
    devices = validate_devices(DeviceSet(
        dgs=(Generator(1, 0.0, 300.0, -100.0, 100.0, 1000.0, 1e-4, 0.2, 1.2),),
        renewables=(), bess=(), loads=(Load("load0", 1, 0.0),),
        p_grid_max=3000.0), topology)
    return topology, devices


@pytest.fixture
def battery_bus():
    """Single-bus system with one battery and one load; fast to solve."""
    topology = validate_topology(NetworkTopology(
        buses=(Bus(0, 0.81, 1.21),), branches=(), root=0,
        base_kva=1000.0, base_kv=12.66))
    devices = validate_devices(DeviceSet(
        dgs=(),
        renewables=(),
        bess=(Bess(bus=0, e_cap=100.0, p_max=50.0, eta_ch=0.95, eta_dis=0.95,
                   soc_min=0.1, soc_max=0.9, soc_init=0.5, k_b=0.02),),
        loads=(Load("load0", 0, 0.0),),
        p_grid_max=500.0), topology)
    return topology, devices


def constant_day(devices: DeviceSet, cfg: ScenarioConfig, load_kw=40.0,
                 price_buy=0.1, price_sell=0.05, day=0) -> ExogenousDay:
    T = cfg.n_steps
    n_solar = len(devices.renewables_of("solar"))
    n_wind = len(devices.renewables_of("wind"))
    return ExogenousDay(
        day=day,
        solar=np.zeros((n_solar, T)),
        wind=np.zeros((n_wind, T)),
        load=np.full((len(devices.loads), T), load_kw),
        price_buy=np.full(T, price_buy),
        price_sell=np.full(T, price_sell))
