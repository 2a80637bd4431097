"""Bundled sample systems: a single-bus arbitrage microgrid, a 6-bus feeder
with one battery, and a 33-bus feeder with five distributed batteries.
Representative parameter sets, not replicas of any published test system.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .grid import (Bess, Branch, Bus, DeviceSet, Generator, Load,
                   NetworkTopology, Renewable, validate_devices,
                   validate_topology, write_network)

V_LO, V_HI = 0.9025, 1.1025  # (0.95 p.u.)^2 .. (1.05 p.u.)^2


def network_arbitrage1() -> tuple[NetworkTopology, DeviceSet]:
    """Single-bus system: one battery against a two-tier price day."""
    topology = NetworkTopology(
        buses=(Bus(0, 0.81, 1.21),), branches=(), root=0,
        base_kva=1000.0, base_kv=12.66)
    devices = DeviceSet(
        dgs=(),
        renewables=(Renewable("solar0", 0, "solar", 25.0),),
        bess=(Bess(bus=0, e_cap=200.0, p_max=50.0, eta_ch=0.95, eta_dis=0.95,
                   soc_min=0.1, soc_max=0.9, soc_init=0.5, k_b=0.02),),
        loads=(Load("load0", 0, 0.0),),
        p_grid_max=500.0)
    topology = validate_topology(topology)
    return topology, validate_devices(devices, topology)


def network_6bus() -> tuple[NetworkTopology, DeviceSet]:
    """Six-bus feeder: one diesel unit, solar, wind, one battery."""
    buses = tuple(Bus(i, V_LO, V_HI) for i in range(6))
    branches = (
        Branch(0, 1, 0.010, 0.007, 4.0),
        Branch(1, 2, 0.012, 0.008, 4.0),
        Branch(1, 3, 0.011, 0.007, 4.0),
        Branch(3, 4, 0.015, 0.010, 2.0),
        Branch(3, 5, 0.014, 0.009, 2.0),
    )
    topology = NetworkTopology(buses=buses, branches=branches, root=0,
                               base_kva=1000.0, base_kv=12.66)
    devices = DeviceSet(
        dgs=(Generator(bus=1, p_min=0.0, p_max=250.0, q_min=-150.0, q_max=150.0,
                       ramp=250.0, a=1.2e-4, b=0.16, c=1.0),),
        renewables=(Renewable("solar0", 4, "solar", 120.0),
                    Renewable("wind0", 5, "wind", 80.0)),
        bess=(Bess(bus=3, e_cap=250.0, p_max=60.0, eta_ch=0.95, eta_dis=0.95,
                   soc_min=0.1, soc_max=0.9, soc_init=0.5, k_b=0.02),),
        loads=(Load("load0", 2, 0.32), Load("load1", 4, 0.25),
               Load("load2", 5, 0.30)),
        p_grid_max=1000.0)
    topology = validate_topology(topology)
    return topology, validate_devices(devices, topology)


def network_33bus() -> tuple[NetworkTopology, DeviceSet]:
    """33-bus radial feeder (main trunk plus three laterals) with five
    distributed batteries, two diesel units, and four renewable units."""
    buses = tuple(Bus(i, V_LO, V_HI) for i in range(33))
    branches = []
    # main trunk 0..17
    trunk_r = [0.0035, 0.0040, 0.0045, 0.0040, 0.0050, 0.0045, 0.0040, 0.0045,
               0.0050, 0.0040, 0.0035, 0.0045, 0.0050, 0.0045, 0.0040, 0.0045,
               0.0050]
    for i, r in enumerate(trunk_r):
        l_cap = 9.0 if i < 5 else 4.0
        branches.append(Branch(i, i + 1, r, 0.55 * r, l_cap))
    # lateral A off bus 1
    for a, b in ((1, 18), (18, 19), (19, 20), (20, 21)):
        branches.append(Branch(a, b, 0.0060, 0.0033, 2.0))
    # lateral B off bus 2
    for a, b in ((2, 22), (22, 23), (23, 24)):
        branches.append(Branch(a, b, 0.0065, 0.0036, 2.0))
    # lateral C off bus 5
    lat_c = [(5, 25), (25, 26), (26, 27), (27, 28), (28, 29), (29, 30),
             (30, 31), (31, 32)]
    for a, b in lat_c:
        branches.append(Branch(a, b, 0.0055, 0.0030, 2.5))
    topology = NetworkTopology(buses=buses, branches=tuple(branches), root=0,
                               base_kva=1000.0, base_kv=12.66)

    bess_buses = (7, 13, 20, 24, 30)
    bess = tuple(
        Bess(bus=b, e_cap=cap, p_max=pmax, eta_ch=0.95, eta_dis=0.95,
             soc_min=0.1, soc_max=0.9, soc_init=0.5, k_b=0.02)
        for b, cap, pmax in zip(bess_buses,
                                (200.0, 180.0, 220.0, 200.0, 250.0),
                                (50.0, 50.0, 55.0, 50.0, 60.0)))
    no_load = {0, 5, 12, 17, 24, 29, 31}
    loads = tuple(Load(f"load{i}", bus, 0.30)
                  for i, bus in enumerate(b for b in range(1, 33)
                                          if b not in no_load))
    devices = DeviceSet(
        dgs=(Generator(bus=5, p_min=0.0, p_max=400.0, q_min=-250.0, q_max=250.0,
                       ramp=400.0, a=1.0e-4, b=0.17, c=1.2),
             Generator(bus=29, p_min=0.0, p_max=250.0, q_min=-150.0, q_max=150.0,
                       ramp=250.0, a=1.5e-4, b=0.19, c=0.9)),
        renewables=(Renewable("solar0", 12, "solar", 150.0),
                    Renewable("solar1", 24, "solar", 100.0),
                    Renewable("wind0", 17, "wind", 120.0),
                    Renewable("wind1", 31, "wind", 100.0)),
        bess=bess,
        loads=loads,
        p_grid_max=2000.0)
    topology = validate_topology(topology)
    return topology, validate_devices(devices, topology)


SAMPLES = {
    "arbitrage1": network_arbitrage1,
    "6bus": network_6bus,
    "33bus": network_33bus,
}


def sample_path(name: str) -> Path:
    """Path of a bundled network JSON (arbitrage1, 6bus, 33bus)."""
    if name not in SAMPLES:
        raise KeyError(f"unknown sample {name!r}; choose from {sorted(SAMPLES)}")
    return Path(str(resources.files("branchgrid").joinpath(f"data/net_{name}.json")))


def write_sample_files(out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, builder in SAMPLES.items():
        topology, devices = builder()
        path = out_dir / f"net_{name}.json"
        write_network(path, topology, devices)
        written.append(path)
    return written
