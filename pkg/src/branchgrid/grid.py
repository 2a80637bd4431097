"""Static microgrid description, exogenous time series, and a seeded synthetic generator.

All powers are kW (kvar for reactive), impedances and squared voltage/current
limits are per-unit on (base_kva, base_kv), prices are $/kWh.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

log = logging.getLogger("branchgrid.grid")

SOLAR = "solar"
WIND = "wind"
RENEWABLE_KINDS = (SOLAR, WIND)
DATASET_HEADER = ["day", "step", "device_id", "kind", "value"]


class ValidationError(ValueError):
    """An input violates a documented invariant."""


class ParseError(ValueError):
    """A file does not conform to its documented format."""


# ---------------------------------------------------------------------------
# static description


@dataclass(frozen=True)
class Bus:
    id: int
    v_min: float  # squared voltage lower bound, p.u.^2
    v_max: float


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float      # p.u.
    x: float      # p.u.
    l_max: float  # squared current limit, p.u.^2


@dataclass(frozen=True)
class NetworkTopology:
    """Radial feeder. After validation, branches are oriented parent -> child
    in breadth-first order from the root."""
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    root: int
    base_kva: float
    base_kv: float

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def n_buses(self) -> int:
        return len(self.buses)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp: float  # kW per period
    a: float     # $/kW^2 h
    b: float     # $/kWh
    c: float     # $/h


@dataclass(frozen=True)
class Renewable:
    id: str
    bus: int
    kind: str    # solar | wind
    rated: float


@dataclass(frozen=True)
class Bess:
    bus: int
    e_cap: float    # kWh
    p_max: float    # kW, charge and discharge magnitude limit
    eta_ch: float
    eta_dis: float
    soc_min: float
    soc_max: float
    soc_init: float
    k_b: float      # $/kWh throughput


@dataclass(frozen=True)
class Load:
    id: str
    bus: int
    pf_angle: float  # rad; q = p * tan(pf_angle)


@dataclass(frozen=True)
class DeviceSet:
    dgs: tuple[Generator, ...]
    renewables: tuple[Renewable, ...]
    bess: tuple[Bess, ...]
    loads: tuple[Load, ...]
    p_grid_max: float

    @property
    def n_bess(self) -> int:
        return len(self.bess)

    def renewables_of(self, kind: str) -> tuple[Renewable, ...]:
        return tuple(r for r in self.renewables if r.kind == kind)


@dataclass(frozen=True)
class ScenarioConfig:
    dt: float = 1.0            # hours per step
    horizon: float = 24.0      # hours
    lambda_curt: float = 0.05  # $/kWh
    rho: float = 10.0          # $/kWh feasibility slack penalty

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValidationError("horizon must be a positive integer multiple of dt")
        if self.lambda_curt < 0:
            raise ValidationError("lambda_curt must be non-negative")
        if self.rho <= 0:
            raise ValidationError("rho must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class ExogenousDay:
    """One day of realizations. Row order matches the device order in DeviceSet."""
    day: int
    solar: np.ndarray      # (n_solar, T) kW available
    wind: np.ndarray       # (n_wind, T) kW available
    load: np.ndarray       # (n_load, T) kW
    price_buy: np.ndarray  # (T,) $/kWh
    price_sell: np.ndarray  # (T,) $/kWh

    def __post_init__(self):
        for name in ("solar", "wind", "load", "price_buy", "price_sell"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return self.price_buy.shape[0]


# ---------------------------------------------------------------------------
# validation


def validate_topology(topology: NetworkTopology) -> NetworkTopology:
    """Check tree structure and element bounds; return the topology with
    branches oriented parent -> child in BFS order from the root."""
    ids = [b.id for b in topology.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    if topology.root not in set(ids):
        raise ValidationError(f"root bus {topology.root} is not in the bus list")
    if topology.base_kva <= 0 or topology.base_kv <= 0:
        raise ValidationError("base_kva and base_kv must be positive")
    for b in topology.buses:
        if not (0 < b.v_min < b.v_max):
            raise ValidationError(f"bus {b.id}: requires 0 < v_min < v_max")
    for br in topology.branches:
        if br.r < 0 or br.x < 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: negative impedance")
        if br.l_max <= 0:
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: l_max must be positive")
        if br.from_bus not in set(ids) or br.to_bus not in set(ids):
            raise ValidationError(f"branch {br.from_bus}-{br.to_bus}: unknown bus")

    if len(topology.branches) != len(topology.buses) - 1:
        raise ValidationError(
            f"topology is not a tree: {len(topology.branches)} branches for "
            f"{len(topology.buses)} buses")

    # BFS from root over the undirected branch set; orient each branch away
    # from the root. |E| = |V|-1 plus full reachability rules out cycles.
    adjacency: dict[int, list[Branch]] = {i: [] for i in ids}
    for br in topology.branches:
        adjacency[br.from_bus].append(br)
        adjacency[br.to_bus].append(br)
    seen = {topology.root}
    frontier = [topology.root]
    oriented: list[Branch] = []
    while frontier:
        nxt: list[int] = []
        for u in frontier:
            for br in adjacency[u]:
                v = br.to_bus if br.from_bus == u else br.from_bus
                if v in seen:
                    continue
                seen.add(v)
                nxt.append(v)
                oriented.append(br if br.from_bus == u else
                                Branch(u, v, br.r, br.x, br.l_max))
        frontier = nxt
    if len(seen) != len(ids):
        raise ValidationError("topology has a cycle or disconnected buses")
    return replace(topology, branches=tuple(oriented))


def validate_devices(devices: DeviceSet, topology: NetworkTopology) -> DeviceSet:
    bus_ids = {b.id for b in topology.buses}
    for g in devices.dgs:
        if g.bus not in bus_ids:
            raise ValidationError(f"dg at unknown bus {g.bus}")
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise ValidationError(f"dg at bus {g.bus}: min above max")
        if g.a < 0 or g.c < 0 or g.ramp < 0:
            raise ValidationError(f"dg at bus {g.bus}: negative cost or ramp")
    seen_ids: set[str] = set()
    for r in devices.renewables:
        if r.bus not in bus_ids:
            raise ValidationError(f"renewable {r.id} at unknown bus {r.bus}")
        if r.kind not in RENEWABLE_KINDS:
            raise ValidationError(f"renewable {r.id}: unknown kind {r.kind!r}")
        if r.rated < 0:
            raise ValidationError(f"renewable {r.id}: negative rated power")
        if r.id in seen_ids:
            raise ValidationError(f"duplicate device id {r.id!r}")
        seen_ids.add(r.id)
    for d in devices.bess:
        if d.bus not in bus_ids:
            raise ValidationError(f"bess at unknown bus {d.bus}")
        if not (0 < d.eta_ch <= 1 and 0 < d.eta_dis <= 1):
            raise ValidationError(f"bess at bus {d.bus}: efficiencies must be in (0, 1]")
        if not (d.soc_min < d.soc_max):
            raise ValidationError(f"bess at bus {d.bus}: soc_min must be below soc_max")
        if not (0 <= d.soc_init and d.soc_min <= d.soc_init <= d.soc_max):
            raise ValidationError(f"bess at bus {d.bus}: initial SoC outside [soc_min, soc_max]")
        if d.e_cap <= 0 or d.p_max <= 0 or d.k_b < 0:
            raise ValidationError(f"bess at bus {d.bus}: non-positive capacity/power or negative price")
    for ld in devices.loads:
        if ld.bus not in bus_ids:
            raise ValidationError(f"load {ld.id} at unknown bus {ld.bus}")
        if ld.id in seen_ids:
            raise ValidationError(f"duplicate device id {ld.id!r}")
        seen_ids.add(ld.id)
    if devices.p_grid_max < 0:
        raise ValidationError("p_grid_max must be non-negative")
    return devices


def validate_day(day: ExogenousDay, devices: DeviceSet, cfg: ScenarioConfig) -> None:
    T = cfg.n_steps
    shapes = {
        "solar": (len(devices.renewables_of(SOLAR)), T),
        "wind": (len(devices.renewables_of(WIND)), T),
        "load": (len(devices.loads), T),
    }
    for name, shape in shapes.items():
        arr = getattr(day, name)
        if arr.shape != shape:
            raise ValidationError(f"day {day.day}: {name} series has shape {arr.shape}, expected {shape}")
        if np.any(arr < 0):
            raise ValidationError(f"day {day.day}: negative {name} value")
    for name in ("price_buy", "price_sell"):
        if getattr(day, name).shape != (T,):
            raise ValidationError(f"day {day.day}: {name} has {getattr(day, name).shape[0]} steps, expected {T}")
    if np.any(day.price_sell < 0):
        raise ValidationError(f"day {day.day}: negative sell price")
    if np.any(day.price_buy < day.price_sell):
        raise ValidationError(f"day {day.day}: sell price above buy price")
    for i, r in enumerate(devices.renewables_of(SOLAR)):
        if np.any(day.solar[i] > r.rated + 1e-9):
            raise ValidationError(f"day {day.day}: solar {r.id} exceeds rated power")
    for i, r in enumerate(devices.renewables_of(WIND)):
        if np.any(day.wind[i] > r.rated + 1e-9):
            raise ValidationError(f"day {day.day}: wind {r.id} exceeds rated power")


# ---------------------------------------------------------------------------
# network file io (JSON)


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ParseError(f"{where}: missing key {key!r}")
    return obj[key]


def load_network(path: str | Path) -> tuple[NetworkTopology, DeviceSet]:
    """Parse and validate a network JSON file; see README for the schema."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")

    where = str(path)
    buses = tuple(
        Bus(int(_require(b, "id", where)), float(_require(b, "v_min", where)),
            float(_require(b, "v_max", where)))
        for b in _require(doc, "buses", where))
    branches = tuple(
        Branch(int(_require(br, "from", where)), int(_require(br, "to", where)),
               float(_require(br, "r", where)), float(_require(br, "x", where)),
               float(_require(br, "l_max", where)))
        for br in _require(doc, "branches", where))
    topology = NetworkTopology(
        buses=buses, branches=branches, root=int(_require(doc, "root", where)),
        base_kva=float(_require(doc, "base_kva", where)),
        base_kv=float(_require(doc, "base_kv", where)))

    dgs = tuple(
        Generator(int(g["bus"]), float(g["p_min"]), float(g["p_max"]),
                  float(g["q_min"]), float(g["q_max"]), float(g["ramp"]),
                  float(g["a"]), float(g["b"]), float(g["c"]))
        for g in _require(doc, "dgs", where))
    renewables = tuple(
        Renewable(str(r.get("id", f"{r['kind']}{i}")), int(r["bus"]),
                  str(r["kind"]), float(r["rated"]))
        for i, r in enumerate(_require(doc, "renewables", where)))
    bess = tuple(
        Bess(int(d["bus"]), float(d["e_cap"]), float(d["p_max"]),
             float(d["eta_ch"]), float(d["eta_dis"]), float(d["soc_min"]),
             float(d["soc_max"]), float(d["soc_init"]), float(d["k_b"]))
        for d in _require(doc, "bess", where))
    loads = tuple(
        Load(str(ld.get("id", f"load{i}")), int(ld["bus"]), float(ld.get("pf_angle", 0.0)))
        for i, ld in enumerate(_require(doc, "loads", where)))
    devices = DeviceSet(dgs=dgs, renewables=renewables, bess=bess, loads=loads,
                        p_grid_max=float(_require(doc, "p_grid_max", where)))

    topology = validate_topology(topology)
    devices = validate_devices(devices, topology)
    return topology, devices


def write_network(path: str | Path, topology: NetworkTopology, devices: DeviceSet) -> None:
    doc = {
        "root": topology.root,
        "base_kva": topology.base_kva,
        "base_kv": topology.base_kv,
        "buses": [asdict(b) for b in topology.buses],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r,
                      "x": br.x, "l_max": br.l_max} for br in topology.branches],
        "dgs": [asdict(g) for g in devices.dgs],
        "renewables": [asdict(r) for r in devices.renewables],
        "bess": [asdict(d) for d in devices.bess],
        "loads": [asdict(ld) for ld in devices.loads],
        "p_grid_max": devices.p_grid_max,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------------------
# dataset io (CSV)


def load_dataset(path: str | Path, devices: DeviceSet,
                 cfg: ScenarioConfig) -> list[ExogenousDay]:
    """Read `day,step,device_id,kind,value` rows into per-day series, checking
    lengths, signs, and price ordering."""
    path = Path(path)
    solar_ids = [r.id for r in devices.renewables_of(SOLAR)]
    wind_ids = [r.id for r in devices.renewables_of(WIND)]
    load_ids = [ld.id for ld in devices.loads]
    T = cfg.n_steps

    # days[day][(kind, device_id)][step] = value
    days: dict[int, dict[tuple[str, str], dict[int, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise ParseError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ParseError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
            try:
                day, step, value = int(row[0]), int(row[1]), float(row[4])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            device_id, kind = row[2], row[3]
            if kind in ("price_buy", "price_sell"):
                device_id = "grid"
            elif kind not in (SOLAR, WIND, "load"):
                raise ParseError(f"{path}:{lineno}: unknown kind {kind!r}")
            days.setdefault(day, {}).setdefault((kind, device_id), {})[step] = value

    def series(day: int, table: dict, kind: str, device_id: str) -> np.ndarray:
        cells = table.get((kind, device_id))
        if cells is None:
            raise ParseError(f"{path}: day {day}: missing {kind} series for {device_id!r}")
        if sorted(cells) != list(range(T)):
            raise ParseError(
                f"{path}: day {day}: {kind}/{device_id} has {len(cells)} steps, expected {T}")
        return np.array([cells[t] for t in range(T)])

    out = []
    for day in sorted(days):
        table = days[day]
        d = ExogenousDay(
            day=day,
            solar=np.array([series(day, table, SOLAR, i) for i in solar_ids]).reshape(len(solar_ids), T),
            wind=np.array([series(day, table, WIND, i) for i in wind_ids]).reshape(len(wind_ids), T),
            load=np.array([series(day, table, "load", i) for i in load_ids]).reshape(len(load_ids), T),
            price_buy=series(day, table, "price_buy", "grid"),
            price_sell=series(day, table, "price_sell", "grid"),
        )
        validate_day(d, devices, cfg)
        out.append(d)
    if not out:
        raise ParseError(f"{path}: dataset contains no days")
    return out


def write_dataset(path: str | Path, days: list[ExogenousDay], devices: DeviceSet,
                  header_comment: str | None = None) -> None:
    solar_ids = [r.id for r in devices.renewables_of(SOLAR)]
    wind_ids = [r.id for r in devices.renewables_of(WIND)]
    load_ids = [ld.id for ld in devices.loads]
    with Path(path).open("w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for d in days:
            for t in range(d.n_steps):
                for i, dev in enumerate(solar_ids):
                    writer.writerow([d.day, t, dev, SOLAR, repr(float(d.solar[i, t]))])
                for i, dev in enumerate(wind_ids):
                    writer.writerow([d.day, t, dev, WIND, repr(float(d.wind[i, t]))])
                for i, dev in enumerate(load_ids):
                    writer.writerow([d.day, t, dev, "load", repr(float(d.load[i, t]))])
                writer.writerow([d.day, t, "grid", "price_buy", repr(float(d.price_buy[t]))])
                writer.writerow([d.day, t, "grid", "price_sell", repr(float(d.price_sell[t]))])


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthProfile:
    """Shape parameters for the synthetic generator. Defaults give a two-tier
    price day with a clear overnight-to-peak arbitrage spread."""
    sunrise: float = 6.0
    sunset: float = 18.0
    solar_noise: float = 0.10          # multiplicative sigma
    wind_mean_frac: float = 0.45       # AR(1) mean as a fraction of rated
    wind_phi: float = 0.80             # AR(1) coefficient in (0, 1)
    wind_noise_frac: float = 0.15      # AR(1) innovation sigma as fraction of rated
    load_mean_kw: float = 50.0
    load_peak_frac: float = 0.60       # morning/evening peaks on top of the mean
    load_noise: float = 0.05
    price_buy_night: float = 0.08      # $/kWh
    price_buy_day: float = 0.40
    price_day_start: float = 8.0       # hours
    price_day_end: float = 22.0
    price_noise: float = 0.04
    sell_ratio: float = 0.80           # price_sell = ratio * price_buy


def synth_dataset(seed: int, days: int, devices: DeviceSet, cfg: ScenarioConfig,
                  profile: SynthProfile = SynthProfile()) -> list[ExogenousDay]:
    """Deterministic synthetic days: clipped half-sine solar, bounded AR(1)
    wind, two-peak load, and a two-tier day/night price pattern."""
    if days < 1:
        raise ValidationError("days must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    T = cfg.n_steps
    hours = np.arange(T) * cfg.dt  # hour at the start of each step

    solar_units = devices.renewables_of(SOLAR)
    wind_units = devices.renewables_of(WIND)

    # per-load size multipliers, fixed across days for a given seed
    load_scale = profile.load_mean_kw * rng.uniform(0.6, 1.4, size=len(devices.loads))

    daylight = (hours >= profile.sunrise) & (hours < profile.sunset)
    sun_shape = np.where(
        daylight,
        np.sin(math.pi * (hours - profile.sunrise)
               / max(profile.sunset - profile.sunrise, 1e-9)),
        0.0)
    sun_shape = np.clip(sun_shape, 0.0, None)

    day_tier = (hours >= profile.price_day_start) & (hours < profile.price_day_end)
    base_buy = np.where(day_tier, profile.price_buy_day, profile.price_buy_night)

    load_shape = (1.0
                  + profile.load_peak_frac * np.exp(-0.5 * ((hours - 8.0) / 1.8) ** 2)
                  + profile.load_peak_frac * np.exp(-0.5 * ((hours - 19.0) / 2.2) ** 2))

    clamped = 0
    out: list[ExogenousDay] = []
    for day in range(days):
        solar = np.empty((len(solar_units), T))
        for i, unit in enumerate(solar_units):
            noise = np.exp(rng.normal(0.0, profile.solar_noise, size=T))
            series = unit.rated * sun_shape * noise
            clamped += int(np.sum(series > unit.rated))
            solar[i] = np.clip(series, 0.0, unit.rated)

        wind = np.empty((len(wind_units), T))
        for i, unit in enumerate(wind_units):
            mean = profile.wind_mean_frac * unit.rated
            sigma = profile.wind_noise_frac * unit.rated
            w = np.empty(T)
            prev = mean + sigma * rng.standard_normal()
            for t in range(T):
                prev = mean + profile.wind_phi * (prev - mean) + sigma * rng.standard_normal()
                w[t] = prev
            clamped += int(np.sum((w < 0) | (w > unit.rated)))
            wind[i] = np.clip(w, 0.0, unit.rated)

        load = np.empty((len(devices.loads), T))
        for i in range(len(devices.loads)):
            series = load_scale[i] * load_shape * (
                1.0 + rng.normal(0.0, profile.load_noise, size=T))
            clamped += int(np.sum(series < 0))
            load[i] = np.clip(series, 0.0, None)

        buy = base_buy * (1.0 + rng.normal(0.0, profile.price_noise, size=T))
        clamped += int(np.sum(buy < 0))
        buy = np.clip(buy, 0.0, None)
        sell = profile.sell_ratio * buy

        d = ExogenousDay(day=day, solar=solar, wind=wind, load=load,
                         price_buy=buy, price_sell=sell)
        validate_day(d, devices, cfg)
        out.append(d)
    if clamped:
        log.info("synth_dataset clamped %d values into valid ranges", clamped)
    return out
