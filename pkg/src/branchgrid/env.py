"""Episodic wrapper around one day of microgrid operation: action decoding,
SoC-feasibility clipping, the OPF sub-problem for everything that is not a
battery, reward bookkeeping, and the sliding exogenous-history window.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (DeviceSet, ExogenousDay, NetworkTopology, ScenarioConfig,
                   ValidationError)
from .opf import OpfInstance, OpfSolution, build_opf, solve_opf
from .cone import DEFAULT_TOL


@dataclass(frozen=True)
class ActionSpace:
    """Uniform signed power grid per battery; positive means discharge.
    Level 0 maps to -p_max (full charge), level n-1 to +p_max."""
    n_bess: int
    n_levels: int
    p_max: tuple[float, ...]

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValidationError("need at least 2 levels per battery")
        if len(self.p_max) != self.n_bess:
            raise ValidationError("p_max length must equal battery count")

    def levels(self, d: int) -> np.ndarray:
        return np.linspace(-self.p_max[d], self.p_max[d], self.n_levels)

    def powers(self, level_idx: np.ndarray) -> np.ndarray:
        level_idx = np.asarray(level_idx)
        if level_idx.shape != (self.n_bess,):
            raise ValidationError(f"expected {self.n_bess} level indices")
        if np.any(level_idx < 0) or np.any(level_idx >= self.n_levels):
            raise ValidationError("level index out of range")
        return np.array([self.levels(d)[level_idx[d]] for d in range(self.n_bess)])


@dataclass(frozen=True)
class EnvState:
    """Observation plus the dispatch memory needed to keep stepping pure.

    hist holds the previous W steps of aggregate (solar, wind, load) kW,
    padded with the day's first step before episode start. dg_prev is the
    realized DG dispatch of the previous period (ramp coupling); it is not
    part of the agent's features.
    """
    t: int
    soc: np.ndarray            # (N,) fractions
    hist: np.ndarray           # (W, 3) kW
    price_buy: float
    day_id: int
    steps_per_day: int
    dg_prev: np.ndarray | None = None

    def __post_init__(self):
        for name in ("soc", "hist"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class StepOutcome:
    reward: float              # negative operation cost, $
    state: EnvState            # successor
    opf: OpfSolution
    powers: np.ndarray         # executed battery powers, kW
    clipped: np.ndarray        # per-battery flag
    terminal: bool


class MicrogridEnv:
    """One instance operates one day at a time; step is a pure function of
    (state, action) given the bound day."""

    def __init__(self, topology: NetworkTopology, devices: DeviceSet,
                 cfg: ScenarioConfig, history_hours: float = 24.0,
                 n_levels: int = 11, tol: float = DEFAULT_TOL):
        self.topology = topology
        self.devices = devices
        self.cfg = cfg
        self.tol = tol
        window = history_hours / cfg.dt
        if abs(window - round(window)) > 1e-9 or round(window) < 1:
            raise ValidationError("history_hours must be a positive multiple of dt")
        self.window = int(round(window))
        self.action_space = ActionSpace(
            n_bess=devices.n_bess, n_levels=n_levels,
            p_max=tuple(d.p_max for d in devices.bess))
        self._day: ExogenousDay | None = None

    @property
    def day(self) -> ExogenousDay:
        if self._day is None:
            raise ValidationError("reset(day) must be called before stepping")
        return self._day

    def _aggregates(self, t: int) -> np.ndarray:
        d = self.day
        return np.array([d.solar[:, t].sum(), d.wind[:, t].sum(), d.load[:, t].sum()])

    def reset(self, day: ExogenousDay) -> EnvState:
        T = self.cfg.n_steps
        if day.n_steps != T:
            raise ValidationError(f"day has {day.n_steps} steps, scenario expects {T}")
        if self.cfg.rho <= float(day.price_buy.max(initial=0.0)):
            raise ValidationError("slack penalty rho must exceed every buy price")
        self._day = day
        soc = np.array([d.soc_init for d in self.devices.bess])
        hist = np.tile(self._aggregates(0), (self.window, 1))
        return EnvState(t=0, soc=soc, hist=hist,
                        price_buy=float(day.price_buy[0]), day_id=day.day,
                        steps_per_day=T, dg_prev=None)

    # -- SoC feasibility -----------------------------------------------------

    def clip_bounds(self, soc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(max charge kW, max discharge kW) keeping SoC inside its band for
        one step, intersected with the converter rating."""
        ch = np.empty(self.devices.n_bess)
        dis = np.empty(self.devices.n_bess)
        for i, d in enumerate(self.devices.bess):
            ch[i] = min(d.p_max, (d.soc_max - soc[i]) * d.e_cap / (d.eta_ch * self.cfg.dt))
            dis[i] = min(d.p_max, (soc[i] - d.soc_min) * d.e_cap * d.eta_dis / self.cfg.dt)
        return np.maximum(ch, 0.0), np.maximum(dis, 0.0)

    def feasible_clip(self, powers: np.ndarray,
                      soc: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Shrink each requested power magnitude (never flip sign) so the
        post-step SoC stays within [soc_min, soc_max]."""
        ch_max, dis_max = self.clip_bounds(soc)
        clipped = np.clip(powers, -ch_max, dis_max)
        return clipped, ~np.isclose(clipped, powers, rtol=0.0, atol=1e-12)

    def soc_after(self, soc: np.ndarray, powers: np.ndarray) -> np.ndarray:
        out = soc.copy()
        for i, d in enumerate(self.devices.bess):
            p_ch = max(-powers[i], 0.0)
            p_dis = max(powers[i], 0.0)
            out[i] += (d.eta_ch * p_ch - p_dis / d.eta_dis) * self.cfg.dt / d.e_cap
            out[i] = min(max(out[i], d.soc_min), d.soc_max)
        return out

    # -- stepping ------------------------------------------------------------

    def instance_at(self, state: EnvState, powers: np.ndarray) -> OpfInstance:
        d = self.day
        t = state.t
        return OpfInstance(
            t=t, bess_power=powers, solar_avail=d.solar[:, t],
            wind_avail=d.wind[:, t], load_p=d.load[:, t],
            price_buy=float(d.price_buy[t]), price_sell=float(d.price_sell[t]),
            prev_dg_p=state.dg_prev)

    def step_powers(self, state: EnvState, powers: np.ndarray) -> StepOutcome:
        T = self.cfg.n_steps
        if state.t >= T:
            raise ValidationError("cannot step a terminal state")
        powers, flags = self.feasible_clip(np.asarray(powers, dtype=np.float64),
                                           state.soc)
        built = build_opf(self.instance_at(state, powers), self.topology,
                          self.devices, self.cfg)
        sol = solve_opf(built, tol=self.tol)
        reward = -sol.cost.total
        t_next = state.t + 1
        hist = np.vstack([state.hist[1:], self._aggregates(state.t)])
        price_next = float(self.day.price_buy[min(t_next, T - 1)])
        next_state = EnvState(
            t=t_next, soc=self.soc_after(state.soc, powers), hist=hist,
            price_buy=price_next, day_id=state.day_id, steps_per_day=T,
            dg_prev=sol.dg_p.copy() if sol.dg_p.size else None)
        return StepOutcome(reward=reward, state=next_state, opf=sol,
                           powers=powers, clipped=flags, terminal=t_next == T)

    def step(self, state: EnvState, level_idx: np.ndarray) -> StepOutcome:
        return self.step_powers(state, self.action_space.powers(level_idx))
