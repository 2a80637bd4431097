"""Reference policies bracketing the learned agent: myopic single-period
dispatch, uniform random, a perfect-information dynamic program over a SoC
grid for small systems, and the multi-period relaxation bound for large ones.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .agent import q_values, select_action
from .env import EnvState, MicrogridEnv
from .grid import ExogenousDay, ValidationError
from .opf import (OpfInstance, build_opf, build_opf_free_bess,
                  build_multiperiod_relaxation, solve_opf, solve_multiperiod)

DP_BUDGET = 2_000_000  # joint (SoC states x actions x periods) cap


def myopic_decide(state: EnvState, env: MicrogridEnv) -> np.ndarray:
    """Battery powers minimizing only the current period's cost.

    Solves one OPF with the batteries as continuous variables inside their
    SoC-feasibility clip limits; no lookahead, no future prices.
    """
    ch_max, dis_max = env.clip_bounds(state.soc)
    built = build_opf_free_bess(env.instance_at(state, np.zeros(env.devices.n_bess)),
                                env.topology, env.devices, env.cfg,
                                ch_max=ch_max, dis_max=dis_max)
    return solve_opf(built, tol=env.tol).bess_p


class MyopicPolicy:
    """Greedy per-period policy; returns continuous powers (kW)."""

    def __init__(self, env: MicrogridEnv):
        self.env = env

    def act(self, state: EnvState) -> np.ndarray:
        return myopic_decide(state, self.env)


class RandomPolicy:
    """Uniform level per branch; the sanity floor."""

    def __init__(self, n_bess: int, n_levels: int, rng: np.random.Generator):
        self.n_bess = n_bess
        self.n_levels = n_levels
        self.rng = rng

    def act(self, state: EnvState) -> np.ndarray:
        return self.rng.integers(0, self.n_levels, size=self.n_bess)


class GreedyQPolicy:
    """Argmax rollout of a trained network."""

    _rng = np.random.default_rng(0)  # unused at eps=0

    def __init__(self, network):
        self.network = network

    def act(self, state: EnvState) -> np.ndarray:
        return select_action(q_values(self.network, state), 0.0, self._rng)


def rollout(env: MicrogridEnv, day: ExogenousDay, policy) -> tuple[float, float]:
    """(total cost $, total return $) of one greedy episode.

    Policies returning integer arrays are treated as level indices; float
    arrays as raw battery powers (clipped identically inside step).
    """
    state = env.reset(day)
    total_reward = 0.0
    for _ in range(env.cfg.n_steps):
        action = np.asarray(policy.act(state))
        if np.issubdtype(action.dtype, np.integer):
            out = env.step(state, action)
        else:
            out = env.step_powers(state, action)
        total_reward += out.reward
        state = out.state
    return -total_reward, total_reward


def dp_oracle(day: ExogenousDay, env: MicrogridEnv, soc_levels: int = 5,
              budget: int = DP_BUDGET) -> tuple[float, np.ndarray]:
    """Exact optimum of the discretized perfect-information problem.

    Backward induction over periods x a uniform joint SoC grid; the action set
    is the agent's own level grid after feasibility clipping, stage costs come
    from memoized single-period OPF solves, and successor SoCs round DOWN to
    the grid (conservative: rounding never mints stored energy, so the value
    stays above the continuous relaxation bound; it is exact whenever the
    reachable SoCs land on the grid). DG ramp coupling across periods is not
    modeled here (sample systems keep ramps non-binding).

    Returns (optimal cost $, (T, N) schedule of executed powers in kW).
    """
    T = env.cfg.n_steps
    if day.n_steps != T:
        raise ValidationError("day length mismatch")
    N = env.devices.n_bess
    n_levels = env.action_space.n_levels
    if (soc_levels ** N) * (n_levels ** N) * T > budget:
        raise ValidationError(
            f"dp_oracle state-action budget exceeded: "
            f"{(soc_levels ** N) * (n_levels ** N) * T} > {budget}")

    grids = [np.linspace(d.soc_min, d.soc_max, soc_levels) for d in env.devices.bess]
    joint = list(itertools.product(*(range(soc_levels) for _ in range(N))))
    actions = list(itertools.product(*(range(n_levels) for _ in range(N))))

    env.reset(day)  # bind the day
    stage_cache: dict[tuple, float] = {}

    def stage_cost(t: int, powers: np.ndarray) -> float:
        key = (t, tuple(np.round(powers, 9)))
        if key not in stage_cache:
            inst = OpfInstance(
                t=t, bess_power=powers, solar_avail=day.solar[:, t],
                wind_avail=day.wind[:, t], load_p=day.load[:, t],
                price_buy=float(day.price_buy[t]),
                price_sell=float(day.price_sell[t]), prev_dg_p=None)
            sol = solve_opf(build_opf(inst, env.topology, env.devices, env.cfg),
                            tol=env.tol)
            stage_cache[key] = sol.cost.total
        return stage_cache[key]

    def snap(soc: np.ndarray) -> tuple[int, ...]:
        # floor in stored energy (1e-9 guard absorbs recursion round-off)
        return tuple(
            max(int(np.searchsorted(grids[i], soc[i] + 1e-9, side="right")) - 1, 0)
            for i in range(N))

    value = {s: 0.0 for s in joint}
    best_action: list[dict[tuple, tuple]] = [dict() for _ in range(T)]
    for t in range(T - 1, -1, -1):
        new_value = {}
        for s in joint:
            soc = np.array([grids[i][s[i]] for i in range(N)])
            best = np.inf
            arg = actions[0]
            for a in actions:
                powers = np.array([env.action_space.levels(i)[a[i]] for i in range(N)])
                powers, _ = env.feasible_clip(powers, soc)
                cost = stage_cost(t, powers) + value[snap(env.soc_after(soc, powers))]
                if cost < best:
                    best = cost
                    arg = a
            new_value[s] = best
            best_action[t][s] = arg
        value = new_value

    # forward pass to recover the executed schedule
    soc = np.array([d.soc_init for d in env.devices.bess])
    schedule = np.zeros((T, N))
    total = value[snap(soc)]
    grid_soc = np.array([grids[i][snap(soc)[i]] for i in range(N)])
    for t in range(T):
        a = best_action[t][snap(grid_soc)]
        powers = np.array([env.action_space.levels(i)[a[i]] for i in range(N)])
        powers, _ = env.feasible_clip(powers, grid_soc)
        schedule[t] = powers
        grid_soc = np.array([grids[i][snap(env.soc_after(grid_soc, powers))[i]]
                             for i in range(N)])
    return float(total), schedule


def relaxed_oracle(day: ExogenousDay, env: MicrogridEnv) -> float:
    """Perfect-information lower bound: the multi-period SOCP with continuous
    charge/discharge split variables."""
    built = build_multiperiod_relaxation(day, env.topology, env.devices, env.cfg)
    return solve_multiperiod(built, tol=env.tol).total_cost


def random_policy(state: EnvState, rng: np.random.Generator, n_bess: int,
                  n_levels: int) -> np.ndarray:
    return rng.integers(0, n_levels, size=n_bess)
