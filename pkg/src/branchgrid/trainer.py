"""Training loop: per-episode day sampling, epsilon-greedy stepping with
feasibility clipping and the OPF sub-problem, prioritized replay updates at
the configured cadence, periodic target synchronization, and greedy
evaluation on a held-out day set. Deterministic for a fixed seed.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig, BdqNetwork, TargetNetwork, loss_and_grads, q_values, select_action
from .baselines import GreedyQPolicy, rollout
from .cone import NumericalFailure
from .env import MicrogridEnv
from .grid import ExogenousDay, ValidationError
from .nn import adam_step
from .replay import ReplayBuffer, Transition

log = logging.getLogger("branchgrid.trainer")


@dataclass(frozen=True)
class TrainConfig:
    total_episodes: int = 5000
    train_every: int = 1        # env steps per gradient step
    batch_size: int = 64
    lr: float = 1e-4
    target_sync: int = 1000     # gradient steps between target refreshes
    eval_every: int = 500       # episodes between held-out evaluations
    seed: int = 0
    max_failure_frac: float = 0.01

    def __post_init__(self):
        for name in ("total_episodes", "train_every", "batch_size",
                     "target_sync", "eval_every"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if self.lr <= 0:
            raise ValidationError("lr must be positive")


TRAINLOG_HEADER = ["episode", "step", "epsilon", "loss", "episode_return",
                   "eval_return"]


@dataclass
class TrainLog:
    episodes: list[int] = field(default_factory=list)
    env_steps: list[int] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    mean_losses: list[float | None] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    eval_returns: list[float | None] = field(default_factory=list)
    losses: list[tuple[int, float]] = field(default_factory=list)  # (grad step, loss)
    wall_clock: list[float] = field(default_factory=list)
    failures: int = 0

    def eval_curve(self) -> list[tuple[int, float]]:
        return [(ep, r) for ep, r in zip(self.episodes, self.eval_returns)
                if r is not None]

    def to_csv(self, path: str | Path, header_comment: str | None = None) -> None:
        with Path(path).open("w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRAINLOG_HEADER)
            for i in range(len(self.episodes)):
                loss = self.mean_losses[i]
                ev = self.eval_returns[i]
                writer.writerow([
                    self.episodes[i], self.env_steps[i],
                    repr(self.epsilons[i]),
                    "" if loss is None else repr(loss),
                    repr(self.episode_returns[i]),
                    "" if ev is None else repr(ev),
                ])


def evaluate(policy, days: list[ExogenousDay], env: MicrogridEnv) -> float:
    """Mean greedy episode return over the given days; no learning side
    effects."""
    if not days:
        raise ValidationError("evaluation needs at least one day")
    returns = [rollout(env, day, policy)[1] for day in days]
    return float(np.mean(returns))


def improvement_vs_myopic(policy_cost: float, myopic_cost: float) -> float:
    """Percent cost reduction relative to the myopic baseline."""
    if myopic_cost <= 0:
        raise ValidationError("myopic cost must be positive")
    return 100.0 * (myopic_cost - policy_cost) / myopic_cost


def train(env: MicrogridEnv, network: BdqNetwork, replay: ReplayBuffer,
          train_days: list[ExogenousDay], eval_days: list[ExogenousDay],
          cfg: TrainConfig) -> tuple[BdqNetwork, TrainLog]:
    """Run the full training loop and return the trained network plus log.

    Episodes sample a random training day; every step the agent's greedy
    decision is re-drawn epsilon-greedily, clipped for SoC feasibility,
    executed through the OPF, and stored; every `train_every` env steps one
    prioritized minibatch gradient step runs and priorities are refreshed;
    the target network re-syncs every `target_sync` gradient steps; held-out
    evaluation runs every `eval_every` episodes.
    """
    if not train_days:
        raise ValidationError("training dataset is empty")
    if eval_days:
        overlap = {d.day for d in train_days} & {d.day for d in eval_days}
        if overlap:
            raise ValidationError(f"evaluation days overlap training days: {sorted(overlap)}")

    agent_cfg = network.cfg
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    day_rng = np.random.default_rng(seeds[0])
    explore_rng = np.random.default_rng(seeds[1])
    replay_rng = np.random.default_rng(seeds[2])

    target = TargetNetwork(network)
    logbook = TrainLog()
    T = env.cfg.n_steps
    total_env_steps = cfg.total_episodes * T
    max_failures = max(1, int(cfg.max_failure_frac * cfg.total_episodes))
    env_step = 0
    grad_step = 0
    t_start = time.monotonic()

    for episode in range(1, cfg.total_episodes + 1):
        day = train_days[int(day_rng.integers(len(train_days)))]
        state = env.reset(day)
        ep_return = 0.0
        ep_losses: list[float] = []
        failed = False
        for _ in range(T):
            eps = agent_cfg.epsilon_at(env_step)
            q = q_values(network, state)
            levels = select_action(q, eps, explore_rng)
            try:
                out = env.step(state, levels)
            except NumericalFailure as exc:
                logbook.failures += 1
                log.warning("episode %d aborted at t=%d: %s", episode, state.t, exc)
                if logbook.failures > max_failures:
                    raise RuntimeError(
                        f"training aborted: {logbook.failures} solver failures "
                        f"exceed {cfg.max_failure_frac:.0%} of "
                        f"{cfg.total_episodes} episodes") from exc
                failed = True
                break
            replay.push(Transition(state=state, actions=levels,
                                   reward=out.reward, next_state=out.state,
                                   terminal=out.terminal))
            ep_return += out.reward
            state = out.state
            env_step += 1
            if env_step % cfg.train_every == 0 and len(replay) >= cfg.batch_size:
                beta = replay.config.beta_at(env_step / total_env_steps)
                batch, weights, leaves = replay.sample(cfg.batch_size, beta,
                                                       replay_rng)
                loss, grads, td_err = loss_and_grads(batch, weights, network,
                                                     target, agent_cfg.gamma)
                adam_step(network.params, grads, lr=cfg.lr)
                replay.update_priorities(leaves, td_err)
                grad_step += 1
                ep_losses.append(loss)
                logbook.losses.append((grad_step, loss))
                if grad_step % cfg.target_sync == 0:
                    target.sync(network, grad_step)

        eval_ret = None
        if not failed and episode % cfg.eval_every == 0 and eval_days:
            eval_ret = evaluate(GreedyQPolicy(network), eval_days, env)
            log.info("episode %d: eval return %.2f", episode, eval_ret)
        logbook.episodes.append(episode)
        logbook.env_steps.append(env_step)
        logbook.epsilons.append(agent_cfg.epsilon_at(env_step))
        logbook.mean_losses.append(float(np.mean(ep_losses)) if ep_losses else None)
        logbook.episode_returns.append(ep_return)
        logbook.eval_returns.append(eval_ret)
        logbook.wall_clock.append(time.monotonic() - t_start)

    return network, logbook
