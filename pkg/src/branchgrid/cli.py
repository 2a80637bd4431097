"""Batch front door: dataset generation, training, evaluation, oracle runs,
comparison tables, and convergence plots. Owns the run-config schema, the
checkpoint format, and all CSV/SVG outputs.

Exit codes: 0 success, 2 configuration/validation, 3 runtime/numerical.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .agent import AgentConfig, BdqNetwork
from .baselines import (GreedyQPolicy, MyopicPolicy, RandomPolicy, dp_oracle,
                        relaxed_oracle, rollout)
from .cone import NumericalFailure
from .env import MicrogridEnv
from .grid import (DeviceSet, ExogenousDay, NetworkTopology, ParseError,
                   ScenarioConfig, SynthProfile, ValidationError, load_dataset,
                   load_network, synth_dataset, write_dataset)
from .replay import ReplayBuffer, ReplayConfig
from .trainer import TrainConfig, TrainLog, TRAINLOG_HEADER, improvement_vs_myopic, train

log = logging.getLogger("branchgrid.cli")

METRICS_HEADER = ["day", "policy", "cost_usd", "return_usd", "improvement_pct"]
SUMMARY_HEADER = ["policy", "mean_pct", "max_pct", "min_pct", "stddev_pct"]
CHECKPOINT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


# ---------------------------------------------------------------------------
# run configuration


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    agent: AgentConfig
    train: TrainConfig
    replay: ReplayConfig
    profile: SynthProfile
    topology: NetworkTopology
    devices: DeviceSet
    network_path: Path
    dataset_path: Path | None
    eval_days: int
    out_dir: Path
    seed: int
    config_hash: str


def _strict(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")


def _sub(doc: dict, key: str, cls, where: str, **extra):
    section = dict(doc.get(key, {}))
    fields = {f for f in cls.__dataclass_fields__}
    _strict(section, fields, f"{where}.{key}")
    if "trunk_hidden" in section:
        section["trunk_hidden"] = tuple(section["trunk_hidden"])
    return cls(**{**section, **extra})


def load_run_config(path: str | Path, seed_override: int | None = None,
                    out_override: str | None = None) -> RunConfig:
    path = Path(path)
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    where = str(path)
    _strict(doc, {"scenario", "agent", "train", "replay", "profile", "network",
                  "dataset", "eval_days", "out_dir", "seed"}, where)
    if "network" not in doc:
        raise ValidationError(f"{where}: missing key 'network'")
    base = path.parent
    network_path = (base / doc["network"]).resolve()
    if not network_path.exists():
        raise ValidationError(f"{where}: network path {network_path} does not exist")
    topology, devices = load_network(network_path)

    dataset_path = None
    if doc.get("dataset") is not None:
        dataset_path = (base / doc["dataset"]).resolve()

    scenario = _sub(doc, "scenario", ScenarioConfig, where)
    agent = _sub(doc, "agent", AgentConfig, where,
                 n_bess=max(devices.n_bess, 1),
                 power_scale=topology.base_kva)
    if devices.n_bess == 0:
        raise ValidationError(f"{where}: network has no batteries to schedule")
    seed = int(doc.get("seed", 0)) if seed_override is None else seed_override
    train_cfg = _sub(doc, "train", TrainConfig, where, seed=seed)
    replay_cfg = _sub(doc, "replay", ReplayConfig, where)
    profile = _sub(doc, "profile", SynthProfile, where)
    out_dir = Path(out_override) if out_override else base / doc.get("out_dir", "runs")
    return RunConfig(
        scenario=scenario, agent=agent, train=train_cfg, replay=replay_cfg,
        profile=profile, topology=topology, devices=devices,
        network_path=network_path, dataset_path=dataset_path,
        eval_days=int(doc.get("eval_days", 10)), out_dir=out_dir, seed=seed,
        config_hash=hashlib.sha256(raw).hexdigest())


def _split_days(cfg: RunConfig) -> tuple[list[ExogenousDay], list[ExogenousDay]]:
    """(training days, held-out days); the last eval_days are held out."""
    if cfg.dataset_path is None:
        raise ValidationError("config has no 'dataset' path")
    if not cfg.dataset_path.exists():
        raise ValidationError(f"dataset path {cfg.dataset_path} does not exist")
    days = load_dataset(cfg.dataset_path, cfg.devices, cfg.scenario)
    if cfg.eval_days >= len(days):
        raise ValidationError(
            f"eval_days {cfg.eval_days} must be below the dataset size {len(days)}")
    if cfg.eval_days == 0:
        return days, []
    return days[:-cfg.eval_days], days[-cfg.eval_days:]


def make_env(cfg: RunConfig) -> MicrogridEnv:
    return MicrogridEnv(cfg.topology, cfg.devices, cfg.scenario,
                        history_hours=cfg.agent.history_hours,
                        n_levels=cfg.agent.n_levels)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(prefix: str | Path, network: BdqNetwork,
                    training_step: int, config_hash: str) -> tuple[Path, Path]:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    values = network.params.values()
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "agent_config": {**asdict(network.cfg),
                         "trunk_hidden": list(network.cfg.trunk_hidden)},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in values.items()],
        "training_step": training_step,
        "config_sha256": config_hash,
    }
    manifest_path = prefix.with_suffix(".manifest.json")
    payload_path = prefix.with_suffix(".params.bin")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    with payload_path.open("wb") as fh:
        for k, v in values.items():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return manifest_path, payload_path


def load_checkpoint(prefix: str | Path) -> tuple[BdqNetwork, dict]:
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".manifest.json")
    payload_path = prefix.with_suffix(".params.bin")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version "
                              f"{manifest.get('format_version')}")
    cfg_doc = dict(manifest["agent_config"])
    cfg_doc["trunk_hidden"] = tuple(cfg_doc["trunk_hidden"])
    cfg = AgentConfig(**cfg_doc)
    payload = payload_path.read_bytes()
    expected = sum(int(np.prod(t["shape"])) for t in manifest["tensors"]) * 8
    if len(payload) != expected:
        raise ValidationError(
            f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    network = BdqNetwork(cfg, np.random.default_rng(0))
    values = {}
    offset = 0
    for t in manifest["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count,
                            offset=offset).reshape(shape)
        values[t["name"]] = arr.astype(np.float64)
        offset += count * 8
    network.params.load(values)
    return network, manifest


def check_compat(network: BdqNetwork, cfg: RunConfig) -> None:
    a, b = network.cfg, cfg.agent
    for name in ("n_bess", "n_levels", "history_hours"):
        if getattr(a, name) != getattr(b, name):
            raise ValidationError(
                f"checkpoint/config mismatch on {name}: "
                f"checkpoint {getattr(a, name)}, config {getattr(b, name)}")


# ---------------------------------------------------------------------------
# metrics


def write_metrics(path: Path, rows: list[dict], config_hash: str) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={config_hash}\n")
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in rows:
            fh.write(f"{r['day']},{r['policy']},{r['cost_usd']!r},"
                     f"{r['return_usd']!r},{r['improvement_pct']!r}\n")


def run_policies(cfg: RunConfig, days: list[ExogenousDay], policies: dict,
                 env: MicrogridEnv) -> list[dict]:
    """Per-day costs for each policy plus improvement over the myopic rows."""
    rows = []
    myopic_costs = {}
    myopic = MyopicPolicy(env)
    for day in days:
        cost, ret = rollout(env, day, myopic)
        myopic_costs[day.day] = cost
        rows.append({"day": day.day, "policy": "myopic", "cost_usd": cost,
                     "return_usd": ret,
                     "improvement_pct": 0.0})
    for name, policy in policies.items():
        if name == "myopic":
            continue
        for day in days:
            if name == "relaxed_oracle":
                cost = relaxed_oracle(day, env)
                ret = -cost
            elif name == "dp_oracle":
                cost, _ = dp_oracle(day, env, soc_levels=policy)
                ret = -cost
            else:
                cost, ret = rollout(env, day, policy)
            rows.append({"day": day.day, "policy": name, "cost_usd": cost,
                         "return_usd": ret,
                         "improvement_pct": improvement_vs_myopic(
                             cost, myopic_costs[day.day])})
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    policies = sorted({r["policy"] for r in rows})
    out = []
    for p in policies:
        vals = np.array([r["improvement_pct"] for r in rows if r["policy"] == p])
        out.append({"policy": p, "mean_pct": float(vals.mean()),
                    "max_pct": float(vals.max()), "min_pct": float(vals.min()),
                    "stddev_pct": float(vals.std(ddof=0))})
    return out


def write_summary(path: Path, summary: list[dict], config_hash: str) -> None:
    with path.open("w", newline="") as fh:
        fh.write(f"# config_sha256={config_hash}\n")
        fh.write(",".join(SUMMARY_HEADER) + "\n")
        for r in summary:
            fh.write(f"{r['policy']},{r['mean_pct']!r},{r['max_pct']!r},"
                     f"{r['min_pct']!r},{r['stddev_pct']!r}\n")


# ---------------------------------------------------------------------------
# SVG convergence plot


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_eval_chart(curves: list[tuple[str, list[tuple[int, float]]]],
                      title: str = "evaluation return vs episode") -> str:
    """Deterministic SVG: one gray polyline per seed plus the blue per-episode
    median across seeds."""
    if not curves or not curves[0][1]:
        raise ValidationError("plot needs at least one non-empty log")
    width, height, ml, mr, mt, mb = 800, 480, 70, 20, 40, 50
    xs = sorted({x for _, pts in curves for x, _ in pts})
    ys = [y for _, pts in curves for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width // 2}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    # axes and ticks
    parts.append(f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" '
                 f'y2="{height - mb}" stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" '
                 f'stroke="black"/>')
    for i in range(5):
        xv = x_lo + i * (x_hi - x_lo) / 4
        yv = y_lo + i * (y_hi - y_lo) / 4
        parts.append(f'<text x="{_fmt(sx(xv))}" y="{height - mb + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{xv:.0f}</text>')
        parts.append(f'<text x="{ml - 8}" y="{_fmt(sy(yv) + 4)}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{yv:.1f}</text>')
    parts.append(f'<text x="{(ml + width - mr) // 2}" y="{height - 12}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="12">episode</text>')

    for label, pts in curves:
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="#999999" '
                     f'stroke-width="1"><title>{label}</title></polyline>')
    if len(curves) > 1:
        by_x: dict[int, list[float]] = {}
        for _, pts in curves:
            for x, y in pts:
                by_x.setdefault(x, []).append(y)
        med = [(x, float(np.median(v))) for x, v in sorted(by_x.items())]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in med)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="#1f77b4" '
                     f'stroke-width="2.5"><title>median</title></polyline>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def read_trainlog_curve(path: str | Path) -> list[tuple[int, float]]:
    curve = []
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    if header != TRAINLOG_HEADER:
        raise ParseError(f"{path}: expected header {','.join(TRAINLOG_HEADER)}")
    for ln in lines[1:]:
        cells = ln.rstrip("\n").split(",")
        if cells[5] != "":
            curve.append((int(cells[0]), float(cells[5])))
    if not curve:
        raise ValidationError(f"{path}: log has no evaluation records")
    return curve


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    cfg = load_run_config(args.config, args.seed, None)
    if args.days < 1:
        raise ValidationError("--days must be at least 1")
    days = synth_dataset(cfg.seed, args.days, cfg.devices, cfg.scenario,
                         cfg.profile)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, days, cfg.devices,
                  header_comment=f"config_sha256={cfg.config_hash}")
    log.info("wrote %d days to %s", len(days), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    train_days, eval_days = _split_days(cfg)
    env = make_env(cfg)
    network = BdqNetwork(cfg.agent, np.random.default_rng(
        np.random.SeedSequence([cfg.seed, 0xB0])))
    replay = ReplayBuffer(cfg.replay)
    _, logbook = train(env, network, replay, train_days, eval_days, cfg.train)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg.out_dir / f"bdq_seed{cfg.seed}"
    save_checkpoint(prefix, network, network.params.step, cfg.config_hash)
    logbook.to_csv(cfg.out_dir / f"trainlog_seed{cfg.seed}.csv",
                   header_comment=f"config_sha256={cfg.config_hash}")
    log.info("checkpoint and train log written under %s", cfg.out_dir)
    return EXIT_OK


_POLICIES = ("bdq", "myopic", "random", "dp_oracle", "relaxed_oracle")


def _policy_map(names: list[str], cfg: RunConfig, env: MicrogridEnv,
                checkpoint: str | None, soc_levels: int):
    policies = {}
    for name in names:
        if name == "bdq":
            if checkpoint is None:
                raise ValidationError("policy 'bdq' needs --checkpoint")
            network, _ = load_checkpoint(checkpoint)
            check_compat(network, cfg)
            policies[name] = GreedyQPolicy(network)
        elif name == "myopic":
            policies[name] = MyopicPolicy(env)
        elif name == "random":
            policies[name] = RandomPolicy(
                cfg.devices.n_bess, cfg.agent.n_levels,
                np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA1])))
        elif name == "dp_oracle":
            policies[name] = soc_levels
        elif name == "relaxed_oracle":
            policies[name] = None
        else:
            raise ValidationError(
                f"unknown policy {name!r}; choose from {_POLICIES}")
    return policies


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    _, eval_days = _split_days(cfg)
    if args.days:
        eval_days = eval_days[:args.days]
    if not eval_days:
        raise ValidationError("no evaluation days (set eval_days in the config)")
    env = make_env(cfg)
    policies = _policy_map(args.policy, cfg, env, args.checkpoint,
                           args.soc_levels)
    rows = run_policies(cfg, eval_days, policies, env)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.out_dir / "metrics.csv"
    write_metrics(out, rows, cfg.config_hash)
    log.info("metrics written to %s", out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    args.policy = ["relaxed_oracle"] + (["dp_oracle"] if args.dp else [])
    args.checkpoint = None
    return cmd_eval(args)


def cmd_compare(args) -> int:
    cfg = load_run_config(args.config, args.seed, args.out)
    _, eval_days = _split_days(cfg)
    if args.days:
        eval_days = eval_days[:args.days]
    env = make_env(cfg)
    names = ["myopic", "relaxed_oracle"] + (["bdq"] if args.checkpoint else [])
    policies = _policy_map(names, cfg, env, args.checkpoint, args.soc_levels)
    rows = run_policies(cfg, eval_days, policies, env)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(cfg.out_dir / "metrics.csv", rows, cfg.config_hash)
    write_summary(cfg.out_dir / "summary.csv",
                  [r for r in summarize(rows) if r["policy"] != "myopic"],
                  cfg.config_hash)
    log.info("comparison written under %s", cfg.out_dir)
    return EXIT_OK


def cmd_plot(args) -> int:
    curves = [(Path(p).stem, read_trainlog_curve(p)) for p in args.logs]
    svg = render_eval_chart(curves)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    log.info("plot written to %s", out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchgrid",
        description="Train and benchmark a branching dueling Q-network that "
                    "schedules distributed batteries over a branch-flow SOCP "
                    "microgrid dispatch.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=False):
        p.add_argument("--config", required=True, help="run-config JSON path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, required=out_required,
                       help="output directory (or file for gen-data/plot)")

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    common(p, out_required=True)
    p.add_argument("--days", type=int, required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train the agent on the config dataset")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies on the held-out days")
    common(p)
    p.add_argument("--policy", nargs="+", default=["bdq"], metavar="NAME",
                   help=f"one or more of {', '.join(_POLICIES)}")
    p.add_argument("--checkpoint", default=None, help="checkpoint prefix")
    p.add_argument("--days", type=int, default=0, help="cap evaluation days")
    p.add_argument("--soc-levels", dest="soc_levels", type=int, default=5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("oracle", help="run perfect-information oracles")
    common(p)
    p.add_argument("--dp", action="store_true", help="also run the DP oracle")
    p.add_argument("--days", type=int, default=0)
    p.add_argument("--soc-levels", dest="soc_levels", type=int, default=5)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("compare", help="myopic vs oracle vs trained agent table")
    common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--days", type=int, default=0)
    p.add_argument("--soc-levels", dest="soc_levels", type=int, default=5)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("plot", help="render evaluation-return traces as SVG")
    p.add_argument("--out", required=True)
    p.add_argument("logs", nargs="+", help="train-log CSV paths")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("BRANCHGRID_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        print(f"BRANCHGRID_LOG must be error, info, or debug; got {level.lower()}",
              file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, level),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
