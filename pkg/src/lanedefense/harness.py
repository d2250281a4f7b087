"""Experiment orchestration: configuration, random policies, the five run
modes, checkpoints/traces on disk, and offline trace analysis."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml

from . import nets
from .engine import (
    AttackerAction,
    DEFAULT_ROLE_SHEETS,
    DamageType,
    MINIMAL_UNIT,
    GridConfig,
    N_DEFENDER_ACTIONS,
    Role,
    RoleSheet,
    Rules,
    UNIT_FIELDS,
    UnitSpec,
)
from .metrics import STRATEGIES, StrategyStats, aggregate, detect_all, load_traces
from .nets import TrainingError
from .ppo import (
    CoTrainer,
    FinishedEpisode,
    Hyperparams,
    LearnerSide,
    encode_attacker_action,
    make_attacker_side,
    make_defender_side,
)

log = logging.getLogger(__name__)

SPAWN_PROBABILITY = 0.5


class Mode(str, Enum):
    COTRAIN = "cotrain"
    BASELINE = "baseline"
    ABLATE_DEFENDER = "ablate_defender"  # defenders learn, attacker random
    ABLATE_ATTACKER = "ablate_attacker"  # attacker learns, defenders random
    EVAL = "eval"
    ANALYZE = "analyze"


# ---------------------------------------------------------------------------
# random policies


def random_defender_policy(rng: np.random.Generator, n: int = 4) -> np.ndarray:
    """Uniform over the six actions, independently per defender; ignores energy."""
    return rng.integers(0, N_DEFENDER_ACTIONS, size=n)


def random_attacker_policy(rng: np.random.Generator, lanes: int = 10,
                           spawn_probability: float = SPAWN_PROBABILITY) -> AttackerAction:
    """Spawn with probability 1/2; every UnitSpec field uniform over its range."""
    spawn = bool(rng.random() < spawn_probability)
    values = []
    for name, lo, hi in UNIT_FIELDS:
        if name == "lane":
            hi = lanes - 1
        values.append(int(rng.integers(lo, hi + 1)))
    return AttackerAction(spawn, UnitSpec.from_tuple(values) if spawn else None)


class RandomDefenders:
    learns = False

    def act(self, obs, rng):
        n = len(obs)
        return random_defender_policy(rng, n)[:, None], np.zeros(n), np.zeros(n)


class RandomAttacker:
    learns = False

    def __init__(self, lanes: int = 10, spawn_probability: float = SPAWN_PROBABILITY):
        self.lanes = lanes
        self.spawn_probability = spawn_probability

    def act(self, obs, rng):
        action = random_attacker_policy(rng, self.lanes, self.spawn_probability)
        return encode_attacker_action(action)[None, :], np.zeros(1), np.zeros(1)


class ScriptedAttacker:
    """Tries to spawn the same unit every tick (the engine drops unaffordable spawns)."""

    learns = False

    def __init__(self, spec: UnitSpec = MINIMAL_UNIT):
        self.encoded = encode_attacker_action(AttackerAction(True, spec))[None, :]

    def act(self, obs, rng):
        return self.encoded.copy(), np.zeros(1), np.zeros(1)


def sanity_run(seed: int, episodes: int = 200, cap: int = 200,
               hyper: Optional[Hyperparams] = None) -> List[bool]:
    """Train defenders in a one-lane game against :class:`ScriptedAttacker`.

    Returns one flag per finished episode: True when the defenders survived to
    the ``cap``-tick limit.
    """
    hyper = hyper or Hyperparams()
    seq = np.random.SeedSequence(seed)
    init_seq, act_seq = seq.spawn(2)
    defender = make_defender_side(np.random.default_rng(init_seq), hyper)
    trainer = CoTrainer(defender, ScriptedAttacker(), lambda i: episode_seed(seed, i),
                        np.random.default_rng(act_seq), GridConfig(lanes=1, max_ticks=cap),
                        record_traces=False)
    while len(trainer.finished) < episodes:
        trainer.iterate(hyper.horizon, lambda: len(trainer.finished) >= episodes)
    return [e.terminal == "truncated" for e in trainer.finished[:episodes]]


class FrozenPolicy:
    """A loaded checkpoint acting stochastically without learning."""

    learns = False

    def __init__(self, spec: nets.NetSpec, params: nets.Params, spawn_masked: bool):
        self.spec = spec
        self.params = params
        self.spawn_masked = spawn_masked

    def act(self, obs, rng):
        obs = np.atleast_2d(obs)
        logits = nets.forward(self.spec, self.params, obs)
        actions, logp = nets.sample_action(logits, self.spec.heads, rng, self.spawn_masked)
        return actions, logp, np.zeros(len(obs))


def frozen(side: LearnerSide) -> FrozenPolicy:
    return FrozenPolicy(side.policy_spec, {k: v.copy() for k, v in side.params.items()}, side.spawn_masked)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    mode: Mode = Mode.COTRAIN
    episodes: int = 500
    master_seed: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    rules: Rules = field(default_factory=Rules)
    roles: Dict[Role, RoleSheet] = field(default_factory=lambda: dict(DEFAULT_ROLE_SHEETS))
    hyper: Hyperparams = field(default_factory=Hyperparams)
    out_dir: Optional[str] = None
    checkpoint_every: int = 50
    write_traces: bool = True
    # greedy-free stochastic evaluation of the final policies after training
    eval_episodes: int = 100
    # hard stop on total games when many end in truncation (never counted as episodes)
    max_games_factor: int = 3
    spawn_probability: float = SPAWN_PROBABILITY
    checkpoint: Optional[str] = None
    traces_dir: Optional[str] = None

    def validate(self) -> None:
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")
        self.grid.validate()
        self.hyper.validate()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "episodes": self.episodes,
            "master_seed": self.master_seed,
            "grid": asdict(self.grid),
            "rules": asdict(self.rules),
            "roles": {r.name.lower(): _sheet_to_dict(s) for r, s in self.roles.items()},
            "hyper": asdict(self.hyper),
            "out_dir": self.out_dir,
            "checkpoint_every": self.checkpoint_every,
            "write_traces": self.write_traces,
            "eval_episodes": self.eval_episodes,
            "max_games_factor": self.max_games_factor,
            "spawn_probability": self.spawn_probability,
            "checkpoint": self.checkpoint,
            "traces_dir": self.traces_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        d = dict(d or {})
        if "mode" in d:
            cfg.mode = Mode(d.pop("mode"))
        if "grid" in d:
            cfg.grid = _replace_checked(cfg.grid, d.pop("grid"))
        if "rules" in d:
            cfg.rules = _replace_checked(cfg.rules, d.pop("rules"))
        if "hyper" in d:
            cfg.hyper = _replace_checked(cfg.hyper, d.pop("hyper"))
        if "roles" in d:
            roles = dict(cfg.roles)
            for name, sheet in (d.pop("roles") or {}).items():
                role = Role[name.upper()]
                base = _sheet_to_dict(roles[role])
                base.update(sheet)
                roles[role] = RoleSheet(
                    damage=int(base["damage"]), damage_type=DamageType[str(base["damage_type"]).upper()],
                    phys_def=int(base["phys_def"]), magic_def=int(base["magic_def"]),
                    phys_pen=int(base["phys_pen"]), magic_pen=int(base["magic_pen"]),
                )
            cfg.roles = roles
        known = {f.name for f in dataclasses.fields(cls)}
        for k, v in d.items():
            if k not in known:
                raise ValueError(f"unknown config key: {k}")
            setattr(cfg, k, v)
        return cfg


def _sheet_to_dict(s: RoleSheet) -> dict:
    d = asdict(s)
    d["damage_type"] = s.damage_type.name.lower()
    return d


def _replace_checked(obj, overrides: dict):
    known = {f.name for f in dataclasses.fields(obj)}
    bad = set(overrides or {}) - known
    if bad:
        raise ValueError(f"unknown keys for {type(obj).__name__}: {sorted(bad)}")
    return dataclasses.replace(obj, **(overrides or {}))


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh) or {})


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))


def episode_seed(master_seed: int, index: int) -> int:
    """Independent, reproducible per-episode seed."""
    digest = hashlib.sha256(f"{master_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


# ---------------------------------------------------------------------------
# running


@dataclass
class RunSummary:
    mode: str
    stats: StrategyStats
    episode_lengths: List[int]
    counted_episodes: int
    wall_clock_seconds: float
    config: dict
    final_stats: Optional[StrategyStats] = None
    update_stats: List[dict] = field(default_factory=list)
    aborted: Optional[str] = None

    def side_table(self, stats: StrategyStats) -> dict:
        d = stats.to_dict()
        return {
            "defender": {k: d["strategies"][k] for k in ("spreading", "focusing")},
            "attacker": {k: d["strategies"][k] for k in ("flanking", "tandem")},
            "avg_episode_length": d["avg_episode_length"],
            "n_episodes": d["n_episodes"],
        }

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "stats": self.stats.to_dict(),
            "stats_by_side": self.side_table(self.stats),
            "final_stats": self.final_stats.to_dict() if self.final_stats else None,
            "episode_lengths": self.episode_lengths,
            "counted_episodes": self.counted_episodes,
            "wall_clock_seconds": self.wall_clock_seconds,
            "aborted": self.aborted,
            "config": self.config,
        }


class _Outputs:
    def __init__(self, out_dir: Optional[str]):
        self.root = Path(out_dir) if out_dir else None
        self.csv_fh = None
        self.writer = None
        if self.root is not None:
            (self.root / "traces").mkdir(parents=True, exist_ok=True)
            (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
            self.csv_fh = open(self.root / "episodes.csv", "w", newline="")
            self.writer = csv.writer(self.csv_fh, lineterminator="\n")
            self.writer.writerow(["episode", "seed", "length", "terminal", "counted",
                                  *STRATEGIES, "defender_return", "attacker_return"])

    def episode(self, ep: FinishedEpisode, counts: Dict[str, int], counted: bool, write_trace: bool) -> None:
        if self.root is None:
            return
        self.writer.writerow([ep.index, ep.seed, ep.length, ep.terminal, int(counted),
                              *(counts[k] for k in STRATEGIES),
                              repr(ep.defender_return), repr(ep.attacker_return)])
        self.csv_fh.flush()
        if write_trace and ep.trace is not None:
            ep.trace.save(self.root / "traces" / f"ep_{ep.index}.log")

    def checkpoint(self, side_name: str, side: LearnerSide, tag) -> None:
        if self.root is None:
            return
        d = self.root / "checkpoints"
        nets.save_checkpoint(d / f"{side_name}_{tag}.bin", side.policy_spec, side.params)
        nets.save_checkpoint(d / f"{side_name}_critic_{tag}.bin", side.value_spec, side.vparams)

    def close(self) -> None:
        if self.csv_fh is not None:
            self.csv_fh.close()


def _sides(cfg: ExperimentConfig, rng_init: np.random.Generator):
    lanes = cfg.grid.lanes
    if cfg.mode in (Mode.COTRAIN, Mode.ABLATE_DEFENDER):
        defender = make_defender_side(rng_init, cfg.hyper)
    else:
        defender = RandomDefenders()
    if cfg.mode in (Mode.COTRAIN, Mode.ABLATE_ATTACKER):
        attacker = make_attacker_side(rng_init, cfg.hyper, lanes)
    else:
        attacker = RandomAttacker(lanes, cfg.spawn_probability)
    if cfg.mode is Mode.EVAL:
        defender, attacker = _load_eval_sides(cfg, defender, attacker)
    return defender, attacker


def _load_eval_sides(cfg, defender, attacker):
    if not cfg.checkpoint:
        raise ValueError("eval mode needs a checkpoint path")
    path = Path(cfg.checkpoint)
    if not path.exists():
        raise ValueError(f"checkpoint path {path} does not exist")
    files = sorted(path.glob("*.bin")) if path.is_dir() else [path]
    latest: Dict[str, Path] = {}
    for f in files:
        parts = f.stem.split("_")
        if "critic" in parts:
            continue
        side = parts[0]
        if side not in ("defender", "attacker"):
            continue
        tag = parts[-1]
        key = (side, int(tag) if tag.isdigit() else 10**9)
        if side not in latest or key[1] >= latest[side][0]:
            latest[side] = (key[1], f)
    if not latest:
        raise ValueError(f"no policy checkpoints found at {path}")
    if "defender" in latest:
        spec, params = nets.load_checkpoint(latest["defender"][1])
        defender = FrozenPolicy(spec, params, False)
    if "attacker" in latest:
        spec, params = nets.load_checkpoint(latest["attacker"][1])
        attacker = FrozenPolicy(spec, params, True)
    return defender, attacker


def play_episodes(defender, attacker, cfg: ExperimentConfig, n: int, seed_offset: int,
                  rng: np.random.Generator, outputs: Optional[_Outputs] = None) -> List[FinishedEpisode]:
    """Run ``n`` games with fixed policies; no learning."""
    runner = CoTrainer(
        defender, attacker, lambda i: episode_seed(cfg.master_seed, seed_offset + i), rng,
        cfg.grid, cfg.rules, cfg.roles, record_traces=True,
        trace_config={"grid": asdict(cfg.grid), "mode": cfg.mode.value},
    )
    eps = []
    while len(eps) < n:
        ep = runner.play_tick(None, None)
        if ep is not None:
            eps.append(ep)
            if outputs is not None:
                outputs.episode(ep, detect_all(ep.trace), ep.terminal != "truncated", cfg.write_traces)
    return eps


def run_experiment(cfg: ExperimentConfig) -> RunSummary:
    cfg.validate()
    if cfg.mode is Mode.ANALYZE:
        raise ValueError("use analyze() for trace analysis")
    t0 = time.time()
    seq = np.random.SeedSequence(cfg.master_seed)
    init_seq, act_seq, eval_seq = seq.spawn(3)
    rng_act = np.random.default_rng(act_seq)
    defender, attacker = _sides(cfg, np.random.default_rng(init_seq))
    outputs = _Outputs(cfg.out_dir)
    if outputs.root is not None:
        dump_config(cfg, outputs.root / "config.yaml")
    episodes: List[FinishedEpisode] = []
    update_log: List[dict] = []
    aborted = None
    final_stats = None
    try:
        if cfg.mode in (Mode.BASELINE, Mode.EVAL):
            episodes = play_episodes(defender, attacker, cfg, cfg.episodes, 0, rng_act, outputs)
        else:
            episodes, update_log, aborted = _train(cfg, defender, attacker, rng_act, outputs)
            if aborted is None and cfg.eval_episodes > 0:
                ev_def = frozen(defender) if defender.learns else defender
                ev_att = frozen(attacker) if attacker.learns else attacker
                ev_out = _Outputs(str(outputs.root / "eval")) if outputs.root is not None else None
                ev = play_episodes(ev_def, ev_att, cfg, cfg.eval_episodes, 10**6,
                                   np.random.default_rng(eval_seq), ev_out)
                if ev_out is not None:
                    ev_out.close()
                final_stats = aggregate([e.trace for e in ev])
    finally:
        outputs.close()
    traces = [e.trace for e in episodes]
    stats = aggregate(traces) if traces else StrategyStats({k: None for k in STRATEGIES}, 0.0, 0)
    summary = RunSummary(
        mode=cfg.mode.value,
        stats=stats,
        episode_lengths=[e.length for e in episodes],
        counted_episodes=sum(1 for e in episodes if e.terminal != "truncated"),
        wall_clock_seconds=time.time() - t0,
        config=cfg.to_dict(),
        final_stats=final_stats,
        update_stats=update_log,
        aborted=aborted,
    )
    if outputs.root is not None:
        (outputs.root / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
        if update_log:
            _write_update_csv(outputs.root / "updates.csv", update_log)
    if aborted is not None:
        raise TrainingError(aborted)
    return summary


def _write_update_csv(path: Path, rows: List[dict]) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _train(cfg, defender, attacker, rng, outputs: _Outputs):
    learners = {name: side for name, side in (("defender", defender), ("attacker", attacker)) if side.learns}
    trainer = CoTrainer(
        defender, attacker, lambda i: episode_seed(cfg.master_seed, i), rng,
        cfg.grid, cfg.rules, cfg.roles, record_traces=True,
        trace_config={"grid": asdict(cfg.grid), "mode": cfg.mode.value},
    )
    episodes: List[FinishedEpisode] = []
    update_log: List[dict] = []
    counted = 0
    next_ckpt = cfg.checkpoint_every
    max_games = cfg.episodes * cfg.max_games_factor

    def done() -> bool:
        fin = trainer.finished
        n_counted = sum(1 for e in fin if e.terminal != "truncated")
        return n_counted >= cfg.episodes or len(fin) >= max_games

    iteration = 0
    while not done():
        d_buf, a_buf, eps = trainer.collect_rollout(cfg.hyper.horizon, done)
        for ep in eps:
            is_counted = ep.terminal != "truncated"
            counted += is_counted
            episodes.append(ep)
            outputs.episode(ep, detect_all(ep.trace), is_counted, cfg.write_traces)
        if done():
            break
        row = {"iteration": iteration, "episodes": counted}
        try:
            for name, buf in (("defender", d_buf), ("attacker", a_buf)):
                if buf is not None and len(buf):
                    st = learners[name].update(buf, rng)
                    row.update({f"{name}_{k}": v for k, v in st.items()})
        except TrainingError as exc:
            _dump_diagnostics(outputs, learners, iteration, exc)
            return episodes, update_log, f"training aborted at iteration {iteration}: {exc}"
        update_log.append(row)
        iteration += 1
        while counted >= next_ckpt:
            for name, side in learners.items():
                outputs.checkpoint(name, side, next_ckpt)
            next_ckpt += cfg.checkpoint_every
    for name, side in learners.items():
        outputs.checkpoint(name, side, "final")
    return episodes, update_log, None


def _dump_diagnostics(outputs: _Outputs, learners, iteration, exc) -> None:
    if outputs.root is None:
        return
    diag = {"iteration": iteration, "error": str(exc), "params": {}}
    for name, side in learners.items():
        diag["params"][name] = {
            k: {"finite": bool(np.all(np.isfinite(v))), "max_abs": float(np.nanmax(np.abs(v)))}
            for k, v in side.params.items()
        }
    (outputs.root / "diagnostics.json").write_text(json.dumps(diag, indent=2))


def analyze(trace_directory, out_dir=None):
    """Aggregate every trace in a directory into a strategy usage report."""
    traces, skipped = load_traces(trace_directory)
    if not traces:
        raise ValueError(f"no readable traces in {trace_directory}")
    stats = aggregate(traces)
    stats.skipped = skipped
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "analysis.csv").write_text(stats.to_csv())
        (out / "analysis.txt").write_text(stats.report() + "\n")
    return stats
