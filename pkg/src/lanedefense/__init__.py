"""Adversarial lane-defense game, PPO co-training and emergent-strategy metrics."""

from .engine import (
    Action,
    AttackerAction,
    GameState,
    GridConfig,
    Role,
    Rules,
    StepOutcome,
    Terminal,
    UnitSpec,
    check_termination,
    compute_damage,
    new_game,
    spawn_cost,
    step,
)
from .metrics import EpisodeTrace, StrategyStats, aggregate, detect_all
from .harness import ExperimentConfig, Mode, analyze, run_experiment

__version__ = "0.1.0"
