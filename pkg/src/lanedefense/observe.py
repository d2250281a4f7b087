"""Observation encoders and per-tick rewards for both sides."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .engine import GameState, StepOutcome, UNIT_FIELD_BOUNDS

MAX_UNIT_SLOTS = 16
DEFENDER_BLOCK = 8
DEFENDER_UNIT_SLOT = 6
ATTACKER_BLOCK = 2
ATTACKER_UNIT_SLOT = 14
DEFENDER_OBS_DIM = DEFENDER_BLOCK * 4 + MAX_UNIT_SLOTS * DEFENDER_UNIT_SLOT  # 128
ATTACKER_OBS_DIM = ATTACKER_BLOCK + DEFENDER_BLOCK * 4 + MAX_UNIT_SLOTS * ATTACKER_UNIT_SLOT  # 258

# spec fields appended to each attacker unit slot after (present, x, y, current_health)
_ATTACKER_SLOT_FIELDS = (
    "damage", "speed", "range", "regen", "leech",
    "phys_def", "magic_def", "phys_pen", "magic_pen", "dtype",
)

R_LOSS = -1.0
R_WIN = 1.0
R_TICK = 0.001
R_KILL = 0.05
R_FAIL = -0.03


def _norm(value: float, scale: float) -> float:
    return value / scale if scale > 0 else 0.0


def _defender_block(state: GameState, i: int, out: np.ndarray, offset: int) -> None:
    d = state.defenders[i]
    r = state.rules
    out[offset] = _norm(d.x, state.config.lanes - 1)
    out[offset + 1] = _norm(d.y, state.config.defender_rows - 1)
    out[offset + 2] = d.health / r.defender_max_health
    out[offset + 3] = d.energy / r.defender_max_energy
    out[offset + 4 + int(d.role)] = 1.0


def _nearest_units(state: GameState):
    return sorted(state.units, key=lambda u: (u.y, u.id))[:MAX_UNIT_SLOTS]


def encode_defender_obs(state: GameState, idx: int) -> np.ndarray:
    """128 values in [0, 1]: own block, three teammates, 16 closest units.

    The attacker's energy is deliberately absent.
    """
    if not 0 <= idx < len(state.defenders):
        raise IndexError(f"defender index {idx} out of range")
    out = np.zeros(DEFENDER_OBS_DIM)
    _defender_block(state, idx, out, 0)
    offset = DEFENDER_BLOCK
    for j in range(len(state.defenders)):
        if j != idx:
            _defender_block(state, j, out, offset)
            offset += DEFENDER_BLOCK
    lanes = state.config.lanes - 1
    depth = state.config.depth - 1
    hp_max = UNIT_FIELD_BOUNDS["health"][1]
    dmg_max = UNIT_FIELD_BOUNDS["damage"][1]
    for u in _nearest_units(state):
        out[offset:offset + DEFENDER_UNIT_SLOT] = (
            1.0,
            _norm(u.lane, lanes),
            u.y / depth,
            min(u.current_health, hp_max) / hp_max,
            u.spec.damage / dmg_max,
            float(u.spec.dtype),
        )
        offset += DEFENDER_UNIT_SLOT
    return out


def encode_all_defenders(state: GameState) -> np.ndarray:
    return np.stack([encode_defender_obs(state, i) for i in range(len(state.defenders))])


def encode_attacker_obs(state: GameState) -> np.ndarray:
    out = np.zeros(ATTACKER_OBS_DIM)
    att = state.attacker
    out[0] = _norm(att.energy, att.max_energy)
    # max_energy keeps growing past 1000 on long episodes; clip to stay in [0, 1]
    out[1] = min(1.0, att.max_energy / 1000.0)
    offset = ATTACKER_BLOCK
    for j in range(len(state.defenders)):
        _defender_block(state, j, out, offset)
        offset += DEFENDER_BLOCK
    lanes = state.config.lanes - 1
    depth = state.config.depth - 1
    hp_max = UNIT_FIELD_BOUNDS["health"][1]
    for u in _nearest_units(state):
        slot = [1.0, _norm(u.lane, lanes), u.y / depth, min(u.current_health, hp_max) / hp_max]
        for name in _ATTACKER_SLOT_FIELDS:
            if name == "phys_def":
                value = u.phys_def
            elif name == "magic_def":
                value = u.magic_def
            else:
                value = int(getattr(u.spec, name))
            slot.append(value / UNIT_FIELD_BOUNDS[name][1])
        out[offset:offset + ATTACKER_UNIT_SLOT] = slot
        offset += ATTACKER_UNIT_SLOT
    return out


@dataclass
class RewardSample:
    defender_rewards: List[float]
    attacker_reward: float
    # terminal components kept separately so the zero-sum part can be checked
    defender_terminal: float = 0.0
    attacker_terminal: float = 0.0


def compute_rewards(outcome: StepOutcome, prev_state: GameState = None, next_state: GameState = None) -> RewardSample:
    """Per-tick rewards. Only ``outcome`` matters; the states are accepted for API symmetry."""
    win = outcome.terminal.attacker_win
    d_term = R_LOSS if win else 0.0
    a_term = R_WIN if win else 0.0
    d = d_term + R_TICK + R_KILL * outcome.kills_this_tick
    a = a_term - R_TICK + (R_FAIL if outcome.spawn_failed else 0.0)
    return RewardSample([d] * 4, a, d_term, a_term)
