"""Deterministic tick engine for the lane-defense game.

Four defenders hold the first rows of a lanes x depth grid; the attacker
spawns parameterised units at the far row which walk toward the baseline.
All state is integer valued so trajectories are reproducible bit-for-bit.

Phase order inside :func:`step`:

1. regeneration (defender/attacker energy, unit health regen)
2. defender actions, index order 0..3
3. attacker spawn
4. unit movement / attacks, ascending unit id
5. removal of dead units
6. termination
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class ConfigError(ValueError):
    """Invalid grid / rules configuration."""


class UsageError(RuntimeError):
    """API misuse, e.g. stepping a finished episode."""


class Role(IntEnum):
    MAGE = 0
    HEALER = 1
    TANK = 2
    SHARPSHOOTER = 3


class DamageType(IntEnum):
    PHYSICAL = 0
    MAGIC = 1


class Action(IntEnum):
    MOVE_LEFT = 0
    MOVE_RIGHT = 1
    SHOOT = 2
    HEAL = 3
    SPECIAL = 4
    NOOP = 5


N_DEFENDER_ACTIONS = len(Action)


class Terminal(Enum):
    NONE = "none"
    BREACH = "attacker_win_breach"
    DEFENDER_DOWN = "attacker_win_defender_down"
    TRUNCATED = "truncated"

    @property
    def attacker_win(self) -> bool:
        return self in (Terminal.BREACH, Terminal.DEFENDER_DOWN)

    @property
    def done(self) -> bool:
        return self is not Terminal.NONE


@dataclass(frozen=True)
class GridConfig:
    lanes: int = 10
    depth: int = 30
    defender_rows: int = 4
    max_ticks: int = 1000

    def validate(self) -> None:
        if self.lanes < 1 or self.depth < 2 or self.max_ticks < 1:
            raise ConfigError(f"invalid grid dimensions: {self}")
        if self.defender_rows != 4:
            raise ConfigError("exactly four defender rows are supported")
        if self.depth <= self.defender_rows:
            raise ConfigError("depth must exceed the defender rows")


@dataclass(frozen=True)
class Rules:
    """Economy constants. Every value is overridable from the experiment config."""

    defender_max_health: int = 100
    defender_max_energy: int = 1000
    defender_energy_regen: int = 1
    move_cost: int = 5
    shoot_cost: int = 10
    heal_cost: int = 50
    special_cost: int = 200
    heal_amount: int = 20
    party_heal_amount: int = 50
    attacker_start_energy: int = 100
    attacker_start_max_energy: int = 200
    attacker_energy_regen: int = 2
    attacker_max_energy_growth: int = 1
    cannon_damage: int = 12
    cannon_pen: int = 10
    cannon_width: int = 3
    clear_lane_damage: int = 25
    clear_lane_pen: int = 10


@dataclass(frozen=True)
class RoleSheet:
    damage: int
    damage_type: DamageType
    phys_def: int
    magic_def: int
    phys_pen: int
    magic_pen: int


DEFAULT_ROLE_SHEETS: Dict[Role, RoleSheet] = {
    Role.MAGE: RoleSheet(6, DamageType.MAGIC, 0, 4, 0, 2),
    Role.HEALER: RoleSheet(3, DamageType.MAGIC, 1, 1, 0, 0),
    Role.TANK: RoleSheet(5, DamageType.PHYSICAL, 4, 0, 0, 0),
    Role.SHARPSHOOTER: RoleSheet(8, DamageType.PHYSICAL, 0, 0, 5, 0),
}

# (name, lo, hi) in declaration order; lane upper bound follows GridConfig.lanes.
UNIT_FIELDS: Tuple[Tuple[str, int, int], ...] = (
    ("lane", 0, 9),
    ("health", 1, 15),
    ("damage", 1, 5),
    ("speed", 1, 5),
    ("range", 1, 25),
    ("regen", 0, 3),
    ("leech", 0, 5),
    ("phys_def", 0, 5),
    ("magic_def", 0, 5),
    ("phys_pen", 0, 5),
    ("magic_pen", 0, 5),
    ("dtype", 0, 1),
)
UNIT_FIELD_BOUNDS = {name: (lo, hi) for name, lo, hi in UNIT_FIELDS}


@dataclass(frozen=True)
class UnitSpec:
    lane: int = 0
    health: int = 1
    damage: int = 1
    speed: int = 1
    range: int = 1
    regen: int = 0
    leech: int = 0
    phys_def: int = 0
    magic_def: int = 0
    phys_pen: int = 0
    magic_pen: int = 0
    dtype: DamageType = DamageType.PHYSICAL

    def validate(self, lanes: int = 10) -> None:
        for name, lo, hi in UNIT_FIELDS:
            if name == "lane":
                hi = lanes - 1
            value = int(getattr(self, name))
            if not lo <= value <= hi:
                raise ValueError(f"UnitSpec.{name}={value} outside [{lo}, {hi}]")

    def as_tuple(self) -> Tuple[int, ...]:
        return tuple(int(getattr(self, name)) for name, _, _ in UNIT_FIELDS)

    @classmethod
    def from_tuple(cls, values: Sequence[int]) -> "UnitSpec":
        kwargs = {name: int(v) for (name, _, _), v in zip(UNIT_FIELDS, values)}
        kwargs["dtype"] = DamageType(kwargs["dtype"])
        return cls(**kwargs)


MINIMAL_UNIT = UnitSpec()
MAXIMAL_UNIT = UnitSpec(
    lane=9, health=15, damage=5, speed=5, range=25, regen=3, leech=5,
    phys_def=5, magic_def=5, phys_pen=5, magic_pen=5, dtype=DamageType.MAGIC,
)

# Cost factor numerators over a common denominator of 100:
# factor(v) = (100 + slope * (v - offset)) / 100.
_COST_TERMS: Tuple[Tuple[str, int, int], ...] = (
    ("health", 15, 1),
    ("damage", 50, 1),
    ("speed", 40, 1),
    ("range", 5, 0),
    ("regen", 60, 0),
    ("leech", 30, 0),
    ("phys_def", 30, 0),
    ("magic_def", 30, 0),
    ("phys_pen", 25, 0),
    ("magic_pen", 25, 0),
)
_COST_BASE = 10
_COST_DENOM = 100 ** len(_COST_TERMS)


def spawn_cost_exact(spec: UnitSpec) -> Tuple[int, int]:
    """Unrounded cost as an exact ``(numerator, denominator)`` pair."""
    num = _COST_BASE
    for name, slope, offset in _COST_TERMS:
        num *= 100 + slope * (int(getattr(spec, name)) - offset)
    return num, _COST_DENOM


def spawn_cost(spec: UnitSpec) -> int:
    """Energy needed to create ``spec``; superlinear and multiplicative in every stat.

    Evaluated in exact integer arithmetic so the ceiling never depends on
    floating point rounding.
    """
    num, den = spawn_cost_exact(spec)
    return -(-num // den)


def compute_damage(
    attack_damage: int,
    dtype: DamageType,
    pen: int,
    target_phys_def: int,
    target_magic_def: int,
) -> int:
    defense = target_phys_def if dtype == DamageType.PHYSICAL else target_magic_def
    mitigated = max(0, defense - pen)
    return max(1, attack_damage - mitigated)


@dataclass
class DefenderState:
    role: Role
    x: int
    y: int
    health: int
    energy: int


@dataclass
class UnitInstance:
    spec: UnitSpec
    id: int
    y: int
    current_health: int
    spawn_tick: int
    # live defenses; the Mage debuff zeroes these without touching the spec
    phys_def: int
    magic_def: int

    @property
    def lane(self) -> int:
        return self.spec.lane

    @property
    def pen(self) -> int:
        return self.spec.phys_pen if self.spec.dtype == DamageType.PHYSICAL else self.spec.magic_pen


@dataclass
class AttackerState:
    energy: int
    max_energy: int


@dataclass(frozen=True)
class AttackerAction:
    spawn: bool = False
    spec: Optional[UnitSpec] = None


NO_SPAWN = AttackerAction(False, None)


@dataclass
class StepOutcome:
    terminal: Terminal = Terminal.NONE
    kills_this_tick: int = 0
    spawn_failed: bool = False
    spawned: Optional[UnitSpec] = None
    executed: Tuple[Action, ...] = ()
    # (unit id, defender index) for every unit that halted to attack
    attacks: Tuple[Tuple[int, int], ...] = ()
    breached: Tuple[int, ...] = ()


@dataclass
class GameState:
    config: GridConfig
    rules: Rules
    roles: Dict[Role, RoleSheet]
    seed: int
    tick: int
    defenders: List[DefenderState]
    attacker: AttackerState
    units: List[UnitInstance]
    next_unit_id: int
    # episode-owned stream for policies; the transition itself never draws from it
    rng: np.random.Generator
    terminal: Terminal = Terminal.NONE

    def copy(self) -> "GameState":
        return GameState(
            config=self.config,
            rules=self.rules,
            roles=self.roles,
            seed=self.seed,
            tick=self.tick,
            defenders=[replace(d) for d in self.defenders],
            attacker=replace(self.attacker),
            units=[replace(u) for u in self.units],
            next_unit_id=self.next_unit_id,
            rng=self.rng,
            terminal=self.terminal,
        )

    def snapshot(self) -> tuple:
        """Hashable integer fingerprint of the full Markov state."""
        return (
            self.tick,
            self.terminal.value,
            tuple((int(d.role), d.x, d.y, d.health, d.energy) for d in self.defenders),
            (self.attacker.energy, self.attacker.max_energy),
            tuple(
                (u.id, u.spec.as_tuple(), u.y, u.current_health, u.spawn_tick, u.phys_def, u.magic_def)
                for u in self.units
            ),
            self.next_unit_id,
            str(self.rng.bit_generator.state),
        )


def new_game(
    config: GridConfig = GridConfig(),
    seed: int = 0,
    rules: Rules = Rules(),
    roles: Optional[Dict[Role, RoleSheet]] = None,
) -> GameState:
    config.validate()
    roles = dict(DEFAULT_ROLE_SHEETS if roles is None else roles)
    if set(roles) != set(Role):
        raise ConfigError("exactly four role sheets are required")
    for sheet in roles.values():
        if min(sheet.damage, sheet.phys_def, sheet.magic_def, sheet.phys_pen, sheet.magic_pen) < 0:
            raise ConfigError(f"negative role stat: {sheet}")
    defenders = [
        DefenderState(
            role=role,
            x=min(2 * i + 1, config.lanes - 1),
            y=i,
            health=rules.defender_max_health,
            energy=rules.defender_max_energy,
        )
        for i, role in enumerate(Role)
    ]
    return GameState(
        config=config,
        rules=rules,
        roles=roles,
        seed=int(seed),
        tick=0,
        defenders=defenders,
        attacker=AttackerState(rules.attacker_start_energy, rules.attacker_start_max_energy),
        units=[],
        next_unit_id=0,
        rng=np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1))),
    )


def check_termination(state: GameState) -> Terminal:
    """Terminal status implied by ``state`` alone.

    A unit sitting on row 0 is not yet a breach (it must still step off the
    board), so breach is only observable through :attr:`GameState.terminal`.
    """
    if state.terminal is Terminal.BREACH:
        return Terminal.BREACH
    if any(d.health <= 0 for d in state.defenders):
        return Terminal.DEFENDER_DOWN
    if state.tick >= state.config.max_ticks:
        return Terminal.TRUNCATED
    return Terminal.NONE


def _live_units_in_lane(state: GameState, lane: int) -> List[UnitInstance]:
    return [u for u in state.units if u.lane == lane and u.current_health > 0]


def _hit(unit: UnitInstance, damage: int, dtype: DamageType, pen: int) -> None:
    unit.current_health -= compute_damage(damage, dtype, pen, unit.phys_def, unit.magic_def)


def _special(state: GameState, idx: int) -> None:
    d = state.defenders[idx]
    rules = state.rules
    if d.role == Role.MAGE:
        for u in state.units:
            if u.current_health > 0:
                u.phys_def = 0
                u.magic_def = 0
    elif d.role == Role.HEALER:
        for other in state.defenders:
            other.health = min(rules.defender_max_health, other.health + rules.party_heal_amount)
    elif d.role == Role.TANK:
        lanes = state.config.lanes
        width = min(rules.cannon_width, lanes)
        counts = [0] * lanes
        for u in state.units:
            if u.current_health > 0:
                counts[u.lane] += 1
        best, best_start = -1, 0
        for start in range(lanes - width + 1):
            n = sum(counts[start:start + width])
            if n > best:
                best, best_start = n, start
        for u in state.units:
            if u.current_health > 0 and best_start <= u.lane < best_start + width:
                _hit(u, rules.cannon_damage, DamageType.PHYSICAL, rules.cannon_pen)
    elif d.role == Role.SHARPSHOOTER:
        for u in _live_units_in_lane(state, d.x):
            _hit(u, rules.clear_lane_damage, DamageType.PHYSICAL, rules.clear_lane_pen)


def _action_cost(rules: Rules, action: Action) -> int:
    if action in (Action.MOVE_LEFT, Action.MOVE_RIGHT):
        return rules.move_cost
    if action == Action.SHOOT:
        return rules.shoot_cost
    if action == Action.HEAL:
        return rules.heal_cost
    if action == Action.SPECIAL:
        return rules.special_cost
    return 0


def _apply_defender_action(state: GameState, idx: int, action: Action) -> Action:
    d = state.defenders[idx]
    rules = state.rules
    cost = _action_cost(rules, action)
    if cost > d.energy:
        return Action.NOOP
    d.energy -= cost
    if action == Action.MOVE_LEFT:
        d.x = max(0, d.x - 1)
    elif action == Action.MOVE_RIGHT:
        d.x = min(state.config.lanes - 1, d.x + 1)
    elif action == Action.SHOOT:
        targets = _live_units_in_lane(state, d.x)
        if targets:
            target = min(targets, key=lambda u: (abs(u.y - d.y), u.id))
            sheet = state.roles[d.role]
            pen = sheet.phys_pen if sheet.damage_type == DamageType.PHYSICAL else sheet.magic_pen
            _hit(target, sheet.damage, sheet.damage_type, pen)
    elif action == Action.HEAL:
        d.health = min(rules.defender_max_health, d.health + rules.heal_amount)
    elif action == Action.SPECIAL:
        _special(state, idx)
    return action


def _engaged_defender(state: GameState, unit: UnitInstance) -> Optional[int]:
    """Index of the defender a unit stops to attack: same lane, within range,
    nearest in y, lowest index on ties."""
    best = None
    best_key = None
    for i, d in enumerate(state.defenders):
        if d.x != unit.lane or unit.y - d.y > unit.spec.range:
            continue
        key = (abs(unit.y - d.y), i)
        if best_key is None or key < best_key:
            best, best_key = i, key
    return best


def step(
    state: GameState,
    defender_actions: Sequence[int],
    attacker_action: AttackerAction = NO_SPAWN,
) -> Tuple[GameState, StepOutcome]:
    """Advance one tick. ``state`` is left untouched; a new state is returned."""
    if state.terminal.done:
        raise UsageError(f"cannot step a finished episode ({state.terminal.value})")
    if len(defender_actions) != len(state.defenders):
        raise UsageError("exactly one action per defender is required")
    s = state.copy()
    rules = s.rules
    out = StepOutcome()

    # (1) regeneration
    for d in s.defenders:
        d.energy = min(rules.defender_max_energy, d.energy + rules.defender_energy_regen)
    att = s.attacker
    att.energy = min(att.max_energy, att.energy + rules.attacker_energy_regen)
    att.max_energy += rules.attacker_max_energy_growth
    for u in s.units:
        u.current_health = min(u.spec.health, u.current_health + u.spec.regen)

    # (2) defenders
    out.executed = tuple(
        _apply_defender_action(s, i, Action(int(a))) for i, a in enumerate(defender_actions)
    )

    # (3) attacker
    if attacker_action.spawn:
        spec = attacker_action.spec
        if spec is None:
            raise UsageError("spawn action without a UnitSpec")
        spec.validate(s.config.lanes)
        cost = spawn_cost(spec)
        if att.energy >= cost:
            att.energy -= cost
            s.units.append(UnitInstance(
                spec=spec,
                id=s.next_unit_id,
                y=s.config.depth - 1,
                current_health=spec.health,
                spawn_tick=s.tick,
                phys_def=spec.phys_def,
                magic_def=spec.magic_def,
            ))
            s.next_unit_id += 1
            out.spawned = spec
        else:
            out.spawn_failed = True

    # (4) units
    attacks = []
    breached = []
    for u in sorted(s.units, key=lambda u: u.id):
        if u.current_health <= 0:
            continue
        for _ in range(u.spec.speed):
            target = _engaged_defender(s, u)
            if target is not None:
                dmg = compute_damage(u.spec.damage, u.spec.dtype, u.pen, *_defender_defenses(s, s.defenders[target]))
                d = s.defenders[target]
                d.health = max(0, d.health - dmg)
                u.current_health = min(u.spec.health, u.current_health + u.spec.leech)
                attacks.append((u.id, target))
                break
            if u.y == 0:
                breached.append(u.id)
                break
            u.y -= 1
    out.attacks = tuple(attacks)
    out.breached = tuple(breached)
    breach = bool(breached)

    # (5) cleanup
    alive = [u for u in s.units if u.current_health > 0]
    out.kills_this_tick = len(s.units) - len(alive)
    s.units = alive

    # (6) termination
    s.tick += 1
    if breach:
        out.terminal = Terminal.BREACH
    elif any(d.health <= 0 for d in s.defenders):
        out.terminal = Terminal.DEFENDER_DOWN
    elif s.tick >= s.config.max_ticks:
        out.terminal = Terminal.TRUNCATED
    s.terminal = out.terminal
    return s, out


def _defender_defenses(state: GameState, d: DefenderState) -> Tuple[int, int]:
    sheet = state.roles[d.role]
    return sheet.phys_def, sheet.magic_def


class LaneDefenseEnv:
    """Stateful convenience wrapper: ``reset`` / ``step`` over the pure functions."""

    def __init__(
        self,
        config: GridConfig = GridConfig(),
        rules: Rules = Rules(),
        roles: Optional[Dict[Role, RoleSheet]] = None,
    ):
        config.validate()
        self.config = config
        self.rules = rules
        self.roles = roles
        self.state: Optional[GameState] = None

    def reset(self, seed: int) -> GameState:
        self.state = new_game(self.config, seed, self.rules, self.roles)
        return self.state

    def step(self, defender_actions, attacker_action=NO_SPAWN) -> Tuple[GameState, StepOutcome]:
        if self.state is None:
            raise UsageError("reset() must be called before step()")
        self.state, outcome = step(self.state, defender_actions, attacker_action)
        return self.state, outcome
