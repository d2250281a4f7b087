"""
A tour of the tick engine
=========================

Four defenders hold the bottom rows of a 10-lane board while the attacker
buys units and sends them down the lanes. Everything is integer arithmetic,
so a seed fully determines a game.
"""

import numpy as np

from lanedefense.engine import (
    MAXIMAL_UNIT,
    MINIMAL_UNIT,
    NO_SPAWN,
    Action,
    AttackerAction,
    GridConfig,
    UnitSpec,
    new_game,
    spawn_cost,
    step,
)

state = new_game(GridConfig(), seed=7)
for i, d in enumerate(state.defenders):
    print(f"defender {i}: {d.role.name:<12} lane {d.x} row {d.y} hp {d.health} energy {d.energy}")
print("attacker energy", state.attacker.energy, "/", state.attacker.max_energy)

###############################################################################
# Units are priced by a product of per-field factors, so cost grows
# superlinearly with strength. The cheapest unit costs 11 energy; the
# strongest could never be afforded in a 1000-tick game.

for spec in (MINIMAL_UNIT, UnitSpec(health=5, speed=3), UnitSpec(lane=4, health=8, damage=3, range=6),
             MAXIMAL_UNIT):
    print(f"{spawn_cost(spec):>7}  {spec}")

###############################################################################
# Spawn a cheap unit in lane 1 (where the mage stands) and let it walk.
# The mage shoots it once it is in reach.

runner = UnitSpec(lane=1, health=4, speed=2)
state, out = step(state, [Action.NOOP] * 4, AttackerAction(True, runner))
print("spawned:", out.spawned is not None, "energy left:", state.attacker.energy)
for _ in range(20):
    acts = [Action.SHOOT, Action.NOOP, Action.NOOP, Action.NOOP]
    state, out = step(state, acts, NO_SPAWN)
    units = [(u.id, u.y, u.current_health) for u in state.units]
    print(f"tick {state.tick:>2} units {units} kills {out.kills_this_tick}")
    if not state.units:
        break

###############################################################################
# A whole game under uniformly random play, stepped until a terminal.

rng = np.random.default_rng(0)
state = new_game(GridConfig(), seed=1)
from lanedefense.harness import random_attacker_policy  # noqa: E402

while not state.terminal.done:
    state, out = step(state, rng.integers(0, 6, 4), random_attacker_policy(rng))
print("random game ended after", state.tick, "ticks:", state.terminal.value)
