"""
What each side sees and earns
=============================

Defenders see their own block, their three teammates and the 16 closest
units, but never the attacker's energy. The attacker sees everything.
"""

import numpy as np

from lanedefense.engine import Action, AttackerAction, GridConfig, UnitSpec, new_game, step
from lanedefense.observe import compute_rewards, encode_attacker_obs, encode_defender_obs

np.set_printoptions(precision=3, suppress=True)

state = new_game(GridConfig(), seed=3)
for lane in (0, 4, 9):
    state, _ = step(state, [Action.NOOP] * 4, AttackerAction(True, UnitSpec(lane=lane, health=3)))

obs = encode_defender_obs(state, 0)
print("defender obs length", obs.shape[0])
print("own block       ", obs[:8])
print("first unit slots\n", obs[32:50].reshape(3, 6))

att = encode_attacker_obs(state)
print("attacker obs length", att.shape[0], "energy features", att[:2])

###############################################################################
# The defender view does not change when only the attacker's purse does.

richer = state.copy()
richer.attacker.energy = richer.attacker.max_energy
print("defender view unchanged:", np.array_equal(encode_defender_obs(richer, 0), obs))

###############################################################################
# Rewards: a small per-tick term, a kill bonus shared by all defenders, and
# a +-1 outcome that only a breach or a downed defender triggers.

state, out = step(state, [Action.NOOP] * 4, AttackerAction(True, UnitSpec(health=15, damage=5, speed=5, range=25)))
r = compute_rewards(out)
print("spawn failed:", out.spawn_failed, "defender reward", r.defender_rewards[0], "attacker", r.attacker_reward)
