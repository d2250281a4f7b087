"""
PPO on a one-lane game
======================

A quick learning check: one lane, an attacker that spams the cheapest unit,
and a 200-tick cap. Random defenders die quickly; trained ones learn to
keep shooting and survive to the cap. Takes about a minute.
"""

import numpy as np

from lanedefense.harness import sanity_run

survived = np.array(sanity_run(seed=1, episodes=200, cap=200))
for start in range(0, 200, 20):
    window = survived[start:start + 20]
    print(f"episodes {start:>3}-{start + 19:<3} survived {window.mean():4.0%}  " + "#" * int(20 * window.mean()))
