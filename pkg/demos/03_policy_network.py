"""
Networks, heads and gradients
=============================

The policies are two-layer ReLU MLPs. The defender has one 6-way head; the
attacker has 13 heads, and when it decides not to spawn only the spawn head
counts toward its log-probability.
"""

import numpy as np

from lanedefense import nets
from lanedefense.nets import NetSpec, attacker_heads

rng = np.random.default_rng(0)
defender = NetSpec(128, nets.DEFENDER_HEADS)
attacker = NetSpec(258, attacker_heads())
p_def = nets.init_params(defender, rng)
p_att = nets.init_params(attacker, rng)

obs = rng.random((5, 128))
logits = nets.forward(defender, p_def, obs)
actions, logp = nets.sample_action(logits, defender.heads, rng)
print("defender actions", actions[:, 0], "log-probs", np.round(logp, 3))

att_logits = nets.forward(attacker, p_att, rng.random((5, 258)))
acts, logp = nets.sample_action(att_logits, attacker.heads, rng, spawn_masked=True)
for a, lp in zip(acts, logp):
    print("spawn" if a[0] else "wait ", f"{lp:8.3f}", a)

###############################################################################
# Analytic gradients against central differences.

loss = nets.policy_logprob_loss(attacker, rng.random((3, 258)), acts[:3], spawn_masked=True)
print("max relative gradient error", nets.grad_check(loss, p_att, rng))

###############################################################################
# Adam on a single parameter with a constant gradient settles at steps of
# exactly the learning rate.

w = {"w": np.array([0.0])}
opt = nets.Adam(w, lr=0.01)
for i in range(2000):
    new = opt.step(w, {"w": np.array([4.2])})
    step_size, w = float(w["w"][0] - new["w"][0]), new
print("late step size", step_size)
