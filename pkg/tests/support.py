"""Independent oracles shared by the unit and acceptance tests.

Nothing here imports detector or invariant logic from the package: the
brute-force detectors are written from the strategy definitions directly.
"""

from __future__ import annotations

import numpy as np

from lanedefense.engine import Action, Terminal, UnitInstance, spawn_cost
from lanedefense.harness import random_attacker_policy, random_defender_policy
from lanedefense.metrics import EpisodeTrace, TickRecord

COST = {Action.MOVE_LEFT: 5, Action.MOVE_RIGHT: 5, Action.SHOOT: 10,
        Action.HEAL: 50, Action.SPECIAL: 200, Action.NOOP: 0}


def step_violations(prev, chosen, attacker_action, nxt, outcome):
    """List of invariant violations for one transition (empty when clean)."""
    bad = []
    r = prev.rules
    cfg = prev.config
    for i, (d0, d1) in enumerate(zip(prev.defenders, nxt.defenders)):
        avail = min(d0.energy + 1, r.defender_max_energy)
        want = Action(int(chosen[i]))
        expect_exec = want if COST[want] <= avail else Action.NOOP
        if outcome.executed[i] != expect_exec:
            bad.append(f"defender {i}: executed {outcome.executed[i]!r}, expected {expect_exec!r}")
        if d1.energy != avail - COST[expect_exec]:
            bad.append(f"defender {i}: energy {d0.energy}->{d1.energy} after {expect_exec!r}")
        if not 0 <= d1.health <= r.defender_max_health:
            bad.append(f"defender {i}: health {d1.health}")
        if not 0 <= d1.energy <= r.defender_max_energy:
            bad.append(f"defender {i}: energy {d1.energy}")
        if not 0 <= d1.x < cfg.lanes or d1.y != d0.y:
            bad.append(f"defender {i}: position ({d1.x},{d1.y})")
    a0, a1 = prev.attacker, nxt.attacker
    avail = min(a0.energy + 2, a0.max_energy)
    spent = spawn_cost(outcome.spawned) if outcome.spawned is not None else 0
    if a1.energy != avail - spent:
        bad.append(f"attacker energy {a0.energy}->{a1.energy}, spent {spent}")
    if a1.max_energy != a0.max_energy + 1 or not 0 <= a1.energy <= a1.max_energy:
        bad.append(f"attacker energy bounds {a1.energy}/{a1.max_energy}")
    if attacker_action.spawn and (outcome.spawned is None) != outcome.spawn_failed:
        bad.append("spawn flag inconsistent")
    if attacker_action.spawn and outcome.spawn_failed and spawn_cost(attacker_action.spec) <= avail:
        bad.append("affordable spawn reported as failed")
    before = {u.id: u for u in prev.units}
    attackers = {uid for uid, _ in outcome.attacks}
    breached = set(outcome.breached)
    for u in nxt.units:
        if not 0 <= u.y < cfg.depth or not 1 <= u.current_health <= u.spec.health:
            bad.append(f"unit {u.id}: y={u.y} hp={u.current_health}")
        y0 = before[u.id].y if u.id in before else cfg.depth - 1
        moved = y0 - u.y
        if moved < 0:
            bad.append(f"unit {u.id} moved backwards {y0}->{u.y}")
        halted = moved < u.spec.speed and u.id not in breached
        if halted != (u.id in attackers):
            bad.append(f"unit {u.id}: moved {moved}/{u.spec.speed}, attacked={u.id in attackers}")
        if u.id in attackers and moved >= u.spec.speed:
            bad.append(f"unit {u.id} attacked after a full advance")
    if outcome.terminal is Terminal.TRUNCATED and nxt.tick != cfg.max_ticks:
        bad.append("truncated before the cap")
    return bad


def place_unit(state, spec, y, uid=None):
    uid = state.next_unit_id if uid is None else uid
    state.units.append(UnitInstance(spec, uid, y, spec.health, state.tick, spec.phys_def, spec.magic_def))
    state.next_unit_id = max(state.next_unit_id, uid + 1)


def random_joint_action(rng, lanes=10):
    return random_defender_policy(rng), random_attacker_policy(rng, lanes)


def cheap_attacker_action(rng, lanes=10):
    """Random spawns restricted to cheap units so games have many live units."""
    from lanedefense.engine import AttackerAction, DamageType, UnitSpec
    if rng.random() < 0.5:
        return AttackerAction(False, None)
    spec = UnitSpec(
        lane=int(rng.integers(lanes)), health=int(rng.integers(1, 16)), damage=int(rng.integers(1, 6)),
        speed=int(rng.integers(1, 6)), range=int(rng.integers(1, 26)), regen=int(rng.integers(0, 2)),
        leech=int(rng.integers(0, 3)), phys_def=int(rng.integers(0, 3)), magic_def=int(rng.integers(0, 3)),
        dtype=DamageType(int(rng.integers(2))),
    )
    return AttackerAction(True, spec)


# ---------------------------------------------------------------------------
# brute-force strategy detectors


def _runs_bruteforce(flags, min_len):
    """Count starts of windows [s, s+min_len) fully true that are not preceded by a true tick."""
    n = len(flags)
    count = 0
    for s in range(n - min_len + 1):
        if all(flags[s:s + min_len]) and (s == 0 or not flags[s - 1]):
            count += 1
    return count


def bf_spreading(lanes_per_tick):
    flags = []
    for xs in lanes_per_tick:
        ok = True
        for i in range(len(xs)):
            for j in range(i + 1, len(xs)):
                if xs[i] == xs[j]:
                    ok = False
        flags.append(ok)
    return _runs_bruteforce(flags, 5)


def bf_focusing(lanes_per_tick):
    flags = []
    for xs in lanes_per_tick:
        flags.append(max(sum(1 for v in xs if v == lane) for lane in range(10)) >= 3)
    return _runs_bruteforce(flags, 2)


def bf_flanking(events):
    """events: list of (tick, lane). Greedy earliest-unpaired right partner per left spawn."""
    events = list(events)
    left = sorted(t for t, lane in events if lane <= 1)
    right = sorted(t for t, lane in events if lane >= 8)
    pairs = 0
    for tl in left:
        candidates = [k for k, tr in enumerate(right) if tr is not None and -1 <= tl - tr <= 1]
        if candidates:
            right[candidates[0]] = None
            pairs += 1
    return pairs


def bf_tandem(events):
    lanes_at = {}
    for t, lane in events:
        lanes_at.setdefault(t, []).append(lane)
    return sum(1 for t, lane in events if lane in lanes_at.get(t - 1, []))


def random_trace(rng, length=None, max_len=300):
    """Random trace with clustered lanes so every predicate fires sometimes."""
    n = int(rng.integers(1, max_len + 1)) if length is None else length
    mode = rng.random(n)
    fresh = rng.integers(0, 10, (n, 4)).tolist()
    distinct = np.argsort(rng.random((n, 10)), axis=1)[:, :4].tolist()
    n_spawns = np.where(rng.random(n) < 0.6, rng.integers(1, 3, n), 0)
    picks = rng.choice([0, 1, 8, 9, -1], size=(n, 2)).tolist()
    any_lane = rng.integers(0, 10, (n, 2)).tolist()
    xs = fresh[0] if n else []
    records = []
    for t in range(n):
        if mode[t] < 0.15:
            xs = fresh[t]
        elif mode[t] < 0.25:
            lane = fresh[t][0]
            xs = [lane, lane, lane, fresh[t][1]]
        elif mode[t] < 0.35:
            xs = distinct[t]
        spawns = []
        for k in range(n_spawns[t]):
            lane = picks[t][k] if picks[t][k] >= 0 else any_lane[t][k]
            spawns.append((lane, (lane,) + (1,) * 10 + (0,)))
        records.append(TickRecord(t=t, x=tuple(int(v) for v in xs), spawns=tuple(spawns)))
    return EpisodeTrace(records)


def trace_from_lanes(lanes_per_tick):
    return EpisodeTrace([TickRecord(t=t, x=tuple(xs)) for t, xs in enumerate(lanes_per_tick)])


def trace_from_spawns(events, length=None):
    length = length if length is not None else (max(t for t, _ in events) + 1 if events else 1)
    by_t = {}
    for t, lane in events:
        by_t.setdefault(t, []).append((lane, (lane,) + (1,) * 10 + (0,)))
    return EpisodeTrace([TickRecord(t=t, x=(1, 3, 5, 7), spawns=tuple(by_t.get(t, ()))) for t in range(length)])


def _lanes(*segments):
    out = []
    for n, xs in segments:
        out += [xs] * n
    return out


# (detector name, trace, expected count): the twelve hand-built examples
HAND_EXAMPLES = [
    ("spreading", trace_from_lanes(_lanes((20, (1, 3, 5, 7)))), 1),
    ("spreading", trace_from_lanes(_lanes((20, (2, 2, 5, 7)))), 0),
    ("spreading", trace_from_lanes(_lanes((5, (1, 3, 5, 7)), (1, (1, 1, 5, 7)), (5, (1, 3, 5, 7)))), 2),
    ("focusing", trace_from_lanes(_lanes((2, (4, 4, 4, 7)), (3, (1, 3, 5, 7)))), 1),
    ("focusing", trace_from_lanes(_lanes((1, (4, 4, 4, 7)), (3, (1, 3, 5, 7)))), 0),
    ("focusing", trace_from_lanes(_lanes((10, (6, 6, 6, 6)))), 1),
    ("flanking", trace_from_spawns([(3, 0), (4, 9)]), 1),
    ("flanking", trace_from_spawns([(3, 0), (8, 9)]), 0),
    ("flanking", trace_from_spawns([(3, 0), (3, 1), (3, 8)]), 1),
    ("tandem", trace_from_spawns([(5, 2), (6, 2)]), 1),
    ("tandem", trace_from_spawns([(5, 2), (7, 2)]), 0),
    ("tandem", trace_from_spawns([(5, 2), (6, 2), (7, 2)]), 2),
]

BRUTE_FORCE = {
    "spreading": lambda tr: bf_spreading([r.x for r in tr.records]),
    "focusing": lambda tr: bf_focusing([r.x for r in tr.records]),
    "flanking": lambda tr: bf_flanking(tr.spawn_events()),
    "tandem": lambda tr: bf_tandem(tr.spawn_events()),
}
