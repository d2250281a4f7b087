"""
Detecting the four strategies
=============================

Spreading and focusing are properties of defender lanes over time; flanking
and tandem are properties of where and when the attacker spawns. Each
detector counts events in one episode trace.
"""

import tempfile
from pathlib import Path

from lanedefense.harness import analyze
from lanedefense.metrics import EpisodeTrace, TickRecord, detect_all


def lanes_trace(rows):
    return EpisodeTrace([TickRecord(t=t, x=x) for t, x in enumerate(rows)])


def spawn_trace(events, length):
    by_t = {}
    for t, lane in events:
        by_t.setdefault(t, []).append((lane, (lane,) + (1,) * 10 + (0,)))
    return EpisodeTrace([TickRecord(t=t, x=(0, 0, 0, 9), spawns=tuple(by_t.get(t, ())))
                         for t in range(length)])


spread = lanes_trace([(1, 3, 5, 7)] * 5 + [(1, 1, 5, 7)] + [(0, 2, 4, 6)] * 6)
stack = lanes_trace([(4, 4, 4, 8)] * 3 + [(4, 4, 6, 8)] + [(2, 2, 2, 2)] * 2)
pincer = spawn_trace([(3, 0), (4, 9), (5, 1), (9, 2), (10, 2), (11, 2)], 12)

for name, tr in (("spread", spread), ("stack", stack), ("pincer", pincer)):
    print(f"{name:<7}", detect_all(tr))

###############################################################################
# Traces are JSON lines on disk; ``analyze`` turns a directory of them into
# the usage-rate table.

with tempfile.TemporaryDirectory() as d:
    for i, tr in enumerate((spread, stack, pincer)):
        tr.save(Path(d) / f"ep_{i}.log")
    print(analyze(d).report("three hand-made episodes"))
