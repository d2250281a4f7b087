"""Episode traces, the four strategy detectors, and Table-4 style aggregation.

Trace file format (one JSON object per line, keys in the order below):

    {"kind": "header", "seed": ..., "episode": ..., "config": {...}}
    {"kind": "tick", "t": ..., "x": [4], "hp": [4], "en": [4], "act": [4],
     "spawns": [[lane, [12 UnitSpec ints]], ...], "fail": bool, "kills": int,
     "terminal": "none" | "attacker_win_breach" | ...}

``spawns`` lists units that actually entered play that tick; failed spawn
attempts only set ``fail``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

STRATEGIES = ("spreading", "focusing", "flanking", "tandem")
STRATEGY_LABELS = {
    "spreading": ("Defender", "Cooperative Spreading"),
    "focusing": ("Defender", "Cooperative Focusing"),
    "flanking": ("Attacker", "Flanking"),
    "tandem": ("Attacker", "Tandem"),
}

SPREAD_MIN_RUN = 5
FOCUS_MIN_RUN = 2
FOCUS_MIN_DEFENDERS = 3
FLANK_LEFT = frozenset({0, 1})
FLANK_RIGHT = frozenset({8, 9})
FLANK_WINDOW = 1


@dataclass
class TickRecord:
    t: int
    x: Tuple[int, ...]
    hp: Tuple[int, ...] = (0, 0, 0, 0)
    en: Tuple[int, ...] = (0, 0, 0, 0)
    act: Tuple[int, ...] = (5, 5, 5, 5)
    spawns: Tuple[Tuple[int, Tuple[int, ...]], ...] = ()
    fail: bool = False
    kills: int = 0
    terminal: str = "none"

    def to_json(self) -> str:
        return json.dumps({
            "kind": "tick",
            "t": self.t,
            "x": list(self.x),
            "hp": list(self.hp),
            "en": list(self.en),
            "act": list(self.act),
            "spawns": [[lane, list(spec)] for lane, spec in self.spawns],
            "fail": self.fail,
            "kills": self.kills,
            "terminal": self.terminal,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "TickRecord":
        return cls(
            t=int(d["t"]),
            x=tuple(int(v) for v in d["x"]),
            hp=tuple(int(v) for v in d["hp"]),
            en=tuple(int(v) for v in d["en"]),
            act=tuple(int(v) for v in d["act"]),
            spawns=tuple((int(lane), tuple(int(v) for v in spec)) for lane, spec in d["spawns"]),
            fail=bool(d["fail"]),
            kills=int(d["kills"]),
            terminal=str(d["terminal"]),
        )


@dataclass
class EpisodeTrace:
    records: List[TickRecord]
    seed: int = 0
    episode: int = 0
    config: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def outcome(self) -> str:
        return self.records[-1].terminal if self.records else "none"

    def spawn_events(self) -> List[Tuple[int, int]]:
        return [(r.t, lane) for r in self.records for lane, _ in r.spawns]

    def dumps(self) -> str:
        head = json.dumps({"kind": "header", "seed": self.seed, "episode": self.episode, "config": self.config})
        return "\n".join([head] + [r.to_json() for r in self.records]) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "EpisodeTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        head = json.loads(lines[0])
        if head.get("kind") != "header":
            raise ValueError("trace does not start with a header line")
        records = [TickRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        if not records:
            raise ValueError("trace has no tick records")
        return cls(records, int(head.get("seed", 0)), int(head.get("episode", 0)), head.get("config", {}))

    @classmethod
    def load(cls, path) -> "EpisodeTrace":
        return cls.loads(Path(path).read_text())


class TraceRecorder:
    """Accumulates TickRecords from engine states/outcomes during an episode."""

    def __init__(self, seed: int = 0, episode: int = 0, config: Optional[dict] = None):
        self.trace = EpisodeTrace([], seed, episode, dict(config or {}))

    def record(self, state, outcome) -> None:
        ds = state.defenders
        spawns = ()
        if outcome.spawned is not None:
            spawns = ((outcome.spawned.lane, outcome.spawned.as_tuple()),)
        self.trace.records.append(TickRecord(
            t=state.tick - 1,
            x=tuple(d.x for d in ds),
            hp=tuple(d.health for d in ds),
            en=tuple(d.energy for d in ds),
            act=tuple(int(a) for a in outcome.executed),
            spawns=spawns,
            fail=outcome.spawn_failed,
            kills=outcome.kills_this_tick,
            terminal=outcome.terminal.value,
        ))


# ---------------------------------------------------------------------------
# detectors


def _count_runs(flags: Iterable[bool], min_len: int) -> int:
    count = 0
    run = 0
    for f in flags:
        if f:
            run += 1
            if run == min_len:
                count += 1
        else:
            run = 0
    return count


def _all_distinct(lanes: Sequence[int]) -> bool:
    return len(set(lanes)) == len(lanes)


def _stacked(lanes: Sequence[int]) -> bool:
    return any(lanes.count(v) >= FOCUS_MIN_DEFENDERS for v in set(lanes))


def detect_spreading(trace: EpisodeTrace) -> int:
    """Maximal runs of >= 5 ticks in which all defenders sit in distinct lanes."""
    return _count_runs((_all_distinct(r.x) for r in trace.records), SPREAD_MIN_RUN)


def detect_focusing(trace: EpisodeTrace) -> int:
    """Maximal runs of >= 2 ticks with three or more defenders sharing a lane."""
    return _count_runs((_stacked(list(r.x)) for r in trace.records), FOCUS_MIN_RUN)


def count_flanking(events: Sequence[Tuple[int, int]]) -> int:
    lefts = sorted(t for t, lane in events if lane in FLANK_LEFT)
    rights = sorted(t for t, lane in events if lane in FLANK_RIGHT)
    used = [False] * len(rights)
    pairs = 0
    lo = 0
    for tl in lefts:
        # lefts ascend, so rights too early for this one are too early for all later ones
        while lo < len(rights) and (used[lo] or rights[lo] < tl - FLANK_WINDOW):
            lo += 1
        j = lo
        while j < len(rights) and rights[j] <= tl + FLANK_WINDOW:
            if not used[j]:
                used[j] = True
                pairs += 1
                break
            j += 1
    return pairs


def detect_flanking(trace: EpisodeTrace) -> int:
    """Far-left/far-right spawn pairs no more than one tick apart, greedily matched."""
    return count_flanking(trace.spawn_events())


def count_tandem(events: Sequence[Tuple[int, int]]) -> int:
    seen = set(events)
    return sum(1 for t, lane in events if (t - 1, lane) in seen)


def detect_tandem(trace: EpisodeTrace) -> int:
    """Spawns into a lane that also received a spawn on the previous tick."""
    return count_tandem(trace.spawn_events())


DETECTORS = {
    "spreading": detect_spreading,
    "focusing": detect_focusing,
    "flanking": detect_flanking,
    "tandem": detect_tandem,
}


def detect_all(trace: EpisodeTrace) -> Dict[str, int]:
    return {name: fn(trace) for name, fn in DETECTORS.items()}


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class StrategyRow:
    avg_uses: float
    usage_rate: float


@dataclass
class StrategyStats:
    rows: Dict[str, StrategyRow]
    avg_episode_length: float
    n_episodes: int
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "skipped": self.skipped,
            "avg_episode_length": self.avg_episode_length,
            "strategies": {k: asdict(v) for k, v in self.rows.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyStats":
        rows = {k: StrategyRow(**v) for k, v in d["strategies"].items()}
        return cls(rows, d["avg_episode_length"], d["n_episodes"], d.get("skipped", 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["agent", "strategy", "avg_uses_per_episode", "usage_rate"])
        for name in STRATEGIES:
            agent, label = STRATEGY_LABELS[name]
            row = self.rows[name]
            w.writerow([agent, label, repr(row.avg_uses), repr(row.usage_rate)])
        w.writerow(["all", "avg_episode_length", repr(self.avg_episode_length), ""])
        return buf.getvalue()

    def report(self, title: str = "Strategy frequency") -> str:
        lines = [title, "-" * 62, f"{'Agent':<10}{'Strategy metric':<40}{'Value':>12}", "-" * 62]
        for name in STRATEGIES:
            agent, label = STRATEGY_LABELS[name]
            row = self.rows[name]
            lines.append(f"{agent:<10}{label + ' (Avg. Uses/Ep)':<40}{row.avg_uses:>12.4g}")
            lines.append(f"{'':<10}{label + ' (Usage Rate)':<40}{100 * row.usage_rate:>11.3g}%")
        lines.append("-" * 62)
        lines.append(f"{'Avg. Episode Length (steps)':<50}{self.avg_episode_length:>12.4g}")
        lines.append(f"{'Episodes':<50}{self.n_episodes:>12d}")
        if self.skipped:
            lines.append(f"{'Skipped (unreadable) traces':<50}{self.skipped:>12d}")
        return "\n".join(lines)


def aggregate(traces: Sequence[EpisodeTrace], counts: Optional[List[Dict[str, int]]] = None) -> StrategyStats:
    if not traces:
        raise ValueError("aggregate() needs at least one trace")
    if counts is None:
        counts = [detect_all(tr) for tr in traces]
    n = len(traces)
    rows = {}
    for name in STRATEGIES:
        vals = [c[name] for c in counts]
        rows[name] = StrategyRow(sum(vals) / n, sum(1 for v in vals if v >= 1) / n)
    avg_len = sum(len(tr) for tr in traces) / n
    return StrategyStats(rows, avg_len, n)


def load_traces(directory) -> Tuple[List[EpisodeTrace], int]:
    """Load every ``*.log`` trace in ``directory``; unreadable files are skipped and counted."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ValueError(f"{directory} is not a directory")
    paths = sorted(directory.glob("*.log"), key=lambda p: (len(p.stem), p.stem))
    traces, skipped = [], 0
    for p in paths:
        try:
            traces.append(EpisodeTrace.load(p))
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            log.warning("skipping unreadable trace %s: %s", p, exc)
            skipped += 1
    return traces, skipped
