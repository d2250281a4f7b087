import csv
import hashlib
import json
import math

import numpy as np
import pytest

from lanedefense import cli
from lanedefense.engine import UNIT_FIELDS, GridConfig, Role
from lanedefense.harness import (
    ExperimentConfig,
    Mode,
    analyze,
    dump_config,
    episode_seed,
    load_config,
    random_attacker_policy,
    random_defender_policy,
    run_experiment,
)
from lanedefense.metrics import STRATEGIES
from lanedefense.nets import TrainingError
from lanedefense.ppo import LearnerSide

from support import trace_from_lanes, trace_from_spawns


def within_3sigma(count, n, p):
    return abs(count - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def small_cfg(tmp_path, mode, name="run", **kw):
    cfg = ExperimentConfig(mode=mode, episodes=kw.pop("episodes", 4), master_seed=kw.pop("seed", 11),
                           out_dir=str(tmp_path / name), eval_episodes=kw.pop("eval_episodes", 2), **kw)
    cfg.hyper.horizon = 64
    cfg.hyper.epochs_per_update = 1
    cfg.grid = GridConfig(max_ticks=kw.get("max_ticks", 300))
    return cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRandomPolicies:
    def test_defender_uniform(self):
        rng = np.random.default_rng(0)
        acts = np.concatenate([random_defender_policy(rng) for _ in range(15_000)])
        assert len(acts) == 60_000
        counts = np.bincount(acts, minlength=6)
        assert all(within_3sigma(c, 60_000, 1 / 6) for c in counts)

    def test_defender_reproducible(self):
        a = [random_defender_policy(np.random.default_rng(5)).tolist() for _ in range(2)]
        assert a[0] == a[1]

    def test_attacker_spawn_rate_and_lanes(self):
        rng = np.random.default_rng(1)
        acts = [random_attacker_policy(rng) for _ in range(10_000)]
        spawned = [a.spec for a in acts if a.spawn]
        assert within_3sigma(len(spawned), 10_000, 0.5)
        lanes = np.bincount([s.lane for s in spawned], minlength=10)
        assert all(within_3sigma(c, len(spawned), 0.1) for c in lanes)
        for name, lo, hi in UNIT_FIELDS:
            vals = {int(getattr(s, name)) for s in spawned}
            assert min(vals) == lo and max(vals) == hi

    def test_attacker_respects_lane_count(self):
        rng = np.random.default_rng(2)
        assert {random_attacker_policy(rng, lanes=3, spawn_probability=1.0).spec.lane for _ in range(200)} == {0, 1, 2}


class TestConfig:
    def test_yaml_roundtrip(self, tmp_path):
        cfg = ExperimentConfig(mode=Mode.ABLATE_ATTACKER, episodes=7, master_seed=3)
        cfg.hyper.horizon = 512
        cfg.rules = cfg.rules.__class__(attacker_energy_regen=3)
        path = tmp_path / "c.yaml"
        dump_config(cfg, path)
        back = load_config(path)
        assert back.to_dict() == cfg.to_dict()
        assert back.rules.attacker_energy_regen == 3 and back.hyper.horizon == 512

    def test_partial_override(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("episodes: 9\nhyper:\n  clip_epsilon: 0.1\nroles:\n  mage:\n    damage: 7\n")
        cfg = load_config(path)
        assert cfg.episodes == 9 and cfg.hyper.clip_epsilon == 0.1 and cfg.hyper.batch_size == 128
        assert cfg.roles[Role.MAGE].damage == 7

    @pytest.mark.parametrize("text", ["bogus: 1\n", "hyper:\n  nope: 2\n", "grid:\n  width: 3\n"])
    def test_unknown_keys(self, tmp_path, text):
        path = tmp_path / "c.yaml"
        path.write_text(text)
        with pytest.raises(ValueError):
            load_config(path)

    def test_validation(self):
        with pytest.raises(ValueError):
            run_experiment(ExperimentConfig(episodes=0))

    def test_episode_seeds(self):
        seeds = [episode_seed(42, i) for i in range(1000)]
        assert len(set(seeds)) == 1000
        assert seeds == [episode_seed(42, i) for i in range(1000)]
        assert episode_seed(43, 0) != seeds[0]


class TestBaseline:
    def test_outputs_and_byte_identical_traces(self, tmp_path):
        runs = [run_experiment(small_cfg(tmp_path, Mode.BASELINE, name, episodes=6)) for name in ("a", "b")]
        for fname in ["episodes.csv"] + [f"traces/ep_{i}.log" for i in range(6)]:
            assert (tmp_path / "a" / fname).read_bytes() == (tmp_path / "b" / fname).read_bytes()
        assert runs[0].episode_lengths == runs[1].episode_lengths
        rows = read_csv(tmp_path / "a" / "episodes.csv")
        assert len(rows) == 6
        assert np.mean([int(r["length"]) for r in rows]) == pytest.approx(runs[0].stats.avg_episode_length)
        for k in STRATEGIES:
            rate = np.mean([int(r[k]) >= 1 for r in rows])
            assert rate == pytest.approx(runs[0].stats.rows[k].usage_rate)
        summary = json.loads((tmp_path / "a" / "summary.json").read_text())
        assert summary["episode_lengths"] == runs[0].episode_lengths
        assert not list((tmp_path / "a" / "checkpoints").iterdir())

    def test_reanalysis_matches_summary(self, tmp_path):
        summary = run_experiment(small_cfg(tmp_path, Mode.BASELINE, episodes=8))
        stats = analyze(tmp_path / "run" / "traces", tmp_path / "report")
        assert stats.to_dict() == summary.stats.to_dict()
        assert (tmp_path / "report" / "analysis.csv").read_text() == stats.to_csv()


class TestAnalyze:
    def test_synthetic_directory(self, tmp_path):
        spread = [(1, 3, 5, 7)] * 10
        traces = [trace_from_lanes(spread)] * 4 + [trace_from_lanes([(4, 4, 4, 0)] * 10)] * 3
        traces += [trace_from_spawns([(2, 0), (3, 9), (4, 9)], length=10)] * 3
        for i, tr in enumerate(traces):
            tr.save(tmp_path / f"ep_{i}.log")
        stats = analyze(tmp_path)
        # the spawn traces keep defenders at 1, 3, 5, 7 for 10 ticks, so they spread too
        assert stats.rows["spreading"].usage_rate == pytest.approx(0.7)
        assert stats.rows["focusing"].avg_uses == pytest.approx(0.3)
        assert stats.rows["flanking"].avg_uses == pytest.approx(0.3)
        assert stats.rows["tandem"].usage_rate == pytest.approx(0.3)
        assert stats.avg_episode_length == 10 and stats.n_episodes == 10

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError):
            analyze(tmp_path)

    def test_corrupt_counted(self, tmp_path):
        trace_from_lanes([(1, 3, 5, 7)] * 6).save(tmp_path / "ep_0.log")
        (tmp_path / "ep_1.log").write_text("garbage")
        stats = analyze(tmp_path)
        assert stats.n_episodes == 1 and stats.skipped == 1
        assert "Skipped" in stats.report()


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestTraining:
    def test_ablate_defender_isolation(self, tmp_path):
        cfg = small_cfg(tmp_path, Mode.ABLATE_DEFENDER, episodes=3, checkpoint_every=1)
        summary = run_experiment(cfg)
        ckpts = sorted(p.name for p in (tmp_path / "run" / "checkpoints").iterdir())
        assert ckpts and all(n.startswith("defender_") for n in ckpts)
        assert "defender_final.bin" in ckpts and "defender_1.bin" in ckpts
        assert summary.counted_episodes == 3 and summary.update_stats
        assert all(not any(k.startswith("attacker") for k in row) for row in summary.update_stats)
        assert (tmp_path / "run" / "eval" / "episodes.csv").exists()

    def test_ablate_attacker_isolation(self, tmp_path):
        summary = run_experiment(small_cfg(tmp_path, Mode.ABLATE_ATTACKER, episodes=3, checkpoint_every=1))
        ckpts = [p.name for p in (tmp_path / "run" / "checkpoints").iterdir()]
        assert ckpts and all(n.startswith("attacker_") for n in ckpts)
        assert summary.final_stats is not None

    def test_cotrain_reproducible_and_changes_both(self, tmp_path):
        a = run_experiment(small_cfg(tmp_path, Mode.COTRAIN, "a", episodes=3, checkpoint_every=1))
        b = run_experiment(small_cfg(tmp_path, Mode.COTRAIN, "b", episodes=3, checkpoint_every=1))
        assert a.episode_lengths == b.episode_lengths
        for side in ("defender", "attacker"):
            fa = tmp_path / "a" / "checkpoints" / f"{side}_final.bin"
            assert _digest(fa) == _digest(tmp_path / "b" / "checkpoints" / fa.name)
        rows = read_csv(tmp_path / "a" / "updates.csv")
        assert rows and all(r["defender_policy_loss"] and r["attacker_policy_loss"] for r in rows)

    def test_csv_rows_match_games(self, tmp_path):
        summary = run_experiment(small_cfg(tmp_path, Mode.ABLATE_DEFENDER, episodes=2))
        rows = read_csv(tmp_path / "run" / "episodes.csv")
        assert len(rows) == len(summary.episode_lengths)
        assert sum(int(r["counted"]) for r in rows) == summary.counted_episodes

    def test_eval_from_checkpoint(self, tmp_path):
        run_experiment(small_cfg(tmp_path, Mode.COTRAIN, "train", episodes=2, eval_episodes=0))
        cfg = small_cfg(tmp_path, Mode.EVAL, "ev", episodes=3)
        cfg.checkpoint = str(tmp_path / "train" / "checkpoints")
        summary = run_experiment(cfg)
        assert len(summary.episode_lengths) == 3

    def test_eval_needs_checkpoint(self, tmp_path):
        with pytest.raises(ValueError):
            run_experiment(small_cfg(tmp_path, Mode.EVAL))

    def test_training_error_dumps_diagnostics(self, tmp_path, monkeypatch):
        def boom(self, buf, rng):
            raise TrainingError("non-finite gradient")
        monkeypatch.setattr(LearnerSide, "update", boom)
        with pytest.raises(TrainingError):
            run_experiment(small_cfg(tmp_path, Mode.COTRAIN, episodes=50))
        diag = json.loads((tmp_path / "run" / "diagnostics.json").read_text())
        assert "non-finite" in diag["error"]
        assert json.loads((tmp_path / "run" / "summary.json").read_text())["aborted"]


class TestCli:
    def test_baseline(self, tmp_path, capsys):
        code = cli.main(["baseline", "--episodes", "3", "--seed", "2", "--out", str(tmp_path / "b")])
        assert code == 0
        assert "Avg. Episode Length" in capsys.readouterr().out
        assert len(read_csv(tmp_path / "b" / "episodes.csv")) == 3

    def test_analyze(self, tmp_path, capsys):
        trace_from_lanes([(1, 3, 5, 7)] * 6).save(tmp_path / "ep_0.log")
        assert cli.main(["analyze", "--traces", str(tmp_path)]) == 0
        assert "Cooperative Spreading" in capsys.readouterr().out

    def test_analyze_empty_dir(self, tmp_path):
        assert cli.main(["analyze", "--traces", str(tmp_path)]) == 1

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("nonsense_key: 1\n")
        assert cli.main(["baseline", "--config", str(path)]) == 1

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.bin"), "--out", str(tmp_path / "e")]) != 0

    def test_training_error_exit_code(self, tmp_path, monkeypatch):
        def boom(cfg):
            raise TrainingError("nan")
        monkeypatch.setattr(cli, "run_experiment", boom)
        assert cli.main(["ablate", "--side", "defender", "--out", str(tmp_path)]) == 2

    def test_usage(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["ablate"])
        assert exc.value.code != 0
