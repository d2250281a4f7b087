"""
Baseline, ablation and co-training runs
=======================================

``run_experiment`` drives every mode. The runs here are kept short; the
command line (``lanedefense train --episodes 500``) runs the full versions.
"""

import tempfile

from lanedefense.harness import ExperimentConfig, Mode, run_experiment

with tempfile.TemporaryDirectory() as out:
    base = run_experiment(ExperimentConfig(mode=Mode.BASELINE, episodes=50, master_seed=0,
                                           out_dir=f"{out}/baseline"))
    print(base.stats.report("both sides random, 50 games"))

    cfg = ExperimentConfig(mode=Mode.ABLATE_DEFENDER, episodes=20, master_seed=0, eval_episodes=20,
                           out_dir=f"{out}/ablate")
    cfg.hyper.horizon = 512
    ablate = run_experiment(cfg)
    print()
    print(ablate.final_stats.report("defenders after 20 training games vs a random attacker"))
    print("training episode lengths:", ablate.episode_lengths)
