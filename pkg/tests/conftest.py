import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

import run_ablation  # noqa: E402


@pytest.fixture(scope="session")
def ablation_grid(tmp_path_factory):
    """Train the full ablation grid (4 settings x 3 seeds) on default datasets.

    Shared between the trainer smoke assertions and the end-to-end acceptance
    criterion; this is the expensive fixture of the suite.
    """
    from textssl import trainer

    out = tmp_path_factory.mktemp("ablation_grid")
    seeds = [0, 1, 2]
    base = trainer.TrainConfig()
    t0 = time.time()
    durations = {}
    results = {}
    for name in run_ablation.ABLATION_ORDER:
        results[name] = {}
    for seed in seeds:
        import dataclasses

        from textssl import datagen

        data_config = dataclasses.replace(base, data_seed=seed).data_config()
        datasets = datagen.make_datasets(data_config)
        for name in run_ablation.ABLATION_ORDER:
            use_ccr, use_wvcr, use_wscr = run_ablation.SWITCHES[name]
            config = dataclasses.replace(base, seed=seed, data_seed=seed,
                                         use_ccr=use_ccr, use_wvcr=use_wvcr, use_wscr=use_wscr)
            t_run = time.time()
            result = trainer.train(config, datasets, out / f"{name}_seed{seed}")
            durations[(name, seed)] = time.time() - t_run
            results[name][seed] = result.rows[-1]
    summary = run_ablation.summarize(results, seeds)
    return {
        "results": results,
        "summary": summary,
        "durations": durations,
        "seeds": seeds,
        "out": out,
        "total_time": time.time() - t0,
    }
