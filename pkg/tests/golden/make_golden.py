"""Regenerate tests/golden/manifest.json from reference runs.

Run only when a reference value is meant to change; the test suite compares
against the frozen file.

    python tests/golden/make_golden.py
"""
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
ROOT = HERE.parents[1]
sys.path.insert(0, str(HERE))

from recount import recount  # noqa: E402

from ehexit.cli import main as cli_main  # noqa: E402
from ehexit.config import load_config  # noqa: E402
from ehexit.experiment import build_env, build_scenario, data_path, trained_network  # noqa: E402
from ehexit.ehsim import GreedyStaticSelector, exit_fraction, simulate  # noqa: E402
from ehexit.netcore import load_descriptor, predict_all_exits  # noqa: E402
from ehexit.search import random_search_baseline  # noqa: E402
from ehexit.toytrain import gen_dataset  # noqa: E402


def sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sample_input() -> np.ndarray:
    return gen_dataset(10, 1, 0.3, 7, "test", max_shift=3).images[:1]


def build() -> dict:
    out = {}
    desc = data_path("toy_descriptor.json")
    out["toy_descriptor"] = {"sha256": sha(desc), **recount(json.loads(desc.read_text()))}

    cfg = load_config(ROOT / "configs" / "toy_search.toml")
    _, acc = trained_network(cfg)
    out["toy_reference_accuracy"] = [float(a) for a in acc]

    x = sample_input()
    probs = predict_all_exits(load_descriptor(desc), x)[:, 0, :]
    out["sample_input"] = {"dataset": [10, 1, 0.3, 7, "test", 3], "probs": probs.tolist()}

    out["dataset_checksum"] = {"args": [10, 100, 0.3, 1, "train"],
                               "sha256": gen_dataset(10, 100, 0.3, 1, "train").checksum()}

    tmp = HERE / "_solar.csv"
    cli_main(["gen-trace", "--kind", "solar_like", "--seed", "1", "--out", str(tmp)])
    out["solar_like_seed1_sha256"] = sha(tmp)
    tmp.unlink()

    pcfg = load_config(ROOT / "configs" / "reference_profile.toml")
    rep = simulate(build_scenario(pcfg), GreedyStaticSelector())
    p, missed = exit_fraction(rep)
    out["reference_scenario_greedy"] = {"seed": pcfg.seed, "exit_fractions": p.tolist(),
                                    "missed_fraction": float(missed), "n_processed": rep.n_processed,
                                    "avg_accuracy_all": rep.avg_accuracy_all, "iepmj": rep.aggregates()["iepmj"]}

    cfg.seed = 1
    base = random_search_baseline(build_env(cfg), 300, 1)
    out["toy_random_search_300"] = {"seed": 1, "best_r_acc": base.best.r_acc if base.best else None}
    out["toy_surrogate_sha256"] = sha(data_path("toy_surrogate.json"))
    return out


if __name__ == "__main__":
    (HERE / "manifest.json").write_text(json.dumps(build(), indent=1, sort_keys=True) + "\n")
