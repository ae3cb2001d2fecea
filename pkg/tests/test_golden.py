"""Frozen reference values (tests/golden/manifest.json) and the independent recount."""
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pytest

from ehexit.cli import main as cli_main
from ehexit.config import load_config
from ehexit.ehsim import GreedyStaticSelector, exit_fraction, simulate
from ehexit.experiment import build_scenario, data_path, trained_network
from ehexit.netcore import exit_flops, load_descriptor, model_bytes, model_flops, predict_all_exits
from ehexit.toytrain import gen_dataset

GOLDEN = Path(__file__).resolve().parent / "golden"
ROOT = GOLDEN.parents[1]
sys.path.insert(0, str(GOLDEN))
from recount import recount  # noqa: E402

M = json.loads((GOLDEN / "manifest.json").read_text())


def sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_descriptor_costs_match_independent_recount():
    path = data_path("toy_descriptor.json")
    net = load_descriptor(path)
    rc = recount(json.loads(path.read_text()))
    assert exit_flops(net) == rc["exit_macs"] == M["toy_descriptor"]["exit_macs"]
    assert model_flops(net) == rc["model_macs"]
    assert model_bytes(net) == rc["bytes_fp32"] == M["toy_descriptor"]["bytes_fp32"]
    assert sha(path) == M["toy_descriptor"]["sha256"]


def test_sample_input_probabilities():
    g = M["sample_input"]
    args = g["dataset"]
    x = gen_dataset(*args[:5], max_shift=args[5]).images[:1]
    probs = predict_all_exits(load_descriptor(data_path("toy_descriptor.json")), x)[:, 0, :]
    np.testing.assert_allclose(probs, g["probs"], rtol=1e-9, atol=1e-12)


def test_dataset_checksum():
    g = M["dataset_checksum"]
    assert gen_dataset(*g["args"]).checksum() == g["sha256"]


def test_reference_accuracies():
    _, acc = trained_network(load_config(ROOT / "configs" / "toy_search.toml"))
    np.testing.assert_allclose(acc, M["toy_reference_accuracy"], atol=1e-12)


def test_solar_like_seed1_checksum(tmp_path):
    out = tmp_path / "s.csv"
    cli_main(["gen-trace", "--kind", "solar_like", "--seed", "1", "--out", str(out)])
    assert sha(out) == M["solar_like_seed1_sha256"] == sha(data_path("solar_like.csv"))


def test_reference_scenario_greedy_fractions():
    g = M["reference_scenario_greedy"]
    cfg = load_config(ROOT / "configs" / "reference_profile.toml")
    rep = simulate(build_scenario(cfg), GreedyStaticSelector())
    p, missed = exit_fraction(rep)
    np.testing.assert_allclose(p, g["exit_fractions"], atol=1e-12)
    assert missed == pytest.approx(g["missed_fraction"], abs=1e-12)
    assert rep.n_processed == g["n_processed"]
    assert rep.avg_accuracy_all == pytest.approx(g["avg_accuracy_all"], rel=1e-12)


def test_bundled_surrogate_is_the_recorded_one():
    assert sha(data_path("toy_surrogate.json")) == M["toy_surrogate_sha256"]
