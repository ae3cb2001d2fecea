import json

import numpy as np
import pytest

from ehexit.errors import ConfigError, StateError
from ehexit.toytrain import (calibrate, eval_accuracy, fit_exit_heads, gen_dataset, ridge_solve)


def test_dataset_is_seeded_and_balanced():
    a = gen_dataset(10, 5, 0.3, 7, "train", max_shift=2)
    b = gen_dataset(10, 5, 0.3, 7, "train", max_shift=2)
    c = gen_dataset(10, 5, 0.3, 7, "test", max_shift=2)
    assert a.checksum() == b.checksum() != c.checksum()
    assert np.bincount(a.labels).tolist() == [5] * 10
    assert a.images.shape == (50, 1, 16, 16)


def test_dataset_export(tmp_path):
    d = gen_dataset(3, 2, 0.0, 0)
    d.export(tmp_path / "toy")
    man = json.loads((tmp_path / "toy.json").read_text())
    raw = (tmp_path / "toy.bin").read_bytes()
    imgs = np.frombuffer(raw[:d.images.nbytes], dtype="<f8").reshape(man["images_shape"])
    np.testing.assert_array_equal(imgs, d.images)
    assert man["sha256"] == d.checksum()


def test_dataset_rejects_bad_params():
    with pytest.raises(ConfigError):
        gen_dataset(1, 5, 0.1, 0)
    with pytest.raises(ConfigError):
        gen_dataset(3, 5, -0.1, 0)


def test_ridge_matches_lstsq_oracle():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 8))
    Y = rng.normal(size=(50, 3))
    lam = 0.7
    B, fit = ridge_solve(X, Y, lam)
    A = np.vstack([X, np.sqrt(lam) * np.eye(8)])
    ref = np.linalg.lstsq(A, np.vstack([Y, np.zeros((8, 3))]), rcond=None)[0]
    np.testing.assert_allclose(B, ref, rtol=1e-8, atol=1e-10)
    assert fit.relative_residual <= 1e-12


def test_ridge_handles_rank_deficient_with_zero_lambda():
    X = np.ones((10, 3))
    B, fit = ridge_solve(X, np.ones((10, 1)), 0.0)
    assert np.all(np.isfinite(B))


def test_noise_free_final_exit_is_accurate(toy_net):
    train = gen_dataset(10, 20, 0.0, 0, "train")
    test = gen_dataset(10, 10, 0.0, 0, "test")
    net, fits = fit_exit_heads(calibrate(toy_net, train), train, 1.0)
    assert eval_accuracy(net, test, exit=2) >= 0.95
    assert all(f.relative_residual <= 1e-6 for f in fits)


def test_deeper_exits_are_more_accurate_on_default_data(toy_net):
    train = gen_dataset(10, 100, 0.3, 0, "train", max_shift=3)
    test = gen_dataset(10, 50, 0.3, 0, "test", max_shift=3)
    net, _ = fit_exit_heads(calibrate(toy_net, train), train, 10.0)
    acc = eval_accuracy(net, test)
    assert acc[2] >= acc[0]


def test_eval_requires_trained_heads(toy_net, toy_data):
    with pytest.raises(StateError):
        eval_accuracy(toy_net, toy_data[1])
    with pytest.raises(ConfigError):
        fit_exit_heads(toy_net, toy_data[0], -1.0)


def test_calibration_records_input_ranges(toy_net, toy_data):
    net = calibrate(toy_net, toy_data[0])
    assert net.layers[0].act_signed  # noisy images go negative
    assert not net.layers[3].act_signed  # after relu/pool
    assert all(e.layer.act_max > 0 for e in net.exits)


def test_ridge_invariant_to_uniform_duplication():
    rng = np.random.default_rng(4)
    X, Y = rng.normal(size=(40, 6)), rng.normal(size=(40, 3))
    B1, _ = ridge_solve(X, Y, 0.7)
    B2, _ = ridge_solve(np.vstack([X, X]), np.vstack([Y, Y]), 1.4)
    np.testing.assert_allclose(B1, B2, rtol=1e-10, atol=1e-12)
