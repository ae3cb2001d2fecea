import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ehexit.compress import (CompressionPolicy, PolicyEntry, apply_policy, channel_importance,
                             channels_to_keep, optimal_scale, prune_layer, pruned_count,
                             quant_error, quantize_activations, quantize_weights, snap_alpha)
from ehexit.errors import ConfigError, InputError
from ehexit.netcore import exit_flops, model_bytes
from ehexit.toytrain import calibrate, eval_accuracy, fit_exit_heads


def sort_oracle_dropped(w, keep):
    """Channels to drop: bottom (c - keep) of importance, lower index first on ties."""
    imp = [float(np.abs(w[:, j]).sum()) for j in range(w.shape[1])]
    ranked = sorted(range(len(imp)), key=lambda j: (imp[j], j))
    return set(ranked[:len(imp) - keep])


def brute_force_scale(w, k, n=10_000):
    m = np.abs(w).max()
    grid = np.linspace(2 * m / n, 2 * m, n)
    errs = [quant_error(w, s, k) for s in grid]
    j = int(np.argmin(errs))
    return float(grid[j]), float(errs[j])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 12), st.floats(0.05, 1.0))
def test_pruning_matches_sort_oracle(seed, c, alpha):
    rng = np.random.default_rng(seed)
    w = rng.integers(-2, 3, size=(3, c, 2, 2)).astype(float)  # integer weights force ties
    keep = pruned_count(c, alpha)
    kept = set(channels_to_keep(channel_importance(w), keep).tolist())
    assert set(range(c)) - kept == sort_oracle_dropped(w, keep)


def test_pruned_count_rounding():
    assert pruned_count(16, 0.5) == 8
    assert pruned_count(4, 0.05) == 1
    assert pruned_count(10, 0.25) == 2   # 2.5 rounds half to even
    with pytest.raises(ConfigError):
        pruned_count(4, 0.0)


def test_tie_break_drops_lower_index():
    w = np.ones((1, 4, 1, 1))
    assert channels_to_keep(channel_importance(w), 2).tolist() == [2, 3]


def test_prune_backbone_removes_producer_filters(toy_net):
    net = prune_layer(toy_net, "conv2", 0.5)
    conv1, conv2 = net.layers[0], net.layers[3]
    assert conv1.spec.c_out == 2 and conv2.spec.c_in == 2
    keep = channels_to_keep(channel_importance(toy_net.layers[3].weight), 2)
    np.testing.assert_array_equal(conv1.weight, toy_net.layers[0].weight[keep])
    assert net.exits[0].layer.spec.c_in == 2
    assert exit_flops(net)[0] < exit_flops(toy_net)[0]


def test_prune_head_only_touches_head(toy_net):
    net = prune_layer(toy_net, "exit3", 0.25)
    assert net.exits[2].layer.spec.c_in == 16 and len(net.exits[2].in_index) == 16
    assert net.layers == toy_net.layers


def test_single_input_channel_is_never_pruned(toy_net):
    assert prune_layer(toy_net, "conv1", 0.05) is toy_net
    with pytest.raises(ConfigError):
        prune_layer(toy_net, "nope", 0.5)


def test_identity_policy_is_noop(toy_net):
    net, prof = apply_policy(toy_net, CompressionPolicy.identity(toy_net))
    assert model_bytes(net) == model_bytes(toy_net)
    assert [p.flops for p in prof] == exit_flops(toy_net)


def test_apply_policy_is_idempotent(toy_net):
    pol = CompressionPolicy.uniform(toy_net, 0.5, 4, 4)
    pol = CompressionPolicy((PolicyEntry("conv1", 1.0, 4, 4),) + pol.entries[1:])
    a, _ = apply_policy(toy_net, pol)
    b, _ = apply_policy(a, pol)
    for x, y in zip(a.layers, b.layers):
        if x.weight is not None:
            np.testing.assert_array_equal(x.weight, y.weight)
    assert model_bytes(a) == model_bytes(b)


def test_shapes_only_costs_match_full(toy_net):
    entries = [PolicyEntry("conv1", 1.0, 3, 5), PolicyEntry("exit1", 0.5, 2, 8), PolicyEntry("conv2", 0.75, 4, 4),
               PolicyEntry("exit2", 0.3, 6, 2), PolicyEntry("conv3", 0.4, 5, 3), PolicyEntry("exit3", 0.2, 1, 1)]
    pol = CompressionPolicy(entries)
    full, _ = apply_policy(toy_net, pol)
    shaped, _ = apply_policy(toy_net, pol, shapes_only=True)
    assert exit_flops(full) == exit_flops(shaped)
    assert model_bytes(full) == model_bytes(shaped)


def test_policy_validation_and_roundtrip(tmp_path, toy_net):
    with pytest.raises(ConfigError):
        PolicyEntry("a", alpha=0.33)
    with pytest.raises(ConfigError):
        PolicyEntry("a", bw=0)
    with pytest.raises(ConfigError):
        apply_policy(toy_net, CompressionPolicy((PolicyEntry("conv1"),)))
    pol = CompressionPolicy.uniform(toy_net, 0.5, 4, 6)
    pol.save(tmp_path / "p.json")
    assert CompressionPolicy.load(tmp_path / "p.json") == pol
    assert json.loads((tmp_path / "p.json").read_text())["schema_version"] == 1


@settings(max_examples=50, deadline=None)
@given(st.floats(-1.0, 2.0))
def test_snap_alpha_on_grid(a):
    s = snap_alpha(a)
    assert 0.05 <= s <= 1.0 and abs(s * 20 - round(s * 20)) < 1e-9


def test_quantization_error_monotone_in_bits():
    rng = np.random.default_rng(0)
    for _ in range(30):
        w = rng.standard_t(3, size=int(rng.integers(5, 200)))
        errs = [np.linalg.norm(quantize_weights(w, k)[0] - w) for k in range(1, 9)]
        assert all(b <= a for a, b in zip(errs, errs[1:])), errs


def test_golden_section_scale_against_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(5):
        w = rng.normal(size=64)
        for k in (2, 4, 8):
            s, e = optimal_scale(w, k)
            sb, eb = brute_force_scale(w, k)
            assert e <= eb * (1 + 1e-9) or abs(s - sb) / sb <= 1e-3


def test_quantized_values_lie_on_levels():
    w = np.random.default_rng(2).normal(size=100)
    q, s = quantize_weights(w, 3)
    codes = q / s
    np.testing.assert_allclose(codes, np.rint(codes), atol=1e-9)
    assert codes.min() >= -4 and codes.max() <= 3


def test_quantization_edge_cases():
    q, s = quantize_weights(np.zeros(5), 4)
    assert s == 1.0 and not q.any()
    with pytest.raises(ConfigError):
        quantize_weights(np.ones(3), 0)
    assert quantize_activations([0.0, 0.26, 10.0], 2, 0.5).tolist() == [0.0, 0.5, 1.5]
    with pytest.raises(InputError):
        quantize_activations([-1.0], 4, 0.1)


def test_uniform_8bit_barely_changes_accuracy(toy_net, toy_data):
    train, test = toy_data
    base = calibrate(toy_net, train)
    base, _ = fit_exit_heads(base, train, 10.0)
    acc_full = eval_accuracy(base, test)
    pol = CompressionPolicy.uniform(toy_net, 1.0, 8, 8)
    net, _ = apply_policy(toy_net, pol)
    net = calibrate(net, train)
    net, _ = fit_exit_heads(net, train, 10.0)
    net, _ = apply_policy(net, pol)
    acc_q = eval_accuracy(net, test)
    assert all(abs(a - b) <= 0.05 for a, b in zip(acc_full, acc_q))
    assert model_bytes(net) == pytest.approx(model_bytes(toy_net) / 4)


def test_symmetric_pair_at_8_bits():
    w = np.array([-1.0, 1.0])
    q, s = quantize_weights(w, 8)
    sb, eb = brute_force_scale(w, 8)
    assert s == pytest.approx(1 / 127, rel=1e-12)
    assert np.linalg.norm(q - w) <= eb * (1 + 1e-9) or abs(s - sb) / sb <= 1e-3
    assert np.max(np.abs(q - w)) <= s / 2


def test_two_bit_example_against_brute_force():
    w = np.array([0.5, -1.2, 0.3])
    s, e = optimal_scale(w, 2)
    sb, eb = brute_force_scale(w, 2)
    assert e <= eb * (1 + 1e-9) or abs(s - sb) / sb <= 1e-3
    q, s2 = quantize_weights(w, 2)
    assert s2 == s
    assert set(np.rint(q / s).astype(int)) <= {-2, -1, 0, 1}
    np.testing.assert_allclose(np.linalg.norm(q - w), e, rtol=1e-12)


def test_halving_alpha_quarters_interior_conv_cost(toy_net):
    from ehexit.netcore import to_dict

    def conv_macs(net):
        out = []
        for l in to_dict(net)["layers"]:
            if l["kind"] == "conv":
                h, w = l["input_spatial"]
                k, s = l["kernel"], l["stride"]
                out.append(((h - k) // s + 1) * ((w - k) // s + 1) * l["c_out"] * l["c_in"] * k * k)
        return out

    half, _ = apply_policy(toy_net, CompressionPolicy.uniform(toy_net, 0.5, 32, 32), shapes_only=True)
    full, pruned = conv_macs(toy_net), conv_macs(half)
    assert pruned[0] == full[0] * 0.5  # the raw-image input channel is kept
    # interior convs lose half their inputs and half their outputs
    assert [b / a for a, b in zip(full[1:-1], pruned[1:-1])] == [0.25]
    # the last conv keeps its outputs (the final head selects a subset) and loses half its inputs
    assert pruned[-1] == full[-1] * 0.5
