"""Build traces, networks, scenarios and search environments from a config."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .compress import CompressionPolicy, apply_policy
from .config import ExperimentConfig, config_from_dict, substream
from .ehsim import Scenario, StoreParams
from .errors import ConfigError, InputError
from .netcore import ExitProfile, NetworkDescriptor, build_toy_network, exit_profiles, from_dict
from .runtime import RuntimeConfig
from .search import AgentConfig, DegradationSurrogate, EnvConfig, SearchEnv, SearchTargets
from .toytrain import ToyDataset, calibrate, eval_accuracy, fit_exit_heads, gen_dataset
from .traces import EventStream, PowerTrace, constant_trace, solar_like_trace, square_wave_trace

TRACE_KINDS = ("solar_like", "constant", "square_wave")
BUNDLED = "bundled:"


def data_path(name: str) -> Path:
    return Path(str(resources.files("ehexit") / "data" / name))


def read_source(cfg: ExperimentConfig, ref: str) -> tuple[str, str]:
    """Text and display name of a file given as a path or ``bundled:<name>``."""
    p = data_path(ref[len(BUNDLED):]) if ref.startswith(BUNDLED) else cfg.resolve(ref)
    try:
        return p.read_text(encoding="utf-8"), str(ref if ref.startswith(BUNDLED) else p)
    except FileNotFoundError:
        raise InputError(f"file not found: {ref}") from None


def gen_trace(kind: str, params: dict, seed: int) -> PowerTrace:
    """Synthetic power trace; randomness (solar_like only) comes from ``seed``."""
    params = dict(params)
    try:
        if kind == "solar_like":
            return solar_like_trace(substream(seed, "trace"), **params)
        if kind == "constant":
            return constant_trace(**params)
        if kind == "square_wave":
            return square_wave_trace(**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {kind} trace: {exc}") from None
    raise ConfigError(f"unknown trace kind {kind!r}; expected one of {', '.join(TRACE_KINDS)}")


def load_trace(cfg: ExperimentConfig) -> PowerTrace:
    sc = cfg.scenario
    if sc.trace in TRACE_KINDS:
        return gen_trace(sc.trace, sc.trace_params, cfg.seed)
    text, name = read_source(cfg, sc.trace)
    return PowerTrace.from_csv(text, name)


def load_events(cfg: ExperimentConfig, trace: PowerTrace) -> EventStream:
    sc = cfg.scenario
    if sc.events_file:
        ev = EventStream.load(cfg.resolve(sc.events_file))
    else:
        ev = EventStream.generate(sc.events, substream(cfg.seed, "events"), trace.start, trace.end)
    ev.check_within(trace)
    return ev


def store_params(cfg: ExperimentConfig) -> StoreParams:
    sc = cfg.scenario
    return StoreParams(sc.capacity_mj, sc.initial_mj, sc.efficiency)


def load_profile_table(cfg: ExperimentConfig) -> tuple[ExitProfile, ...]:
    text, name = read_source(cfg, cfg.network.profile)
    try:
        d = json.loads(text)
        flops, acc = d["flops"], d["accuracy"]
    except (ValueError, KeyError) as exc:
        raise InputError(f"{name}: malformed profile table ({exc})") from None
    if len(flops) != len(acc):
        raise InputError(f"{name}: flops and accuracy lists differ in length")
    rate = cfg.scenario.mj_per_mflop
    return tuple(ExitProfile(float(f), float(b), float(a), float(f) / 1e6 * rate)
                 for f, a, b in zip(flops, acc, d.get("weight_bytes", [0.0] * len(flops))))


def toy_data(cfg: ExperimentConfig) -> tuple[ToyDataset, ToyDataset]:
    n = cfg.network
    train = gen_dataset(n.num_classes, n.train_per_class, n.noise_sigma, n.data_seed, "train",
                        max_shift=n.max_shift)
    test = gen_dataset(n.num_classes, n.test_per_class, n.noise_sigma, n.data_seed, "test",
                       max_shift=n.max_shift)
    return train, test


def base_network(cfg: ExperimentConfig) -> NetworkDescriptor:
    n = cfg.network
    if n.source == "descriptor":
        text, name = read_source(cfg, n.descriptor)
        try:
            return from_dict(json.loads(text))
        except ValueError as exc:
            raise InputError(f"{name}: {exc}") from None
    return build_toy_network(n.net_seed, n.num_classes)


def trained_network(cfg: ExperimentConfig, policy: CompressionPolicy | None = None):
    """Compress (optionally), calibrate, fit heads, re-quantize; returns (net, test accuracies)."""
    train, test = toy_data(cfg)
    net = base_network(cfg)
    policy = policy or CompressionPolicy.identity(net)
    net, _ = apply_policy(net, policy)
    net = calibrate(net, train)
    net, _ = fit_exit_heads(net, train, cfg.network.ridge_lambda)
    net, _ = apply_policy(net, policy)
    return net, eval_accuracy(net, test)


def network_profiles(cfg: ExperimentConfig) -> tuple[ExitProfile, ...]:
    n = cfg.network
    if n.source == "profile":
        return load_profile_table(cfg)
    if n.source not in ("toy", "descriptor"):
        raise ConfigError(f"unknown network source {n.source!r}")
    policy = None
    if n.policy:
        text, _ = read_source(cfg, n.policy)
        policy = CompressionPolicy.from_dict(json.loads(text))
    net, acc = trained_network(cfg, policy)
    return tuple(exit_profiles(net, accuracies=acc, mj_per_mflop=cfg.scenario.mj_per_mflop))


def build_scenario(cfg: ExperimentConfig, profiles=None) -> Scenario:
    trace = load_trace(cfg)
    events = load_events(cfg, trace)
    sc = cfg.scenario
    return Scenario(trace, events, tuple(profiles or network_profiles(cfg)), store_params(cfg),
                    sc.compute_rate_mflops, sc.power_window_s)


def runtime_config(cfg: ExperimentConfig) -> RuntimeConfig:
    r = cfg.runtime
    return RuntimeConfig(
        energy_step=r.energy_step or None, power_step=r.power_step or None,
        entropy_bins=r.entropy_bins, num_classes=cfg.network.num_classes,
        epsilon=r.epsilon, epsilon_decay=r.epsilon_decay, epsilon_min=r.epsilon_min,
        alpha=r.alpha, gamma=r.gamma, train_passes=r.train_passes, beta=r.beta,
        entropy_threshold=None if r.entropy_threshold < 0 else r.entropy_threshold)


def agent_config(cfg: ExperimentConfig) -> AgentConfig:
    s = cfg.search
    return AgentConfig(tuple(s.hidden), s.actor_lr, s.critic_lr, s.buffer, s.batch, s.sigma_start,
                       s.sigma_end, s.warmup_episodes, s.eval_every, s.updates_per_step)


def build_env(cfg: ExperimentConfig) -> SearchEnv:
    s = cfg.search
    if s.eval_mode not in ("surrogate", "descriptor"):
        raise ConfigError(f"unknown search eval_mode {s.eval_mode!r}")
    train, test = toy_data(cfg)
    net = base_network(cfg)
    trace = load_trace(cfg)
    events = load_events(cfg, trace)
    env_cfg = EnvConfig(s.b_min, s.b_max, s.lam1, s.lam2, cfg.network.ridge_lambda,
                        cfg.scenario.mj_per_mflop, s.eval_mode)
    surrogate = None
    if s.eval_mode == "surrogate" and s.surrogate:
        text, _ = read_source(cfg, s.surrogate)
        surrogate = DegradationSurrogate.from_dict(json.loads(text))
    return SearchEnv(net, train, test, trace, events, store_params(cfg),
                     SearchTargets.relative(net, s.flops_frac, s.bytes_frac), env_cfg,
                     cfg.scenario.compute_rate_mflops, surrogate)


def build_surrogate(cfg: ExperimentConfig) -> DegradationSurrogate:
    """Measure the per-unit degradation table for the configured toy network."""
    env = build_env(config_from_dict({**cfg.to_dict(), "search": {**cfg.to_dict()["search"],
                                                                   "eval_mode": "descriptor"}},
                                     cfg.base_dir))
    return DegradationSurrogate.build(env)
