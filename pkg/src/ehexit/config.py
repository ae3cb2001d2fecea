"""Experiment configuration: TOML loading with strict keys, and named seed streams."""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError


@dataclass
class ScenarioConfig:
    trace: str = "bundled:solar_like.csv"   # file path, "bundled:<name>", or a generator kind
    trace_params: dict = field(default_factory=dict)
    events: int = 500
    events_file: str = ""
    capacity_mj: float = 10.0
    initial_mj: float = 0.0
    efficiency: float = 1.0
    mj_per_mflop: float = 1.5
    compute_rate_mflops: float = 1.0
    power_window_s: float = 30.0


@dataclass
class NetworkConfig:
    source: str = "profile"          # profile | toy | descriptor
    profile: str = "bundled:reference_profile.json"
    descriptor: str = ""
    policy: str = ""
    num_classes: int = 10
    train_per_class: int = 100
    test_per_class: int = 50
    noise_sigma: float = 0.3
    max_shift: int = 3
    ridge_lambda: float = 10.0
    net_seed: int = 0
    data_seed: int = 0


@dataclass
class SearchConfig:
    flops_frac: float = 0.7
    bytes_frac: float = 0.03
    episodes: int = 300
    random_samples: int = 300
    eval_mode: str = "surrogate"
    surrogate: str = "bundled:toy_surrogate.json"
    b_min: int = 1
    b_max: int = 8
    lam1: float = 1.0
    lam2: float = 1.0
    hidden: list = field(default_factory=lambda: [64, 64])
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer: int = 10000
    batch: int = 64
    sigma_start: float = 0.5
    sigma_end: float = 0.05
    warmup_episodes: int = 100
    eval_every: int = 5
    updates_per_step: int = 1


@dataclass
class RuntimeSection:
    policy: str = "q_learning"
    train_passes: int = 30
    epsilon: float = 0.2
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.01
    alpha: float = 0.1
    gamma: float = 0.9
    beta: float = 0.0
    energy_step: float = 0.0         # 0 means capacity / 20
    power_step: float = 0.0          # 0 means trace max power / 10
    entropy_bins: int = 8
    entropy_threshold: float = -1.0  # negative means ln(num_classes) / 2


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    selector: str = "static_lut"
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    runtime: RuntimeSection = field(default_factory=RuntimeSection)
    base_dir: str = field(default=".", repr=False, compare=False)

    def to_dict(self) -> dict:
        """Experiment parameters; where the run is written is not one of them."""
        d = asdict(self)
        d.pop("base_dir")
        d.pop("out")
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form of the resolved config."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def _coerce(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name: f for f in fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kw = {}
    defaults = cls()
    for name, value in data.items():
        default = getattr(defaults, name)
        if is_dataclass(default):
            kw[name] = _coerce(type(default), value, f"{where}.{name}" if where else name)
            continue
        if isinstance(default, bool) or default is None:
            ok = isinstance(value, type(default)) if default is not None else True
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            raise ConfigError(f"{where + '.' if where else ''}{name}: expected {type(default).__name__}, "
                              f"got {type(value).__name__}")
        kw[name] = value
    return cls(**kw)


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    cfg = _coerce(ExperimentConfig, data, "")
    cfg.base_dir = str(base_dir)
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        data = tomli.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return config_from_dict(data, str(p.parent))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of a run's seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))
