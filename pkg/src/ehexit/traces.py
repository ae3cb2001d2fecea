"""Power traces and event streams: containers, CSV I/O and synthetic generators."""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class PowerTrace:
    """Piecewise-linear harvested power: samples of (time s, power mW)."""

    times: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64)
        p = np.array(self.power, dtype=np.float64)
        if t.ndim != 1 or t.shape != p.shape or len(t) < 2:
            raise InputError("trace needs at least two (time, power) samples")
        if np.any(np.diff(t) <= 0):
            raise InputError("trace times must be strictly increasing")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise InputError("trace power must be finite and nonnegative")
        t.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "power", p)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(t))))
        cum.flags.writeable = False
        object.__setattr__(self, "_cum", cum)

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.end - self.start

    def _check(self, t):
        if t < self.start - 1e-12 or t > self.end + 1e-12:
            raise InputError(f"time {t} outside trace [{self.start}, {self.end}]")

    def cumulative(self, t: float) -> float:
        """Raw energy (mJ) harvested from the trace start up to time t."""
        self._check(t)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        t0, t1 = self.times[k], self.times[k + 1]
        p0, p1 = self.power[k], self.power[k + 1]
        u = t - t0
        slope = (p1 - p0) / (t1 - t0)
        return float(self._cum[k] + p0 * u + 0.5 * slope * u * u)

    def power_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.power))

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        """t0, the sample times strictly inside (t0, t1), and t1."""
        lo = np.searchsorted(self.times, t0, side="right")
        hi = np.searchsorted(self.times, t1, side="left")
        return np.concatenate(([t0], self.times[lo:hi], [t1]))

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        buf.write("time_s,power_mw\n")
        for t, p in zip(self.times, self.power):
            buf.write(f"{float(t)!r},{float(p)!r}\n")
        return buf.getvalue()

    def save(self, path, header_comment: str | None = None) -> None:
        Path(path).write_bytes(self.to_csv(header_comment).encode("utf-8"))

    @classmethod
    def from_csv(cls, text: str, source: str = "<trace>") -> "PowerTrace":
        return _trace_from_rows(_parse_csv(text, ("time_s", "power_mw"), source), source)

    @classmethod
    def load(cls, path) -> "PowerTrace":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), str(path))


def _parse_csv(text: str, columns: tuple[str, ...], source: str) -> list[tuple[float, ...]]:
    rows = []
    header_seen = False
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if not header_seen:
            if tuple(fields) != columns:
                raise InputError(f"{source}:{lineno}: expected header {','.join(columns)!r}, got {line!r}")
            header_seen = True
            continue
        if len(fields) != len(columns):
            raise InputError(f"{source}:{lineno}: expected {len(columns)} fields, got {len(fields)}")
        try:
            vals = tuple(float(f) for f in fields)
        except ValueError:
            raise InputError(f"{source}:{lineno}: non-numeric value in {line!r}") from None
        if not all(np.isfinite(vals)):
            raise InputError(f"{source}:{lineno}: non-finite value in {line!r}")
        rows.append((lineno,) + vals)
    if not header_seen:
        raise InputError(f"{source}: missing header {','.join(columns)!r}")
    return rows


def _trace_from_rows(rows, source):
    for (ln0, t0, _), (ln1, t1, _) in zip(rows, rows[1:]):
        if t1 <= t0:
            raise InputError(f"{source}:{ln1}: time {t1} not after {t0}")
    for ln, _, p in rows:
        if p < 0:
            raise InputError(f"{source}:{ln}: negative power {p}")
    return PowerTrace([r[1] for r in rows], [r[2] for r in rows])


@dataclass(frozen=True)
class EventStream:
    times: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64)
        if t.ndim != 1:
            raise InputError("event times must be a flat list")
        if np.any(np.diff(t) <= 0):
            raise InputError("event times must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.times)

    def check_within(self, trace: PowerTrace) -> None:
        if len(self.times) and (self.times[0] < trace.start or self.times[-1] > trace.end):
            raise InputError("events fall outside the trace duration")

    @classmethod
    def generate(cls, n: int, rng: np.random.Generator, start: float, end: float) -> "EventStream":
        """n event times uniformly distributed over (start, end)."""
        if n < 0 or end <= start:
            raise ConfigError("invalid event stream parameters")
        t = np.sort(rng.uniform(start, end, size=n))
        while len(np.unique(t)) < n:  # pragma: no cover - probability ~0
            t = np.sort(rng.uniform(start, end, size=n))
        return cls(t)

    def to_csv(self, header_comment: str | None = None) -> str:
        lines = [f"# {header_comment}"] if header_comment else []
        lines.append("time_s")
        lines.extend(repr(float(t)) for t in self.times)
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, path) -> "EventStream":
        rows = _parse_csv(Path(path).read_text(encoding="utf-8"), ("time_s",), str(path))
        for (_, a), (ln, b) in zip(rows, rows[1:]):
            if b <= a:
                raise InputError(f"{path}:{ln}: event time {b} not after {a}")
        return cls([r[1] for r in rows])


# ------------------------------------------------------------ generators

def constant_trace(power_mw: float, duration_s: float, dt_s: float = 1.0) -> PowerTrace:
    if power_mw < 0 or duration_s <= 0 or dt_s <= 0:
        raise ConfigError("constant trace needs power >= 0, duration > 0, dt > 0")
    n = int(round(duration_s / dt_s))
    t = np.arange(n + 1) * dt_s
    return PowerTrace(t, np.full(n + 1, float(power_mw)))


def square_wave_trace(high_mw: float, low_mw: float, period_s: float, duty: float,
                      duration_s: float, dt_s: float = 1.0) -> PowerTrace:
    if not 0 <= duty <= 1 or period_s <= 0 or min(high_mw, low_mw) < 0 or duration_s <= 0 or dt_s <= 0:
        raise ConfigError("invalid square-wave parameters")
    n = int(round(duration_s / dt_s))
    t = np.arange(n + 1) * dt_s
    phase = np.mod(t, period_s) / period_s
    return PowerTrace(t, np.where(phase < duty, high_mw, low_mw).astype(float))


def solar_like_trace(rng: np.random.Generator, duration_s: float = 172800.0, dt_s: float = 60.0,
                     peak_mw: float = 0.02, day_s: float = 86400.0, cloudiness: float = 0.5,
                     cloud_corr_s: float = 1800.0) -> PowerTrace:
    """Diurnal half-sine irradiance times a smooth random cloud factor.

    The cloud factor is an AR(1) process mapped into [1 - cloudiness, 1];
    night samples are exactly zero.
    """
    if peak_mw < 0 or not 0 <= cloudiness <= 1 or duration_s <= 0 or dt_s <= 0 or day_s <= 0:
        raise ConfigError("invalid solar_like parameters")
    n = int(round(duration_s / dt_s))
    t = np.arange(n + 1) * dt_s
    sun = np.maximum(0.0, -np.cos(2 * np.pi * t / day_s))  # night at t=0, noon at day/2
    rho = np.exp(-dt_s / cloud_corr_s)
    z = np.empty(n + 1)
    z[0] = rng.standard_normal()
    noise = rng.standard_normal(n + 1)
    for i in range(1, n + 1):
        z[i] = rho * z[i - 1] + np.sqrt(1 - rho * rho) * noise[i]
    cloud = 1.0 - cloudiness * (0.5 * (1 + np.tanh(z)))
    return PowerTrace(t, np.clip(peak_mw * sun * cloud, 0.0, None))
