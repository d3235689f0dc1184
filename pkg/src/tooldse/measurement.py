"""Repeated energy/time measurement with a Student-t confidence stopping rule.

A task is run until the confidence half-width of the mean net energy drops
below ``beta`` times the mean::

    2 * (sigma / sqrt(m)) * t(m - 1) < beta * mean

Net energy per run is the gross reading minus idle power times the run's
duration. Idle power is sampled once per session unless asked otherwise.
"""

from __future__ import annotations

import functools
import json
import math
import statistics
import subprocess
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import special

# One measurement session owns the machine.
MEASUREMENT_LOCK = threading.Lock()


class MeasurementError(RuntimeError):
    pass


class NonConvergence(MeasurementError):
    """The sample cap was hit before the confidence rule held."""

    def __init__(self, series: "MeasurementSeries"):
        super().__init__(
            f"no convergence after {series.m} samples "
            f"(mean={series.mean:.6g}, stddev={series.stddev:.6g})"
        )
        self.series = series


@functools.lru_cache(maxsize=4096)
def t_critical(alpha: float, df: int, two_sided: bool = True) -> float:
    """Student-t quantile used by the stopping rule.

    Two-sided reads ``alpha`` as the central coverage, i.e. the quantile at
    ``1 - (1 - alpha) / 2``; one-sided uses ``alpha`` directly. The quantile
    comes from inverting the regularized incomplete beta function:
    ``P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    if int(df) != df or df < 1:
        raise ValueError(f"degrees of freedom must be an integer >= 1, got {df}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    p = 1.0 - (1.0 - alpha) / 2.0 if two_sided else alpha
    if p <= 0.5:
        raise ValueError("quantile below the median is not used by the stopping rule")
    tail = 2.0 * (1.0 - p)
    x = special.betaincinv(df / 2.0, 0.5, tail)
    return float(math.sqrt(df * (1.0 - x) / x))


@dataclass(frozen=True)
class ConfidenceParams:
    beta: float = 0.02
    alpha: float = 0.99
    m_min: int = 5
    m_max: int = 1000
    two_sided: bool = True

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0.5, 1), got {self.alpha}")
        if not 2 <= self.m_min <= self.m_max:
            raise ValueError(f"need 2 <= m_min <= m_max, got {self.m_min}, {self.m_max}")


@dataclass
class MeasurementSeries:
    samples: list[float] = field(default_factory=list)
    durations: list[float] = field(default_factory=list)
    idle_power: float = 0.0
    converged: bool = False
    params: ConfidenceParams = field(default_factory=ConfidenceParams)

    @property
    def m(self) -> int:
        return len(self.samples)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples) if self.samples else float("nan")

    @property
    def stddev(self) -> float:
        return statistics.stdev(self.samples) if self.m >= 2 else float("nan")

    def half_width(self) -> float:
        """Left-hand side of the stopping inequality at the current size."""
        t = t_critical(self.params.alpha, self.m - 1, self.params.two_sided)
        return 2.0 * self.stddev / math.sqrt(self.m) * t

    def to_json(self) -> dict:
        return {
            "samples": list(self.samples),
            "durations": list(self.durations),
            "m": self.m,
            "mean": self.mean,
            "stddev": self.stddev if self.m >= 2 else None,
            "converged": self.converged,
            "idle_power": self.idle_power,
            "params": asdict(self.params),
        }


def converged(series: MeasurementSeries | Sequence[float], params: ConfidenceParams) -> bool:
    samples = series.samples if isinstance(series, MeasurementSeries) else list(series)
    m = len(samples)
    if m < 2:
        raise ValueError("the stopping rule needs at least two samples")
    mean = statistics.fmean(samples)
    if mean <= 0:
        raise MeasurementError(
            f"mean net energy {mean:.6g} is not positive; idle subtraction removed everything"
        )
    if m < params.m_min:
        return False
    sigma = statistics.stdev(samples)
    lhs = 2.0 * sigma / math.sqrt(m) * t_critical(params.alpha, m - 1, params.two_sided)
    return lhs < params.beta * mean


# --- energy sources ----------------------------------------------------------


class EnergySource(Protocol):
    def run(self, task: Callable[[], object]) -> tuple[float, float]:
        """Run ``task`` once; return (gross joules, duration in seconds)."""

    def idle_power(self, duration: float) -> float:
        """Average idle power in watts over a window of ``duration`` seconds."""


class CounterFileSource:
    """Cumulative microjoule counters exposed as text files (e.g. powercap).

    Several files are summed, one per package/domain. A reading smaller than
    its predecessor is treated as a single wrap of ``wrap_modulus``.
    """

    def __init__(self, paths, wrap_modulus: int | None = None, clock=time.perf_counter,
                 sleep=time.sleep):
        self.paths = [Path(p) for p in ([paths] if isinstance(paths, (str, Path)) else paths)]
        self.wrap_modulus = wrap_modulus
        self.clock = clock
        self.sleep = sleep

    def _read(self) -> list[int]:
        values = []
        for p in self.paths:
            try:
                values.append(int(p.read_text().strip()))
            except (OSError, ValueError) as exc:
                raise MeasurementError(f"cannot read energy counter {p}: {exc}") from None
        return values

    def _delta_uj(self, before: list[int], after: list[int]) -> int:
        total = 0
        for p, b, a in zip(self.paths, before, after):
            d = a - b
            if d < 0:
                if not self.wrap_modulus:
                    raise MeasurementError(
                        f"counter {p} went backwards ({b} -> {a}) and no wrap modulus is declared"
                    )
                d += self.wrap_modulus
            total += d
        return total

    def run(self, task):
        before = self._read()
        t0 = self.clock()
        task()
        duration = self.clock() - t0
        after = self._read()
        return self._delta_uj(before, after) * 1e-6, duration

    def idle_power(self, duration: float) -> float:
        before = self._read()
        t0 = self.clock()
        self.sleep(duration)
        elapsed = self.clock() - t0
        after = self._read()
        if elapsed <= 0:
            return 0.0
        return self._delta_uj(before, after) * 1e-6 / elapsed


class ConstantPowerSource:
    """Wall-clock time multiplied by a fixed power draw."""

    def __init__(self, power_w: float, idle_w: float = 0.0, clock=time.perf_counter):
        self.power_w = power_w
        self.idle_w = idle_w
        self.clock = clock

    def run(self, task):
        t0 = self.clock()
        task()
        duration = self.clock() - t0
        return self.power_w * duration, duration

    def idle_power(self, duration: float) -> float:
        return self.idle_w


class TraceSource:
    """Replays scripted (gross joules, duration) readings; the task still runs."""

    def __init__(self, readings: Sequence[tuple[float, float]], idle_w: float = 0.0, cycle=True):
        if not readings:
            raise ValueError("trace source needs at least one reading")
        self.readings = list(readings)
        self.idle_w = idle_w
        self.cycle = cycle
        self._pos = 0

    def run(self, task):
        task()
        if self._pos >= len(self.readings):
            if not self.cycle:
                raise MeasurementError("trace source exhausted")
            self._pos = 0
        reading = self.readings[self._pos]
        self._pos += 1
        return float(reading[0]), float(reading[1])

    def idle_power(self, duration: float) -> float:
        return self.idle_w


class GaussianStubSource:
    """Seeded normally distributed energies for exercising the stopping rule."""

    def __init__(self, mean: float = 100.0, cv: float = 0.01, duration: float = 1.0,
                 idle_w: float = 0.0, seed: int = 0):
        self.mean = mean
        self.sd = cv * mean
        self.duration = duration
        self.idle_w = idle_w
        self.rng = np.random.default_rng(seed)

    def run(self, task):
        task()
        gross = self.mean + self.idle_w * self.duration + self.sd * self.rng.standard_normal()
        return float(gross), self.duration

    def idle_power(self, duration: float) -> float:
        return self.idle_w


def parse_source(spec: str) -> EnergySource:
    """Build a source from ``counter:<path>[,<path>...][@modulus]`` or ``stub:...``.

    Stub forms: ``stub:constant[,energy=J][,duration=s][,idle=W]`` and
    ``stub:gauss[,mean=J][,cv=x][,seed=n]``.
    """
    kind, _, rest = spec.partition(":")
    if kind == "counter":
        if not rest:
            raise ValueError("counter source needs a path")
        paths, _, modulus = rest.partition("@")
        return CounterFileSource(paths.split(","), int(modulus) if modulus else None)
    if kind == "stub":
        name, *opts = rest.split(",")
        kw = {}
        for opt in opts:
            key, _, val = opt.partition("=")
            if not val:
                raise ValueError(f"bad stub option {opt!r}")
            kw[key.strip()] = float(val)
        if name == "constant":
            energy = kw.pop("energy", 100.0)
            duration = kw.pop("duration", 1.0)
            idle = kw.pop("idle", 0.0)
            if kw:
                raise ValueError(f"unknown stub options {sorted(kw)}")
            return TraceSource([(energy + idle * duration, duration)], idle_w=idle)
        if name == "gauss":
            allowed = {"mean", "cv", "duration", "idle", "seed"}
            if set(kw) - allowed:
                raise ValueError(f"unknown stub options {sorted(set(kw) - allowed)}")
            return GaussianStubSource(
                mean=kw.get("mean", 100.0), cv=kw.get("cv", 0.01),
                duration=kw.get("duration", 1.0), idle_w=kw.get("idle", 0.0),
                seed=int(kw.get("seed", 0)),
            )
        raise ValueError(f"unknown stub source {name!r}")
    raise ValueError(f"unknown energy source {spec!r}; use counter:<path> or stub:<kind>")


def measure_until_confident(
    task: Callable[[], object],
    source: EnergySource,
    params: ConfidenceParams = ConfidenceParams(),
    *,
    idle_power: float | None = None,
    idle_per_run: bool = False,
    raise_on_failure: bool = False,
) -> MeasurementSeries:
    """Sample net energy of ``task`` until the confidence rule holds or ``m_max``.

    Returns the series with ``converged`` set accordingly. With
    ``raise_on_failure`` a :class:`NonConvergence` is raised instead.
    """
    series = MeasurementSeries(params=params)
    with MEASUREMENT_LOCK:
        while series.m < params.m_max:
            gross, duration = source.run(task)
            if idle_per_run or (idle_power is None and series.m == 0):
                idle_power = source.idle_power(duration)
            series.idle_power = idle_power
            series.samples.append(gross - idle_power * duration)
            series.durations.append(duration)
            if series.m >= 2 and converged(series, params):
                series.converged = True
                break
    if not series.converged and raise_on_failure:
        raise NonConvergence(series)
    return series


def measure_command(argv: Sequence[str], source: EnergySource, params=ConfidenceParams(),
                    **kw) -> MeasurementSeries:
    def task():
        proc = subprocess.run(list(argv), stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
        if proc.returncode != 0:
            raise MeasurementError(
                f"command {argv[0]!r} exited with {proc.returncode}: "
                f"{proc.stderr.decode(errors='replace').strip()[-400:]}"
            )

    return measure_until_confident(task, source, params, **kw)


def dumps_report(series: MeasurementSeries) -> str:
    return json.dumps(series.to_json(), indent=2)
