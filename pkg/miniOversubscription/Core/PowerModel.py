"""
PowerModel.py maps per-core utilization and frequency to server (blade) and chassis power. The model is

    P = idle_w + sum over cores of (peak_w - idle_w) / cores * utilization * frequency ** dyn_exponent

i.e. idle power does not depend on frequency, every core contributes an equal share of the dynamic range, linearly in
its utilization and as a power law in its (normalized) frequency. The exponent is calibrated to two measured operating
points of a server: 112 W idle and 310 W fully loaded at full frequency, 169 W fully loaded at half frequency. This
gives dyn_exponent = log(57/198) / log(0.5), about 1.796.

Frequencies are normalized to the maximum one (f_max = 1.0) and take the values of a discrete p-state ladder, by
default 11 evenly spaced states 0.50, 0.55, ..., 1.00.

Every function here is pure. The array versions (core_dynamic_w, server_power_arrays) are what the cluster and the
capping controller use; server_power and CoreState are the readable form of the same arithmetic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np
from sympy import Eq, Rational, Symbol, solve

from miniOversubscription.Core.CoreExceptions.PowerModelExceptions import (
    InvalidPowerSpec,
    UnknownPState,
    CalibrationFailed)
from miniOversubscription.Utilities.Checks import count_check


logger = logging.getLogger(__name__)

LADDER_TOLERANCE = 1e-9


def calibrate_exponent(idle_w: float, peak_w: float, reduced_peak_w: float, reduced_freq: float) -> float:
    """
    Solves idle_w + (peak_w - idle_w) * reduced_freq ** x = reduced_peak_w for x. The numbers are converted to exact
    rationals first, so that the solution for the default envelope is exactly log(57/198) / log(1/2).

    :raises CalibrationFailed: unless idle_w < reduced_peak_w < peak_w and 0 < reduced_freq < 1.
    """

    if not idle_w < reduced_peak_w < peak_w:
        raise CalibrationFailed(f'expected idle_w < reduced_peak_w < peak_w, got {idle_w}, {reduced_peak_w}, '
                                f'{peak_w}.', variables=locals())
    if not 0 < reduced_freq < 1:
        raise CalibrationFailed(f'reduced_freq must be within (0, 1), got {reduced_freq}.', variables=locals())

    x = Symbol('x', positive=True)
    idle, peak, reduced, freq = (Rational(str(v)) for v in (idle_w, peak_w, reduced_peak_w, reduced_freq))
    solutions = solve(Eq(idle + (peak - idle) * freq ** x, reduced), x)

    if len(solutions) != 1:
        raise CalibrationFailed(f'expected exactly one positive solution, got {solutions}.', variables=locals())

    exponent = float(solutions[0])
    logger.debug('calibrated dynamic exponent %.6f from %s W at frequency %s', exponent, reduced_peak_w, reduced_freq)
    return exponent


DEFAULT_EXPONENT = math.log(57 / 198) / math.log(0.5)


@dataclass(frozen=True)
class ServerPowerSpec:
    idle_w: float = 112.0
    peak_w: float = 310.0
    cores: int = 40
    f_max: float = 1.0
    f_min: float = 0.5
    dyn_exponent: float = DEFAULT_EXPONENT
    pstates: int = 11
    ladder: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.idle_w < self.peak_w:
            raise InvalidPowerSpec(f'expected 0 <= idle_w < peak_w, got {self.idle_w} and {self.peak_w}.',
                                   variables={'spec': self})
        if self.cores < 1:
            raise InvalidPowerSpec(f'cores must be positive, got {self.cores}.', variables={'spec': self})
        if self.f_max != 1.0 or not 0 < self.f_min <= self.f_max:
            raise InvalidPowerSpec(f'expected 0 < f_min <= f_max = 1.0, got f_min={self.f_min}, '
                                   f'f_max={self.f_max}.', variables={'spec': self})
        if self.dyn_exponent <= 0:
            raise InvalidPowerSpec(f'dyn_exponent must be positive, got {self.dyn_exponent}.',
                                   variables={'spec': self})
        if self.pstates < 1 or (self.pstates == 1 and self.f_min != self.f_max):
            raise InvalidPowerSpec(f'a ladder from {self.f_min} to {self.f_max} needs at least 2 p-states.',
                                   variables={'spec': self})

        ladder = np.round(np.linspace(self.f_min, self.f_max, self.pstates), 10)
        ladder.setflags(write=False)
        object.__setattr__(self, 'ladder', ladder)

    @classmethod
    def calibrated(cls, reduced_peak_w: float = 169.0, reduced_freq: float = 0.5, **kwargs) -> ServerPowerSpec:
        """A spec whose exponent is fitted to one more measured point (full load at a reduced frequency)."""
        draft = cls(**kwargs)
        exponent = calibrate_exponent(draft.idle_w, draft.peak_w, reduced_peak_w, reduced_freq)
        return cls(**{**kwargs, 'dyn_exponent': exponent})

    @property
    def per_core_dynamic_w(self) -> float:
        return (self.peak_w - self.idle_w) / self.cores

    @property
    def dynamic_range_w(self) -> float:
        return self.peak_w - self.idle_w

    def as_dict(self) -> dict:
        return {'idle_w': self.idle_w, 'peak_w': self.peak_w, 'cores': self.cores, 'f_max': self.f_max,
                'f_min': self.f_min, 'dyn_exponent': self.dyn_exponent, 'pstates': self.pstates}


@dataclass(frozen=True)
class CoreState:
    utilization: float
    frequency: float = 1.0


# ======================================================================================================= P-STATE LADDER
def ladder_index(spec: ServerPowerSpec, frequency: float) -> int:
    """:raises UnknownPState: if the frequency is not (within 1e-9) one of the ladder frequencies."""
    index = int(np.argmin(np.abs(spec.ladder - frequency)))
    if abs(spec.ladder[index] - frequency) > LADDER_TOLERANCE:
        raise UnknownPState(frequency, variables={'ladder': spec.ladder.tolist()})
    return index


def snap_to_ladder(spec: ServerPowerSpec, frequency: float) -> float:
    """The highest p-state not above the frequency (f_min for frequencies below the ladder)."""
    below = spec.ladder[spec.ladder <= frequency + LADDER_TOLERANCE]
    return float(below[-1]) if below.size else float(spec.ladder[0])


def step_up(spec: ServerPowerSpec, frequency: float) -> float:
    index = ladder_index(spec, frequency)
    return float(spec.ladder[min(index + 1, spec.pstates - 1)])


def step_down(spec: ServerPowerSpec, frequency: float) -> float:
    index = ladder_index(spec, frequency)
    return float(spec.ladder[max(index - 1, 0)])


# ============================================================================================================ POWER
def core_dynamic_w(spec: ServerPowerSpec, utilization: np.ndarray, frequency: np.ndarray) -> np.ndarray:
    """Dynamic power of every core (element-wise)."""
    return spec.per_core_dynamic_w * np.asarray(utilization) * np.power(np.asarray(frequency), spec.dyn_exponent)


def server_power_arrays(spec: ServerPowerSpec, utilization: np.ndarray, frequency: np.ndarray) -> float:
    """Power of one server from per-core arrays. Cores not listed are idle."""
    utilization = np.asarray(utilization, dtype=float)
    if utilization.size > spec.cores:
        raise ValueError(f'{utilization.size} core states given for a {spec.cores}-core server.')
    load = (utilization * np.power(np.asarray(frequency, dtype=float), spec.dyn_exponent)).sum()
    return float(spec.idle_w + spec.dynamic_range_w * load / spec.cores)


def server_power(spec: ServerPowerSpec, cores: Sequence[CoreState]) -> float:
    """:raises ConfigurationError: unless there is one CoreState per core of the ServerPowerSpec."""
    count_check(cores, spec.cores, 'cores', section='power')
    utilization = np.fromiter((c.utilization for c in cores), dtype=float, count=len(cores))
    frequency = np.fromiter((c.frequency for c in cores), dtype=float, count=len(cores))
    return server_power_arrays(spec, utilization, frequency)


def chassis_power(spec: ServerPowerSpec, servers: Iterable[Sequence[CoreState]]) -> float:
    """Sum of blade powers (no PSU conversion losses)."""
    return float(sum(server_power(spec, cores) for cores in servers))


# ============================================================================================ FREQUENCY-POWER CURVES
@dataclass(frozen=True)
class FreqPowerCurve:
    utilization: float
    points: Tuple[Tuple[float, float], ...]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([f for f, _ in self.points])

    @property
    def watts(self) -> np.ndarray:
        return np.array([w for _, w in self.points])

    def watts_at(self, frequency: float) -> float:
        """Server power at a frequency, linearly interpolated between p-states."""
        return float(np.interp(frequency, self.frequencies, self.watts))

    def reduction(self, f_from: float, f_to: float) -> float:
        """Watts saved by moving every core from f_from down to f_to."""
        return self.watts_at(f_from) - self.watts_at(f_to)


def freq_power_curve(spec: ServerPowerSpec, utilization: float) -> FreqPowerCurve:
    """Server power over the p-state ladder with all cores at the given utilization."""
    if not 0.0 <= utilization <= 1.0:
        raise ValueError(f'utilization must be within [0, 1], got {utilization}.')

    watts = spec.idle_w + spec.dynamic_range_w * utilization * np.power(spec.ladder, spec.dyn_exponent)
    return FreqPowerCurve(utilization, tuple((float(f), float(w)) for f, w in zip(spec.ladder, watts)))
