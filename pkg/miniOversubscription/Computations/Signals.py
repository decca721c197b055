"""
Signals.py produces CPU utilization for the simulator and synthetic series for the criticality classifier.

Simulated VMs are given piecewise-constant utilization on slots of SignalConfig.slot_s seconds (300 s by default). The
value of a slot only depends on the VM and the slot index, so a signal can be evaluated at any time, in any order, and
always gives the same number:

- a user-facing VM follows a diurnal sinusoid that is high during the day and low at night, with its 95th percentile
  at the VM's true P95. Its mean is 0.6025 * p95 and its amplitude 0.4025 * p95; a sinusoid spends 5% of its time
  above 0.9877 of its amplitude, which puts the P95 at p95;
- a non-user-facing VM sits at a stationary noisy level L = p95 - 1.645 * sigma, so the 95th percentile of its
  Gaussian noise lands at p95. L is negative for p95 below 1.645 * sigma; the clip at 0 is nondecreasing, so the
  95th percentile stays at p95 and only the mean moves up.

The noise is not drawn from a generator but computed from a hash of (vm.seed, slot). Values are clipped to [0, 1].

    >>> u = utilization_signal(vm, t)
    >>> slots = utilization_slots(vm, np.arange(288))

The second half of the module builds the synthetic series families the classifier is tested against: diurnal series
(plain, with a growing trend, with a 2-day interruption), machine-generated periodic series (6, 8 and 12 hours) and
white noise.

    >>> series = synthetic_series(SyntheticClass.PERIODIC_8H, np.random.default_rng(1))
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from miniOversubscription.Core.Criticality import UtilizationSeries, WorkloadLabel, MIN_DAYS, SLOT_MINUTES
from miniOversubscription.Core.Cluster import VmDescriptor
from miniOversubscription.Utilities.Checks import fraction_check, positive_check
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError


SECONDS_PER_DAY = 86_400
UF_MEAN_FACTOR = 0.6025
UF_AMPLITUDE_FACTOR = 0.4025
P95_Z = 1.645

_MASK64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class SignalConfig:
    slot_s: int = 300
    uf_noise: float = 0.02
    nuf_noise: float = 0.05
    peak_hour: float = 14.0

    def __post_init__(self):
        positive_check(self.slot_s, 'slot_s', section='signals')
        fraction_check(self.uf_noise, 'uf_noise', section='signals')
        fraction_check(self.nuf_noise, 'nuf_noise', section='signals')
        if not 0 <= self.peak_hour < 24:
            raise ConfigurationError('signals', f'peak_hour must be within [0, 24), got {self.peak_hour}.',
                                     variables={'config': self})


# ============================================================================================================ NOISE
def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over='ignore'):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def _seed_key(seed: Union[int, np.ndarray]):
    if isinstance(seed, np.ndarray):
        return seed.astype(np.uint64)
    return np.uint64(seed & _MASK64)


def _uniform(seed: Union[int, np.ndarray], index: np.ndarray) -> np.ndarray:
    """Uniform numbers in (0, 1), one per index, a pure function of (seed, index). Array seeds broadcast."""
    key = _splitmix(np.asarray(index, dtype=np.uint64)) ^ _seed_key(seed)
    return ((_splitmix(key) >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0 ** 53


def standard_normal(seed: Union[int, np.ndarray], slots: np.ndarray) -> np.ndarray:
    """Box-Muller over two hashed uniform streams."""
    slots = np.asarray(slots, dtype=np.int64).astype(np.uint64)
    u1 = _uniform(seed, slots * np.uint64(2))
    u2 = _uniform(seed, slots * np.uint64(2) + np.uint64(1))
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


# ========================================================================================================= SIGNALS
def _diurnal(hours: np.ndarray, peak_hour: float) -> np.ndarray:
    return np.sin(2.0 * np.pi * (hours - peak_hour + 6.0) / 24.0)


def utilization_slots(vm: VmDescriptor, slots: np.ndarray, config: SignalConfig = SignalConfig()) -> np.ndarray:
    """Utilization of the VM on the given slot indices (slot k covers [k * slot_s, (k + 1) * slot_s))."""

    slots = np.asarray(slots, dtype=np.int64)
    p95 = vm.true_p95

    if vm.true_label is WorkloadLabel.USER_FACING:
        hours = ((slots + 0.5) * config.slot_s / 3600.0) % 24.0
        values = p95 * (UF_MEAN_FACTOR + UF_AMPLITUDE_FACTOR * _diurnal(hours, config.peak_hour))
        noise = config.uf_noise
    else:
        values = np.full(slots.shape, p95 - P95_Z * config.nuf_noise)
        noise = config.nuf_noise

    if noise > 0:
        values = values + noise * standard_normal(vm.seed, slots)
    return np.clip(values, 0.0, 1.0)


def utilization_signal(vm: VmDescriptor, t: float, config: SignalConfig = SignalConfig()) -> float:
    return float(utilization_slots(vm, np.array([int(t // config.slot_s)]), config)[0])


def utilization_many(user_facing: np.ndarray, p95: np.ndarray, seeds: np.ndarray, slot: int,
                     config: SignalConfig = SignalConfig()) -> np.ndarray:
    """
    Utilization of many VMs on one slot, the simulator's form of utilization_slots(): element i is the value
    utilization_slots() gives for the VM (user_facing[i], p95[i], seeds[i]) on that slot.
    """

    p95 = np.asarray(p95, dtype=float)
    hours = ((slot + 0.5) * config.slot_s / 3600.0) % 24.0
    uf_level = p95 * (UF_MEAN_FACTOR + UF_AMPLITUDE_FACTOR * _diurnal(hours, config.peak_hour))
    nuf_level = p95 - P95_Z * config.nuf_noise

    values = np.where(user_facing, uf_level, nuf_level)
    noise = np.where(user_facing, config.uf_noise, config.nuf_noise)
    z = standard_normal(np.asarray(seeds, dtype=np.int64), np.full(p95.shape, slot, dtype=np.int64))
    return np.clip(values + noise * z, 0.0, 1.0)


def vm_series(vm: VmDescriptor, days: int = MIN_DAYS, config: SignalConfig = SignalConfig(),
              slot_minutes: int = SLOT_MINUTES) -> UtilizationSeries:
    """The VM's signal over its first days, averaged to the classifier's cadence."""

    per_slot = slot_minutes * 60 // config.slot_s
    first = int(vm.arrival_s // config.slot_s)
    n = days * SECONDS_PER_DAY // config.slot_s
    fine = utilization_slots(vm, np.arange(first, first + n), config)
    return UtilizationSeries(fine.reshape(-1, per_slot).mean(axis=1), slot_minutes)


# ======================================================================================================= SYNTHETIC
class SyntheticClass(str, Enum):
    DIURNAL = 'diurnal'
    DIURNAL_TREND = 'diurnal-trend'
    DIURNAL_INTERRUPTED = 'diurnal-interrupted'
    PERIODIC_6H = 'periodic-6h'
    PERIODIC_8H = 'periodic-8h'
    PERIODIC_12H = 'periodic-12h'
    WHITE_NOISE = 'white-noise'

    @property
    def is_user_facing(self) -> bool:
        return self in (SyntheticClass.DIURNAL, SyntheticClass.DIURNAL_TREND, SyntheticClass.DIURNAL_INTERRUPTED)

    @property
    def period_hours(self) -> Optional[int]:
        return {SyntheticClass.PERIODIC_6H: 6, SyntheticClass.PERIODIC_8H: 8,
                SyntheticClass.PERIODIC_12H: 12}.get(self, 24 if self.is_user_facing else None)


# signal-to-noise ratio (amplitude over noise std) and length per class
_SNR = {SyntheticClass.DIURNAL: 2.0}
_DAYS = {SyntheticClass.DIURNAL_INTERRUPTED: 10}

AMPLITUDE = 0.15
TREND_PER_DAY = 0.1
INTERRUPTED_DAYS = 2


def synthetic_series(kind: Union[SyntheticClass, str],
                     rng: np.random.Generator,
                     days: Optional[int] = None,
                     snr: Optional[float] = None,
                     slot_minutes: int = SLOT_MINUTES
                     ) -> UtilizationSeries:
    """
    One random series of the given family. The base level, the phase and (for the interrupted class) the position of
    the interruption are drawn from rng. The interruption replaces two consecutive days by a constant load at the
    base level.
    """

    kind = SyntheticClass(kind)
    days = days if days is not None else _DAYS.get(kind, MIN_DAYS)
    snr = snr if snr is not None else _SNR.get(kind, 4.0)
    slots_per_day = 24 * 60 // slot_minutes
    n = days * slots_per_day
    hours = (np.arange(n) + 0.5) * slot_minutes / 60.0

    base = rng.uniform(0.25, 0.4)
    noise = AMPLITUDE / snr

    if kind is SyntheticClass.WHITE_NOISE:
        values = base + rng.normal(0.0, 2 * noise, n)
        return UtilizationSeries(np.clip(values, 0.0, 1.0), slot_minutes)

    phase = rng.uniform(0.0, 2.0 * np.pi)
    period = kind.period_hours
    values = base + AMPLITUDE * np.sin(2.0 * np.pi * hours / period + phase) + rng.normal(0.0, noise, n)

    if kind is SyntheticClass.DIURNAL_TREND:
        values = values * (1.0 + TREND_PER_DAY * hours / 24.0)
    elif kind is SyntheticClass.DIURNAL_INTERRUPTED:
        start = int(rng.integers(1, days - INTERRUPTED_DAYS)) * slots_per_day
        values[start:start + INTERRUPTED_DAYS * slots_per_day] = base

    return UtilizationSeries(np.clip(values, 0.0, 1.0), slot_minutes)
