"""
Criticality.py decides whether a VM is user-facing (UF) or non-user-facing (NUF) from its CPU utilization time series.
User-facing workloads serve people, and people have days and nights, so their utilization repeats every 24 hours.
Batch and background workloads either show no period at all, or a period that some machine chose (every hour, every
4, 8, 12 hours...).


THE ALGORITHM
The input is the average CPU utilization for each 30-minute slot over 5 weekdays, i.e. 240 slots. The algorithm

1) pre-processes the series: every slot is divided by the mean of the preceding 24 hours (de-trending) and then the
   whole series is divided by its standard deviation (normalization). After this, all days show utilizations within
   the same rough range, and a VM that is simply 3 times busier than another one looks exactly the same;
2) extracts a template of a typical 24-hour period: for every slot of the day, the median of all pre-processed values
   reported at this time of day;
3) overlays the template over the series and computes the average absolute deviation after excluding the 20% largest
   deviations (so that a few bad hours or an interruption do not ruin the match);
4) repeats 2 and 3 for 12-hour and 8-hour templates and computes two scores

       Compare8 = dev24 / dev8        Compare12 = dev24 / dev12

   If the 24-hour template fits much better than the shorter ones, the score is close to 0 and the workload is likely
   user-facing. A series is labeled user-facing if Compare8 is lower than a threshold (0.72 by default).

The shorter templates are what disambiguates a genuine daily pattern from a machine-generated one: a signal with an
8-hour (or 4-hour, 2-hour...) period fits the 8-hour template as well as the 24-hour one, so its Compare8 is close to
1. A 12-hour or 6-hour signal does not fold into an 8-hour template, it folds into the 12-hour one; to catch those,
classify() accepts an optional compare12_threshold which additionally requires Compare12 to be low.


SPECIAL CASES
- Series shorter than 5 days cannot be classified and are conservatively labeled user-facing.
- A constant series has zero variance after de-trending. It carries no daily pattern and is labeled non-user-facing.
- If both the 24-hour and the 8-hour templates fit perfectly (both deviations below EPSILON), the series is a perfect
  short-period signal (machine-generated) and is labeled non-user-facing.
- The first day of the series has no preceding 24 hours; its slots are divided by the mean of the first day itself.


All functions here are pure: they never modify their inputs and the same input always gives bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import os
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from miniOversubscription.Core.CoreExceptions.CriticalityExceptions import (
    SeriesTooShort,
    InvalidSeries,
    TemplateMismatch)
from miniOversubscription.Utilities.UtilityExceptions import MalformedInput


MINUTES_PER_DAY = 1440
SLOT_MINUTES = 30
MIN_DAYS = 5
EPSILON = 1e-6
DEFAULT_THRESHOLD = 0.72
TRIM_FRACTION = 0.2
TEMPLATE_HOURS = (24, 12, 8)

TRIM_GLOBAL = 'global'
TRIM_PER_DAY = 'per-day'


class WorkloadLabel(str, Enum):
    USER_FACING = 'UserFacing'
    NON_USER_FACING = 'NonUserFacing'

    def __str__(self) -> str:
        return self.value

    @property
    def is_user_facing(self) -> bool:
        return self is WorkloadLabel.USER_FACING


# ========================================================================================================= DATA TYPES
@dataclass(frozen=True)
class UtilizationSeries:
    """
    A fixed-cadence CPU-utilization series of one VM. Raw series hold fractions in [0, 1]; a pre-processed series
    (preprocessed=True) holds unbounded reals. zero_variance marks a pre-processed series whose de-trended values
    were constant (its values are left de-trended but not normalized).
    """

    values: np.ndarray
    slot_minutes: int = SLOT_MINUTES
    preprocessed: bool = False
    zero_variance: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidSeries('values must be one-dimensional.', variables={'shape': values.shape})
        if self.slot_minutes <= 0 or MINUTES_PER_DAY % self.slot_minutes != 0:
            raise InvalidSeries(f'slot_minutes={self.slot_minutes} does not divide a day.',
                                variables={'slot_minutes': self.slot_minutes})
        if not np.all(np.isfinite(values)):
            raise InvalidSeries('values contain NaN or infinity.', variables={'slots': values.size})
        if not self.preprocessed and values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise InvalidSeries('utilization values must lie within [0, 1].',
                                variables={'min': float(values.min()), 'max': float(values.max())})

        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return int(self.values.size)

    def scaled(self, factor: float) -> UtilizationSeries:
        """Returns the series multiplied by a positive factor (values are clipped to 1 for raw series)."""
        values = self.values * factor
        if not self.preprocessed:
            values = np.clip(values, 0.0, 1.0)
        return UtilizationSeries(values, self.slot_minutes, self.preprocessed)

    @property
    def slots_per_day(self) -> int:
        return MINUTES_PER_DAY // self.slot_minutes

    @property
    def span_days(self) -> float:
        return len(self) / self.slots_per_day

    @property
    def whole_days(self) -> int:
        return len(self) // self.slots_per_day

    def period_slots(self, hours: int) -> int:
        return hours * 60 // self.slot_minutes


@dataclass(frozen=True)
class Template:
    period_slots: int
    slot_values: np.ndarray

    def tiled(self, length: int) -> np.ndarray:
        if length % self.period_slots:
            raise TemplateMismatch(self.period_slots, length, variables={'length': length})
        return np.tile(self.slot_values, length // self.period_slots)


@dataclass(frozen=True)
class CriticalityScores:
    compare8: float
    compare12: float
    dev24: float
    dev12: float
    dev8: float
    too_short: bool = False
    zero_variance: bool = False

    @property
    def template_perfect(self) -> bool:
        """Both the 24-hour and the 8-hour templates fit (numerically) perfectly: a machine-generated signal."""
        return self.dev24 < EPSILON and self.dev8 < EPSILON

    @classmethod
    def short_sentinel(cls) -> CriticalityScores:
        return cls(compare8=float('nan'), compare12=float('nan'), dev24=float('nan'), dev12=float('nan'),
                   dev8=float('nan'), too_short=True)

    def as_dict(self) -> dict:
        return {'compare8': self.compare8, 'compare12': self.compare12, 'dev24': self.dev24, 'dev12': self.dev12,
                'dev8': self.dev8, 'too_short': self.too_short, 'zero_variance': self.zero_variance}


# ========================================================================================================= OPERATIONS
def _rolling_previous_day_mean(values: np.ndarray, day: int) -> np.ndarray:
    """Mean of the `day` slots preceding each slot; the first day uses the mean of the first day."""
    cumulative = np.concatenate(([0.0], np.cumsum(values)))
    means = np.empty_like(values)
    means[:day] = cumulative[day] / day
    means[day:] = (cumulative[day:-1] - cumulative[:-day - 1]) / day
    return means


def preprocess(series: UtilizationSeries) -> UtilizationSeries:
    """
    De-trends (divides by the rolling mean of the preceding 24 hours, guarded by EPSILON) and normalizes (divides by
    the standard deviation of the whole de-trended series). Positive scaling of the input cancels out.

    :raises SeriesTooShort: if the series covers less than two days.
    """

    day = series.slots_per_day
    if len(series) < 2 * day:
        raise SeriesTooShort(len(series), 2 * day, variables={'slot_minutes': series.slot_minutes})

    values = series.values
    divisor = np.maximum(_rolling_previous_day_mean(values, day), EPSILON)
    detrended = values / divisor
    std = float(detrended.std())

    if std < EPSILON:
        return UtilizationSeries(detrended, series.slot_minutes, preprocessed=True, zero_variance=True)

    return UtilizationSeries(detrended / std, series.slot_minutes, preprocessed=True)


def extract_template(pre: UtilizationSeries, period_slots: int) -> Template:
    """Template of one period: for each phase, the median of all values at that phase."""

    n = len(pre)
    if period_slots <= 0 or n % period_slots:
        raise TemplateMismatch(period_slots, n, variables={'slot_minutes': pre.slot_minutes})

    folded = pre.values.reshape(n // period_slots, period_slots)
    return Template(period_slots, np.median(folded, axis=0))


def _trimmed_mean(deviations: np.ndarray, fraction: float) -> float:
    excluded = int(np.floor(fraction * deviations.size))
    kept = np.sort(deviations)[:deviations.size - excluded]
    return float(kept.mean()) if kept.size else 0.0


def mean_deviation(pre: UtilizationSeries, tmpl: Template, trim: str = TRIM_GLOBAL,
                   trim_fraction: float = TRIM_FRACTION) -> float:
    """
    Average absolute deviation of the series from its tiled template after excluding the largest deviations.

    :param trim: TRIM_GLOBAL drops floor(trim_fraction * n) largest deviations of the whole series; TRIM_PER_DAY drops
    floor(trim_fraction * slots_per_day) largest deviations of every day and averages what is left.
    """

    deviations = np.abs(pre.values - tmpl.tiled(len(pre)))

    if trim == TRIM_GLOBAL:
        return _trimmed_mean(deviations, trim_fraction)
    elif trim == TRIM_PER_DAY:
        day = pre.slots_per_day
        if len(pre) % day:
            raise TemplateMismatch(day, len(pre), variables={'trim': trim})
        per_day = deviations.reshape(len(pre) // day, day)
        excluded = int(np.floor(trim_fraction * day))
        kept = np.sort(per_day, axis=1)[:, :day - excluded]
        return float(kept.mean()) if kept.size else 0.0
    else:
        raise ValueError(f'Unknown trimming mode "{trim}", expected "{TRIM_GLOBAL}" or "{TRIM_PER_DAY}".')


def compare_scores(series: UtilizationSeries, trim: str = TRIM_GLOBAL) -> CriticalityScores:
    """
    Runs the whole pattern-matching pipeline and returns the deviations and the two scores.

    :raises SeriesTooShort: if the series covers less than MIN_DAYS days.
    """

    required = MIN_DAYS * series.slots_per_day
    if len(series) < required:
        raise SeriesTooShort(len(series), required, variables={'slot_minutes': series.slot_minutes})

    # whole days only, the templates must tile the series
    usable = series.whole_days * series.slots_per_day
    if usable != len(series):
        series = UtilizationSeries(series.values[:usable], series.slot_minutes)

    pre = preprocess(series)
    if pre.zero_variance:
        return CriticalityScores(compare8=0.0, compare12=0.0, dev24=0.0, dev12=0.0, dev8=0.0, zero_variance=True)

    dev24, dev12, dev8 = (mean_deviation(pre, extract_template(pre, pre.period_slots(hours)), trim=trim)
                          for hours in TEMPLATE_HOURS)

    return CriticalityScores(compare8=dev24 / max(dev8, EPSILON),
                             compare12=dev24 / max(dev12, EPSILON),
                             dev24=dev24, dev12=dev12, dev8=dev8)


def classify(series: UtilizationSeries,
             threshold: float = DEFAULT_THRESHOLD,
             compare12_threshold: Optional[float] = None,
             trim: str = TRIM_GLOBAL
             ) -> Tuple[WorkloadLabel, CriticalityScores]:
    """
    Labels a series. Total: never raises for a valid UtilizationSeries.

    UserFacing iff Compare8 < threshold (strictly), and, when compare12_threshold is given, Compare12 <
    compare12_threshold as well. Short series are UserFacing (with NaN sentinel scores); zero-variance and
    template-perfect series are NonUserFacing.
    """

    try:
        scores = compare_scores(series, trim=trim)
    except SeriesTooShort:
        return WorkloadLabel.USER_FACING, CriticalityScores.short_sentinel()

    if scores.zero_variance or scores.template_perfect:
        return WorkloadLabel.NON_USER_FACING, scores

    user_facing = scores.compare8 < threshold
    if compare12_threshold is not None:
        user_facing = user_facing and scores.compare12 < compare12_threshold

    label = WorkloadLabel.USER_FACING if user_facing else WorkloadLabel.NON_USER_FACING
    return label, scores


# ========================================================================================================= INGESTION
def weekday_slots(frame: pd.DataFrame, timestamp_column: str = 'timestamp') -> pd.DataFrame:
    """Drops the rows whose timestamp falls on a Saturday or a Sunday."""
    stamps = pd.to_datetime(frame[timestamp_column])
    return frame.loc[stamps.dt.dayofweek < 5].reset_index(drop=True)


def series_from_frame(frame: pd.DataFrame, source: str = '<frame>', slot_minutes: int = SLOT_MINUTES
                      ) -> UtilizationSeries:
    """
    Builds a series from a frame with the columns "timestamp,utilization". Every problem found is reported with the
    line number it has in a CSV file with a header line (data starts on line 2).

    :raises MalformedInput: for missing columns, unparsable timestamps or values, values outside [0, 1], or a cadence
    different from slot_minutes.
    """

    problems = list()
    missing = {'timestamp', 'utilization'}.difference(frame.columns)
    if missing:
        raise MalformedInput(source, [f'line 1: missing column(s) {", ".join(sorted(missing))}'],
                             variables={'columns': list(frame.columns)})
    if frame.empty:
        raise MalformedInput(source, ['the file contains no data rows'], variables={'source': source})

    stamps = pd.to_datetime(frame['timestamp'], errors='coerce')
    values = pd.to_numeric(frame['utilization'], errors='coerce')

    for i in np.flatnonzero(stamps.isna().to_numpy()):
        problems.append(f'line {i + 2}: cannot parse timestamp "{frame["timestamp"].iloc[i]}"')
    for i in np.flatnonzero(values.isna().to_numpy()):
        problems.append(f'line {i + 2}: cannot parse utilization "{frame["utilization"].iloc[i]}"')
    out_of_range = (values < 0) | (values > 1)
    for i in np.flatnonzero(out_of_range.to_numpy()):
        problems.append(f'line {i + 2}: utilization {values.iloc[i]} is outside [0, 1]')

    if not stamps.isna().any():
        steps = stamps.diff().dt.total_seconds().to_numpy()[1:]
        for i in np.flatnonzero(steps != slot_minutes * 60):
            problems.append(f'line {i + 3}: expected a {slot_minutes}-minute step, got {steps[i] / 60:g} minutes')

    if problems:
        raise MalformedInput(source, problems, variables={'rows': len(frame)})

    return UtilizationSeries(values.to_numpy(dtype=float), slot_minutes)


def series_from_csv(path: Union[str, os.PathLike], slot_minutes: int = SLOT_MINUTES) -> UtilizationSeries:
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise MalformedInput(str(path), ['the file is empty'], variables={'path': str(path)})
    except pd.errors.ParserError as e:
        raise MalformedInput(str(path), [str(e)], variables={'path': str(path)})
    return series_from_frame(frame, source=str(path), slot_minutes=slot_minutes)


"""
t = np.arange(240)
series = UtilizationSeries(0.5 + 0.3 * np.sin(2 * np.pi * t / 48))
print(classify(series))
"""
