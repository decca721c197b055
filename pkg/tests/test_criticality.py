import numpy as np
import pandas as pd
import pytest

from miniOversubscription.Core.Criticality import (
    UtilizationSeries,
    Template,
    WorkloadLabel,
    preprocess,
    extract_template,
    mean_deviation,
    compare_scores,
    classify,
    series_from_csv,
    series_from_frame,
    weekday_slots,
    TRIM_PER_DAY,
)
from miniOversubscription.Core.CoreExceptions.CriticalityExceptions import (
    SeriesTooShort,
    InvalidSeries,
    TemplateMismatch,
)
from miniOversubscription.Utilities.UtilityExceptions import MalformedInput


SLOTS = 240
T = np.arange(SLOTS)


def periodic(period_slots, base=0.5, amplitude=0.3, noise=0.0, seed=0, days=5):
    rng = np.random.default_rng(seed)
    t = np.arange(days * 48)
    values = base + amplitude * np.sin(2 * np.pi * t / period_slots) + rng.normal(0.0, noise, t.size)
    return UtilizationSeries(np.clip(values, 0.0, 1.0))


def pre_series(values):
    return UtilizationSeries(np.asarray(values, dtype=float), preprocessed=True)


# ---------------------------------------------------------------------------------------------------------- types
def test_series_rejects_out_of_range_values():
    with pytest.raises(InvalidSeries):
        UtilizationSeries(np.array([0.2, 1.5]))
    with pytest.raises(InvalidSeries):
        UtilizationSeries(np.array([0.2, np.nan]))


def test_series_rejects_slot_not_dividing_a_day():
    with pytest.raises(InvalidSeries):
        UtilizationSeries(np.zeros(10), slot_minutes=7)


def test_series_is_read_only():
    series = periodic(48)
    with pytest.raises(ValueError):
        series.values[0] = 0.1


def test_series_geometry():
    series = periodic(48)
    assert series.slots_per_day == 48
    assert series.span_days == 5
    assert series.period_slots(8) == 16


# ---------------------------------------------------------------------------------------------------- preprocess
def test_preprocess_constant_series_is_flagged():
    pre = preprocess(UtilizationSeries(np.full(SLOTS, 0.5)))
    assert pre.zero_variance
    assert pre.preprocessed


def test_preprocess_cancels_positive_scaling():
    series = periodic(48, base=0.2, amplitude=0.1, noise=0.01, seed=3)
    a = preprocess(series)
    b = preprocess(series.scaled(3.0))
    np.testing.assert_allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


def test_preprocess_removes_a_ramp():
    ramp = 0.1 + 0.8 * T / (SLOTS - 1)
    raw = ramp + 0.05 * np.sin(2 * np.pi * T / 48)
    raw_means = raw.reshape(5, 48).mean(axis=1)
    assert raw_means.max() / raw_means.min() > 1.5

    pre = preprocess(UtilizationSeries(raw))
    day_means = pre.values.reshape(5, 48).mean(axis=1)[2:]
    assert (day_means.max() - day_means.min()) / day_means.min() < 0.10


def test_preprocess_needs_two_days():
    with pytest.raises(SeriesTooShort):
        preprocess(UtilizationSeries(np.full(95, 0.3)))


def test_preprocess_does_not_modify_input():
    series = periodic(48, noise=0.02)
    before = series.values.copy()
    preprocess(series)
    np.testing.assert_array_equal(series.values, before)


# ----------------------------------------------------------------------------------------------- extract_template
def test_template_of_exact_periodic_series_is_one_period():
    period = np.sin(2 * np.pi * np.arange(48) / 48)
    template = extract_template(pre_series(np.tile(period, 5)), 48)
    np.testing.assert_array_equal(template.slot_values, period)


def test_template_ignores_one_corrupted_repeat():
    period = np.cos(2 * np.pi * np.arange(48) / 48)
    values = np.tile(period, 5)
    values[96:144] += np.random.default_rng(1).normal(0.0, 5.0, 48)
    template = extract_template(pre_series(values), 48)
    np.testing.assert_allclose(template.slot_values, period)


def test_eight_hour_template_of_a_daily_series():
    period = np.random.default_rng(2).normal(size=48)
    template = extract_template(pre_series(np.tile(period, 5)), 16)
    expected = np.median(np.stack([period[:16], period[16:32], period[32:]]), axis=0)
    np.testing.assert_allclose(template.slot_values, expected)


def test_template_must_tile_the_series():
    with pytest.raises(TemplateMismatch):
        extract_template(pre_series(np.zeros(100)), 48)


# ------------------------------------------------------------------------------------------------- mean_deviation
def test_deviation_of_the_template_itself_is_zero():
    period = np.sin(2 * np.pi * np.arange(48) / 48)
    pre = pre_series(np.tile(period, 5))
    assert mean_deviation(pre, Template(48, period)) == 0.0


def test_deviation_excludes_ten_percent_outliers():
    period = np.sin(2 * np.pi * np.arange(48) / 48)
    values = np.tile(period, 5)
    corrupted = np.random.default_rng(4).choice(SLOTS, size=24, replace=False)
    values[corrupted] += 10.0
    assert mean_deviation(pre_series(values), Template(48, period)) == 0.0


def test_uniform_offset_survives_trimming():
    period = np.sin(2 * np.pi * np.arange(48) / 48)
    pre = pre_series(np.tile(period, 5) + 1.0)
    assert mean_deviation(pre, Template(48, period)) == pytest.approx(1.0)


def test_per_day_trimming():
    period = np.zeros(48)
    values = np.zeros(SLOTS)
    # 4 outliers per day are within the 9 trimmed per day
    for day in range(5):
        values[day * 48:day * 48 + 4] = 7.0
    assert mean_deviation(pre_series(values), Template(48, period), trim=TRIM_PER_DAY) == 0.0

    # a whole corrupted day is not
    values = np.zeros(SLOTS)
    values[:48] = 1.0
    assert mean_deviation(pre_series(values), Template(48, period), trim=TRIM_PER_DAY) > 0.0
    assert mean_deviation(pre_series(values), Template(48, period)) == 0.0


def test_unknown_trimming_mode():
    with pytest.raises(ValueError):
        mean_deviation(pre_series(np.zeros(SLOTS)), Template(48, np.zeros(48)), trim='hourly')


def test_trimmed_mean_is_robust_to_fewer_than_twenty_percent_corruptions():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        period = rng.normal(size=48)
        values = np.tile(period, 5)
        k = int(rng.integers(0, 48))
        slots = rng.choice(SLOTS, size=k, replace=False)
        values[slots] += rng.normal(0.0, 100.0, k)
        assert mean_deviation(pre_series(values), Template(48, period)) == 0.0


# ------------------------------------------------------------------------------------------------- compare_scores
def test_daily_sinusoid_scores_low():
    scores = compare_scores(periodic(48, noise=0.02, seed=5))
    assert scores.compare8 < 0.3
    assert scores.compare12 < 0.3


def test_four_hour_signal_scores_near_one():
    scores = compare_scores(periodic(8, noise=0.02, seed=6))
    assert scores.compare8 > 0.72


def test_six_hour_signal_fits_the_twelve_hour_template():
    scores = compare_scores(periodic(12, noise=0.02, seed=7))
    assert scores.compare12 > 0.72


def test_white_noise_scores_near_one():
    above = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        series = UtilizationSeries(np.clip(rng.normal(0.5, 0.1, SLOTS), 0.0, 1.0))
        above += compare_scores(series).compare8 > 0.72
    assert above >= 95


def test_compare_scores_needs_five_days():
    with pytest.raises(SeriesTooShort):
        compare_scores(periodic(48, days=4))


def test_compare_scores_ratio_definition():
    scores = compare_scores(periodic(48, noise=0.05, seed=8))
    assert scores.compare8 == pytest.approx(scores.dev24 / scores.dev8)
    assert scores.compare12 == pytest.approx(scores.dev24 / scores.dev12)


# ------------------------------------------------------------------------------------------------------- classify
def test_diurnal_series_is_user_facing():
    label, scores = classify(periodic(48, noise=0.02, seed=9))
    assert label is WorkloadLabel.USER_FACING
    assert scores.compare8 < 0.72


def test_threshold_is_strict():
    series = periodic(48, noise=0.1, seed=10)
    _, scores = classify(series)
    label, _ = classify(series, threshold=scores.compare8)
    assert label is WorkloadLabel.NON_USER_FACING


def test_short_series_is_user_facing():
    label, scores = classify(periodic(8, days=3, noise=0.02))
    assert label is WorkloadLabel.USER_FACING
    assert scores.too_short
    assert np.isnan(scores.compare8)


def test_constant_series_is_non_user_facing():
    label, scores = classify(UtilizationSeries(np.full(SLOTS, 0.4)))
    assert label is WorkloadLabel.NON_USER_FACING
    assert scores.zero_variance


def test_exact_short_period_signal_is_non_user_facing():
    label, scores = classify(periodic(8))
    assert scores.template_perfect
    assert label is WorkloadLabel.NON_USER_FACING


def test_twelve_hour_signal_needs_compare12_to_be_caught():
    series = periodic(24, noise=0.02, seed=11)
    assert classify(series)[0] is WorkloadLabel.USER_FACING
    assert classify(series, compare12_threshold=0.72)[0] is WorkloadLabel.NON_USER_FACING


def test_classify_never_raises_for_any_length():
    for days in range(6):
        slots = days * 48 + 7
        label, _ = classify(UtilizationSeries(np.full(slots, 0.3)))
        assert isinstance(label, WorkloadLabel)


def test_scale_invariance_and_determinism():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        period = int(rng.choice([8, 12, 16, 24, 48]))
        t = np.arange(SLOTS)
        values = 0.25 + 0.1 * rng.random() * np.sin(2 * np.pi * t / period) + rng.normal(0.0, 0.03, SLOTS)
        series = UtilizationSeries(np.clip(values, 0.01, 0.5))
        factor = float(rng.uniform(0.1, 2.0))

        label, scores = classify(series)
        scaled_label, scaled_scores = classify(series.scaled(factor))
        assert scaled_label is label
        assert scaled_scores.compare8 == pytest.approx(scores.compare8, abs=1e-9)
        assert scaled_scores.compare12 == pytest.approx(scores.compare12, abs=1e-9)

        again = classify(series)[1]
        assert again == scores


def test_raising_threshold_keeps_user_facing_labels():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        values = np.clip(rng.normal(0.5, 0.1, SLOTS) + 0.2 * rng.random() * np.sin(2 * np.pi * T / 48), 0, 1)
        series = UtilizationSeries(values)
        low, high = sorted(rng.uniform(0.0, 1.5, 2))
        if classify(series, threshold=low)[0] is WorkloadLabel.USER_FACING:
            assert classify(series, threshold=high)[0] is WorkloadLabel.USER_FACING


# ------------------------------------------------------------------------------------------------------ ingestion
def _frame(values, start='2024-01-01', freq='30min'):
    return pd.DataFrame({'timestamp': pd.date_range(start, periods=len(values), freq=freq), 'utilization': values})


def test_series_from_csv(tmp_path):
    path = tmp_path / 'vm.csv'
    _frame(periodic(48, noise=0.02).values).to_csv(path, index=False)
    series = series_from_csv(path)
    assert len(series) == SLOTS


def test_series_from_csv_reports_line_numbers(tmp_path):
    frame = _frame(np.full(10, 0.5))
    frame.loc[1, 'utilization'] = 1.7
    frame['utilization'] = frame['utilization'].astype(object)
    frame.loc[4, 'utilization'] = 'abc'
    path = tmp_path / 'bad.csv'
    frame.to_csv(path, index=False)

    with pytest.raises(MalformedInput) as error:
        series_from_csv(path)
    problems = error.value.problems
    assert any(p.startswith('line 3:') for p in problems)
    assert any(p.startswith('line 6:') for p in problems)


def test_series_from_empty_csv(tmp_path):
    path = tmp_path / 'empty.csv'
    path.write_text('')
    with pytest.raises(MalformedInput):
        series_from_csv(path)


def test_series_from_frame_enforces_cadence():
    with pytest.raises(MalformedInput):
        series_from_frame(_frame(np.full(10, 0.5), freq='15min'))


def test_series_from_frame_needs_columns():
    with pytest.raises(MalformedInput):
        series_from_frame(pd.DataFrame({'time': [1], 'util': [0.5]}))


def test_weekday_slots_drops_weekends():
    frame = _frame(np.full(7 * 48, 0.5), start='2024-01-01')  # a Monday
    weekdays = weekday_slots(frame)
    assert len(weekdays) == 5 * 48
    assert (pd.to_datetime(weekdays['timestamp']).dt.dayofweek < 5).all()
