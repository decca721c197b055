import math

import numpy as np
import pytest

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import (
    VmFeatures,
    GroundTruth,
    Prediction,
    EffectiveAttributes,
    OracleProvider,
    NoisyOracleProvider,
    HistoryFrequencyProvider,
    CriticalityOnlyProvider,
    BUCKET_MIDPOINTS,
    bucket_of,
    make_provider,
    predict,
    resolve,
)
from miniOversubscription.Core.CoreExceptions.PredictionExceptions import (
    UnknownProvider,
    InvalidFeatures,
    InvalidConfusionMatrix,
)
from miniOversubscription.Utilities.UtilityExceptions import UnknownConfigKeys


UF = WorkloadLabel.USER_FACING
NUF = WorkloadLabel.NON_USER_FACING


def features(pct_uf=0.8, buckets=(0.1, 0.2, 0.6, 0.1)):
    return VmFeatures(subscription_id='sub-1', pct_uf_in_subscription=pct_uf, pct_vms_alive_7d=0.5,
                      subscription_vm_count=10, pct_vms_per_util_bucket=buckets, avg_of_avg_util=0.3,
                      avg_of_p95_util=0.6, vm_cores=2, vm_memory_gb=8.0)


@pytest.mark.parametrize('p95, bucket', [(0.0, 1), (0.2499, 1), (0.25, 2), (0.6, 3), (0.75, 4), (1.0, 4)])
def test_bucket_of(p95, bucket):
    assert bucket_of(p95) == bucket


def test_features_validation():
    with pytest.raises(InvalidFeatures):
        features(buckets=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(InvalidFeatures):
        features(pct_uf=1.5)


def test_features_without_history():
    f = VmFeatures.without_history('sub-9', 4, 16.0)
    assert sum(f.pct_vms_per_util_bucket) == pytest.approx(1.0)


# --------------------------------------------------------------------------------------------------------- providers
def test_oracle_returns_the_truth():
    p = predict(OracleProvider(), features(), GroundTruth(UF, 3))
    assert p == Prediction(UF, 3, 1.0, 1.0)


def test_oracle_composed_with_resolve_is_identity():
    oracle = OracleProvider()
    for label in (UF, NUF):
        for bucket in BUCKET_MIDPOINTS:
            effective = resolve(oracle.predict(features(), GroundTruth(label, bucket)))
            assert effective == EffectiveAttributes(label, BUCKET_MIDPOINTS[bucket])


def test_history_frequency():
    p = HistoryFrequencyProvider().predict(features(), GroundTruth(NUF, 1))
    assert p.label is UF
    assert p.p95_bucket == 3
    assert p.confidence_label == pytest.approx(0.8)
    assert p.confidence_bucket == pytest.approx(0.6)


def test_history_frequency_non_user_facing_and_ties():
    p = HistoryFrequencyProvider().predict(features(pct_uf=0.3, buckets=(0.4, 0.4, 0.1, 0.1)), GroundTruth(UF, 1))
    assert p.label is NUF
    assert p.confidence_label == pytest.approx(0.7)
    assert p.p95_bucket == 2


def test_noisy_oracle_user_facing_recall():
    provider = NoisyOracleProvider(seed=1)
    labeled_uf = sum(provider.predict(features(), GroundTruth(UF, 3)).label is UF for _ in range(10_000))
    assert abs(labeled_uf - 9_900) <= 60


@pytest.mark.parametrize('label, rate', [(UF, 0.01), (NUF, 0.31)])
def test_noisy_oracle_flip_rate_converges(label, rate):
    n = 100_000
    provider = NoisyOracleProvider(seed=2)
    flips = sum(provider.predict(features(), GroundTruth(label, 2)).label is not label for _ in range(n))
    sigma = math.sqrt(rate * (1 - rate) / n)
    assert abs(flips / n - rate) <= 3 * sigma


def test_noisy_oracle_operating_point():
    n = 20_000
    provider = NoisyOracleProvider(seed=3)
    predictions = [provider.predict(features(), GroundTruth(NUF, 2)) for _ in range(n)]

    label_high = np.mean([p.confidence_label >= 0.6 for p in predictions])
    bucket_high = np.mean([p.confidence_bucket >= 0.6 for p in predictions])
    accuracy = np.mean([p.p95_bucket == 2 for p in predictions])

    assert label_high == pytest.approx(0.99, abs=0.005)
    assert bucket_high == pytest.approx(0.73, abs=0.02)
    assert accuracy == pytest.approx(0.84, abs=0.02)


def test_noisy_oracle_is_reproducible():
    a = NoisyOracleProvider(seed=4)
    b = NoisyOracleProvider(seed=4)
    for _ in range(100):
        assert a.predict(features(), GroundTruth(UF, 4)) == b.predict(features(), GroundTruth(UF, 4))


def test_noisy_oracle_confusion_matrix():
    always_next = [[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 1]]
    provider = NoisyOracleProvider(confusion_matrix=always_next, seed=5)
    assert provider.predict(features(), GroundTruth(UF, 1)).p95_bucket == 2
    assert provider.predict(features(), GroundTruth(UF, 4)).p95_bucket == 4


@pytest.mark.parametrize('matrix', [[[1, 0], [0, 1]], [[0.5, 0.4, 0, 0]] * 4])
def test_invalid_confusion_matrix(matrix):
    with pytest.raises(InvalidConfusionMatrix):
        NoisyOracleProvider(confusion_matrix=matrix)


def test_criticality_only_has_no_bucket():
    p = CriticalityOnlyProvider(OracleProvider()).predict(features(), GroundTruth(NUF, 1))
    assert p.label is NUF
    assert p.p95_bucket is None
    assert resolve(p) == EffectiveAttributes(NUF, 1.0)


def test_make_provider():
    assert isinstance(make_provider('oracle'), OracleProvider)
    assert isinstance(make_provider('noisy', seed=3, uf_error=0.02), NoisyOracleProvider)
    assert isinstance(make_provider('criticality-only', seed=1), CriticalityOnlyProvider)


def test_make_provider_rejects_unknown_names_and_parameters():
    with pytest.raises(UnknownProvider):
        make_provider('random-forest')
    with pytest.raises(UnknownConfigKeys):
        make_provider('oracle', seed=1)


# ----------------------------------------------------------------------------------------------------------- resolve
def test_low_label_confidence_falls_back_to_user_facing():
    assert resolve(Prediction(NUF, 1, 0.4, 0.9)) == EffectiveAttributes(UF, 0.125)


def test_confident_prediction_is_kept():
    assert resolve(Prediction(UF, 4, 0.9, 0.9)) == EffectiveAttributes(UF, 0.875)


def test_low_bucket_confidence_falls_back_to_full_utilization():
    assert resolve(Prediction(UF, 2, 0.9, 0.3)) == EffectiveAttributes(UF, 1.0)


def test_missing_label():
    assert resolve(Prediction(None, None, 0.0, 0.0)) == EffectiveAttributes.conservative()


def test_resolve_is_total():
    rng = np.random.default_rng(6)
    for _ in range(1000):
        label = [UF, NUF, None][int(rng.integers(3))]
        bucket = [1, 2, 3, 4, None][int(rng.integers(5))]
        p = Prediction(label, bucket, float(rng.random()), float(rng.random()))
        effective = resolve(p, min_confidence=float(rng.random()))
        assert effective.label in (UF, NUF)
        assert effective.p95_util in (0.125, 0.375, 0.625, 0.875, 1.0)


def test_effective_attributes_validation():
    with pytest.raises(InvalidFeatures):
        EffectiveAttributes(UF, 0.5)
