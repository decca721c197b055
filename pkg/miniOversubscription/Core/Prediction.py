"""
Prediction.py supplies what the scheduler knows about a VM when it arrives: the predicted workload type (user-facing
or not) and the predicted bucket of its 95th-percentile CPU utilization, each with a confidence score. The scheduler
then applies a conservative rule (resolve) that replaces every low-confidence prediction with the worst case: a VM
with an unreliable label is assumed user-facing, a VM with an unreliable utilization bucket is assumed to run at 100%.

Predictions come from interchangeable providers:

- OracleProvider returns the hidden ground truth with full confidence;
- NoisyOracleProvider returns the ground truth corrupted at configured rates, with confidences drawn so that the
  share of high-confidence predictions matches a trained model's operating point (99% of the criticality predictions
  and 73% of the utilization predictions are high-confidence, utilization buckets are right 84% of the time);
- HistoryFrequencyProvider looks only at the VM's subscription history: the VM is user-facing if at least half of
  the subscription's VMs were, and its bucket is the most frequent bucket of the subscription;
- CriticalityOnlyProvider takes the label from another provider and never predicts the utilization.

    >>> provider = make_provider('history')
    >>> p = provider.predict(features, truth)
    >>> resolve(p)
    EffectiveAttributes(label=<WorkloadLabel.USER_FACING: 'UserFacing'>, p95_util=0.625)

The P95 buckets are the quarters of [0, 1]: bucket 1 is [0, 25%), ..., bucket 4 is [75%, 100%]. The scheduler works
with the bucket midpoints.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.CoreExceptions.PredictionExceptions import (
    UnknownProvider,
    InvalidFeatures,
    InvalidConfusionMatrix)
from miniOversubscription.Utilities.Checks import keywords_check, fraction_check, distribution_check


logger = logging.getLogger(__name__)

BUCKETS = (1, 2, 3, 4)
BUCKET_MIDPOINTS: Dict[int, float] = {1: 0.125, 2: 0.375, 3: 0.625, 4: 0.875}
FALLBACK_P95 = 1.0
DEFAULT_MIN_CONFIDENCE = 0.6

HIGH_CONFIDENCE = (0.6, 1.0)
LOW_LABEL_CONFIDENCE = (0.5, 0.6)
LOW_BUCKET_CONFIDENCE = (0.25, 0.6)


def bucket_of(p95: float) -> int:
    """Bucket (1..4) of a P95 utilization. 1.0 belongs to bucket 4."""
    if not 0.0 <= p95 <= 1.0:
        raise ValueError(f'P95 utilization must be within [0, 1], got {p95}.')
    return min(int(p95 * 4) + 1, 4)


# ========================================================================================================= DATA TYPES
@dataclass(frozen=True)
class VmFeatures:
    subscription_id: str
    pct_uf_in_subscription: float
    pct_vms_alive_7d: float
    subscription_vm_count: int
    pct_vms_per_util_bucket: Tuple[float, float, float, float]
    avg_of_avg_util: float
    avg_of_p95_util: float
    vm_cores: int
    vm_memory_gb: float
    vm_type: str = 'general'

    def __post_init__(self):
        object.__setattr__(self, 'pct_vms_per_util_bucket', tuple(float(x) for x in self.pct_vms_per_util_bucket))

        for name in ('pct_uf_in_subscription', 'pct_vms_alive_7d', 'avg_of_avg_util', 'avg_of_p95_util'):
            if not fraction_check(getattr(self, name), name, raise_exception=False):
                raise InvalidFeatures(f'"{name}" = {getattr(self, name)} is not a fraction.', variables={'vm': self})
        if len(self.pct_vms_per_util_bucket) != 4 or \
                not distribution_check(self.pct_vms_per_util_bucket, 'pct_vms_per_util_bucket', raise_exception=False):
            raise InvalidFeatures(f'bucket fractions {self.pct_vms_per_util_bucket} do not form a distribution.',
                                  variables={'vm': self})
        if self.subscription_vm_count < 0 or self.vm_cores < 1 or self.vm_memory_gb <= 0:
            raise InvalidFeatures('counts, cores and memory must be positive.', variables={'vm': self})

    @classmethod
    def without_history(cls, subscription_id: str, vm_cores: int, vm_memory_gb: float) -> VmFeatures:
        """Features of the first VM of a subscription: nothing is known, every bucket is equally likely."""
        return cls(subscription_id=subscription_id, pct_uf_in_subscription=0.5, pct_vms_alive_7d=0.0,
                   subscription_vm_count=0, pct_vms_per_util_bucket=(0.25, 0.25, 0.25, 0.25), avg_of_avg_util=0.0,
                   avg_of_p95_util=0.0, vm_cores=vm_cores, vm_memory_gb=vm_memory_gb)


@dataclass(frozen=True)
class GroundTruth:
    label: WorkloadLabel
    p95_bucket: int

    @classmethod
    def of(cls, label: WorkloadLabel, p95: float) -> GroundTruth:
        return cls(label, bucket_of(p95))


@dataclass(frozen=True)
class Prediction:
    label: Optional[WorkloadLabel]
    p95_bucket: Optional[int]
    confidence_label: float
    confidence_bucket: float

    def __post_init__(self):
        for name in ('confidence_label', 'confidence_bucket'):
            fraction_check(getattr(self, name), name, section='prediction')
        if self.p95_bucket is not None and self.p95_bucket not in BUCKETS:
            raise InvalidFeatures(f'predicted bucket {self.p95_bucket} is not one of {BUCKETS}.',
                                  variables={'prediction': self})


@dataclass(frozen=True)
class EffectiveAttributes:
    label: WorkloadLabel
    p95_util: float

    def __post_init__(self):
        if self.p95_util not in BUCKET_MIDPOINTS.values() and self.p95_util != FALLBACK_P95:
            raise InvalidFeatures(f'effective P95 {self.p95_util} is neither a bucket midpoint nor {FALLBACK_P95}.',
                                  variables={'attributes': self})

    @property
    def is_user_facing(self) -> bool:
        return self.label.is_user_facing

    @classmethod
    def conservative(cls) -> EffectiveAttributes:
        return cls(WorkloadLabel.USER_FACING, FALLBACK_P95)


# ========================================================================================================== PROVIDERS
class PredictionProvider(ABC):
    name: str = 'abstract'

    @abstractmethod
    def predict(self, features: VmFeatures, truth: GroundTruth) -> Prediction:
        ...


class OracleProvider(PredictionProvider):
    name = 'oracle'

    def predict(self, features: VmFeatures, truth: GroundTruth) -> Prediction:
        return Prediction(truth.label, truth.p95_bucket, 1.0, 1.0)


class NoisyOracleProvider(PredictionProvider):
    """
    The ground truth, corrupted. The label is flipped with probability uf_error for user-facing VMs and nuf_error for
    the others; the bucket is right with probability bucket_accuracy and otherwise uniformly one of the other three,
    unless a confusion matrix is given (row i: distribution of the predicted bucket for true bucket i + 1).
    Confidences are high (uniform in [0.6, 1]) with the configured shares, otherwise low.

    The random stream belongs to the instance; one instance serves one simulation.
    """

    name = 'noisy'

    def __init__(self,
                 uf_error: float = 0.01,
                 nuf_error: float = 0.31,
                 label_high_confidence: float = 0.99,
                 bucket_high_confidence: float = 0.73,
                 bucket_accuracy: float = 0.84,
                 confusion_matrix: Optional[Sequence[Sequence[float]]] = None,
                 seed: Optional[int] = None
                 ) -> None:

        for name, value in (('uf_error', uf_error), ('nuf_error', nuf_error),
                            ('label_high_confidence', label_high_confidence),
                            ('bucket_high_confidence', bucket_high_confidence), ('bucket_accuracy', bucket_accuracy)):
            fraction_check(value, name, section='prediction')

        self.uf_error = uf_error
        self.nuf_error = nuf_error
        self.label_high_confidence = label_high_confidence
        self.bucket_high_confidence = bucket_high_confidence
        self.bucket_accuracy = bucket_accuracy
        self.confusion_matrix = self._confusion(confusion_matrix, bucket_accuracy)
        self._rng = np.random.default_rng(seed)

    @staticmethod
    def _confusion(matrix: Optional[Sequence[Sequence[float]]], accuracy: float) -> np.ndarray:
        if matrix is None:
            off = (1.0 - accuracy) / 3
            return np.full((4, 4), off) + np.eye(4) * (accuracy - off)

        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise InvalidConfusionMatrix(f'expected shape (4, 4), got {m.shape}.', variables={'matrix': matrix})
        for i, row in enumerate(m):
            if not distribution_check(row, f'confusion_matrix[{i}]', raise_exception=False):
                raise InvalidConfusionMatrix(f'row {i} = {row.tolist()} is not a distribution.',
                                             variables={'matrix': matrix})
        return m

    def _confidence(self, high_share: float, low_range: Tuple[float, float]) -> float:
        low, high = HIGH_CONFIDENCE if self._rng.random() < high_share else low_range
        return float(self._rng.uniform(low, high))

    def predict(self, features: VmFeatures, truth: GroundTruth) -> Prediction:
        error = self.uf_error if truth.label.is_user_facing else self.nuf_error
        label = truth.label
        if self._rng.random() < error:
            label = WorkloadLabel.NON_USER_FACING if label.is_user_facing else WorkloadLabel.USER_FACING

        bucket = int(self._rng.choice(BUCKETS, p=self.confusion_matrix[truth.p95_bucket - 1]))

        return Prediction(label, bucket,
                          self._confidence(self.label_high_confidence, LOW_LABEL_CONFIDENCE),
                          self._confidence(self.bucket_high_confidence, LOW_BUCKET_CONFIDENCE))


class HistoryFrequencyProvider(PredictionProvider):
    """Predicts from the subscription's history only. Ties between buckets go to the higher bucket."""

    name = 'history'

    def predict(self, features: VmFeatures, truth: GroundTruth) -> Prediction:
        pct_uf = features.pct_uf_in_subscription
        if pct_uf >= 0.5:
            label, confidence_label = WorkloadLabel.USER_FACING, pct_uf
        else:
            label, confidence_label = WorkloadLabel.NON_USER_FACING, 1.0 - pct_uf

        fractions = np.asarray(features.pct_vms_per_util_bucket)
        winner = int(np.flatnonzero(fractions == fractions.max())[-1])

        return Prediction(label, BUCKETS[winner], float(confidence_label), float(fractions[winner]))


class CriticalityOnlyProvider(PredictionProvider):
    """Criticality predictions without utilization predictions: the bucket is always absent."""

    name = 'criticality-only'

    def __init__(self, inner: Optional[PredictionProvider] = None, **noisy_parameters) -> None:
        self.inner = inner if inner is not None else NoisyOracleProvider(**noisy_parameters)

    def predict(self, features: VmFeatures, truth: GroundTruth) -> Prediction:
        p = self.inner.predict(features, truth)
        return Prediction(p.label, None, p.confidence_label, 0.0)


PROVIDERS = {
    OracleProvider.name: OracleProvider,
    NoisyOracleProvider.name: NoisyOracleProvider,
    HistoryFrequencyProvider.name: HistoryFrequencyProvider,
    CriticalityOnlyProvider.name: CriticalityOnlyProvider,
}

_PROVIDER_PARAMETERS = {
    'oracle': (),
    'history': (),
    'noisy': ('uf_error', 'nuf_error', 'label_high_confidence', 'bucket_high_confidence', 'bucket_accuracy',
              'confusion_matrix', 'seed'),
    'criticality-only': ('uf_error', 'nuf_error', 'label_high_confidence', 'bucket_high_confidence',
                         'bucket_accuracy', 'confusion_matrix', 'seed'),
}


def make_provider(name: str, **parameters) -> PredictionProvider:
    """
    :raises UnknownProvider: for a name that is not in PROVIDERS.
    :raises UnknownConfigKeys: for parameters the provider does not take.
    """

    if name not in PROVIDERS:
        raise UnknownProvider(name, sorted(PROVIDERS), variables=locals())
    keywords_check(parameters, _PROVIDER_PARAMETERS[name], section=f'prediction ({name})', variables=locals())

    logger.debug('prediction provider %s with %s', name, parameters)
    return PROVIDERS[name](**parameters)


# ========================================================================================================= OPERATIONS
def predict(provider: PredictionProvider, features: VmFeatures, truth: GroundTruth) -> Prediction:
    return provider.predict(features, truth)


def resolve(p: Prediction, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> EffectiveAttributes:
    """
    The conservative rule. Total: a missing or low-confidence label becomes UserFacing, a missing or low-confidence
    bucket becomes a P95 of 100%.
    """

    if p.label is None or p.confidence_label < min_confidence:
        label = WorkloadLabel.USER_FACING
    else:
        label = p.label

    if p.p95_bucket is None or p.confidence_bucket < min_confidence:
        p95 = FALLBACK_P95
    else:
        p95 = BUCKET_MIDPOINTS[p.p95_bucket]

    return EffectiveAttributes(label, p95)
