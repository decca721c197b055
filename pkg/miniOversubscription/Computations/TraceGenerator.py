"""
TraceGenerator.py produces the stream of VM arrivals that drives a simulation. The defaults reproduce the simulation
parameters of the production cluster the placement policy was tuned for:

    VM size (cores)          1 (33%), 2 (27%), 4 (21%), 8 (10%), 16 (5%), 24 (3%), >=32 (1%)
    deployment size (VMs)    1 (39%), 2 (14%), 3-5 (16%), 6-10 (9%), 11-15 (8%), 16-25 (5%), >25 (9%)
    VM lifetime (hours)      1 (52%), 2 (5%), 3-5 (10%), 6-10 (9%), 11-25 (7%), 26-720 (8%), >720 (9%)
    UF:NUF core ratio        4:6
    average P95 utilization  65% for UF VMs (bucket 3), 44% for NUF VMs (bucket 2)

Open-ended bins are closed by assumption: ">=32" cores is 32 cores, ">25" VMs is 26-50 VMs and ">720" hours is
721-2160 hours (up to 90 days). A range bin is sampled uniformly over its integers. VM sizes and lifetimes are drawn per
VM; a deployment only shares its arrival time, subscription, workload type and flags.

Deployments belong to subscriptions. A subscription is user-facing with probability uf_subscription_share and its
deployments are then user-facing with probability uf_in_uf_subscription (uf_in_nuf_subscription otherwise), which
keeps the fleet at 40% user-facing deployments while giving the history-based predictors something to learn from.
Every VM carries the features of its subscription's history at its arrival time.

Deployments arrive as a Poisson process. When no rate is given, the rate is calibrated by Little's law so that the
expected allocated cores at the end of the horizon reach target_occupancy of the cluster's capacity.

    >>> trace = generate_trace(TraceSpec(seed=7, capacity_cores=456))
    >>> trace.to_frame().head()
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import VmFeatures, GroundTruth, EffectiveAttributes, BUCKETS, bucket_of
from miniOversubscription.Core.Cluster import Topology, VmDescriptor
from miniOversubscription.Computations.Signals import SignalConfig, UF_MEAN_FACTOR, P95_Z
from miniOversubscription.Computations.ComputationExceptions.SimulationExceptions import (
    InvalidDistribution,
    InvalidTrace)
from miniOversubscription.Utilities.Checks import distribution_check, fraction_check, positive_check
from miniOversubscription.Utilities.File import File
from miniOversubscription.Utilities.UtilityExceptions import MalformedInput
from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


logger = logging.getLogger(__name__)

HOURS_ALIVE_7D = 168.0
# mean of a non-user-facing signal sits this far below its P95
NUF_P95_OFFSET = P95_Z * SignalConfig().nuf_noise


# ==================================================================================================== DISTRIBUTIONS
@dataclass(frozen=True)
class Bin:
    low: int
    high: int
    mass: float

    @property
    def mean(self) -> float:
        return (self.low + self.high) / 2.0

    def mean_capped(self, cap: float) -> float:
        """E[min(X, cap)] for X uniform over the integers of the bin."""
        values = np.arange(self.low, self.high + 1, dtype=float)
        return float(np.minimum(values, cap).mean())


@dataclass(frozen=True)
class Distribution:
    name: str
    bins: Tuple[Bin, ...]

    def __post_init__(self):
        object.__setattr__(self, 'bins', tuple(self.bins))
        if not distribution_check([b.mass for b in self.bins], self.name, raise_exception=False):
            raise InvalidDistribution(self.name, f'masses {[b.mass for b in self.bins]} do not sum to 1.',
                                      variables={'bins': self.bins})
        for b in self.bins:
            if b.low < 0 or b.high < b.low:
                raise InvalidDistribution(self.name, f'bin [{b.low}, {b.high}] is empty or negative.',
                                          variables={'bins': self.bins})

    @classmethod
    def from_pairs(cls, name: str, pairs: Sequence[Sequence]) -> Distribution:
        """From [[value, mass], [[low, high], mass], ...], the configuration file form."""
        bins = list()
        for pair in pairs:
            if len(pair) != 2:
                raise InvalidDistribution(name, f'{pair} is not a [value, mass] pair.', variables={'pairs': pairs})
            value, mass = pair
            low, high = (value, value) if isinstance(value, (int, float)) else tuple(value)
            bins.append(Bin(int(low), int(high), float(mass)))
        return cls(name, tuple(bins))

    def to_pairs(self) -> List[list]:
        return [[b.low if b.low == b.high else [b.low, b.high], b.mass] for b in self.bins]

    @property
    def masses(self) -> np.ndarray:
        return np.array([b.mass for b in self.bins])

    def mean(self) -> float:
        return float(sum(b.mass * b.mean for b in self.bins))

    def mean_capped(self, cap: float) -> float:
        return float(sum(b.mass * b.mean_capped(cap) for b in self.bins))

    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> Union[int, np.ndarray]:
        index = rng.choice(len(self.bins), size=size, p=self.masses)
        low = np.array([b.low for b in self.bins])[index]
        high = np.array([b.high for b in self.bins])[index]
        values = rng.integers(low, high + 1)
        return int(values) if size is None else values


def _table(name: str, rows: Sequence[Tuple[Union[int, Tuple[int, int]], float]]) -> Distribution:
    return Distribution.from_pairs(name, [[value, mass] for value, mass in rows])


FLEET_VM_SIZES = _table('vm_size', [(1, .33), (2, .27), (4, .21), (8, .10), (16, .05), (24, .03), (32, .01)])
FLEET_DEPLOYMENT_SIZES = _table('deployment_size', [(1, .39), (2, .14), ((3, 5), .16), ((6, 10), .09),
                                                     ((11, 15), .08), ((16, 25), .05), ((26, 50), .09)])
FLEET_LIFETIMES = _table('lifetime_hours', [(1, .52), (2, .05), ((3, 5), .10), ((6, 10), .09), ((11, 25), .07),
                                             ((26, 720), .08), ((721, 2160), .09)])
FLEET_UF_BUCKETS = (0.05, 0.15, 0.45, 0.35)
FLEET_NUF_BUCKETS = (0.26, 0.37, 0.22, 0.15)


# ============================================================================================================= SPEC
@dataclass(frozen=True)
class TraceSpec:
    vm_size: Distribution = FLEET_VM_SIZES
    deployment_size: Distribution = FLEET_DEPLOYMENT_SIZES
    lifetime_hours: Distribution = FLEET_LIFETIMES
    uf_buckets: Tuple[float, float, float, float] = FLEET_UF_BUCKETS
    nuf_buckets: Tuple[float, float, float, float] = FLEET_NUF_BUCKETS
    uf_subscription_share: float = 0.4
    uf_in_uf_subscription: float = 0.9
    uf_in_nuf_subscription: float = 0.0667
    subscriptions: int = 500
    internal_share: float = 0.5
    production_share: float = 0.8
    memory_gb_per_core: float = 4.0
    horizon_days: float = 30.0
    arrival_rate_per_hour: Optional[float] = None
    target_occupancy: float = 0.75
    capacity_cores: int = Topology().n_servers * Topology().allocatable_cores
    seed: int = 0

    def __post_init__(self):
        for name in ('uf_buckets', 'nuf_buckets'):
            masses = tuple(getattr(self, name))
            object.__setattr__(self, name, masses)
            if len(masses) != len(BUCKETS) or not distribution_check(masses, name, raise_exception=False):
                raise InvalidDistribution(name, f'{masses} is not a distribution over {len(BUCKETS)} buckets.',
                                          variables={'masses': masses})
        for name in ('uf_subscription_share', 'uf_in_uf_subscription', 'uf_in_nuf_subscription', 'internal_share',
                     'production_share', 'target_occupancy'):
            fraction_check(getattr(self, name), name, section='trace')
        for name in ('subscriptions', 'memory_gb_per_core', 'horizon_days', 'capacity_cores'):
            positive_check(getattr(self, name), name, section='trace')
        if self.arrival_rate_per_hour is not None:
            positive_check(self.arrival_rate_per_hour, 'arrival_rate_per_hour', section='trace')

    @property
    def horizon_s(self) -> float:
        return self.horizon_days * 86_400.0

    @property
    def uf_deployment_share(self) -> float:
        s = self.uf_subscription_share
        return s * self.uf_in_uf_subscription + (1 - s) * self.uf_in_nuf_subscription


def calibrate_arrival_rate(spec: TraceSpec, capacity_cores: int, target_occupancy: float,
                           horizon_hours: float) -> float:
    """
    Deployments per hour such that, starting from an empty cluster, the expected allocated cores at horizon_hours
    equal target_occupancy * capacity_cores: occupancy(T) = rate * E[VMs] * E[cores] * E[min(lifetime, T)].
    """

    per_deployment = spec.deployment_size.mean() * spec.vm_size.mean() * spec.lifetime_hours.mean_capped(horizon_hours)
    return target_occupancy * capacity_cores / per_deployment


# ============================================================================================================ TRACE
@dataclass(frozen=True)
class VmRequest:
    vm_id: int
    deployment_id: int
    arrival_s: float
    cores: int
    memory_gb: float
    lifetime_hours: float
    subscription_id: str
    true_label: WorkloadLabel
    true_p95: float
    production: bool
    internal: bool
    seed: int
    features: VmFeatures

    @property
    def truth(self) -> GroundTruth:
        return GroundTruth.of(self.true_label, self.true_p95)

    def descriptor(self, effective: EffectiveAttributes) -> VmDescriptor:
        return VmDescriptor(id=self.vm_id, cores=self.cores, memory_gb=self.memory_gb,
                            lifetime_hours=self.lifetime_hours, subscription_id=self.subscription_id,
                            true_label=self.true_label, true_p95=self.true_p95, effective=effective,
                            deployment_id=self.deployment_id, production=self.production, internal=self.internal,
                            arrival_s=self.arrival_s, seed=self.seed)


_FEATURE_COLUMNS = ('pct_uf_in_subscription', 'pct_vms_alive_7d', 'subscription_vm_count', 'avg_of_avg_util',
                    'avg_of_p95_util')
_BUCKET_COLUMNS = tuple(f'pct_bucket_{b}' for b in BUCKETS)
TRACE_COLUMNS = ('vm_id', 'deployment_id', 'arrival_s', 'cores', 'memory_gb', 'lifetime_hours', 'subscription_id',
                 'true_label', 'true_p95', 'production', 'internal', 'seed') + _FEATURE_COLUMNS + _BUCKET_COLUMNS


class Trace:
    """VM arrivals ordered by (arrival time, VM id). VMs of one deployment are consecutive."""

    def __init__(self, requests: Sequence[VmRequest], spec: Optional[TraceSpec] = None) -> None:
        self.requests: Tuple[VmRequest, ...] = tuple(sorted(requests, key=lambda r: (r.arrival_s, r.vm_id)))
        self.spec = spec
        if len({r.vm_id for r in self.requests}) != len(self.requests):
            raise InvalidTrace('VM ids are not unique.', variables={'vms': len(self.requests)})

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self) -> Iterator[VmRequest]:
        return iter(self.requests)

    def deployments(self) -> Iterator[List[VmRequest]]:
        group: List[VmRequest] = list()
        for request in self.requests:
            if group and request.deployment_id != group[0].deployment_id:
                yield group
                group = list()
            group.append(request)
        if group:
            yield group

    # ======================================================================================================== FILES
    def to_frame(self) -> pd.DataFrame:
        rows = list()
        for r in self.requests:
            f = r.features
            row = {'vm_id': r.vm_id, 'deployment_id': r.deployment_id, 'arrival_s': r.arrival_s, 'cores': r.cores,
                   'memory_gb': r.memory_gb, 'lifetime_hours': r.lifetime_hours, 'subscription_id': r.subscription_id,
                   'true_label': r.true_label.value, 'true_p95': r.true_p95, 'production': r.production,
                   'internal': r.internal, 'seed': r.seed}
            row.update({c: getattr(f, c) for c in _FEATURE_COLUMNS})
            row.update(dict(zip(_BUCKET_COLUMNS, f.pct_vms_per_util_bucket)))
            rows.append(row)
        return pd.DataFrame(rows, columns=list(TRACE_COLUMNS))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, source: str = '<frame>') -> Trace:
        """:raises MalformedInput: with one line-numbered problem per bad row (data starts on line 2)."""

        missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
        if missing:
            raise MalformedInput(source, [f'line 1: missing column(s) {", ".join(missing)}'],
                                 variables={'columns': list(frame.columns)})

        requests, problems = list(), list()
        for line, row in enumerate(frame.itertuples(index=False), start=2):
            try:
                features = VmFeatures(subscription_id=str(row.subscription_id),
                                      pct_uf_in_subscription=float(row.pct_uf_in_subscription),
                                      pct_vms_alive_7d=float(row.pct_vms_alive_7d),
                                      subscription_vm_count=int(row.subscription_vm_count),
                                      pct_vms_per_util_bucket=tuple(float(getattr(row, c)) for c in _BUCKET_COLUMNS),
                                      avg_of_avg_util=float(row.avg_of_avg_util),
                                      avg_of_p95_util=float(row.avg_of_p95_util), vm_cores=int(row.cores),
                                      vm_memory_gb=float(row.memory_gb))
                requests.append(VmRequest(vm_id=int(row.vm_id), deployment_id=int(row.deployment_id),
                                          arrival_s=float(row.arrival_s), cores=int(row.cores),
                                          memory_gb=float(row.memory_gb), lifetime_hours=float(row.lifetime_hours),
                                          subscription_id=str(row.subscription_id),
                                          true_label=WorkloadLabel(row.true_label), true_p95=float(row.true_p95),
                                          production=bool(row.production), internal=bool(row.internal),
                                          seed=int(row.seed), features=features))
            except MiniOversubscriptionException as e:
                problems.append(f'line {line}: {e._message.strip()}')
            except (ValueError, TypeError, ArithmeticError) as e:
                problems.append(f'line {line}: {e}'.splitlines()[0])

        if problems:
            raise MalformedInput(source, problems, variables={'rows': len(frame)})
        return cls(requests)

    def write_csv(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_frame(self.to_frame())

    @classmethod
    def read_csv(cls, path: str) -> Trace:
        source = File()
        source.bind_input(path)
        try:
            frame = source.read_frame(float_precision='round_trip')
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise MalformedInput(path, [f'line 1: {e}'], variables={'path': path})
        return cls.from_frame(frame, path)


# ======================================================================================================= GENERATOR
@dataclass
class _SubscriptionHistory:
    user_facing: bool
    internal: bool
    vms: int = 0
    uf_vms: int = 0
    alive_7d: int = 0
    buckets: List[int] = field(default_factory=lambda: [0] * len(BUCKETS))
    sum_avg_util: float = 0.0
    sum_p95: float = 0.0

    def features(self, subscription_id: str, cores: int, memory_gb: float) -> VmFeatures:
        if self.vms == 0:
            return VmFeatures.without_history(subscription_id, cores, memory_gb)
        n = self.vms
        return VmFeatures(subscription_id=subscription_id, pct_uf_in_subscription=self.uf_vms / n,
                          pct_vms_alive_7d=self.alive_7d / n, subscription_vm_count=n,
                          pct_vms_per_util_bucket=tuple(b / n for b in self.buckets),
                          avg_of_avg_util=min(self.sum_avg_util / n, 1.0), avg_of_p95_util=min(self.sum_p95 / n, 1.0),
                          vm_cores=cores, vm_memory_gb=memory_gb)

    def record(self, label: WorkloadLabel, p95: float, lifetime_hours: float) -> None:
        self.vms += 1
        self.uf_vms += label.is_user_facing
        self.alive_7d += lifetime_hours >= HOURS_ALIVE_7D
        self.buckets[bucket_of(p95) - 1] += 1
        self.sum_avg_util += UF_MEAN_FACTOR * p95 if label.is_user_facing else max(p95 - NUF_P95_OFFSET, 0.0)
        self.sum_p95 += p95


def _true_p95(rng: np.random.Generator, masses: Sequence[float]) -> float:
    bucket = int(rng.choice(len(BUCKETS), p=masses))
    return float(np.clip(rng.uniform(bucket * 0.25, (bucket + 1) * 0.25), 0.0, 1.0))


def generate_trace(spec: TraceSpec) -> Trace:
    """
    Seeded and reproducible: the same spec always gives the same trace.

    :raises InvalidDistribution: on construction of an invalid TraceSpec.
    """

    rng = np.random.default_rng(spec.seed)
    horizon_h = spec.horizon_days * 24.0
    rate = spec.arrival_rate_per_hour
    if rate is None:
        rate = calibrate_arrival_rate(spec, spec.capacity_cores, spec.target_occupancy, horizon_h)
    logger.info('trace: %.2f deployments/hour over %.1f days (seed %d)', rate, spec.horizon_days, spec.seed)

    subscriptions = [_SubscriptionHistory(user_facing=bool(rng.random() < spec.uf_subscription_share),
                                          internal=bool(rng.random() < spec.internal_share))
                     for _ in range(spec.subscriptions)]

    requests: List[VmRequest] = list()
    t_h = rng.exponential(1.0 / rate)
    deployment_id = 0
    while t_h < horizon_h:
        index = int(rng.integers(spec.subscriptions))
        subscription = subscriptions[index]
        subscription_id = f'sub-{index:04d}'
        uf_share = spec.uf_in_uf_subscription if subscription.user_facing else spec.uf_in_nuf_subscription
        label = WorkloadLabel.USER_FACING if rng.random() < uf_share else WorkloadLabel.NON_USER_FACING
        production = bool(rng.random() < spec.production_share)
        masses = spec.uf_buckets if label.is_user_facing else spec.nuf_buckets

        n = spec.deployment_size.sample(rng)
        cores = spec.vm_size.sample(rng, n)
        lifetimes = spec.lifetime_hours.sample(rng, n)
        # a deployment's VMs see the subscription as it was when the deployment arrived
        features = [subscription.features(subscription_id, int(c), float(c) * spec.memory_gb_per_core) for c in cores]

        for k in range(n):
            p95 = _true_p95(rng, masses)
            requests.append(VmRequest(vm_id=len(requests), deployment_id=deployment_id, arrival_s=t_h * 3600.0,
                                      cores=int(cores[k]), memory_gb=float(cores[k]) * spec.memory_gb_per_core,
                                      lifetime_hours=float(lifetimes[k]), subscription_id=subscription_id,
                                      true_label=label, true_p95=p95, production=production,
                                      internal=subscription.internal, seed=int(rng.integers(2 ** 62)),
                                      features=features[k]))
            subscription.record(label, p95, float(lifetimes[k]))

        deployment_id += 1
        t_h += rng.exponential(1.0 / rate)

    logger.info('trace: %d VMs in %d deployments', len(requests), deployment_id)
    return Trace(requests, spec)


def with_capacity(spec: TraceSpec, topology: Topology) -> TraceSpec:
    return replace(spec, capacity_cores=topology.n_servers * topology.allocatable_cores)
