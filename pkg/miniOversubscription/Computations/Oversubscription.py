"""
Oversubscription.py computes how low a chassis power budget can go, given the power the chassis drew in the past and
how much power capping could shave off when the budget is exceeded. The search takes five steps:

1) estimate from an allocation log the share of user-facing cores among the allocated ones (beta) and the average P95
   utilization of user-facing and non-user-facing cores (estimate_history);
2) profile the hardware: the power of a server over its p-states at each of the two utilizations (profile_hardware);
3) sort the historical chassis draws, one reading per chassis per unit of time (HistoricalDraws);
4) walk candidate budgets from the highest draw down, just below every distinct draw, and keep the lowest candidate
   whose capping events stay within the policy's event-rate maxima and can all be shaved (find_min_budget);
5) add a buffer to that minimum and clamp it to the provisioned budget (final_budget).

An event is a reading above the candidate; its deficit is the reading minus the candidate. It is shaved by throttling
the non-user-facing cores down to fmin_nuf first and, only if that is not enough, the user-facing cores down to fmin_uf:

    deficit <= nuf_w             NUF_ONLY
    deficit <= nuf_w + uf_w      NUF_AND_UF (the event impacts user-facing VMs)
    otherwise                    INFEASIBLE

Every feasible event throttles non-user-facing VMs; a NUF_AND_UF event throttles user-facing VMs as well. A candidate is
accepted when no event is infeasible, the rate of events impacting user-facing VMs is at most emax_uf and the rate of
events impacting non-user-facing VMs is at most emax_nuf. Full-server capping cannot tell VMs apart: all cores are
throttled together, every event impacts both classes and the two maxima form a single allowance.

    >>> draws = HistoricalDraws.read_csv('draws.csv')
    >>> result = find_min_budget(draws, OversubPolicy.preset('minimal_uf_impact'), HistoryEstimates(0.4, 0.65, 0.44))
    >>> result.final_budget_w, result.delta
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Cluster import Topology
from miniOversubscription.Core.PowerModel import ServerPowerSpec, FreqPowerCurve, freq_power_curve
from miniOversubscription.Computations.ComputationExceptions.OversubscriptionExceptions import (
    EmptyLog,
    InvalidDraws,
    InvalidPolicy,
    NoFeasibleBudget)
from miniOversubscription.Database import bundled
from miniOversubscription.Utilities.File import File
from miniOversubscription.Utilities.UtilityExceptions import MalformedInput


logger = logging.getLogger(__name__)

DELTA_W = 10.0
DEFAULT_BUFFER = 0.10
RATE_TOLERANCE = 1e-12
DRAW_COLUMNS = ('chassis_id', 'timestamp', 'watts')
WORKED_EXAMPLE_FILE = 'worked_example_draws.csv'


# =========================================================================================================== POLICY
@dataclass(frozen=True)
class OversubPolicy:
    emax_uf: float
    emax_nuf: float
    fmin_uf: float = 1.0
    fmin_nuf: float = 0.5
    buffer: float = DEFAULT_BUFFER
    full_server: bool = False
    traditional: bool = False
    name: str = 'custom'

    def __post_init__(self):
        for key in ('emax_uf', 'emax_nuf', 'buffer'):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise InvalidPolicy(f'{key} must be within [0, 1], got {value}.', variables={'policy': self})
        for key in ('fmin_uf', 'fmin_nuf'):
            value = getattr(self, key)
            if not 0.5 <= value <= 1.0:
                raise InvalidPolicy(f'{key} must be within [0.5, 1.0], got {value}.', variables={'policy': self})

    @property
    def uf_allowance(self) -> float:
        return self.emax_uf + self.emax_nuf if self.full_server else self.emax_uf

    @property
    def nuf_allowance(self) -> float:
        return self.emax_uf + self.emax_nuf if self.full_server else self.emax_nuf

    @classmethod
    def preset(cls, name: str, **overrides) -> OversubPolicy:
        if name not in PRESETS:
            raise InvalidPolicy(f'unknown preset "{name}", expected one of {", ".join(PRESETS)}.',
                                variables={'name': name})
        return cls(**{**PRESETS[name], 'name': name, **overrides})

    def as_dict(self) -> dict:
        return asdict(self)


PRESETS: Dict[str, dict] = {
    'traditional': dict(emax_uf=0.0, emax_nuf=0.0, fmin_uf=1.0, fmin_nuf=1.0, traditional=True),
    'state_of_the_art': dict(emax_uf=0.0005, emax_nuf=0.0005, fmin_uf=0.75, fmin_nuf=0.75, full_server=True),
    'no_uf_impact': dict(emax_uf=0.0, emax_nuf=0.01, fmin_uf=1.0, fmin_nuf=0.5),
    'minimal_uf_impact': dict(emax_uf=0.001, emax_nuf=0.009, fmin_uf=0.75, fmin_nuf=0.5),
}


# ========================================================================================================== HISTORY
@dataclass(frozen=True)
class HistoryEstimates:
    beta: float
    util_uf: float
    util_nuf: float

    def __post_init__(self):
        for key in ('beta', 'util_uf', 'util_nuf'):
            value = getattr(self, key)
            if not 0.0 <= value <= 1.0:
                raise InvalidPolicy(f'history estimate {key} must be within [0, 1], got {value}.',
                                    variables={'estimates': self})

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_history(log: pd.DataFrame,
                     external_as_user_facing: bool = False,
                     label_column: str = 'true_label',
                     horizon_hours: Optional[float] = None
                     ) -> HistoryEstimates:
    """
    Core-hour weighted estimates from an allocation log: one row per VM with its cores, lifetime, workload label and
    P95 utilization (a trace frame will do). beta is the user-facing share of the core-hours, util_uf and util_nuf are
    the core-hour weighted mean P95 of each class (0 for a class that is absent).

    :param external_as_user_facing: count every external VM (column 'internal' false) as user-facing, which is what a
        provider that only predicts its own first-party VMs has to assume.
    :param horizon_hours: clip lifetimes to the observed window.
    :raises EmptyLog: when the log carries no core-hours at all.
    """

    required = ('cores', 'lifetime_hours', label_column, 'true_p95')
    if external_as_user_facing:
        required += ('internal',)
    missing = [c for c in required if c not in log.columns]
    if missing:
        raise MalformedInput('<allocation log>', [f'missing column(s) {", ".join(missing)}'],
                             variables={'columns': list(log.columns)})

    lifetime = log['lifetime_hours'].to_numpy(dtype=float)
    if horizon_hours is not None:
        lifetime = np.minimum(lifetime, horizon_hours)
    weight = log['cores'].to_numpy(dtype=float) * np.maximum(lifetime, 0.0)
    total = weight.sum()
    if len(log) == 0 or total <= 0:
        raise EmptyLog(variables={'vms': len(log)})

    user_facing = (log[label_column].astype(str) == WorkloadLabel.USER_FACING.value).to_numpy()
    if external_as_user_facing:
        user_facing = user_facing | ~log['internal'].astype(bool).to_numpy()
    p95 = log['true_p95'].to_numpy(dtype=float)

    def weighted_p95(mask: np.ndarray) -> float:
        w = weight[mask].sum()
        return float((weight[mask] * p95[mask]).sum() / w) if w > 0 else 0.0

    estimates = HistoryEstimates(beta=float(weight[user_facing].sum() / total),
                                 util_uf=weighted_p95(user_facing),
                                 util_nuf=weighted_p95(~user_facing))
    logger.info('history: beta %.3f, util_uf %.3f, util_nuf %.3f over %d VMs', estimates.beta, estimates.util_uf,
                estimates.util_nuf, len(log))
    return estimates


# ========================================================================================================= HARDWARE
@dataclass(frozen=True)
class ChassisComposition:
    """The fleet-average chassis: its number of blades and the cores allocated to VMs on each of them."""

    blades: int = 12
    allocated_cores: float = 28.5

    def __post_init__(self):
        if self.blades < 1 or self.allocated_cores < 0:
            raise InvalidPolicy(f'a chassis needs blades >= 1 and allocated_cores >= 0, got {self.blades} and '
                                f'{self.allocated_cores}.', variables={'composition': self})

    @classmethod
    def of(cls, topology: Topology, occupancy: float = 0.75) -> ChassisComposition:
        return cls(topology.blades_per_chassis, occupancy * topology.allocatable_cores)

    def nameplate_w(self, spec: ServerPowerSpec) -> float:
        return self.blades * spec.peak_w

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HardwareProfile:
    spec: ServerPowerSpec
    uf_curve: FreqPowerCurve
    nuf_curve: FreqPowerCurve


def profile_hardware(spec: ServerPowerSpec, estimates: HistoryEstimates) -> HardwareProfile:
    return HardwareProfile(spec, freq_power_curve(spec, estimates.util_uf), freq_power_curve(spec, estimates.util_nuf))


@dataclass(frozen=True)
class ShaveCapacity:
    nuf_w: float
    uf_w: float

    @property
    def total_w(self) -> float:
        return self.nuf_w + self.uf_w


def shave_capacity(composition: ChassisComposition, estimates: HistoryEstimates, policy: OversubPolicy,
                   profile: HardwareProfile) -> ShaveCapacity:
    """Watts saved on a chassis by throttling each class from f_max to its minimum frequency."""

    cores = profile.spec.cores
    f_max = profile.spec.f_max
    allocated = composition.blades * composition.allocated_cores
    nuf = profile.nuf_curve.reduction(f_max, policy.fmin_nuf) / cores * allocated * (1.0 - estimates.beta)
    uf = profile.uf_curve.reduction(f_max, policy.fmin_uf) / cores * allocated * estimates.beta
    return ShaveCapacity(nuf_w=nuf, uf_w=uf)


class Feasibility(str, Enum):
    NUF_ONLY = 'NUF-only'
    NUF_AND_UF = 'NUF+UF'
    INFEASIBLE = 'infeasible'


def shaveable_power(deficit_w: float,
                    composition: ChassisComposition,
                    estimates: HistoryEstimates,
                    policy: OversubPolicy,
                    profile: Optional[HardwareProfile] = None
                    ) -> Feasibility:
    if deficit_w < 0:
        raise ValueError(f'a deficit is not negative, got {deficit_w}.')
    if deficit_w == 0:
        return Feasibility.NUF_ONLY

    profile = profile if profile is not None else profile_hardware(ServerPowerSpec(), estimates)
    capacity = shave_capacity(composition, estimates, policy, profile)
    if deficit_w > capacity.total_w:
        return Feasibility.INFEASIBLE
    if policy.full_server or deficit_w > capacity.nuf_w:
        return Feasibility.NUF_AND_UF
    return Feasibility.NUF_ONLY


# ============================================================================================================ DRAWS
class HistoricalDraws:
    """A multiset of chassis power readings, kept sorted in ascending order."""

    def __init__(self, readings: Union[Sequence[float], np.ndarray]) -> None:
        values = np.sort(np.asarray(readings, dtype=float))
        if values.size == 0:
            raise InvalidDraws('there are no readings.', variables={'readings': 0})
        if not np.all(np.isfinite(values)) or values[0] <= 0:
            raise InvalidDraws(f'readings must be positive and finite, the lowest is {values[0]}.',
                               variables={'readings': values.size})
        values.setflags(write=False)
        self.readings = values

    def __len__(self) -> int:
        return int(self.readings.size)

    @property
    def max_w(self) -> float:
        return float(self.readings[-1])

    def above(self, watts: float) -> int:
        """Number of readings strictly above watts."""
        return int(self.readings.size - np.searchsorted(self.readings, watts, side='right'))

    def shaves(self, candidate_w: float) -> np.ndarray:
        """Deficits of the events at a candidate budget, largest first."""
        events = self.readings[self.readings > candidate_w]
        return (events - candidate_w)[::-1]

    def candidates(self, delta_w: float = DELTA_W) -> np.ndarray:
        """The first candidate tolerates no event, every following one sits delta_w below a distinct draw."""
        distinct = np.unique(self.readings)[::-1]
        return np.concatenate(([distinct[0] + delta_w], distinct - delta_w))

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, source: str = '<frame>') -> HistoricalDraws:
        """:raises MalformedInput: with one line-numbered problem per bad row (data starts on line 2)."""

        missing = [c for c in DRAW_COLUMNS if c not in frame.columns]
        if missing:
            raise MalformedInput(source, [f'line 1: missing column(s) {", ".join(missing)}'],
                                 variables={'columns': list(frame.columns)})
        if len(frame) == 0:
            raise MalformedInput(source, ['line 2: no readings'], variables={'rows': 0})

        watts = pd.to_numeric(frame['watts'], errors='coerce').to_numpy(dtype=float)
        bad = ~np.isfinite(watts) | (watts <= 0)
        if bad.any():
            problems = [f'line {i + 2}: watts must be a positive number, got {frame["watts"].iloc[i]!r}'
                        for i in np.flatnonzero(bad)]
            raise MalformedInput(source, problems, variables={'rows': len(frame)})
        return cls(watts)

    @classmethod
    def read_csv(cls, path: str) -> HistoricalDraws:
        source = File()
        source.bind_input(path)
        try:
            frame = source.read_frame()
        except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
            raise MalformedInput(path, [f'line 1: {e}'], variables={'path': path})
        return cls.from_frame(frame, path)


def worked_example_draws() -> HistoricalDraws:
    """10,000 bundled readings whose three highest are 2900, 2850 and 2850 W, all others below 2840 W."""
    return HistoricalDraws.from_frame(bundled(WORKED_EXAMPLE_FILE).read_frame(), WORKED_EXAMPLE_FILE)


# =========================================================================================================== SEARCH
@dataclass(frozen=True)
class CandidateAudit:
    candidate_w: float
    readings: int
    events: int
    uf_events: int
    nuf_events: int  # NUF_ONLY events
    infeasible_events: int
    worst_shave_w: float
    accepted: bool

    @property
    def event_rate(self) -> float:
        return self.events / self.readings

    @property
    def uf_event_rate(self) -> float:
        return self.uf_events / self.readings

    @property
    def nuf_event_rate(self) -> float:
        """Every feasible event throttles non-user-facing cores, the NUF_AND_UF ones included."""
        return (self.nuf_events + self.uf_events) / self.readings

    def as_dict(self) -> dict:
        return {**asdict(self), 'event_rate': self.event_rate, 'uf_event_rate': self.uf_event_rate,
                'nuf_event_rate': self.nuf_event_rate}


def evaluate_candidate(draws: HistoricalDraws, candidate_w: float, capacity: ShaveCapacity,
                       policy: OversubPolicy) -> CandidateAudit:
    n = len(draws)
    events = draws.above(candidate_w)
    infeasible = draws.above(candidate_w + capacity.total_w)
    if policy.full_server:
        uf_events = events - infeasible
    else:
        uf_events = draws.above(candidate_w + capacity.nuf_w) - infeasible
    nuf_events = events - uf_events - infeasible

    accepted = infeasible == 0 \
        and uf_events / n <= policy.uf_allowance + RATE_TOLERANCE \
        and (nuf_events + uf_events) / n <= policy.nuf_allowance + RATE_TOLERANCE
    return CandidateAudit(candidate_w=float(candidate_w), readings=n, events=events, uf_events=uf_events,
                          nuf_events=nuf_events, infeasible_events=infeasible,
                          worst_shave_w=max(draws.max_w - float(candidate_w), 0.0), accepted=bool(accepted))


@dataclass(frozen=True)
class BudgetResult:
    policy: OversubPolicy
    estimates: HistoryEstimates
    composition: ChassisComposition
    provisioned_w: float
    p_min_w: float
    final_budget_w: float
    uf_event_rate: float
    nuf_event_rate: float
    worst_shave_w: float
    capacity: ShaveCapacity
    audit: Tuple[CandidateAudit, ...] = field(repr=False)

    @property
    def delta(self) -> float:
        return oversubscription_delta(self.final_budget_w, self.provisioned_w)

    def audit_at(self, candidate_w: float) -> Optional[CandidateAudit]:
        for entry in self.audit:
            if entry.candidate_w == candidate_w:
                return entry
        return None

    def as_dict(self) -> dict:
        return {'policy': self.policy.as_dict(), 'estimates': self.estimates.as_dict(),
                'composition': self.composition.as_dict(), 'provisioned_w': self.provisioned_w,
                'p_min_w': self.p_min_w, 'final_budget_w': self.final_budget_w, 'delta': self.delta,
                'uf_event_rate': self.uf_event_rate, 'nuf_event_rate': self.nuf_event_rate,
                'worst_shave_w': self.worst_shave_w,
                'shave_capacity_w': {'nuf': self.capacity.nuf_w, 'uf': self.capacity.uf_w},
                'audit': [entry.as_dict() for entry in self.audit]}

    def write_json(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_json(self.as_dict())


def find_min_budget(draws: Union[HistoricalDraws, Sequence[float]],
                    policy: OversubPolicy,
                    estimates: HistoryEstimates,
                    composition: ChassisComposition = ChassisComposition(),
                    spec: ServerPowerSpec = ServerPowerSpec(),
                    provisioned_w: Optional[float] = None,
                    delta_w: float = DELTA_W
                    ) -> BudgetResult:
    """
    Walks the candidates of draws in descending order and stops at the first one the policy rejects; feasibility only
    gets harder as the candidate drops, so the last accepted candidate is P_min. The audit trail holds every evaluated
    candidate, the rejected one included.

    The provisioned budget defaults to the nameplate power of the chassis. A traditional policy does not search:
    its budget is the provisioned one.

    :raises NoFeasibleBudget: when the candidate that tolerates no events is already above the provisioned budget.
    """

    draws = draws if isinstance(draws, HistoricalDraws) else HistoricalDraws(draws)
    provisioned = float(provisioned_w if provisioned_w is not None else composition.nameplate_w(spec))
    capacity = shave_capacity(composition, estimates, policy, profile_hardware(spec, estimates))

    if policy.traditional:
        entry = evaluate_candidate(draws, provisioned, capacity, policy)
        audit = [replace(entry, accepted=True)]
        best = audit[0]
    else:
        audit: List[CandidateAudit] = list()
        best = None
        for candidate in draws.candidates(delta_w):
            if candidate <= 0:
                break
            entry = evaluate_candidate(draws, candidate, capacity, policy)
            audit.append(entry)
            if not entry.accepted:
                break
            best = entry

    if best is None or best.candidate_w > provisioned:
        raise NoFeasibleBudget(draws.max_w, provisioned, variables={'policy': policy, 'readings': len(draws)})

    final = final_budget(best.candidate_w, policy, provisioned)
    logger.info('%s: P_min %.1f W, final budget %.1f W of %.1f W provisioned after %d candidates', policy.name,
                best.candidate_w, final, provisioned, len(audit))
    return BudgetResult(policy=policy, estimates=estimates, composition=composition, provisioned_w=provisioned,
                        p_min_w=best.candidate_w, final_budget_w=final, uf_event_rate=best.uf_event_rate,
                        nuf_event_rate=best.nuf_event_rate, worst_shave_w=best.worst_shave_w, capacity=capacity,
                        audit=tuple(audit))


def final_budget(p_min_w: float, policy: OversubPolicy, provisioned_w: Optional[float] = None) -> float:
    if p_min_w <= 0:
        raise ValueError(f'P_min must be positive, got {p_min_w}.')
    if policy.traditional and provisioned_w is not None:
        return float(provisioned_w)
    final = p_min_w * (1.0 + policy.buffer)
    return float(min(final, provisioned_w) if provisioned_w is not None else final)


def oversubscription_delta(final_budget_w: float, provisioned_w: float) -> float:
    """Share of the provisioned power freed for more servers, in [0, 1]."""
    return float(min(max((provisioned_w - final_budget_w) / provisioned_w, 0.0), 1.0))


# ======================================================================================================= COMPARISON
COMPARISON = ('traditional', 'state_of_the_art', 'no_uf_impact', 'minimal_uf_impact')
INTERNAL_ONLY = ('no_uf_impact', 'minimal_uf_impact')


def compare_provisioning(draws: Union[HistoricalDraws, Sequence[float]],
                         estimates: HistoryEstimates,
                         composition: ChassisComposition = ChassisComposition(),
                         provisioned_w: Optional[float] = None,
                         spec: ServerPowerSpec = ServerPowerSpec(),
                         internal_estimates: Optional[HistoryEstimates] = None,
                         policies: Optional[Mapping[str, OversubPolicy]] = None
                         ) -> pd.DataFrame:
    """
    One row per provisioning approach with its budget and the share of the provisioned power it frees. With
    internal_estimates (external VMs counted as user-facing) the per-VM approaches are repeated for them.
    """

    draws = draws if isinstance(draws, HistoricalDraws) else HistoricalDraws(draws)
    runs = [(name, policy, estimates) for name, policy in
            (policies or {name: OversubPolicy.preset(name) for name in COMPARISON}).items()]
    if internal_estimates is not None:
        runs += [(f'{name} (internal only)', OversubPolicy.preset(name), internal_estimates) for name in INTERNAL_ONLY]

    rows = list()
    for name, policy, est in runs:
        result = find_min_budget(draws, policy, est, composition, spec, provisioned_w)
        rows.append({'approach': name, 'p_min_w': result.p_min_w, 'final_budget_w': result.final_budget_w,
                     'provisioned_w': result.provisioned_w, 'delta': result.delta,
                     'uf_event_rate': result.uf_event_rate, 'nuf_event_rate': result.nuf_event_rate})
    return pd.DataFrame(rows)
