"""
Capping.py simulates power capping of one chassis. Three mechanisms work together:

1) the chassis manager polls the power supplies every 200 ms and alerts every blade when the chassis draw reaches a
   threshold just below the chassis budget (98% by default);
2) the in-band controller of every blade, on an alert, compares the blade's power with its target (a bit below the
   blade's even share of the chassis budget) and, if the blade is over, drops all cores of the lowest throttle tier
   that is not yet at the minimum p-state to the minimum p-state. It then enters a feedback loop that, once per poll,
   raises N throttled cores by one p-state whenever this keeps the blade at or below its target. The cap is lifted
   after 30 s and all cores go back to the maximum frequency;
3) the out-of-band fallback (RAPL): when the chassis draw reaches the budget itself, every blade that draws more than
   its even share is slowed down, all its cores equally, by one p-state per poll until it complies. Ten steps take
   the ladder from 1.0 to 0.5, so RAPL always settles within 2 s.

Cores belong to throttle tiers:

    LOW_PRIORITY    internal non-production VMs, throttled first
    PRODUCTION_NUF  production VMs predicted non-user-facing
    PROTECTED       VMs predicted user-facing and the I/O partition of the blade, never throttled in-band

Unassigned cores draw no dynamic power and are ignored.

Each tick of a ChassisCapping performs, in this order: lift of an expired cap, poll (alert and in-band reaction),
feedback steps of the blades that did not just react, and finally RAPL if the draw after the in-band actions still
reaches the budget. Every alert episode is recorded as a CappingEvent in an append-only CappingEventLog.

    >>> chassis = ChassisCapping(0, 12, ServerPowerSpec(), ChassisManagerConfig(chassis_budget_w=2450))
    >>> chassis.assign(blade, owners, tiers)
    >>> chassis.set_utilization(utilization)
    >>> record = chassis.tick(t)
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Cluster import ClusterState, VmDescriptor, FREE_CORE, IO_CORE
from miniOversubscription.Core.PowerModel import ServerPowerSpec, LADDER_TOLERANCE
from miniOversubscription.Core.CoreExceptions.CappingExceptions import InfeasibleBudget, InvalidCappingConfig
from miniOversubscription.MiniOversubscriptionException import NotSupposedToHappen
from miniOversubscription.Utilities.File import File


logger = logging.getLogger(__name__)


class ThrottleTier(IntEnum):
    UNASSIGNED = -1
    LOW_PRIORITY = 0
    PRODUCTION_NUF = 1
    PROTECTED = 2


THROTTLEABLE_TIERS = (ThrottleTier.LOW_PRIORITY, ThrottleTier.PRODUCTION_NUF)


class ControllerAction(str, Enum):
    NONE = 'none'
    THROTTLED = 'throttled'
    NOTHING_TO_THROTTLE = 'nothing-to-throttle'


class CappingMode(str, Enum):
    PER_VM = 'per-vm'
    FULL_SERVER = 'full-server'


# ============================================================================================================ CONFIG
@dataclass(frozen=True)
class ChassisManagerConfig:
    chassis_budget_w: float
    poll_interval_ms: int = 200
    alert_threshold_fraction: float = 0.98

    def __post_init__(self):
        if self.chassis_budget_w <= 0:
            raise InvalidCappingConfig(f'chassis_budget_w must be positive, got {self.chassis_budget_w}.',
                                       variables={'config': self})
        if self.poll_interval_ms <= 0:
            raise InvalidCappingConfig(f'poll_interval_ms must be positive, got {self.poll_interval_ms}.',
                                       variables={'config': self})
        if not 0 < self.alert_threshold_fraction < 1:
            raise InvalidCappingConfig(f'alert_threshold_fraction must be within (0, 1), got '
                                       f'{self.alert_threshold_fraction}.', variables={'config': self})

    @property
    def poll_interval_s(self) -> float:
        return self.poll_interval_ms / 1000.0

    @property
    def alert_threshold_w(self) -> float:
        return self.alert_threshold_fraction * self.chassis_budget_w


@dataclass(frozen=True)
class ControllerConfig:
    step_cores: int = 4
    cap_duration_s: float = 30.0
    server_target_fraction: float = 225 / 230
    mode: CappingMode = CappingMode.PER_VM

    def __post_init__(self):
        object.__setattr__(self, 'mode', CappingMode(self.mode))
        if self.step_cores < 1:
            raise InvalidCappingConfig(f'step_cores must be at least 1, got {self.step_cores}.',
                                       variables={'config': self})
        if self.cap_duration_s <= 0:
            raise InvalidCappingConfig(f'cap_duration_s must be positive, got {self.cap_duration_s}.',
                                       variables={'config': self})
        if not 0 < self.server_target_fraction <= 1:
            raise InvalidCappingConfig(f'server_target_fraction must be within (0, 1], got '
                                       f'{self.server_target_fraction}.', variables={'config': self})


@dataclass(frozen=True)
class PriorityClasses:
    """
    The prioritized throttling list. A VM predicted user-facing is always protected; a non-user-facing VM is
    low-priority when it is not a production VM (or, with internal_is_low_priority, when it is an internal one).
    """

    internal_is_low_priority: bool = False

    def tier_of(self, vm: VmDescriptor) -> ThrottleTier:
        if vm.effective.label is WorkloadLabel.USER_FACING:
            return ThrottleTier.PROTECTED
        if not vm.production or (self.internal_is_low_priority and vm.internal):
            return ThrottleTier.LOW_PRIORITY
        return ThrottleTier.PRODUCTION_NUF

    def server_tiers(self, cluster: ClusterState, server: int) -> np.ndarray:
        """Tier of every core of a server: I/O cores are protected, free cores unassigned."""
        owners = cluster.core_owner[server]
        tiers = np.full(owners.shape, int(ThrottleTier.UNASSIGNED), dtype=np.int64)
        tiers[owners == IO_CORE] = int(ThrottleTier.PROTECTED)
        for vm_id in cluster.vms_on(server):
            tiers[owners == vm_id] = int(self.tier_of(cluster.vm(vm_id)))
        return tiers


# ============================================================================================================ EVENTS
@dataclass(frozen=True)
class Alert:
    chassis: int
    t: float
    draw_w: float


@dataclass(frozen=True)
class TickRecord:
    t: float
    draw_w: float
    alert: bool
    rapl_active: bool


@dataclass
class CappingEvent:
    chassis: int
    start_s: float
    trigger_w: float
    end_s: Optional[float] = None
    peak_w: float = 0.0
    alerts: int = 0
    rapl_engaged: bool = False
    infeasible: bool = False
    min_frequency: Dict[int, float] = field(default_factory=dict)
    throttled_core_seconds: Dict[int, float] = field(default_factory=lambda: defaultdict(float))

    @property
    def closed(self) -> bool:
        return self.end_s is not None

    @property
    def duration_s(self) -> float:
        return (self.end_s if self.end_s is not None else self.start_s) - self.start_s

    def tier_min_frequency(self, tier: ThrottleTier) -> float:
        return self.min_frequency.get(int(tier), 1.0)

    def as_row(self) -> dict:
        return {'chassis': self.chassis, 'start_s': self.start_s, 'end_s': self.end_s, 'trigger_w': self.trigger_w,
                'peak_w': self.peak_w, 'alerts': self.alerts, 'rapl_engaged': self.rapl_engaged,
                'infeasible': self.infeasible,
                'min_freq_low_priority': self.tier_min_frequency(ThrottleTier.LOW_PRIORITY),
                'min_freq_production_nuf': self.tier_min_frequency(ThrottleTier.PRODUCTION_NUF),
                'min_freq_protected': self.tier_min_frequency(ThrottleTier.PROTECTED),
                'throttled_core_seconds': sum(self.throttled_core_seconds.values())}

    def as_dict(self) -> dict:
        row = self.as_row()
        row['min_frequency'] = {ThrottleTier(k).name.lower(): v for k, v in sorted(self.min_frequency.items())}
        row['throttled_core_seconds_per_vm'] = {str(k): v for k, v in sorted(self.throttled_core_seconds.items())}
        return row


class CappingEventLog:
    """Append-only record stream of capping events, exported as CSV (one row per event) and JSON (full detail)."""

    COLUMNS = ('chassis', 'start_s', 'end_s', 'trigger_w', 'peak_w', 'alerts', 'rapl_engaged', 'infeasible',
               'min_freq_low_priority', 'min_freq_production_nuf', 'min_freq_protected', 'throttled_core_seconds')

    def __init__(self) -> None:
        self._events: List[CappingEvent] = list()

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        return iter(self._events)

    def append(self, event: CappingEvent) -> None:
        self._events.append(event)

    def extend(self, events: Sequence[CappingEvent]) -> None:
        self._events.extend(events)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([e.as_row() for e in self._events], columns=list(self.COLUMNS))

    def write_csv(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_frame(self.to_frame())

    def write_json(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_json([e.as_dict() for e in self._events])


# ========================================================================================================== CHASSIS
class ChassisCapping:
    """
    Capping state of one chassis: per-core utilization, owner, tier and controller frequency of every blade, the
    RAPL frequency limit of every blade and the active capping event, if any. The effective frequency of a core is
    the lower of its controller frequency and its blade's RAPL limit.

    :raises InfeasibleBudget: on construction, if the even share of the budget is below the idle power of a blade.
    """

    def __init__(self,
                 chassis_id: int,
                 blades: int,
                 spec: ServerPowerSpec,
                 manager: ChassisManagerConfig,
                 controller: ControllerConfig = ControllerConfig(),
                 enabled: bool = True
                 ) -> None:

        self.chassis_id = chassis_id
        self.blades = blades
        self.spec = spec
        self.manager = manager
        self.controller = controller
        self.enabled = enabled

        shape = (blades, spec.cores)
        self.utilization = np.zeros(shape)
        self.owners = np.full(shape, FREE_CORE, dtype=np.int64)
        self.tiers = np.full(shape, int(ThrottleTier.UNASSIGNED), dtype=np.int64)
        self.freq = np.full(shape, spec.f_max)
        self.rapl = np.full(blades, spec.f_max)
        self.feedback = np.zeros(blades, dtype=bool)

        self.event: Optional[CappingEvent] = None
        self.log = CappingEventLog()

        if enabled and self.even_share_w < spec.idle_w:
            raise InfeasibleBudget(f'chassis {chassis_id}', self.even_share_w, spec.idle_w,
                                   variables={'budget_w': manager.chassis_budget_w, 'blades': blades})

    # ===================================================================================================== BUDGETS
    @property
    def even_share_w(self) -> float:
        return self.manager.chassis_budget_w / self.blades

    @property
    def target_w(self) -> float:
        return self.controller.server_target_fraction * self.even_share_w

    # ======================================================================================================= STATE
    def assign(self, blade: int, owners: np.ndarray, tiers: np.ndarray) -> None:
        """New core bindings of a blade. Cores that changed owner start at the maximum frequency."""
        changed = self.owners[blade] != owners
        self.owners[blade] = owners
        self.tiers[blade] = tiers
        self.freq[blade, changed] = self.spec.f_max

    def set_utilization(self, utilization: np.ndarray) -> None:
        if utilization.shape != self.utilization.shape:
            raise InvalidCappingConfig(f'expected utilization of shape {self.utilization.shape}, got '
                                       f'{utilization.shape}.', variables={'chassis': self.chassis_id})
        self.utilization = np.clip(utilization, 0.0, 1.0)

    def effective_frequency(self) -> np.ndarray:
        return np.minimum(self.freq, self.rapl[:, None])

    def server_powers(self, freq: Optional[np.ndarray] = None) -> np.ndarray:
        effective = np.minimum(self.freq if freq is None else freq, self.rapl[:, None])
        load = (self.utilization * np.power(effective, self.spec.dyn_exponent)).sum(axis=1)
        return self.spec.idle_w + self.spec.dynamic_range_w * load / self.spec.cores

    def server_power(self, blade: int, freq_row: Optional[np.ndarray] = None) -> float:
        row = self.freq[blade] if freq_row is None else freq_row
        effective = np.minimum(row, self.rapl[blade])
        load = (self.utilization[blade] * np.power(effective, self.spec.dyn_exponent)).sum()
        return float(self.spec.idle_w + self.spec.dynamic_range_w * load / self.spec.cores)

    def draw(self) -> float:
        return float(self.server_powers().sum())

    @property
    def active(self) -> bool:
        return self.event is not None

    @property
    def rapl_active(self) -> bool:
        return bool(np.any(self.rapl < self.spec.f_max - LADDER_TOLERANCE))

    def quiescent(self) -> bool:
        """True when no cap is in place: nothing can change until the utilization changes."""
        return self.event is None and not self.feedback.any() and not self.rapl_active

    # ==================================================================================================== POLLING
    def poll(self, t: float) -> Optional[Alert]:
        draw = self.draw()
        if draw >= self.manager.alert_threshold_w:
            return Alert(self.chassis_id, t, draw)
        return None

    def on_alert(self, blade: int, t: float) -> ControllerAction:
        """Drops the lowest throttleable tier that is not at the minimum p-state yet, if the blade is over target."""

        if self.controller.mode is CappingMode.FULL_SERVER:
            return ControllerAction.NONE
        if self.server_power(blade) <= self.target_w:
            return ControllerAction.NONE

        tiers, freq = self.tiers[blade], self.freq[blade]
        f_min = self.spec.f_min
        for tier in THROTTLEABLE_TIERS:
            mask = tiers == int(tier)
            if mask.any() and np.any(freq[mask] > f_min + LADDER_TOLERANCE):
                freq[mask] = f_min
                self.feedback[blade] = True
                logger.debug('chassis %d blade %d: %s cores to f_min at t=%.1f', self.chassis_id, blade,
                             tier.name, t)
                return ControllerAction.THROTTLED

        return ControllerAction.NOTHING_TO_THROTTLE

    def feedback_step(self, blade: int, t: float) -> int:
        """
        One feedback iteration: raises up to step_cores throttled cores by one p-state if the blade stays at or below
        its target. Only cores of the most protected throttled tier are raised, the slowest first. Returns the number
        of cores raised (0 when the loop holds).
        """

        if not self.feedback[blade]:
            return 0

        freq, tiers = self.freq[blade], self.tiers[blade]
        throttled = np.flatnonzero(freq < self.spec.f_max - LADDER_TOLERANCE)
        if throttled.size == 0:
            self.feedback[blade] = False
            return 0
        if self.server_power(blade) >= self.target_w:
            return 0

        throttled = throttled[tiers[throttled] == tiers[throttled].max()]
        order = np.lexsort((throttled, freq[throttled]))
        chosen = throttled[order[:self.controller.step_cores]]

        trial = freq.copy()
        ladder = self.spec.ladder
        index = np.searchsorted(ladder, trial[chosen] - LADDER_TOLERANCE)
        trial[chosen] = ladder[np.minimum(index + 1, ladder.size - 1)]

        if self.server_power(blade, trial) > self.target_w:
            return 0

        self.freq[blade] = trial
        return int(chosen.size)

    def rapl_enforce(self, blade: int, t: float) -> bool:
        """
        Steps every core of an over-cap blade down by one p-state (through the blade's RAPL limit). Returns whether
        the blade was stepped.

        :raises InfeasibleBudget: if the blade is over its even-share cap with every core at the minimum p-state.
        """

        cap = self.even_share_w
        power = self.server_power(blade)
        if power <= cap:
            return False

        if self.rapl[blade] <= self.spec.f_min + LADDER_TOLERANCE:
            raise InfeasibleBudget(f'chassis {self.chassis_id} blade {blade}', cap, power,
                                   variables={'t': t, 'rapl_limit': float(self.rapl[blade])})

        index = int(np.searchsorted(self.spec.ladder, self.rapl[blade] - LADDER_TOLERANCE))
        self.rapl[blade] = self.spec.ladder[max(index - 1, 0)]
        return True

    def lift(self, t: float) -> None:
        """Lifts the cap: every core back to the maximum frequency and the event is closed."""

        self.freq[:] = self.spec.f_max
        self.rapl[:] = self.spec.f_max
        self.feedback[:] = False

        if self.event is not None:
            self.event.end_s = t
            self.log.append(self.event)
            logger.info('chassis %d: capping event %.1f-%.1f s ended (rapl=%s)', self.chassis_id,
                        self.event.start_s, t, self.event.rapl_engaged)
            self.event = None

    # ======================================================================================================= TICK
    def _start_event(self, alert: Alert) -> None:
        self.event = CappingEvent(self.chassis_id, alert.t, alert.draw_w)
        logger.info('chassis %d: capping event started at t=%.1f s, draw %.1f W (budget %.1f W)', self.chassis_id,
                    alert.t, alert.draw_w, self.manager.chassis_budget_w)

    def _account(self, draw: float) -> None:
        event = self.event
        event.peak_w = max(event.peak_w, draw)

        effective = self.effective_frequency()
        for tier in ThrottleTier:
            if tier is ThrottleTier.UNASSIGNED:
                continue
            mask = self.tiers == int(tier)
            if mask.any():
                lowest = float(effective[mask].min())
                event.min_frequency[int(tier)] = min(event.min_frequency.get(int(tier), 1.0), lowest)

        throttled = (effective < self.spec.f_max - LADDER_TOLERANCE) & (self.owners >= 0)
        if throttled.any():
            vm_ids, counts = np.unique(self.owners[throttled], return_counts=True)
            for vm_id, count in zip(vm_ids.tolist(), counts.tolist()):
                event.throttled_core_seconds[vm_id] += count * self.manager.poll_interval_s

    def tick(self, t: float) -> TickRecord:
        if not self.enabled:
            return TickRecord(t, self.draw(), False, False)

        if self.event is not None and t - self.event.start_s >= self.controller.cap_duration_s - 1e-6:
            self.lift(t)

        acted = np.zeros(self.blades, dtype=bool)
        alert = self.poll(t)
        if alert is not None:
            if self.event is None:
                self._start_event(alert)
            self.event.alerts += 1
            for blade in range(self.blades):
                action = self.on_alert(blade, t)
                if action is ControllerAction.THROTTLED:
                    acted[blade] = True
                elif action not in (ControllerAction.NONE, ControllerAction.NOTHING_TO_THROTTLE):
                    raise NotSupposedToHappen(variables={'action': action})

        for blade in np.flatnonzero(self.feedback & ~acted):
            self.feedback_step(int(blade), t)

        draw = self.draw()
        if draw >= self.manager.chassis_budget_w:
            if self.event is None:
                self._start_event(Alert(self.chassis_id, t, draw))
            for blade in range(self.blades):
                try:
                    stepped = self.rapl_enforce(blade, t)
                except InfeasibleBudget as e:
                    logger.warning('chassis %d: infeasible budget, %s at %.1f W over a %.1f W cap',
                                   self.chassis_id, e.where, e.floor_w, e.cap_w)
                    self.event.infeasible = True
                    continue
                if stepped and not self.event.rapl_engaged:
                    self.event.rapl_engaged = True
                    logger.info('chassis %d: RAPL engaged on blade %d at t=%.1f s', self.chassis_id, blade, t)
            draw = self.draw()

        if self.event is not None:
            self._account(draw)

        return TickRecord(t, draw, alert is not None, self.rapl_active)

    def close(self, t: float) -> None:
        """Closes a still-open event at the end of a run."""
        if self.event is not None:
            self.lift(t)

    # ================================================================================================= INVARIANTS
    def protection_holds(self, blade: int) -> bool:
        """
        No core of a more protected tier is below the maximum frequency (controller frequency, RAPL excluded) while a
        core of a less protected tier is above the minimum one.
        """

        freq, tiers = self.freq[blade], self.tiers[blade]
        for low in THROTTLEABLE_TIERS:
            low_mask = tiers == int(low)
            if not low_mask.any() or np.all(freq[low_mask] <= self.spec.f_min + LADDER_TOLERANCE):
                continue
            higher = tiers > int(low)
            if np.any(freq[higher] < self.spec.f_max - LADDER_TOLERANCE):
                return False
        return True
