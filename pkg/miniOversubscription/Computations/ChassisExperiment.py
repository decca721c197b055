"""
ChassisExperiment.py reproduces the controlled chassis experiment capping is usually demonstrated with: one chassis of
12 blades runs 36 user-facing VMs of 4 cores and 36 non-user-facing VMs of 6 cores under a tight budget (2450 W), and
the VMs are placed in one of two extreme ways:

    balanced      round robin over the blades, 3 VMs of each kind on every blade
    imbalanced    user-facing VMs on the first half of the blades, non-user-facing ones on the second half

With per-VM capping, a balanced placement lets every blade meet its share of the budget by slowing its
non-user-facing cores only, and the user-facing cores never leave the maximum frequency. An imbalanced placement
leaves the user-facing blades with nothing to throttle: once the non-user-facing blades have climbed back to their
targets, the chassis reaches the budget and RAPL slows the user-facing blades down, all cores equally. Full-server
capping (RAPL only) slows user-facing cores with either placement.

    >>> result = run_experiment(ChassisExperimentConfig(placement='imbalanced'))
    >>> result.summary()['rapl_blades']
    [0, 1, 2, 3, 4, 5]

Utilization is constant over the run, so a run only shows the dynamics of the controllers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import EffectiveAttributes, BUCKET_MIDPOINTS, bucket_of
from miniOversubscription.Core.Cluster import ClusterState, Topology, VmDescriptor
from miniOversubscription.Core.PowerModel import ServerPowerSpec, LADDER_TOLERANCE
from miniOversubscription.Core.Capping import (
    ChassisCapping,
    ChassisManagerConfig,
    ControllerConfig,
    CappingEventLog,
    CappingMode,
    PriorityClasses)
from miniOversubscription.Core.CoreExceptions.SchedulerExceptions import ClusterInvariantBroken
from miniOversubscription.Database import bundled
from miniOversubscription.Utilities.Checks import keywords_check, fraction_check, positive_check
from miniOversubscription.Utilities.File import File
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError


logger = logging.getLogger(__name__)

PLACEMENTS = ('balanced', 'imbalanced')
EXPERIMENT_CONFIG = 'chassis_experiment.config'
TIMELINE_COLUMNS = ('t', 'draw_w', 'alert', 'rapl_active', 'uf_min_freq', 'uf_mean_freq', 'nuf_min_freq',
                    'nuf_mean_freq')


@dataclass(frozen=True)
class ChassisExperimentConfig:
    placement: str = 'balanced'
    capping: bool = True
    mode: str = CappingMode.PER_VM.value
    budget_w: float = 2450.0
    duration_s: float = 26 * 60.0
    blades: int = 12
    uf_vms: int = 36
    nuf_vms: int = 36
    uf_cores: int = 4
    nuf_cores: int = 6
    uf_utilization: float = 0.9
    nuf_utilization: float = 0.9
    poll_interval_ms: int = 200

    def __post_init__(self):
        if self.placement not in PLACEMENTS:
            raise ConfigurationError('experiment', f'unknown placement "{self.placement}", expected one of '
                                     f'{", ".join(PLACEMENTS)}.', variables={'config': self})
        try:
            object.__setattr__(self, 'mode', CappingMode(self.mode).value)
        except ValueError:
            raise ConfigurationError('experiment', f'unknown capping mode "{self.mode}".', variables={'config': self})
        for name in ('budget_w', 'duration_s', 'blades', 'uf_cores', 'nuf_cores', 'poll_interval_ms'):
            positive_check(getattr(self, name), name, section='experiment')
        for name in ('uf_vms', 'nuf_vms'):
            positive_check(getattr(self, name), name, section='experiment', strict=False)
        for name in ('uf_utilization', 'nuf_utilization'):
            fraction_check(getattr(self, name), name, section='experiment')
        if self.placement == 'imbalanced' and self.blades < 2:
            raise ConfigurationError('experiment', 'an imbalanced placement needs at least 2 blades.',
                                     variables={'config': self})

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ChassisExperimentConfig:
        keywords_check(data, [f.name for f in fields(cls)], section='experiment', variables={'keys': sorted(data)})
        return cls(**data)

    @classmethod
    def bundled(cls, **overrides) -> ChassisExperimentConfig:
        return cls.from_dict({**bundled(EXPERIMENT_CONFIG).read_json(), **overrides})

    @property
    def ticks(self) -> int:
        return int(round(self.duration_s * 1000 / self.poll_interval_ms))


# ======================================================================================================== PLACEMENT
def _vm(vm_id: int, label: WorkloadLabel, cores: int, utilization: float) -> VmDescriptor:
    effective = EffectiveAttributes(label, BUCKET_MIDPOINTS[bucket_of(utilization)])
    return VmDescriptor(id=vm_id, cores=cores, memory_gb=4.0 * cores, lifetime_hours=1.0,
                        subscription_id='experiment', true_label=label, true_p95=utilization, effective=effective)


def place_vms(config: ChassisExperimentConfig, spec: ServerPowerSpec = ServerPowerSpec()) -> ClusterState:
    """
    A one-chassis cluster with the experiment's VMs committed to their blades. VM ids: user-facing VMs first.

    :raises ConfigurationError: if a blade cannot hold the VMs the placement gives it.
    """

    cluster = ClusterState(Topology.single_chassis(blades_per_chassis=config.blades, cores_per_blade=spec.cores))
    half = config.blades // 2

    plan = list()
    for i in range(config.uf_vms):
        blade = i % config.blades if config.placement == 'balanced' else i % half
        plan.append((_vm(i, WorkloadLabel.USER_FACING, config.uf_cores, config.uf_utilization), blade))
    for i in range(config.nuf_vms):
        blade = i % config.blades if config.placement == 'balanced' else half + i % (config.blades - half)
        vm = _vm(config.uf_vms + i, WorkloadLabel.NON_USER_FACING, config.nuf_cores, config.nuf_utilization)
        plan.append((vm, blade))

    for vm, blade in plan:
        try:
            cluster.commit(vm, blade)
        except ClusterInvariantBroken:
            raise ConfigurationError('experiment', f'blade {blade} cannot hold VM {vm.id} ({vm.cores} cores) in a '
                                     f'{config.placement} placement.', variables={'config': config})
    return cluster


# =========================================================================================================== RESULT
@dataclass(frozen=True)
class ChassisExperimentResult:
    config: ChassisExperimentConfig
    timeline: pd.DataFrame
    events: CappingEventLog
    rapl_blades: List[int]
    uf_only_blades: List[int]
    throttled_core_seconds: Dict[str, float]

    def longest_over_budget_s(self) -> float:
        best = current = 0
        for over in (self.timeline['draw_w'] >= self.config.budget_w):
            current = current + 1 if over else 0
            best = max(best, current)
        return best * self.config.poll_interval_ms / 1000.0

    def summary(self) -> dict:
        t = self.timeline
        return {'placement': self.config.placement, 'capping': self.config.capping, 'mode': self.config.mode,
                'budget_w': self.config.budget_w, 'max_draw_w': float(t['draw_w'].max()),
                'mean_draw_w': float(t['draw_w'].mean()), 'longest_over_budget_s': self.longest_over_budget_s(),
                'uf_full_speed_fraction': float((t['uf_min_freq'] >= 1.0 - LADDER_TOLERANCE).mean()),
                'uf_mean_freq': float(t['uf_mean_freq'].mean()), 'nuf_mean_freq': float(t['nuf_mean_freq'].mean()),
                'capping_events': len(self.events), 'rapl_engaged': any(e.rapl_engaged for e in self.events),
                'rapl_blades': list(self.rapl_blades), 'uf_only_blades': list(self.uf_only_blades),
                'throttled_core_seconds': dict(self.throttled_core_seconds)}

    def write_csv(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_frame(self.timeline)


# ============================================================================================================== RUN
def run_experiment(config: ChassisExperimentConfig = ChassisExperimentConfig(),
                   spec: ServerPowerSpec = ServerPowerSpec()) -> ChassisExperimentResult:
    """
    Ticks the chassis for config.duration_s and records, per tick, the draw after the controllers acted and the
    effective frequencies of the user-facing and non-user-facing cores.

    :raises InfeasibleBudget: if the budget's even share is below the idle power of a blade.
    """

    cluster = place_vms(config, spec)
    priorities = PriorityClasses()
    chassis = ChassisCapping(0, config.blades, spec, ChassisManagerConfig(config.budget_w, config.poll_interval_ms),
                             ControllerConfig(mode=CappingMode(config.mode)), enabled=config.capping)

    utilization = np.zeros((config.blades, spec.cores))
    for blade in range(config.blades):
        owners = cluster.core_owner[blade]
        chassis.assign(blade, owners, priorities.server_tiers(cluster, blade))
        for vm_id in cluster.vms_on(blade):
            utilization[blade, owners == vm_id] = cluster.vm(vm_id).true_p95
    chassis.set_utilization(utilization)

    owners = chassis.owners
    uf_mask = (owners >= 0) & (owners < config.uf_vms)
    nuf_mask = owners >= config.uf_vms
    uf_only = [b for b in range(config.blades) if uf_mask[b].any() and not nuf_mask[b].any()]

    rows = list()
    rapl_seen = np.zeros(config.blades, dtype=bool)
    for i in range(config.ticks):
        record = chassis.tick(i * config.poll_interval_ms / 1000.0)
        effective = chassis.effective_frequency()
        rapl_seen |= chassis.rapl < spec.f_max - LADDER_TOLERANCE
        rows.append((record.t, record.draw_w, record.alert, record.rapl_active,
                     _stat(effective, uf_mask, np.min), _stat(effective, uf_mask, np.mean),
                     _stat(effective, nuf_mask, np.min), _stat(effective, nuf_mask, np.mean)))
    chassis.close(config.ticks * config.poll_interval_ms / 1000.0)

    seconds = {WorkloadLabel.USER_FACING.value: 0.0, WorkloadLabel.NON_USER_FACING.value: 0.0}
    for event in chassis.log:
        for vm_id, core_seconds in event.throttled_core_seconds.items():
            label = WorkloadLabel.USER_FACING if vm_id < config.uf_vms else WorkloadLabel.NON_USER_FACING
            seconds[label.value] += core_seconds

    logger.info('chassis experiment %s/%s capping=%s: %d events', config.placement, config.mode, config.capping,
                len(chassis.log))
    return ChassisExperimentResult(config, pd.DataFrame(rows, columns=list(TIMELINE_COLUMNS)), chassis.log,
                                   np.flatnonzero(rapl_seen).tolist(), uf_only, seconds)


def _stat(effective: np.ndarray, mask: np.ndarray, how) -> float:
    return float(how(effective[mask])) if mask.any() else 1.0


def compare_placements(config: ChassisExperimentConfig = ChassisExperimentConfig(),
                       spec: ServerPowerSpec = ServerPowerSpec()) -> pd.DataFrame:
    """Every placement without capping, with per-VM capping and with full-server capping; one summary row each."""

    rows = list()
    for placement in PLACEMENTS:
        for capping, mode in ((False, CappingMode.PER_VM), (True, CappingMode.PER_VM), (True, CappingMode.FULL_SERVER)):
            variant = ChassisExperimentConfig(**{**{f.name: getattr(config, f.name) for f in fields(config)},
                                                 'placement': placement, 'capping': capping, 'mode': mode.value})
            summary = run_experiment(variant, spec).summary()
            for key in ('rapl_blades', 'uf_only_blades', 'throttled_core_seconds'):
                summary.pop(key)
            rows.append(summary)
    return pd.DataFrame(rows)
