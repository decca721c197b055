"""
Scheduler.py places arriving VMs on servers. Placement follows the usual two-phase scheme of a cluster scheduler:

1) constraint rules drop every server that cannot host the VM (not enough free cores or memory);
2) preference rules order the remaining candidates, and the VM goes to the candidate with the highest aggregate
   weight.

Two preference rules are combined here. The packing rule prefers the server with the fewest free cores left after
the placement (best fit). The power rule is the criticality- and utilization-aware one: every candidate gets

    score = alpha * kappa + (1 - alpha) * eta

where kappa = 1 - rho_peak / rho_max scores the candidate's chassis (how much of the chassis would be busy if every VM
ran at its P95 utilization at once) and eta scores the server itself: for a user-facing VM

    eta = (1 + (gamma_nuf - gamma_uf) / N_cores) / 2

(and the reverse for a non-user-facing VM), so that user-facing VMs go where non-user-facing load dominates and vice
versa. This spreads the throttleable power evenly over the servers and the chassis.

The rules are aggregated by order: every rule gives a candidate 1 - rank / n points (rank 0 is the rule's favourite,
equal values share the better rank) and the points are weighted by packing_rule_weight and power_rule_weight. Ties of
the aggregate go to the candidate with the fewest free cores, then to the lowest server id. With power_rule_weight = 0
the scheduler is the packing-only baseline ("NoRule").

    >>> cluster = ClusterState(Topology())
    >>> server = place(vm, cluster, SchedulerConfig())
    >>> remove(vm.id, cluster)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Cluster import ClusterState, ServerLoad, ChassisLoad, VmDescriptor, Placement
from miniOversubscription.Core.CoreExceptions.SchedulerExceptions import DeploymentFailure
from miniOversubscription.Utilities.Checks import fraction_check, positive_check
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = 0.8
    packing_rule_weight: float = 0.7
    power_rule_weight: float = 0.3

    def __post_init__(self):
        fraction_check(self.alpha, 'alpha', section='scheduler')
        positive_check(self.packing_rule_weight, 'packing_rule_weight', section='scheduler', strict=False)
        positive_check(self.power_rule_weight, 'power_rule_weight', section='scheduler', strict=False)
        if self.packing_rule_weight + self.power_rule_weight <= 0:
            raise ConfigurationError('scheduler', 'at least one rule weight must be positive.', variables=locals())

    @classmethod
    def policy(cls, name: str, alpha: float = 0.8) -> SchedulerConfig:
        """'norule' is the packing-only baseline, 'power' adds the power rule with the default weights."""
        if name == 'norule':
            return cls(alpha=alpha, power_rule_weight=0.0)
        elif name == 'power':
            return cls(alpha=alpha)
        raise ConfigurationError('scheduler', f'unknown policy "{name}", expected "norule" or "power".',
                                 variables=locals())

    @property
    def uses_power_rule(self) -> bool:
        return self.power_rule_weight > 0


@dataclass(frozen=True)
class ScoredCandidate:
    server: int
    kappa: float
    eta: float
    score: float


# ========================================================================================================= SCORES
def score_chassis(load: ChassisLoad) -> float:
    return 1.0 - load.rho_peak / load.rho_max


def score_server(omega: WorkloadLabel, load: ServerLoad) -> float:
    if omega.is_user_facing:
        return 0.5 * (1.0 + (load.gamma_nuf - load.gamma_uf) / load.total_cores)
    return 0.5 * (1.0 + (load.gamma_uf - load.gamma_nuf) / load.total_cores)


def _kappa_eta(omega: WorkloadLabel, servers: np.ndarray, cluster: ClusterState):
    """score_chassis and score_server for many candidates at once."""
    t = cluster.topology
    kappa = 1.0 - cluster.rho_peak[servers // t.blades_per_chassis] / t.chassis_cores
    difference = cluster.gamma_nuf[servers] - cluster.gamma_uf[servers]
    if not omega.is_user_facing:
        difference = -difference
    eta = 0.5 * (1.0 + difference / t.cores_per_blade)
    return kappa, eta


def _points(keys: np.ndarray) -> np.ndarray:
    """1 - rank / n with rank 0 for the smallest key; equal keys share the lower rank."""
    n = keys.size
    rank = np.searchsorted(np.sort(keys), keys, side='left')
    return 1.0 - rank / n


# ===================================================================================================== OPERATIONS
def filter_constraints(vm: VmDescriptor, cluster: ClusterState) -> np.ndarray:
    """Indices of the servers with free_cores >= vm.cores and free_memory >= vm.memory_gb."""
    return np.flatnonzero(cluster.feasible(vm.cores, vm.memory_gb))


def sort_candidates(vm: VmDescriptor, candidates: Sequence[int], config: SchedulerConfig,
                    cluster: ClusterState) -> List[ScoredCandidate]:
    """Candidates by descending power-rule score; ties by fewest free cores, then server id."""

    servers = np.asarray(candidates, dtype=np.int64)
    if servers.size == 0:
        return list()

    kappa, eta = _kappa_eta(vm.effective.label, servers, cluster)
    score = config.alpha * kappa + (1.0 - config.alpha) * eta
    order = np.lexsort((servers, cluster.free_cores[servers], -score))

    return [ScoredCandidate(int(servers[i]), float(kappa[i]), float(eta[i]), float(score[i])) for i in order]


def choose(vm: VmDescriptor, cluster: ClusterState, config: SchedulerConfig) -> int:
    """
    The server place() would pick, without committing anything.

    :raises DeploymentFailure: when no server passes the constraint rules.
    """

    servers = filter_constraints(vm, cluster)
    if servers.size == 0:
        raise DeploymentFailure(vm.id, vm.cores, vm.memory_gb,
                                variables={'vm': vm, 'max_free_cores': int(cluster.free_cores.max())})

    free = cluster.free_cores[servers]
    total = config.packing_rule_weight * _points(free - vm.cores)

    if config.uses_power_rule:
        kappa, eta = _kappa_eta(vm.effective.label, servers, cluster)
        score = config.alpha * kappa + (1.0 - config.alpha) * eta
        total = total + config.power_rule_weight * _points(-score)

    best = np.lexsort((servers, free, -total))[0]
    return int(servers[best])


def place(vm: VmDescriptor, cluster: ClusterState, config: SchedulerConfig) -> int:
    """
    Places the VM and returns the server id. The cluster's load accumulators are updated with the VM's effective
    attributes, the utilization ledger with its true ones.

    :raises DeploymentFailure: when no server passes the constraint rules. Nothing is changed in that case.
    """

    server = choose(vm, cluster, config)
    cluster.commit(vm, server)
    return server


def remove(vm_id: int, cluster: ClusterState) -> Placement:
    """Departure of a VM. Restores every accumulator to its value before the VM was placed."""
    return cluster.release(vm_id)


def place_deployment(vms: Sequence[VmDescriptor], cluster: ClusterState, config: SchedulerConfig) -> List[int]:
    """
    Places the VMs of one deployment request in order. If any VM fails, the VMs already placed are removed and the
    DeploymentFailure is re-raised: a deployment is placed entirely or not at all.
    """

    placed: List[int] = list()
    servers: List[int] = list()
    try:
        for vm in vms:
            servers.append(place(vm, cluster, config))
            placed.append(vm.id)
    except DeploymentFailure:
        for vm_id in reversed(placed):
            remove(vm_id, cluster)
        logger.info('deployment of %d VM(s) rejected after %d placed', len(vms), len(placed))
        raise

    return servers
