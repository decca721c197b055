"""
Cluster.py keeps the state of a cluster of blade servers: racks of chassis, chassis of blades, blades of cores. It is
the single place where VMs are bound to cores, and it keeps, incrementally, every load figure the scheduler scores
with:

- per server: free cores, free memory, gamma_uf and gamma_nuf (sums of predicted P95 utilization times cores over the
  user-facing and the non-user-facing VMs of the server);
- per chassis: rho_peak (the same sum over every VM of the chassis) and rho_max (number of cores of the chassis).

The accumulators use the VMs' effective (predicted, post-resolve) attributes, because that is what a real scheduler
knows. The true P95 of every VM is accumulated separately (true_gamma, and true_gamma_uf for the user-facing VMs)
for the simulator's own bookkeeping.

Every effective P95 is a multiple of 1/8 (a bucket midpoint or 1.0), so the floating-point accumulators are exact and
removing a VM restores them bit for bit.

Servers are numbered 0..n_servers-1 chassis by chassis, i.e. server s lives in chassis s // blades_per_chassis.
The first io_cores cores of every blade host the I/O partition and are never given to VMs. The scheduler's N^cores is
the full number of cores of a blade.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import EffectiveAttributes
from miniOversubscription.Core.CoreExceptions.SchedulerExceptions import UnknownVm, ClusterInvariantBroken


logger = logging.getLogger(__name__)

FREE_CORE = -1
IO_CORE = -2


@dataclass(frozen=True)
class Topology:
    racks: int = 20
    chassis_per_rack: int = 3
    blades_per_chassis: int = 12
    cores_per_blade: int = 40
    io_cores: int = 2
    memory_gb_per_blade: float = 256.0

    def __post_init__(self):
        if min(self.racks, self.chassis_per_rack, self.blades_per_chassis, self.cores_per_blade) < 1:
            raise ClusterInvariantBroken('every topology dimension must be positive.', variables={'topology': self})
        if not 0 <= self.io_cores < self.cores_per_blade:
            raise ClusterInvariantBroken(f'io_cores={self.io_cores} leaves no core for VMs.',
                                         variables={'topology': self})

    @property
    def n_chassis(self) -> int:
        return self.racks * self.chassis_per_rack

    @property
    def n_servers(self) -> int:
        return self.n_chassis * self.blades_per_chassis

    @property
    def allocatable_cores(self) -> int:
        return self.cores_per_blade - self.io_cores

    @property
    def chassis_cores(self) -> int:
        return self.blades_per_chassis * self.cores_per_blade

    @classmethod
    def single_chassis(cls, **kwargs) -> Topology:
        return cls(racks=1, chassis_per_rack=1, **kwargs)


@dataclass(frozen=True)
class VmDescriptor:
    id: int
    cores: int
    memory_gb: float
    lifetime_hours: float
    subscription_id: str
    true_label: WorkloadLabel
    true_p95: float
    effective: EffectiveAttributes
    deployment_id: Optional[int] = None
    production: bool = True
    internal: bool = True
    arrival_s: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.cores < 1:
            raise ClusterInvariantBroken(f'VM {self.id} has {self.cores} cores.', variables={'vm': self})
        if not 0.0 <= self.true_p95 <= 1.0:
            raise ClusterInvariantBroken(f'VM {self.id} has a true P95 of {self.true_p95}.', variables={'vm': self})

    @property
    def lifetime_s(self) -> float:
        return self.lifetime_hours * 3600.0

    @property
    def departure_s(self) -> float:
        return self.arrival_s + self.lifetime_s


@dataclass(frozen=True)
class ServerLoad:
    total_cores: int
    free_cores: int
    free_memory_gb: float
    gamma_uf: float
    gamma_nuf: float


@dataclass(frozen=True)
class ChassisLoad:
    rho_peak: float
    rho_max: int


@dataclass(frozen=True)
class Placement:
    server: int
    cores: Tuple[int, ...]


class ClusterState:
    def __init__(self, topology: Topology = Topology()) -> None:
        self.topology = topology
        n, t = topology.n_servers, topology

        self.free_cores = np.full(n, t.allocatable_cores, dtype=np.int64)
        self.free_memory_gb = np.full(n, t.memory_gb_per_blade, dtype=float)
        self.gamma_uf = np.zeros(n)
        self.gamma_nuf = np.zeros(n)
        self.true_gamma = np.zeros(n)
        self.true_gamma_uf = np.zeros(n)
        self.vm_count = np.zeros(n, dtype=np.int64)
        self.rho_peak = np.zeros(t.n_chassis)

        self.core_owner = np.full((n, t.cores_per_blade), FREE_CORE, dtype=np.int64)
        self.core_owner[:, :t.io_cores] = IO_CORE

        self._vms: Dict[int, VmDescriptor] = dict()
        self._placements: Dict[int, Placement] = dict()
        self._server_vms: List[List[int]] = [list() for _ in range(n)]

    def __contains__(self, vm_id: int) -> bool:
        return vm_id in self._placements

    def __len__(self) -> int:
        return len(self._placements)

    # ======================================================================================================= TOPOLOGY
    @property
    def n_servers(self) -> int:
        return self.topology.n_servers

    @property
    def n_chassis(self) -> int:
        return self.topology.n_chassis

    @property
    def chassis_index(self) -> np.ndarray:
        return np.arange(self.n_servers) // self.topology.blades_per_chassis

    def chassis_of(self, server: int) -> int:
        return server // self.topology.blades_per_chassis

    def servers_of(self, chassis: int) -> range:
        b = self.topology.blades_per_chassis
        return range(chassis * b, (chassis + 1) * b)

    def server_name(self, server: int) -> str:
        t = self.topology
        chassis, blade = divmod(server, t.blades_per_chassis)
        rack, slot = divmod(chassis, t.chassis_per_rack)
        return f'r{rack:02d}-c{slot}-b{blade:02d}'

    # ========================================================================================================== LOADS
    def server_load(self, server: int) -> ServerLoad:
        return ServerLoad(total_cores=self.topology.cores_per_blade, free_cores=int(self.free_cores[server]),
                          free_memory_gb=float(self.free_memory_gb[server]), gamma_uf=float(self.gamma_uf[server]),
                          gamma_nuf=float(self.gamma_nuf[server]))

    def chassis_load(self, chassis: int) -> ChassisLoad:
        return ChassisLoad(rho_peak=float(self.rho_peak[chassis]), rho_max=self.topology.chassis_cores)

    def feasible(self, cores: int, memory_gb: float) -> np.ndarray:
        """Boolean mask of the servers with enough free cores and memory."""
        return (self.free_cores >= cores) & (self.free_memory_gb >= memory_gb)

    @property
    def empty_servers(self) -> int:
        return int(np.count_nonzero(self.vm_count == 0))

    @property
    def empty_server_ratio(self) -> float:
        return self.empty_servers / self.n_servers

    @property
    def allocated_cores(self) -> int:
        return int(self.n_servers * self.topology.allocatable_cores - self.free_cores.sum())

    # ============================================================================================================ VMS
    def vm(self, vm_id: int) -> VmDescriptor:
        try:
            return self._vms[vm_id]
        except KeyError:
            raise UnknownVm(vm_id, variables={'placed_vms': len(self._vms)})

    def placement(self, vm_id: int) -> Placement:
        try:
            return self._placements[vm_id]
        except KeyError:
            raise UnknownVm(vm_id, variables={'placed_vms': len(self._vms)})

    def vms_on(self, server: int) -> List[int]:
        return list(self._server_vms[server])

    def vms(self) -> List[VmDescriptor]:
        return list(self._vms.values())

    def commit(self, vm: VmDescriptor, server: int) -> Placement:
        """
        Binds the VM to the lowest-numbered free cores of the server and updates every accumulator.

        :raises ClusterInvariantBroken: if the VM is already placed or does not fit (the scheduler filters first).
        """

        if vm.id in self._placements:
            raise ClusterInvariantBroken(f'VM {vm.id} is already placed.', variables={'vm': vm, 'server': server})
        if self.free_cores[server] < vm.cores or self.free_memory_gb[server] < vm.memory_gb:
            raise ClusterInvariantBroken(f'VM {vm.id} does not fit on server {server}.',
                                         variables={'vm': vm, 'load': self.server_load(server)})

        cores = np.flatnonzero(self.core_owner[server] == FREE_CORE)[:vm.cores]
        self.core_owner[server, cores] = vm.id

        weight = vm.effective.p95_util * vm.cores
        self.free_cores[server] -= vm.cores
        self.free_memory_gb[server] -= vm.memory_gb
        if vm.effective.is_user_facing:
            self.gamma_uf[server] += weight
        else:
            self.gamma_nuf[server] += weight
        self.true_gamma[server] += vm.true_p95 * vm.cores
        if vm.true_label.is_user_facing:
            self.true_gamma_uf[server] += vm.true_p95 * vm.cores
        self.rho_peak[self.chassis_of(server)] += weight
        self.vm_count[server] += 1

        placement = Placement(server, tuple(int(c) for c in cores))
        self._vms[vm.id] = vm
        self._placements[vm.id] = placement
        self._server_vms[server].append(vm.id)
        return placement

    def release(self, vm_id: int) -> Placement:
        """Undoes commit() exactly. :raises UnknownVm: if the VM is not placed."""

        placement = self.placement(vm_id)
        vm = self._vms.pop(vm_id)
        del self._placements[vm_id]
        server = placement.server

        self.core_owner[server, list(placement.cores)] = FREE_CORE

        weight = vm.effective.p95_util * vm.cores
        self.free_cores[server] += vm.cores
        self.free_memory_gb[server] += vm.memory_gb
        if vm.effective.is_user_facing:
            self.gamma_uf[server] -= weight
        else:
            self.gamma_nuf[server] -= weight
        self.true_gamma[server] -= vm.true_p95 * vm.cores
        if vm.true_label.is_user_facing:
            self.true_gamma_uf[server] -= vm.true_p95 * vm.cores
        self.rho_peak[self.chassis_of(server)] -= weight
        self.vm_count[server] -= 1
        self._server_vms[server].remove(vm_id)
        return placement

    # ===================================================================================================== INVARIANTS
    def check_invariants(self) -> None:
        """:raises ClusterInvariantBroken: if the accumulators disagree with the core bindings."""

        t = self.topology
        vm_cores = (self.core_owner >= 0).sum(axis=1)
        io = (self.core_owner == IO_CORE).sum(axis=1)

        if np.any(vm_cores + self.free_cores + io != t.cores_per_blade):
            raise ClusterInvariantBroken('assigned cores and free cores do not add up.', variables={})
        if np.any(self.free_cores < 0) or np.any(self.free_memory_gb < 0):
            raise ClusterInvariantBroken('negative free resources.', variables={})
        if np.any(self.gamma_uf + self.gamma_nuf > t.cores_per_blade):
            raise ClusterInvariantBroken('P95 load above the number of cores.', variables={})

        per_chassis = (self.gamma_uf + self.gamma_nuf).reshape(self.n_chassis, t.blades_per_chassis).sum(axis=1)
        if not np.allclose(per_chassis, self.rho_peak):
            raise ClusterInvariantBroken('chassis peak load disagrees with its servers.', variables={})
