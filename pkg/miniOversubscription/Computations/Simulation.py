"""
Simulation.py runs a cluster for a number of simulated days: VMs arrive and depart, the scheduler places them, their
utilization signals drive the power of every blade, and every chassis caps itself against its budget. At the end it
reports the metrics placement policies and budgets are judged by:

- deployment_failure_rate: rejected deployment requests over all deployment requests;
- avg_empty_server_ratio: time average of the share of servers without any VM;
- stddev_avg_server_score and stddev_avg_chassis_score: every server (chassis) score is averaged over time first,
  then the standard deviation is taken across servers (chassis). The server score is
  (1 + (gamma_nuf - gamma_uf) / N_cores) / 2 and the chassis score 1 - rho_peak / rho_max, both computed with the
  VMs' true labels and P95 utilizations;
- capping events, RAPL engagements and throttled core-seconds, per class of the throttled VMs.

TIME
Arrivals and departures are events of a heap queue (departures first when both happen at the same time). Power is
evaluated on slots of power_slot_s seconds (300 s by default) on which every utilization signal is constant; the
events of (t_k-1, t_k] are applied before slot k starts. The 200 ms capping ticks are simulated only for a chassis
whose draw reaches its alert threshold or that is still capping: a quiescent chassis under its threshold cannot change
until the utilization does.

Within a slot a capping event that starts from a quiescent chassis repeats itself: the cap is lifted after
cap_duration_s, every core returns to the maximum frequency, the chassis is exactly as it was when the event started
and the same alert starts the same event again. The first such cycle is simulated tick by tick and the remaining full
cycles of the slot are replicated from it.

    >>> result = run(load_bundled('fleet.config'))
    >>> result.metrics.deployment_failure_rate
    >>> result.write()

The draw history (one reading per chassis per slot: the uncapped demand and the average capped draw) is recorded when
simulation.record_draws is set. Its demand column is what the oversubscription budget search takes as input.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, asdict, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import resolve
from miniOversubscription.Core.Cluster import ClusterState
from miniOversubscription.Core.Scheduler import place_deployment, remove
from miniOversubscription.Core.CoreExceptions.SchedulerExceptions import DeploymentFailure
from miniOversubscription.Core.Capping import ChassisCapping, CappingEvent, CappingEventLog, TickRecord
from miniOversubscription.Computations.TraceGenerator import Trace, VmRequest, generate_trace
from miniOversubscription.Computations.Signals import utilization_many
from miniOversubscription.Utilities.Config import RunConfig
from miniOversubscription.Utilities.File import File


logger = logging.getLogger(__name__)

DEPARTURE, ARRIVAL = 0, 1
CLASSES = (WorkloadLabel.USER_FACING.value, WorkloadLabel.NON_USER_FACING.value)


# ======================================================================================================== EVENT LOG
class EventKind(str, Enum):
    ARRIVAL = 'arrival'
    DEPARTURE = 'departure'
    FAILURE = 'failure'


class EventLog:
    """
    Append-only scheduling record of a run: one row per placed VM, per departed VM and per rejected deployment
    (vm_id and server -1, cores the total the deployment asked for).
    """

    COLUMNS = ('t', 'kind', 'deployment_id', 'vm_id', 'server', 'cores')

    def __init__(self) -> None:
        self._rows: List[tuple] = list()

    def __len__(self) -> int:
        return len(self._rows)

    def record(self, t: float, kind: EventKind, deployment_id: int, vm_id: int = -1, server: int = -1,
               cores: int = 0) -> None:
        self._rows.append((t, kind.value, deployment_id, vm_id, server, cores))

    def count(self, kind: EventKind) -> int:
        return sum(1 for row in self._rows if row[1] == kind.value)

    def deployment_failure_rate(self) -> float:
        """Recomputed from the rows alone: rejected deployments over rejected plus placed ones."""
        failed = self.count(EventKind.FAILURE)
        placed = len({row[2] for row in self._rows if row[1] == EventKind.ARRIVAL.value})
        return failed / (failed + placed) if failed + placed else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._rows, columns=list(self.COLUMNS))

    def write_csv(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_frame(self.to_frame())


# ========================================================================================================== METRICS
@dataclass(frozen=True)
class SimMetrics:
    seed: int
    config_hash: str
    days: float
    deployment_requests: int
    deployment_failures: int
    deployment_failure_rate: float
    vm_arrivals: int
    vm_departures: int
    avg_empty_server_ratio: float
    stddev_avg_chassis_score: float
    stddev_avg_server_score: float
    avg_chassis_draw_w: float
    max_chassis_draw_w: float
    capping_events: int
    capping_events_per_class: Dict[str, int]
    throttled_core_seconds_per_class: Dict[str, float]
    rapl_events: int
    infeasible_events: int
    polls: int
    alert_poll_fraction: float
    capped_poll_fraction: float
    over_budget_fraction: float
    longest_over_budget_s: float

    def as_dict(self) -> dict:
        return asdict(self)

    def write_json(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_json(self.as_dict())


class _Streak:
    """Longest run of consecutive over-budget ticks of one chassis."""

    def __init__(self) -> None:
        self.current = 0
        self.longest = 0

    def feed(self, over: bool) -> None:
        self.current = self.current + 1 if over else 0
        self.longest = max(self.longest, self.current)

    def feed_repeated(self, flags: Sequence[bool], times: int) -> None:
        """flags fed `times` times in a row. Two passes see every run, the one across the seam included."""
        if times <= 0:
            return
        if all(flags):
            self.current += len(flags) * times
            self.longest = max(self.longest, self.current)
            return
        for _ in range(min(times, 2)):
            for over in flags:
                self.feed(over)


@dataclass
class _TickCounters:
    polls: int = 0
    alerts: int = 0
    capped: int = 0
    over_budget_readings: int = 0
    readings: int = 0


# ======================================================================================================= SIMULATION
@dataclass(frozen=True)
class SimulationResult:
    config: RunConfig
    metrics: SimMetrics
    events: EventLog
    capping: CappingEventLog
    draws: Optional[pd.DataFrame] = None

    def write(self, directory: Optional[str] = None) -> None:
        """Metrics JSON, capping-event CSV, event-log CSV and, when recorded, the draw history."""
        output = self.config.output
        directory = directory if directory is not None else output.directory
        self.metrics.write_json(output.metrics, directory)
        self.capping.write_csv(output.capping_events, directory)
        self.events.write_csv(output.event_log, directory)
        if self.draws is not None:
            out = File()
            out.bind_output(output.draws, directory)
            out.write_frame(self.draws)


def load_trace(config: RunConfig) -> Trace:
    """The trace file named by the configuration, or a trace generated from its trace section."""
    if config.simulation.trace_path:
        return Trace.read_csv(config.simulation.trace_path)
    return generate_trace(config.trace)


class Simulation:
    """
    One run. All state is confined to the instance; the same configuration and trace always give bit-identical
    metrics.

    :raises InfeasibleBudget: on construction, if the chassis budget cannot be met even at idle.
    """

    def __init__(self, config: RunConfig, trace: Optional[Trace] = None) -> None:
        self.config = config
        self.trace = trace if trace is not None else load_trace(config)

        topology = config.cluster
        self.cluster = ClusterState(topology)
        self.scheduler = config.scheduler.scheduler_config()
        self.provider = config.prediction.make(config.seed)
        self.signals = config.simulation.signals()
        self.priorities = config.capping.priorities()
        self.capping_active = config.capping.active

        self.chassis = [ChassisCapping(c, topology.blades_per_chassis, config.power, config.capping.manager(),
                                       config.capping.controller(), enabled=self.capping_active)
                        for c in range(topology.n_chassis)]

        self.slot_s = config.simulation.power_slot_s
        self.poll_ms = config.capping.poll_interval_ms
        self.ticks_per_slot = int(round(self.slot_s * 1000 / self.poll_ms))
        self.cycle_ticks = int(math.ceil(round(config.capping.cap_duration_s * 1000 / self.poll_ms, 6)))

        requests = self.trace.requests
        self._ids = np.array(sorted(r.vm_id for r in requests), dtype=np.int64)
        rows = np.searchsorted(self._ids, np.array([r.vm_id for r in requests], dtype=np.int64))
        self._server = np.full(len(requests), -1, dtype=np.int64)
        self._cores = np.zeros(len(requests))
        self._uf = np.zeros(len(requests), dtype=bool)
        self._p95 = np.zeros(len(requests))
        self._seed = np.zeros(len(requests), dtype=np.int64)
        for row, r in zip(rows.tolist(), requests):
            self._cores[row] = r.cores
            self._uf[row] = r.true_label.is_user_facing
            self._p95[row] = r.true_p95
            self._seed[row] = r.seed

        self._queue: List[tuple] = list()
        for index, group in enumerate(self.trace.deployments()):
            heapq.heappush(self._queue, (group[0].arrival_s, ARRIVAL, index, group))

        self._dirty = [set() for _ in range(topology.n_chassis)]
        self._streaks = [_Streak() for _ in range(topology.n_chassis)]
        self.events = EventLog()
        self._requests = 0
        self._failures = 0
        self._arrivals = 0
        self._departures = 0

        n, c = topology.n_servers, topology.n_chassis
        self._server_score_sum = np.zeros(n)
        self._chassis_score_sum = np.zeros(c)
        self._empty_sum = 0.0
        self._draw_sum = 0.0
        self._draw_max = 0.0
        self._measured_slots = 0
        self._ticks = _TickCounters()
        self._draw_rows: List[tuple] = list()

    # ============================================================================================== SCHEDULING
    def _row(self, vm_id: int) -> int:
        return int(np.searchsorted(self._ids, vm_id))

    def _arrive(self, t: float, group: List[VmRequest]) -> None:
        min_confidence = self.config.prediction.min_confidence
        vms = [r.descriptor(resolve(self.provider.predict(r.features, r.truth), min_confidence)) for r in group]
        self._requests += 1

        try:
            servers = place_deployment(vms, self.cluster, self.scheduler)
        except DeploymentFailure:
            self._failures += 1
            self.events.record(t, EventKind.FAILURE, group[0].deployment_id, cores=sum(r.cores for r in group))
            return

        for vm, server in zip(vms, servers):
            self._server[self._row(vm.id)] = server
            self._dirty[self.cluster.chassis_of(server)].add(server)
            heapq.heappush(self._queue, (vm.departure_s, DEPARTURE, vm.id, None))
            self.events.record(t, EventKind.ARRIVAL, vm.deployment_id, vm.id, server, vm.cores)
            self._arrivals += 1

    def _depart(self, t: float, vm_id: int) -> None:
        deployment_id = self.cluster.vm(vm_id).deployment_id
        placement = remove(vm_id, self.cluster)
        self._server[self._row(vm_id)] = -1
        self._dirty[self.cluster.chassis_of(placement.server)].add(placement.server)
        self.events.record(t, EventKind.DEPARTURE, deployment_id, vm_id, placement.server,
                           len(placement.cores))
        self._departures += 1

    def _advance(self, until_s: float) -> None:
        """Processes every queued event up to and including until_s."""
        while self._queue and self._queue[0][0] <= until_s:
            t, kind, key, group = heapq.heappop(self._queue)
            if kind == DEPARTURE:
                self._depart(t, key)
            else:
                self._arrive(t, group)

    # =================================================================================================== POWER
    def _refresh(self, chassis: int) -> None:
        b = self.config.cluster.blades_per_chassis
        for server in sorted(self._dirty[chassis]):
            self.chassis[chassis].assign(server - chassis * b, self.cluster.core_owner[server],
                                         self.priorities.server_tiers(self.cluster, server))
        self._dirty[chassis].clear()

    def _core_utilization(self, chassis: int, vm_utilization: np.ndarray) -> np.ndarray:
        servers = self.cluster.servers_of(chassis)
        owners = self.cluster.core_owner[servers.start:servers.stop]
        if self._ids.size == 0:
            return np.zeros(owners.shape)
        rows = np.minimum(np.searchsorted(self._ids, np.maximum(owners, 0)), self._ids.size - 1)
        return np.where(owners >= 0, vm_utilization[rows], 0.0)

    def _slot(self, k: int) -> None:
        spec, topology = self.config.power, self.config.cluster
        t_k = k * self.slot_s
        measuring = t_k >= self.config.simulation.warmup_s

        alive = np.flatnonzero(self._server >= 0)
        utilization = utilization_many(self._uf[alive], self._p95[alive], self._seed[alive], k, self.signals)
        load = np.bincount(self._server[alive], weights=utilization * self._cores[alive],
                           minlength=topology.n_servers)
        server_w = spec.idle_w + spec.dynamic_range_w * load / spec.cores
        demand = server_w.reshape(topology.n_chassis, topology.blades_per_chassis).sum(axis=1)

        if measuring:
            self._measure(demand)

        capped = demand.copy()
        if self.capping_active:
            vm_utilization = np.zeros(self._ids.size)
            vm_utilization[alive] = utilization
            for c, chassis in enumerate(self.chassis):
                if measuring:
                    self._ticks.readings += 1
                    self._ticks.over_budget_readings += bool(demand[c] >= chassis.manager.chassis_budget_w)
                if chassis.quiescent() and demand[c] < chassis.manager.alert_threshold_w:
                    self._streaks[c].feed(False)
                    continue
                self._refresh(c)
                chassis.set_utilization(self._core_utilization(c, vm_utilization))
                capped[c] = self._run_ticks(c, k, measuring)
            if measuring:
                self._ticks.polls += len(self.chassis) * self.ticks_per_slot

        if self.config.simulation.record_draws:
            self._draw_rows.extend((c, float(t_k), float(demand[c]), float(capped[c]))
                                   for c in range(topology.n_chassis))

    def _measure(self, demand: np.ndarray) -> None:
        cluster, topology = self.cluster, self.config.cluster
        gamma_nuf = cluster.true_gamma - cluster.true_gamma_uf
        self._server_score_sum += 0.5 * (1.0 + (gamma_nuf - cluster.true_gamma_uf) / topology.cores_per_blade)
        per_chassis = cluster.true_gamma.reshape(topology.n_chassis, topology.blades_per_chassis).sum(axis=1)
        self._chassis_score_sum += 1.0 - per_chassis / topology.chassis_cores
        self._empty_sum += cluster.empty_server_ratio
        self._draw_sum += float(demand.mean())
        self._draw_max = max(self._draw_max, float(demand.max()))
        self._measured_slots += 1

    # ================================================================================================= CAPPING
    def _tick_time(self, tick: int) -> float:
        return tick * self.poll_ms / 1000.0

    def _count(self, c: int, record: TickRecord, measuring: bool) -> None:
        chassis = self.chassis[c]
        over = record.draw_w >= chassis.manager.chassis_budget_w
        self._streaks[c].feed(over)
        if measuring:
            self._ticks.alerts += record.alert
            self._ticks.capped += chassis.event is not None

    def _run_ticks(self, c: int, k: int, measuring: bool) -> float:
        """Ticks one chassis through slot k. Returns its average draw over the slot."""

        chassis = self.chassis[c]
        n, first = self.ticks_per_slot, k * self.ticks_per_slot
        draw_sum = 0.0
        cycle_start: Optional[int] = None
        cycle: List[TickRecord] = list()

        i = 0
        while i < n:
            if chassis.quiescent() and chassis.draw() < chassis.manager.alert_threshold_w:
                break
            t = self._tick_time(first + i)
            record = chassis.tick(t)
            self._count(c, record, measuring)
            draw_sum += record.draw_w

            if cycle_start is None and chassis.event is not None and chassis.event.start_s == t:
                cycle_start, cycle = i, list()
            if cycle_start is not None:
                cycle.append(record)
            i += 1

            if cycle_start is not None and i == cycle_start + self.cycle_ticks:
                replicated, extra = self._replicate(c, cycle_start, cycle, first, measuring)
                i += replicated
                draw_sum += extra
                cycle_start = None

        if i < n:
            self._streaks[c].feed(False)
            draw_sum += (n - i) * chassis.draw()
        return draw_sum / n

    def _replicate(self, c: int, start: int, cycle: List[TickRecord], first: int,
                   measuring: bool) -> Tuple[int, float]:
        """
        Fast-forwards over the full copies of the capping cycle that started at tick `start` of the slot and has just
        been simulated. Returns the number of ticks skipped and the sum of their draws.
        """

        chassis = self.chassis[c]
        event = chassis.event
        copies = (self.ticks_per_slot - start) // self.cycle_ticks - 1
        if copies < 1 or event is None or event.start_s != self._tick_time(first + start):
            return 0, 0.0

        period = self.cycle_ticks
        state = (chassis.freq.copy(), chassis.rapl.copy(), chassis.feedback.copy())

        chassis.lift(self._tick_time(first + start + period))
        for j in range(1, copies):
            chassis.log.append(_copy_event(event, self._tick_time(first + start + j * period),
                                           self._tick_time(first + start + (j + 1) * period)))
        chassis.freq[:], chassis.rapl[:], chassis.feedback[:] = state
        chassis.event = _copy_event(event, self._tick_time(first + start + copies * period), None)

        over = [r.draw_w >= chassis.manager.chassis_budget_w for r in cycle]
        self._streaks[c].feed_repeated(over, copies)
        if measuring:
            self._ticks.alerts += copies * sum(r.alert for r in cycle)
            self._ticks.capped += copies * period
        return copies * period, copies * sum(r.draw_w for r in cycle)

    # ===================================================================================================== RUN
    def run(self) -> SimulationResult:
        horizon_s = self.config.simulation.horizon_s
        slots = int(math.ceil(horizon_s / self.slot_s))
        logger.info('simulating %d slots of %d s on %d servers (%d VMs in the trace)', slots, self.slot_s,
                    self.config.cluster.n_servers, len(self.trace))

        for k in range(slots):
            self._advance(k * self.slot_s)
            self._slot(k)

        end_s = slots * self.slot_s
        capping = CappingEventLog()
        for chassis in self.chassis:
            chassis.close(end_s)
            capping.extend(list(chassis.log))
        self.cluster.check_invariants()

        metrics = self._metrics(capping)
        draws = None
        if self.config.simulation.record_draws:
            draws = pd.DataFrame(self._draw_rows, columns=['chassis_id', 'timestamp', 'watts', 'capped_watts'])
        logger.info('done: %d deployment requests, %.2f%% rejected, %d capping events', metrics.deployment_requests,
                    100 * metrics.deployment_failure_rate, metrics.capping_events)
        return SimulationResult(self.config, metrics, self.events, capping, draws)

    def _metrics(self, capping: CappingEventLog) -> SimMetrics:
        slots = max(self._measured_slots, 1)
        warmup_s = self.config.simulation.warmup_s
        events = [e for e in capping if e.start_s >= warmup_s]

        per_class = {name: 0 for name in CLASSES}
        seconds = {name: 0.0 for name in CLASSES}
        for event in events:
            touched = set()
            for vm_id, core_seconds in sorted(event.throttled_core_seconds.items()):
                name = CLASSES[0] if self._uf[self._row(vm_id)] else CLASSES[1]
                seconds[name] += core_seconds
                touched.add(name)
            for name in touched:
                per_class[name] += 1

        ticks = self._ticks
        polls = max(ticks.polls, 1)
        return SimMetrics(
            seed=self.config.seed,
            config_hash=self.config.config_hash(),
            days=self.config.simulation.days,
            deployment_requests=self._requests,
            deployment_failures=self._failures,
            deployment_failure_rate=self._failures / self._requests if self._requests else 0.0,
            vm_arrivals=self._arrivals,
            vm_departures=self._departures,
            avg_empty_server_ratio=self._empty_sum / slots,
            stddev_avg_chassis_score=float(np.std(self._chassis_score_sum / slots)),
            stddev_avg_server_score=float(np.std(self._server_score_sum / slots)),
            avg_chassis_draw_w=self._draw_sum / slots,
            max_chassis_draw_w=self._draw_max,
            capping_events=len(events),
            capping_events_per_class=per_class,
            throttled_core_seconds_per_class=seconds,
            rapl_events=sum(e.rapl_engaged for e in events),
            infeasible_events=sum(e.infeasible for e in events),
            polls=ticks.polls,
            alert_poll_fraction=ticks.alerts / polls,
            capped_poll_fraction=ticks.capped / polls,
            over_budget_fraction=ticks.over_budget_readings / ticks.readings if ticks.readings else 0.0,
            longest_over_budget_s=max(s.longest for s in self._streaks) * self.poll_ms / 1000.0,
        )


def _copy_event(event: CappingEvent, start_s: float, end_s: Optional[float]) -> CappingEvent:
    return replace(event, start_s=start_s, end_s=end_s, min_frequency=dict(event.min_frequency),
                   throttled_core_seconds=defaultdict(float, event.throttled_core_seconds))


def run(config: RunConfig, trace: Optional[Trace] = None) -> SimulationResult:
    """
    :raises InfeasibleBudget: at startup, when a chassis budget is below the idle floor.
    :raises MalformedInput: when the configured trace file cannot be read.
    """
    return Simulation(config, trace).run()
