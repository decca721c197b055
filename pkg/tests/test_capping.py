import json

import numpy as np
import pandas as pd
import pytest

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import EffectiveAttributes
from miniOversubscription.Core.Cluster import ClusterState, Topology, VmDescriptor, IO_CORE
from miniOversubscription.Core.PowerModel import ServerPowerSpec
from miniOversubscription.Core.Capping import (
    ChassisCapping,
    ChassisManagerConfig,
    ControllerConfig,
    ControllerAction,
    CappingMode,
    PriorityClasses,
    ThrottleTier,
)
from miniOversubscription.Core.CoreExceptions.CappingExceptions import InfeasibleBudget, InvalidCappingConfig


SPEC = ServerPowerSpec()
LOW, NUF, PROT = int(ThrottleTier.LOW_PRIORITY), int(ThrottleTier.PRODUCTION_NUF), int(ThrottleTier.PROTECTED)


def chassis_of(layout, budget_w=2450.0, blades=12, **controller):
    """
    layout: one list per blade of (cores, tier, utilization) groups. Every blade gets two idle protected I/O cores;
    every group becomes one VM.
    """

    chassis = ChassisCapping(0, blades, SPEC, ChassisManagerConfig(chassis_budget_w=budget_w),
                             ControllerConfig(**controller))
    utilization = np.zeros((blades, SPEC.cores))
    vm_id = 0
    for blade, groups in enumerate(layout):
        owners = np.full(SPEC.cores, -1)
        tiers = np.full(SPEC.cores, -1)
        owners[:2], tiers[:2] = IO_CORE, PROT
        start = 2
        for cores, tier, util in groups:
            owners[start:start + cores] = vm_id
            tiers[start:start + cores] = tier
            utilization[blade, start:start + cores] = util
            start += cores
            vm_id += 1
        chassis.assign(blade, owners, tiers)
    chassis.set_utilization(utilization)
    return chassis


def balanced():
    return chassis_of([[(4, PROT, 0.9)] * 3 + [(6, NUF, 0.9)] * 3 for _ in range(12)])


def imbalanced():
    return chassis_of([[(4, PROT, 0.9)] * 6 for _ in range(6)] + [[(6, NUF, 0.9)] * 6 for _ in range(6)])


def run(chassis, ticks=150):
    return [chassis.tick(0.2 * i) for i in range(ticks)]


def longest_run(flags):
    best = current = 0
    for flag in flags:
        current = current + 1 if flag else 0
        best = max(best, current)
    return best


# ------------------------------------------------------------------------------------------------------------ config
@pytest.mark.parametrize('kwargs', [dict(chassis_budget_w=0), dict(chassis_budget_w=2450, poll_interval_ms=0),
                                    dict(chassis_budget_w=2450, alert_threshold_fraction=1.0)])
def test_invalid_manager_config(kwargs):
    with pytest.raises(InvalidCappingConfig):
        ChassisManagerConfig(**kwargs)


@pytest.mark.parametrize('kwargs', [dict(step_cores=0), dict(cap_duration_s=0), dict(server_target_fraction=1.2),
                                    dict(mode='per-core')])
def test_invalid_controller_config(kwargs):
    with pytest.raises((InvalidCappingConfig, ValueError)):
        ControllerConfig(**kwargs)


def test_budgets():
    chassis = balanced()
    assert chassis.manager.alert_threshold_w == pytest.approx(2401.0)
    assert chassis.even_share_w == pytest.approx(2450 / 12)
    assert chassis.target_w < chassis.even_share_w


def test_budget_below_idle_is_infeasible():
    with pytest.raises(InfeasibleBudget) as error:
        ChassisCapping(3, 12, SPEC, ChassisManagerConfig(chassis_budget_w=1200))
    assert error.value.where == 'chassis 3'
    assert error.value.cap_w == pytest.approx(100.0)


# ----------------------------------------------------------------------------------------------------------- tiers
def vm(vm_id, label, production=True, internal=True):
    return VmDescriptor(id=vm_id, cores=4, memory_gb=16, lifetime_hours=1, subscription_id='s', true_label=label,
                        true_p95=0.5, effective=EffectiveAttributes(label, 0.625), production=production,
                        internal=internal)


def test_tier_of():
    classes = PriorityClasses()
    assert classes.tier_of(vm(1, WorkloadLabel.USER_FACING, production=False)) is ThrottleTier.PROTECTED
    assert classes.tier_of(vm(2, WorkloadLabel.NON_USER_FACING)) is ThrottleTier.PRODUCTION_NUF
    assert classes.tier_of(vm(3, WorkloadLabel.NON_USER_FACING, production=False)) is ThrottleTier.LOW_PRIORITY
    assert PriorityClasses(internal_is_low_priority=True).tier_of(
        vm(4, WorkloadLabel.NON_USER_FACING)) is ThrottleTier.LOW_PRIORITY


def test_server_tiers():
    cluster = ClusterState(Topology.single_chassis())
    cluster.commit(vm(1, WorkloadLabel.USER_FACING), 0)
    cluster.commit(vm(2, WorkloadLabel.NON_USER_FACING), 0)
    tiers = PriorityClasses().server_tiers(cluster, 0)
    assert tiers[:2].tolist() == [PROT, PROT]
    assert tiers[2:6].tolist() == [PROT] * 4
    assert tiers[6:10].tolist() == [NUF] * 4
    assert np.all(tiers[10:] == int(ThrottleTier.UNASSIGNED))


# -------------------------------------------------------------------------------------------------------- in-band
def mixed_blade_chassis():
    # even share 150 W, target about 146.7 W; the mixed blade draws 171.4 W uncapped
    return chassis_of([[(4, LOW, 1.0), (4, NUF, 1.0), (4, PROT, 1.0)]] + [[] for _ in range(11)], budget_w=1800)


def test_alert_below_target_does_nothing():
    chassis = mixed_blade_chassis()
    assert chassis.on_alert(1, 0.0) is ControllerAction.NONE
    assert not chassis.feedback[1]


def test_alert_throttles_tiers_lowest_first():
    chassis = mixed_blade_chassis()
    freq = chassis.freq[0]

    assert chassis.on_alert(0, 0.0) is ControllerAction.THROTTLED
    assert np.all(freq[2:6] == 0.5) and np.all(freq[6:14] == 1.0)

    assert chassis.on_alert(0, 0.2) is ControllerAction.THROTTLED
    assert np.all(freq[2:10] == 0.5) and np.all(freq[10:14] == 1.0)

    assert chassis.server_power(0) < chassis.target_w
    assert chassis.protection_holds(0)


def test_nothing_left_to_throttle():
    chassis = chassis_of([[(30, PROT, 1.0)]] + [[] for _ in range(11)], budget_w=1800)
    assert chassis.on_alert(0, 0.0) is ControllerAction.NOTHING_TO_THROTTLE
    assert np.all(chassis.freq[0] == 1.0)


def test_full_server_mode_ignores_alerts():
    chassis = chassis_of([[(12, NUF, 1.0)]] + [[] for _ in range(11)], budget_w=1800, mode=CappingMode.FULL_SERVER)
    assert chassis.on_alert(0, 0.0) is ControllerAction.NONE


def test_feedback_raises_the_most_protected_tier_first():
    chassis = mixed_blade_chassis()
    chassis.on_alert(0, 0.0)
    chassis.on_alert(0, 0.2)

    assert chassis.feedback_step(0, 0.4) == 4
    assert np.allclose(chassis.freq[0, 6:10], 0.55)
    assert np.all(chassis.freq[0, 2:6] == 0.5)


def test_feedback_never_exceeds_target():
    chassis = mixed_blade_chassis()
    chassis.on_alert(0, 0.0)
    chassis.on_alert(0, 0.2)
    raised = list()
    for i in range(200):
        raised.append(chassis.feedback_step(0, 0.4 + 0.2 * i))
        assert chassis.server_power(0) <= chassis.target_w + 1e-9
        assert chassis.protection_holds(0)
    assert raised[-1] == 0
    assert sum(raised) > 0


def test_feedback_stops_when_everything_is_restored():
    chassis = chassis_of([[(4, NUF, 0.1)], [(30, NUF, 1.0)]] + [[] for _ in range(10)], budget_w=2400)
    chassis.freq[0, 2:6] = 0.5
    chassis.feedback[0] = True
    for i in range(20):
        chassis.feedback_step(0, 0.2 * i)
    assert np.all(chassis.freq[0] == 1.0)
    assert not chassis.feedback[0]


# ------------------------------------------------------------------------------------------------------------ RAPL
def test_rapl_steps_down_to_the_floor_then_fails():
    chassis = chassis_of([[(38, PROT, 1.0)]] + [[] for _ in range(11)], budget_w=1800)
    for i in range(10):
        assert chassis.rapl_enforce(0, 0.2 * i)
    assert chassis.rapl[0] == pytest.approx(0.5)
    with pytest.raises(InfeasibleBudget):
        chassis.rapl_enforce(0, 2.0)


def test_rapl_leaves_compliant_blades_alone():
    chassis = chassis_of([[(4, PROT, 0.5)]] + [[] for _ in range(11)], budget_w=1800)
    assert not chassis.rapl_enforce(0, 0.0)
    assert chassis.rapl[0] == 1.0


def test_infeasible_blade_is_reported_during_a_run():
    chassis = chassis_of([[(38, PROT, 1.0)]] * 12, budget_w=1800)
    run(chassis, ticks=20)
    assert chassis.event.infeasible
    assert chassis.event.rapl_engaged


# ------------------------------------------------------------------------------------------------------ experiment
def test_balanced_chassis_spares_user_facing_cores():
    chassis = balanced()
    assert chassis.draw() == pytest.approx(12 * 245.65)

    protected = chassis.tiers == PROT
    for record in run(chassis):
        assert np.all(chassis.effective_frequency()[protected] == 1.0)
        assert record.draw_w <= chassis.manager.chassis_budget_w
        assert not record.rapl_active

    assert chassis.event is not None and not chassis.event.rapl_engaged
    assert chassis.event.tier_min_frequency(ThrottleTier.PRODUCTION_NUF) == 0.5
    assert chassis.event.tier_min_frequency(ThrottleTier.PROTECTED) == 1.0


def test_imbalanced_chassis_needs_rapl():
    chassis = imbalanced()
    records = run(chassis)

    assert chassis.event.rapl_engaged
    assert chassis.event.tier_min_frequency(ThrottleTier.PROTECTED) < 1.0
    assert longest_run(r.draw_w > chassis.manager.chassis_budget_w for r in records) <= 10
    assert records[-1].draw_w <= chassis.manager.chassis_budget_w


def test_cap_lifts_after_its_duration():
    chassis = imbalanced()
    run(chassis)
    assert len(chassis.log) == 0

    chassis.tick(30.0)
    assert len(chassis.log) == 1
    event = next(iter(chassis.log))
    assert event.closed and event.duration_s == pytest.approx(30.0)
    # the restored chassis is over threshold again: a new event starts in the same tick
    assert chassis.event is not None and chassis.event.start_s == 30.0


def test_lift_restores_every_core():
    chassis = imbalanced()
    run(chassis, ticks=50)
    chassis.lift(10.0)
    assert np.all(chassis.effective_frequency() == 1.0)
    assert chassis.quiescent()


def test_disabled_capping_only_measures():
    chassis = ChassisCapping(0, 12, SPEC, ChassisManagerConfig(chassis_budget_w=1000), enabled=False)
    record = chassis.tick(0.0)
    assert record.draw_w == pytest.approx(12 * 112.0)
    assert not record.alert and chassis.event is None


def test_reassigned_cores_run_at_full_speed():
    chassis = balanced()
    chassis.tick(0.0)
    owners, tiers = chassis.owners[0].copy(), chassis.tiers[0].copy()
    owners[20:26] = 99
    chassis.assign(0, owners, tiers)
    assert np.all(chassis.freq[0, 20:26] == 1.0)


def test_throttled_core_seconds():
    chassis = balanced()
    chassis.tick(0.0)
    # 36 NUF VMs of 6 cores, all at f_min for one poll interval
    assert len(chassis.event.throttled_core_seconds) == 36
    assert all(v == pytest.approx(1.2) for v in chassis.event.throttled_core_seconds.values())


def test_event_log_export(tmp_path):
    chassis = imbalanced()
    run(chassis)
    chassis.close(30.0)

    chassis.log.write_csv('events.csv', str(tmp_path))
    chassis.log.write_json('events.json', str(tmp_path))

    frame = pd.read_csv(tmp_path / 'events.csv')
    assert list(frame.columns) == list(chassis.log.COLUMNS)
    assert len(frame) == 1 and bool(frame.loc[0, 'rapl_engaged'])

    events = json.loads((tmp_path / 'events.json').read_text())
    assert events[0]['min_frequency']['production_nuf'] == 0.5
