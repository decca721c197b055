import math

import pytest

from miniOversubscription.Core.Criticality import WorkloadLabel
from miniOversubscription.Core.Prediction import VmFeatures, GroundTruth
from miniOversubscription.Core.PowerModel import DEFAULT_EXPONENT
from miniOversubscription.Utilities.Config import (
    RunConfig,
    CappingSection,
    PredictionSection,
    SchedulerSection,
    load,
    load_bundled,
    parse_assignment,
)
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError, UnknownConfigKeys, MalformedInput


@pytest.fixture(scope='module')
def bundled():
    return load_bundled()


# ---------------------------------------------------------------------------------------------------------- defaults
def test_defaults_round_trip():
    config = RunConfig()
    assert RunConfig.from_dict(config.as_dict()) == config
    assert RunConfig.from_dict({}) == config


def test_write_and_load(tmp_path):
    config = RunConfig().with_overrides({'seed': 9, 'capping.chassis_budget_w': 2600.0, 'trace.capacity_cores': 500})
    config.write_json('run.config', str(tmp_path))
    assert load(str(tmp_path / 'run.config')) == config


def test_bundled_fleet(bundled):
    assert bundled.seed == 0
    assert bundled.cluster.n_servers == 720
    assert bundled.trace.vm_size.to_pairs()[0] == [1, 0.33]
    assert bundled.power.dyn_exponent == pytest.approx(DEFAULT_EXPONENT, rel=1e-9)
    assert bundled.capping.server_target_fraction == pytest.approx(225 / 230)
    assert not bundled.capping.active
    assert bundled.as_dict()['trace']['capacity_cores'] is None


# ------------------------------------------------------------------------------------------------------ shared keys
def test_seed_and_horizon_reach_the_trace():
    config = RunConfig().with_overrides({'seed': 42, 'simulation.days': 3})
    assert config.trace.seed == 42
    assert config.trace.horizon_days == 3


def test_capacity_follows_the_cluster_unless_given():
    small = RunConfig().with_overrides({'cluster.racks': 1})
    assert small.trace.capacity_cores == 1 * 3 * 12 * 38

    pinned = RunConfig().with_overrides({'trace.capacity_cores': 500, 'cluster.racks': 1})
    assert pinned.trace.capacity_cores == 500
    assert pinned.as_dict()['trace']['capacity_cores'] == 500


# ------------------------------------------------------------------------------------------------------------- hash
def test_hash_is_stable_and_sensitive():
    config = RunConfig()
    assert config.config_hash() == RunConfig().config_hash()
    assert len(config.config_hash()) == 64
    assert config.with_overrides({'scheduler.alpha': 0.0}).config_hash() != config.config_hash()
    assert config.with_overrides({'seed': 1}).config_hash() != config.config_hash()


def test_output_paths_do_not_change_the_hash():
    config = RunConfig()
    moved = config.with_overrides({'output.directory': 'elsewhere', 'output.metrics': 'm.json'})
    assert moved.output.directory == 'elsewhere'
    assert moved.config_hash() == config.config_hash()


# ------------------------------------------------------------------------------------------------------- validation
@pytest.mark.parametrize('data', [
    {'sed': 1},
    {'capping': {'budget': 2450}},
    {'trace': {'horizon_days': 3}},
    {'power': {'f_max': 1.0}},
    {'prediction': {'provider': 'noisy', 'parameters': {'accuracy': 0.9}}},
])
def test_unknown_keys(data):
    with pytest.raises(UnknownConfigKeys):
        RunConfig.from_dict(data)


@pytest.mark.parametrize('data', [
    {'schema_version': 2},
    {'seed': -1},
    {'seed': 'seven'},
    {'seed': True},
    {'scheduler': {'alpha': 1.5}},
    {'scheduler': {'policy': 'random'}},
    {'prediction': {'provider': 'magic'}},
    {'capping': {'mode': 'per-core'}},
    {'capping': {'chassis_budget_w': -5}},
    {'capping': {'poll_interval_ms': 7}},
    {'cluster': {'racks': 0}},
    {'power': {'cores': 32}},
    {'power': {'idle_w': 400}},
    {'trace': {'vm_size': [[1, 0.5]]}},
    {'trace': {'target_occupancy': 2}},
    {'simulation': {'power_slot_s': 300.5}},
    {'simulation': {'days': 2, 'warmup_days': 2}},
    {'oversubscription': {'policy': 'greedy'}},
    {'oversubscription': {'fmin_uf': 0.2}},
    {'output': {'metrics': ''}},
    {'simulation': []},
])
def test_invalid_values(data):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(data)


def test_malformed_json_names_the_line(tmp_path):
    path = tmp_path / 'broken.config'
    path.write_text('{\n  "seed": 1,\n}\n')
    with pytest.raises(MalformedInput) as error:
        load(str(path))
    assert error.value.problems[0].startswith('line 3')


# -------------------------------------------------------------------------------------------------------- overrides
@pytest.mark.parametrize('text, expected', [
    ('capping.chassis_budget_w=2450', ('capping.chassis_budget_w', 2450)),
    ('prediction.provider=oracle', ('prediction.provider', 'oracle')),
    ('capping.chassis_budget_w=null', ('capping.chassis_budget_w', None)),
    ('simulation.record_draws=true', ('simulation.record_draws', True)),
    (' seed = 4', ('seed', 4)),
])
def test_parse_assignment(text, expected):
    assert parse_assignment(text) == expected


def test_parse_assignment_needs_a_key():
    for text in ('seed', '=4'):
        with pytest.raises(ConfigurationError):
            parse_assignment(text)


def test_overrides_are_validated():
    with pytest.raises(ConfigurationError):
        RunConfig().with_overrides({'capping.step_cores': 0})


# --------------------------------------------------------------------------------------------------------- sections
def test_budget_null_means_no_capping():
    assert math.isinf(CappingSection().budget_w)
    assert not CappingSection().active
    assert CappingSection(chassis_budget_w=2450.0).active
    assert not CappingSection(enabled=False, chassis_budget_w=2450.0).active


def test_scheduler_policies():
    assert SchedulerSection(policy='norule').scheduler_config().power_rule_weight == 0.0
    assert SchedulerSection(policy='power').scheduler_config().uses_power_rule


def test_seeded_providers_follow_the_run_seed():
    features = VmFeatures.without_history('s', 2, 8.0)
    truths = [GroundTruth.of(WorkloadLabel.NON_USER_FACING, p) for p in (0.1, 0.4, 0.7, 0.95)] * 50

    def predictions(seed):
        provider = PredictionSection().make(seed)
        return [provider.predict(features, truth) for truth in truths]

    assert predictions(5) == predictions(5)
    assert predictions(5) != predictions(6)

    pinned = PredictionSection(parameters={'seed': 1})
    assert [pinned.make(5).predict(features, t) for t in truths] == [pinned.make(6).predict(features, t)
                                                                      for t in truths]
