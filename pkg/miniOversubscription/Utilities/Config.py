"""
Config.py reads run configurations. A configuration is one JSON file with a schema version and ten sections:

    {
      "schema_version": 1,
      "seed": 7,
      "trace": {...}, "cluster": {...}, "scheduler": {...}, "prediction": {...}, "power": {...},
      "capping": {...}, "oversubscription": {...}, "simulation": {...}, "output": {...}
    }

Every section and every key is optional; a missing key takes its default value, an unknown one is an error
(UnknownConfigKeys). The whole file is validated when it is loaded, and the result is a frozen RunConfig, so a
simulation never starts with a configuration it would reject halfway. Command line flags override file values through
RunConfig.with_overrides(), with dotted keys:

    >>> config = load('fleet.config').with_overrides({'seed': 3, 'scheduler.alpha': 0.0})
    >>> config.config_hash()

The bundled configurations live in the Database directory and are read with load_bundled().

Some values are shared between sections and are set in one place only: the seed of the trace is the run's seed, the
horizon of the trace is simulation.days, and trace.capacity_cores follows the cluster unless it is given explicitly.
A chassis budget of null means no budget at all (capping never triggers).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

from miniOversubscription.Core.Cluster import Topology
from miniOversubscription.Core.PowerModel import ServerPowerSpec
from miniOversubscription.Core.Prediction import PredictionProvider, DEFAULT_MIN_CONFIDENCE, make_provider
from miniOversubscription.Core.Scheduler import SchedulerConfig
from miniOversubscription.Core.Capping import ChassisManagerConfig, ControllerConfig, CappingMode, PriorityClasses
from miniOversubscription.Computations.TraceGenerator import TraceSpec, Distribution
from miniOversubscription.Computations.Signals import SignalConfig
from miniOversubscription.Computations.Oversubscription import OversubPolicy, DELTA_W
from miniOversubscription.Database import bundled
from miniOversubscription.Utilities.Checks import keywords_check, type_check, fraction_check, positive_check
from miniOversubscription.Utilities.File import File
from miniOversubscription.Utilities.UtilityExceptions import ConfigurationError, MalformedInput
from miniOversubscription.MiniOversubscriptionException import MiniOversubscriptionException


logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SECTIONS = ('trace', 'cluster', 'scheduler', 'prediction', 'power', 'capping', 'oversubscription', 'simulation',
            'output')
TOP_LEVEL_KEYS = ('schema_version', 'seed') + SECTIONS
FLEET_CONFIG = 'fleet.config'

SEEDED_PROVIDERS = ('noisy', 'criticality-only')
_DISTRIBUTIONS = ('vm_size', 'deployment_size', 'lifetime_hours')
_TRACE_KEYS = tuple(f.name for f in fields(TraceSpec) if f.name not in ('seed', 'horizon_days'))
_POWER_KEYS = ('idle_w', 'peak_w', 'cores', 'f_min', 'dyn_exponent', 'pstates', 'reduced_peak_w', 'reduced_freq')


# ========================================================================================================== SECTIONS
@dataclass(frozen=True)
class SchedulerSection:
    policy: str = 'power'
    alpha: float = 0.8
    packing_rule_weight: float = 0.7
    power_rule_weight: float = 0.3

    def __post_init__(self):
        self.scheduler_config()

    def scheduler_config(self) -> SchedulerConfig:
        if self.policy not in ('norule', 'power'):
            raise ConfigurationError('scheduler', f'unknown policy "{self.policy}", expected "norule" or "power".',
                                     variables={'section': self})
        power = 0.0 if self.policy == 'norule' else self.power_rule_weight
        return SchedulerConfig(self.alpha, self.packing_rule_weight, power)


@dataclass(frozen=True)
class PredictionSection:
    provider: str = 'noisy'
    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    parameters: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        fraction_check(self.min_confidence, 'min_confidence', section='prediction')
        object.__setattr__(self, 'parameters', dict(self.parameters))
        make_provider(self.provider, **self.parameters)

    def make(self, seed: int) -> PredictionProvider:
        """A fresh provider. Providers with a random stream get the run's seed unless the section sets one."""
        parameters = dict(self.parameters)
        if self.provider in SEEDED_PROVIDERS:
            parameters.setdefault('seed', seed)
        return make_provider(self.provider, **parameters)


@dataclass(frozen=True)
class CappingSection:
    enabled: bool = True
    chassis_budget_w: Optional[float] = None
    poll_interval_ms: int = 200
    alert_threshold_fraction: float = 0.98
    step_cores: int = 4
    cap_duration_s: float = 30.0
    server_target_fraction: float = 225 / 230
    mode: str = CappingMode.PER_VM.value
    internal_is_low_priority: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, 'mode', CappingMode(self.mode).value)
        except ValueError:
            raise ConfigurationError('capping', f'unknown mode "{self.mode}", expected one of '
                                     f'{", ".join(m.value for m in CappingMode)}.', variables={'section': self})
        self.manager()
        self.controller()

    @property
    def budget_w(self) -> float:
        return math.inf if self.chassis_budget_w is None else float(self.chassis_budget_w)

    @property
    def active(self) -> bool:
        return self.enabled and math.isfinite(self.budget_w)

    def manager(self) -> ChassisManagerConfig:
        return ChassisManagerConfig(self.budget_w, self.poll_interval_ms, self.alert_threshold_fraction)

    def controller(self) -> ControllerConfig:
        return ControllerConfig(self.step_cores, self.cap_duration_s, self.server_target_fraction,
                                CappingMode(self.mode))

    def priorities(self) -> PriorityClasses:
        return PriorityClasses(self.internal_is_low_priority)


@dataclass(frozen=True)
class OversubscriptionSection:
    policy: str = 'minimal_uf_impact'
    emax_uf: Optional[float] = None
    emax_nuf: Optional[float] = None
    fmin_uf: Optional[float] = None
    fmin_nuf: Optional[float] = None
    buffer: Optional[float] = None
    full_server: Optional[bool] = None
    delta_w: float = DELTA_W
    provisioned_w: Optional[float] = None
    external_as_user_facing: bool = False

    def __post_init__(self):
        positive_check(self.delta_w, 'delta_w', section='oversubscription')
        if self.provisioned_w is not None:
            positive_check(self.provisioned_w, 'provisioned_w', section='oversubscription')
        self.to_policy()

    def to_policy(self) -> OversubPolicy:
        overrides = {key: getattr(self, key) for key in ('emax_uf', 'emax_nuf', 'fmin_uf', 'fmin_nuf', 'buffer',
                                                         'full_server') if getattr(self, key) is not None}
        return OversubPolicy.preset(self.policy, **overrides)


@dataclass(frozen=True)
class SimulationSection:
    days: float = 30.0
    power_slot_s: int = 300
    warmup_days: float = 0.0
    record_draws: bool = False
    trace_path: Optional[str] = None
    uf_noise: float = 0.02
    nuf_noise: float = 0.05
    peak_hour: float = 14.0

    def __post_init__(self):
        positive_check(self.days, 'days', section='simulation')
        positive_check(self.warmup_days, 'warmup_days', section='simulation', strict=False)
        if self.warmup_days >= self.days:
            raise ConfigurationError('simulation', f'warmup_days={self.warmup_days} leaves nothing to measure in '
                                     f'{self.days} days.', variables={'section': self})
        if not isinstance(self.power_slot_s, int) or isinstance(self.power_slot_s, bool) or self.power_slot_s < 1:
            raise ConfigurationError('simulation', f'power_slot_s must be a positive integer, got '
                                     f'{self.power_slot_s}.', variables={'section': self})
        self.signals()

    @property
    def horizon_s(self) -> float:
        return self.days * 86_400.0

    @property
    def warmup_s(self) -> float:
        return self.warmup_days * 86_400.0

    def signals(self) -> SignalConfig:
        return SignalConfig(self.power_slot_s, self.uf_noise, self.nuf_noise, self.peak_hour)


@dataclass(frozen=True)
class OutputSection:
    directory: str = 'results'
    metrics: str = 'metrics.json'
    capping_events: str = 'capping_events.csv'
    event_log: str = 'event_log.csv'
    draws: str = 'draws.csv'

    def __post_init__(self):
        for f in fields(self):
            if not isinstance(getattr(self, f.name), str) or not getattr(self, f.name):
                raise ConfigurationError('output', f'"{f.name}" must be a non-empty path.',
                                         variables={'section': self})


# ======================================================================================================== RUN CONFIG
@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    trace: TraceSpec = TraceSpec()
    cluster: Topology = Topology()
    scheduler: SchedulerSection = SchedulerSection()
    prediction: PredictionSection = PredictionSection()
    power: ServerPowerSpec = ServerPowerSpec()
    capping: CappingSection = CappingSection()
    oversubscription: OversubscriptionSection = OversubscriptionSection()
    simulation: SimulationSection = SimulationSection()
    output: OutputSection = OutputSection()

    def __post_init__(self):
        if not type_check([self.seed], [int]) or self.seed < 0:
            _invalid('seed', f'{self.seed} is not a non-negative integer.')
        object.__setattr__(self, 'trace', replace(self.trace, seed=self.seed, horizon_days=self.simulation.days))
        if self.power.cores != self.cluster.cores_per_blade:
            raise ConfigurationError('power', f'a blade has {self.cluster.cores_per_blade} cores in the cluster '
                                     f'section but {self.power.cores} in the power section.', variables={})
        if (self.simulation.power_slot_s * 1000) % self.capping.poll_interval_ms:
            raise ConfigurationError('capping', f'poll_interval_ms={self.capping.poll_interval_ms} does not divide '
                                     f'the {self.simulation.power_slot_s} s power slot.', variables={})

    # ================================================================================================ CONVERSION
    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RunConfig:
        """:raises ConfigurationError: (or UnknownConfigKeys) naming the first section that is not valid."""

        if not isinstance(data, Mapping):
            _invalid('<root>', 'the configuration must be a JSON object.')
        keywords_check(data, TOP_LEVEL_KEYS, section='<root>', variables={'keys': sorted(data)})

        version = data.get('schema_version', SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            _invalid('schema_version', f'expected {SCHEMA_VERSION}, got {version}.')

        seed = data.get('seed', 0)
        if not type_check([seed], [int]):
            _invalid('seed', f'{seed} is not an integer.')
        sections = {name: _mapping(name, data.get(name, dict())) for name in SECTIONS}

        cluster = _build('cluster', Topology, sections['cluster'])
        simulation = _build('simulation', SimulationSection, sections['simulation'])
        scheduler = _build('scheduler', SchedulerSection, sections['scheduler'])
        prediction = _build('prediction', PredictionSection, sections['prediction'])
        capping = _build('capping', CappingSection, sections['capping'])
        oversubscription = _build('oversubscription', OversubscriptionSection, sections['oversubscription'])
        output = _build('output', OutputSection, sections['output'])
        power = _power_spec(sections['power'])
        trace = _trace_spec(sections['trace'], cluster, seed, simulation.days)

        return _build('<root>', cls, dict(seed=seed, trace=trace, cluster=cluster, scheduler=scheduler,
                                          prediction=prediction, power=power, capping=capping,
                                          oversubscription=oversubscription, simulation=simulation, output=output))

    def as_dict(self) -> dict:
        """The canonical JSON form: every key present, distributions as [value, mass] pairs."""

        trace = dict()
        for key in _TRACE_KEYS:
            value = getattr(self.trace, key)
            if key in _DISTRIBUTIONS:
                value = value.to_pairs()
            elif isinstance(value, tuple):
                value = list(value)
            trace[key] = value
        if trace['capacity_cores'] == _capacity(self.cluster):
            trace['capacity_cores'] = None

        power = {key: value for key, value in self.power.as_dict().items() if key != 'f_max'}
        return {'schema_version': SCHEMA_VERSION, 'seed': self.seed, 'trace': trace,
                'cluster': _plain(self.cluster), 'scheduler': _plain(self.scheduler),
                'prediction': _plain(self.prediction), 'power': power, 'capping': _plain(self.capping),
                'oversubscription': _plain(self.oversubscription), 'simulation': _plain(self.simulation),
                'output': _plain(self.output)}

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form without the output section: where results go does not change them."""
        data = self.as_dict()
        del data['output']
        text = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """A copy with dotted keys ("seed", "capping.chassis_budget_w", ...) replaced; validated like a file."""

        data = self.as_dict()
        for key, value in overrides.items():
            *path, last = key.split('.')
            node = data
            for part in path:
                if not isinstance(node.get(part), dict):
                    node[part] = dict()
                node = node[part]
            node[last] = value
        return RunConfig.from_dict(data)

    def write_json(self, file_name: str, directory: Optional[str] = None) -> None:
        out = File()
        out.bind_output(file_name, directory)
        out.write_json(self.as_dict())


# ========================================================================================================== HELPERS
def _invalid(section: str, reason: str):
    raise ConfigurationError(section, reason, variables={'section': section})


def _mapping(name: str, value: Any) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        _invalid(name, f'expected a JSON object, got {type(value).__name__}.')
    return value


def _plain(section: Any) -> dict:
    return {f.name: (dict(getattr(section, f.name)) if isinstance(getattr(section, f.name), dict)
                     else getattr(section, f.name)) for f in fields(section) if f.init}


def _build(name: str, cls: type, values: Mapping[str, Any]):
    """
    Builds a section, turning whatever the section's own validation raises into a ConfigurationError of the section.
    """

    allowed = [f.name for f in fields(cls) if f.init]
    keywords_check(values, allowed, section=name, variables={'keys': sorted(values)})
    try:
        return cls(**values)
    except ConfigurationError:
        raise
    except MiniOversubscriptionException as e:
        raise ConfigurationError(name, e._message.strip(), variables=dict(values))
    except (TypeError, ValueError) as e:
        raise ConfigurationError(name, str(e), variables=dict(values))


def _capacity(topology: Topology) -> int:
    return topology.n_servers * topology.allocatable_cores


def _trace_spec(values: Mapping[str, Any], cluster: Topology, seed: int, days: float) -> TraceSpec:
    keywords_check(values, _TRACE_KEYS, section='trace', variables={'keys': sorted(values)})
    kwargs = dict(values)
    try:
        for key in _DISTRIBUTIONS:
            if key in kwargs:
                kwargs[key] = Distribution.from_pairs(key, kwargs[key])
    except MiniOversubscriptionException as e:
        raise ConfigurationError('trace', e._message.strip(), variables=dict(values))
    except (TypeError, ValueError) as e:
        raise ConfigurationError('trace', str(e), variables=dict(values))
    if kwargs.get('capacity_cores') is None:
        kwargs['capacity_cores'] = _capacity(cluster)
    return _build('trace', TraceSpec, {**kwargs, 'seed': seed, 'horizon_days': days})


def _power_spec(values: Mapping[str, Any]) -> ServerPowerSpec:
    keywords_check(values, _POWER_KEYS, section='power', variables={'keys': sorted(values)})
    kwargs = dict(values)
    reduced_peak_w = kwargs.pop('reduced_peak_w', None)
    reduced_freq = kwargs.pop('reduced_freq', 0.5)
    if reduced_peak_w is None:
        return _build('power', ServerPowerSpec, kwargs)
    try:
        return ServerPowerSpec.calibrated(reduced_peak_w, reduced_freq, **kwargs)
    except MiniOversubscriptionException as e:
        raise ConfigurationError('power', e._message.strip(), variables=dict(values))
    except (TypeError, ValueError) as e:
        raise ConfigurationError('power', str(e), variables=dict(values))


# ============================================================================================================ FILES
def _parse(text: str, source: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedInput(source, [f'line {e.lineno}: {e.msg}'], variables={'source': source})
    config = RunConfig.from_dict(data)
    logger.info('configuration %s loaded (hash %s)', source, config.config_hash()[:12])
    return config


def load(path: str) -> RunConfig:
    """
    :raises MalformedInput: if the file is not JSON.
    :raises ConfigurationError: if it is JSON but not a valid configuration.
    """

    source = File()
    source.bind_input(path)
    return _parse(source.read_text(), path)


def load_bundled(name: str = FLEET_CONFIG) -> RunConfig:
    return _parse(bundled(name).read_text(), name)


def parse_assignment(text: str) -> Tuple[str, Any]:
    """'key=value' of a command line override. The value is read as JSON when it can be, as a string otherwise."""

    key, sep, raw = text.partition('=')
    if not sep or not key.strip():
        raise ConfigurationError('<command line>', f'"{text}" is not a key=value assignment.',
                                 variables={'text': text})
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
