'''
File holding the experiment configuration: built-in defaults, the `configuration_data/defaults.txt`
overrides, the nested JSON experiment documents and the environment overrides.
'''
from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from attacks import AttackKind, AttackMode
from defenses import DefenseKind
from fs_access import atomic_write_text, parse_model_content
from mlp import OptimizerKind, OptimizerSpec
from model_core import PartitionStrategy
from uni_chars import *

VERSION = "1.0.0"
DEFAULTS_PATH = Path(__file__).parent / "configuration_data" / "defaults.txt"
SEED_VARIABLE = 'SIMBENCH_SEED'
OUT_DIR_VARIABLE = 'SIMBENCH_OUT_DIR'

# section -> field -> (type, nullable); the top-level section is ''
SCHEMA: Dict[str, Dict[str, Tuple[type, bool]]] = {
    '': {'n': (int, False), 'm': (int, False), 'rounds': (int, False), 'master_seed': (int, False),
         'single_round_attack': (bool, False), 'out_dir': (str, False)},
    'partition': {'kind': (str, False), 'c': (int, False), 'concentration': (float, False)},
    'defense': {'kind': (str, False), 'spp_fraction': (float, True), 'spp_tolerance': (float, False),
                'kappa': (float, False), 'err_tau': (float, False), 'flame_noise': (float, False),
                'flame_cluster_distance': (float, False), 'norm_upper': (float, True),
                'norm_lower_ratio': (float, False)},
    'attack': {'kind': (str, False), 'mode': (str, False), 'strategy': (str, False), 'groups': (int, False),
               'margin': (float, False), 'backdoor_target': (int, False)},
    'dataset': {'source': (str, False), 'test_fraction': (float, False), 'clean_size': (int, False)},
    'training': {'local_epochs': (int, False), 'optimizer': (str, False), 'learning_rate': (float, False),
                 'batch_size': (int, False)},
}


class ConfigurationError(ValueError):
    '''
    Invalid configuration, `field` is the dotted path of the offending entry.
    '''

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{ERROR} {field}: {message}")
        self.field = field


def attribute_name(section: str, key: str) -> str:
    return key if section == '' else f"{section}_{key}"


def field_path(section: str, key: str) -> str:
    return f"config.{key}" if section == '' else f"config.{section}.{key}"


def _coerce(path: str, value: Any, expected: type, nullable: bool) -> Any:
    if value is None:
        if nullable:
            return None
        raise ConfigurationError(path, "must not be null")
    if expected is bool:
        if isinstance(value, bool):
            return value
    elif expected is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif expected is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif isinstance(value, expected):
        return value
    raise ConfigurationError(path, f"expected {expected.__name__}, got {type(value).__name__} {value!r}")


class ExperimentConfig:
    '''
    Everything a simulation run depends on; the metrics report is a pure function of it.
    '''

    def __init__(self) -> None:
        self.n = 10
        self.m = 2
        self.rounds = 50
        self.master_seed = 0
        self.single_round_attack = False
        self.out_dir = "out"

        self.partition_kind = "label_count"
        self.partition_c = 5
        self.partition_concentration = 0.5

        self.defense_kind = "fedavg"
        self.defense_spp_fraction: Optional[float] = None
        self.defense_spp_tolerance = 0.02
        self.defense_kappa = 2.0
        self.defense_err_tau = 0.10
        self.defense_flame_noise = 0.001
        self.defense_flame_cluster_distance = 0.05
        self.defense_norm_upper: Optional[float] = None
        self.defense_norm_lower_ratio = 0.8

        self.attack_kind = "none"
        self.attack_mode = "single"
        self.attack_strategy = "output_layer_split"
        self.attack_groups = 2
        self.attack_margin = 0.999
        self.attack_backdoor_target = 0

        self.dataset_source = "digits"
        self.dataset_test_fraction = 0.25
        self.dataset_clean_size = 100

        self.training_local_epochs = 1
        self.training_optimizer = "adam"
        self.training_learning_rate = 0.001
        self.training_batch_size = 32

    @staticmethod
    def from_defaults(defaults_path: Path = DEFAULTS_PATH, verbose: bool = False) -> ExperimentConfig:
        '''
        Built-in values overridden by the `key = value` lines of the defaults file.
        '''
        ret = ExperimentConfig()
        if not defaults_path.exists():
            raise FileNotFoundError(f"{ERROR} Path {defaults_path} does not exist!")
        known = set(vars(ret))
        text_keys = {attribute_name(section, key) for section, fields in SCHEMA.items()
                     for key, (expected, _) in fields.items() if expected is str}
        parse_model_content(ret, defaults_path, text_keys)
        unknown = sorted(set(vars(ret)) - known)
        if unknown:
            raise ConfigurationError(f"defaults.{unknown[0]}", "unknown default")
        for section, fields in SCHEMA.items():
            for key, (expected, nullable) in fields.items():
                name = attribute_name(section, key)
                setattr(ret, name, _coerce(f"defaults.{name}", getattr(ret, name), expected, nullable))
        if verbose:
            print(f"{SUCCESS} Defaults loaded from {defaults_path}")
        return ret

    def apply(self, document: Dict[str, Any]) -> ExperimentConfig:
        '''
        Overwrites the fields present in a nested experiment document, unknown keys are rejected.
        '''
        if not isinstance(document, dict):
            raise ConfigurationError("config", "experiment document must be a JSON object")
        for key, value in document.items():
            if key in SCHEMA and key != '':
                if not isinstance(value, dict):
                    raise ConfigurationError(f"config.{key}", "section must be a JSON object")
                for inner, inner_value in value.items():
                    self._set(key, inner, inner_value)
            else:
                self._set('', key, value)
        return self

    def _set(self, section: str, key: str, value: Any) -> None:
        fields = SCHEMA[section]
        path = field_path(section, key)
        if key not in fields:
            raise ConfigurationError(path, "unknown key")
        expected, nullable = fields[key]
        setattr(self, attribute_name(section, key), _coerce(path, value, expected, nullable))

    def to_document(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {}
        for section, fields in SCHEMA.items():
            target = document if section == '' else document.setdefault(section, {})
            for key in fields:
                target[key] = getattr(self, attribute_name(section, key))
        return document

    def with_value(self, axis: str, value: Any) -> ExperimentConfig:
        '''
        Copy with one dotted field (`m`, `attack.groups`, ...) replaced, validated.
        '''
        section, _, key = axis.rpartition('.')
        if section not in SCHEMA:
            raise ConfigurationError(f"config.{axis}", "unknown section")
        ret = copy.deepcopy(self)
        ret._set(section, key, value)
        ret.post_validate()
        return ret

    def apply_environment(self, environ: Optional[Dict[str, str]] = None) -> ExperimentConfig:
        environ = os.environ if environ is None else environ
        if SEED_VARIABLE in environ:
            try:
                self.master_seed = int(environ[SEED_VARIABLE])
            except ValueError:
                raise ConfigurationError("config.master_seed",
                                         f"{SEED_VARIABLE}={environ[SEED_VARIABLE]!r} is not an integer")
        if OUT_DIR_VARIABLE in environ:
            self.out_dir = environ[OUT_DIR_VARIABLE]
        return self

    def post_validate(self) -> None:
        '''
        Checks value ranges and cross-field constraints.
        '''
        def require(condition: bool, path: str, message: str) -> None:
            if not condition:
                raise ConfigurationError(path, message)

        require(self.n >= 1, "config.n", f"needs at least one client, got {self.n}")
        require(0 <= self.m and 2 * self.m <= self.n, "config.m", f"must satisfy 0 <= m <= n/2, got m={self.m}, n={self.n}")
        require(self.rounds >= 1, "config.rounds", f"must be at least 1, got {self.rounds}")
        require(self.master_seed >= 0, "config.master_seed", "must be non-negative")

        require(self.partition_kind in ('label_count', 'dirichlet'), "config.partition.kind",
                f"unknown partitioner '{self.partition_kind}'")
        require(self.partition_c >= 1, "config.partition.c", f"must be at least 1, got {self.partition_c}")
        require(self.partition_concentration > 0, "config.partition.concentration", "must be positive")

        self._enum(DefenseKind, self.defense_kind, "config.defense.kind")
        if self.defense_spp_fraction is not None:
            require(0.0 < self.defense_spp_fraction <= 1.0, "config.defense.spp_fraction", "must lie in (0, 1]")
        require(self.defense_spp_tolerance >= 0, "config.defense.spp_tolerance", "must be non-negative")
        require(self.defense_kappa > 1.0, "config.defense.kappa", f"must be above 1, got {self.defense_kappa}")
        require(self.defense_err_tau >= 0, "config.defense.err_tau", "must be non-negative")
        require(self.defense_flame_noise >= 0, "config.defense.flame_noise", "must be non-negative")
        require(self.defense_flame_cluster_distance > 0, "config.defense.flame_cluster_distance", "must be positive")
        if self.defense_norm_upper is not None:
            require(self.defense_norm_upper > 0, "config.defense.norm_upper", "must be positive")
        require(0.0 <= self.defense_norm_lower_ratio <= 1.0, "config.defense.norm_lower_ratio", "must lie in [0, 1]")

        if self.attack_kind != 'none':
            self._enum(AttackKind, self.attack_kind, "config.attack.kind")
        self._enum(AttackMode, self.attack_mode, "config.attack.mode")
        self._enum(PartitionStrategy, self.attack_strategy, "config.attack.strategy")
        require(self.attack_groups >= 1, "config.attack.groups", "must be at least 1")
        require(0.0 < self.attack_margin < 1.0, "config.attack.margin", "must lie in (0, 1)")
        require(self.attack_backdoor_target >= 0, "config.attack.backdoor_target", "must be non-negative")
        if self.attack_kind != 'none' and self.attack_mode == 'cooperative':
            require(self.m >= 2, "config.attack.mode", "cooperative mode needs m >= 2")

        require(0.0 < self.dataset_test_fraction < 1.0, "config.dataset.test_fraction", "must lie in (0, 1)")
        require(self.dataset_clean_size >= 1, "config.dataset.clean_size", "must be at least 1")

        require(self.training_local_epochs >= 0, "config.training.local_epochs", "must be non-negative")
        self._enum(OptimizerKind, self.training_optimizer, "config.training.optimizer")
        require(self.training_learning_rate > 0, "config.training.learning_rate", "must be positive")
        require(self.training_batch_size >= 1, "config.training.batch_size", "must be at least 1")

    @staticmethod
    def _enum(enum_type, value: str, path: str) -> None:
        try:
            enum_type.from_name(value)
        except ValueError:
            raise ConfigurationError(path, f"unknown value '{value}'")

    @property
    def defense(self) -> DefenseKind:
        return DefenseKind.from_name(self.defense_kind)

    @property
    def attack(self) -> Optional[AttackKind]:
        return None if self.attack_kind == 'none' else AttackKind.from_name(self.attack_kind)

    @property
    def mode(self) -> AttackMode:
        return AttackMode.from_name(self.attack_mode)

    @property
    def strategy(self) -> PartitionStrategy:
        return PartitionStrategy.from_name(self.attack_strategy)

    @property
    def optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(OptimizerKind.from_name(self.training_optimizer), self.training_learning_rate)

    @property
    def defense_label(self) -> str:
        if self.defense_spp_fraction is None:
            return self.defense_kind
        return f"{self.defense_kind}+spp({self.defense_spp_fraction:g})"

    @property
    def partition_label(self) -> str:
        if self.partition_kind == 'label_count':
            return f"label_count(c={self.partition_c})"
        return f"dirichlet({self.partition_concentration:g})"

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self.to_document() == other.to_document()

    __hash__ = None  # type: ignore

    def __str__(self) -> str:
        return (f"ExperimentConfig({self.defense_label} vs {self.attack_kind}, n={self.n}, m={self.m}, "
                f"{self.partition_label}, rounds={self.rounds}, seed={self.master_seed})")

    def __repr__(self) -> str:
        return self.__str__()


def load_config(path: Union[str, Path], environ: Optional[Dict[str, str]] = None,
                defaults_path: Path = DEFAULTS_PATH, verbose: bool = False) -> ExperimentConfig:
    '''
    Reads and validates an experiment document.

    :param path: JSON experiment document, missing fields keep their defaults.
    :param environ: Environment consulted for SIMBENCH_SEED / SIMBENCH_OUT_DIR, `os.environ` by default.
    :param defaults_path: The `key = value` defaults file.
    '''
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{ERROR} Path {path} does not exist!")
    if not path.is_file():
        raise FileNotFoundError(f"{ERROR} Path {path} is not a file!")

    if verbose:
        print(f"{INFO} Loading experiment configuration {path}")
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigurationError("config", f"malformed JSON in {path}: {e}")

    config = ExperimentConfig.from_defaults(defaults_path, verbose=verbose).apply(document)
    config.apply_environment(environ)
    config.post_validate()

    if verbose:
        print(f"{SUCCESS} Configuration loaded: {config}")
    return config


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    '''
    Writes the full document, defaults included.
    '''
    return atomic_write_text(path, json.dumps(config.to_document(), indent=2, sort_keys=True) + "\n")
