from __future__ import annotations

import textwrap
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..evaluate import EvalConfig
from ..scm import GeneratorConfig
from ..train import TrainConfig
from .errors import ConfigError
from .logging import TempcrlLogger
from .misc import merge_dict, reject_unknown_keys, validate_configuration

SCHEMA_VERSION = 1

REQUIRED_KEYS = ["schema_version", "seed", "scm", "train", "eval"]

SECTIONS: dict[str, type] = {"scm": GeneratorConfig, "train": TrainConfig, "eval": EvalConfig}


def _coerce(section: str, cls: type, values: Mapping[str, Any]) -> Any:
    """
    Build section dataclass ``cls``, checking every value against the type of
    its default. Fields that default to ``None`` accept numbers or ``None``.
    """
    defaults = cls()
    kwargs: dict[str, Any] = {}
    for f in fields(cls):
        value = values[f.name]
        default = getattr(defaults, f.name)
        key = f"{section}.{f.name}"

        if default is None:
            allowed: tuple[type, ...] = (int, float) if "float" in str(f.type) else (int,)
            if value is not None and (isinstance(value, bool) or not isinstance(value, allowed)):
                raise ConfigError(f'Configuration key "{key}" must be a number or null, got {value!r}')
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f'Configuration key "{key}" must be a boolean, got {value!r}')
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f'Configuration key "{key}" must be a number, got {value!r}')
            value = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f'Configuration key "{key}" must be an integer, got {value!r}')
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f'Configuration key "{key}" must be a string, got {value!r}')

        kwargs[f.name] = value

    return cls(**kwargs)


@dataclass
class ExperimentConfig(object):
    """
    Experiment configuration: generator, training and evaluation options
    plus the root seed.

    .. code-block:: yaml
        :caption: Example

        schema_version: 1
        seed: 7
        scm:
          kind: chain
          k: 4
        train:
          graph_method: notears
    """

    scm: GeneratorConfig = field(default_factory=GeneratorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    schema_version: int = SCHEMA_VERSION
    explicit: dict[str, Any] = field(default_factory=dict, repr=False, compare=False)
    """
    Values given by the configuration file or overrides, before defaults
    were merged in.
    """

    @staticmethod
    def Defaults() -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": 0,
            **{name: asdict(cls()) for name, cls in SECTIONS.items()},
        }

    @classmethod
    def FromDict(cls, confdict: Mapping[str, Any] | None, *overrides: Mapping[str, Any] | None) -> ExperimentConfig:
        """
        Merge defaults, ``confdict`` and ``overrides`` (later wins) and
        validate the result.

        :raises ConfigError: On unknown keys, wrong types or another schema
            version.
        """
        defaults = cls.Defaults()
        explicit = merge_dict(confdict, *overrides)
        reject_unknown_keys(defaults, explicit)

        confdict = merge_dict(defaults, explicit)
        validate_configuration(REQUIRED_KEYS, confdict, error_fmt='Configuration key "{key}" is missing')
        if confdict["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"Unsupported configuration schema version {confdict['schema_version']}, expected {SCHEMA_VERSION}"
            )

        seed = confdict["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f'Configuration key "seed" must be a non-negative integer, got {seed!r}')

        sections = {name: _coerce(name, section, confdict[name]) for name, section in SECTIONS.items()}
        return cls(**sections, seed=seed, explicit=explicit)

    @classmethod
    def Load(cls, path: str | Path | None, *overrides: Mapping[str, Any] | None) -> ExperimentConfig:
        """
        Read configuration from a YAML or JSON file (``None`` means defaults
        only) and apply ``overrides``.

        :raises ConfigError: If the file can not be read or parsed.
        """
        confdict: Any = None
        if path is not None:
            try:
                with open(path, "r") as f:
                    confdict = yaml.safe_load(f)
            except Exception as e:
                raise ConfigError(f'Unable to open configuration "{path}": {str(e)}') from e

            if confdict is not None and not isinstance(confdict, Mapping):
                raise ConfigError(f'Configuration "{path}" must be a mapping')

        return cls.FromDict(confdict, *overrides)

    def is_set(self, key: str) -> bool:
        """
        True if dotted ``key`` was given explicitly rather than defaulted.
        """
        d: Any = self.explicit
        for part in key.split("."):
            if not isinstance(d, Mapping) or part not in d:
                return False

            d = d[part]

        return True

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            **{name: asdict(getattr(self, name)) for name in SECTIONS},
        }

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=False)

    def log(self, logger: TempcrlLogger) -> None:
        logger.info("Effective configuration:")
        logger.info(textwrap.indent(yaml.safe_dump(self.to_dict(), sort_keys=False), "  "))
