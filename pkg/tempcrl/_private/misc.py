from __future__ import annotations

import re
from collections.abc import Mapping
from copy import deepcopy
from typing import Any

from .errors import ConfigError
from .types import CheckOutcome


def validate_configuration(
    required_keys: list[str], confdict: Mapping[str, Any], error_fmt: str = '"{key}" property is missing'
) -> None:
    """
    Validate configuration dictionary.

    Check that it contains all required keys. The key may contain ``.`` to check
    nested keys, for example ``train.batch_size``. Unlike truthiness checks,
    zero and empty values are accepted as long as the key is present.

    :param required_keys: Required keys.
    :type required_keys: list[str]
    :param confdict: Configuration dictionary.
    :type confdict: Mapping[str, Any]
    :param error_fmt: Error message format, defaults to '"{key}" property is missing'
    :type error_fmt: str, optional
    :raises ConfigError: If a required key is missing.
    """

    def is_property_in_dict(property: str, d: Any) -> bool:
        if not isinstance(d, Mapping):
            return False

        if "." in property:
            (key, subpath) = property.split(".", maxsplit=1)
            if key not in d:
                return False

            return is_property_in_dict(subpath, d[key])

        return property in d and d[property] is not None

    for key in required_keys:
        if not is_property_in_dict(key, confdict):
            raise ConfigError(error_fmt.format(key=key))


def reject_unknown_keys(known: Mapping[str, Any], confdict: Mapping[str, Any], prefix: str = "") -> None:
    """
    Raise :class:`ConfigError` if ``confdict`` contains a key that is not
    present in ``known``. Nested dictionaries are checked recursively.

    :param known: Dictionary with all allowed keys (typically the defaults).
    :type known: Mapping[str, Any]
    :param confdict: Configuration dictionary.
    :type confdict: Mapping[str, Any]
    :param prefix: Key prefix used in error messages, defaults to "".
    :type prefix: str, optional
    :raises ConfigError: If an unknown key is found.
    """
    for key, value in confdict.items():
        if key not in known:
            raise ConfigError(f'Unknown configuration key "{prefix}{key}"')

        if isinstance(known[key], Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError(f'Configuration key "{prefix}{key}" must be a mapping')

            reject_unknown_keys(known[key], value, prefix=f"{prefix}{key}.")


def merge_dict(*args: Mapping | None) -> dict:
    """
    Merge two or more nested dictionaries together.

    Nested dictionaries are not overwritten but combined.
    """
    filtered_args = [x for x in args if x is not None]
    if not filtered_args:
        return {}

    dest = deepcopy(dict(filtered_args[0]))

    for source in filtered_args[1:]:
        for key, value in source.items():
            if isinstance(value, Mapping):
                dest[key] = merge_dict(dest.get(key, {}), value)
                continue

            dest[key] = value

    return dest


def parse_seed_range(value: str) -> list[int]:
    """
    Parse seed range in the form ``a..b`` (inclusive) or a single integer.

    :param value: Seed range.
    :type value: str
    :raises ConfigError: If the value is malformed or empty.
    :return: List of seeds.
    :rtype: list[int]
    """
    match = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+)\s*)?", value)
    if match is None:
        raise ConfigError(f"Invalid seed range: {value!r}, expected a..b")

    first = int(match.group(1))
    last = int(match.group(2)) if match.group(2) is not None else first
    if last < first:
        raise ConfigError(f"Invalid seed range: {value!r}, end is smaller than start")

    return list(range(first, last + 1))


class CheckStatus(object):
    """
    Keep named outcomes of verification checks.
    """

    def __init__(self) -> None:
        self.states: dict[str, CheckOutcome] = {}
        self.details: dict[str, str] = {}

    def set(self, name: str, state: CheckOutcome, detail: str = "") -> None:
        """
        Set outcome of the check.

        :param name: Check name.
        :type name: str
        :param state: Outcome.
        :type state: CheckOutcome
        :param detail: Measured values or failure reason, defaults to "".
        :type detail: str, optional
        """
        self.states[name] = state
        self.details[name] = detail

    def set_success(self, name: str, detail: str = "") -> None:
        self.set(name, "passed", detail)

    def set_failure(self, name: str, detail: str = "") -> None:
        self.set(name, "failed", detail)

    def check_success(self, name: str) -> bool:
        """
        :return: True if the check passed, False if it failed or did not run.
        :rtype: bool
        """
        return self.states.get(name, None) == "passed"

    @property
    def failed(self) -> list[str]:
        """
        Names of failed checks.
        """
        return [name for name, state in self.states.items() if state == "failed"]
