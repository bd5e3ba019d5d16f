"""
Run configuration - defaults, environment, JSON config file and CLI flags.

Precedence, lowest to highest: built-in defaults, FACTORIAL_* environment
variables, the JSON file passed with --config, explicit CLI flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .design import FactorialDesign
from .errors import InputError
from .estimation import Alternative, Correction, check_alpha
from .power import AllocationRule

DEFAULT_SEED = 20240101
DEFAULT_ENUMERATION_CAP = 1_000_000
DEFAULT_LOG_LEVEL = "WARNING"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

ESTIMANDS = ("linear", "logfe", "logitfe")


# ==================== Value parsers ====================

def _split(value: Any) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(part).strip() for part in value if str(part).strip()]
    return [part.strip() for part in str(value).split(",") if part.strip()]


def parse_names(value: Any) -> Optional[Tuple[str, ...]]:
    if value is None:
        return None
    names = tuple(_split(value))
    return names or None


def parse_floats(value: Any) -> Optional[Tuple[float, ...]]:
    if value is None:
        return None
    try:
        return tuple(float(part) for part in _split(value))
    except ValueError:
        raise InputError(f"Expected comma-separated numbers, got '{value}'") from None


def _whole(text: str) -> int:
    number = float(text)
    if not number.is_integer():
        raise ValueError(text)
    return int(number)


def parse_grid(value: Any) -> Optional[Tuple[int, ...]]:
    """Accept a list, "96,192,288" or an inclusive range "start:stop:step"."""
    if value is None:
        return None
    try:
        if isinstance(value, str) and ":" in value:
            parts = [_whole(part) for part in value.split(":")]
            if len(parts) != 3 or parts[2] <= 0:
                raise ValueError
            start, stop, step = parts
            grid = tuple(range(start, stop + 1, step))
        else:
            grid = tuple(_whole(part) for part in _split(value))
    except ValueError:
        raise InputError(
            f"Sample-size grid must be 'start:stop:step' or a comma-separated list, got '{value}'"
        ) from None
    if not grid or min(grid) < 1:
        raise InputError(f"Sample-size grid must contain positive sizes, got '{value}'")
    return grid


def parse_effects(value: Any) -> Optional[Dict[str, float]]:
    """Parse "R=0.1875,G=0.1042" (or a mapping) into label -> τ*."""
    if value is None:
        return None
    if isinstance(value, Mapping):
        items = list(value.items())
    else:
        items = []
        for part in _split(value):
            if "=" not in part:
                raise InputError(f"Effect sizes look like LABEL=VALUE, got '{part}'")
            label, _, size = part.partition("=")
            items.append((label.strip(), size))
    try:
        return {str(label): float(size) for label, size in items}
    except ValueError:
        raise InputError(f"Effect sizes must be numbers, got '{value}'") from None


def parse_estimands(value: Any) -> Tuple[str, ...]:
    estimands = tuple(dict.fromkeys(part.lower() for part in _split(value)))
    for estimand in estimands:
        if estimand not in ESTIMANDS:
            raise InputError(f"Unknown estimand '{estimand}'. Choose from: {', '.join(ESTIMANDS)}")
    if "linear" not in estimands:
        estimands = ("linear",) + estimands
    return estimands


def _optional(parser: Callable[[Any], Any]) -> Callable[[Any], Any]:
    return lambda value: None if value is None else parser(value)


def _boolean(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise InputError(f"Expected a boolean, got '{value}'")


def _number(kind: Callable[[Any], Any]) -> Callable[[Any], Any]:
    def parse(value: Any) -> Any:
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise InputError(f"Expected a {kind.__name__}, got '{value}'") from None

    return parse


_PARSERS: Dict[str, Callable[[Any], Any]] = {
    "factors": parse_names,
    "alpha": _number(float),
    "alternative": Alternative.parse,
    "correction": Correction.parse,
    "estimands": parse_estimands,
    "haldane": _boolean,
    "criterion": AllocationRule.parse,
    "seed": _number(int),
    "draws": _number(int),
    "populations": _number(int),
    "n_grid": parse_grid,
    "target_power": _number(float),
    "workers": _number(int),
    "enumeration_cap": _number(int),
    "log_level": lambda value: str(value).upper(),
    "input": _optional(str),
    "summary": _optional(str),
    "population": _optional(str),
    "json_out": _optional(str),
    "csv_out": _optional(str),
    "effects": parse_effects,
    "tau_star": _optional(_number(float)),
    "n": _optional(_number(int)),
    "pilot_arm_size": _optional(_number(int)),
    "proportions": parse_floats,
    "family": parse_names,
    "clip": _boolean,
    "groups": _optional(_number(int)),
}

_ENVIRONMENT = {
    "FACTORIAL_ALPHA": "alpha",
    "FACTORIAL_SEED": "seed",
    "FACTORIAL_WORKERS": "workers",
    "FACTORIAL_ENUMERATION_CAP": "enumeration_cap",
    "FACTORIAL_LOG_LEVEL": "log_level",
}


@dataclass(frozen=True)
class RunConfig:
    """
    Every setting a command can read.

    Example:
        config = resolve_config({"alpha": 0.1, "summary": "table3.csv"})
        config.correction        # Correction.IER
    """

    factors: Optional[Tuple[str, ...]] = None
    alpha: float = 0.05
    alternative: Alternative = Alternative.TWO_SIDED
    correction: Correction = Correction.IER
    estimands: Tuple[str, ...] = ("linear",)
    haldane: bool = False
    criterion: AllocationRule = AllocationRule.D
    seed: int = DEFAULT_SEED
    draws: int = 1000
    populations: int = 10
    n_grid: Optional[Tuple[int, ...]] = None
    target_power: float = 0.8
    workers: int = 1
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    log_level: str = DEFAULT_LOG_LEVEL
    input: Optional[str] = None
    summary: Optional[str] = None
    population: Optional[str] = None
    json_out: Optional[str] = None
    csv_out: Optional[str] = None
    effects: Optional[Dict[str, float]] = field(default=None, hash=False)
    tau_star: Optional[float] = None
    n: Optional[int] = None
    pilot_arm_size: Optional[int] = None
    proportions: Optional[Tuple[float, ...]] = None
    family: Optional[Tuple[str, ...]] = None
    clip: bool = False
    groups: Optional[int] = None

    @classmethod
    def from_env(cls) -> "RunConfig":
        """Defaults overlaid with FACTORIAL_* environment variables."""
        values = {}
        for variable, key in _ENVIRONMENT.items():
            raw = os.getenv(variable)
            if raw is not None and raw.strip():
                values[key] = raw
        return cls().update(values, source="environment")

    def update(self, values: Mapping[str, Any], source: str = "arguments") -> "RunConfig":
        """Return a copy with ``values`` applied; None values are ignored."""
        unknown = sorted(set(values) - set(_PARSERS))
        if unknown:
            raise InputError(
                f"Unknown configuration key(s) in {source}: {', '.join(unknown)}. "
                f"Known keys: {', '.join(sorted(_PARSERS))}"
            )
        parsed = {key: _PARSERS[key](value) for key, value in values.items() if value is not None}
        return replace(self, **parsed)

    def validate(self) -> "RunConfig":
        check_alpha(self.alpha)
        if not 0.0 < self.target_power < 1.0:
            raise InputError(f"Target power must lie in (0, 1), got {self.target_power}")
        if self.draws < 1:
            raise InputError(f"draws must be >= 1, got {self.draws}")
        if self.populations < 1:
            raise InputError(f"populations must be >= 1, got {self.populations}")
        if self.workers < 1:
            raise InputError(f"workers must be >= 1, got {self.workers}")
        if self.seed < 0:
            raise InputError(f"seed must be non-negative, got {self.seed}")
        if self.enumeration_cap < 1:
            raise InputError(f"enumeration cap must be >= 1, got {self.enumeration_cap}")
        if self.groups is not None and self.groups < 1:
            raise InputError(f"groups must be >= 1, got {self.groups}")
        if self.log_level not in LOG_LEVELS:
            raise InputError(f"log level must be one of {', '.join(LOG_LEVELS)}, got {self.log_level}")
        if self.factors is not None:
            FactorialDesign(self.factors)
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for item in fields(self):
            value = data[item.name]
            if isinstance(value, (Alternative, Correction, AllocationRule)):
                data[item.name] = value.value
            elif isinstance(value, tuple):
                data[item.name] = list(value)
        return data


def load_json_config(path: str) -> Dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise InputError(f"Cannot read config file {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"Config file {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from exc
    except UnicodeDecodeError as exc:
        raise InputError(f"Config file {path} is not valid UTF-8 (byte offset {exc.start})") from None
    if not isinstance(data, dict):
        raise InputError(f"Config file {path} must hold a JSON object")
    return data


def resolve_config(
    overrides: Optional[Mapping[str, Any]] = None, config_path: Optional[str] = None
) -> RunConfig:
    """Defaults -> environment -> JSON file -> explicit overrides, then validate."""
    config = RunConfig.from_env()
    if config_path:
        config = config.update(load_json_config(config_path), source=config_path)
    if overrides:
        config = config.update(overrides, source="command line")
    return config.validate()
