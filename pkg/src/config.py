"""
Experiment configuration: a tree of frozen dataclasses loaded from YAML.
Every field has a default, so an empty file resolves to the canonical setup
(Lennard-Jones, p = 0.1, m = 2).
"""

import dataclasses
import math
import os
import types
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from src.errors import ConfigError
from src.ground_state import ModelParams, build_model
from src.logger import OUTPUT_DIR_ENV, get_logger
from src.potentials import PotentialSpec, lennard_jones, load_tabulated

logger = get_logger()

SUBCOMMANDS = ("validate", "ground-state", "surface", "spectrum", "gaussian", "sample", "verify")


def _check(predicate, message: str) -> Dict[str, Any]:
    return {"check": (predicate, message)}


_positive = _check(lambda v: v > 0, "must be > 0")
_positive_opt = _check(lambda v: v is None or v > 0, "must be > 0")
_non_negative = _check(lambda v: v >= 0, "must satisfy 0 <= value")


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = field(default="lennard_jones", metadata=_check(
        lambda v: v in ("lennard_jones", "tabulated"), "must be 'lennard_jones' or 'tabulated'"))
    path: Optional[str] = None
    scale: float = field(default=1.0, metadata=_positive)
    s: float = field(default=6.0, metadata=_check(lambda v: v > 2, "must be > 2"))


@dataclass(frozen=True)
class ModelConfig:
    m: Optional[int] = field(default=2, metadata=_check(lambda v: v is None or v >= 1, "must be >= 1 or null"))
    p: float = field(default=0.1, metadata=_check(lambda v: v >= 0, "must satisfy 0 <= p"))
    m_cut: int = field(default=50, metadata=_check(lambda v: v >= 1, "must be >= 1"))


@dataclass(frozen=True)
class GridConfig:
    order: Optional[int] = field(default=None, metadata=_positive_opt)
    value_points: Optional[int] = field(default=None, metadata=_check(
        lambda v: v is None or v >= 5, "must be >= 5"))
    value_eps: Optional[float] = field(default=None, metadata=_positive_opt)
    value_tol: float = field(default=1e-11, metadata=_positive)


@dataclass(frozen=True)
class SurfaceConfig:
    K: Optional[int] = field(default=100, metadata=_positive_opt)
    tol: float = field(default=1e-10, metadata=_positive)
    K_max: int = field(default=800, metadata=_positive)
    N_list: Tuple[int, ...] = field(default=(50, 100, 200, 400), metadata=_check(
        lambda v: len(v) > 0 and min(v) >= 2, "must list sizes >= 2"))


@dataclass(frozen=True)
class SpectrumConfig:
    beta: float = field(default=20.0, metadata=_positive)
    betas: Tuple[float, ...] = field(default=(10.0, 20.0, 40.0, 80.0), metadata=_check(
        lambda v: len(v) > 0 and min(v) > 0, "must list positive temperatures"))
    with_K: bool = True
    pressures: Tuple[float, ...] = field(default=(), metadata=_check(
        lambda v: all(x > 0 for x in v), "must list positive pressures"))


@dataclass(frozen=True)
class GaussianConfig:
    L: int = field(default=200, metadata=_positive)
    brascamp_N: int = field(default=128, metadata=_check(lambda v: v >= 8, "must be >= 8"))
    fit_range: Tuple[int, ...] = field(default=(2, 20), metadata=_check(
        lambda v: len(v) == 2 and 1 <= v[0] < v[1], "must be [lo, hi] with 1 <= lo < hi"))


@dataclass(frozen=True)
class SamplerConfig:
    N: int = field(default=256, metadata=_check(lambda v: v >= 3, "must be >= 3"))
    beta: Optional[float] = field(default=None, metadata=_positive_opt)
    steps: int = field(default=1_000_000, metadata=_positive)
    burn_in: int = field(default=100_000, metadata=_non_negative)
    thinning: int = field(default=10, metadata=_positive)
    seed: int = field(default=20240611, metadata=_non_negative)
    chains: int = field(default=1, metadata=_positive)
    workers: int = field(default=1, metadata=_positive)
    max_lag: int = field(default=8, metadata=_positive)
    tail_r: Tuple[float, ...] = field(default=(0.0, 0.5, 1.0, 2.0, 4.0), metadata=_check(
        lambda v: all(x >= 0 for x in v), "must list levels >= 0"))
    kernel_steps: int = field(default=1_000_000, metadata=_non_negative)


@dataclass(frozen=True)
class VerifyConfig:
    quick: bool = False
    criteria: Tuple[int, ...] = field(default=(), metadata=_check(
        lambda v: all(1 <= c <= 13 for c in v), "must list criteria between 1 and 13"))
    workers: int = field(default=1, metadata=_positive)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    format: str = field(default="csv", metadata=_check(lambda v: v in ("csv", "json"), "must be 'csv' or 'json'"))


@dataclass(frozen=True)
class ExperimentConfig:
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    surface: SurfaceConfig = field(default_factory=SurfaceConfig)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    gaussian: GaussianConfig = field(default_factory=GaussianConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def sample_beta(self) -> float:
        return self.sampler.beta if self.sampler.beta is not None else self.spectrum.beta


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, path)
    if origin in (tuple, Tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool):
            raise ConfigError(path, f"expected a number, got {value!r}")
        # YAML 1.1 reads 1e-10 as a string
        try:
            number = float(value)
        except (TypeError, ValueError):
            raise ConfigError(path, f"expected a number, got {value!r}") from None
        if not math.isfinite(number):
            raise ConfigError(path, "must be finite")
        return number
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data: Any, prefix: str):
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(prefix.rstrip(".") or "<root>", f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{prefix}{unknown[0]}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        path = f"{prefix}{f.name}"
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            kwargs[f.name] = _build(tp, data.get(f.name), f"{path}.")
            continue
        if f.name not in data:
            continue
        value = _coerce(data[f.name], tp, path)
        check = f.metadata.get("check")
        if check is not None:
            predicate, message = check
            if not predicate(value):
                raise ConfigError(path, message)
        kwargs[f.name] = value
    return cls(**kwargs)


def _set_path(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    section, _, key = dotted.partition(".")
    if not key:
        raise ConfigError(dotted, "overrides must name section.field")
    node = tree.setdefault(section, {})
    if not isinstance(node, dict):
        raise ConfigError(section, "expected a mapping")
    node[key] = value


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Resolve a configuration: file values, then CHAINLAB_OUTPUT_DIR, then
    dotted overrides such as {"model.p": 0.3}. None-valued overrides are skipped.
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError("--config", f"invalid YAML: {e}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "expected a mapping at the top level")
    env_dir = os.environ.get(OUTPUT_DIR_ENV)
    if env_dir:
        _set_path(raw, "output.directory", env_dir)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_path(raw, dotted, value)
    config = _build(ExperimentConfig, raw, "")
    if config.potential.kind == "tabulated" and not config.potential.path:
        raise ConfigError("potential.path", "required for a tabulated potential")
    logger.debug(f"Resolved config from {path or 'defaults'}")
    return config


def to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """Plain nested dict with every defaulted field filled in."""
    def plain(value):
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        return value

    return plain(dataclasses.asdict(config))


def dump_config(config: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(to_dict(config), f, sort_keys=False)


def build_potential(config: ExperimentConfig) -> PotentialSpec:
    pc = config.potential
    if pc.kind == "tabulated":
        return load_tabulated(pc.path, s=pc.s, scale=pc.scale)
    return lennard_jones(pc.scale)


_UNSET = object()


def build_params(config: ExperimentConfig, m: Any = _UNSET, p: Optional[float] = None,
                 strict: bool = True) -> ModelParams:
    """ModelParams for the configured potential; m and p default to the model section."""
    model = config.model
    return build_model(build_potential(config), model.p if p is None else p,
                       model.m if m is _UNSET else m, m_cut=model.m_cut, strict=strict)
