"""Experiment configuration: nested YAML documents mapped onto dataclasses.

Example::

    system:
      dipole: standard        # standard | free | restricted
      dipole_seed: 0
      T: 10.0
      M: 1000
    transition: {initial: 1, final: 5}
    flow:
      precision_case: 1       # 1..4, or omit and give p_start / p_end
      max_dp: 0.005
    batch:
      runs: 200
      seed: 0
      snapshot_stride: 5
    pso:
      particles: 50
      generations: 50
      sense: min

Unknown keys and bad values raise :class:`ConfigError` with the dotted key
path and the line number in the file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .dynamics import DIPOLE_SCENARIOS, SystemSpec, TimeGrid, TransitionSpec, standard_system
from .errors import ConfigError
from .flow import FlowConfig
from .pso import PsoConfig

PRECISION_CASES = {
    1: (0.01, 0.99),
    2: (0.001, 0.999),
    3: (0.0001, 0.9999),
    4: (0.00001, 0.99999),
}


@dataclass(frozen=True)
class SystemConfig:
    dipole: str = "standard"
    dipole_seed: int = 0
    T: float = 10.0
    M: int = 1000

    def __post_init__(self):
        if self.dipole not in DIPOLE_SCENARIOS:
            raise ValueError(f"dipole must be one of {DIPOLE_SCENARIOS}")
        TimeGrid(self.T, self.M)

    def build(self) -> SystemSpec:
        return standard_system(self.dipole, self.dipole_seed)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.M)


@dataclass(frozen=True)
class TransitionConfig:
    initial: int = 1
    final: int = 5

    def build(self) -> TransitionSpec:
        return TransitionSpec(self.initial, self.final)


@dataclass(frozen=True)
class FlowSection:
    precision_case: Optional[int] = 1
    p_start: Optional[float] = None
    p_end: Optional[float] = None
    endpoint_tol: float = 1e-6
    grad_floor: float = 1e-10
    h0: float = 1.0
    max_dp: float = 5e-3
    max_steps: int = 20000

    def __post_init__(self):
        if self.precision_case is not None:
            if self.precision_case not in PRECISION_CASES:
                raise ValueError(f"precision_case must be one of {sorted(PRECISION_CASES)}")
            if self.p_start is not None or self.p_end is not None:
                raise ValueError("give either precision_case or p_start/p_end, not both")
        elif self.p_start is None or self.p_end is None:
            raise ValueError("custom precision needs both p_start and p_end")
        self.build(1)

    @property
    def endpoints(self) -> tuple:
        if self.precision_case is not None:
            return PRECISION_CASES[self.precision_case]
        return (self.p_start, self.p_end)

    def build(self, stride: int = 1) -> FlowConfig:
        p_start, p_end = self.endpoints
        return FlowConfig(p_start=p_start, p_end=p_end, endpoint_tol=self.endpoint_tol,
                          grad_floor=self.grad_floor, h0=self.h0, max_dp=self.max_dp,
                          max_steps=self.max_steps, stride=stride)


@dataclass(frozen=True)
class BatchConfig:
    runs: int = 200
    seed: int = 0
    snapshot_stride: int = 5
    split_fraction: float = 0.25
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.snapshot_stride < 1 or self.workers < 1:
            raise ValueError("snapshot_stride and workers must be at least 1")
        if not 0 < self.split_fraction <= 0.5:
            raise ValueError("split_fraction must lie in (0, 0.5]")


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    transition: TransitionConfig = field(default_factory=TransitionConfig)
    flow: FlowSection = field(default_factory=FlowSection)
    batch: BatchConfig = field(default_factory=BatchConfig)
    pso: PsoConfig = field(default_factory=PsoConfig)

    def replace(self, section: str, **changes) -> "ExperimentConfig":
        try:
            new = dataclasses.replace(getattr(self, section), **changes)
        except (TypeError, ValueError) as exc:
            key = f"{section}.{next(iter(changes))}" if len(changes) == 1 else section
            raise ConfigError(str(exc), key=key) from exc
        return dataclasses.replace(self, **{section: new})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)}


def _section_types(cls):
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _plain(node):
    return yaml.safe_load(yaml.serialize(node)) if node is not None else None


def parse_config(text: str) -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", line=mark.line + 1 if mark else None) from exc
    if root is None:
        return ExperimentConfig()
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("config must be a mapping of sections", line=root.start_mark.line + 1)
    built = {}
    for key_node, value_node in root.value:
        section = key_node.value
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", key=section, line=key_node.start_mark.line + 1)
        if not isinstance(value_node, yaml.MappingNode):
            raise ConfigError(f"section {section!r} must be a mapping", key=section,
                              line=value_node.start_mark.line + 1)
        cls = type(SECTIONS[section]())
        names = set(_section_types(cls))
        kwargs, lines = {}, {}
        for k_node, v_node in value_node.value:
            if k_node.value not in names:
                raise ConfigError(f"unknown key {k_node.value!r} in section {section!r}",
                                  key=f"{section}.{k_node.value}", line=k_node.start_mark.line + 1)
            kwargs[k_node.value] = _plain(v_node)
            lines[k_node.value] = k_node.start_mark.line + 1
        try:
            built[section] = cls(**kwargs)
        except (TypeError, ValueError) as exc:
            bad = next((k for k in kwargs if k in str(exc)), None)
            raise ConfigError(str(exc), key=f"{section}.{bad}" if bad else section,
                              line=lines.get(bad, value_node.start_mark.line + 1)) from exc
    return ExperimentConfig(**built)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
