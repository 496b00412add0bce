"""Single settings object shared by the CLI and the experiment scripts."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .annotation import MerBoundary
from .evaluation import GridSpec
from .planner import PlannerConfig


@dataclass(frozen=True)
class AnnotationConfig:
    delta_obs: float = 0.5
    boundary_length: float = 30.0
    boundary_width: float = 15.0
    t_ego: tuple[float, float] = (-5.0, 5.0)

    @property
    def boundary(self) -> MerBoundary:
        return MerBoundary(self.boundary_length, self.boundary_width)


@dataclass(frozen=True)
class Settings:
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    area_alpha: float = 0.01
    grid_res: float = 0.1
    grid_extent: tuple[float, float] = (100.0, 100.0)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_res, tuple(self.grid_extent))

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict, where: str):
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown {where} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


def settings_from_dict(data: dict) -> Settings:
    if not isinstance(data, dict):
        raise ValueError("config must be a JSON object")
    data = dict(data)
    ann = _build(AnnotationConfig, data.pop("annotation", {}) or {}, "annotation")
    pl = _build(PlannerConfig, data.pop("planner", {}) or {}, "planner")
    top = _build(Settings, data, "top-level")
    return replace(top, annotation=ann, planner=pl)


def load_settings(path=None) -> Settings:
    if path is None:
        return Settings()
    return settings_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def with_overrides(settings: Settings, grid_res: float | None = None) -> Settings:
    """Apply command-line overrides on top of a loaded config."""
    if grid_res is not None:
        if not grid_res > 0:
            raise ValueError("--grid-res must be positive")
        settings = replace(settings, grid_res=float(grid_res))
    return settings
