"""Layered pipeline configuration.

Values resolve as defaults < YAML file < POPUP_ environment variables <
command-line flags. Environment overrides use POPUP_<SECTION>__<FIELD>
(double underscore between levels, case-insensitive), e.g.
POPUP_LOOP__ENABLED=false or POPUP_SEED=3; values are parsed as YAML.
POPUP_BACKEND is reserved for kernel selection and ignored here. Unknown
keys, in files or the environment, are errors.
"""

import dataclasses
import os
import typing
from dataclasses import dataclass, field

import yaml

from ..assoc import AssociationParams, LoopParams
from ..boundary import SelectionParams
from ..errors import ConfigError
from ..geometry import CameraIntrinsics
from ..graph import SolverSettings
from ..sim import CorridorSpec, NoiseModel

ENV_PREFIX = "POPUP_"
RESERVED_ENV = {"POPUP_BACKEND"}


@dataclass
class CameraConfig:
    fx: float = 320.0
    fy: float = 320.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclass
class SelectionConfig:
    delta_close: float = 25.0
    delta_overlap: float = 15.0
    min_length: float = 15.0
    merge_gap: float = 20.0

    def params(self) -> SelectionParams:
        return SelectionParams(self.delta_close, self.delta_overlap, self.min_length, self.merge_gap)


@dataclass
class AssociationConfig:
    max_normal_angle_deg: float = 30.0
    max_plane_dist: float = 0.5
    min_overlap_ratio: float = 0.1
    w_angle: float = 0.4
    w_dist: float = 0.4
    w_overlap: float = 0.2
    window: int = 30  # frames a landmark stays an association candidate

    def params(self) -> AssociationParams:
        return AssociationParams(
            self.max_normal_angle_deg, self.max_plane_dist, self.min_overlap_ratio,
            self.w_angle, self.w_dist, self.w_overlap,
        )


@dataclass
class LoopConfig:
    enabled: bool = True
    gap_min: int = 30
    radius: float = 3.0
    max_normal_angle_deg: float = 30.0
    max_plane_dist: float = 3.5
    min_overlap_ratio: float = 0.05
    min_pairs: int = 2
    offset_tol: float = 0.3
    min_observations: int = 8
    # below this planar offset between copies and originals the revisit
    # confirms the map instead of correcting it; fuse only above
    merge_min_offset: float = 0.15
    # rollback gates for a committed merge: poses may move at most
    # radius + shift_slack, cost may grow to cost_growth * base + cost_slack
    shift_slack: float = 2.0
    cost_growth: float = 2.0
    cost_slack: float = 100.0

    def params(self) -> LoopParams:
        return LoopParams(
            self.gap_min, self.radius, self.max_normal_angle_deg,
            self.max_plane_dist, self.min_overlap_ratio, self.min_pairs,
            self.offset_tol, self.min_observations,
        )


@dataclass
class SolverConfig:
    max_iterations: int = 100
    lambda_init: float = 1e-4
    rel_decrease_tol: float = 1e-8
    update_tol: float = 1e-10
    plane_huber: float = 2.0  # whitened units; 0 = pure least squares

    def settings(self) -> SolverSettings:
        return SolverSettings(
            max_iterations=self.max_iterations,
            lambda_init=self.lambda_init,
            rel_decrease_tol=self.rel_decrease_tol,
            update_tol=self.update_tol,
            plane_huber=self.plane_huber,
        )


@dataclass
class NoiseConfig:
    pixel_sigma: float = 1.0
    odom_t_sigma: float = 0.02
    odom_r_sigma_deg: float = 0.5

    def model(self, seed: int) -> NoiseModel:
        return NoiseModel(self.pixel_sigma, self.odom_t_sigma, self.odom_r_sigma_deg, seed)


@dataclass
class RunConfig:
    """Estimator behavior; sigmas here are what the solver assumes."""

    optimize_every: int = 10
    repopup: bool = True
    plane_sigma: float = 0.02
    odom_t_sigma: float = 0.02
    odom_r_sigma_deg: float = 0.5
    prior_sigma: float = 1e-4
    wall_height: float = 2.5
    var_max: float = 0.25
    # walls whose nearest base point lies beyond this are not popped up;
    # near the horizon depth error per pixel grows quadratically with range
    max_popup_range: float = 6.0


@dataclass
class CorridorConfig:
    segment_lengths: list = field(default_factory=lambda: [15.0, 12.0])
    width: float = 3.0
    turns: list = field(default_factory=lambda: [1])
    loop: bool = False
    wall_height: float = 2.5
    camera_height: float = 1.0
    frame_spacing: float = 0.25
    loop_overrun: float = 2.0

    def spec(self) -> CorridorSpec:
        return CorridorSpec(
            segment_lengths=tuple(self.segment_lengths),
            width=self.width,
            turns=tuple(self.turns),
            loop=self.loop,
            wall_height=self.wall_height,
            camera_height=self.camera_height,
        )


@dataclass
class PipelineConfig:
    seed: int = 0
    camera: CameraConfig = field(default_factory=CameraConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    association: AssociationConfig = field(default_factory=AssociationConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    pipeline: RunConfig = field(default_factory=RunConfig)
    corridor: CorridorConfig = field(default_factory=CorridorConfig)


def _coerce(value, typ, path: str):
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return list(value)
    raise ConfigError(f"{path}: unsupported config type {typ}")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {unknown}")
    kwargs = {}
    for name, value in data.items():
        typ = hints[name]
        sub = f"{path}.{name}"
        if dataclasses.is_dataclass(typ):
            kwargs[name] = _build(typ, value, sub)
        else:
            kwargs[name] = _coerce(value, typ, sub)
    return cls(**kwargs)


def _set_path(cfg, keys: list, value, source: str):
    node = cfg
    for key in keys[:-1]:
        if not hasattr(node, key) or not dataclasses.is_dataclass(getattr(node, key)):
            raise ConfigError(f"{source}: no config section {'.'.join(keys[:-1])}")
        node = getattr(node, key)
    leaf = keys[-1]
    hints = typing.get_type_hints(type(node))
    if leaf not in hints or dataclasses.is_dataclass(hints[leaf]):
        raise ConfigError(f"{source}: no config field {'.'.join(keys)}")
    setattr(node, leaf, _coerce(value, hints[leaf], source))


def apply_env(cfg: PipelineConfig, environ=None) -> None:
    environ = os.environ if environ is None else environ
    for key in sorted(environ):
        if not key.upper().startswith(ENV_PREFIX) or key.upper() in RESERVED_ENV:
            continue
        raw = environ[key]
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        keys = [part.lower() for part in key[len(ENV_PREFIX):].split("__") if part]
        if not keys:
            raise ConfigError(f"{key}: empty override path")
        _set_path(cfg, keys, value, key)


def load_config(path=None, environ=None, overrides=None) -> PipelineConfig:
    """Resolve the full configuration.

    overrides is a {dotted.path: value} mapping from command-line flags and
    wins over everything.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    cfg = _build(PipelineConfig, data, "config")
    apply_env(cfg, environ)
    for dotted, value in (overrides or {}).items():
        _set_path(cfg, dotted.split("."), value, f"--{dotted}")
    return cfg
