"""
Typed settings for every stage of the pipeline.

A configuration file is a TOML document whose tables are the section names
of :class:`Config` and whose keys are the field names of the section
dataclasses::

    [hypgen]
    num_bases = 50
    gamma = 0.9

    [select]
    solver = "greedy"

Keys that are left out keep their defaults.
"""

import math
import os
import sys
from dataclasses import dataclass, field, fields, replace, asdict
from typing import Any, Dict, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

__all__ = (
    'RenderSettings', 'NoiseSettings', 'SceneSettings', 'HypgenSettings',
    'ScoringSettings', 'GBRTSettings', 'SelectSettings', 'EvaluateSettings',
    'Config', 'load_config', 'default_config_path', 'CONFIG_ENV_VAR',
)

#: Environment variable holding an optional default config path
CONFIG_ENV_VAR = 'TINYPOSE_CONFIG'


@dataclass(frozen=True)
class RenderSettings:
    width: int = 320
    height: int = 240
    fx: float = 280.0
    fy: float = 280.0
    cx: float = 160.0
    cy: float = 120.0
    #: Near clipping plane in meters
    near: float = 0.01
    #: Include self-occlusion contours in the visible boundary B(T)
    self_occlusion: bool = True
    #: Depth discontinuity marking a self-occlusion contour, as a fraction
    #: of the model diameter
    discontinuity_fraction: float = 0.1


@dataclass(frozen=True)
class NoiseSettings:
    """
    Parameters of the simulated prediction maps.
    """

    #: Mixing weight of the uniform distribution in the semantic maps
    eta_sem: float = 0.1
    #: Standard deviation of the per-pixel logit noise
    sigma_sem: float = 0.5
    #: Dilation radius (pixels) of the boundary probability ramp
    radius: int = 1
    #: False-positive speckle rate of the boundary map
    speckle_rate: float = 0.02
    #: False-negative dropout rate of the boundary map
    dropout_rate: float = 0.1

    @classmethod
    def noiseless(cls) -> 'NoiseSettings':
        return cls(eta_sem=0.0, sigma_sem=0.0, radius=0,
                   speckle_rate=0.0, dropout_rate=0.0)


@dataclass(frozen=True)
class SceneSettings:
    #: Center of the bin volume in the camera frame (meters)
    bin_center: Tuple[float, float, float] = (0.0, 0.0, 0.62)
    #: Maximum rotation jitter of packed scenes (degrees)
    packed_rotation_jitter: float = 2.0
    #: Maximum translation jitter of packed scenes (meters)
    packed_translation_jitter: float = 0.002
    #: Attempts per instance in pile scenes
    drop_attempts: int = 50
    #: Vertical step of the drop-and-settle loop, fraction of the diameter
    drop_step_fraction: float = 0.05


@dataclass(frozen=True)
class HypgenSettings:
    #: Number of bases per class (A_i)
    num_bases: int = 100
    #: Dispersion decay (gamma)
    gamma: float = 0.9
    #: Boundary probability threshold (delta)
    delta: float = 0.5
    #: Path length limit in hops; ``None`` means image diagonal / 4
    epsilon_hops: Optional[float] = None
    #: Hypotheses per class (H_i)
    max_hypotheses: int = 130
    #: Draws per base before giving up
    retry_budget: int = 20
    #: Coplanarity tolerance as a fraction of the diameter (tau_plane)
    plane_fraction: float = 1.0 / 50.0
    #: Congruence distance tolerance as a fraction of the diameter
    distance_fraction: float = 1.0 / 30.0
    #: Congruence ratio tolerance
    ratio_tolerance: float = 0.05
    #: Congruent sets kept per base, best congruence error first
    max_congruent: int = 32
    #: LCP radius as a fraction of the diameter
    lcp_fraction: float = 1.0 / 20.0
    #: Dedup thresholds
    rotation_threshold_deg: float = 15.0
    translation_fraction: float = 0.1
    #: ICP
    icp_iterations: int = 30
    icp_radius_fraction: float = 0.1
    #: Model surface samples used by the PPF table, LCP, ICP and ADI
    model_samples: int = 500
    #: PPF quantization
    ppf_distance_fraction: float = 1.0 / 20.0
    ppf_angle_step_deg: float = 12.0
    #: Use the boundary probability map when building the pixel graph
    use_boundary: bool = True

    def epsilon_for(self, width: int, height: int) -> float:
        if self.epsilon_hops is not None:
            return float(self.epsilon_hops)
        return math.hypot(width, height) / 4.0


@dataclass(frozen=True)
class ScoringSettings:
    #: Surface matching distance (meters)
    delta_s: float = 0.005
    #: Boundary matching distance (pixels)
    delta_b: float = 10.0
    #: Threshold turning P_B into the scene boundary set S_B
    boundary_threshold: float = 0.5
    #: Random poses added around each ground-truth pose for training
    perturbations_per_instance: int = 20
    perturbation_rotation_deg: float = 30.0
    perturbation_translation_fraction: float = 0.5


@dataclass(frozen=True)
class GBRTSettings:
    n_trees: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    #: Fraction of scenes kept out of training for the held-out MSE column
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class SelectSettings:
    #: ``exact`` or ``greedy``
    solver: str = 'exact'
    #: Tolerated overlap as a fraction of the smaller model volume
    epsilon_v_fraction: float = 0.03
    #: Voxel edge as a fraction of the smaller model diameter
    voxel_fraction: float = 1.0 / 40.0
    #: Acceptance fraction k_l anchoring the score transform
    k_l: float = 0.1


@dataclass(frozen=True)
class EvaluateSettings:
    k_l: float = 0.1
    #: ``greedy`` (nearest first) or ``hungarian``
    assignment: str = 'greedy'


_SECTIONS = {
    'render': RenderSettings,
    'noise': NoiseSettings,
    'scene': SceneSettings,
    'hypgen': HypgenSettings,
    'scoring': ScoringSettings,
    'gbrt': GBRTSettings,
    'select': SelectSettings,
    'evaluate': EvaluateSettings,
}


@dataclass(frozen=True)
class Config:
    """
    All settings of a run.
    """

    render: RenderSettings = field(default_factory=RenderSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    scene: SceneSettings = field(default_factory=SceneSettings)
    hypgen: HypgenSettings = field(default_factory=HypgenSettings)
    scoring: ScoringSettings = field(default_factory=ScoringSettings)
    gbrt: GBRTSettings = field(default_factory=GBRTSettings)
    select: SelectSettings = field(default_factory=SelectSettings)
    evaluate: EvaluateSettings = field(default_factory=EvaluateSettings)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Config':
        """
        Build a config from a nested mapping, rejecting unknown keys.
        """
        sections: Dict[str, Any] = {}
        for name, values in data.items():
            if name not in _SECTIONS:
                raise ConfigError(f'Unknown config section [{name}]')
            if not isinstance(values, Mapping):
                raise ConfigError(f'Config section [{name}] must be a table')

            section_cls = _SECTIONS[name]
            known = {f.name: f for f in fields(section_cls)}
            kwargs = {}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f'Unknown key {key!r} in [{name}]')
                if isinstance(value, list):
                    value = tuple(value)
                kwargs[key] = value
            sections[name] = section_cls(**kwargs)

        config = cls(**sections)
        config.validate()
        return config

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in _SECTIONS}

    def with_section(self, name: str, **changes) -> 'Config':
        """
        Return a copy with some fields of one section replaced.
        """
        section = replace(getattr(self, name), **changes)
        return replace(self, **{name: section})

    def validate(self) -> None:
        if self.select.solver not in ('exact', 'greedy'):
            raise ConfigError(f'Unknown solver {self.select.solver!r}')
        if self.evaluate.assignment not in ('greedy', 'hungarian'):
            raise ConfigError(
                f'Unknown assignment {self.evaluate.assignment!r}')
        if not 0.0 <= self.hypgen.gamma <= 1.0:
            raise ConfigError('hypgen.gamma must lie in [0, 1]')
        if self.gbrt.learning_rate <= 0 or self.gbrt.learning_rate > 1:
            raise ConfigError('gbrt.learning_rate must lie in (0, 1]')
        if self.hypgen.ppf_angle_step_deg <= 0 \
                or self.hypgen.ppf_distance_fraction <= 0:
            raise ConfigError('PPF quantization steps must be positive')


def default_config_path() -> Optional[str]:
    """
    The config path named by ``TINYPOSE_CONFIG``, if any.
    """
    return os.environ.get(CONFIG_ENV_VAR) or None


def load_config(path: Optional[str] = None) -> Config:
    """
    Load a config file; without a path, the defaults are returned.

    :param path: Path of a TOML config file
    """
    if path is None:
        return Config()

    try:
        with open(path, 'rb') as handle:
            data = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f'Cannot parse config {path}: {exc}') from exc

    return Config.from_dict(data)
