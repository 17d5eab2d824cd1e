"""
Synthetic scenes with ground truth and simulated prediction maps.

The camera sits at the origin looking along +z into an open bin. The bin
is an axis-aligned box given by its center and extent in the camera frame;
its floor is the face farthest from the camera.

Two scenarios are generated:

``packed``
    Instances stand upright on the floor in a regular grid with a little
    rotation and translation jitter.
``pile``
    Instances are dropped one after the other with a random orientation and
    slide down until they touch the floor or an earlier instance.

A scene directory holds::

    scene.json                  spec, seed, camera and placements
    depth.pgm (+ .json)         16-bit depth with its scale
    class_labels.pgm            per-pixel class id
    instance_labels.pgm         per-pixel instance id
    boundary.pgm                ground-truth boundary (0 / 255)
    semantic.f32 (+ .json)      simulated P_l, (K + 1) channels
    boundary_prob.f32 (+ .json) simulated P_B
    models/                     the models with their manifest
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import (Any, Dict, List, Mapping, NamedTuple, Optional,
                    Tuple)

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .config import NoiseSettings, RenderSettings, SceneSettings
from .errors import DataError, InvariantViolation, PlacementError
from .geometry import MeshModel, RigidTransform
from .meshes import load_model, load_models, make_box, make_icosphere, \
    make_prism, save_models
from .rasters import read_depth, read_float_raster, read_pgm, write_depth, \
    write_float_raster, write_pgm
from .render import CameraIntrinsics, render_scene_depth
from .selection import pairwise_overlap_volume
from .storages import PathLike, atomic_directory, read_json, write_json
from .utils import rng_stream

__all__ = ('SceneSpec', 'Placement', 'GroundTruthScene', 'PredictionMaps',
           'generate_scene', 'simulate_predictions', 'write_scene',
           'read_scene', 'write_predictions', 'read_predictions',
           'model_from_description', 'spec_from_dict', 'SCENARIOS')

logger = logging.getLogger(__name__)

SCENARIOS = ('packed', 'pile')

SCENE_FILE = 'scene.json'
MODELS_DIR = 'models'


@dataclass(frozen=True)
class SceneSpec:
    """
    What to put into a scene.

    :param models: One model per class
    :param counts: Number of instances N_i per class id
    :param scenario: ``packed`` or ``pile``
    :param bin_extent: Bin size along x, y and z in meters
    :param seed: Random seed
    """

    models: Tuple[MeshModel, ...]
    counts: Mapping[int, int]
    scenario: str = 'packed'
    bin_extent: Tuple[float, float, float] = (0.2, 0.2, 0.15)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'models', tuple(self.models))
        object.__setattr__(self, 'counts',
                           {int(c): int(n) for c, n in self.counts.items()})
        object.__setattr__(self, 'bin_extent',
                           tuple(float(v) for v in self.bin_extent))

        if self.scenario not in SCENARIOS:
            raise DataError(f'Unknown scenario {self.scenario!r}')
        if len(self.bin_extent) != 3 or min(self.bin_extent) <= 0:
            raise DataError('The bin extent must be three positive sizes')
        class_ids = [model.class_id for model in self.models]
        if len(set(class_ids)) != len(class_ids):
            raise DataError('Every class needs exactly one model')
        for class_id in class_ids:
            if self.counts.get(class_id, 0) < 1:
                raise DataError(f'Class {class_id} needs a count >= 1')
        unknown = set(self.counts) - set(class_ids)
        if unknown:
            raise DataError(f'Counts for classes without a model: '
                            f'{sorted(unknown)}')

    @property
    def model_map(self) -> Dict[int, MeshModel]:
        return {model.class_id: model for model in self.models}

    @property
    def num_classes(self) -> int:
        return max(model.class_id for model in self.models)

    def with_seed(self, seed: int) -> 'SceneSpec':
        return SceneSpec(self.models, self.counts, self.scenario,
                         self.bin_extent, seed)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scenario': self.scenario,
            'bin_extent': list(self.bin_extent),
            'seed': self.seed,
            'counts': {str(c): n for c, n in sorted(self.counts.items())},
            'models': [{'class_id': m.class_id, 'name': m.name}
                       for m in self.models],
        }


def model_from_description(description: Mapping[str, Any],
                           base_dir: PathLike = '.') -> MeshModel:
    """
    Build a model from a spec file entry.

    Supported entries are ``{"shape": "box", "size": [x, y, z]}``,
    ``{"shape": "prism", "sides": n, "radius": r, "height": h}``,
    ``{"shape": "sphere", "radius": r}`` and ``{"file": "model.ply"}``; all
    carry a ``class_id``.
    """
    class_id = int(description.get('class_id', 1))
    name = description.get('name')
    if 'file' in description:
        return load_model(Path(base_dir) / description['file'], class_id,
                          name)

    shape = description.get('shape')
    if shape == 'box':
        return make_box(description.get('size', (0.05, 0.05, 0.05)),
                        class_id, name)
    if shape == 'prism':
        return make_prism(int(description.get('sides', 6)),
                          float(description.get('radius', 0.03)),
                          float(description.get('height', 0.04)),
                          class_id, name)
    if shape == 'sphere':
        return make_icosphere(float(description.get('radius', 0.03)),
                              int(description.get('subdivisions', 2)),
                              class_id, name)
    raise DataError(f'Cannot build a model from {dict(description)!r}')


def spec_from_dict(data: Mapping[str, Any],
                   base_dir: PathLike = '.') -> SceneSpec:
    """
    Read a scene spec document::

        {"scenario": "packed", "bin_extent": [0.2, 0.2, 0.15], "seed": 0,
         "models": [{"class_id": 1, "shape": "box", "size": [0.05, 0.05,
                     0.05], "count": 4}]}
    """
    try:
        models = [model_from_description(entry, base_dir)
                  for entry in data['models']]
        counts = {int(entry.get('class_id', 1)): int(entry.get('count', 1))
                  for entry in data['models']}
    except (KeyError, TypeError) as exc:
        raise DataError(f'Malformed scene spec: {exc}') from exc
    return SceneSpec(models, counts, data.get('scenario', 'packed'),
                     tuple(data.get('bin_extent', (0.2, 0.2, 0.15))),
                     int(data.get('seed', 0)))


class Placement(NamedTuple):
    """
    One ground-truth instance; instance ids count from 1 across the scene.
    """

    class_id: int
    instance_id: int
    pose: RigidTransform

    def to_dict(self) -> Dict[str, Any]:
        return {'class_id': self.class_id, 'instance_id': self.instance_id,
                'pose': self.pose.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'Placement':
        return cls(int(data['class_id']), int(data['instance_id']),
                   RigidTransform.from_dict(data['pose']))


@dataclass(frozen=True)
class GroundTruthScene:
    """
    Placements and their joint render.
    """

    spec: SceneSpec
    camera: CameraIntrinsics
    placements: Tuple[Placement, ...]
    depth: np.ndarray
    class_labels: np.ndarray
    instance_labels: np.ndarray
    boundary_mask: np.ndarray
    scene_id: str = field(default='scene')

    @property
    def models(self) -> Dict[int, MeshModel]:
        return self.spec.model_map

    def poses_of(self, class_id: int) -> List[RigidTransform]:
        return [p.pose for p in self.placements if p.class_id == class_id]

    def visible_pixels(self) -> Dict[int, int]:
        """
        Number of visible pixels per instance id.
        """
        counts = np.bincount(self.instance_labels.ravel(),
                             minlength=len(self.placements) + 1)
        return {p.instance_id: int(counts[p.instance_id])
                for p in self.placements}


@dataclass(frozen=True)
class PredictionMaps:
    """
    Per-pixel class probabilities ``semantic`` (channel 0 is background,
    channel ``l`` is class ``l``) and boundary probability ``boundary``.
    """

    semantic: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        if self.semantic.ndim != 3 or self.boundary.ndim != 2 \
                or self.semantic.shape[:2] != self.boundary.shape:
            raise DataError('Prediction maps must share the image shape')
        if np.any(self.boundary < 0) or np.any(self.boundary > 1) \
                or np.any(self.semantic < 0) or np.any(self.semantic > 1):
            raise DataError('Probabilities must lie in [0, 1]')
        if not np.allclose(self.semantic.sum(axis=2), 1.0, atol=1e-6):
            raise DataError('Semantic channels must sum to 1 per pixel')

    @property
    def num_classes(self) -> int:
        return self.semantic.shape[2] - 1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.boundary.shape

    def class_probability(self, class_id: int) -> np.ndarray:
        if not 1 <= class_id <= self.num_classes:
            return np.zeros(self.shape)
        return self.semantic[:, :, class_id]

    @classmethod
    def empty(cls, shape: Tuple[int, int],
              num_classes: int) -> 'PredictionMaps':
        semantic = np.zeros(shape + (num_classes + 1,))
        semantic[:, :, 0] = 1.0
        return cls(semantic, np.zeros(shape))


def _rotated_bounds(model: MeshModel, rotation: np.ndarray
                    ) -> Tuple[np.ndarray, np.ndarray]:
    vertices = model.vertices @ rotation.T
    return vertices.min(axis=0), vertices.max(axis=0)


def _bin_limits(spec: SceneSpec, settings: SceneSettings
                ) -> Tuple[np.ndarray, np.ndarray]:
    center = np.asarray(settings.bin_center, dtype=np.float64)
    half = np.asarray(spec.bin_extent) / 2.0
    return center - half, center + half


def _instances(spec: SceneSpec) -> List[MeshModel]:
    models = spec.model_map
    return [models[c] for c in sorted(spec.counts)
            for _ in range(spec.counts[c])]


def _place_packed(spec: SceneSpec, settings: SceneSettings,
                  rng: np.random.Generator) -> List[RigidTransform]:
    instances = _instances(spec)
    lo, hi = _bin_limits(spec, settings)
    extent = hi - lo

    footprint = np.max([m.bounds[1] - m.bounds[0] for m in instances],
                       axis=0)
    columns = int(np.floor(extent[0] / footprint[0] + 1e-9))
    rows = int(np.floor(extent[1] / footprint[1] + 1e-9))
    capacity = columns * rows if footprint[2] <= extent[2] + 1e-9 else 0
    if len(instances) > capacity:
        failing = instances[capacity].class_id
        raise PlacementError(failing, f'The bin holds {capacity} upright '
                                      f'instances, class {failing} does not '
                                      f'fit')

    spacing = np.array([extent[0] / columns, extent[1] / rows])
    max_angle = np.radians(settings.packed_rotation_jitter)
    poses = []
    for number, model in enumerate(instances):
        row, column = divmod(number, columns)
        cell_center = lo[:2] + (np.array([column, row]) + 0.5) * spacing
        model_lo, model_hi = model.bounds
        model_center = (model_lo + model_hi) / 2.0

        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        rotation = Rotation.from_rotvec(
            axis * rng.uniform(0.0, max_angle)).as_matrix()
        shift = rng.uniform(-1.0, 1.0, size=2) \
            * settings.packed_translation_jitter

        rot_lo, rot_hi = _rotated_bounds(model, rotation)
        rot_center = (rot_lo + rot_hi) / 2.0
        half = (rot_hi - rot_lo)[:2] / 2.0
        slack = spacing / 2.0 - half
        if np.any(slack < 0) or rot_hi[2] - rot_lo[2] > extent[2]:
            # The jittered rotation no longer fits its cell
            rotation = np.eye(3)
            rot_lo, rot_hi = model_lo, model_hi
            rot_center = model_center
            slack = spacing / 2.0 - (rot_hi - rot_lo)[:2] / 2.0
        shift = np.clip(shift, -np.maximum(slack, 0.0),
                        np.maximum(slack, 0.0))

        translation = np.empty(3)
        translation[:2] = cell_center + shift - rot_center[:2]
        # Rest on the floor
        translation[2] = hi[2] - rot_hi[2]
        poses.append(RigidTransform.from_matrix(rotation, translation))
    return poses


def _place_pile(spec: SceneSpec, settings: SceneSettings,
                rng: np.random.Generator, epsilon_v_fraction: float,
                voxel_fraction: float) -> List[RigidTransform]:
    instances = _instances(spec)
    lo, hi = _bin_limits(spec, settings)
    placed: List[Tuple[MeshModel, RigidTransform]] = []

    def collides(model: MeshModel, pose: RigidTransform) -> bool:
        for other, other_pose in placed:
            tolerance = epsilon_v_fraction * min(model.volume, other.volume)
            voxel = voxel_fraction * min(model.diameter, other.diameter)
            overlap = pairwise_overlap_volume(model, pose, other, other_pose,
                                              voxel)
            if overlap.volume > tolerance:
                return True
        return False

    for model in instances:
        step = settings.drop_step_fraction * model.diameter
        for _ in range(settings.drop_attempts):
            quaternion = rng.normal(size=4)
            rotation = Rotation.from_quat(
                quaternion / np.linalg.norm(quaternion)).as_matrix()
            rot_lo, rot_hi = _rotated_bounds(model, rotation)
            size = rot_hi - rot_lo
            if np.any(size > hi - lo):
                continue

            translation = np.empty(3)
            translation[:2] = rng.uniform(lo[:2] - rot_lo[:2],
                                          hi[:2] - rot_hi[:2])
            translation[2] = lo[2] - rot_lo[2]
            floor_z = hi[2] - rot_hi[2]

            pose = RigidTransform.from_matrix(rotation, translation)
            if collides(model, pose):
                continue

            # Slide down until the floor or the pile stops the instance
            while translation[2] < floor_z:
                lower = translation.copy()
                lower[2] = min(translation[2] + step, floor_z)
                candidate = RigidTransform.from_matrix(rotation, lower)
                if collides(model, candidate):
                    break
                translation, pose = lower, candidate

            placed.append((model, pose))
            break
        else:
            raise PlacementError(model.class_id,
                                 f'Could not drop an instance of class '
                                 f'{model.class_id} into the bin after '
                                 f'{settings.drop_attempts} attempts')

    return [pose for _, pose in placed]


def generate_scene(spec: SceneSpec, camera: Optional[CameraIntrinsics] = None,
                   settings: Optional[SceneSettings] = None,
                   render_settings: Optional[RenderSettings] = None,
                   epsilon_v_fraction: float = 0.03,
                   voxel_fraction: float = 1.0 / 40.0,
                   scene_id: Optional[str] = None) -> GroundTruthScene:
    """
    Place the instances of ``spec`` and render them.

    The result depends only on the arguments; equal seeds give identical
    scenes.

    :raises PlacementError: The bin cannot hold the requested instances
    :raises InvariantViolation: A packed instance ended up invisible
    """
    settings = settings or SceneSettings()
    render_settings = render_settings or RenderSettings()
    camera = camera or CameraIntrinsics.from_settings(render_settings)
    rng = rng_stream(spec.seed, 0)

    if spec.scenario == 'packed':
        poses = _place_packed(spec, settings, rng)
    else:
        poses = _place_pile(spec, settings, rng, epsilon_v_fraction,
                            voxel_fraction)

    instances = _instances(spec)
    placements = tuple(Placement(model.class_id, number, pose)
                       for number, (model, pose)
                       in enumerate(zip(instances, poses), start=1))
    rendered = render_scene_depth(
        list(zip(instances, poses)), camera, render_settings.near,
        render_settings.self_occlusion,
        render_settings.discontinuity_fraction)

    scene = GroundTruthScene(spec, camera, placements, rendered.depth,
                             rendered.class_ids, rendered.instance_ids,
                             rendered.boundary_mask,
                             scene_id or f'scene{spec.seed:06d}')

    if spec.scenario == 'packed':
        hidden = [i for i, n in scene.visible_pixels().items() if n == 0]
        if hidden:
            raise InvariantViolation(f'Packed instances {hidden} are not '
                                     f'visible; move the bin into view')

    logger.info('Generated %s scene %s with %d instances',
                spec.scenario, scene.scene_id, len(placements))
    return scene


def simulate_predictions(scene: GroundTruthScene,
                         noise: Optional[NoiseSettings] = None,
                         num_classes: Optional[int] = None,
                         seed: Optional[int] = None) -> PredictionMaps:
    """
    Noisy stand-ins for the semantic and boundary predictions of a network.

    Semantic maps mix the one-hot labels with the uniform distribution
    (weight ``eta_sem``), add Gaussian noise of deviation ``sigma_sem`` to
    the log probabilities and renormalize with a softmax.

    The boundary map is 1 on the ground-truth boundary and falls off
    linearly to 0 at ``radius + 1`` pixels. Ground-truth boundary pixels are
    then dropped (set to 0) with probability ``dropout_rate``, and any pixel
    is set to 1 with probability ``speckle_rate``.

    :param num_classes: Number of object classes K; taken from the spec by
                        default
    :param seed: Noise seed; derived from the scene seed by default
    """
    noise = noise or NoiseSettings()
    num_classes = num_classes or scene.spec.num_classes
    rng = rng_stream(scene.spec.seed if seed is None else seed, 1)
    shape = scene.class_labels.shape

    onehot = np.zeros(shape + (num_classes + 1,))
    labels = np.clip(scene.class_labels, 0, num_classes)
    onehot[np.arange(shape[0])[:, None], np.arange(shape[1])[None, :],
           labels] = 1.0

    semantic = (1.0 - noise.eta_sem) * onehot \
        + noise.eta_sem / (num_classes + 1)
    if noise.sigma_sem > 0:
        with np.errstate(divide='ignore'):
            logits = np.log(semantic)
        logits = logits + noise.sigma_sem * rng.normal(size=semantic.shape)
        logits -= logits.max(axis=2, keepdims=True)
        semantic = np.exp(logits)
        semantic /= semantic.sum(axis=2, keepdims=True)

    truth = scene.boundary_mask.astype(bool)
    if noise.radius > 0 and truth.any():
        distance = ndimage.distance_transform_edt(~truth)
        boundary = np.clip(1.0 - distance / (noise.radius + 1), 0.0, 1.0)
    else:
        boundary = truth.astype(np.float64)

    if noise.dropout_rate > 0:
        dropped = truth & (rng.random(shape) < noise.dropout_rate)
        boundary[dropped] = 0.0
    if noise.speckle_rate > 0:
        boundary[rng.random(shape) < noise.speckle_rate] = 1.0

    return PredictionMaps(semantic, boundary)


def write_scene(directory: PathLike, scene: GroundTruthScene,
                maps: Optional[PredictionMaps] = None) -> Path:
    """
    Write a scene directory atomically.
    """
    with atomic_directory(directory) as staging:
        save_models(staging / MODELS_DIR, scene.spec.models)
        write_depth(staging / 'depth.pgm', scene.depth)
        labels_dtype = np.uint8 if len(scene.placements) < 256 \
            else np.uint16
        write_pgm(staging / 'class_labels.pgm',
                  scene.class_labels.astype(np.uint8))
        write_pgm(staging / 'instance_labels.pgm',
                  scene.instance_labels.astype(labels_dtype))
        write_pgm(staging / 'boundary.pgm',
                  scene.boundary_mask.astype(np.uint8) * 255)
        if maps is not None:
            _write_maps(staging, maps)
        write_json(staging / SCENE_FILE, {
            'scene_id': scene.scene_id,
            'spec': scene.spec.to_dict(),
            'seed': scene.spec.seed,
            'camera': scene.camera.to_dict(),
            'placements': [p.to_dict() for p in scene.placements],
        })
    return Path(directory)


def _write_maps(directory: Path, maps: PredictionMaps) -> None:
    write_float_raster(directory / 'semantic.f32', maps.semantic)
    write_float_raster(directory / 'boundary_prob.f32', maps.boundary)


def write_predictions(directory: PathLike, maps: PredictionMaps) -> None:
    """
    Add (or replace) the prediction maps of an existing scene directory.
    """
    directory = Path(directory)
    if not (directory / SCENE_FILE).exists():
        raise DataError(f'{directory} is not a scene directory')
    _write_maps(directory, maps)


def read_predictions(directory: PathLike) -> Optional[PredictionMaps]:
    """
    The prediction maps of a scene directory, ``None`` if there are none.
    """
    directory = Path(directory)
    if not (directory / 'semantic.f32').exists():
        return None
    semantic = read_float_raster(directory / 'semantic.f32')
    if semantic.ndim == 2:
        semantic = semantic[:, :, None]
    boundary = read_float_raster(directory / 'boundary_prob.f32')
    # float32 storage: renormalize so channels sum to 1 in float64
    semantic = np.clip(semantic, 0.0, 1.0)
    totals = semantic.sum(axis=2, keepdims=True)
    semantic = np.divide(semantic, totals, out=np.zeros_like(semantic),
                         where=totals > 0)
    # Pixels without any class mass are background
    semantic[totals[:, :, 0] <= 0, 0] = 1.0
    return PredictionMaps(semantic, np.clip(boundary, 0.0, 1.0))


def read_scene(directory: PathLike) -> GroundTruthScene:
    """
    Read a scene directory written by :func:`write_scene`.

    :raises DataError: ``scene.json`` lacks a field or holds a wrong type
    """
    directory = Path(directory)
    document = read_json(directory / SCENE_FILE)
    models = load_models(directory / MODELS_DIR)
    try:
        spec_data = document['spec']
        spec = SceneSpec(
            [models[c] for c in sorted(models)],
            {int(c): int(n) for c, n in spec_data['counts'].items()},
            spec_data['scenario'], tuple(spec_data['bin_extent']),
            int(spec_data['seed']))
        camera = CameraIntrinsics.from_dict(document['camera'])
        placements = tuple(Placement.from_dict(p)
                           for p in document['placements'])
        scene_id = str(document.get('scene_id', directory.name))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise DataError(f'{directory / SCENE_FILE} is not a scene '
                        f'document: {exc}') from None

    return GroundTruthScene(
        spec, camera, placements,
        read_depth(directory / 'depth.pgm'),
        read_pgm(directory / 'class_labels.pgm').astype(np.int32),
        read_pgm(directory / 'instance_labels.pgm').astype(np.int32),
        read_pgm(directory / 'boundary.pgm') > 0, scene_id)
