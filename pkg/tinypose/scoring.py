"""
Alignment features of pose hypotheses and the learned quality score.

A hypothesis is rendered into the camera; its visible pixels ``V(T)`` and
visible boundary ``B(T)`` are compared against the observation:

* ``f1``: fraction of ``B(T)`` on the predicted scene boundary ``S_B``
* ``f2``: ``|B(T) & S_B|`` over the scene boundary pixels inside ``V(T)``
* ``f3``: fraction of ``V(T)`` whose observed depth is within ``delta_s``
* ``f4``: class probability weighted depth and normal agreement over
  ``V(T)``
* ``f5``: closeness of ``B(T)`` to ``S_B``, each pixel contributing
  ``1 - dist / delta_b`` with distances clipped at ``delta_b`` pixels

A tree ensemble maps the features to a predicted ADI distance, which is
turned into a score in ``[0, 1]`` by :func:`quality_score`.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import (Iterable, List, Mapping, NamedTuple, Optional, Sequence,
                    Tuple)

import numpy as np
from scipy import ndimage

from .config import Config, RenderSettings, ScoringSettings
from .errors import DataError
from .gbrt import TrainingSample, TreeEnsemble
from .geometry import (MeshModel, RigidTransform, adi_distance,
                       perturb_pose)
from .hypgen import HypothesisSet, generate_hypotheses
from .render import CameraIntrinsics, normals_from_depth, render_depth
from .utils import rng_stream

__all__ = ('AlignmentFeatures', 'Observation', 'TrainingSample',
           'compute_features', 'score_features', 'build_training_set',
           'training_targets', 'predict_quality', 'quality_score')

logger = logging.getLogger(__name__)


class AlignmentFeatures(NamedTuple):
    f1: float = 0.0
    f2: float = 0.0
    f3: float = 0.0
    f4: float = 0.0
    f5: float = 0.0

    @classmethod
    def zeros(cls) -> 'AlignmentFeatures':
        return cls()


@dataclass(frozen=True)
class Observation:
    """
    Per-scene inputs of feature computation, prepared once.

    ``boundary_distance`` holds the pixel distance to the nearest ``S_B``
    pixel, clipped at ``delta_b``.
    """

    maps: object
    depth: np.ndarray
    camera: CameraIntrinsics
    normals: np.ndarray
    normals_valid: np.ndarray
    scene_boundary: np.ndarray
    boundary_distance: np.ndarray
    settings: ScoringSettings
    render: RenderSettings

    @classmethod
    def prepare(cls, maps, depth: np.ndarray, camera: CameraIntrinsics,
                settings: Optional[ScoringSettings] = None,
                render: Optional[RenderSettings] = None) -> 'Observation':
        settings = settings or ScoringSettings()
        render = render or RenderSettings()
        depth = np.asarray(depth, dtype=np.float64)
        if depth.shape != camera.shape or maps.shape != camera.shape:
            raise DataError('Depth, prediction maps and camera disagree on '
                            'the image size')

        normals, valid = normals_from_depth(depth, camera)
        scene_boundary = maps.boundary >= settings.boundary_threshold
        if scene_boundary.any():
            distance = ndimage.distance_transform_edt(~scene_boundary)
        else:
            distance = np.full(depth.shape, np.inf)
        return cls(maps, depth, camera, normals, valid, scene_boundary,
                   np.minimum(distance, settings.delta_b), settings, render)


def compute_features(pose: RigidTransform, model: MeshModel,
                     observation: Observation,
                     class_id: Optional[int] = None) -> AlignmentFeatures:
    """
    The five alignment features of ``model`` placed at ``pose``.

    A pose whose render is empty has all features zero.

    :param class_id: Channel of the semantic map weighting ``f4``; the
                     model's class by default
    """
    settings = observation.settings
    rendered = render_depth(model, pose, observation.camera,
                            observation.render.near,
                            observation.render.self_occlusion,
                            observation.render.discontinuity_fraction)
    if rendered.is_empty:
        return AlignmentFeatures.zeros()

    visible = rendered.visible_mask
    boundary = rendered.boundary_mask
    scene_boundary = observation.scene_boundary

    on_boundary = int(np.count_nonzero(boundary & scene_boundary))
    boundary_count = int(np.count_nonzero(boundary))
    inside_boundary = int(np.count_nonzero(visible & scene_boundary))
    f1 = on_boundary / boundary_count if boundary_count else 0.0
    f2 = on_boundary / inside_boundary if inside_boundary else 0.0

    observed = observation.depth[visible]
    gap = np.abs(rendered.depth[visible] - observed)
    has_depth = observed > 0
    f3 = float(np.count_nonzero(has_depth & (gap < settings.delta_s))) \
        / len(observed)

    agreement = np.einsum('ij,ij->i', rendered.normals[visible],
                          observation.normals[visible])
    closeness = 1.0 - np.minimum(gap, settings.delta_s) / settings.delta_s
    similarity = np.maximum(closeness * agreement, 0.0)
    similarity[~(has_depth & observation.normals_valid[visible])] = 0.0
    probability = observation.maps.class_probability(
        model.class_id if class_id is None else class_id)[visible]
    f4 = float(np.sum(probability * similarity))

    f5 = float(np.sum(1.0 - observation.boundary_distance[boundary]
                      / settings.delta_b))
    return AlignmentFeatures(f1, f2, f3, f4, f5)


def quality_score(predicted_adi: float, diameter: float,
                  k_l: float = 0.1) -> float:
    """
    ``max(0, 1 - predicted_adi / (k_l * diameter))``.
    """
    if diameter <= 0 or k_l <= 0:
        return 0.0
    return max(0.0, 1.0 - predicted_adi / (k_l * diameter))


def predict_quality(ensemble: TreeEnsemble, features: Sequence[float],
                    diameter: float, k_l: float = 0.1
                    ) -> Tuple[float, float]:
    """
    :returns: ``(predicted_adi, score)``
    """
    predicted = ensemble.predict_one(features)
    return predicted, quality_score(predicted, diameter, k_l)


def score_features(hypotheses: HypothesisSet,
                   models: Mapping[int, MeshModel],
                   observation: Observation) -> HypothesisSet:
    """
    Fill in the features of every hypothesis.
    """
    scored = [replace(h, features=tuple(compute_features(
        h.pose, models[h.class_id], observation)))
        for h in hypotheses]
    return hypotheses.replace_all(scored)


def training_targets(candidates: Iterable[Tuple[int, RigidTransform]],
                     ground_truth: Mapping[int, Sequence[RigidTransform]],
                     models: Mapping[int, MeshModel]
                     ) -> List[Optional[float]]:
    """
    ADI distance of every ``(class_id, pose)`` to the closest ground-truth
    pose of its class; ``None`` for classes without ground truth.
    """
    targets: List[Optional[float]] = []
    for class_id, pose in candidates:
        poses = ground_truth.get(class_id, ())
        if not poses:
            targets.append(None)
            continue
        model = models[class_id]
        targets.append(min(adi_distance(pose, truth, model)
                           for truth in poses))
    return targets


def build_training_set(scenes: Sequence, config: Optional[Config] = None,
                       seed: Optional[int] = None) -> List[TrainingSample]:
    """
    Training samples from simulated scenes.

    For every ``(scene, maps)`` pair, hypotheses are generated as at
    estimation time and random perturbations of every ground-truth pose are
    added. Each candidate is described by its features and labelled with
    the ADI distance to the closest ground-truth pose of its class.

    :param seed: Hypothesis seed; each scene's own seed by default
    """
    config = config or Config()
    settings = config.scoring
    samples: List[TrainingSample] = []

    for scene, maps in scenes:
        models = scene.models
        scene_seed = scene.spec.seed if seed is None else seed
        observation = Observation.prepare(maps, scene.depth, scene.camera,
                                          settings, config.render)
        hypotheses = generate_hypotheses(maps, scene.depth, scene.camera,
                                         models, config.hypgen, scene_seed)

        candidates = [(h.class_id, h.pose) for h in hypotheses]
        rng = rng_stream(scene.spec.seed, 2)
        for placement in scene.placements:
            diameter = models[placement.class_id].diameter
            for _ in range(settings.perturbations_per_instance):
                candidates.append((placement.class_id, perturb_pose(
                    placement.pose, rng,
                    math.radians(settings.perturbation_rotation_deg),
                    settings.perturbation_translation_fraction * diameter)))

        truth = {c: scene.poses_of(c) for c in models}
        missing = sorted(c for c, poses in truth.items() if not poses)
        if missing:
            logger.warning('Scene %s has no instances of classes %s; their '
                           'hypotheses are skipped', scene.scene_id, missing)

        for (class_id, pose), target in zip(
                candidates, training_targets(candidates, truth, models)):
            if target is None:
                continue
            features = compute_features(pose, models[class_id], observation)
            samples.append(TrainingSample(tuple(features), target,
                                          scene.scene_id, class_id))

        logger.info('Scene %s: %d training samples so far', scene.scene_id,
                    len(samples))
    return samples
