"""
Pose estimation for one scene: hypotheses, scores, conflicts, selection.
"""

import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from .config import Config
from .errors import DataError
from .evaluation import MANUAL_OBJECTIVES, oracle_scores
from .gbrt import TreeEnsemble
from .geometry import MeshModel, RigidTransform
from .hypgen import HypothesisSet, PoseHypothesis, generate_hypotheses
from .render import CameraIntrinsics
from .scoring import Observation, predict_quality, score_features
from .selection import (Selection, SelectionItem, SelectionProblem,
                        assemble_scene, build_conflicts, solve)
from .storages import PathLike, read_json, write_json

__all__ = ('OBJECTIVES', 'Estimate', 'PoseEstimator', 'write_estimate',
           'read_estimate', 'estimate_path')

logger = logging.getLogger(__name__)

#: Ways of scoring hypotheses for the selection
OBJECTIVES = ('learned', 'manual-scene', 'manual-full', 'oracle')


@dataclass
class Estimate:
    """
    The outcome of :meth:`PoseEstimator.estimate`.
    """

    scene_id: str
    objective: str
    hypotheses: List[PoseHypothesis]
    problem: SelectionProblem
    selection: Selection
    poses: Dict[int, List[RigidTransform]]
    failed_bases: Dict[int, int]

    @property
    def chosen(self) -> List[PoseHypothesis]:
        return [self.hypotheses[k] for k in self.selection.indices]

    def to_dict(self) -> Dict[str, Any]:
        counts: Dict[str, int] = {}
        for hypothesis in self.hypotheses:
            key = str(hypothesis.class_id)
            counts[key] = counts.get(key, 0) + 1
        return {
            'scene_id': self.scene_id,
            'objective': self.objective,
            'solver': self.selection.solver,
            'value': self.selection.value,
            'nodes': self.selection.nodes,
            'wall_time': self.selection.wall_time,
            'num_hypotheses': counts,
            'num_conflicts': len(self.problem.conflicts),
            'failed_bases': {str(c): n for c, n in
                             sorted(self.failed_bases.items())},
            'poses': [h.to_dict() for h in self.chosen],
        }


class PoseEstimator:
    """
    Estimates the poses of all instances in a scene.

    :param models: Models by class id
    :param ensemble: The quality regressor; required by the ``learned``
                     objective
    :param objective: One of :data:`OBJECTIVES`
    :param solver: ``exact`` or ``greedy``; from the config by default
    """

    def __init__(self, models: Mapping[int, MeshModel],
                 config: Optional[Config] = None,
                 ensemble: Optional[TreeEnsemble] = None,
                 objective: str = 'learned', solver: Optional[str] = None):
        if objective not in OBJECTIVES:
            raise DataError(f'Unknown objective {objective!r}')
        if objective == 'learned' and ensemble is None:
            raise DataError('The learned objective needs a trained ensemble')
        self.models = dict(models)
        self.config = config or Config()
        self.ensemble = ensemble
        self.objective = objective
        self.solver = solver or self.config.select.solver

    def __repr__(self):
        return '<{} classes={} objective={} solver={}>'.format(
            type(self).__name__, sorted(self.models), self.objective,
            self.solver)

    def _score(self, hypotheses: List[PoseHypothesis],
               scene=None) -> List[PoseHypothesis]:
        k_l = self.config.select.k_l
        if self.objective == 'oracle':
            if scene is None:
                raise DataError('The oracle objective needs ground truth')
            scores = oracle_scores(hypotheses, scene, k_l)
            return [replace(h, score=s) for h, s in zip(hypotheses, scores)]

        scored = []
        for hypothesis in hypotheses:
            features = hypothesis.features or (0.0,) * 5
            if self.objective == 'learned':
                assert self.ensemble is not None
                predicted, score = predict_quality(
                    self.ensemble, features,
                    self.models[hypothesis.class_id].diameter, k_l)
                scored.append(replace(hypothesis, predicted_adi=predicted,
                                      score=score))
            else:
                scored.append(replace(
                    hypothesis,
                    score=float(MANUAL_OBJECTIVES[self.objective](features))))
        return scored

    def problem_for(self, hypotheses: List[PoseHypothesis],
                    capacities: Mapping[int, Optional[int]]
                    ) -> SelectionProblem:
        """
        The selection problem of scored hypotheses.

        Conflicts are only built among positive scores; the others can never
        be chosen.
        """
        settings = self.config.select
        items = []
        index_in_class: Dict[int, int] = {}
        for hypothesis in hypotheses:
            index = index_in_class.get(hypothesis.class_id, 0)
            index_in_class[hypothesis.class_id] = index + 1
            items.append(SelectionItem(hypothesis.class_id, index,
                                       hypothesis.score or 0.0))

        positive = [k for k, item in enumerate(items) if item.score > 0]
        local = build_conflicts(
            [(self.models[hypotheses[k].class_id], hypotheses[k].pose)
             for k in positive],
            epsilon_v_fraction=settings.epsilon_v_fraction,
            voxel_fraction=settings.voxel_fraction)
        conflicts = [(positive[a], positive[b]) for a, b in local]

        volumes = [m.volume for m in self.models.values() if m.volume > 0]
        epsilon_v = settings.epsilon_v_fraction * min(volumes) \
            if volumes else 0.0
        return SelectionProblem(items, capacities, conflicts, epsilon_v)

    def estimate(self, maps, depth: np.ndarray, camera: CameraIntrinsics,
                 capacities: Mapping[int, Optional[int]], seed: int = 0,
                 scene_id: str = 'scene', scene=None) -> Estimate:
        """
        Estimate the poses in one depth image.

        :param capacities: Number of instances ``N_i`` per class
        :param scene: Ground truth, only used by the ``oracle`` objective
        """
        if self.objective == 'oracle' and scene is None:
            raise DataError('The oracle objective needs ground truth')

        generated: HypothesisSet = generate_hypotheses(
            maps, depth, camera, self.models, self.config.hypgen, seed)
        observation = Observation.prepare(maps, depth, camera,
                                          self.config.scoring,
                                          self.config.render)
        hypotheses = self._score(
            score_features(generated, self.models, observation).flatten(),
            scene)

        problem = self.problem_for(hypotheses, capacities)
        selection = solve(problem, self.solver)
        poses = assemble_scene(selection, problem,
                               [h.pose for h in hypotheses])

        logger.info('Scene %s: %d hypotheses, %d conflicts, %d poses '
                    'chosen (%s, value %.4f)', scene_id, len(hypotheses),
                    len(problem.conflicts), len(selection.indices),
                    selection.solver, selection.value)
        return Estimate(scene_id, self.objective, hypotheses, problem,
                        selection, poses, dict(generated.failed_bases))

    def estimate_scene(self, scene, maps, seed: Optional[int] = None
                       ) -> Estimate:
        """
        Estimate the poses of a simulated scene, taking the instance counts
        from its spec.
        """
        return self.estimate(
            maps, scene.depth, scene.camera, dict(scene.spec.counts),
            scene.spec.seed if seed is None else seed, scene.scene_id, scene)


def estimate_path(directory: PathLike, scene_id: str) -> Path:
    return Path(directory) / f'{scene_id}.json'


def write_estimate(directory: PathLike, estimate: Estimate) -> Path:
    path = estimate_path(directory, estimate.scene_id)
    write_json(path, estimate.to_dict())
    return path


def read_estimate(path: PathLike
                  ) -> Tuple[str, Dict[int, List[RigidTransform]]]:
    """
    :returns: ``(scene_id, poses per class)`` of an estimate report
    """
    document = read_json(path)
    try:
        scene_id = str(document.get('scene_id',
                                    Path(os.fspath(path)).stem))
        poses: Dict[int, List[RigidTransform]] = {}
        for entry in document['poses']:
            hypothesis = PoseHypothesis.from_dict(entry)
            poses.setdefault(hypothesis.class_id, []).append(hypothesis.pose)
    except (KeyError, TypeError) as exc:
        raise DataError(f'{os.fspath(path)} is not an estimate report: '
                        f'{exc}') from None
    return scene_id, poses
