"""
Recall evaluation against ground truth.

An estimate is a true positive when its ADI distance to the ground-truth
instance it is matched with is below ``k_l`` times the model diameter.
Matching is one-to-one within a class: either nearest pair first, or a
Hungarian assignment that maximizes the number of true positives.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import (Any, Dict, Iterable, List, Mapping, NamedTuple, Optional,
                    Sequence, Tuple)

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError
from .geometry import MeshModel, RigidTransform, adi_distance
from .scoring import quality_score
from .selection import Selection, SelectionProblem, solve_exact
from .storages import PathLike

__all__ = ('InstanceMatch', 'RecallReport', 'match_and_recall',
           'oracle_scores', 'oracle_selection', 'manual_objective_baselines',
           'MANUAL_OBJECTIVES', 'summarize', 'write_recall_csv',
           'compare_summaries', 'write_comparison_csv')

logger = logging.getLogger(__name__)

ASSIGNMENTS = ('greedy', 'hungarian')


class InstanceMatch(NamedTuple):
    """
    The outcome for one ground-truth instance.
    """

    instance_id: int
    class_id: int
    visible: bool
    estimate: Optional[int]
    adi: Optional[float]
    true_positive: bool


@dataclass
class RecallReport:
    """
    Per-instance matches of one scene.
    """

    scene_id: str
    instances: List[InstanceMatch] = field(default_factory=list)

    @property
    def num_gt(self) -> int:
        return len(self.instances)

    @property
    def num_tp(self) -> int:
        return sum(m.true_positive for m in self.instances)

    @property
    def recall(self) -> float:
        return self.num_tp / self.num_gt if self.num_gt else 0.0

    @property
    def visible_recall(self) -> float:
        visible = [m for m in self.instances if m.visible]
        if not visible:
            return 0.0
        return sum(m.true_positive for m in visible) / len(visible)

    def rows(self) -> List[Dict[str, Any]]:
        """
        One CSV row per class.
        """
        rows = []
        for class_id in sorted({m.class_id for m in self.instances}):
            matches = [m for m in self.instances if m.class_id == class_id]
            visible = [m for m in matches if m.visible]
            tp = sum(m.true_positive for m in matches)
            visible_tp = sum(m.true_positive for m in visible)
            rows.append({
                'scene_id': self.scene_id,
                'class_id': class_id,
                'num_gt': len(matches),
                'num_tp': tp,
                'recall': tp / len(matches),
                'num_visible': len(visible),
                'visible_recall': visible_tp / len(visible) if visible
                else 0.0,
            })
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scene_id': self.scene_id,
            'recall': self.recall,
            'visible_recall': self.visible_recall,
            'instances': [m._asdict() for m in self.instances],
        }


def _greedy_pairs(distances: np.ndarray) -> List[Tuple[int, int]]:
    pairs = []
    if distances.size == 0:
        return pairs
    order = np.argsort(distances, axis=None, kind='stable')
    used_rows, used_cols = set(), set()
    for flat in order:
        row, col = divmod(int(flat), distances.shape[1])
        if row in used_rows or col in used_cols:
            continue
        pairs.append((row, col))
        used_rows.add(row)
        used_cols.add(col)
        if len(used_rows) == distances.shape[0] \
                or len(used_cols) == distances.shape[1]:
            break
    return pairs


def _hungarian_pairs(distances: np.ndarray, threshold: float
                     ) -> List[Tuple[int, int]]:
    if distances.size == 0:
        return []
    # Accepted pairs always cost less than rejected ones
    penalty = 1.0 + float(distances.max())
    cost = np.where(distances < threshold, distances,
                    penalty * distances.size + distances)
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def match_and_recall(estimates: Mapping[int, Sequence[RigidTransform]],
                     scene, k_l: float = 0.1,
                     assignment: str = 'greedy') -> RecallReport:
    """
    Match estimates to the ground-truth instances of ``scene``.

    :param estimates: Poses per class
    :param scene: A :class:`~tinypose.scenegen.GroundTruthScene`
    :param assignment: ``greedy`` or ``hungarian``
    """
    if assignment not in ASSIGNMENTS:
        raise DataError(f'Unknown assignment {assignment!r}')
    models: Mapping[int, MeshModel] = scene.models
    unknown = sorted(set(estimates) - set(models))
    if unknown:
        raise DataError(f'Estimates for unknown classes {unknown}')

    visible = scene.visible_pixels()
    report = RecallReport(scene.scene_id)
    for class_id in sorted(models):
        truths = [p for p in scene.placements if p.class_id == class_id]
        if not truths:
            continue
        poses = list(estimates.get(class_id, ()))
        model = models[class_id]
        threshold = k_l * model.diameter

        distances = np.array([[adi_distance(pose, truth.pose, model)
                               for pose in poses] for truth in truths]
                             ).reshape(len(truths), len(poses))
        if assignment == 'greedy':
            pairs = _greedy_pairs(distances)
        else:
            pairs = _hungarian_pairs(distances, threshold)
        matched = dict(pairs)

        for row, truth in enumerate(truths):
            col = matched.get(row)
            adi = None if col is None else float(distances[row, col])
            report.instances.append(InstanceMatch(
                truth.instance_id, class_id,
                visible.get(truth.instance_id, 0) > 0, col, adi,
                adi is not None and adi < threshold))

    logger.info('Scene %s: recall %.3f (%d of %d)', report.scene_id,
                report.recall, report.num_tp, report.num_gt)
    return report


def oracle_scores(hypotheses: Sequence, scene,
                  k_l: float = 0.1) -> List[float]:
    """
    Scores from the true ADI distance to the closest ground-truth pose of
    each hypothesis' class.
    """
    scores = []
    for hypothesis in hypotheses:
        truths = scene.poses_of(hypothesis.class_id)
        if not truths:
            scores.append(0.0)
            continue
        model = scene.models[hypothesis.class_id]
        distance = min(adi_distance(hypothesis.pose, truth, model)
                       for truth in truths)
        scores.append(quality_score(distance, model.diameter, k_l))
    return scores


def oracle_selection(problem: SelectionProblem, hypotheses: Sequence, scene,
                     k_l: float = 0.1) -> Selection:
    """
    The exact selection when every hypothesis is scored by its true
    distance to ground truth.

    :param problem: The problem the hypotheses were posed as; only its
                    scores are replaced
    """
    if len(problem) != len(hypotheses):
        raise DataError('Need one hypothesis per selection item')
    return solve_exact(problem.with_scores(
        oracle_scores(hypotheses, scene, k_l)))


def manual_objective_baselines(features: Sequence[float]
                               ) -> Tuple[float, float]:
    """
    :returns: ``(f3 + f4, f1 * f2 * f3 * (f4 + f5))``
    """
    f1, f2, f3, f4, f5 = (float(f) for f in features)
    return f3 + f4, f1 * f2 * f3 * (f4 + f5)


#: Objectives selectable instead of the learned score
MANUAL_OBJECTIVES = {
    'manual-scene': lambda features: manual_objective_baselines(features)[0],
    'manual-full': lambda features: manual_objective_baselines(features)[1],
}


def summarize(reports: Iterable[RecallReport]) -> Dict[str, Any]:
    """
    Aggregate recall: true positives over ground-truth instances, summed
    across scenes, overall and per class.
    """
    reports = list(reports)
    per_class: Dict[int, List[int]] = {}
    gt = tp = visible_gt = visible_tp = 0
    for report in reports:
        for match in report.instances:
            counts = per_class.setdefault(match.class_id, [0, 0])
            counts[0] += 1
            counts[1] += match.true_positive
            gt += 1
            tp += match.true_positive
            if match.visible:
                visible_gt += 1
                visible_tp += match.true_positive

    return {
        'num_scenes': len(reports),
        'num_gt': gt,
        'num_tp': tp,
        'recall': tp / gt if gt else 0.0,
        'num_visible': visible_gt,
        'visible_recall': visible_tp / visible_gt if visible_gt else 0.0,
        'per_class': {str(c): {'num_gt': n, 'num_tp': t,
                               'recall': t / n if n else 0.0}
                      for c, (n, t) in sorted(per_class.items())},
        'scenes': [{'scene_id': r.scene_id, 'num_gt': r.num_gt,
                    'num_tp': r.num_tp, 'recall': r.recall}
                   for r in reports],
    }


_CSV_FIELDS = ('scene_id', 'class_id', 'num_gt', 'num_tp', 'recall',
               'num_visible', 'visible_recall')


def write_recall_csv(path: PathLike, reports: Iterable[RecallReport]
                     ) -> None:
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            writer.writerows(report.rows())


def compare_summaries(summaries: Mapping[str, Mapping[str, Any]]
                      ) -> List[Dict[str, Any]]:
    """
    One comparison row per named run summary.
    """
    rows = []
    for name in sorted(summaries):
        summary = summaries[name]
        try:
            rows.append({'run': name,
                         'num_scenes': summary['num_scenes'],
                         'num_gt': summary['num_gt'],
                         'num_tp': summary['num_tp'],
                         'recall': summary['recall'],
                         'visible_recall': summary['visible_recall']})
        except KeyError as exc:
            raise DataError(f'Summary {name!r} lacks {exc}') from None
    return rows


def write_comparison_csv(path: PathLike, rows: Sequence[Mapping[str, Any]]
                         ) -> None:
    fieldnames = ['run', 'num_scenes', 'num_gt', 'num_tp', 'recall',
                  'visible_recall']
    with open(path, 'w', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
