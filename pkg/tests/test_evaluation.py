import csv
import dataclasses

import numpy as np
import pytest

from tinypose.errors import DataError
from tinypose.evaluation import (MANUAL_OBJECTIVES, compare_summaries,
                                 manual_objective_baselines,
                                 match_and_recall, oracle_scores,
                                 oracle_selection, summarize,
                                 write_comparison_csv, write_recall_csv)
from tinypose.geometry import RigidTransform, adi_distance
from tinypose.hypgen import PoseHypothesis
from tinypose.meshes import make_icosphere
from tinypose.scenegen import Placement, SceneSpec
from tinypose.selection import SelectionItem, SelectionProblem


def with_placements(scene, models, poses):
    counts = {}
    for class_id, _ in poses:
        counts[class_id] = counts.get(class_id, 0) + 1
    placements = tuple(Placement(class_id, number, pose)
                       for number, (class_id, pose) in enumerate(poses, 1))
    return dataclasses.replace(scene, spec=SceneSpec(models, counts),
                               placements=placements)


def test_perfect_estimates(packed_scene):
    report = match_and_recall({1: packed_scene.poses_of(1)}, packed_scene)

    assert report.num_gt == 4
    assert report.recall == 1.0
    assert report.visible_recall == 1.0
    assert all(m.adi == pytest.approx(0.0, abs=1e-12)
               for m in report.instances)


def test_no_estimates(packed_scene):
    report = match_and_recall({}, packed_scene)
    assert report.recall == 0.0
    assert all(m.estimate is None and m.adi is None
               for m in report.instances)


def test_one_estimate_two_identical_instances(packed_scene, cube):
    pose = packed_scene.poses_of(1)[0]
    scene = with_placements(packed_scene, [cube], [(1, pose), (1, pose)])

    report = match_and_recall({1: [pose]}, scene)
    assert report.num_gt == 2
    assert report.num_tp == 1
    assert report.recall == 0.5


def test_strict_threshold(packed_scene):
    report = match_and_recall({1: packed_scene.poses_of(1)}, packed_scene,
                              k_l=0.0)
    assert report.recall == 0.0


def test_symmetric_estimate_is_a_true_positive(packed_scene):
    quarter = RigidTransform.from_rotvec((0.0, 0.0, np.pi / 2))
    estimates = [pose @ quarter for pose in packed_scene.poses_of(1)]
    assert match_and_recall({1: estimates}, packed_scene).recall == 1.0


def test_hungarian_maximizes_true_positives(packed_scene):
    sphere = make_icosphere(0.03, 2, class_id=1)
    a = RigidTransform.from_translation(0.0, 0.0, 0.5)
    b = RigidTransform.from_translation(0.010, 0.0, 0.5)
    x = RigidTransform.from_translation(0.004, 0.0, 0.5)
    y = RigidTransform.from_translation(-0.006, 0.0, 0.5)
    scene = with_placements(packed_scene, [sphere], [(1, a), (1, b)])

    ax, ay = adi_distance(x, a, sphere), adi_distance(y, a, sphere)
    bx, by = adi_distance(x, b, sphere), adi_distance(y, b, sphere)
    # Nearest first takes (a, x) and leaves b with the far estimate y
    assert ax < min(ay, bx, by)
    threshold = (max(ay, bx) + by) / 2.0
    assert max(ax, ay, bx) < threshold < by
    k_l = threshold / sphere.diameter

    greedy = match_and_recall({1: [x, y]}, scene, k_l)
    hungarian = match_and_recall({1: [x, y]}, scene, k_l, 'hungarian')
    assert greedy.num_tp == 1
    assert hungarian.num_tp == 2
    assert [m.estimate for m in hungarian.instances] == [1, 0]


def test_more_estimates_than_instances(packed_scene):
    truth = packed_scene.poses_of(1)
    far = RigidTransform.from_translation(1.0, 1.0, 1.0)
    report = match_and_recall({1: [far, far] + truth}, packed_scene)

    assert report.recall == 1.0
    assert sorted(m.estimate for m in report.instances) == [2, 3, 4, 5]


def test_hidden_instances(packed_scene):
    labels = packed_scene.instance_labels.copy()
    labels[labels == 1] = 0
    scene = dataclasses.replace(packed_scene, instance_labels=labels)

    report = match_and_recall({1: packed_scene.poses_of(1)[1:]}, scene)
    assert not report.instances[0].visible
    assert report.recall == 0.75
    assert report.visible_recall == 1.0


def test_match_rejects(packed_scene):
    with pytest.raises(DataError):
        match_and_recall({7: []}, packed_scene)
    with pytest.raises(DataError):
        match_and_recall({}, packed_scene, assignment='auction')


def test_oracle_scores(packed_scene):
    truth = packed_scene.poses_of(1)[0]
    far = RigidTransform.from_translation(0.0, 0.0, 2.0)
    hypotheses = [PoseHypothesis(1, truth), PoseHypothesis(1, far),
                  PoseHypothesis(2, truth)]

    scores = oracle_scores(hypotheses, packed_scene)
    assert scores[0] == pytest.approx(1.0)
    assert scores[1] == 0.0
    assert scores[2] == 0.0


def test_oracle_selection_recovers_ground_truth(packed_scene):
    rng = np.random.default_rng(0)
    truths = packed_scene.poses_of(1)
    decoys = [RigidTransform(p.quaternion,
                             p.translation + rng.normal(scale=0.02, size=3))
              for p in truths]
    hypotheses = [PoseHypothesis(1, pose) for pose in decoys + truths]
    problem = SelectionProblem(
        [SelectionItem(1, k, 1.0) for k in range(len(hypotheses))],
        {1: 4})

    selection = oracle_selection(problem, hypotheses, packed_scene)
    chosen = [hypotheses[k].pose for k in selection.indices]
    assert match_and_recall({1: chosen}, packed_scene).recall == 1.0

    with pytest.raises(DataError):
        oracle_selection(problem, hypotheses[:3], packed_scene)


def test_oracle_selection_of_nothing(packed_scene):
    selection = oracle_selection(SelectionProblem([]), [], packed_scene)
    assert selection.indices == []
    assert match_and_recall({}, packed_scene).recall == 0.0


def test_manual_objectives():
    features = (0.5, 0.4, 0.9, 3.0, 2.0)
    scene, full = manual_objective_baselines(features)
    assert scene == pytest.approx(3.9)
    assert full == pytest.approx(0.9)
    assert MANUAL_OBJECTIVES['manual-scene'](features) == scene
    assert MANUAL_OBJECTIVES['manual-full'](features) == full


def test_summarize(packed_scene):
    perfect = match_and_recall({1: packed_scene.poses_of(1)}, packed_scene)
    half = match_and_recall({1: packed_scene.poses_of(1)[:2]}, packed_scene)
    summary = summarize([perfect, half])

    assert summary['num_scenes'] == 2
    assert summary['num_gt'] == 8
    assert summary['num_tp'] == 6
    assert summary['recall'] == 0.75
    assert summary['per_class'] == {'1': {'num_gt': 8, 'num_tp': 6,
                                          'recall': 0.75}}
    assert [s['recall'] for s in summary['scenes']] == [1.0, 0.5]
    assert summarize([])['recall'] == 0.0


def test_recall_csv(tmp_path, packed_scene):
    report = match_and_recall({1: packed_scene.poses_of(1)[:1]},
                              packed_scene)
    path = tmp_path / 'recall.csv'
    write_recall_csv(path, [report])

    with open(path, newline='') as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 1
    assert rows[0]['scene_id'] == packed_scene.scene_id
    assert rows[0]['num_gt'] == '4'
    assert float(rows[0]['recall']) == 0.25


def test_compare_summaries(tmp_path):
    summaries = {
        'learned': {'num_scenes': 2, 'num_gt': 8, 'num_tp': 6,
                    'recall': 0.75, 'visible_recall': 0.75},
        'greedy': {'num_scenes': 2, 'num_gt': 8, 'num_tp': 5,
                   'recall': 0.625, 'visible_recall': 0.625},
    }
    rows = compare_summaries(summaries)
    assert [row['run'] for row in rows] == ['greedy', 'learned']

    path = tmp_path / 'compare.csv'
    write_comparison_csv(path, rows)
    with open(path, newline='') as handle:
        assert [row['run'] for row in csv.DictReader(handle)] \
            == ['greedy', 'learned']

    with pytest.raises(DataError):
        compare_summaries({'broken': {'recall': 0.5}})


@pytest.mark.parametrize('features, expected', [
    ((0.0,) * 5, (0.0, 0.0)),
    ((1.0, 1.0, 1.0, 0.3, 0.7), (1.3, 1.0)),
    ((1.0, 1.0, 1.0, 2.5, 4.0), (3.5, 6.5)),
])
def test_manual_objective_examples(features, expected):
    assert manual_objective_baselines(features) == pytest.approx(expected)
