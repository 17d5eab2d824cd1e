import dataclasses

import pytest

from tinypose.config import Config, GBRTSettings, HypgenSettings
from tinypose.errors import DataError
from tinypose.evaluation import match_and_recall, summarize
from tinypose.gbrt import TreeEnsemble, train_gbrt
from tinypose.pipeline import (PoseEstimator, estimate_path, read_estimate,
                               write_estimate)
from tinypose.scenegen import SceneSpec, generate_scene, simulate_predictions
from tinypose.scoring import build_training_set
from tinypose.selection import solve_greedy


def small_config(num_bases=5):
    return dataclasses.replace(Config(),
                               hypgen=HypgenSettings(num_bases=num_bases))


@pytest.fixture(scope='module')
def oracle_estimate(packed_scene, packed_maps):
    estimator = PoseEstimator(packed_scene.models, objective='oracle')
    return estimator.estimate_scene(packed_scene, packed_maps)


@pytest.fixture(scope='module')
def learned_estimate(packed_scene, packed_maps):
    ensemble = TreeEnsemble(initial=0.001, learning_rate=0.1)
    estimator = PoseEstimator(packed_scene.models, small_config(), ensemble)
    return estimator.estimate_scene(packed_scene, packed_maps)


def test_estimator_rejects(packed_scene):
    with pytest.raises(DataError):
        PoseEstimator(packed_scene.models, objective='luck')
    with pytest.raises(DataError):
        PoseEstimator(packed_scene.models)


def test_oracle_needs_ground_truth(packed_scene, packed_maps):
    estimator = PoseEstimator(packed_scene.models, small_config(),
                              objective='oracle')
    with pytest.raises(DataError):
        estimator.estimate(packed_maps, packed_scene.depth,
                           packed_scene.camera, {1: 4})


def test_oracle_recovers_packed_scene(oracle_estimate, packed_scene):
    assert len(oracle_estimate.selection.indices) <= 4
    report = match_and_recall(oracle_estimate.poses, packed_scene)
    assert report.recall >= 0.75


def test_selection_is_feasible(oracle_estimate, learned_estimate):
    for estimate in (oracle_estimate, learned_estimate):
        problem = estimate.problem
        assert problem.is_feasible(estimate.selection.chosen)
        assert len(estimate.poses.get(1, [])) <= 4
        assert len(problem) == len(estimate.hypotheses)


def test_exact_dominates_greedy(oracle_estimate, learned_estimate):
    for estimate in (oracle_estimate, learned_estimate):
        greedy = solve_greedy(estimate.problem)
        assert greedy.value <= estimate.selection.value + 1e-9


def test_learned_scores(learned_estimate, cube):
    expected = 1.0 - 0.001 / (0.1 * cube.diameter)
    for hypothesis in learned_estimate.hypotheses:
        assert hypothesis.predicted_adi == 0.001
        assert hypothesis.score == pytest.approx(expected)
        assert len(hypothesis.features) == 5


def test_manual_objective(packed_scene, packed_maps):
    estimator = PoseEstimator(packed_scene.models, small_config(),
                              objective='manual-scene', solver='greedy')
    estimate = estimator.estimate_scene(packed_scene, packed_maps)

    assert estimate.selection.solver == 'greedy'
    for hypothesis in estimate.hypotheses:
        f1, f2, f3, f4, f5 = hypothesis.features
        assert hypothesis.score == pytest.approx(f3 + f4)


def test_estimate_report(tmp_path, learned_estimate, packed_scene):
    data = learned_estimate.to_dict()
    assert data['scene_id'] == packed_scene.scene_id
    assert data['objective'] == 'learned'
    assert data['solver'] == 'exact'
    assert data['num_hypotheses'] == {'1': len(learned_estimate.hypotheses)}
    assert len(data['poses']) == len(learned_estimate.selection.indices)

    path = write_estimate(tmp_path, learned_estimate)
    assert path == estimate_path(tmp_path, packed_scene.scene_id)
    scene_id, poses = read_estimate(path)
    assert scene_id == packed_scene.scene_id
    chosen = learned_estimate.poses.get(1, [])
    assert len(poses.get(1, [])) == len(chosen)
    assert all(a.allclose(b) for a, b in zip(poses.get(1, []), chosen))


def test_read_malformed_estimate(tmp_path):
    path = tmp_path / 'scene.json'
    path.write_text('{"scene_id": "scene", "poses": [{"class_id": 1}]}')
    with pytest.raises(DataError):
        read_estimate(path)


@pytest.mark.slow
def test_learned_recall_on_simulated_batch(cube):
    """
    Train on a few noisy packed scenes, then compare objectives on others:
    the learned score beats the manual one and the oracle bounds both.
    """
    config = dataclasses.replace(small_config(num_bases=30),
                                 gbrt=GBRTSettings(n_trees=50))

    def batch(seeds):
        scenes = []
        for seed in seeds:
            count = 6 + seed % 5
            scene = generate_scene(SceneSpec([cube], {1: count}, 'packed',
                                             seed=seed))
            scenes.append((scene, simulate_predictions(scene)))
        return scenes

    ensemble = train_gbrt(build_training_set(batch(range(100, 104)), config),
                          config.gbrt)
    scenes = batch(range(6))

    recall = {}
    for objective in ('learned', 'manual-scene', 'oracle'):
        estimator = PoseEstimator({1: cube}, config, ensemble,
                                  objective)
        reports = [match_and_recall(
            estimator.estimate_scene(scene, maps).poses, scene,
            config.select.k_l) for scene, maps in scenes]
        recall[objective] = summarize(reports)['recall']

    assert recall['learned'] >= 0.7
    assert recall['learned'] >= recall['manual-scene']
    assert recall['oracle'] >= recall['learned']
