import csv

import numpy as np
import pytest

from tinypose.config import GBRTSettings
from tinypose.errors import DataError
from tinypose.gbrt import (RegressionTree, TrainingSample, TreeEnsemble,
                           TreeNode, fit_tree, train_gbrt,
                           write_training_log)


def make_samples(features, targets):
    return [TrainingSample(tuple(float(v) for v in x), float(y))
            for x, y in zip(features, targets)]


def leaf_sizes(tree, features):
    sizes = []
    stack = [(tree.root, np.arange(len(features)))]
    while stack:
        node, rows = stack.pop()
        if node.is_leaf:
            sizes.append(len(rows))
            continue
        goes_left = features[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[goes_left]))
        stack.append((node.right, rows[~goes_left]))
    return sizes


@pytest.fixture
def depth_agreement():
    """
    Targets ``2 (1 - f3) d`` on uniformly random features, d = 0.08.
    """
    rng = np.random.default_rng(0)
    features = rng.random((600, 5))
    targets = 2.0 * (1.0 - features[:, 2]) * 0.08
    return features, targets


def test_constant_targets():
    samples = make_samples(np.random.default_rng(1).random((20, 5)),
                           [0.25] * 20)
    ensemble = train_gbrt(samples, GBRTSettings(n_trees=10))

    assert len(ensemble.trees) == len(ensemble.train_mse) == 10
    assert ensemble.train_mse == [0.0] * 10
    assert ensemble.initial == 0.25
    assert ensemble.predict_one([0.3] * 5) == 0.25


def test_training_error_never_grows(depth_agreement):
    features, targets = depth_agreement
    ensemble = train_gbrt(make_samples(features, targets),
                          GBRTSettings(n_trees=50))

    assert len(ensemble.train_mse) == len(ensemble.trees) == 50
    mse = ensemble.train_mse
    assert all(b <= a + 1e-15 for a, b in zip(mse, mse[1:]))
    assert mse[-1] < np.var(targets)


def test_learns_depth_agreement(depth_agreement):
    features, targets = depth_agreement
    train = make_samples(features[:500], targets[:500])
    held = make_samples(features[500:], targets[500:])

    ensemble = train_gbrt(train, holdout=held)
    predictions = ensemble.predict(features[500:])
    mse = np.mean((predictions - targets[500:]) ** 2)

    assert mse < 0.1 * np.var(targets[500:])
    assert ensemble.holdout_mse[-1] == pytest.approx(mse)
    assert len(ensemble.holdout_mse) == len(ensemble.trees)


def test_splits_use_the_informative_feature(depth_agreement):
    features, targets = depth_agreement
    tree = fit_tree(features, targets, max_depth=1)
    assert [feature for feature, _ in tree.thresholds()] == [2]


def test_piecewise_constant_target():
    features = np.linspace(0.0, 1.0, 40)[:, None]
    targets = np.where(features[:, 0] < 0.5, 0.01, 0.03)
    tree = fit_tree(features, targets, max_depth=3, min_leaf=5)

    assert tree.depth == 1
    assert tree.num_leaves == 2
    feature, threshold = tree.thresholds()[0]
    assert feature == 0
    assert features[19, 0] < threshold < features[20, 0]
    assert np.allclose(tree.predict(features), targets)


def test_leaves_hold_exact_means():
    rng = np.random.default_rng(2)
    features = rng.random((100, 3))
    targets = rng.random(100)
    tree = fit_tree(features, targets, max_depth=3, min_leaf=5)

    predictions = tree.predict(features)
    for value in np.unique(predictions):
        group = targets[predictions == value]
        assert value == pytest.approx(group.mean())


def test_tree_limits():
    rng = np.random.default_rng(3)
    features = rng.random((200, 5))
    targets = rng.random(200)
    tree = fit_tree(features, targets, max_depth=3, min_leaf=7)

    assert tree.depth <= 3
    assert min(leaf_sizes(tree, features)) >= 7


def test_duplicate_features_stay_together():
    features = np.array([[0.1], [0.1], [0.1], [0.9], [0.9], [0.9]])
    targets = np.array([1.0, 2.0, 3.0, 7.0, 8.0, 9.0])
    tree = fit_tree(features, targets, max_depth=3, min_leaf=1)

    assert np.array_equal(tree.predict(features), [2, 2, 2, 8, 8, 8])
    # Identical feature vectors cannot be separated
    single = fit_tree(features[:3], targets[:3], min_leaf=1)
    assert single.num_leaves == 1
    assert single.root.value == 2.0


def test_equal_gains_prefer_lowest_feature():
    features = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 5)
    targets = np.array([0.0] * 5 + [1.0] * 5)
    tree = fit_tree(features, targets, max_depth=1, min_leaf=1)
    assert tree.thresholds() == [(0, 0.5)]


def test_json_round_trip(tmp_path, depth_agreement):
    features, targets = depth_agreement
    ensemble = train_gbrt(make_samples(features, targets),
                          GBRTSettings(n_trees=20))
    path = tmp_path / 'ensemble.json'
    ensemble.save(path)

    again = TreeEnsemble.load(path)
    assert len(again.trees) == 20
    assert again.train_mse == ensemble.train_mse
    assert np.array_equal(again.predict(features), ensemble.predict(features))


def test_malformed_ensemble():
    with pytest.raises(DataError):
        TreeEnsemble.from_dict({'initial': '0.1'})
    with pytest.raises(DataError):
        TreeEnsemble.from_dict({'initial': 'x', 'learning_rate': '0.1',
                                'trees': []})


def test_node_dict():
    node = TreeNode(0, 0.5, left=TreeNode(value=1.0),
                    right=TreeNode(value=2.0))
    tree = RegressionTree.from_dict(node.to_dict())
    assert tree.predict(np.array([[0.2], [0.7]])).tolist() == [1.0, 2.0]
    assert repr(tree) == '<RegressionTree depth=1 leaves=2>'


@pytest.mark.parametrize('samples', [
    [],
    make_samples([[0.0] * 5] * 3, [1.0] * 3),
    make_samples([[float('nan')] * 5] * 10, [1.0] * 10),
])
def test_train_rejects(samples):
    with pytest.raises(DataError):
        train_gbrt(samples)


def test_training_log(tmp_path, depth_agreement):
    features, targets = depth_agreement
    ensemble = train_gbrt(make_samples(features[:100], targets[:100]),
                          GBRTSettings(n_trees=5),
                          holdout=make_samples(features[100:120],
                                               targets[100:120]))
    path = tmp_path / 'training.csv'
    write_training_log(path, ensemble)

    with open(path, newline='') as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ['round', 'train_mse', 'holdout_mse']
    assert [row[0] for row in rows[1:]] == ['1', '2', '3', '4', '5']
    assert float(rows[-1][1]) == ensemble.train_mse[-1]
    assert float(rows[-1][2]) == ensemble.holdout_mse[-1]
