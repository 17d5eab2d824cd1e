"""
Gradient boosted regression trees for the pose quality regressor.

Least-squares boosting: the ensemble starts from the target mean and every
round fits a depth-limited tree to the current residuals. Leaves hold the
exact mean of their residuals, so the training error never grows from one
round to the next.

Split search is exhaustive over midpoints between distinct feature values.
Equal gains go to the lowest feature index, then the lowest threshold.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import (Any, Dict, List, Mapping, NamedTuple, Optional,
                    Sequence, Tuple, Union)

import numpy as np

from .config import GBRTSettings
from .errors import DataError
from .storages import PathLike, read_json, write_json

__all__ = ('TrainingSample', 'TreeNode', 'RegressionTree', 'TreeEnsemble',
           'fit_tree', 'train_gbrt', 'write_training_log')

logger = logging.getLogger(__name__)

_GAIN_TOLERANCE = 1e-12


class TrainingSample(NamedTuple):
    """
    Features of one hypothesis and its ADI distance to the closest
    ground-truth pose.
    """

    features: Tuple[float, ...]
    target: float
    scene_id: str = ''
    class_id: int = 0


@dataclass
class TreeNode:
    """
    A split node (``feature >= 0``) or a leaf (``feature == -1``).

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: int = -1
    threshold: float = 0.0
    value: float = 0.0
    left: Optional['TreeNode'] = None
    right: Optional['TreeNode'] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> Dict[str, Any]:
        if self.is_leaf:
            return {'value': repr(self.value)}
        assert self.left is not None and self.right is not None
        return {'feature': self.feature, 'threshold': repr(self.threshold),
                'left': self.left.to_dict(), 'right': self.right.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TreeNode':
        if 'feature' not in data:
            return cls(value=float(data['value']))
        return cls(int(data['feature']), float(data['threshold']),
                   left=cls.from_dict(data['left']),
                   right=cls.from_dict(data['right']))


class RegressionTree:
    """
    A binary regression tree over feature vectors.
    """

    def __init__(self, root: TreeNode):
        self.root = root

    def __repr__(self):
        return '<{} depth={} leaves={}>'.format(
            type(self).__name__, self.depth, self.num_leaves)

    @property
    def depth(self) -> int:
        def walk(node: TreeNode) -> int:
            if node.is_leaf:
                return 0
            return 1 + max(walk(node.left), walk(node.right))  # type: ignore
        return walk(self.root)

    @property
    def num_leaves(self) -> int:
        def walk(node: TreeNode) -> int:
            if node.is_leaf:
                return 1
            return walk(node.left) + walk(node.right)  # type: ignore
        return walk(self.root)

    def thresholds(self) -> List[Tuple[int, float]]:
        """
        All ``(feature, threshold)`` splits of the tree.
        """
        found = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                found.append((node.feature, node.threshold))
                stack.extend([node.left, node.right])  # type: ignore
        return found

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        result = np.zeros(len(features))
        stack = [(self.root, np.arange(len(features)))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                result[rows] = node.value
                continue
            goes_left = features[rows, node.feature] <= node.threshold
            stack.append((node.left, rows[goes_left]))
            stack.append((node.right, rows[~goes_left]))
        return result

    def to_dict(self) -> Dict[str, Any]:
        return self.root.to_dict()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'RegressionTree':
        return cls(TreeNode.from_dict(data))


def _best_split(features: np.ndarray, targets: np.ndarray, min_leaf: int
                ) -> Optional[Tuple[int, float]]:
    count = len(targets)
    if count < 2 * min_leaf:
        return None

    best_gain = _GAIN_TOLERANCE
    best: Optional[Tuple[int, float]] = None
    total = targets.sum()
    base = total * total / count

    for feature in range(features.shape[1]):
        order = np.argsort(features[:, feature], kind='stable')
        values = features[order, feature]
        sums = np.cumsum(targets[order])

        left_sizes = np.arange(1, count)
        allowed = (values[1:] > values[:-1]) \
            & (left_sizes >= min_leaf) & (count - left_sizes >= min_leaf)
        if not allowed.any():
            continue

        left_sums = sums[:-1]
        right_sums = total - left_sums
        gains = left_sums ** 2 / left_sizes \
            + right_sums ** 2 / (count - left_sizes) - base
        gains[~allowed] = -np.inf

        # argmax returns the first maximum, i.e. the lowest threshold
        position = int(np.argmax(gains))
        if gains[position] > best_gain * (1.0 + 1e-12):
            best_gain = float(gains[position])
            best = (feature,
                    0.5 * (values[position] + values[position + 1]))
    return best


def fit_tree(features: np.ndarray, targets: np.ndarray, max_depth: int = 3,
             min_leaf: int = 5) -> RegressionTree:
    """
    Fit a least-squares regression tree by greedy variance reduction.

    :param min_leaf: Minimum number of samples per leaf
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        node = TreeNode(value=float(targets[rows].mean()))
        if depth >= max_depth:
            return node
        split = _best_split(features[rows], targets[rows], min_leaf)
        if split is None:
            return node
        feature, threshold = split
        goes_left = features[rows, feature] <= threshold
        node.feature, node.threshold = feature, float(threshold)
        node.left = grow(rows[goes_left], depth + 1)
        node.right = grow(rows[~goes_left], depth + 1)
        return node

    return RegressionTree(grow(np.arange(len(targets)), 0))


@dataclass
class TreeEnsemble:
    """
    ``prediction = initial + learning_rate * sum(tree(x))``.
    """

    initial: float
    learning_rate: float
    trees: List[RegressionTree] = field(default_factory=list)
    #: Training MSE after every round
    train_mse: List[float] = field(default_factory=list)
    #: Held-out MSE after every round, when a held-out set was given
    holdout_mse: List[float] = field(default_factory=list)

    def __repr__(self):
        return '<{} trees={} initial={:.6g}>'.format(
            type(self).__name__, len(self.trees), self.initial)

    def predict(self, features: Union[np.ndarray, Sequence[Sequence[float]]]
                ) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        result = np.full(len(features), self.initial)
        for tree in self.trees:
            result += self.learning_rate * tree.predict(features)
        return result

    def predict_one(self, features: Sequence[float]) -> float:
        return float(self.predict([features])[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            'initial': repr(self.initial),
            'learning_rate': repr(self.learning_rate),
            'trees': [tree.to_dict() for tree in self.trees],
            'train_mse': [repr(v) for v in self.train_mse],
            'holdout_mse': [repr(v) for v in self.holdout_mse],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TreeEnsemble':
        try:
            return cls(float(data['initial']),
                       float(data['learning_rate']),
                       [RegressionTree.from_dict(t) for t in data['trees']],
                       [float(v) for v in data.get('train_mse', [])],
                       [float(v) for v in data.get('holdout_mse', [])])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f'Malformed ensemble: {exc}') from exc

    def save(self, path: PathLike) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: PathLike) -> 'TreeEnsemble':
        return cls.from_dict(read_json(path))


def _as_arrays(samples: Sequence[TrainingSample]
               ) -> Tuple[np.ndarray, np.ndarray]:
    features = np.array([s.features for s in samples], dtype=np.float64)
    targets = np.array([s.target for s in samples], dtype=np.float64)
    if features.ndim != 2 or not np.all(np.isfinite(features)) \
            or not np.all(np.isfinite(targets)):
        raise DataError('Training samples must hold finite numbers')
    return features, targets


def train_gbrt(samples: Sequence[TrainingSample],
               settings: Optional[GBRTSettings] = None,
               holdout: Sequence[TrainingSample] = ()) -> TreeEnsemble:
    """
    Fit a least-squares boosted ensemble.

    Exactly ``n_trees`` rounds are fit, so the training log always has
    ``n_trees`` rows; once the residuals vanish later trees predict zero.

    :param holdout: Samples whose MSE is recorded per round but never fit
    :raises DataError: Fewer than ``min_leaf`` samples
    """
    settings = settings or GBRTSettings()
    if not samples:
        raise DataError('Cannot train on an empty sample set')
    if len(samples) < settings.min_leaf:
        raise DataError(f'Training needs at least {settings.min_leaf} '
                        f'samples, got {len(samples)}')

    features, targets = _as_arrays(samples)
    held_features, held_targets = _as_arrays(holdout) if holdout \
        else (None, None)

    ensemble = TreeEnsemble(float(targets.mean()), settings.learning_rate)
    prediction = np.full(len(targets), ensemble.initial)
    held_prediction = None if held_targets is None \
        else np.full(len(held_targets), ensemble.initial)

    for number in range(settings.n_trees):
        residuals = targets - prediction
        tree = fit_tree(features, residuals, settings.max_depth,
                        settings.min_leaf)
        ensemble.trees.append(tree)
        prediction += settings.learning_rate * tree.predict(features)
        ensemble.train_mse.append(float(np.mean((targets - prediction) ** 2)))

        if held_prediction is not None:
            held_prediction += settings.learning_rate \
                * tree.predict(held_features)
            ensemble.holdout_mse.append(
                float(np.mean((held_targets - held_prediction) ** 2)))

        logger.debug('Round %d: train MSE %.6g', number + 1,
                     ensemble.train_mse[-1])

    logger.info('Trained %r on %d samples', ensemble, len(samples))
    return ensemble


def write_training_log(path: PathLike, ensemble: TreeEnsemble) -> None:
    """
    One CSV row per boosting round: round, train MSE, holdout MSE.
    """
    with open(path, 'w', newline='') as handle:
        writer = csv.writer(handle)
        writer.writerow(['round', 'train_mse', 'holdout_mse'])
        for number, train in enumerate(ensemble.train_mse, start=1):
            held = ensemble.holdout_mse[number - 1:number]
            writer.writerow([number, repr(train),
                             repr(held[0]) if held else ''])
