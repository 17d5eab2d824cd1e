"""
Scene-level pose selection.

Every hypothesis is a 0/1 variable ``y``. A selection maximizes the summed
score of the chosen hypotheses such that

- at most ``N_i`` hypotheses of class ``i`` are chosen and
- no two chosen hypotheses overlap in volume by more than ``epsilon_v``
  (the conflict set).

:func:`solve_exact` finds a provably optimal selection by branch and bound;
:func:`solve_greedy` is the linear-time baseline.
"""

import logging
import math
import time
from functools import lru_cache
from typing import (Callable, Dict, FrozenSet, Iterable, List, Mapping,
                    NamedTuple, Optional, Sequence, Tuple)

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, InfeasibleSelectionError
from .geometry import MeshModel, RigidTransform

__all__ = ('Overlap', 'pairwise_overlap_volume', 'build_conflicts',
           'SelectionItem', 'SelectionProblem', 'Selection', 'solve_exact',
           'solve_greedy', 'solve', 'assemble_scene', 'SOLVERS')

logger = logging.getLogger(__name__)

#: Relative tolerance used when comparing objective values
_RELATIVE_TOLERANCE = 1e-9

#: Upper limit on (points x triangles) evaluated at once by the winding test
_WINDING_CHUNK = 2_000_000


class Overlap(NamedTuple):
    """
    Overlap volume of two placed models.

    ``approximate`` is set when a model is not watertight and was
    voxelized as a thickened surface shell instead of a solid.
    """

    volume: float
    approximate: bool = False


InsideTest = Callable[[np.ndarray], np.ndarray]


@lru_cache(maxsize=64)
def _inside_test(model: MeshModel, voxel: float) -> Tuple[InsideTest, bool]:
    if model.is_convex:
        normals = model.face_normals
        offsets = np.einsum('ij,ij->i', normals,
                            model.vertices[model.triangles[:, 0]])

        def convex(points: np.ndarray) -> np.ndarray:
            return np.all(points @ normals.T <= offsets, axis=1)

        return convex, False

    if model.is_watertight:
        corners = [model.vertices[model.triangles[:, k]] for k in range(3)]

        def winding(points: np.ndarray) -> np.ndarray:
            inside = np.zeros(len(points), dtype=bool)
            step = max(1, _WINDING_CHUNK // max(len(model.triangles), 1))
            for start in range(0, len(points), step):
                chunk = points[start:start + step]
                a, b, c = (corner[None] - chunk[:, None]
                           for corner in corners)
                la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
                numerator = np.einsum('pti,pti->pt', a, np.cross(b, c))
                denominator = (la * lb * lc
                               + np.einsum('pti,pti->pt', a, b) * lc
                               + np.einsum('pti,pti->pt', b, c) * la
                               + np.einsum('pti,pti->pt', c, a) * lb)
                solid = 2.0 * np.arctan2(numerator, denominator)
                inside[start:start + step] = np.abs(
                    solid.sum(axis=1)) > 2.0 * math.pi
            return inside

        return winding, False

    shell = model.samples(max(2000, 20 * len(model.vertices)))
    tree = cKDTree(shell.points)
    reach = 0.87 * voxel

    def surface(points: np.ndarray) -> np.ndarray:
        distances, _ = tree.query(points, distance_upper_bound=reach)
        return np.isfinite(distances)

    return surface, True


def _world_bounds(model: MeshModel, pose: RigidTransform
                  ) -> Tuple[np.ndarray, np.ndarray]:
    vertices = pose.apply(model.vertices)
    return vertices.min(axis=0), vertices.max(axis=0)


def pairwise_overlap_volume(m1: MeshModel, t1: RigidTransform,
                            m2: MeshModel, t2: RigidTransform,
                            voxel: Optional[float] = None,
                            broad_phase: bool = True) -> Overlap:
    """
    Volume occupied by both placed models.

    Voxel centers on a grid exactly tiling the intersection of the two
    world bounding boxes are tested against both solids.

    :param voxel: Voxel edge, 1/40 of the smaller diameter by default
    :param broad_phase: Return early when the bounding boxes are disjoint
    """
    if voxel is None:
        voxel = min(m1.diameter, m2.diameter) / 40.0
    if voxel <= 0:
        raise DataError('The voxel size must be positive')

    lo1, hi1 = _world_bounds(m1, t1)
    lo2, hi2 = _world_bounds(m2, t2)
    lo, hi = np.maximum(lo1, lo2), np.minimum(hi1, hi2)
    extent = hi - lo
    if broad_phase and np.any(extent <= 1e-9):
        return Overlap(0.0)

    test1, approximate1 = _inside_test(m1, voxel)
    test2, approximate2 = _inside_test(m2, voxel)
    approximate = approximate1 or approximate2
    if np.any(extent <= 1e-9):
        return Overlap(0.0, approximate)

    counts = np.maximum(1, np.ceil(extent / voxel - 1e-9)).astype(int)
    step = extent / counts
    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * step[k] for k in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing='ij'),
                       axis=-1).reshape(-1, 3)

    both = test1(t1.inverse().apply(centers))
    if both.any():
        both[both] = test2(t2.inverse().apply(centers[both]))
    return Overlap(float(both.sum() * np.prod(step)), approximate)


def _bounding_sphere(model: MeshModel, pose: RigidTransform
                     ) -> Tuple[np.ndarray, float]:
    lo, hi = model.bounds
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(model.vertices - center, axis=1).max())
    return pose.apply(center), radius


def build_conflicts(placed: Sequence[Tuple[MeshModel, RigidTransform]],
                    epsilon_v: Optional[float] = None,
                    epsilon_v_fraction: float = 0.03,
                    voxel_fraction: float = 1.0 / 40.0,
                    broad_phase: bool = True) -> FrozenSet[Tuple[int, int]]:
    """
    All index pairs ``(a, b)``, ``a < b``, whose overlap volume exceeds
    ``epsilon_v``. Pairs of the same class and of different classes are
    both considered.

    :param epsilon_v: Tolerated volume; by default ``epsilon_v_fraction``
                      of the smaller model volume of each pair
    :param voxel_fraction: Voxel edge as a fraction of the smaller diameter
    """
    spheres = [_bounding_sphere(model, pose) for model, pose in placed]
    conflicts = set()
    checked = 0

    for a in range(len(placed)):
        for b in range(a + 1, len(placed)):
            (ca, ra), (cb, rb) = spheres[a], spheres[b]
            if broad_phase and np.linalg.norm(ca - cb) >= ra + rb:
                continue
            (ma, ta), (mb, tb) = placed[a], placed[b]
            tolerance = epsilon_v if epsilon_v is not None else \
                epsilon_v_fraction * min(ma.volume, mb.volume)
            voxel = voxel_fraction * min(ma.diameter, mb.diameter)
            checked += 1
            overlap = pairwise_overlap_volume(ma, ta, mb, tb, voxel,
                                              broad_phase)
            if overlap.volume > tolerance:
                conflicts.add((a, b))

    logger.debug('%d of %d pairs voxelized, %d conflicts', checked,
                 len(placed) * (len(placed) - 1) // 2, len(conflicts))
    return frozenset(conflicts)


class SelectionItem(NamedTuple):
    class_id: int
    index: int
    score: float


class SelectionProblem:
    """
    Hypotheses, per-class capacities and conflicts.

    :param items: One entry per hypothesis
    :param capacities: Maximum number of chosen hypotheses per class;
                       missing classes and ``None`` mean unlimited
    :param conflicts: Unordered pairs of positions in ``items``
    :param epsilon_v: The volume tolerance the conflicts were built with
    """

    def __init__(self, items: Iterable[SelectionItem],
                 capacities: Optional[Mapping[int, Optional[int]]] = None,
                 conflicts: Iterable[Tuple[int, int]] = (),
                 epsilon_v: float = 0.0):
        self.items: Tuple[SelectionItem, ...] = tuple(
            SelectionItem(int(c), int(i), float(s)) for c, i, s in items)
        self.capacities: Dict[int, Optional[int]] = dict(capacities or {})
        self.epsilon_v = float(epsilon_v)

        if not all(math.isfinite(item.score) for item in self.items):
            raise DataError('Selection scores must be finite')

        pairs = set()
        for a, b in conflicts:
            a, b = int(a), int(b)
            if a == b:
                raise DataError(f'Hypothesis {a} conflicts with itself')
            if not (0 <= a < len(self.items) and 0 <= b < len(self.items)):
                raise DataError(f'Conflict ({a}, {b}) is out of range')
            pairs.add((min(a, b), max(a, b)))
        self.conflicts: FrozenSet[Tuple[int, int]] = frozenset(pairs)

    def __len__(self) -> int:
        return len(self.items)

    def __repr__(self):
        return '<{} hypotheses={} conflicts={} capacities={}>'.format(
            type(self).__name__, len(self.items), len(self.conflicts),
            self.capacities)

    def capacity(self, class_id: int) -> float:
        value = self.capacities.get(class_id)
        return math.inf if value is None else value

    def with_scores(self, scores: Sequence[float]) -> 'SelectionProblem':
        """
        The same problem with other scores.
        """
        if len(scores) != len(self.items):
            raise DataError('Need one score per hypothesis')
        items = [item._replace(score=float(score))
                 for item, score in zip(self.items, scores)]
        return SelectionProblem(items, self.capacities, self.conflicts,
                                self.epsilon_v)

    def is_feasible(self, chosen: Sequence[bool]) -> bool:
        if len(chosen) != len(self.items):
            return False
        counts: Dict[int, int] = {}
        for flag, item in zip(chosen, self.items):
            if flag:
                counts[item.class_id] = counts.get(item.class_id, 0) + 1
        if any(n > self.capacity(c) for c, n in counts.items()):
            return False
        return not any(chosen[a] and chosen[b] for a, b in self.conflicts)

    def value(self, chosen: Sequence[bool]) -> float:
        return float(sum(item.score
                         for flag, item in zip(chosen, self.items) if flag))


class Selection(NamedTuple):
    """
    The outcome of a solver.

    :param chosen: ``y`` per hypothesis
    :param value: Objective value
    :param solver: ``exact`` or ``greedy``
    :param nodes: Branch-and-bound nodes visited (0 for greedy)
    :param wall_time: Seconds spent solving
    """

    chosen: Tuple[bool, ...]
    value: float
    solver: str
    nodes: int = 0
    wall_time: float = 0.0

    @property
    def indices(self) -> List[int]:
        return [k for k, flag in enumerate(self.chosen) if flag]

    def to_dict(self) -> Dict:
        return {'chosen': self.indices, 'value': self.value,
                'solver': self.solver, 'nodes': self.nodes,
                'wall_time': self.wall_time}


def _order(problem: SelectionProblem) -> List[int]:
    # Descending score; ties by (class, index) then position
    positive = [k for k, item in enumerate(problem.items) if item.score > 0]
    return sorted(positive, key=lambda k: (-problem.items[k].score,
                                           problem.items[k].class_id,
                                           problem.items[k].index, k))


def _greedy(problem: SelectionProblem, order: Sequence[int]) -> List[bool]:
    chosen = [False] * len(problem.items)
    counts: Dict[int, int] = {}
    neighbours: Dict[int, set] = {}
    for a, b in problem.conflicts:
        neighbours.setdefault(a, set()).add(b)
        neighbours.setdefault(b, set()).add(a)

    for k in order:
        class_id = problem.items[k].class_id
        if counts.get(class_id, 0) >= problem.capacity(class_id):
            continue
        if any(chosen[n] for n in neighbours.get(k, ())):
            continue
        chosen[k] = True
        counts[class_id] = counts.get(class_id, 0) + 1
    return chosen


def solve_greedy(problem: SelectionProblem) -> Selection:
    """
    Accept hypotheses in descending score while all constraints hold.
    """
    started = time.perf_counter()
    chosen = _greedy(problem, _order(problem))
    return Selection(tuple(chosen), problem.value(chosen), 'greedy', 0,
                     time.perf_counter() - started)


class _BranchAndBound:
    """
    Depth-first branch and bound over the positive-score variables, highest
    score first.

    The bound of a node is the current value plus the smaller of

    - the best completion respecting capacities only and
    - the sum over a fixed clique cover of the conflict graph of the best
      still-free score per clique (a clique holds at most one choice).
    """

    def __init__(self, problem: SelectionProblem):
        self.problem = problem
        self.order = _order(problem)
        n = len(self.order)
        position = {k: p for p, k in enumerate(self.order)}

        self.scores = np.array([problem.items[k].score for k in self.order])
        classes = sorted({problem.items[k].class_id for k in self.order})
        class_index = {c: i for i, c in enumerate(classes)}
        self.classes = np.array([class_index[problem.items[k].class_id]
                                 for k in self.order], dtype=np.int64)
        self.capacities = np.array([problem.capacity(c) for c in classes],
                                   dtype=np.float64)
        self.class_onehot = np.zeros((n, len(classes)), dtype=np.int64)
        self.class_onehot[np.arange(n), self.classes] = 1

        self.adjacency = np.zeros((n, n), dtype=bool)
        for a, b in problem.conflicts:
            if a in position and b in position:
                self.adjacency[position[a], position[b]] = True
                self.adjacency[position[b], position[a]] = True

        self.cliques = self._clique_cover()
        self.nodes = 0
        self.best_value = 0.0
        self.best: List[int] = []

    def _clique_cover(self) -> np.ndarray:
        labels = np.empty(len(self.order), dtype=np.int64)
        members: List[List[int]] = []
        for p in range(len(self.order)):
            for label, clique in enumerate(members):
                if self.adjacency[p, clique].all():
                    clique.append(p)
                    labels[p] = label
                    break
            else:
                labels[p] = len(members)
                members.append([p])
        self.n_cliques = len(members)
        return labels

    def bound(self, free: np.ndarray, counts: np.ndarray) -> float:
        if not free.any():
            return 0.0
        scores = self.scores[free]

        room = self.capacities - counts
        rank = np.cumsum(self.class_onehot[free], axis=0)[
            np.arange(len(scores)), self.classes[free]]
        capacity_bound = float(scores[rank <= room[self.classes[free]]]
                               .sum())

        best = np.zeros(self.n_cliques)
        np.maximum.at(best, self.cliques[free], scores)
        return min(capacity_bound, float(best.sum()))

    def _better(self, value: float) -> bool:
        margin = _RELATIVE_TOLERANCE * max(1.0, abs(self.best_value))
        return value > self.best_value + margin

    def run(self, incumbent: Sequence[bool]) -> List[int]:
        self.best = [p for p, k in enumerate(self.order) if incumbent[k]]
        self.best_value = float(self.scores[self.best].sum())

        n = len(self.order)
        blocked = np.zeros(n, dtype=bool)
        counts = np.zeros(len(self.capacities))
        self._search(0, [], 0.0, blocked, counts)
        return [self.order[p] for p in self.best]

    def _search(self, depth: int, chosen: List[int], value: float,
                blocked: np.ndarray, counts: np.ndarray) -> None:
        self.nodes += 1
        n = len(self.order)

        # Skip variables that can no longer be chosen
        while depth < n and (blocked[depth] or counts[self.classes[depth]]
                             >= self.capacities[self.classes[depth]]):
            depth += 1

        if depth == n:
            if self._better(value):
                self.best_value, self.best = value, list(chosen)
            return

        free = ~blocked
        free[:depth] = False
        free &= counts[self.classes] < self.capacities[self.classes]
        if not self._better(value + self.bound(free, counts)):
            return

        # Include first: the highest-score undecided variable
        cls = self.classes[depth]
        counts[cls] += 1
        chosen.append(depth)
        self._search(depth + 1, chosen, value + self.scores[depth],
                     blocked | self.adjacency[depth], counts)
        chosen.pop()
        counts[cls] -= 1

        excluded = blocked.copy()
        excluded[depth] = True
        self._search(depth + 1, chosen, value, excluded, counts)


def solve_exact(problem: SelectionProblem) -> Selection:
    """
    Provably optimal selection by branch and bound.

    Hypotheses with a score <= 0 are never chosen. The greedy selection is
    the initial incumbent.
    """
    started = time.perf_counter()
    order = _order(problem)
    incumbent = _greedy(problem, order)

    search = _BranchAndBound(problem)
    chosen_positions = search.run(incumbent)
    chosen = [False] * len(problem.items)
    for k in chosen_positions:
        chosen[k] = True

    elapsed = time.perf_counter() - started
    logger.debug('Branch and bound: %d variables, %d nodes, %.4fs',
                 len(order), search.nodes, elapsed)
    return Selection(tuple(chosen), problem.value(chosen), 'exact',
                     search.nodes, elapsed)


#: Solvers by name
SOLVERS: Dict[str, Callable[[SelectionProblem], Selection]] = {
    'exact': solve_exact,
    'greedy': solve_greedy,
}


def solve(problem: SelectionProblem, solver: str = 'exact') -> Selection:
    try:
        function = SOLVERS[solver]
    except KeyError:
        raise DataError(f'Unknown solver {solver!r}') from None
    return function(problem)


def assemble_scene(selection: Selection, problem: SelectionProblem,
                   poses: Sequence[RigidTransform]
                   ) -> Dict[int, List[RigidTransform]]:
    """
    The chosen poses grouped by class.

    :raises InfeasibleSelectionError: When the selection breaks a capacity
                                      or conflict constraint
    """
    if len(poses) != len(problem.items):
        raise DataError('Need one pose per hypothesis')
    if not problem.is_feasible(selection.chosen):
        raise InfeasibleSelectionError('The selection violates a capacity '
                                       'or conflict constraint')

    scene: Dict[int, List[RigidTransform]] = {}
    for flag, item, pose in zip(selection.chosen, problem.items, poses):
        if flag:
            scene.setdefault(item.class_id, []).append(pose)
    return scene
