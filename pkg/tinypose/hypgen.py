"""
Pose hypothesis generation.

For every class the labeled scene points are sampled into four-point bases
whose points are likely to lie on one instance: every pair of base points
must be connected in the pixel graph (no predicted boundary in between, at
most ``epsilon`` hops) and must show a point pair feature the model also
has. Each base is matched against congruent four-point sets on the model;
every match defines a rigid transform. Transforms are ranked by their
largest common pointset (LCP) score, thinned out under the symmetry group
of the model and refined by point-to-plane ICP.

After every base the sampling potential of the image segment it came from
is multiplied by ``gamma`` so later bases spread over other instances.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import (Any, Dict, Iterator, List, Mapping, NamedTuple,
                    Optional, Sequence, Tuple)

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .config import HypgenSettings
from .errors import BaseSamplingError, ClassAbsentError, DataError
from .geometry import (MeshModel, PointCloud, PPFQuantization, PPFTable,
                       RigidTransform, build_ppf_table, kabsch, ppf_arrays)
from .render import CameraIntrinsics, backproject, normals_from_depth
from .utils import LRUCache, freeze, rng_stream

__all__ = (
    'PixelGraph', 'Base', 'PoseHypothesis', 'HypothesisSet',
    'normalize_class_probability', 'build_pixel_graph',
    'shortest_path_length', 'sample_base', 'apply_dispersion_decay',
    'match_congruent_sets', 'lcp_score', 'refine_icp', 'deduplicate_poses',
    'dedup_and_refine', 'generate_hypotheses', 'get_ppf_table',
    'class_cloud',
)

logger = logging.getLogger(__name__)

_TABLES: LRUCache = LRUCache(capacity=16)


class PixelGraph:
    """
    8-connected grid graph over the image pixels.

    An edge joins two adjacent pixels when both are passable, i.e. their
    boundary probability is below the threshold.

    :param passable: Boolean (height, width) mask of passable pixels
    """

    def __init__(self, passable: np.ndarray):
        passable = np.asarray(passable, dtype=bool)
        if passable.ndim != 2:
            raise DataError('The pixel graph needs a two dimensional mask')
        height, width = passable.shape
        ids = np.arange(height * width).reshape(height, width)

        sources, targets = [], []
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            rows = slice(0, height - dr)
            src_cols = slice(max(0, -dc), width - max(0, dc))
            dst_cols = slice(max(0, dc), width - max(0, -dc))
            both = passable[rows, src_cols] \
                & passable[dr:height, dst_cols]
            sources.append(ids[rows, src_cols][both])
            targets.append(ids[dr:height, dst_cols][both])

        src = np.concatenate(sources)
        dst = np.concatenate(targets)
        data = np.ones(2 * len(src), dtype=np.int8)
        self._adjacency: csr_matrix = coo_matrix(
            (data, (np.concatenate([src, dst]), np.concatenate([dst, src]))),
            shape=(height * width, height * width)).tocsr()
        self._passable = passable
        self._segments: Optional[np.ndarray] = None
        passable.setflags(write=False)

    def __repr__(self):
        return '<{} shape={} edges={}>'.format(
            type(self).__name__, self.shape, self.num_edges)

    @property
    def shape(self) -> Tuple[int, int]:
        return self._passable.shape

    @property
    def passable(self) -> np.ndarray:
        return self._passable

    @property
    def adjacency(self) -> csr_matrix:
        return self._adjacency

    @property
    def num_edges(self) -> int:
        return self._adjacency.nnz // 2

    def node(self, pixel: Tuple[int, int]) -> int:
        row, col = pixel
        height, width = self.shape
        if not (0 <= row < height and 0 <= col < width):
            raise DataError(f'Pixel {pixel} lies outside the image')
        return int(row) * width + int(col)

    def has_edge(self, p: Tuple[int, int], q: Tuple[int, int]) -> bool:
        return bool(self._adjacency[self.node(p), self.node(q)])

    def edges(self) -> Iterator[Tuple[Tuple[int, int], Tuple[int, int]]]:
        """
        Every undirected edge once, as a pair of ``(row, col)`` pixels.
        """
        width = self.shape[1]
        upper = self._adjacency.tocoo()
        for a, b in zip(upper.row, upper.col):
            if a < b:
                yield divmod(int(a), width), divmod(int(b), width)

    def hops_from(self, pixel: Tuple[int, int],
                  limit: float = np.inf) -> np.ndarray:
        """
        Breadth-first hop counts from ``pixel`` to every pixel; ``inf``
        where unreachable or farther than ``limit``.
        """
        distances = dijkstra(self._adjacency, directed=False,
                             indices=self.node(pixel), unweighted=True,
                             limit=limit)
        return np.asarray(distances).reshape(self.shape)

    @property
    def segments(self) -> np.ndarray:
        """
        Connected component label per pixel.
        """
        if self._segments is None:
            _, labels = connected_components(self._adjacency,
                                             directed=False)
            self._segments = labels.reshape(self.shape)
        return self._segments


def build_pixel_graph(maps, delta: float = 0.5,
                      use_boundary: bool = True) -> PixelGraph:
    """
    Build the pixel graph of a boundary probability map.

    :param maps: :class:`~tinypose.scenegen.PredictionMaps` or a boundary
                 probability array
    :param use_boundary: When false every pixel is passable
    """
    boundary = getattr(maps, 'boundary', maps)
    boundary = np.asarray(boundary, dtype=np.float64)
    if not use_boundary:
        return PixelGraph(np.ones(boundary.shape, dtype=bool))
    return PixelGraph(boundary < delta)


def shortest_path_length(graph: PixelGraph, p_i: Tuple[int, int],
                         p_j: Tuple[int, int]) -> Optional[int]:
    """
    Hop count of the shortest path from ``p_i`` to ``p_j``, ``None`` when
    no path exists.
    """
    if tuple(p_i) == tuple(p_j):
        return 0
    hops = graph.hops_from(p_i)[tuple(p_j)]
    return None if not np.isfinite(hops) else int(hops)


def normalize_class_probability(maps, class_id: int) -> np.ndarray:
    """
    ``P_l`` divided by its sum over the image.

    :raises ClassAbsentError: The channel is zero everywhere
    """
    channel = maps.class_probability(class_id)
    total = float(channel.sum())
    if total <= 0:
        raise ClassAbsentError(f'Class {class_id} has no probability mass')
    return channel / total


class Base(NamedTuple):
    """
    Four scene points sampled for one class.

    ``indices`` point into the class cloud the base was drawn from.
    """

    class_id: int
    indices: Tuple[int, int, int, int]
    points: np.ndarray
    normals: np.ndarray
    pixels: np.ndarray

    @classmethod
    def from_cloud(cls, cloud: PointCloud, indices: Sequence[int],
                   class_id: int) -> 'Base':
        index = np.asarray(indices, dtype=np.int64)
        if len(index) != 4:
            raise DataError('A base has exactly four points')
        pixels = cloud.pixels[index] if cloud.pixels is not None \
            else np.zeros((4, 2), dtype=np.int64)
        return cls(class_id, tuple(int(i) for i in index),
                   cloud.points[index], cloud.normals[index], pixels)


@dataclass(frozen=True)
class PoseHypothesis:
    """
    A candidate pose of one class.

    ``features``, ``predicted_adi`` and ``score`` are filled in by scoring.
    """

    class_id: int
    pose: RigidTransform
    lcp: float = 0.0
    base_index: int = -1
    features: Optional[Tuple[float, float, float, float, float]] = None
    predicted_adi: Optional[float] = None
    score: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'class_id': self.class_id,
            'quaternion': self.pose.to_dict()['quaternion'],
            'translation': self.pose.to_dict()['translation'],
            'lcp': self.lcp,
            'base_index': self.base_index,
            'features': list(self.features) if self.features else None,
            'predicted_adi': self.predicted_adi,
            'score': self.score,
        }
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'PoseHypothesis':
        features = data.get('features')
        return cls(int(data['class_id']),
                   RigidTransform(data['quaternion'], data['translation']),
                   float(data.get('lcp', 0.0)),
                   int(data.get('base_index', -1)),
                   tuple(features) if features else None,  # type: ignore
                   data.get('predicted_adi'), data.get('score'))


@dataclass(repr=False)
class HypothesisSet:
    """
    Hypotheses per class plus sampling statistics.
    """

    hypotheses: Dict[int, List[PoseHypothesis]] = field(default_factory=dict)
    #: Bases that exhausted their retry budget, per class
    failed_bases: Dict[int, int] = field(default_factory=dict)

    def __repr__(self):
        return '<{} classes={} hypotheses={}>'.format(
            type(self).__name__, self.class_ids(), len(self))

    def __getitem__(self, class_id: int) -> List[PoseHypothesis]:
        return self.hypotheses.get(class_id, [])

    def __len__(self) -> int:
        return sum(len(h) for h in self.hypotheses.values())

    def __iter__(self) -> Iterator[PoseHypothesis]:
        for class_id in sorted(self.hypotheses):
            yield from self.hypotheses[class_id]

    def flatten(self) -> List[PoseHypothesis]:
        return list(self)

    def class_ids(self) -> List[int]:
        return sorted(self.hypotheses)

    def replace_all(self, hypotheses: Sequence[PoseHypothesis]
                    ) -> 'HypothesisSet':
        """
        A set with the same classes holding ``hypotheses`` (in flat order).
        """
        grouped: Dict[int, List[PoseHypothesis]] = {
            c: [] for c in self.hypotheses}
        for hypothesis in hypotheses:
            grouped.setdefault(hypothesis.class_id, []).append(hypothesis)
        return HypothesisSet(grouped, dict(self.failed_bases))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'classes': {str(c): [h.to_dict() for h in self.hypotheses[c]]
                        for c in sorted(self.hypotheses)},
            'failed_bases': {str(c): n
                             for c, n in sorted(self.failed_bases.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'HypothesisSet':
        return cls(
            {int(c): [PoseHypothesis.from_dict(h) for h in hs]
             for c, hs in data.get('classes', {}).items()},
            {int(c): int(n)
             for c, n in data.get('failed_bases', {}).items()})


def _weighted_choice(rng: np.random.Generator, candidates: np.ndarray,
                     weights: np.ndarray) -> Optional[int]:
    total = float(weights.sum())
    if len(candidates) == 0 or total <= 0:
        return None
    return int(rng.choice(candidates, p=weights / total))


def sample_base(cloud: PointCloud, potentials: np.ndarray,
                graph: PixelGraph, table: PPFTable, epsilon: float,
                rng: np.random.Generator, plane_tolerance: float,
                retry_budget: int = 20, class_id: int = 1) -> Base:
    """
    Draw four points likely to lie on one instance.

    The first point is drawn proportionally to ``potentials``. Every later
    point is drawn proportionally to ``potentials`` among the points that,
    together with each earlier point, show a model point pair feature and
    are fewer than ``epsilon`` hops apart in the pixel graph. The third
    point must leave the line through the first two, the fourth must lie
    within ``plane_tolerance`` of the plane of the first three.

    :param potentials: Non-negative weight per cloud point
    :raises BaseSamplingError: ``retry_budget`` draws all ran into an empty
                               candidate set
    """
    if len(cloud) < 4:
        raise BaseSamplingError('A base needs at least four points')
    if cloud.pixels is None:
        raise DataError('Base sampling needs points with pixel origins')

    potentials = np.asarray(potentials, dtype=np.float64)
    rows, cols = cloud.pixels[:, 0], cloud.pixels[:, 1]
    start_weights = potentials * graph.passable[rows, cols]
    everyone = np.arange(len(cloud))

    for _ in range(retry_budget):
        first = _weighted_choice(rng, everyone, start_weights)
        if first is None:
            break

        chosen = [first]
        allowed = np.ones(len(cloud), dtype=bool)
        allowed[first] = False
        while len(chosen) < 4:
            latest = chosen[-1]
            hops = graph.hops_from(tuple(cloud.pixels[latest]), epsilon)
            allowed &= hops[rows, cols] < epsilon
            allowed[latest] = False

            candidates = np.nonzero(allowed)[0]
            if len(candidates):
                raw = ppf_arrays(cloud.points[latest], cloud.normals[latest],
                                 cloud.points[candidates],
                                 cloud.normals[candidates])
                keep = table.contains_many(raw)
                allowed[candidates[~keep]] = False
                candidates = candidates[keep]

            if len(chosen) == 2 and len(candidates):
                a, b = cloud.points[chosen[0]], cloud.points[chosen[1]]
                direction = (b - a) / np.linalg.norm(b - a)
                offsets = cloud.points[candidates] - a
                off_line = np.linalg.norm(
                    offsets - np.outer(offsets @ direction, direction),
                    axis=1)
                candidates = candidates[off_line > plane_tolerance]
            elif len(chosen) == 3 and len(candidates):
                a, b, c = (cloud.points[k] for k in chosen)
                normal = np.cross(b - a, c - a)
                normal /= np.linalg.norm(normal)
                height = np.abs((cloud.points[candidates] - a) @ normal)
                candidates = candidates[height < plane_tolerance]

            picked = _weighted_choice(rng, candidates,
                                      potentials[candidates])
            if picked is None:
                break
            chosen.append(picked)
            allowed[picked] = False

        if len(chosen) == 4:
            return Base.from_cloud(cloud, chosen, class_id)

    raise BaseSamplingError(f'No base found for class {class_id} within '
                            f'{retry_budget} draws')


def apply_dispersion_decay(potentials: np.ndarray, base: Base,
                           graph: PixelGraph, gamma: float,
                           cloud: PointCloud) -> np.ndarray:
    """
    Multiply by ``gamma`` the potential of every cloud point in a pixel-graph
    segment reached from the base pixels.
    """
    segments = graph.segments
    reached = np.unique(segments[base.pixels[:, 0], base.pixels[:, 1]])
    point_segments = segments[cloud.pixels[:, 0], cloud.pixels[:, 1]]
    decayed = np.array(potentials, dtype=np.float64, copy=True)
    decayed[np.isin(point_segments, reached)] *= gamma
    return decayed


def _line_parameters(a, b, c, d) -> Tuple[float, float, float]:
    """
    Parameters of the closest points of lines ``a + r1 (b - a)`` and
    ``c + r2 (d - c)`` and the gap between them.
    """
    u, v, w = b - a, d - c, a - c
    uu, uv, vv = u @ u, u @ v, v @ v
    uw, vw = u @ w, v @ w
    det = uu * vv - uv * uv
    if det < 1e-18:
        return math.nan, math.nan, math.inf
    r1 = (uv * vw - vv * uw) / det
    r2 = (uu * vw - uv * uw) / det
    gap = float(np.linalg.norm((a + r1 * u) - (c + r2 * v)))
    return float(r1), float(r2), gap


def _pairing(points: np.ndarray) -> Tuple[List[int], float, float]:
    best = None
    for order in ((0, 1, 2, 3), (0, 2, 1, 3), (0, 3, 1, 2)):
        a, b, c, d = (points[k] for k in order)
        r1, r2, gap = _line_parameters(a, b, c, d)
        if not np.isfinite(gap):
            continue
        outside = max(0.0, -r1, r1 - 1.0) + max(0.0, -r2, r2 - 1.0)
        rank = (outside, gap)
        if best is None or rank < best[0]:
            best = (rank, list(order), r1, r2)
    if best is None:
        raise DataError('Base points are collinear')
    return best[1], best[2], best[3]


def match_congruent_sets(base: Base, model: MeshModel, table: PPFTable,
                         distance_tolerance: float,
                         ratio_tolerance: float = 0.05,
                         max_congruent: int = 32) -> List[RigidTransform]:
    """
    Rigid transforms mapping model four-point sets congruent to ``base``
    onto the base.

    The base is split into two pairs whose connecting lines (nearly) meet;
    the meeting point divides them by the ratios ``r1`` and ``r2``. Model
    point pairs with the same point pair feature and length as each base
    pair are looked up in the PPF table. A pair from each list forms a
    congruent set when the points dividing them by ``r1`` and ``r2``
    coincide, all six distances agree with the base within
    ``distance_tolerance`` and the line ratios agree within
    ``ratio_tolerance``.

    :returns: At most ``max_congruent`` transforms, best fit first
    """
    order, r1, r2 = _pairing(base.points)
    points = base.points[order]
    normals = base.normals[order]
    quantization = table.quantization
    samples = table.cloud.points

    pair_lists = []
    for first, second in ((0, 1), (2, 3)):
        raw = ppf_arrays(points[first], normals[first], points[second],
                         normals[second])
        key = quantization.quantize(raw[None])[0]
        distance = float(np.linalg.norm(points[first] - points[second]))
        pair_lists.append(table.pairs_near(key, distance,
                                           distance_tolerance))
    pairs1, pairs2 = pair_lists
    if len(pairs1) == 0 or len(pairs2) == 0:
        return []

    e1 = samples[pairs1[:, 0]] + r1 * (samples[pairs1[:, 1]]
                                       - samples[pairs1[:, 0]])
    e2 = samples[pairs2[:, 0]] + r2 * (samples[pairs2[:, 1]]
                                       - samples[pairs2[:, 0]])
    close = cKDTree(e1).sparse_distance_matrix(
        cKDTree(e2), distance_tolerance, output_type='ndarray')
    if len(close) == 0:
        return []

    quads = np.stack([pairs1[close['i'], 0], pairs1[close['i'], 1],
                      pairs2[close['j'], 0], pairs2[close['j'], 1]], axis=1)
    model_points = samples[quads]

    base_distances = np.array([np.linalg.norm(points[x] - points[y])
                               for x in range(4) for y in range(x + 1, 4)])
    model_distances = np.stack(
        [np.linalg.norm(model_points[:, x] - model_points[:, y], axis=1)
         for x in range(4) for y in range(x + 1, 4)], axis=1)
    congruent = np.all(np.abs(model_distances - base_distances)
                       <= distance_tolerance, axis=1)

    # Ratios of the model lines through their closest points
    for k in np.nonzero(congruent)[0]:
        a, b, c, d = model_points[k]
        m1, m2, _ = _line_parameters(a, b, c, d)
        if not (abs(m1 - r1) <= ratio_tolerance
                and abs(m2 - r2) <= ratio_tolerance):
            congruent[k] = False

    fits = []
    for k in np.nonzero(congruent)[0]:
        transform = kabsch(model_points[k], points)
        residual = float(np.sqrt(np.mean(np.sum(
            (transform.apply(model_points[k]) - points) ** 2, axis=1))))
        if residual <= distance_tolerance:
            fits.append((residual, int(k), transform))

    fits.sort(key=lambda fit: (fit[0], fit[1]))
    return [transform for _, _, transform in fits[:max_congruent]]


def _facing(model: MeshModel, pose: RigidTransform, samples: PointCloud
            ) -> Tuple[np.ndarray, np.ndarray]:
    points = pose.apply(samples.points)
    normals = pose.apply_vectors(samples.normals)
    facing = np.einsum('ij,ij->i', points, normals) < 0
    return points[facing], normals[facing]


def lcp_score(transform: RigidTransform, model: MeshModel,
              cloud: PointCloud, radius: float,
              samples: Optional[PointCloud] = None) -> float:
    """
    Fraction of all model samples, placed at ``transform``, that have a
    cloud point within ``radius``.

    Self-occluded samples count in the denominator, so a single view of a
    closed model scores at most about one half.
    """
    samples = samples if samples is not None else model.samples()
    if len(cloud) == 0 or len(samples) == 0:
        return 0.0
    points = transform.apply(samples.points)
    distances, _ = cloud.kdtree.query(points, distance_upper_bound=radius)
    return float(np.mean(np.isfinite(distances)))


def refine_icp(pose: RigidTransform, model: MeshModel, cloud: PointCloud,
               radius: float, iterations: int = 30,
               samples: Optional[PointCloud] = None) -> RigidTransform:
    """
    Point-to-plane ICP of the camera-facing model samples against
    ``cloud``.

    Correspondences are nearest cloud points within ``radius``; each step
    solves the small-angle linearization around the sample centroid.
    """
    samples = samples if samples is not None else model.samples()
    if len(cloud) < 6:
        return pose

    for _ in range(iterations):
        points, _ = _facing(model, pose, samples)
        if len(points) < 6:
            break
        distances, index = cloud.kdtree.query(points,
                                              distance_upper_bound=radius)
        matched = np.isfinite(distances)
        if matched.sum() < 6:
            break

        source = points[matched]
        target = cloud.points[index[matched]]
        normals = cloud.normals[index[matched]]
        center = source.mean(axis=0)
        source_c = source - center

        system = np.hstack([np.cross(source_c, normals), normals])
        rhs = np.einsum('ij,ij->i', target - source, normals)
        update, *_ = np.linalg.lstsq(system, rhs, rcond=None)

        rotation = Rotation.from_rotvec(update[:3]).as_matrix()
        shift = center + update[3:] - rotation @ center
        pose = RigidTransform.from_matrix(rotation, shift) @ pose
        if np.linalg.norm(update) < 1e-7:
            break
    return pose


def deduplicate_poses(poses: Sequence[RigidTransform], model: MeshModel,
                      rotation_threshold: float,
                      translation_threshold: float,
                      limit: Optional[int] = None) -> List[int]:
    """
    Greedily keep poses (in the given order) that differ from every kept
    pose, under every symmetry of the model, by more than
    ``rotation_threshold`` radians or more than ``translation_threshold``
    meters.

    :returns: Indices of the kept poses
    """
    kept: List[int] = []
    kept_quaternions = np.zeros((0, 4))
    kept_translations = np.zeros((0, 3))

    for index, pose in enumerate(poses):
        if limit is not None and len(kept) >= limit:
            break
        variants = [pose @ symmetry for symmetry in model.symmetry_group]
        quaternions = np.array([v.quaternion for v in variants])
        translations = np.array([v.translation for v in variants])

        if len(kept):
            dots = np.clip(np.abs(quaternions @ kept_quaternions.T), 0, 1)
            angles = 2.0 * np.arccos(dots)
            shifts = np.linalg.norm(translations[:, None]
                                    - kept_translations[None], axis=2)
            duplicate = (angles <= rotation_threshold) \
                & (shifts <= translation_threshold)
            if duplicate.any():
                continue

        kept.append(index)
        kept_quaternions = np.vstack([kept_quaternions, pose.quaternion])
        kept_translations = np.vstack([kept_translations, pose.translation])
    return kept


def dedup_and_refine(candidates: Sequence[Tuple[RigidTransform, float, int]],
                     model: MeshModel, cloud: PointCloud,
                     settings: HypgenSettings,
                     target: Optional[int] = None) -> List[PoseHypothesis]:
    """
    Thin out candidates ``(pose, lcp, base_index)`` in descending LCP order,
    refine the representatives by ICP and thin out once more in case
    refinement moved two of them together.
    """
    target = settings.max_hypotheses if target is None else target
    rotation = math.radians(settings.rotation_threshold_deg)
    translation = settings.translation_fraction * model.diameter
    lcp_radius = settings.lcp_fraction * model.diameter
    samples = model.samples(settings.model_samples)

    ranked = sorted(range(len(candidates)),
                    key=lambda k: (-candidates[k][1], k))
    ordered = [candidates[k] for k in ranked]
    kept = deduplicate_poses([c[0] for c in ordered], model, rotation,
                             translation, target)

    refined = []
    for k in kept:
        pose, _, base_index = ordered[k]
        pose = refine_icp(pose, model, cloud,
                          settings.icp_radius_fraction * model.diameter,
                          settings.icp_iterations, samples)
        refined.append(PoseHypothesis(
            model.class_id, pose,
            lcp_score(pose, model, cloud, lcp_radius, samples), base_index))

    refined.sort(key=lambda h: -h.lcp)
    again = deduplicate_poses([h.pose for h in refined], model, rotation,
                              translation, target)
    return [refined[k] for k in again]


def get_ppf_table(model: MeshModel, settings: HypgenSettings) -> PPFTable:
    """
    The PPF table of ``model``, cached across scenes.
    """
    quantization = PPFQuantization.for_model(
        model, settings.ppf_distance_fraction, settings.ppf_angle_step_deg)
    key = freeze({
        'model': (model.name, model.class_id,
                  hash(model.vertices.tobytes()),
                  hash(model.triangles.tobytes())),
        'quantization': quantization._asdict(),
        'samples': settings.model_samples,
    })

    def build() -> PPFTable:
        table = build_ppf_table(model, settings.model_samples, quantization)
        logger.debug('Built %r for %r', table, model)
        return table

    return _TABLES.get_or_build(key, build)


def class_cloud(maps, depth: np.ndarray, cam: CameraIntrinsics,
                class_id: int,
                normals: Optional[Tuple[np.ndarray, np.ndarray]] = None
                ) -> PointCloud:
    """
    Backprojected points whose most likely class is ``class_id`` and which
    have an estimated normal.
    """
    labels = np.argmax(maps.semantic, axis=2)
    return backproject(depth, cam, mask=labels == class_id,
                       normals=normals, require_normals=True)


def generate_hypotheses(maps, depth: np.ndarray, cam: CameraIntrinsics,
                        models: Mapping[int, MeshModel],
                        settings: Optional[HypgenSettings] = None,
                        seed: int = 0) -> HypothesisSet:
    """
    Hypotheses for every class in ``models``.

    Classes without labeled points get an empty list. The result depends
    only on the inputs and ``seed``.
    """
    settings = settings or HypgenSettings()
    graph = build_pixel_graph(maps, settings.delta, settings.use_boundary)
    epsilon = settings.epsilon_for(cam.width, cam.height)
    normals = normals_from_depth(depth, cam)
    result = HypothesisSet()

    for class_id in sorted(models):
        model = models[class_id]
        result.hypotheses[class_id] = []
        result.failed_bases[class_id] = 0

        cloud = class_cloud(maps, depth, cam, class_id, normals)
        try:
            probability = normalize_class_probability(maps, class_id)
        except ClassAbsentError:
            logger.warning('Class %d is absent from the prediction maps',
                           class_id)
            continue
        if len(cloud) < 4:
            logger.info('Class %d: %d labeled points, no hypotheses',
                        class_id, len(cloud))
            continue

        table = get_ppf_table(model, settings)
        samples = model.samples(settings.model_samples)
        lcp_radius = settings.lcp_fraction * model.diameter
        plane_tolerance = settings.plane_fraction * model.diameter
        distance_tolerance = settings.distance_fraction * model.diameter
        potentials = probability[cloud.pixels[:, 0], cloud.pixels[:, 1]]

        candidates: List[Tuple[RigidTransform, float, int]] = []
        for index in range(settings.num_bases):
            rng = rng_stream(seed, class_id, index)
            try:
                base = sample_base(cloud, potentials, graph, table, epsilon,
                                   rng, plane_tolerance,
                                   settings.retry_budget, class_id)
            except BaseSamplingError:
                result.failed_bases[class_id] += 1
                continue

            for transform in match_congruent_sets(
                    base, model, table, distance_tolerance,
                    settings.ratio_tolerance, settings.max_congruent):
                candidates.append((transform,
                                   lcp_score(transform, model, cloud,
                                             lcp_radius, samples), index))
            potentials = apply_dispersion_decay(potentials, base, graph,
                                                settings.gamma, cloud)

        if result.failed_bases[class_id]:
            logger.warning('Class %d: %d of %d bases failed', class_id,
                           result.failed_bases[class_id],
                           settings.num_bases)

        result.hypotheses[class_id] = dedup_and_refine(candidates, model,
                                                       cloud, settings)
        logger.info('Class %d: %d candidates, %d hypotheses', class_id,
                    len(candidates), len(result.hypotheses[class_id]))

    return result


