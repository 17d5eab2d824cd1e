"""
Core geometric types: rigid transforms, mesh models, point clouds, point
pair features and the ADI pose distance.

All types are immutable after construction and may be shared between
workers. Quaternions are stored scalar-last ``(x, y, z, w)`` like
:class:`scipy.spatial.transform.Rotation` expects them, with ``w >= 0``.
"""

import math
from functools import cached_property
from typing import (Any, Dict, Iterable, List, NamedTuple, Optional,
                    Sequence, Tuple)

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from .errors import DataError, DegeneratePairError, EmptyModelError

__all__ = (
    'RigidTransform', 'compose', 'rotation_distance', 'MeshModel',
    'PointCloud', 'PPF', 'PPFKey', 'PPFQuantization', 'PPFTable',
    'compute_ppf', 'ppf_arrays', 'build_ppf_table', 'adi_distance',
    'model_diameter', 'sample_surface', 'kabsch', 'perturb_pose',
)

_UNIT_TOLERANCE = 1e-6


class RigidTransform:
    """
    A rotation followed by a translation, ``x -> R x + t``.

    :param rotation: Unit quaternion ``(x, y, z, w)``; it is normalized
    :param translation: Translation in meters
    """

    __slots__ = ('_quaternion', '_translation', '_matrix')

    def __init__(self, rotation: Sequence[float] = (0.0, 0.0, 0.0, 1.0),
                 translation: Sequence[float] = (0.0, 0.0, 0.0)):
        quaternion = np.array(rotation, dtype=np.float64).reshape(4)
        norm = float(np.linalg.norm(quaternion))
        if not np.isfinite(norm) or norm < 1e-12:
            raise DataError('Rotation quaternion must be non-zero and finite')
        quaternion /= norm
        if quaternion[3] < 0:
            quaternion = -quaternion

        translation_ = np.array(translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(translation_)):
            raise DataError('Translation must be finite')

        matrix = Rotation.from_quat(quaternion).as_matrix()
        for array in (quaternion, translation_, matrix):
            array.setflags(write=False)

        self._quaternion = quaternion
        self._translation = translation_
        self._matrix = matrix

    @classmethod
    def identity(cls) -> 'RigidTransform':
        return cls()

    @classmethod
    def from_matrix(cls, rotation: np.ndarray,
                    translation: Sequence[float] = (0.0, 0.0, 0.0)
                    ) -> 'RigidTransform':
        """
        Build a transform from a 3x3 rotation matrix and a translation.
        """
        quaternion = Rotation.from_matrix(np.asarray(rotation)).as_quat()
        return cls(quaternion, translation)

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float],
                    translation: Sequence[float] = (0.0, 0.0, 0.0)
                    ) -> 'RigidTransform':
        return cls(Rotation.from_rotvec(np.asarray(rotvec)).as_quat(),
                   translation)

    @classmethod
    def from_translation(cls, x: float, y: float, z: float
                         ) -> 'RigidTransform':
        return cls(translation=(x, y, z))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RigidTransform':
        return cls(data['quaternion'], data['translation'])

    @property
    def quaternion(self) -> np.ndarray:
        return self._quaternion

    @property
    def translation(self) -> np.ndarray:
        return self._translation

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def homogeneous(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self._matrix
        matrix[:3, 3] = self._translation
        return matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        """
        Transform an (n, 3) array of points (or a single point).
        """
        return np.asarray(points, dtype=np.float64) @ self._matrix.T \
            + self._translation

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """
        Rotate directions (normals) without translating them.
        """
        return np.asarray(vectors, dtype=np.float64) @ self._matrix.T

    def inverse(self) -> 'RigidTransform':
        rotation = self._matrix.T
        return RigidTransform.from_matrix(rotation,
                                          -rotation @ self._translation)

    def __matmul__(self, other: 'RigidTransform') -> 'RigidTransform':
        return compose(self, other)

    def allclose(self, other: 'RigidTransform', atol: float = 1e-9) -> bool:
        same_rotation = np.allclose(self._matrix, other._matrix, atol=atol)
        return bool(same_rotation and np.allclose(
            self._translation, other._translation, atol=atol))

    def to_dict(self) -> Dict[str, List[float]]:
        return {'quaternion': [float(v) for v in self._quaternion],
                'translation': [float(v) for v in self._translation]}

    def __repr__(self):
        return '<{} quaternion={} translation={}>'.format(
            type(self).__name__,
            np.array2string(self._quaternion, precision=4),
            np.array2string(self._translation, precision=4))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """
    The transform applying ``b`` first and ``a`` second.
    """
    rotation = Rotation.from_quat(a.quaternion) \
        * Rotation.from_quat(b.quaternion)
    translation = a.rotation_matrix @ b.translation + a.translation
    return RigidTransform(rotation.as_quat(), translation)


def rotation_distance(a: RigidTransform, b: RigidTransform) -> float:
    """
    Geodesic angle (radians) between the rotations of two transforms.
    """
    dot = abs(float(np.dot(a.quaternion, b.quaternion)))
    return 2.0 * math.acos(min(1.0, dot))


def perturb_pose(pose: RigidTransform, rng: np.random.Generator,
                 max_rotation: float, max_translation: float
                 ) -> RigidTransform:
    """
    Apply a random rotation (about the pose's own origin) of at most
    ``max_rotation`` radians and a random shift of at most
    ``max_translation`` meters.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_rotation)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    shift = direction * rng.uniform(0.0, max_translation)

    delta = Rotation.from_rotvec(axis * angle)
    rotation = delta * Rotation.from_quat(pose.quaternion)
    return RigidTransform(rotation.as_quat(), pose.translation + shift)


class PointCloud:
    """
    Points with unit normals and, when derived from a depth image, the
    ``(row, col)`` pixel each point came from.

    :param points: (n, 3) points in meters
    :param normals: (n, 3) unit normals
    :param pixels: Optional (n, 2) integer pixel origins
    :param image_shape: ``(height, width)`` bounding the pixel origins
    """

    def __init__(self, points: np.ndarray, normals: np.ndarray,
                 pixels: Optional[np.ndarray] = None,
                 image_shape: Optional[Tuple[int, int]] = None):
        points = np.array(points, dtype=np.float64).reshape(-1, 3)
        normals = np.array(normals, dtype=np.float64).reshape(-1, 3)
        if len(points) != len(normals):
            raise DataError('Points and normals must have equal length')

        if pixels is not None:
            pixels = np.array(pixels, dtype=np.int64).reshape(-1, 2)
            if len(pixels) != len(points):
                raise DataError('Every point needs a pixel origin')
            if image_shape is not None and len(pixels) and (
                    pixels.min() < 0
                    or pixels[:, 0].max() >= image_shape[0]
                    or pixels[:, 1].max() >= image_shape[1]):
                raise DataError('Pixel origins lie outside the image')
            pixels.setflags(write=False)

        points.setflags(write=False)
        normals.setflags(write=False)
        self._points = points
        self._normals = normals
        self._pixels = pixels
        self._image_shape = image_shape

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def normals(self) -> np.ndarray:
        return self._normals

    @property
    def pixels(self) -> Optional[np.ndarray]:
        return self._pixels

    @property
    def image_shape(self) -> Optional[Tuple[int, int]]:
        return self._image_shape

    def __len__(self) -> int:
        return len(self._points)

    def __repr__(self):
        return '<{} points={}>'.format(type(self).__name__, len(self))

    def subset(self, index) -> 'PointCloud':
        """
        Select points by boolean mask or index array.
        """
        pixels = self._pixels[index] if self._pixels is not None else None
        return PointCloud(self._points[index], self._normals[index],
                          pixels, self._image_shape)

    def transformed(self, pose: RigidTransform) -> 'PointCloud':
        return PointCloud(pose.apply(self._points),
                          pose.apply_vectors(self._normals),
                          self._pixels, self._image_shape)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self._points)

    @cached_property
    def pixel_index(self) -> Dict[Tuple[int, int], int]:
        """
        Map from pixel origin to point index.
        """
        if self._pixels is None:
            return {}
        return {(int(r), int(c)): i for i, (r, c) in enumerate(self._pixels)}


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / np.where(norms > 0, norms, 1.0)


class MeshModel:
    """
    A triangulated object model.

    Models without triangles are point models; their vertices are their
    surface samples. Missing vertex normals are computed from area-weighted
    face normals (or, for point models, pointing away from the centroid).

    :param vertices: (n, 3) vertex positions in meters
    :param triangles: (m, 3) vertex indices, counter-clockwise seen from
                      outside
    :param vertex_normals: (n, 3) unit normals
    :param class_id: Object class in ``[1, K]``
    :param symmetry_group: Rigid transforms mapping the model onto itself;
                           the identity is added when missing
    :param name: Human readable name, also used in cache keys
    """

    def __init__(self, vertices: np.ndarray,
                 triangles: Optional[np.ndarray] = None,
                 vertex_normals: Optional[np.ndarray] = None,
                 class_id: int = 1,
                 symmetry_group: Optional[Iterable[RigidTransform]] = None,
                 name: Optional[str] = None):
        vertices = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        if len(vertices) == 0:
            raise EmptyModelError('A model needs at least one vertex')
        if triangles is None:
            triangles = np.zeros((0, 3), dtype=np.int64)
        triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(triangles) and (triangles.min() < 0
                               or triangles.max() >= len(vertices)):
            raise DataError('Triangle indices out of range')
        if int(class_id) < 1:
            raise DataError('class_id must be >= 1')

        if vertex_normals is None:
            vertex_normals = self._estimate_normals(vertices, triangles)
        vertex_normals = np.array(vertex_normals,
                                  dtype=np.float64).reshape(-1, 3)
        if vertex_normals.shape != vertices.shape:
            raise DataError('Every vertex needs a normal')
        vertex_normals = _unit_rows(vertex_normals)
        lengths = np.linalg.norm(vertex_normals, axis=1)
        if np.any(np.abs(lengths - 1.0) > _UNIT_TOLERANCE):
            raise DataError('Vertex normals must be non-zero')

        group = list(symmetry_group or [])
        if not any(g.allclose(RigidTransform.identity()) for g in group):
            group.insert(0, RigidTransform.identity())

        for array in (vertices, triangles, vertex_normals):
            array.setflags(write=False)

        self._vertices = vertices
        self._triangles = triangles
        self._vertex_normals = vertex_normals
        self._class_id = int(class_id)
        self._symmetry_group: Tuple[RigidTransform, ...] = tuple(group)
        self._name = name or f'class{int(class_id)}'
        self._sample_cache: Dict[Tuple[int, int], PointCloud] = {}

    @staticmethod
    def _estimate_normals(vertices, triangles) -> np.ndarray:
        normals = np.zeros_like(vertices)
        if len(triangles):
            a, b, c = (vertices[triangles[:, k]] for k in range(3))
            # Cross product length is twice the area: area weighting
            face = np.cross(b - a, c - a)
            for k in range(3):
                np.add.at(normals, triangles[:, k], face)
        radial = vertices - vertices.mean(axis=0)
        missing = np.linalg.norm(normals, axis=1) < 1e-12
        normals[missing] = radial[missing]
        still = np.linalg.norm(normals, axis=1) < 1e-12
        normals[still] = (0.0, 0.0, 1.0)
        return normals

    def __repr__(self):
        return '<{} name={!r} class_id={} vertices={} triangles={}>'.format(
            type(self).__name__, self._name, self._class_id,
            len(self._vertices), len(self._triangles))

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def triangles(self) -> np.ndarray:
        return self._triangles

    @property
    def vertex_normals(self) -> np.ndarray:
        return self._vertex_normals

    @property
    def class_id(self) -> int:
        return self._class_id

    @property
    def name(self) -> str:
        return self._name

    @property
    def symmetry_group(self) -> Tuple[RigidTransform, ...]:
        return self._symmetry_group

    @cached_property
    def diameter(self) -> float:
        """
        The largest distance between two vertices (d_l).
        """
        return model_diameter(self)

    @cached_property
    def face_normals(self) -> np.ndarray:
        a, b, c = (self._vertices[self._triangles[:, k]] for k in range(3))
        return _unit_rows(np.cross(b - a, c - a))

    @cached_property
    def face_areas(self) -> np.ndarray:
        a, b, c = (self._vertices[self._triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    @cached_property
    def is_watertight(self) -> bool:
        """
        Every edge is shared by exactly two triangles.
        """
        if len(self._triangles) == 0:
            return False
        edges = np.concatenate([self._triangles[:, [0, 1]],
                                self._triangles[:, [1, 2]],
                                self._triangles[:, [2, 0]]])
        edges.sort(axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @cached_property
    def volume(self) -> float:
        """
        Enclosed volume from signed tetrahedra; 0 for open meshes.
        """
        if not self.is_watertight:
            return 0.0
        a, b, c = (self._vertices[self._triangles[:, k]] for k in range(3))
        return abs(float(np.einsum('ij,ij->i', a, np.cross(b, c)).sum())
                   / 6.0)

    @cached_property
    def is_convex(self) -> bool:
        if not self.is_watertight:
            return False
        offsets = np.einsum('ij,ij->i', self.face_normals,
                            self._vertices[self._triangles[:, 0]])
        signed = self._vertices @ self.face_normals.T - offsets
        return bool(np.all(signed <= 1e-9 * max(self.diameter, 1.0)))

    @property
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._vertices.min(axis=0), self._vertices.max(axis=0)

    def samples(self, count: int = 500, seed: int = 0) -> PointCloud:
        """
        Surface samples used by PPF tables, LCP, ICP and ADI (memoized).
        """
        key = (int(count), int(seed))
        if key not in self._sample_cache:
            self._sample_cache[key] = sample_surface(self, count, seed)
        return self._sample_cache[key]

    def with_class_id(self, class_id: int) -> 'MeshModel':
        return MeshModel(self._vertices, self._triangles,
                         self._vertex_normals, class_id,
                         self._symmetry_group, self._name)


def sample_surface(model: MeshModel, count: int = 500,
                   seed: int = 0) -> PointCloud:
    """
    Draw about ``count`` well spread surface points.

    Area-weighted random candidates are thinned by dart throwing: a
    candidate is kept only when no kept point lies within the rejection
    radius. Point models return their vertices unchanged.

    :param count: Target number of samples
    :param seed: Random seed; equal seeds give equal samples
    """
    if len(model.triangles) == 0:
        return PointCloud(model.vertices, model.vertex_normals)

    rng = np.random.default_rng(seed)
    areas = model.face_areas
    total = float(areas.sum())
    if total <= 0:
        raise EmptyModelError(f'Model {model.name} has zero surface area')

    n_candidates = max(20 * count, 1000)
    faces = rng.choice(len(areas), size=n_candidates, p=areas / total)
    u = np.sqrt(rng.random(n_candidates))
    v = rng.random(n_candidates)
    tri = model.triangles[faces]
    a, b, c = (model.vertices[tri[:, k]] for k in range(3))
    candidates = (1 - u)[:, None] * a + (u * (1 - v))[:, None] * b \
        + (u * v)[:, None] * c
    normals = model.face_normals[faces]

    # Random sequential addition saturates near 0.55 coverage
    radius = 0.75 * math.sqrt(0.6965 * total / count)
    cell = radius
    grid: Dict[Tuple[int, int, int], List[int]] = {}
    kept: List[int] = []
    cells = np.floor(candidates / cell).astype(np.int64)

    for index in range(n_candidates):
        cx, cy, cz = (int(x) for x in cells[index])
        point = candidates[index]
        clear = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    for other in grid.get((cx + dx, cy + dy, cz + dz), ()):
                        if np.sum((candidates[other] - point) ** 2) \
                                < radius * radius:
                            clear = False
                            break
                    if not clear:
                        break
                if not clear:
                    break
        if clear:
            grid.setdefault((cx, cy, cz), []).append(index)
            kept.append(index)
            if len(kept) >= count:
                break

    kept_index = np.array(kept, dtype=np.int64)
    return PointCloud(candidates[kept_index], normals[kept_index])


def model_diameter(model: MeshModel) -> float:
    """
    Maximum distance between any two vertices.

    Large vertex sets are reduced to their convex hull first; the farthest
    pair of a point set always lies on its hull.
    """
    vertices = model.vertices
    if len(vertices) < 2:
        raise EmptyModelError('The diameter needs at least two vertices')

    candidates = vertices
    if len(vertices) > 64:
        try:
            candidates = vertices[ConvexHull(vertices).vertices]
        except QhullError:
            candidates = vertices
    return float(pdist(candidates).max())


def adi_distance(t1: RigidTransform, t2: RigidTransform, model: MeshModel,
                 points: Optional[np.ndarray] = None) -> float:
    """
    Average over model points of the distance to the closest point of the
    other pose (the ADI metric).

    :param points: Model-frame points to use instead of the surface samples
    """
    if points is None:
        points = model.samples().points
    if len(points) == 0:
        raise EmptyModelError('ADI needs a non-empty model')

    moved = t1.apply(points)
    reference = cKDTree(t2.apply(points))
    distances, _ = reference.query(moved)
    return float(np.mean(distances))


def kabsch(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """
    Least-squares rigid transform mapping ``source`` points onto ``target``
    points (no scale).
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.shape[0] < 3:
        raise DataError('Kabsch needs two equally sized sets of >= 3 points')

    centroid_s = source.mean(axis=0)
    centroid_t = target.mean(axis=0)
    covariance = (source - centroid_s).T @ (target - centroid_t)
    u, _, vt = np.linalg.svd(covariance)
    v = vt.T

    # Guard against reflections
    d = np.sign(np.linalg.det(v @ u.T)) or 1.0
    rotation = v @ np.diag([1.0, 1.0, d]) @ u.T
    translation = centroid_t - rotation @ centroid_s
    return RigidTransform.from_matrix(rotation, translation)


class PPF(NamedTuple):
    """
    Raw point pair feature.
    """

    distance: float
    angle1: float
    angle2: float
    angle3: float


class PPFKey(NamedTuple):
    """
    Quantized point pair feature.
    """

    distance_bin: int
    angle1_bin: int
    angle2_bin: int
    angle3_bin: int


class PPFQuantization(NamedTuple):
    """
    Bin sizes of point pair features.

    :param distance_step: Distance bin width in meters
    :param angle_step: Angle bin width in radians
    :param max_distance: Largest distance the bins must cover
    """

    distance_step: float
    angle_step: float = math.radians(12.0)
    max_distance: float = 1.0

    @classmethod
    def for_model(cls, model: MeshModel, distance_fraction: float = 0.05,
                  angle_step_deg: float = 12.0) -> 'PPFQuantization':
        return cls(model.diameter * distance_fraction,
                   math.radians(angle_step_deg), model.diameter)

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        distance_bins = int(math.floor(self.max_distance
                                       / self.distance_step)) + 1
        angle_bins = int(math.ceil(math.pi / self.angle_step - 1e-9))
        return (distance_bins, angle_bins, angle_bins, angle_bins)

    def quantize(self, raw: np.ndarray) -> np.ndarray:
        """
        Quantize an (n, 4) array of raw features into (n, 4) bins.

        Distances beyond ``max_distance`` get the out-of-range bin
        ``shape[0]``; angles are clamped into the last bin.
        """
        raw = np.atleast_2d(raw)
        shape = self.shape
        bins = np.empty(raw.shape, dtype=np.int64)
        bins[:, 0] = np.minimum(np.floor(raw[:, 0] / self.distance_step),
                                shape[0])
        bins[:, 1:] = np.minimum(np.floor(raw[:, 1:] / self.angle_step),
                                 shape[1] - 1)
        return bins


#: Used when no model-specific quantization is given
DEFAULT_QUANTIZATION = PPFQuantization(distance_step=0.005)


def _angles(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.einsum('...i,...i->...', u, v)
    return np.arctan2(cross, dot)


def ppf_arrays(p1: np.ndarray, n1: np.ndarray, p2: np.ndarray,
               n2: np.ndarray) -> np.ndarray:
    """
    Raw point pair features of many pairs at once, shape (n, 4).

    The displacement is ``d = p1 - p2``.
    """
    d = np.asarray(p1, dtype=np.float64) - np.asarray(p2, dtype=np.float64)
    return np.stack([np.linalg.norm(d, axis=-1), _angles(n1, d),
                     _angles(n2, d), _angles(n1, n2)], axis=-1)


def compute_ppf(p1: Sequence[float], n1: Sequence[float],
                p2: Sequence[float], n2: Sequence[float],
                quantization: PPFQuantization = DEFAULT_QUANTIZATION
                ) -> Tuple[PPFKey, PPF]:
    """
    Point pair feature ``(|d|, angle(n1, d), angle(n2, d), angle(n1, n2))``
    with ``d = p1 - p2``; angles lie in ``[0, pi]``.

    :returns: The quantized key and the raw feature
    """
    p1_, p2_ = np.asarray(p1, dtype=np.float64), np.asarray(p2,
                                                           dtype=np.float64)
    if np.linalg.norm(p1_ - p2_) < 1e-9:
        raise DegeneratePairError('Point pair features need two distinct '
                                  'points')

    raw = ppf_arrays(p1_[None], np.asarray(n1, dtype=np.float64)[None],
                     p2_[None], np.asarray(n2, dtype=np.float64)[None])
    key = quantization.quantize(raw)[0]
    return (PPFKey(*(int(k) for k in key)),
            PPF(*(float(x) for x in raw[0])))


class PPFTable:
    """
    All ordered pairs of a model sample set, grouped by quantized PPF.

    Pairs are stored sorted by their flat key code so a key lookup is a
    binary search. A dilated occupancy grid answers "is this feature (up to
    one bin in every component) present on the model" for many features at
    once.

    :param cloud: Model samples with normals
    :param quantization: Bin sizes
    """

    def __init__(self, cloud: PointCloud, quantization: PPFQuantization):
        count = len(cloud)
        if count < 2:
            raise EmptyModelError('A PPF table needs at least two points')

        first, second = np.nonzero(~np.eye(count, dtype=bool))
        raw = ppf_arrays(cloud.points[first], cloud.normals[first],
                         cloud.points[second], cloud.normals[second])
        bins = quantization.quantize(raw)

        shape = quantization.shape
        in_range = bins[:, 0] < shape[0]
        occupancy = np.zeros(shape, dtype=bool)
        occupancy[tuple(bins[in_range].T)] = True

        codes = np.ravel_multi_index(
            tuple(np.minimum(bins, np.array(shape) - 1).T), shape)
        codes[~in_range] = -1
        order = np.argsort(codes, kind='stable')

        self._quantization = quantization
        self._cloud = cloud
        self._codes = codes[order]
        self._pairs = np.stack([first, second], axis=1)[order]
        self._distances = raw[order, 0]
        self._occupancy = occupancy
        self._dilated = ndimage.binary_dilation(
            occupancy, structure=np.ones((3, 3, 3, 3), dtype=bool))

    def __repr__(self):
        return '<{} pairs={} keys={}>'.format(
            type(self).__name__, len(self._pairs),
            int(self._occupancy.sum()))

    @property
    def quantization(self) -> PPFQuantization:
        return self._quantization

    @property
    def cloud(self) -> PointCloud:
        return self._cloud

    def __len__(self) -> int:
        return len(self._pairs)

    def _code(self, key: Sequence[int]) -> int:
        shape = self._quantization.shape
        if any(k < 0 or k >= s for k, s in zip(key, shape)):
            return -2
        return int(np.ravel_multi_index(tuple(key), shape))

    def keys(self) -> List[PPFKey]:
        return [PPFKey(*(int(k) for k in key))
                for key in np.argwhere(self._occupancy)]

    def __contains__(self, key) -> bool:
        return self._code(key) >= 0 and bool(self._occupancy[tuple(key)])

    def lookup(self, key: Sequence[int]) -> List[Tuple[int, int]]:
        """
        The ordered sample index pairs stored under ``key``.
        """
        code = self._code(key)
        if code < 0:
            return []
        lo, hi = np.searchsorted(self._codes, [code, code + 1])
        return [(int(i), int(j)) for i, j in self._pairs[lo:hi]]

    def pairs_near(self, key: Sequence[int], distance: float,
                   distance_tolerance: float) -> np.ndarray:
        """
        Pairs whose key is within one bin of ``key`` in every component and
        whose exact distance is within ``distance_tolerance``.

        :returns: (k, 2) array of sample indices
        """
        shape = self._quantization.shape
        ranges = [range(max(0, k - 1), min(s, k + 2))
                  for k, s in zip(key, shape)]
        neighbours = np.array(np.meshgrid(*ranges, indexing='ij')
                              ).reshape(4, -1)
        if neighbours.size == 0:
            return np.zeros((0, 2), dtype=np.int64)
        codes = np.sort(np.ravel_multi_index(tuple(neighbours), shape))
        lo = np.searchsorted(self._codes, codes, side='left')
        hi = np.searchsorted(self._codes, codes, side='right')
        index = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)]
                               or [np.zeros(0, dtype=np.int64)])
        index = index[np.abs(self._distances[index] - distance)
                      <= distance_tolerance]
        return self._pairs[index]

    def contains_many(self, raw: np.ndarray) -> np.ndarray:
        """
        Whether each raw feature matches a model feature up to one bin.
        """
        bins = self._quantization.quantize(np.asarray(raw))
        shape = self._quantization.shape
        valid = bins[:, 0] < shape[0]
        result = np.zeros(len(bins), dtype=bool)
        result[valid] = self._dilated[tuple(bins[valid].T)]
        return result


def build_ppf_table(model: MeshModel, num_samples: int = 500,
                    quantization: Optional[PPFQuantization] = None,
                    seed: int = 0) -> PPFTable:
    """
    Precompute the point pair features of a model's surface samples.

    :param num_samples: Number of surface samples
    :param quantization: Bin sizes, ``d_l / 20`` and 12 degrees by default
    :param seed: Sampling seed
    """
    if quantization is None:
        quantization = PPFQuantization.for_model(model)
    return PPFTable(model.samples(num_samples, seed), quantization)
