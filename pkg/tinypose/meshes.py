"""
Mesh files and primitive models.

Models are exchanged as ASCII PLY files with vertex positions, vertex normals
and faces. A model's symmetry group lives in an optional sidecar text file
``<model>.ply.sym`` with one transform per line::

    # qx qy qz qw tx ty tz
    0 0 0 1 0 0 0
    0 0 0.7071067811865476 0.7071067811865476 0 0 0

A directory of models carries a ``models.json`` manifest mapping class ids to
PLY files, see :func:`save_models` and :func:`load_models`.
"""

import itertools
import logging
import math
import os
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError
from .geometry import MeshModel, RigidTransform
from .storages import PathLike, read_json, write_json

__all__ = ('read_ply', 'write_ply', 'read_symmetry', 'write_symmetry',
           'load_model', 'save_model', 'load_models', 'save_models',
           'make_box', 'make_prism', 'make_icosphere', 'box_symmetry_group',
           'prism_symmetry_group', 'MANIFEST_NAME')

logger = logging.getLogger(__name__)

#: Name of the manifest in a model directory
MANIFEST_NAME = 'models.json'

_PLY_TYPES = {
    'char': np.int8, 'uchar': np.uint8, 'short': np.int16,
    'ushort': np.uint16, 'int': np.int32, 'uint': np.uint32,
    'float': np.float32, 'double': np.float64,
    'int8': np.int8, 'uint8': np.uint8, 'int16': np.int16,
    'uint16': np.uint16, 'int32': np.int32, 'uint32': np.uint32,
    'float32': np.float32, 'float64': np.float64,
}


def write_ply(path: PathLike, model: MeshModel) -> None:
    """
    Write a model as ASCII PLY with positions, normals and triangles.
    """
    lines = [
        'ply',
        'format ascii 1.0',
        f'comment tinypose model {model.name} class {model.class_id}',
        f'element vertex {len(model.vertices)}',
        'property float x', 'property float y', 'property float z',
        'property float nx', 'property float ny', 'property float nz',
        f'element face {len(model.triangles)}',
        'property list uchar int vertex_indices',
        'end_header',
    ]
    for point, normal in zip(model.vertices, model.vertex_normals):
        lines.append(' '.join(repr(float(v))
                              for v in itertools.chain(point, normal)))
    for a, b, c in model.triangles:
        lines.append(f'3 {a} {b} {c}')

    with open(path, 'w', encoding='ascii') as handle:
        handle.write('\n'.join(lines) + '\n')


def read_ply(path: PathLike, class_id: int = 1,
             name: Optional[str] = None,
             symmetry_group: Optional[Iterable[RigidTransform]] = None
             ) -> MeshModel:
    """
    Read an ASCII PLY mesh.

    Polygons with more than three corners are split into triangle fans.
    Vertex normals are computed when the file has none.

    :param class_id: Class id of the resulting model
    :param name: Model name, the file stem by default
    """
    with open(path, encoding='ascii') as handle:
        text = handle.read()

    header, _, body = text.partition('end_header')
    header_lines = [line.strip() for line in header.splitlines()]
    if not header_lines or header_lines[0] != 'ply':
        raise DataError(f'{os.fspath(path)} is not a PLY file')
    if 'format ascii 1.0' not in header_lines:
        raise DataError(f'{os.fspath(path)}: only ASCII PLY is supported')

    elements: List[List] = []
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == 'element':
            elements.append([parts[1], int(parts[2]), []])
        elif parts[0] == 'property' and elements:
            if parts[1] == 'list':
                elements[-1][2].append(('list', parts[-1]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise DataError(f'Unknown PLY type {parts[1]!r}')
                elements[-1][2].append((parts[1], parts[2]))

    tokens = body.split()
    position = 0
    vertices = normals = None
    triangles: List[Sequence[int]] = []

    for element_name, count, properties in elements:
        if element_name == 'vertex':
            names = [prop_name for _, prop_name in properties]
            width = len(names)
            try:
                values = np.array(tokens[position:position + count * width],
                                  dtype=np.float64).reshape(count, width)
            except ValueError as exc:
                raise DataError(f'{os.fspath(path)}: truncated vertex '
                                f'data') from exc
            position += count * width
            columns = {prop_name: values[:, k]
                       for k, prop_name in enumerate(names)}
            vertices = np.stack([columns['x'], columns['y'], columns['z']],
                                axis=1)
            if all(key in columns for key in ('nx', 'ny', 'nz')):
                normals = np.stack([columns['nx'], columns['ny'],
                                    columns['nz']], axis=1)
        elif element_name == 'face':
            for _ in range(count):
                size = int(tokens[position])
                corners = [int(t) for t in
                           tokens[position + 1:position + 1 + size]]
                position += 1 + size
                for k in range(1, size - 1):
                    triangles.append((corners[0], corners[k], corners[k + 1]))
        else:
            # Skip elements we do not understand
            position += count * len(properties)

    if vertices is None:
        raise DataError(f'{os.fspath(path)} has no vertex element')

    return MeshModel(vertices, np.array(triangles, dtype=np.int64)
                     .reshape(-1, 3), normals, class_id, symmetry_group,
                     name or Path(path).stem)


def write_symmetry(path: PathLike,
                   group: Iterable[RigidTransform]) -> None:
    lines = ['# qx qy qz qw tx ty tz']
    for transform in group:
        values = itertools.chain(transform.quaternion, transform.translation)
        lines.append(' '.join(repr(float(v)) for v in values))
    with open(path, 'w', encoding='ascii') as handle:
        handle.write('\n'.join(lines) + '\n')


def read_symmetry(path: PathLike) -> List[RigidTransform]:
    """
    Read a symmetry sidecar file, one ``qx qy qz qw tx ty tz`` row per
    transform.
    """
    group = []
    with open(path, encoding='ascii') as handle:
        for number, line in enumerate(handle, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            values = line.split()
            if len(values) != 7:
                raise DataError(f'{os.fspath(path)}:{number}: expected 7 '
                                f'values, got {len(values)}')
            numbers = [float(v) for v in values]
            group.append(RigidTransform(numbers[:4], numbers[4:]))
    return group


def _sidecar(path: PathLike) -> str:
    return f'{os.fspath(path)}.sym'


def load_model(path: PathLike, class_id: int = 1,
               name: Optional[str] = None) -> MeshModel:
    """
    Read a PLY model together with its symmetry sidecar, if there is one.
    """
    sidecar = _sidecar(path)
    group = read_symmetry(sidecar) if os.path.exists(sidecar) else None
    model = read_ply(path, class_id, name, group)
    logger.debug('Loaded %r (%d symmetries)', model,
                 len(model.symmetry_group))
    return model


def save_model(path: PathLike, model: MeshModel) -> None:
    write_ply(path, model)
    if len(model.symmetry_group) > 1:
        write_symmetry(_sidecar(path), model.symmetry_group)


def save_models(directory: PathLike, models: Iterable[MeshModel]) -> None:
    """
    Write models and a ``models.json`` manifest into ``directory``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for model in models:
        filename = f'class{model.class_id}.ply'
        save_model(directory / filename, model)
        manifest[str(model.class_id)] = {'file': filename,
                                         'name': model.name}
    write_json(directory / MANIFEST_NAME, {'models': manifest})


def load_models(directory: PathLike) -> Dict[int, MeshModel]:
    """
    Read all models listed in a directory's manifest, keyed by class id.
    """
    directory = Path(directory)
    manifest = read_json(directory / MANIFEST_NAME)
    models = {}
    for class_id, entry in manifest['models'].items():
        models[int(class_id)] = load_model(directory / entry['file'],
                                           int(class_id), entry.get('name'))
    return models


def _orient_outward(vertices: np.ndarray,
                    triangles: np.ndarray) -> np.ndarray:
    # Only valid for shapes star-shaped around their centroid
    center = vertices.mean(axis=0)
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    normal = np.cross(b - a, c - a)
    inward = np.einsum('ij,ij->i', normal, (a + b + c) / 3 - center) < 0
    triangles = triangles.copy()
    triangles[inward] = triangles[inward][:, [0, 2, 1]]
    return triangles


def box_symmetry_group(size: Sequence[float]) -> List[RigidTransform]:
    """
    The rotations mapping an axis-aligned box centered at the origin onto
    itself: 24 for a cube, 8 with two equal sides, 4 otherwise.
    """
    size_ = np.asarray(size, dtype=np.float64)
    group = []
    for permutation in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            matrix = np.zeros((3, 3))
            for row, (column, sign) in enumerate(zip(permutation, signs)):
                matrix[row, column] = sign
            if np.linalg.det(matrix) < 0:
                continue
            if np.allclose(np.abs(matrix) @ size_, size_):
                group.append(RigidTransform.from_matrix(matrix))
    return group


def make_box(size: Sequence[float] = (0.05, 0.05, 0.05), class_id: int = 1,
             name: Optional[str] = None) -> MeshModel:
    """
    An axis-aligned box centered at the origin with its exact symmetry group.

    :param size: Edge lengths along x, y and z in meters
    """
    half = np.asarray(size, dtype=np.float64) / 2.0
    if np.any(half <= 0):
        raise DataError('Box sizes must be positive')

    corners = list(itertools.product((-1.0, 1.0), repeat=3))
    vertices = np.array(corners) * half
    index = {corner: k for k, corner in enumerate(corners)}

    triangles = []
    for axis in range(3):
        b, c = [k for k in range(3) if k != axis]
        for sign in (-1.0, 1.0):
            quad = []
            for sb, sc in ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0),
                           (-1.0, 1.0)):
                corner = [0.0, 0.0, 0.0]
                corner[axis], corner[b], corner[c] = sign, sb, sc
                quad.append(index[tuple(corner)])
            triangles.append((quad[0], quad[1], quad[2]))
            triangles.append((quad[0], quad[2], quad[3]))

    triangles_ = _orient_outward(vertices, np.array(triangles))
    return MeshModel(vertices, triangles_, class_id=class_id,
                     symmetry_group=box_symmetry_group(size),
                     name=name or 'box')


def prism_symmetry_group(sides: int) -> List[RigidTransform]:
    """
    The dihedral group of a regular prism centered at the origin whose axis
    is z: ``sides`` turns about z and ``sides`` half turns about in-plane
    axes.
    """
    group = []
    for k in range(sides):
        angle = 2.0 * math.pi * k / sides
        group.append(RigidTransform.from_rotvec((0.0, 0.0, angle)))
    for k in range(sides):
        angle = math.pi * k / sides
        axis = (math.cos(angle), math.sin(angle), 0.0)
        group.append(RigidTransform.from_rotvec(np.multiply(axis, math.pi)))
    return group


def make_prism(sides: int = 6, radius: float = 0.03, height: float = 0.04,
               class_id: int = 1, name: Optional[str] = None) -> MeshModel:
    """
    A regular ``sides``-gon prism (closed with cap fans) along z, centered at
    the origin.

    :param radius: Circumradius of the polygon in meters
    """
    if sides < 3 or radius <= 0 or height <= 0:
        raise DataError('A prism needs >= 3 sides and positive dimensions')

    angles = 2.0 * math.pi * np.arange(sides) / sides
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles),
                     np.zeros(sides)], axis=1)
    bottom = ring - (0.0, 0.0, height / 2.0)
    top = ring + (0.0, 0.0, height / 2.0)
    vertices = np.concatenate([bottom, top, [(0.0, 0.0, -height / 2.0),
                                             (0.0, 0.0, height / 2.0)]])
    low_center, high_center = 2 * sides, 2 * sides + 1

    triangles = []
    for k in range(sides):
        n = (k + 1) % sides
        triangles.append((k, n, sides + n))
        triangles.append((k, sides + n, sides + k))
        triangles.append((low_center, n, k))
        triangles.append((high_center, sides + k, sides + n))

    triangles_ = _orient_outward(vertices, np.array(triangles))
    return MeshModel(vertices, triangles_, class_id=class_id,
                     symmetry_group=prism_symmetry_group(sides),
                     name=name or f'prism{sides}')


def make_icosphere(radius: float = 0.03, subdivisions: int = 2,
                   class_id: int = 1, name: Optional[str] = None
                   ) -> MeshModel:
    """
    A sphere approximated by a subdivided icosahedron.

    Only the identity is recorded as a symmetry; the rotation group of a
    sphere is continuous.
    """
    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices: List = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
                      (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
                      (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]

    points = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v)
              for v in vertices]
    for _ in range(subdivisions):
        midpoints: Dict[Tuple[int, int], int] = {}
        refined = []

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                middle = points[i] + points[j]
                points.append(middle / np.linalg.norm(middle))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined

    unit = np.array(points)
    triangles = _orient_outward(unit, np.array(faces))
    return MeshModel(unit * radius, triangles, unit, class_id,
                     name=name or 'sphere')
