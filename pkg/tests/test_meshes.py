import math

import numpy as np
import pytest

from tinypose.errors import DataError
from tinypose.geometry import RigidTransform, adi_distance
from tinypose.meshes import (MANIFEST_NAME, box_symmetry_group, load_model,
                             load_models, make_box, make_icosphere,
                             make_prism, read_ply, read_symmetry, save_model,
                             save_models, write_ply, write_symmetry)

SQUARE = """ply
format ascii 1.0
comment a unit square in the xy plane
element vertex 4
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
1 1 0
0 1 0
4 0 1 2 3
"""


def test_ply_round_trip(tmp_path, prism):
    path = tmp_path / 'prism.ply'
    write_ply(path, prism)
    model = read_ply(path, class_id=2)

    assert model.name == 'prism'
    assert model.class_id == 2
    assert np.array_equal(model.vertices, prism.vertices)
    assert np.array_equal(model.triangles, prism.triangles)
    assert np.allclose(model.vertex_normals, prism.vertex_normals)


def test_ply_polygon_fan_and_normals(tmp_path):
    path = tmp_path / 'square.ply'
    path.write_text(SQUARE)
    model = read_ply(path)

    assert model.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]
    assert np.allclose(model.vertex_normals, (0, 0, 1))


@pytest.mark.parametrize('text', [
    'obj\nend_header\n',
    'ply\nformat binary_little_endian 1.0\nend_header\n',
    'ply\nformat ascii 1.0\nelement face 0\n'
    'property list uchar int vertex_indices\nend_header\n',
    'ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\n'
    'property float y\nproperty float z\nend_header\n0 0 0\n',
    'ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\n'
    'end_header\n0\n',
])
def test_ply_rejects(tmp_path, text):
    path = tmp_path / 'bad.ply'
    path.write_text(text)
    with pytest.raises(DataError):
        read_ply(path)


def test_symmetry_file(tmp_path):
    group = [RigidTransform.identity(),
             RigidTransform.from_rotvec((0, 0, math.pi / 2))]
    path = tmp_path / 'model.ply.sym'
    write_symmetry(path, group)

    result = read_symmetry(path)
    assert len(result) == 2
    assert all(a.allclose(b) for a, b in zip(result, group))


def test_symmetry_file_rejects_short_rows(tmp_path):
    path = tmp_path / 'model.ply.sym'
    path.write_text('# comment\n\n0 0 0 1 0 0\n')
    with pytest.raises(DataError, match=':3:'):
        read_symmetry(path)


def test_save_and_load_model(tmp_path, cube):
    path = tmp_path / 'cube.ply'
    save_model(path, cube)
    assert (tmp_path / 'cube.ply.sym').exists()

    model = load_model(path, class_id=1)
    assert len(model.symmetry_group) == 24


def test_identity_only_has_no_sidecar(tmp_path):
    save_model(tmp_path / 'sphere.ply', make_icosphere(subdivisions=1))
    assert not (tmp_path / 'sphere.ply.sym').exists()
    assert len(load_model(tmp_path / 'sphere.ply').symmetry_group) == 1


def test_model_directory(tmp_path, cube, prism):
    save_models(tmp_path / 'models', [cube, prism])
    assert (tmp_path / 'models' / MANIFEST_NAME).exists()

    models = load_models(tmp_path / 'models')
    assert sorted(models) == [1, 2]
    assert models[2].name == 'hexagon'
    assert models[2].class_id == 2
    assert len(models[2].symmetry_group) == 12


@pytest.mark.parametrize('size, order', [
    ((0.05, 0.05, 0.05), 24),
    ((0.05, 0.05, 0.03), 8),
    ((0.06, 0.04, 0.03), 4),
])
def test_box_symmetry_group_order(size, order):
    assert len(box_symmetry_group(size)) == order


def test_symmetries_map_models_onto_themselves(box, prism):
    for model in (box, prism):
        identity = RigidTransform.identity()
        for g in model.symmetry_group:
            assert adi_distance(identity, g, model, points=model.vertices) \
                == pytest.approx(0.0, abs=1e-9)


def test_box(cube):
    assert cube.is_watertight
    assert cube.is_convex
    assert cube.volume == pytest.approx(0.05 ** 3)
    assert len(cube.triangles) == 12
    # Outward orientation: face normals point away from the center
    centers = cube.vertices[cube.triangles].mean(axis=1)
    assert np.all(np.einsum('ij,ij->i', cube.face_normals, centers) > 0)


def test_prism(prism):
    assert prism.class_id == 2
    assert prism.is_watertight
    assert prism.volume == pytest.approx(
        1.5 * math.sqrt(3) * 0.03 ** 2 * 0.04)
    assert prism.diameter == pytest.approx(math.hypot(0.06, 0.04))


def test_icosphere():
    sphere = make_icosphere(radius=0.03, subdivisions=2)
    assert sphere.is_watertight
    assert np.allclose(np.linalg.norm(sphere.vertices, axis=1), 0.03)
    assert sphere.diameter == pytest.approx(0.06, rel=1e-2)
    assert len(sphere.symmetry_group) == 1


def test_primitive_rejects():
    with pytest.raises(DataError):
        make_box((0.05, 0.0, 0.05))
    with pytest.raises(DataError):
        make_prism(sides=2)
