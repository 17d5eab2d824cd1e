import numpy as np
import pytest
from scipy import ndimage

from tinypose.errors import DataError
from tinypose.geometry import MeshModel, RigidTransform
from tinypose.meshes import make_icosphere
from tinypose.render import (CameraIntrinsics, backproject,
                             normals_from_depth, project, render_depth,
                             render_scene_depth)

SQUARE = MeshModel([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.5, 0.5, 0.0],
                    [-0.5, 0.5, 0.0]], [[0, 1, 2], [0, 2, 3]])


def border_by_scan(mask):
    """
    Pixels of ``mask`` with an 8-neighbour outside of it, by explicit
    neighbour scan.
    """
    padded = np.pad(mask, 1, constant_values=False)
    height, width = mask.shape
    outside = np.zeros(mask.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            outside |= ~padded[1 + dr:1 + dr + height, 1 + dc:1 + dc + width]
    return mask & outside


def test_camera_rejects():
    with pytest.raises(DataError):
        CameraIntrinsics(fx=0.0)
    with pytest.raises(DataError):
        CameraIntrinsics(cx=320.0)
    with pytest.raises(DataError):
        CameraIntrinsics(width=0)


def test_camera_dict(camera):
    assert CameraIntrinsics.from_dict(camera.to_dict()) == camera
    assert camera.shape == (240, 320)
    assert camera.diagonal == pytest.approx(400.0)


def test_fronto_parallel_square(camera):
    result = render_depth(SQUARE, RigidTransform.from_translation(0, 0, 2),
                          camera)

    assert result.visible_mask.sum() > 0
    assert np.allclose(result.depth[result.visible_mask], 2.0, atol=1e-6)
    assert np.array_equal(result.depth > 0, result.visible_mask)
    assert np.allclose(result.normals[result.visible_mask], (0, 0, -1))
    # A 1 m square at 2 m covers about 140 x 140 pixels
    rows, cols = np.nonzero(result.visible_mask)
    assert 138 <= cols.max() - cols.min() + 1 <= 142
    assert 138 <= rows.max() - rows.min() + 1 <= 142


def test_model_behind_camera(camera, cube):
    result = render_depth(cube, RigidTransform.from_translation(0, 0, -2),
                          camera)
    assert result.is_empty
    assert not result.boundary_mask.any()
    assert not result.depth.any()


def test_sphere_boundary_is_mask_border(camera, flat_render):
    sphere = make_icosphere(radius=0.03, subdivisions=2)
    result = render_depth(sphere, RigidTransform.from_translation(0, 0, 0.5),
                          camera, self_occlusion=flat_render.self_occlusion)

    assert not result.is_empty
    assert np.array_equal(result.boundary_mask,
                          border_by_scan(result.visible_mask))


def test_render_result_invariants(camera, box):
    pose = RigidTransform.from_rotvec((0.4, -0.3, 0.2), (0.01, 0.0, 0.45))
    result = render_depth(box, pose, camera)
    visible = result.visible_mask

    assert not np.any(result.boundary_mask & ~visible)
    assert np.array_equal(result.depth > 0, visible)
    assert np.allclose(np.linalg.norm(result.normals[visible], axis=1), 1.0)
    assert not result.normals[~visible].any()
    # Self-occlusion contours only add to the silhouette
    assert np.all(result.boundary_mask >= border_by_scan(visible))

    _, count = ndimage.label(visible, structure=np.ones((3, 3)))
    assert count == 1


def test_render_is_deterministic(camera, prism):
    pose = RigidTransform.from_rotvec((1.0, 0.5, 0.0), (0.0, 0.02, 0.5))
    first = render_depth(prism, pose, camera)
    second = render_depth(prism, pose, camera)
    assert np.array_equal(first.depth, second.depth)
    assert np.array_equal(first.boundary_mask, second.boundary_mask)
    assert np.array_equal(first.normals, second.normals)


def test_empty_scene(camera):
    render = render_scene_depth([], camera)
    assert not render.depth.any()
    assert not render.instance_ids.any()
    assert not render.boundary_mask.any()


def test_separate_cubes(camera, cube):
    placed = [(cube, RigidTransform.from_translation(-0.1, 0, 0.5)),
              (cube, RigidTransform.from_translation(0.1, 0, 0.5))]
    render = render_scene_depth(placed, camera, self_occlusion=False)

    assert set(np.unique(render.instance_ids)) == {0, 1, 2}
    assert np.array_equal(render.instance_ids > 0, render.depth > 0)
    assert np.all(render.class_ids[render.instance_ids > 0] == 1)
    for number in (1, 2):
        border = border_by_scan(render.instance_ids == number)
        assert np.array_equal(render.boundary_mask & (
            render.instance_ids == number), border)


def test_abutting_cubes_have_a_seam(camera, cube):
    placed = [(cube, RigidTransform.from_translation(-0.025, 0, 0.5)),
              (cube, RigidTransform.from_translation(0.025, 0, 0.5))]
    render = render_scene_depth(placed, camera, self_occlusion=False)
    ids = render.instance_ids

    seam = (ids[:, :-1] == 1) & (ids[:, 1:] == 2)
    assert seam.any()
    rows, cols = np.nonzero(seam)
    assert np.all(render.boundary_mask[rows, cols])
    assert np.all(render.boundary_mask[rows, cols + 1])
    # No depth jump across the seam
    assert np.allclose(render.depth[rows, cols], render.depth[rows, cols + 1],
                       atol=1e-6)

    expected = np.zeros(ids.shape, dtype=bool)
    for number in (1, 2):
        expected |= border_by_scan(ids == number)
    assert np.array_equal(render.boundary_mask, expected)


def test_scene_depth_is_composite(camera, cube, prism):
    placed = [(cube, RigidTransform.from_rotvec((0.3, 0.2, 0.1),
                                                (0.0, 0.0, 0.5))),
              (prism, RigidTransform.from_rotvec((1.2, 0.0, 0.4),
                                                 (0.02, 0.01, 0.48)))]
    render = render_scene_depth(placed, camera)

    composite = np.full(camera.shape, np.inf)
    for model, pose in placed:
        depth = render_depth(model, pose, camera).depth
        composite = np.minimum(composite, np.where(depth > 0, depth, np.inf))
    composite[np.isinf(composite)] = 0.0
    assert np.array_equal(render.depth, composite)


def test_normals_of_constant_plane(camera):
    depth = np.full(camera.shape, 0.5)
    normals, valid = normals_from_depth(depth, camera)

    assert valid[1:-1, 1:-1].all()
    assert not valid[0].any() and not valid[:, -1].any()
    assert np.allclose(normals[valid], (0, 0, -1))
    assert not normals[~valid].any()


def test_normals_of_tilted_plane(camera):
    # The plane z = 0.5 + y, tilted 45 degrees about x
    rows = np.arange(camera.height, dtype=np.float64)[:, None]
    v = (rows - camera.cy) / camera.fy
    depth = np.broadcast_to(0.5 / (1.0 - v), camera.shape).copy()
    normals, valid = normals_from_depth(depth, camera)

    expected = np.array([0.0, 1.0, -1.0]) / np.sqrt(2.0)
    assert np.allclose(normals[valid], expected, atol=1e-9)


def test_normals_next_to_holes(camera):
    depth = np.full(camera.shape, 0.5)
    depth[50, 50] = 0.0
    _, valid = normals_from_depth(depth, camera)

    for pixel in [(50, 50), (49, 50), (51, 50), (50, 49), (50, 51)]:
        assert not valid[pixel]
    assert valid[49, 49]


def test_backproject_principal_ray(camera):
    depth = np.zeros(camera.shape)
    depth[120, 160] = 0.7
    cloud = backproject(depth, camera)

    assert len(cloud) == 1
    assert np.allclose(cloud.points[0], (0, 0, 0.7))
    assert cloud.pixels.tolist() == [[120, 160]]
    # No normal can be estimated: the fallback points at the camera
    assert np.allclose(cloud.normals[0], (0, 0, -1))


def test_backproject_formula(camera):
    rng = np.random.default_rng(0)
    depth = np.where(rng.random(camera.shape) < 0.002,
                     rng.uniform(0.3, 1.0, camera.shape), 0.0)
    cloud = backproject(depth, camera)

    rows, cols = cloud.pixels.T
    z = depth[rows, cols]
    expected = np.stack([(cols - camera.cx) * z / camera.fx,
                         (rows - camera.cy) * z / camera.fy, z], axis=1)
    assert len(cloud) == np.count_nonzero(depth)
    assert np.allclose(cloud.points, expected)
    assert np.allclose(project(cloud.points, camera), np.stack(
        [cols, rows], axis=1))


def test_backproject_mask_and_required_normals(camera):
    depth = np.full(camera.shape, 0.5)
    mask = np.zeros(camera.shape, dtype=bool)
    mask[0:3, 10:13] = True

    assert len(backproject(depth, camera, mask)) == 9
    # Row 0 lies on the image frame where no normal is defined
    assert len(backproject(depth, camera, mask, require_normals=True)) == 6


def test_backproject_rejects_bad_depth(camera):
    with pytest.raises(DataError):
        backproject(np.full(camera.shape, -1.0), camera)
    with pytest.raises(DataError):
        backproject(np.zeros((2, 2, 2)), camera)
