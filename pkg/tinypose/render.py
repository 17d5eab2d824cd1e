"""
Software depth rendering.

The camera looks along +z; pixel ``(row, col)`` is centered on image
coordinates ``(u, v) = (col, row)``. Triangles are rasterized one after the
other into a z-buffer with perspective-correct depth (``1/z`` is interpolated
linearly in image space); a pixel keeps the first triangle reaching the
smallest depth, so renders are deterministic.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .config import RenderSettings
from .errors import DataError
from .geometry import MeshModel, PointCloud, RigidTransform

__all__ = ('CameraIntrinsics', 'RenderResult', 'SceneRender', 'render_depth',
           'render_scene_depth', 'normals_from_depth', 'backproject',
           'project', 'mask_border', 'discontinuity_mask', 'check_depth')

logger = logging.getLogger(__name__)

_EIGHT = np.ones((3, 3), dtype=bool)
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0),
            (1, 1)]


@dataclass(frozen=True)
class CameraIntrinsics:
    """
    Pinhole camera.

    :param fx: Focal length along u, pixels
    :param fy: Focal length along v, pixels
    :param cx: Principal point column
    :param cy: Principal point row
    :param width: Image width
    :param height: Image height
    """

    fx: float = 280.0
    fy: float = 280.0
    cx: float = 160.0
    cy: float = 120.0
    width: int = 320
    height: int = 240

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DataError('Focal lengths must be positive')
        if self.width <= 0 or self.height <= 0:
            raise DataError('Image size must be positive')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DataError('The principal point must lie inside the image')

    @classmethod
    def from_settings(cls, settings: RenderSettings) -> 'CameraIntrinsics':
        return cls(settings.fx, settings.fy, settings.cx, settings.cy,
                   settings.width, settings.height)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> 'CameraIntrinsics':
        return cls(float(data['fx']), float(data['fy']), float(data['cx']),
                   float(data['cy']), int(data['width']),
                   int(data['height']))

    def to_dict(self) -> Dict[str, float]:
        return {'fx': self.fx, 'fy': self.fy, 'cx': self.cx, 'cy': self.cy,
                'width': self.width, 'height': self.height}

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))


@dataclass(frozen=True)
class RenderResult:
    """
    A single model rendered at a pose.

    ``normals`` holds the camera-frame normal of the front-most triangle on
    ``visible_mask`` and zeros elsewhere.
    """

    depth: np.ndarray
    visible_mask: np.ndarray
    boundary_mask: np.ndarray
    normals: np.ndarray

    @property
    def is_empty(self) -> bool:
        return not self.visible_mask.any()


@dataclass(frozen=True)
class SceneRender:
    """
    All instances of a scene rendered into one z-buffer.

    Instance ids count placements from 1 in placement order; 0 is background.
    """

    depth: np.ndarray
    instance_ids: np.ndarray
    class_ids: np.ndarray
    boundary_mask: np.ndarray


def check_depth(depth: np.ndarray) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise DataError('Depth images must be two dimensional')
    if not np.all(np.isfinite(depth)) or depth.min(initial=0.0) < 0:
        raise DataError('Depth values must be finite and non-negative')
    return depth


def project(points: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """
    Project camera-frame points to image coordinates, shape (n, 2) as
    ``(u, v)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    z = points[:, 2]
    return np.stack([cam.fx * points[:, 0] / z + cam.cx,
                     cam.fy * points[:, 1] / z + cam.cy], axis=1)


def _rasterize(vertices: np.ndarray, triangles: np.ndarray,
               cam: CameraIntrinsics, near: float
               ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Z-buffer camera-frame triangles.

    :returns: Depth (``inf`` where empty) and the winning triangle index
              (-1 where empty)
    """
    zbuffer = np.full(cam.shape, np.inf)
    faces = np.full(cam.shape, -1, dtype=np.int64)
    if len(triangles) == 0:
        return zbuffer, faces

    z = vertices[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        uv = np.stack([cam.fx * vertices[:, 0] / z + cam.cx,
                       cam.fy * vertices[:, 1] / z + cam.cy], axis=1)

    for index, (a, b, c) in enumerate(triangles):
        za, zb, zc = z[a], z[b], z[c]
        # Clipping is not supported: a corner behind the near plane drops
        # the whole triangle
        if min(za, zb, zc) <= near:
            continue

        (ua, va), (ub, vb), (uc, vc) = uv[a], uv[b], uv[c]
        area = (ub - ua) * (vc - va) - (uc - ua) * (vb - va)
        if abs(area) < 1e-12:
            continue

        col_lo = max(int(np.ceil(min(ua, ub, uc))), 0)
        col_hi = min(int(np.floor(max(ua, ub, uc))), cam.width - 1)
        row_lo = max(int(np.ceil(min(va, vb, vc))), 0)
        row_hi = min(int(np.floor(max(va, vb, vc))), cam.height - 1)
        if col_lo > col_hi or row_lo > row_hi:
            continue

        cols = np.arange(col_lo, col_hi + 1, dtype=np.float64)
        rows = np.arange(row_lo, row_hi + 1, dtype=np.float64)
        u, v = np.meshgrid(cols, rows)

        w_a = ((ub - u) * (vc - v) - (uc - u) * (vb - v)) / area
        w_b = ((uc - u) * (va - v) - (ua - u) * (vc - v)) / area
        w_c = 1.0 - w_a - w_b
        inside = (w_a >= 0) & (w_b >= 0) & (w_c >= 0)
        if not inside.any():
            continue

        depth = 1.0 / (w_a / za + w_b / zb + w_c / zc)
        window = (slice(row_lo, row_hi + 1), slice(col_lo, col_hi + 1))
        closer = inside & (depth < zbuffer[window])
        zbuffer[window] = np.where(closer, depth, zbuffer[window])
        faces[window] = np.where(closer, index, faces[window])

    return zbuffer, faces


def mask_border(mask: np.ndarray) -> np.ndarray:
    """
    Pixels of ``mask`` with at least one 8-neighbour outside of it; the
    image frame counts as outside.
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_EIGHT,
                                          border_value=0)


def _neighbour(array: np.ndarray, dr: int, dc: int, fill) -> np.ndarray:
    shifted = np.full_like(array, fill)
    height, width = array.shape
    dst_r = slice(max(0, -dr), height - max(0, dr))
    dst_c = slice(max(0, -dc), width - max(0, dc))
    src_r = slice(max(0, dr), height - max(0, -dr))
    src_c = slice(max(0, dc), width - max(0, -dc))
    shifted[dst_r, dst_c] = array[src_r, src_c]
    return shifted


def discontinuity_mask(depth: np.ndarray, threshold,
                       labels: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Pixels whose depth differs by more than ``threshold`` from a non-empty
    8-neighbour (self-occlusion contours).

    :param threshold: A scalar, or a per-pixel array of thresholds
    :param labels: When given, only neighbours with the same label count
    """
    valid = depth > 0
    threshold = np.broadcast_to(np.asarray(threshold, dtype=np.float64),
                                depth.shape)
    result = np.zeros(depth.shape, dtype=bool)
    for dr, dc in _OFFSETS:
        other = _neighbour(depth, dr, dc, 0.0)
        pair = valid & (other > 0)
        if labels is not None:
            pair &= _neighbour(labels, dr, dc, -1) == labels
        result |= pair & (np.abs(depth - other) > threshold)
    return result


def render_depth(model: MeshModel, pose: RigidTransform,
                 cam: CameraIntrinsics, near: float = 0.01,
                 self_occlusion: bool = True,
                 discontinuity_fraction: float = 0.1) -> RenderResult:
    """
    Render one model at ``pose``.

    The boundary holds visible pixels next to a non-visible pixel and, with
    ``self_occlusion``, visible pixels with a depth jump larger than
    ``discontinuity_fraction`` times the model diameter to a visible
    neighbour.
    """
    vertices = pose.apply(model.vertices)
    zbuffer, faces = _rasterize(vertices, model.triangles, cam, near)

    visible = faces >= 0
    depth = np.where(visible, zbuffer, 0.0)
    boundary = mask_border(visible)
    if self_occlusion and visible.any():
        boundary |= discontinuity_mask(
            depth, discontinuity_fraction * model.diameter)

    normals = np.zeros(cam.shape + (3,))
    if visible.any():
        face_normals = pose.apply_vectors(model.face_normals)
        normals[visible] = face_normals[faces[visible]]
        rows, cols = np.nonzero(visible)
        rays = np.stack([(cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy,
                         np.ones(len(rows))], axis=1)
        # Back faces of open meshes are shown with flipped normals
        facing_away = np.einsum('ij,ij->i', normals[visible], rays) > 0
        flipped = normals[visible]
        flipped[facing_away] *= -1.0
        normals[visible] = flipped

    return RenderResult(depth, visible, boundary & visible, normals)


def render_scene_depth(placed: Sequence[Tuple[MeshModel, RigidTransform]],
                       cam: CameraIntrinsics, near: float = 0.01,
                       self_occlusion: bool = True,
                       discontinuity_fraction: float = 0.1) -> SceneRender:
    """
    Render several placed models into one z-buffer.

    The boundary mask holds foreground pixels whose instance id differs from
    an 8-neighbour (the background and the image frame count as id 0). With
    ``self_occlusion``, depth jumps inside one instance larger than
    ``discontinuity_fraction`` of its diameter are added, matching the
    contours :func:`render_depth` reports.
    """
    zbuffer = np.full(cam.shape, np.inf)
    instance_ids = np.zeros(cam.shape, dtype=np.int32)
    class_ids = np.zeros(cam.shape, dtype=np.int32)
    thresholds = np.zeros(cam.shape)

    for number, (model, pose) in enumerate(placed, start=1):
        depth, faces = _rasterize(pose.apply(model.vertices),
                                  model.triangles, cam, near)
        closer = (faces >= 0) & (depth < zbuffer)
        zbuffer[closer] = depth[closer]
        instance_ids[closer] = number
        class_ids[closer] = model.class_id
        thresholds[closer] = discontinuity_fraction * model.diameter

    foreground = instance_ids > 0
    depth = np.where(foreground, zbuffer, 0.0)

    padded = np.pad(instance_ids, 1, constant_values=0)
    boundary = np.zeros(cam.shape, dtype=bool)
    height, width = cam.shape
    for dr, dc in _OFFSETS:
        other = padded[1 + dr:1 + dr + height, 1 + dc:1 + dc + width]
        boundary |= other != instance_ids
    boundary &= foreground

    if self_occlusion and foreground.any():
        boundary |= discontinuity_mask(depth, thresholds,
                                       labels=instance_ids)

    return SceneRender(depth, instance_ids, class_ids, boundary)


def _pixel_points(depth: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    rows, cols = np.indices(depth.shape, dtype=np.float64)
    return np.stack([(cols - cam.cx) * depth / cam.fx,
                     (rows - cam.cy) * depth / cam.fy, depth], axis=-1)


def normals_from_depth(depth: np.ndarray, cam: CameraIntrinsics
                       ) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel normals from central differences of the backprojected depth.

    Normals point toward the camera (``n_z < 0``). A normal is absent at
    pixels without depth, at pixels whose four direct neighbours are not all
    valid and along the image frame.

    :returns: ``(normals, valid)``; absent normals are zero
    """
    depth = check_depth(depth)
    points = _pixel_points(depth, cam)
    valid = depth > 0

    defined = np.zeros(depth.shape, dtype=bool)
    defined[1:-1, 1:-1] = (valid[1:-1, 1:-1] & valid[1:-1, 2:]
                           & valid[1:-1, :-2] & valid[2:, 1:-1]
                           & valid[:-2, 1:-1])

    du = np.zeros_like(points)
    dv = np.zeros_like(points)
    du[:, 1:-1] = points[:, 2:] - points[:, :-2]
    dv[1:-1, :] = points[2:, :] - points[:-2, :]
    normals = np.cross(du, dv)
    length = np.linalg.norm(normals, axis=-1)
    defined &= length > 0

    normals[defined] /= length[defined][:, None]
    normals[~defined] = 0.0
    normals[normals[..., 2] > 0] *= -1.0
    return normals, defined


def backproject(depth: np.ndarray, cam: CameraIntrinsics,
                mask: Optional[np.ndarray] = None,
                normals: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                require_normals: bool = False) -> PointCloud:
    """
    Lift pixels with depth (and inside ``mask``) to a camera-frame cloud.

    Points keep their pixel origin. Pixels without an estimated normal get
    the direction back to the camera, or are dropped with
    ``require_normals``.

    :param normals: Output of :func:`normals_from_depth`, computed when not
                    given
    """
    depth = check_depth(depth)
    selected = depth > 0
    if mask is not None:
        selected &= np.asarray(mask, dtype=bool)
    if normals is None:
        normals = normals_from_depth(depth, cam)
    normal_map, defined = normals
    if require_normals:
        selected &= defined

    rows, cols = np.nonzero(selected)
    z = depth[rows, cols]
    points = np.stack([(cols - cam.cx) * z / cam.fx,
                       (rows - cam.cy) * z / cam.fy, z], axis=1)

    point_normals = normal_map[rows, cols].copy()
    fallback = ~defined[rows, cols]
    if fallback.any():
        towards = -points[fallback]
        point_normals[fallback] = towards / np.linalg.norm(
            towards, axis=1, keepdims=True)

    return PointCloud(points, point_normals, np.stack([rows, cols], axis=1),
                      cam.shape)
