"""
Raster file formats.

- 8-bit and 16-bit binary PGM (``P5``) for masks, label images and depth.
  16-bit samples are big-endian as the PGM format requires.
- Depth images are PGM rasters of integer units plus a JSON header sidecar
  (``<file>.json``) recording the depth scale in meters per unit.
- Probability maps are raw little-endian float32 rasters with a JSON header
  ``{"width", "height", "channels"}`` stored next to them.
"""

import os
import re
from typing import Dict, Tuple

import numpy as np

from .errors import DataError
from .storages import PathLike, read_json, write_json

__all__ = ('write_pgm', 'read_pgm', 'write_depth', 'read_depth',
           'write_float_raster', 'read_float_raster',
           'DEFAULT_DEPTH_SCALE')

#: Meters per stored depth unit (0.1 mm)
DEFAULT_DEPTH_SCALE = 1e-4

_PGM_HEADER = re.compile(rb'^P5\s+(\d+)\s+(\d+)\s+(\d+)\s')


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    """
    Write an 8-bit or 16-bit single channel image as binary PGM.

    :param path: Output path
    :param image: ``uint8`` or ``uint16`` array of shape (height, width)
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise DataError('PGM images must be two dimensional')

    if image.dtype == np.uint8:
        maxval, payload = 255, image.tobytes()
    elif image.dtype == np.uint16:
        maxval, payload = 65535, image.astype('>u2').tobytes()
    else:
        raise DataError(f'Unsupported PGM dtype {image.dtype}')

    height, width = image.shape
    with open(path, 'wb') as handle:
        handle.write(b'P5\n%d %d\n%d\n' % (width, height, maxval))
        handle.write(payload)


def read_pgm(path: PathLike) -> np.ndarray:
    """
    Read a binary PGM written by :func:`write_pgm`.
    """
    with open(path, 'rb') as handle:
        data = handle.read()

    match = _PGM_HEADER.match(data)
    if match is None:
        raise DataError(f'{os.fspath(path)} is not a binary PGM file')

    width, height, maxval = (int(g) for g in match.groups())
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype('>u2')
    expected = width * height * dtype.itemsize
    payload = data[match.end():match.end() + expected]
    if len(payload) != expected:
        raise DataError(f'{os.fspath(path)} is truncated')

    image = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return image.astype(np.uint8 if maxval < 256 else np.uint16)


def write_depth(path: PathLike, depth: np.ndarray,
                scale: float = DEFAULT_DEPTH_SCALE) -> None:
    """
    Write a metric depth image as 16-bit PGM plus a header sidecar.

    :param depth: Depth in meters, 0 meaning no return
    :param scale: Meters per stored unit
    """
    units = np.rint(np.asarray(depth, dtype=np.float64) / scale)
    if units.max(initial=0) > 65535:
        raise DataError('Depth exceeds the 16-bit range of the depth scale')

    write_pgm(path, units.astype(np.uint16))
    height, width = units.shape
    write_json(f'{os.fspath(path)}.json',
               {'width': width, 'height': height, 'depth_scale': scale})


def read_depth(path: PathLike) -> np.ndarray:
    """
    Read a depth image written by :func:`write_depth`, in meters.
    """
    header = read_json(f'{os.fspath(path)}.json')
    units = read_pgm(path)
    if units.shape != (header['height'], header['width']):
        raise DataError(f'{os.fspath(path)} does not match its header')
    return units.astype(np.float64) * float(header['depth_scale'])


def write_float_raster(path: PathLike, raster: np.ndarray) -> None:
    """
    Write a (height, width) or (height, width, channels) float raster.
    """
    raster = np.asarray(raster, dtype='<f4')
    if raster.ndim == 2:
        raster = raster[:, :, None]
    height, width, channels = raster.shape

    with open(path, 'wb') as handle:
        handle.write(raster.tobytes())
    write_json(f'{os.fspath(path)}.json',
               {'width': width, 'height': height, 'channels': channels})


def read_float_raster(path: PathLike) -> np.ndarray:
    """
    Read a raster written by :func:`write_float_raster` as float64.

    Single-channel rasters come back two dimensional.
    """
    header: Dict[str, int] = read_json(f'{os.fspath(path)}.json')
    shape: Tuple[int, int, int] = (header['height'], header['width'],
                                   header['channels'])
    data = np.fromfile(path, dtype='<f4')
    if data.size != shape[0] * shape[1] * shape[2]:
        raise DataError(f'{os.fspath(path)} does not match its header')

    raster = data.reshape(shape).astype(np.float64)
    return raster[:, :, 0] if shape[2] == 1 else raster
