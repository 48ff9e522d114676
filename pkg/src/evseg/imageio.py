"""PGM and raw float export, depth map import."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import DegenerateError, DepthError


def to_uint8(image):
    """Min-max normalize to 0..255 (rounded); constant images are rejected."""
    a = np.asarray(image, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    if not hi > lo:
        raise DegenerateError("cannot normalize a constant image")
    return np.rint(255.0 * (a - lo) / (hi - lo)).astype(np.uint8)


def pgm_bytes(image):
    img = to_uint8(image)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def atomic_write(path, data):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_pgm(image, path):
    atomic_write(path, pgm_bytes(image))


def read_pgm(path):
    """Read a binary P5 image (8- or 16-bit, big-endian)."""
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise DepthError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1  # single whitespace after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos) if len(data) - pos >= w * h * dtype.itemsize else None
    if body is None:
        raise DepthError(f"{path}: truncated PGM body")
    return body.reshape(h, w)


def write_raw(image, path):
    """Flat little-endian float32 dump, row-major."""
    atomic_write(path, np.asarray(image, dtype="<f4").tobytes())


def read_depth(path, geometry):
    """Depth in meters: 16-bit PGM in millimeters, anything else flat float32 meters."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        depth = read_pgm(path).astype(np.float64) / 1000.0
    else:
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != geometry.n_pixels:
            raise DepthError(f"{path}: {raw.size} values, expected {geometry.n_pixels}")
        depth = raw.astype(np.float64).reshape(geometry.shape)
    if depth.shape != geometry.shape:
        raise DepthError(f"{path}: depth is {depth.shape}, sensor is {geometry.shape}")
    return depth
