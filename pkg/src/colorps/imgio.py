"""Image, normal-map, and mesh I/O.

The canonical interchange format for linear radiance is the portable float
map (PFM): header ``PF\\n{width} {height}\\n-1.0\\n`` followed by
little-endian float32 samples, rows stored bottom-up ("PF" for RGB, "Pf"
for single channel).  Float round-trips are bit-exact.  16-bit PNG covers
import/export of quantized data; PNG values are linearized by an optional
inverse-gamma step on load.

Normals are flipped from the internal convention (n.z < 0, toward the
camera) to the visualization convention (n.z >= 0) only here, by negating
the z component.
"""

from __future__ import annotations

import numpy as np

from . import geometry
from .errors import DataError, ParseError

PFM_LITTLE_ENDIAN_SCALE = -1.0


def save_pfm(path, values):
    """Write a float32 image: (H, W) -> 'Pf', (H, W, 3) -> 'PF'."""
    values = np.asarray(values, dtype=np.float32)
    if values.ndim == 2:
        magic = b"Pf"
    elif values.ndim == 3 and values.shape[2] == 3:
        magic = b"PF"
    else:
        raise DataError("PFM supports (H, W) or (H, W, 3) arrays")
    height, width = values.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n")
        fh.write(f"{width} {height}\n".encode("ascii"))
        fh.write(f"{PFM_LITTLE_ENDIAN_SCALE}\n".encode("ascii"))
        fh.write(np.flipud(values).astype("<f4").tobytes())


def _read_token(data, offset):
    """One whitespace-delimited ASCII token starting at `offset`."""
    while offset < len(data) and data[offset : offset + 1].isspace():
        offset += 1
    start = offset
    while offset < len(data) and not data[offset : offset + 1].isspace():
        offset += 1
    if start == offset:
        raise ParseError("unexpected end of PFM header", offset=start)
    return data[start:offset], offset


def load_pfm(path):
    """Read a PFM file; returns float32 (H, W) or (H, W, 3)."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic, offset = _read_token(data, 0)
    if magic not in (b"PF", b"Pf"):
        raise ParseError(f"not a PFM file (magic {magic!r})", offset=0)
    channels = 3 if magic == b"PF" else 1
    token, offset = _read_token(data, offset)
    try:
        width = int(token)
        token, offset = _read_token(data, offset)
        height = int(token)
    except ValueError:
        raise ParseError(f"bad PFM dimensions {token!r}", offset=offset) from None
    if width <= 0 or height <= 0 or width * height > 2**28:
        raise ParseError(f"unreasonable PFM dimensions {width}x{height}", offset=offset)
    token, offset = _read_token(data, offset)
    try:
        scale = float(token)
    except ValueError:
        raise ParseError(f"bad PFM scale {token!r}", offset=offset) from None
    offset += 1  # single whitespace byte after the scale line
    expected = width * height * channels * 4
    if len(data) - offset < expected:
        raise ParseError(
            f"PFM payload truncated (need {expected} bytes, found {len(data) - offset})",
            offset=offset,
        )
    dtype = "<f4" if scale < 0 else ">f4"
    flat = np.frombuffer(data, dtype=dtype, count=width * height * channels, offset=offset)
    shape = (height, width) if channels == 1 else (height, width, 3)
    values = flat.reshape(shape)
    if abs(scale) not in (0.0, 1.0):
        values = values * abs(scale)
    return np.flipud(values).astype(np.float32)


def save_png16(path, values):
    """Write (H, W) or (H, W, 3) values in [0, 1] as a 16-bit PNG."""
    import cv2

    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        raise DataError("PNG export requires finite values")
    quantized = np.round(np.clip(values, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if quantized.ndim == 3:
        quantized = quantized[:, :, ::-1]  # cv2 stores BGR
    if not cv2.imwrite(str(path), quantized):
        raise DataError(f"failed to write PNG '{path}'")


def load_png16(path, inverse_gamma=None):
    """Read a PNG as linear float32 in [0, 1].

    8-bit and 16-bit files normalize by their full scale (65535 -> 1.0).
    `inverse_gamma` (e.g. 2.2) decodes gamma-compressed files back into
    linear radiance.
    """
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ParseError(f"failed to read PNG '{path}'", offset=0)
    if raw.ndim == 3:
        raw = raw[:, :, :3][:, :, ::-1]  # BGR(A) -> RGB
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    values = (raw.astype(np.float64) / scale).astype(np.float32)
    if inverse_gamma:
        values = (values.astype(np.float64) ** float(inverse_gamma)).astype(np.float32)
    return values


# -- normal maps -----------------------------------------------------------

def normals_to_visualization(vectors):
    """Internal camera-facing normals -> visualization convention (n.z >= 0)."""
    out = np.array(vectors, dtype=np.float32, copy=True)
    out[..., 2] = -out[..., 2]
    return out


def visualization_to_normals(vectors):
    out = np.array(vectors, dtype=np.float32, copy=True)
    out[..., 2] = -out[..., 2]
    return out


def export_normal_map(normal_map, png_path=None, pfm_path=None):
    """Write a normal map as 16-bit PNG ((n+1)/2 encoded) and/or raw PFM.

    Both files use the visualization convention; invalid pixels are zeroed.
    """
    normal_map.check_unit()
    vis = normals_to_visualization(normal_map.vectors)
    vis[~normal_map.mask] = 0.0
    if png_path is not None:
        save_png16(png_path, (vis + 1.0) / 2.0)
    if pfm_path is not None:
        save_pfm(pfm_path, vis)


def load_normal_map_pfm(path, mask=None):
    """Read a PFM normal map (visualization convention) back to internal."""
    vis = load_pfm(path)
    if vis.ndim != 3:
        raise DataError("normal map PFM must have three channels")
    vectors = visualization_to_normals(vis)
    if mask is None:
        mask = np.linalg.norm(vectors, axis=-1) > 0.5
    return geometry.NormalMap(vectors, mask)


# -- meshes ------------------------------------------------------------------

def export_mesh(depth, cam, path, mask=None):
    """Back-project a depth map and write a Wavefront OBJ grid mesh.

    Every valid pixel becomes a vertex; each 2x2 block of valid pixels
    contributes two triangles.  Quads touching an invalid pixel are
    skipped.  Vertices are in camera-frame mm.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height, cam.width):
        raise DataError("depth map does not match the camera resolution")
    if mask is None:
        mask = np.isfinite(depth) & (depth > 0)
    mask = np.asarray(mask, dtype=bool)
    n_valid = int(mask.sum())
    if n_valid < 3:
        raise DataError("mesh export needs at least 3 valid pixels")

    u, v = cam.pixel_grid()
    x, y, z = geometry.back_project(
        cam, u[mask], v[mask], np.where(mask, depth, 1.0)[mask]
    )
    vertex_id = np.full(mask.shape, -1, dtype=np.int64)
    vertex_id[mask] = np.arange(n_valid)

    quad_ok = mask[:-1, :-1] & mask[:-1, 1:] & mask[1:, :-1] & mask[1:, 1:]
    r0, c0 = np.nonzero(quad_ok)
    a = vertex_id[r0, c0]
    b = vertex_id[r0, c0 + 1]
    c = vertex_id[r0 + 1, c0]
    d = vertex_id[r0 + 1, c0 + 1]

    with open(path, "w") as fh:
        fh.write(f"# grid mesh: {n_valid} vertices, {2 * len(r0)} faces\n")
        for i in range(n_valid):
            fh.write(f"v {x[i]:.8f} {y[i]:.8f} {z[i]:.8f}\n")
        for i in range(len(r0)):
            fh.write(f"f {a[i] + 1} {c[i] + 1} {d[i] + 1}\n")
            fh.write(f"f {a[i] + 1} {d[i] + 1} {b[i] + 1}\n")
    return n_valid, 2 * len(r0)


def load_mesh(path):
    """Read vertices and faces back from an OBJ file (triangles only)."""
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.asarray(vertices, dtype=np.float64), np.asarray(faces, dtype=np.int64)
