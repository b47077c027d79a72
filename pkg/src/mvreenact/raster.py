"""Painter's-algorithm triangle rasterizer with flat per-face shading.

Orthographic camera looking down -z, fixed directional light, no
anti-aliasing so silhouette masks are exact.  Besides the RGB image the
rasterizer returns the coverage mask and a face-id buffer (which logical
face won each pixel), used by tests and texture debugging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BACKGROUND = np.array([0.92, 0.92, 0.94])
LIGHT_DIR = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])
AMBIENT = 0.45
DIFFUSE = 0.55
FOCAL_FRAC = 0.40  # pixels per world unit = FOCAL_FRAC * min(H, W)


@dataclass(frozen=True)
class Pose:
    """Object pose: rotation angles in radians, image-plane shift in pixels."""
    azimuth: float
    elevation: float = 0.0
    roll: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0

    def to_dict(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation, "roll": self.roll,
                "tx": self.tx, "ty": self.ty, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(**d)


_ANGLE_STEP = 2.0 * np.pi / (1 << 21)


def _snap(angle: float) -> float:
    """Wrap into [0, 2pi) and snap to a ~3e-6 rad grid.

    The grid makes angle periodicity exact: phi and phi + 2pi land in the
    same bucket, so renders of the two poses are bitwise identical.
    """
    a = float(angle) % (2.0 * np.pi)
    q = int(round(a / _ANGLE_STEP)) % (1 << 21)
    return q * _ANGLE_STEP


def rotation_matrix(azimuth: float, elevation: float, roll: float) -> np.ndarray:
    azimuth, elevation, roll = _snap(azimuth), _snap(elevation), _snap(roll)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    cr, sr = np.cos(roll), np.sin(roll)
    ry = np.array([[ca, 0, sa], [0, 1, 0], [-sa, 0, ca]])
    rx = np.array([[1, 0, 0], [0, ce, -se], [0, se, ce]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ rx @ ry


def _pattern_color(pattern: int, u: np.ndarray, v: np.ndarray,
                   c0: np.ndarray, c1: np.ndarray) -> np.ndarray:
    """Evaluate a procedural two-color pattern at face-local (u, v)."""
    if pattern == 0:
        pick = np.zeros_like(u, dtype=bool)
    elif pattern == 1:
        pick = (np.floor(u / 0.18).astype(int) % 2) == 1
    elif pattern == 2:
        pick = ((np.floor(u / 0.20) + np.floor(v / 0.20)).astype(int) % 2) == 1
    elif pattern == 3:
        du = np.mod(u, 0.25) - 0.125
        dv = np.mod(v, 0.25) - 0.125
        pick = du * du + dv * dv < 0.07 ** 2
    else:
        pick = (np.floor((u + v) / 0.25).astype(int) % 2) == 1
    out = np.where(pick[:, None], c1[None, :], c0[None, :])
    return out


def render_mesh(vertices: np.ndarray, triangles: np.ndarray, face_ids: np.ndarray,
                face_patterns: np.ndarray, face_colors: np.ndarray,
                pose: Pose, size: tuple[int, int]):
    """Render one mesh; returns (image HxWx3 in [0,1], mask HxW bool, faceid HxW int).

    ``triangles`` is (n, 3) vertex indices, ``face_ids`` maps each triangle to
    its logical face, ``face_colors`` is (n_faces, 2, 3).  faceid is -1 on
    background.
    """
    h, w = size
    if h < 16 or w < 16:
        raise ValueError(f"render size must be at least 16x16, got {h}x{w}")
    if len(triangles) == 0 or len(vertices) < 4:
        raise ValueError("degenerate mesh")

    rot = rotation_matrix(pose.azimuth, pose.elevation, pose.roll)
    vcam = vertices @ rot.T
    focal = FOCAL_FRAC * min(h, w) * pose.scale
    px = w / 2.0 + focal * vcam[:, 0] + pose.tx
    py = h / 2.0 - focal * vcam[:, 1] + pose.ty
    depth = vcam[:, 2]

    img = np.tile(BACKGROUND, (h, w, 1))
    mask = np.zeros((h, w), dtype=bool)
    faceid = np.full((h, w), -1, dtype=np.int32)

    # world-space face normals and in-plane texture bases (object space)
    v0 = vertices[triangles[:, 0]]
    v1 = vertices[triangles[:, 1]]
    v2 = vertices[triangles[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    normals = normals / norms

    tri_depth = depth[triangles].mean(axis=1)
    order = np.argsort(tri_depth, kind="stable")  # far to near; near drawn last

    ys, xs = np.mgrid[0:h, 0:w]
    cx = xs + 0.5
    cy = ys + 0.5

    for ti in order:
        i0, i1, i2 = triangles[ti]
        n_cam = rot @ normals[ti]
        if n_cam[2] <= 0:
            continue  # backface
        x0, y0 = px[i0], py[i0]
        x1, y1 = px[i1], py[i1]
        x2, y2 = px[i2], py[i2]
        xmin = max(int(np.floor(min(x0, x1, x2))), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2))) + 1, w)
        ymin = max(int(np.floor(min(y0, y1, y2))), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2))) + 1, h)
        if xmin >= xmax or ymin >= ymax:
            continue
        den = (y1 - y2) * (x0 - x2) + (x2 - x1) * (y0 - y2)
        if abs(den) < 1e-12:
            continue
        sx = cx[ymin:ymax, xmin:xmax]
        sy = cy[ymin:ymax, xmin:xmax]
        b0 = ((y1 - y2) * (sx - x2) + (x2 - x1) * (sy - y2)) / den
        b1 = ((y2 - y0) * (sx - x2) + (x0 - x2) * (sy - y2)) / den
        b2 = 1.0 - b0 - b1
        inside = (b0 >= 0) & (b1 >= 0) & (b2 >= 0)
        if not inside.any():
            continue
        # face-local UV from object-space barycentric interpolation
        p_obj = (b0[..., None] * vertices[i0] + b1[..., None] * vertices[i1]
                 + b2[..., None] * vertices[i2])[inside]
        e1 = v1[ti] - v0[ti]
        e1 = e1 / max(np.linalg.norm(e1), 1e-12)
        e2 = np.cross(normals[ti], e1)
        rel = p_obj - v0[ti]
        u = rel @ e1 + 1.0  # offset keeps pattern coordinates positive
        vv = rel @ e2 + 1.0
        fid = int(face_ids[ti])
        c0, c1 = face_colors[fid]
        base = _pattern_color(int(face_patterns[fid]), u, vv, c0, c1)
        shade = AMBIENT + DIFFUSE * max(float(n_cam @ LIGHT_DIR), 0.0)
        color = np.clip(base * shade, 0.0, 1.0)
        region = (slice(ymin, ymax), slice(xmin, xmax))
        img[region][inside] = color
        mask[region][inside] = True
        faceid[region][inside] = fid
    return img, mask, faceid


def disc_sprite(center: tuple[float, float], radius: float, size: tuple[int, int],
                c0: np.ndarray, c1: np.ndarray, band: float = 1.6):
    """Concentric-ring disc occluder; returns (color HxWx3, mask HxW bool)."""
    h, w = size
    ys, xs = np.mgrid[0:h, 0:w]
    d = np.sqrt((xs + 0.5 - center[0]) ** 2 + (ys + 0.5 - center[1]) ** 2)
    mask = d < radius
    rings = (np.floor(d / band).astype(int) % 2) == 0
    color = np.where(rings[..., None], c0[None, None, :], c1[None, None, :])
    return color, mask


def composite(img: np.ndarray, sprite: np.ndarray, sprite_mask: np.ndarray) -> np.ndarray:
    out = img.copy()
    out[sprite_mask] = sprite[sprite_mask]
    return out
