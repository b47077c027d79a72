"""Procedural generator of desk-scale interaction episodes.

Each episode is a short video of one textured low-poly solid following a
smooth pose trajectory while a ring-textured disc occluder sweeps over it,
plus K reference views at evenly spaced azimuths and exact ground-truth
pose, object masks and interaction masks.  Episodes round-trip to a plain
directory of P6/P5 images and one JSON metadata file.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster import Pose, composite, disc_sprite, render_mesh

PATTERN_NAMES = ("solid", "stripes", "checker", "dots", "bands")

# hue palette for face colors; distinct pairs keep every face unique
_PALETTE = np.array([
    [0.85, 0.15, 0.15], [0.15, 0.65, 0.20], [0.15, 0.30, 0.85],
    [0.90, 0.75, 0.10], [0.80, 0.20, 0.80], [0.10, 0.75, 0.75],
    [0.95, 0.50, 0.10], [0.35, 0.20, 0.65], [0.55, 0.75, 0.15],
    [0.75, 0.35, 0.35], [0.25, 0.45, 0.55], [0.90, 0.55, 0.65],
    [0.40, 0.85, 0.45], [0.60, 0.60, 0.90], [0.70, 0.50, 0.20],
    [0.20, 0.20, 0.30],
])


class EpisodeIOError(Exception):
    """Malformed or incomplete episode directory."""


@dataclass
class ObjectSpec:
    """A closed low-poly solid with per-face two-color procedural textures."""
    id: str
    vertices: np.ndarray          # (n, 3), inside the unit cube
    triangles: np.ndarray         # (m, 3) vertex indices
    face_ids: np.ndarray          # (m,) logical face per triangle
    face_patterns: np.ndarray     # (n_faces,)
    face_colors: np.ndarray       # (n_faces, 2, 3)
    seed: int

    @property
    def n_faces(self) -> int:
        return int(self.face_ids.max()) + 1

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "seed": self.seed,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "face_ids": self.face_ids.tolist(),
            "face_patterns": self.face_patterns.tolist(),
            "face_colors": self.face_colors.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectSpec":
        return cls(
            id=d["id"], seed=int(d["seed"]),
            vertices=np.asarray(d["vertices"], dtype=np.float64),
            triangles=np.asarray(d["triangles"], dtype=np.int64),
            face_ids=np.asarray(d["face_ids"], dtype=np.int64),
            face_patterns=np.asarray(d["face_patterns"], dtype=np.int64),
            face_colors=np.asarray(d["face_colors"], dtype=np.float64),
        )


def _cube():
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                 dtype=np.float64) * 0.5
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # -x, +x
        (0, 4, 5, 1), (2, 3, 7, 6),  # -y, +y
        (0, 2, 6, 4), (1, 5, 7, 3),  # -z, +z
    ]
    tris, fids = [], []
    for f, (a, b, c, d) in enumerate(quads):
        tris += [(a, b, c), (a, c, d)]
        fids += [f, f]
    return v, np.array(tris), np.array(fids)


def _prism(n_sides: int):
    ang = 2 * np.pi * np.arange(n_sides) / n_sides
    top = np.stack([0.5 * np.cos(ang), np.full(n_sides, 0.5), 0.5 * np.sin(ang)], axis=1)
    bot = top.copy()
    bot[:, 1] = -0.5
    v = np.concatenate([top, bot])
    tris, fids = [], []
    for i in range(1, n_sides - 1):  # top and bottom fans
        tris.append((0, i + 1, i))
        fids.append(0)
    for i in range(1, n_sides - 1):
        tris.append((n_sides, n_sides + i, n_sides + i + 1))
        fids.append(1)
    for i in range(n_sides):  # side quads
        j = (i + 1) % n_sides
        tris += [(i, j, n_sides + j), (i, n_sides + j, n_sides + i)]
        fids += [2 + i, 2 + i]
    return v, np.array(tris), np.array(fids)


_BASE_SOLIDS = (_cube, lambda: _prism(4), lambda: _prism(5), lambda: _prism(6))


def _fix_winding(v, tris):
    """Orient every triangle so its normal points away from the centroid."""
    out = tris.copy()
    for i, (a, b, c) in enumerate(tris):
        n = np.cross(v[b] - v[a], v[c] - v[a])
        center = (v[a] + v[b] + v[c]) / 3.0
        if n @ center < 0:
            out[i] = (a, c, b)
    return out


def make_object(seed: int, object_id: str | None = None) -> ObjectSpec:
    """Procedural solid: jittered base shape, unique pattern+color per face."""
    rng = np.random.default_rng([int(seed), 0xB0D7])
    v, tris, fids = _BASE_SOLIDS[int(rng.integers(len(_BASE_SOLIDS)))]()
    v = v + rng.uniform(-0.09, 0.09, size=v.shape)
    v = v / (2.0 * np.abs(v).max())  # renormalize into the unit cube
    tris = _fix_winding(v, tris)
    n_faces = int(fids.max()) + 1
    hues = rng.permutation(len(_PALETTE))
    patterns = np.empty(n_faces, dtype=np.int64)
    colors = np.empty((n_faces, 2, 3))
    for f in range(n_faces):
        patterns[f] = 1 + (f + int(rng.integers(0, 4))) % (len(PATTERN_NAMES) - 1)
        c0 = _PALETTE[hues[(2 * f) % len(_PALETTE)]]
        c1 = _PALETTE[hues[(2 * f + 1) % len(_PALETTE)]]
        colors[f] = np.stack([c0, c1])
    return ObjectSpec(id=object_id or f"obj{seed:06d}", vertices=v, triangles=tris,
                      face_ids=fids, face_patterns=patterns, face_colors=colors,
                      seed=int(seed))


def render_view(obj: ObjectSpec, pose: Pose, size: tuple[int, int]):
    """Render the object alone; returns (image, mask, faceid)."""
    return render_mesh(obj.vertices, obj.triangles, obj.face_ids,
                       obj.face_patterns, obj.face_colors, pose, size)


# ---------------------------------------------------------------------------
# trajectories

TRAJECTORIES = ("spin", "tumble", "translate-and-spin", "shake")
MAX_AZ_STEP = math.pi / 8


def trajectory_poses(kind: str, t_frames: int, rng: np.random.Generator | None = None,
                     **overrides) -> list[Pose]:
    """Smooth pose sequence for one of the named trajectory kinds.

    With no rng the canonical parameters are used (spin: azimuth 2*pi*t/T,
    elevation 0); an rng draws bounded random phases and amplitudes.
    """
    if kind not in TRAJECTORIES:
        raise ValueError(f"unknown trajectory {kind!r}")
    draw = rng.uniform if rng is not None else (lambda lo, hi: (lo + hi) / 2.0)
    az0 = overrides.get("az0", draw(0.0, 2 * math.pi) if rng is not None else 0.0)
    direction = overrides.get("direction",
                              (1.0 if rng is None or rng.uniform(0, 1) < 0.5 else -1.0))
    elev = overrides.get("elevation", draw(-0.25, 0.25) if rng is not None else 0.0)
    scale = overrides.get("scale", draw(0.80, 1.10) if rng is not None else 1.0)
    ts = np.arange(t_frames)
    poses = []
    if kind == "spin":
        az = az0 + direction * 2 * math.pi * ts / t_frames
        for t in ts:
            poses.append(Pose(azimuth=float(az[t] % (2 * math.pi)), elevation=elev,
                              scale=scale))
    elif kind == "tumble":
        w_az = direction * draw(math.pi / 20, math.pi / 10)
        a_el = draw(0.1, 0.3)
        w_roll = draw(-math.pi / 24, math.pi / 24)
        ph = draw(0.0, 2 * math.pi)
        for t in ts:
            poses.append(Pose(
                azimuth=float((az0 + w_az * t) % (2 * math.pi)),
                elevation=float(elev + a_el * math.sin(2 * math.pi * t / t_frames + ph)),
                roll=float(w_roll * t), scale=scale))
    elif kind == "translate-and-spin":
        ax = draw(1.0, 2.5)
        ay = draw(1.0, 2.5)
        phx = draw(0.0, 2 * math.pi)
        phy = draw(0.0, 2 * math.pi)
        az = az0 + direction * 2 * math.pi * ts / t_frames
        for t in ts:
            poses.append(Pose(
                azimuth=float(az[t] % (2 * math.pi)), elevation=elev,
                tx=float(ax * math.sin(2 * math.pi * t / t_frames + phx)),
                ty=float(ay * math.sin(4 * math.pi * t / t_frames + phy)),
                scale=scale))
    else:  # shake: short-period wobble, includes near-static stride-4 pairs
        amp = draw(0.08, 0.22)
        r_amp = draw(0.02, 0.10)
        for t in ts:
            poses.append(Pose(
                azimuth=float((az0 + amp * math.sin(2 * math.pi * t / 4.0)) % (2 * math.pi)),
                elevation=elev,
                roll=float(r_amp * math.sin(2 * math.pi * t / 4.0 + 1.0)),
                ty=float(draw(0.5, 1.0) * math.sin(2 * math.pi * t / 5.0)),
                scale=scale))
    return poses


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary dilation with a Euclidean disc of the given radius."""
    out = mask.copy()
    r = int(radius)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx == 0 and dy == 0 or dx * dx + dy * dy > r * r:
                continue
            shifted = np.zeros_like(mask)
            ys = slice(max(dy, 0), mask.shape[0] + min(dy, 0))
            yd = slice(max(-dy, 0), mask.shape[0] + min(-dy, 0))
            xs = slice(max(dx, 0), mask.shape[1] + min(dx, 0))
            xd = slice(max(-dx, 0), mask.shape[1] + min(-dx, 0))
            shifted[yd, xd] = mask[ys, xs]
            out |= shifted
    return out


@dataclass
class Episode:
    """One synthetic interaction clip with full ground truth."""
    object: ObjectSpec
    frames: np.ndarray        # (T, H, W, 3) in [0, 1]
    poses: list[Pose]
    object_masks: np.ndarray  # (T, H, W) bool, visible-object pixels
    hoi_masks: np.ndarray     # (T, H, W) bool, superset of object_masks
    refs: np.ndarray          # (K, H, W, 3)
    ref_azimuths: np.ndarray  # (K,)
    hand: dict                # occluder trajectory parameters and centers
    trajectory: str
    dt: int
    seed: int

    @property
    def t_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def k_refs(self) -> int:
        return self.refs.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def hoi_radius(h: int) -> int:
    return max(1, round(2 * h / 32))


def generate_episode(obj: ObjectSpec, trajectory: str, t_frames: int = 20,
                     k_refs: int = 4, dt: int = 4, seed: int = 0,
                     size: tuple[int, int] = (32, 32),
                     ref_azimuths: np.ndarray | None = None) -> Episode:
    """Render a full episode; pure function of (object, trajectory, seed)."""
    if t_frames < 2 * dt:
        raise ValueError(f"need T >= 2*dt, got T={t_frames}, dt={dt}")
    if k_refs < 1:
        raise ValueError("need at least one reference view")
    h, w = size
    rng = np.random.default_rng([int(seed), obj.seed, 0xE915])
    poses = trajectory_poses(trajectory, t_frames, rng)

    hand_c0 = np.array([0.93, 0.80, 0.62])
    hand_c1 = np.array([0.55, 0.35, 0.22])
    radius = float(rng.uniform(0.11, 0.16)) * min(h, w)
    amp = np.array([rng.uniform(0.06, 0.25) * w, rng.uniform(0.06, 0.25) * h])
    phase = rng.uniform(0, 2 * math.pi, size=2)
    freq = float(rng.choice([1.0, 2.0]))

    for _ in range(8):
        frames = np.empty((t_frames, h, w, 3))
        obj_masks = np.empty((t_frames, h, w), dtype=bool)
        hoi_masks = np.empty((t_frames, h, w), dtype=bool)
        centers = []
        overlap = 0
        for t, pose in enumerate(poses):
            img, omask, _ = render_view(obj, pose, size)
            ocx = w / 2.0 + pose.tx
            ocy = h / 2.0 + pose.ty
            hx = ocx + amp[0] * math.sin(2 * math.pi * t / t_frames * freq + phase[0])
            hy = ocy + amp[1] * math.cos(2 * math.pi * t / t_frames + phase[1])
            sprite, hmask = disc_sprite((hx, hy), radius, size, hand_c0, hand_c1)
            frame = composite(img, sprite, hmask)
            visible = omask & ~hmask
            if (omask & hmask).any():
                overlap += 1
            frames[t] = frame
            obj_masks[t] = visible
            hoi_masks[t] = dilate(visible | hmask, hoi_radius(h))
            centers.append((hx, hy))
        if overlap >= 0.2 * t_frames:
            break
        amp *= 0.65  # pull the occluder toward the object and re-render

    if ref_azimuths is None:
        ref_azimuths = 2 * math.pi * np.arange(k_refs) / k_refs
    refs = np.stack([render_view(obj, Pose(azimuth=float(a)), size)[0]
                     for a in ref_azimuths])
    hand = {"radius": radius, "amp": amp.tolist(), "phase": phase.tolist(),
            "freq": freq, "centers": centers,
            "colors": [hand_c0.tolist(), hand_c1.tolist()]}
    return Episode(object=obj, frames=frames, poses=poses, object_masks=obj_masks,
                   hoi_masks=hoi_masks, refs=refs,
                   ref_azimuths=np.asarray(ref_azimuths, dtype=np.float64),
                   hand=hand, trajectory=trajectory, dt=dt, seed=int(seed))


def render_cross_episode(target: ObjectSpec, source: Episode) -> Episode:
    """Ground-truth cross-reenactment: the target object follows the source's
    exact pose trajectory with the source's occluder sprites."""
    h, w = source.size
    c0 = np.asarray(source.hand["colors"][0])
    c1 = np.asarray(source.hand["colors"][1])
    radius = source.hand["radius"]
    frames = np.empty_like(source.frames)
    obj_masks = np.empty_like(source.object_masks)
    hoi_masks = np.empty_like(source.hoi_masks)
    for t, pose in enumerate(source.poses):
        img, omask, _ = render_view(target, pose, (h, w))
        sprite, hmask = disc_sprite(tuple(source.hand["centers"][t]), radius,
                                    (h, w), c0, c1)
        frames[t] = composite(img, sprite, hmask)
        visible = omask & ~hmask
        obj_masks[t] = visible
        hoi_masks[t] = dilate(visible | hmask, hoi_radius(h))
    refs = np.stack([render_view(target, Pose(azimuth=float(a)), (h, w))[0]
                     for a in source.ref_azimuths])
    return Episode(object=target, frames=frames, poses=list(source.poses),
                   object_masks=obj_masks, hoi_masks=hoi_masks, refs=refs,
                   ref_azimuths=source.ref_azimuths.copy(), hand=source.hand,
                   trajectory=source.trajectory, dt=source.dt, seed=source.seed)


# ---------------------------------------------------------------------------
# object-centered crops (shared by motion encoding and state re-extraction)

def crop_object(frame: np.ndarray, mask: np.ndarray, out: int = 32,
                pad_frac: float = 0.10) -> np.ndarray:
    """Mask-segmented square crop around the mask bbox, nearest-resized.

    Background (and anything outside the mask) is zeroed.  Raises
    ValueError on an empty mask.
    """
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        raise ValueError("empty mask: no object pixels to crop")
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    side = max(y1 - y0, x1 - x0)
    side = side + 2 * math.ceil(pad_frac * side)
    cy = (y0 + y1) // 2
    cx = (x0 + x1) // 2
    top = cy - side // 2
    left = cx - side // 2
    seg = frame * mask[..., None]
    buf = np.zeros((side, side, frame.shape[2]))
    sy0, sy1 = max(top, 0), min(top + side, frame.shape[0])
    sx0, sx1 = max(left, 0), min(left + side, frame.shape[1])
    buf[sy0 - top:sy1 - top, sx0 - left:sx1 - left] = seg[sy0:sy1, sx0:sx1]
    idx = np.minimum((np.arange(out) + 0.5) * side / out, side - 1).astype(int)
    return buf[np.ix_(idx, idx)]


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    iy = np.minimum(((np.arange(out_h) + 0.5) * h / out_h), h - 1).astype(int)
    ix = np.minimum(((np.arange(out_w) + 0.5) * w / out_w), w - 1).astype(int)
    return img[np.ix_(iy, ix)]


# ---------------------------------------------------------------------------
# on-disk episode format: meta.json + P6 frames + P5 masks

def _write_ppm(path: Path, img: np.ndarray) -> None:
    h, w = img.shape[:2]
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def _read_ppm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise EpisodeIOError(f"{path}: not a P6 file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        maxval = int(f.readline())
        raw = f.read(w * h * 3)
    if len(raw) != w * h * 3:
        raise EpisodeIOError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3) / float(maxval)


def _write_pgm(path: Path, mask: np.ndarray) -> None:
    h, w = mask.shape
    data = (mask.astype(np.uint8) * 255)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def _read_pgm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise EpisodeIOError(f"{path}: not a P5 file")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        f.readline()
        raw = f.read(w * h)
    if len(raw) != w * h:
        raise EpisodeIOError(f"{path}: truncated pixel data")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w) > 127


def write_episode(ep: Episode, directory) -> None:
    root = Path(directory)
    for sub in ("frames", "object_masks", "hoi_masks", "refs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    meta = {
        "t_frames": ep.t_frames,
        "k_refs": ep.k_refs,
        "height": ep.size[0],
        "width": ep.size[1],
        "dt": ep.dt,
        "seed": ep.seed,
        "trajectory": ep.trajectory,
        "poses": [p.to_dict() for p in ep.poses],
        "ref_azimuths": ep.ref_azimuths.tolist(),
        "hand": ep.hand,
        "object": ep.object.to_dict(),
    }
    with open(root / "meta.json", "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    for t in range(ep.t_frames):
        _write_ppm(root / "frames" / f"frame_{t:04d}.ppm", ep.frames[t])
        _write_pgm(root / "object_masks" / f"m_{t:04d}.pgm", ep.object_masks[t])
        _write_pgm(root / "hoi_masks" / f"h_{t:04d}.pgm", ep.hoi_masks[t])
    for k in range(ep.k_refs):
        _write_ppm(root / "refs" / f"ref_{k:02d}.ppm", ep.refs[k])


def read_episode(directory) -> Episode:
    root = Path(directory)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise EpisodeIOError(f"missing meta.json in {root}")
    with open(meta_path) as f:
        meta = json.load(f)
    t_frames = meta["t_frames"]
    k_refs = meta["k_refs"]
    h, w = meta["height"], meta["width"]

    def need(path: Path, what: str, idx: int):
        if not path.exists():
            raise EpisodeIOError(f"missing {what} file for index {idx}: {path}")
        return path

    frames = np.stack([
        _read_ppm(need(root / "frames" / f"frame_{t:04d}.ppm", "frame", t))
        for t in range(t_frames)])
    obj_masks = np.stack([
        _read_pgm(need(root / "object_masks" / f"m_{t:04d}.pgm", "object mask", t))
        for t in range(t_frames)])
    hoi_masks = np.stack([
        _read_pgm(need(root / "hoi_masks" / f"h_{t:04d}.pgm", "hoi mask", t))
        for t in range(t_frames)])
    refs = np.stack([
        _read_ppm(need(root / "refs" / f"ref_{k:02d}.ppm", "reference", k))
        for k in range(k_refs)])
    for name, arr, want in (("frames", frames, (t_frames, h, w, 3)),
                            ("object_masks", obj_masks, (t_frames, h, w)),
                            ("refs", refs, (k_refs, h, w, 3))):
        if arr.shape != want:
            raise EpisodeIOError(f"{name} shape {arr.shape} != metadata {want}")
    return Episode(
        object=ObjectSpec.from_dict(meta["object"]),
        frames=frames,
        poses=[Pose.from_dict(p) for p in meta["poses"]],
        object_masks=obj_masks,
        hoi_masks=hoi_masks,
        refs=refs,
        ref_azimuths=np.asarray(meta["ref_azimuths"], dtype=np.float64),
        hand=meta["hand"],
        trajectory=meta["trajectory"],
        dt=meta["dt"],
        seed=meta["seed"],
    )
