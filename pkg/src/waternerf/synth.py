"""Synthetic underwater scenes with exact ground truth.

The scene is analytic: a textured ground plane (z = 0, world z up), a few
axis-aligned boxes and a sphere, and a raised platform whose top carries a
3 x 2 colorboard. Cameras fly a two-row lawnmower pattern looking down at
the scene center, which gives ranges of roughly 2-6.5 m. Every pixel is ray
traced once through its center, so range maps and track coordinates are
exact, and the underwater images are the in-air images pushed through
:func:`waternerf.imgform.degrade`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import PosedDataset
from .geometry import CameraIntrinsics, image_rays, look_at, project
from .imgform import WaterParams, degrade
from .metrics import ColorBoardSpec, Patch, PixelTrack
from .restore import histogram_equalize

PATCH_COLORS = {
    "blue": (0.10, 0.20, 0.80),
    "red": (0.80, 0.12, 0.10),
    "magenta": (0.80, 0.12, 0.70),
    "green": (0.12, 0.70, 0.20),
    "cyan": (0.10, 0.70, 0.80),
    "yellow": (0.85, 0.80, 0.12),
}

# primitive ids in the hit buffers
GROUND, PLATFORM, SPHERE = 0, 1, 2
BOX0 = 3
MISS = -1


@dataclass
class SceneConfig:
    width: int = 64
    height: int = 64
    fov_deg: float = 55.0
    n_views: int = 8
    n_test: int = 2
    altitude: float = 3.2
    row_offset: float = 1.6
    x_extent: float = 1.8
    beta: tuple = (0.4, 0.2, 0.1)
    veiling: tuple = (0.1, 0.15, 0.3)
    n_tracks: int = 200
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta"] = list(self.beta)
        d["veiling"] = list(self.veiling)
        return d


@dataclass
class Box:
    lo: np.ndarray
    hi: np.ndarray
    # face colors ordered -x, +x, -y, +y, -z, +z
    colors: np.ndarray


@dataclass
class Scene:
    boxes: list
    platform: Box
    board_lo: np.ndarray
    board_hi: np.ndarray
    sphere_center: np.ndarray
    sphere_radius: float
    texture_phase: np.ndarray
    patch_names: list = field(default_factory=lambda: list(PATCH_COLORS))


def make_scene(rng: np.random.Generator) -> Scene:
    boxes = [
        Box(np.array([-1.9, 0.5, 0.0]), np.array([-1.1, 1.3, 0.8]),
            np.array([[0.55, 0.35, 0.25], [0.70, 0.45, 0.30], [0.50, 0.50, 0.30],
                      [0.65, 0.40, 0.35], [0.5, 0.5, 0.5], [0.85, 0.65, 0.40]])),
        Box(np.array([1.2, -1.4, 0.0]), np.array([1.8, -0.4, 1.1]),
            np.array([[0.35, 0.45, 0.60], [0.30, 0.55, 0.55], [0.40, 0.40, 0.65],
                      [0.30, 0.50, 0.70], [0.5, 0.5, 0.5], [0.55, 0.70, 0.75]])),
    ]
    gray = np.array([0.6, 0.6, 0.58])
    platform = Box(np.array([-0.8, -0.55, 0.0]), np.array([0.8, 0.55, 0.25]), np.tile(gray, (6, 1)))
    board_lo = np.array([-0.75, -0.5])
    board_hi = np.array([0.75, 0.5])
    return Scene(
        boxes=boxes,
        platform=platform,
        board_lo=board_lo,
        board_hi=board_hi,
        sphere_center=np.array([1.0, 1.2, 0.55]),
        sphere_radius=0.55,
        texture_phase=rng.uniform(0, 2 * np.pi, size=3),
    )


def ground_albedo(scene: Scene, xy) -> np.ndarray:
    """High-contrast color drift, so every channel spans most of [0, 1]."""
    x, y = xy[..., 0], xy[..., 1]
    ph = scene.texture_phase
    r = 0.50 + 0.40 * np.sin(1.3 * x + 0.4 * y + ph[0])
    g = 0.50 + 0.40 * np.sin(0.5 * x - 1.1 * y + ph[1])
    b = 0.45 + 0.40 * np.cos(0.9 * x + 0.8 * y + ph[2])
    return np.stack([r, g, b], axis=-1)


def sphere_albedo(normal) -> np.ndarray:
    return np.clip(0.5 + 0.35 * normal[..., [0, 1, 2]] * np.array([1.0, -1.0, 0.6]), 0.0, 1.0)


def board_patch(scene: Scene, xy) -> np.ndarray:
    """Patch index (0..5) of top-face points, -1 outside the board."""
    rel = (xy - scene.board_lo) / (scene.board_hi - scene.board_lo)
    inside = np.all((rel >= 0) & (rel < 1), axis=-1)
    col = np.clip((rel[..., 0] * 3).astype(int), 0, 2)
    row = np.clip((rel[..., 1] * 2).astype(int), 0, 1)
    return np.where(inside, row * 3 + col, -1)


def _hit_box(o, d, box: Box):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (box.lo - o) * inv
        t1 = (box.hi - o) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    t_enter = tmin.max(axis=-1)
    t_exit = tmax.min(axis=-1)
    axis = tmin.argmax(axis=-1)
    hit = (t_enter <= t_exit) & (t_enter > 1e-9)
    sign = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0] > 0
    # entering through the min face when travelling in +axis
    face = 2 * axis + np.where(sign, 0, 1)
    return np.where(hit, t_enter, np.inf), face


def trace(scene: Scene, origins, dirs):
    """Nearest hit per ray: returns (t, primitive id, face id, point, albedo)."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(o)
    best_t = np.full(n, np.inf)
    prim = np.full(n, MISS)
    face = np.zeros(n, dtype=int)

    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(d[:, 2] < 0, -o[:, 2] / d[:, 2], np.inf)
    tg = np.where(tg > 1e-9, tg, np.inf)
    sel = tg < best_t
    best_t[sel], prim[sel] = tg[sel], GROUND

    for pid, box in [(PLATFORM, scene.platform)] + [(BOX0 + k, b) for k, b in enumerate(scene.boxes)]:
        tb, fb = _hit_box(o, d, box)
        sel = tb < best_t
        best_t[sel], prim[sel], face[sel] = tb[sel], pid, fb[sel]

    oc = o - scene.sphere_center
    bq = np.einsum("ij,ij->i", oc, d)
    cq = np.einsum("ij,ij->i", oc, oc) - scene.sphere_radius ** 2
    disc = bq * bq - cq
    ts = np.where(disc >= 0, -bq - np.sqrt(np.maximum(disc, 0)), np.inf)
    ts = np.where(ts > 1e-9, ts, np.inf)
    sel = ts < best_t
    best_t[sel], prim[sel] = ts[sel], SPHERE

    point = o + np.where(np.isfinite(best_t), best_t, 0.0)[:, None] * d
    albedo = np.zeros((n, 3))
    m = prim == GROUND
    albedo[m] = ground_albedo(scene, point[m, :2])
    m = prim == SPHERE
    albedo[m] = sphere_albedo((point[m] - scene.sphere_center) / scene.sphere_radius)
    m = prim == PLATFORM
    albedo[m] = scene.platform.colors[face[m]]
    top = m & (face == 5)
    patch = np.full(n, -1)
    patch[top] = board_patch(scene, point[top, :2])
    colors = np.array(list(PATCH_COLORS.values()))
    on_board = patch >= 0
    albedo[on_board] = colors[patch[on_board]]
    for k, box in enumerate(scene.boxes):
        m = prim == BOX0 + k
        albedo[m] = box.colors[face[m]]
    # faces carry the board patch id so patch edges count as surface edges
    face = np.where(on_board, 10 + patch, face)
    return best_t, prim, face, point, albedo


def camera_path(cfg: SceneConfig) -> tuple[np.ndarray, list]:
    """Lawnmower poses: two rows flown in opposite directions, test views interleaved."""
    total = cfg.n_views + cfg.n_test
    per_row = [total // 2 + total % 2, total // 2]
    poses, splits = [], []
    test_slots = set()
    if cfg.n_test:
        # spread test views evenly along the path, away from the ends
        test_slots = set(np.round(np.linspace(0, total - 1, cfg.n_test + 2)[1:-1]).astype(int).tolist())
    k = 0
    for row, count in enumerate(per_row):
        y = -cfg.row_offset if row == 0 else cfg.row_offset
        xs = np.linspace(-cfg.x_extent, cfg.x_extent, count)
        if row == 1:
            xs = xs[::-1]
        for x in xs:
            eye = np.array([x, y, cfg.altitude])
            target = np.array([0.6 * x, 0.0, 0.0])
            poses.append(look_at(eye, target))
            splits.append("test" if k in test_slots else "train")
            k += 1
    return np.stack(poses), splits


def _validate_cameras(scene: Scene, poses):
    for i, P in enumerate(poses):
        eye = P[:3, 3]
        if eye[2] <= 1.5:
            raise ValueError(f"camera {i} at height {eye[2]:.3f} m is too close to the scene")
        for box in scene.boxes + [scene.platform]:
            if np.all(eye >= box.lo) and np.all(eye <= box.hi):
                raise ValueError(f"camera {i} is inside scene geometry")


def _board_regions(scene, intr, poses, patch_maps, min_half=1):
    """Largest square pixel window around each projected patch center lying on that patch."""
    centers = []
    span = (scene.board_hi - scene.board_lo)
    for pidx in range(6):
        row, col = divmod(pidx, 3)
        xy = scene.board_lo + span * np.array([(col + 0.5) / 3, (row + 0.5) / 2])
        centers.append([xy[0], xy[1], scene.platform.hi[2]])
    patches = [Patch(name=n, truth=np.array(c)) for n, c in PATCH_COLORS.items()]
    for i, P in enumerate(poses):
        uv, z = project(intr, P, np.array(centers))
        for pidx, ((u, v), zz) in enumerate(zip(uv, z)):
            if zz <= 0:
                continue
            c, r = int(np.floor(u)), int(np.floor(v))
            if not (0 <= c < intr.width and 0 <= r < intr.height) or patch_maps[i][r, c] != pidx:
                continue
            half = 0
            while True:
                h = half + 1
                r0, r1, c0, c1 = r - h, r + h + 1, c - h, c + h + 1
                if r0 < 0 or c0 < 0 or r1 > intr.height or c1 > intr.width:
                    break
                if not np.all(patch_maps[i][r0:r1, c0:c1] == pidx):
                    break
                half = h
            if half >= min_half:
                patches[pidx].regions[i] = (c - half, r - half, c + half + 1, r + half + 1)
    return ColorBoardSpec([p for p in patches if p.regions])


def _tracks(scene, intr, poses, hits, rng, n_tracks, albedo_tol=0.02):
    """Surface points seen (and pixel-sampled consistently) in at least two views."""
    n_views = len(poses)
    h, w = intr.height, intr.width
    candidates = []
    for i in range(n_views):
        rows = rng.integers(2, h - 2, size=n_tracks)
        cols = rng.integers(2, w - 2, size=n_tracks)
        t, prim, face, point, albedo = hits[i]
        for r, c in zip(rows, cols):
            k = r * w + c
            if prim[k] != MISS:
                candidates.append((point[k], prim[k], face[k], albedo[k]))
    order = rng.permutation(len(candidates))
    tracks = []
    for ci in order:
        if len(tracks) >= n_tracks:
            break
        X, pid, fid, alb = candidates[ci]
        obs = []
        for i, P in enumerate(poses):
            uv, z = project(intr, P, X[None])
            u, v = uv[0]
            if z[0] <= 0 or not (0 <= u < w and 0 <= v < h):
                continue
            d = X - P[:3, 3]
            dist = np.linalg.norm(d)
            t, prim, face, _, _ = trace(scene, P[:3, 3][None], (d / dist)[None])
            if prim[0] != pid or face[0] != fid or abs(t[0] - dist) > 1e-6:
                continue
            # the pixel this observation samples must show the same surface color
            k = int(np.floor(v)) * w + int(np.floor(u))
            _, pprim, pface, _, palb = hits[i]
            if pprim[k] != pid or pface[k] != fid or np.abs(palb[k] - alb).max() > albedo_tol:
                continue
            obs.append((i, (float(u), float(v))))
        if len(obs) >= 2:
            tracks.append(PixelTrack(len(tracks), obs))
    return tracks


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def generate(cfg: SceneConfig = SceneConfig()) -> PosedDataset:
    """Ray trace every view and build the full ground-truth dataset."""
    rng = np.random.default_rng(cfg.seed)
    scene = make_scene(rng)
    params = WaterParams(beta=cfg.beta, veiling=cfg.veiling)
    f = 0.5 * cfg.width / np.tan(np.radians(cfg.fov_deg) / 2)
    intr = CameraIntrinsics(fx=f, fy=f, cx=cfg.width / 2, cy=cfg.height / 2, width=cfg.width, height=cfg.height)
    poses, splits = camera_path(cfg)
    _validate_cameras(scene, poses)

    in_air, depths, patch_maps, hits = [], [], [], []
    for P in poses:
        o, d = image_rays(intr, P)
        t, prim, face, point, albedo = trace(scene, o, d)
        if np.any(prim == MISS):
            raise ValueError("some camera rays miss the scene; camera outside valid range")
        hits.append((t, prim, face, point, albedo))
        in_air.append(_f32(albedo.reshape(cfg.height, cfg.width, 3)))
        depths.append(_f32(t.reshape(cfg.height, cfg.width)))
        patch_maps.append(np.where(face >= 10, face - 10, -1).reshape(cfg.height, cfg.width))
    in_air = np.stack(in_air)
    depths = np.stack(depths)
    under = _f32(degrade(in_air, params, depths))
    equalized = _f32(np.stack([histogram_equalize(im) for im in under]))

    near = float(np.floor(0.8 * depths.min() * 10) / 10)
    far = float(np.ceil(1.15 * depths.max() * 10) / 10)
    return PosedDataset(
        intrinsics=intr,
        poses=poses,
        images=under,
        names=[f"view_{i:03d}" for i in range(len(poses))],
        splits=splits,
        near=near,
        far=far,
        in_air=in_air,
        equalized=equalized,
        depths=depths,
        water_params=params,
        tracks=_tracks(scene, intr, poses, hits, rng, cfg.n_tracks),
        colorboard=_board_regions(scene, intr, poses, patch_maps),
        meta={"generator": "waternerf.synth", "config": cfg.to_dict()},
    )


def truth_cloud(ds: PosedDataset, index: int) -> np.ndarray:
    """Exact world points seen by view ``index`` (from its range map)."""
    o, d = image_rays(ds.intrinsics, ds.poses[index])
    return (o + ds.depths[index][..., None] * d).reshape(-1, 3)
