"""Pinhole cameras, ray generation and depth back-projection.

Conventions: right-handed camera frame looking down +z, image x to the
right and y down (OpenCV style). Poses are 4x4 camera-to-world matrices.
Pixel ``(u, v)`` addresses column ``u`` and row ``v``; its center sits at
``(u + 0.5, v + 0.5)`` in continuous image coordinates. Depth maps store
ray range (distance along the unit ray direction), not z-depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float
    far: float

    def __post_init__(self):
        if not 0 <= self.near < self.far:
            raise ValueError("ray bounds must satisfy 0 <= near < far")

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


def validate_pose(pose, tol: float = 1e-9) -> np.ndarray:
    """Return ``pose`` as a float array, raising if it is not a rigid transform."""
    P = np.asarray(pose, dtype=np.float64)
    if P.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise ValueError("pose contains non-finite values")
    if not np.allclose(P[3], [0, 0, 0, 1], atol=tol):
        raise ValueError("pose bottom row must be [0, 0, 0, 1]")
    R = P[:3, :3]
    if np.abs(R.T @ R - np.eye(3)).max() > tol:
        raise ValueError("pose rotation is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("pose rotation must have determinant +1")
    return P


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` whose +z axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    P = np.eye(4)
    P[:3, 0], P[:3, 1], P[:3, 2], P[:3, 3] = right, down, forward, eye
    return P


def camera_directions(intr: CameraIntrinsics, pose, u, v) -> np.ndarray:
    """Unit world-frame directions through continuous image points ``(u, v)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d_cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    d = d_cam @ np.asarray(pose)[:3, :3].T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def pixel_ray(intr: CameraIntrinsics, pose, px, near: float, far: float) -> Ray:
    """Ray through continuous image point ``px = (u, v)``.

    Pass ``(col + 0.5, row + 0.5)`` for a pixel center; the principal point
    ``(cx, cy)`` maps onto the optical axis.
    """
    u, v = float(px[0]), float(px[1])
    if not (0 <= u <= intr.width and 0 <= v <= intr.height):
        raise ValueError(f"pixel {px} outside {intr.width}x{intr.height} image")
    P = np.asarray(pose, dtype=np.float64)
    return Ray(P[:3, 3].copy(), camera_directions(intr, P, u, v), near, far)


def image_rays(intr: CameraIntrinsics, pose) -> tuple[np.ndarray, np.ndarray]:
    """Origins and directions for every pixel center, each ``(H, W, 3)``."""
    P = np.asarray(pose, dtype=np.float64)
    vv, uu = np.meshgrid(np.arange(intr.height) + 0.5, np.arange(intr.width) + 0.5, indexing="ij")
    dirs = camera_directions(intr, P, uu, vv)
    origins = np.broadcast_to(P[:3, 3], dirs.shape).copy()
    return origins, dirs


def project(intr: CameraIntrinsics, pose, points) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns continuous ``(u, v)`` and camera-frame z."""
    P = np.asarray(pose, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    cam = (pts - P[:3, 3]) @ P[:3, :3]
    z = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([intr.fx * cam[..., 0] / z + intr.cx, intr.fy * cam[..., 1] / z + intr.cy], axis=-1)
    return uv, z


@dataclass
class BackProjection:
    points: np.ndarray
    pixels: np.ndarray
    skipped: int
    colors: np.ndarray | None = None


def backproject(intr: CameraIntrinsics, pose, depth_map, colors=None) -> BackProjection:
    """World points ``origin + range * direction`` for every valid pixel.

    Pixels whose range is non-finite or not positive are skipped and counted.
    ``colors`` (H, W, 3), when given, is gathered for the kept pixels.
    """
    depth = np.asarray(depth_map, dtype=np.float64)
    if depth.shape != (intr.height, intr.width):
        raise ValueError(f"depth map shape {depth.shape} does not match {intr.height}x{intr.width}")
    origins, dirs = image_rays(intr, pose)
    valid = np.isfinite(depth) & (depth > 0)
    rows, cols = np.nonzero(valid)
    pts = origins[valid] + depth[valid][:, None] * dirs[valid]
    out = BackProjection(points=pts, pixels=np.stack([cols, rows], axis=-1), skipped=int((~valid).sum()))
    if colors is not None:
        out.colors = np.asarray(colors, dtype=np.float64)[valid]
    return out


def cloud_distance(pred, truth) -> dict:
    """Symmetric nearest-neighbour RMSE between two point clouds, in meters."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0 or len(truth) == 0:
        raise ValueError("point clouds must be non-empty")
    d_pt, _ = cKDTree(truth).query(pred)
    d_tp, _ = cKDTree(pred).query(truth)
    return {
        "rmse_pred_to_truth": float(np.sqrt(np.mean(d_pt**2))),
        "rmse_truth_to_pred": float(np.sqrt(np.mean(d_tp**2))),
    }


def write_ply(path, points, colors=None) -> None:
    """ASCII PLY with optional per-vertex 8-bit RGB (colors given in [0, 1])."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
             "property double x", "property double y", "property double z"]
    if colors is not None:
        rgb = np.clip(np.round(np.asarray(colors).reshape(-1, 3) * 255), 0, 255).astype(int)
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i, p in enumerate(pts):
        row = " ".join(repr(float(c)) for c in p)
        if colors is not None:
            row += " %d %d %d" % tuple(rgb[i])
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Read back a file written by :func:`write_ply`."""
    text = Path(path).read_text().splitlines()
    end = text.index("end_header")
    header = text[:end]
    n = next(int(h.split()[-1]) for h in header if h.startswith("element vertex"))
    has_color = any("red" in h for h in header)
    rows = np.array([list(map(float, line.split())) for line in text[end + 1:end + 1 + n]]).reshape(n, -1)
    pts = rows[:, :3]
    return pts, (rows[:, 3:6] / 255.0 if has_color else None)
