"""Posed dataset container and its on-disk layout.

::

    DIR/
      poses.json           intrinsics, near/far and one entry per frame
      images/NAME.png      observed (underwater) images, 8-bit RGB
      images/NAME.pfm      optional float32 copy, preferred when present
      in_air/NAME.{png,pfm}, equalized/NAME.{png,pfm}   optional
      depth/NAME.pfm       optional ray-range maps in meters
      water_params.json, tracks.json, colorboard.json   optional ground truth

``poses.json`` is ``{"intrinsics": {fx, fy, cx, cy, width, height},
"near": float, "far": float, "frames": [{"file": "images/NAME.png",
"camera_to_world": [16 row-major floats], "split": "train" | "test"}]}``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .geometry import CameraIntrinsics, validate_pose
from .imgform import WaterParams
from .metrics import ColorBoardSpec, PixelTrack


class DatasetError(ValueError):
    pass


def write_pfm(path, data) -> None:
    """Write a float32 PFM (little-endian, rows stored bottom to top)."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 3 and arr.shape[2] == 3:
        kind = "PF"
    elif arr.ndim == 2:
        kind = "Pf"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3) data, got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"{kind}\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes())


_PFM_HEADER = re.compile(rb"^(PF|Pf)\s+(\d+)\s+(\d+)\s+(\S+)\s", re.S)


def read_pfm(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read PFM ({exc.strerror})") from exc
    m = _PFM_HEADER.match(raw)
    if not m:
        raise DatasetError(f"{path}: not a PFM file (bad header)")
    kind, w, h, scale = m.group(1), int(m.group(2)), int(m.group(3)), float(m.group(4))
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = w * h * channels * 4
    body = raw[m.end():]
    if len(body) < expected:
        raise DatasetError(f"{path}: truncated PFM ({len(body)} of {expected} data bytes)")
    arr = np.frombuffer(body[:expected], dtype=dtype).astype(np.float32)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))[::-1]
    return np.ascontiguousarray(arr).astype(np.float64)


def write_png(path, image) -> None:
    img = np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DatasetError(f"{path}: cannot read image ({exc})") from exc


def read_image(path) -> np.ndarray:
    """Read an RGB image, preferring a float PFM sibling of a PNG."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return read_pfm(path)
    pfm = path.with_suffix(".pfm")
    return read_pfm(pfm) if pfm.exists() else read_png(path)


@dataclass
class PosedDataset:
    intrinsics: CameraIntrinsics
    poses: np.ndarray
    images: np.ndarray
    names: list
    splits: list
    near: float
    far: float
    in_air: Optional[np.ndarray] = None
    equalized: Optional[np.ndarray] = None
    depths: Optional[np.ndarray] = None
    water_params: Optional[WaterParams] = None
    tracks: Optional[list] = None
    colorboard: Optional[ColorBoardSpec] = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.names)

    def indices(self, split: str) -> list:
        return [i for i, s in enumerate(self.splits) if s == split]


def _dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise DatasetError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from exc


def save_dataset(ds: PosedDataset, path) -> None:
    root = Path(path)
    for sub in ("images", "in_air", "equalized", "depth"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    frames = []
    for i, name in enumerate(ds.names):
        write_png(root / "images" / f"{name}.png", ds.images[i])
        write_pfm(root / "images" / f"{name}.pfm", ds.images[i])
        for sub, arr in (("in_air", ds.in_air), ("equalized", ds.equalized)):
            if arr is not None:
                write_png(root / sub / f"{name}.png", arr[i])
                write_pfm(root / sub / f"{name}.pfm", arr[i])
        if ds.depths is not None:
            write_pfm(root / "depth" / f"{name}.pfm", ds.depths[i])
        frames.append({
            "file": f"images/{name}.png",
            "camera_to_world": [float(v) for v in np.asarray(ds.poses[i]).reshape(-1)],
            "split": ds.splits[i],
        })
    _dump_json(root / "poses.json", {
        "intrinsics": ds.intrinsics.to_dict(),
        "near": float(ds.near),
        "far": float(ds.far),
        "frames": frames,
    })
    if ds.water_params is not None:
        _dump_json(root / "water_params.json", ds.water_params.to_dict())
    if ds.tracks is not None:
        _dump_json(root / "tracks.json", {"tracks": [t.to_dict() for t in ds.tracks]})
    if ds.colorboard is not None:
        _dump_json(root / "colorboard.json", ds.colorboard.to_dict())
    if ds.meta:
        _dump_json(root / "scene.json", ds.meta)


def load_tracks(path) -> list:
    d = _load_json(path)
    try:
        return [PixelTrack.from_dict(t) for t in d["tracks"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: invalid track file ({exc})") from exc


def load_colorboard(path) -> ColorBoardSpec:
    d = _load_json(path)
    try:
        return ColorBoardSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{path}: invalid colorboard file ({exc})") from exc


def load_dataset(path) -> PosedDataset:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: dataset directory does not exist")
    meta = _load_json(root / "poses.json")
    try:
        intr = CameraIntrinsics.from_dict(meta["intrinsics"])
        near, far = float(meta["near"]), float(meta["far"])
        frames = meta["frames"]
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{root / 'poses.json'}: {exc}") from exc
    if not 0 <= near < far:
        raise DatasetError(f"{root / 'poses.json'}: need 0 <= near < far")
    if not frames:
        raise DatasetError(f"{root / 'poses.json'}: no frames")

    names, poses, splits, images = [], [], [], []
    for k, fr in enumerate(frames):
        try:
            file = Path(fr["file"])
            pose = np.asarray(fr["camera_to_world"], dtype=np.float64).reshape(4, 4)
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{root / 'poses.json'}: frame {k}: {exc}") from exc
        try:
            validate_pose(pose)
        except ValueError as exc:
            raise DatasetError(f"{root / 'poses.json'}: frame {k} ({file}): {exc}") from exc
        img_path = root / file
        if not img_path.exists():
            raise DatasetError(f"{img_path}: image referenced by poses.json is missing")
        img = read_image(img_path)
        if img.shape != (intr.height, intr.width, 3):
            raise DatasetError(f"{img_path}: shape {img.shape} does not match intrinsics "
                               f"{intr.height}x{intr.width}")
        names.append(file.stem)
        poses.append(pose)
        splits.append(fr.get("split", "train"))
        images.append(img)

    def optional_stack(sub, reader, shape):
        paths = [root / sub / f"{n}.pfm" for n in names]
        if not all(p.exists() for p in paths):
            paths = [root / sub / f"{n}.png" for n in names]
            if not all(p.exists() for p in paths):
                return None
        out = []
        for p in paths:
            arr = reader(p)
            if arr.shape != shape:
                raise DatasetError(f"{p}: shape {arr.shape} does not match {shape}")
            out.append(arr)
        return np.stack(out)

    hw3 = (intr.height, intr.width, 3)
    depths = optional_stack("depth", read_pfm, (intr.height, intr.width))
    if depths is not None and np.any(depths[np.isfinite(depths)] < 0):
        raise DatasetError(f"{root / 'depth'}: depth maps must be non-negative")

    water = None
    if (root / "water_params.json").exists():
        try:
            water = WaterParams.from_dict(_load_json(root / "water_params.json"))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{root / 'water_params.json'}: {exc}") from exc
    tracks = load_tracks(root / "tracks.json") if (root / "tracks.json").exists() else None
    if tracks is not None:
        for t in tracks:
            for i, (u, v) in t.observations:
                if not (0 <= i < len(names) and 0 <= u < intr.width and 0 <= v < intr.height):
                    raise DatasetError(f"{root / 'tracks.json'}: track {t.feature_id} observation "
                                       f"({i}, {u}, {v}) out of bounds")
    board = load_colorboard(root / "colorboard.json") if (root / "colorboard.json").exists() else None
    scene = _load_json(root / "scene.json") if (root / "scene.json").exists() else {}

    return PosedDataset(
        intrinsics=intr,
        poses=np.stack(poses),
        images=np.stack(images),
        names=names,
        splits=splits,
        near=near,
        far=far,
        in_air=optional_stack("in_air", read_image, hw3),
        equalized=optional_stack("equalized", read_image, hw3),
        depths=depths,
        water_params=water,
        tracks=tracks,
        colorboard=board,
        meta=scene,
    )
