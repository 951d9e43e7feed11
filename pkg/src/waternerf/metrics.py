"""Color-correction quality metrics.

UIQM components
---------------
Images are scaled to [0, 255] before the components are computed, and
blocks are ``block`` x ``block`` pixels (edge remainders are dropped).

* UICM (colorfulness): with ``RG = R - G`` and ``YB = (R + G) / 2 - B``,
  ``-0.0268 * sqrt(mu_RG^2 + mu_YB^2) + 0.1586 * sqrt(s_RG^2 + s_YB^2)``
  where ``mu`` is the asymmetric alpha-trimmed mean (10 % trimmed from each
  tail) and ``s^2`` the spread about that mean.
* UISM (sharpness): ``0.299 EME(R_e) + 0.587 EME(G_e) + 0.114 EME(B_e)``;
  ``X_e`` is the channel multiplied by its Sobel magnitude (rescaled to
  [0, 255]) and ``EME = 2 / (k1 k2) * sum log(max / min)`` over blocks,
  skipping blocks whose min or max is zero.
* UIConM (contrast): log-AMEE of the intensity image,
  ``-1 / (k1 k2) * sum r log r`` with ``r = (max - min) / (max + min)``
  formed with PLIP subtraction/addition (gamma = k = 1026); blocks with
  ``r = 0`` contribute zero.

The weighted sum uses c1 = 0.282, c2 = 0.2953, c3 = 3.5753.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

UIQM_C1 = 0.282
UIQM_C2 = 0.2953
UIQM_C3 = 3.5753
PSNR_CAP = 100.0
_PLIP_GAMMA = 1026.0


def angular_error(measured, truth) -> float:
    """Angle in degrees between two RGB vectors; ignores their magnitudes."""
    a = np.asarray(measured, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if np.linalg.norm(a) == 0 or np.linalg.norm(b) == 0:
        raise ValueError("angular error is undefined for a zero color")
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b))))


def region_mean(image, region) -> np.ndarray:
    """Mean color of the pixel rectangle ``(x0, y0, x1, y1)``, end-exclusive."""
    x0, y0, x1, y1 = (int(r) for r in region)
    img = np.asarray(image)
    if not (0 <= x0 < x1 <= img.shape[1] and 0 <= y0 < y1 <= img.shape[0]):
        raise ValueError(f"region {region} outside image of shape {img.shape[:2]}")
    return img[y0:y1, x0:x1].reshape(-1, img.shape[-1]).mean(axis=0)


@dataclass
class Patch:
    name: str
    truth: np.ndarray
    # image id -> (x0, y0, x1, y1)
    regions: dict = field(default_factory=dict)


@dataclass
class ColorBoardSpec:
    patches: list

    def to_dict(self) -> dict:
        return {
            "patches": [
                {
                    "name": p.name,
                    "truth": [float(c) for c in p.truth],
                    "regions": {str(k): [int(r) for r in v] for k, v in p.regions.items()},
                }
                for p in self.patches
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColorBoardSpec":
        patches = []
        for p in d["patches"]:
            truth = np.asarray(p["truth"], dtype=np.float64)
            if truth.shape != (3,) or not np.any(truth != 0):
                raise ValueError(f"patch {p.get('name')!r}: truth must be a nonzero RGB triple")
            regions = {int(k): tuple(int(r) for r in v) for k, v in p["regions"].items()}
            patches.append(Patch(name=p["name"], truth=truth, regions=regions))
        return cls(patches)


def colorboard_errors(images, board: ColorBoardSpec, image_ids=None) -> dict:
    """Region-averaged angular error per patch, averaged over images.

    ``images`` maps image id to an (H, W, 3) array (a list is indexed by
    position). Only ids in ``image_ids`` are used when it is given.
    """
    lookup = images if isinstance(images, dict) else dict(enumerate(images))
    per_patch = {}
    for patch in board.patches:
        errs = [
            angular_error(region_mean(lookup[i], region), patch.truth)
            for i, region in sorted(patch.regions.items())
            if i in lookup and (image_ids is None or i in image_ids)
        ]
        if errs:
            per_patch[patch.name] = float(np.mean(errs))
    if not per_patch:
        raise ValueError("no colorboard patch is visible in the given images")
    return {"per_patch": per_patch, "mean": float(np.mean(list(per_patch.values())))}


def _trimmed_mean(x, alpha_l=0.1, alpha_r=0.1):
    x = np.sort(x)
    k = len(x)
    lo = int(np.ceil(alpha_l * k))
    hi = k - int(np.floor(alpha_r * k))
    return float(x[lo:hi].mean())


def uicm(image) -> float:
    img = np.asarray(image, dtype=np.float64) * 255.0
    r, g, b = img[..., 0].ravel(), img[..., 1].ravel(), img[..., 2].ravel()
    rg = r - g
    yb = 0.5 * (r + g) - b
    mu_rg, mu_yb = _trimmed_mean(rg), _trimmed_mean(yb)
    s_rg = np.mean((rg - mu_rg) ** 2)
    s_yb = np.mean((yb - mu_yb) ** 2)
    return float(-0.0268 * np.hypot(mu_rg, mu_yb) + 0.1586 * np.sqrt(s_rg + s_yb))


def _blocks(x, block):
    k2, k1 = x.shape[0] // block, x.shape[1] // block
    if k1 == 0 or k2 == 0:
        # image smaller than one block: treat it as a single block
        return x[None, None], 1, 1
    x = x[: k2 * block, : k1 * block]
    return x.reshape(k2, block, k1, block).swapaxes(1, 2), k1, k2


def _eme(x, block):
    b, k1, k2 = _blocks(x, block)
    bmax = b.max(axis=(2, 3))
    bmin = b.min(axis=(2, 3))
    ok = (bmin > 0) & (bmax > 0)
    return float(2.0 / (k1 * k2) * np.sum(np.log(bmax[ok] / bmin[ok])))


def _sobel_mag(x):
    mag = np.hypot(ndimage.sobel(x, 0), ndimage.sobel(x, 1))
    peak = mag.max()
    return mag * (255.0 / peak) if peak > 0 else mag


def uism(image, block: int = 8) -> float:
    img = np.asarray(image, dtype=np.float64) * 255.0
    weights = (0.299, 0.587, 0.114)
    return float(sum(w * _eme(img[..., c] * _sobel_mag(img[..., c]) / 255.0, block)
                     for c, w in enumerate(weights)))


def uiconm(image, block: int = 8) -> float:
    img = np.asarray(image, dtype=np.float64) * 255.0
    gray = img @ np.array([0.299, 0.587, 0.114])
    b, k1, k2 = _blocks(gray, block)
    bmax = b.max(axis=(2, 3))
    bmin = b.min(axis=(2, 3))
    g = _PLIP_GAMMA
    diff = g * (bmax - bmin) / (g - bmin)
    summ = bmax + bmin - bmax * bmin / g
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(summ > 0, diff / summ, 0.0)
        terms = np.where(r > 0, r * np.log(r), 0.0)
    return float(-np.sum(terms) / (k1 * k2))


def uiqm(image, block: int = 8) -> dict:
    """UIQM and its three components for an RGB image in [0, 1]."""
    c, s, k = uicm(image), uism(image, block), uiconm(image, block)
    return {
        "uiqm": UIQM_C1 * c + UIQM_C2 * s + UIQM_C3 * k,
        "uicm": c,
        "uism": s,
        "uiconm": k,
    }


@dataclass
class PixelTrack:
    feature_id: int
    # (image id, (u, v)) in continuous image coordinates
    observations: list

    def __post_init__(self):
        if len(self.observations) < 2:
            raise ValueError(f"track {self.feature_id} needs at least two observations")

    def to_dict(self) -> dict:
        return {
            "id": int(self.feature_id),
            "observations": [{"image": int(i), "uv": [float(uv[0]), float(uv[1])]} for i, uv in self.observations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PixelTrack":
        return cls(int(d["id"]), [(int(o["image"]), (float(o["uv"][0]), float(o["uv"][1]))) for o in d["observations"]])


def sample_pixel(image, uv) -> np.ndarray:
    """Color of the pixel containing continuous point ``uv``."""
    img = np.asarray(image)
    col = min(int(np.floor(uv[0])), img.shape[1] - 1)
    row = min(int(np.floor(uv[1])), img.shape[0] - 1)
    if col < 0 or row < 0:
        raise ValueError(f"track coordinate {uv} outside image")
    return img[row, col]


def scene_consistency(images, tracks) -> dict:
    """Mean over tracks of the per-channel std of L2-normalized track colors.

    ``images`` maps image id to an (H, W, 3) array (or is a list indexed by
    position). Observations falling on images not supplied are ignored, and
    tracks left with fewer than two observations are dropped.
    """
    lookup = images if isinstance(images, dict) else dict(enumerate(images))
    stds = []
    for track in tracks:
        vals = np.array([sample_pixel(lookup[i], uv) for i, uv in track.observations if i in lookup],
                        dtype=np.float64)
        if len(vals) < 2:
            continue
        norms = np.linalg.norm(vals, axis=1, keepdims=True)
        unit = vals / np.maximum(norms, 1e-12)
        stds.append(unit.std(axis=0))
    if not stds:
        raise ValueError("scene consistency needs at least one track with two observations")
    scm = np.mean(stds, axis=0)
    return {"scm_r": float(scm[0]), "scm_g": float(scm[1]), "scm_b": float(scm[2]), "n_tracks": len(stds)}


def psnr(pred, truth) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at ``PSNR_CAP``."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))
