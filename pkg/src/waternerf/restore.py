"""Color correction: histogram-equalized references and water-parameter fitting.

The water parameters are found by minimising the Sinkhorn loss between the
corrected colors ``restore(C, params, D)`` of rendered pixels and a
reference color distribution pooled from per-channel histogram-equalized
images. Every candidate distribution is produced through the image
formation model, so the fit can only move along physically valid
corrections; nothing is matched pixel by pixel.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .imgform import DEFAULT_T_FLOOR, WaterParams, restore
from .sinkhorn import DiscreteDistribution, SinkhornConfig, sinkhorn_solve

log = logging.getLogger(__name__)

N_BINS = 256
MIN_PROBLEM_SIZE = 64


def _bin_index(x):
    return np.clip(np.floor(np.asarray(x) * N_BINS).astype(int), 0, N_BINS - 1)


def channel_cdfs(image) -> np.ndarray:
    """Empirical 256-bin CDF of each channel, shape ``(C, 256)``."""
    img = np.asarray(image, dtype=np.float64)
    flat = img.reshape(-1, img.shape[-1])
    out = np.empty((flat.shape[1], N_BINS))
    for c in range(flat.shape[1]):
        hist = np.bincount(_bin_index(flat[:, c]), minlength=N_BINS)
        out[c] = np.cumsum(hist) / hist.sum()
    return out


def histogram_equalize(image, cdfs: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-channel global histogram equalization.

    Each value is replaced by the fraction of the channel's pixels that fall
    in its bin or below, so the mapping is monotone and lands in (0, 1].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError("histogram_equalize expects values in [0, 1]")
    if cdfs is None:
        cdfs = channel_cdfs(img)
    out = np.empty_like(img)
    for c in range(img.shape[-1]):
        out[..., c] = cdfs[c][_bin_index(img[..., c])]
    return out


@dataclass
class EqualizedReference:
    images: list
    source_ids: list
    cdfs: np.ndarray

    def pooled_pixels(self) -> np.ndarray:
        return np.concatenate([im.reshape(-1, 3) for im in self.images], axis=0)

    def distribution(self, n_samples: int, rng: np.random.Generator) -> DiscreteDistribution:
        """Uniform subsample of the pooled equalized pixels of all images."""
        pix = self.pooled_pixels()
        n = min(n_samples, len(pix))
        idx = np.sort(rng.choice(len(pix), size=n, replace=False))
        return DiscreteDistribution.uniform(pix[idx])


def build_reference(images: Sequence[np.ndarray], source_ids=None) -> EqualizedReference:
    ids = list(range(len(images))) if source_ids is None else list(source_ids)
    cdfs = np.stack([channel_cdfs(im) for im in images])
    eq = [histogram_equalize(im, c) for im, c in zip(images, cdfs)]
    return EqualizedReference(images=eq, source_ids=ids, cdfs=cdfs)


def corrected_distribution(params: WaterParams, colors, ranges, t_floor: float = DEFAULT_T_FLOOR) -> DiscreteDistribution:
    """Uniformly weighted distribution of restored colors."""
    return DiscreteDistribution.uniform(restore(colors, params, ranges, t_floor))


def correct_rendered_view(colors, ranges, params: WaterParams, t_floor: float = DEFAULT_T_FLOOR) -> np.ndarray:
    """Restore a rendered (H, W, 3) view using its (H, W) range map; clipped to [0, 1]."""
    colors = np.asarray(colors, dtype=np.float64)
    ranges = np.asarray(ranges, dtype=np.float64)
    if colors.shape[:-1] != ranges.shape:
        raise ValueError(f"color shape {colors.shape} does not match range shape {ranges.shape}")
    return np.clip(restore(colors, params, np.maximum(ranges, 0.0), t_floor), 0.0, 1.0)


@dataclass
class CorrectionProblem:
    colors: np.ndarray
    ranges: np.ndarray
    reference: DiscreteDistribution
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    method: str = "nelder-mead"
    max_evals: int = 1500
    beta_max: float = 5.0
    t_floor: float = DEFAULT_T_FLOOR
    init: Optional[WaterParams] = None
    restarts: int = 1

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.ranges = np.asarray(self.ranges, dtype=np.float64).reshape(-1)
        if len(self.colors) != len(self.ranges):
            raise ValueError("colors and ranges must have the same length")
        if len(self.colors) < MIN_PROBLEM_SIZE:
            raise ValueError(f"need at least {MIN_PROBLEM_SIZE} pixels, got {len(self.colors)}")
        if self.method not in ("nelder-mead", "fd-gd"):
            raise ValueError(f"unknown method {self.method!r}")

    def config_dict(self) -> dict:
        return {
            "method": self.method,
            "max_evals": self.max_evals,
            "beta_max": self.beta_max,
            "t_floor": self.t_floor,
            "restarts": self.restarts,
            "n_pixels": len(self.colors),
            "n_reference": len(self.reference),
            "sinkhorn": self.sinkhorn.to_dict(),
        }


def sample_problem(colors, ranges, reference: EqualizedReference | DiscreteDistribution, rng: np.random.Generator,
                   n_samples: int = 1024, **kwargs) -> CorrectionProblem:
    """Subsample pixels (and reference colors) uniformly into a problem."""
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    ranges = np.asarray(ranges, dtype=np.float64).reshape(-1)
    n = min(n_samples, len(colors))
    idx = np.sort(rng.choice(len(colors), size=n, replace=False))
    if isinstance(reference, EqualizedReference):
        reference = reference.distribution(n_samples, rng)
    return CorrectionProblem(colors=colors[idx], ranges=ranges[idx], reference=reference, **kwargs)


def initial_params(colors, ranges, beta_max: float = 5.0, n_bins: int = 8) -> WaterParams:
    """Heuristic starting point.

    beta: negative slope of log channel mean against range, fitted over
    range-quantile bins. Veiling light: mean color of the darkest quarter
    of the pixels.
    """
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    ranges = np.asarray(ranges, dtype=np.float64).reshape(-1)
    edges = np.quantile(ranges, np.linspace(0, 1, n_bins + 1))
    which = np.clip(np.searchsorted(edges, ranges, side="right") - 1, 0, n_bins - 1)
    d, m = [], []
    for k in range(n_bins):
        sel = which == k
        if sel.any():
            d.append(ranges[sel].mean())
            m.append(colors[sel].mean(axis=0))
    d = np.array(d)
    m = np.log(np.maximum(np.array(m), 1e-6))
    if len(d) >= 2 and np.ptp(d) > 0:
        slope = np.polyfit(d, m, 1)[0]
        beta = np.clip(-slope, 0.0, beta_max)
    else:
        beta = np.zeros(3)
    intensity = colors.mean(axis=1)
    dark = intensity <= np.quantile(intensity, 0.25)
    veiling = np.clip(colors[dark].mean(axis=0), 0.0, 1.0)
    return WaterParams(beta=beta, veiling=veiling)


@dataclass
class EstimateResult:
    params: WaterParams
    loss: float
    init: WaterParams
    init_loss: float
    improved: bool
    n_evals: int
    # best loss after each optimizer iteration (non-increasing)
    trace: list

    def to_dict(self, config: Optional[dict] = None) -> dict:
        return {
            "beta": self.params.beta.tolist(),
            "veiling": self.params.veiling.tolist(),
            "loss": float(self.loss),
            "improved": bool(self.improved),
            "n_evals": int(self.n_evals),
            "init": self.init.to_dict(),
            "init_loss": float(self.init_loss),
            "trace": [float(v) for v in self.trace],
            "config": config or {},
        }


class _Objective:
    def __init__(self, problem: CorrectionProblem):
        self.p = problem
        self.lo = np.zeros(6)
        self.hi = np.array([problem.beta_max] * 3 + [1.0] * 3)
        self.cache = {}
        self.best_x = None
        self.best_f = np.inf

    def clip(self, x):
        return np.clip(np.asarray(x, dtype=np.float64), self.lo, self.hi)

    def __call__(self, x):
        x = self.clip(x)
        key = x.tobytes()
        if key not in self.cache:
            mu = corrected_distribution(WaterParams.from_vector(x), self.p.colors, self.p.ranges, self.p.t_floor)
            f = sinkhorn_solve(mu, self.p.reference, self.p.sinkhorn).cost
            self.cache[key] = f
            if f < self.best_f:
                self.best_f, self.best_x = f, x.copy()
        return self.cache[key]

    @property
    def n_evals(self):
        return len(self.cache)


def _simplex(x0, lo, hi):
    steps = np.array([0.1, 0.1, 0.1, 0.05, 0.05, 0.05])
    steps = np.maximum(steps, 0.25 * np.abs(x0))
    pts = [x0]
    for i in range(6):
        x = x0.copy()
        x[i] = x0[i] + steps[i] if x0[i] + steps[i] <= hi[i] else x0[i] - steps[i]
        pts.append(x)
    return np.array(pts)


def _nelder_mead(obj: _Objective, x0, max_evals, restarts, trace):
    x = x0
    for _ in range(restarts + 1):
        budget = max_evals - obj.n_evals
        if budget <= 7:
            break
        minimize(
            obj,
            x,
            method="Nelder-Mead",
            bounds=list(zip(obj.lo, obj.hi)),
            callback=lambda xk: trace.append(obj.best_f),
            options={
                "initial_simplex": _simplex(x, obj.lo, obj.hi),
                "maxfev": budget,
                "xatol": 1e-5,
                "fatol": 1e-10,
                "adaptive": True,
            },
        )
        if obj.best_x is not None and np.allclose(obj.best_x, x, atol=1e-6):
            break
        x = obj.best_x


def _fd_descent(obj: _Objective, x0, max_evals, trace, h=1e-4):
    x = obj.clip(x0)
    f = obj(x)
    step = 0.05
    while obj.n_evals + 13 <= max_evals and step > 1e-8:
        grad = np.empty(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            grad[i] = (obj(x + e) - obj(x - e)) / (2 * h)
        norm = np.linalg.norm(grad)
        if norm == 0:
            break
        while obj.n_evals < max_evals:
            cand = obj.clip(x - step * grad / norm)
            fc = obj(cand)
            if fc < f:
                x, f = cand, fc
                step *= 1.5
                break
            step *= 0.5
            if step <= 1e-8:
                break
        trace.append(obj.best_f)


def estimate_params(problem: CorrectionProblem) -> EstimateResult:
    """Fit (beta, veiling) by minimising the Sinkhorn loss of the corrected colors.

    Returns the best point found. If nothing beats the starting point the
    start is returned with ``improved=False``.
    """
    obj = _Objective(problem)
    init = problem.init or initial_params(problem.colors, problem.ranges, problem.beta_max)
    x0 = obj.clip(init.to_vector())
    init = WaterParams.from_vector(x0)
    f0 = obj(x0)
    trace = [f0]
    if problem.method == "nelder-mead":
        _nelder_mead(obj, x0, problem.max_evals, problem.restarts, trace)
    else:
        _fd_descent(obj, x0, problem.max_evals, trace)
    improved = obj.best_f < f0
    best = WaterParams.from_vector(obj.best_x) if improved else init
    if not improved:
        log.warning("water parameter fit did not improve on its initialization")
    log.info("water fit: %d evals, loss %.6g -> %.6g", obj.n_evals, f0, obj.best_f)
    return EstimateResult(
        params=best,
        loss=float(obj.best_f),
        init=init,
        init_loss=float(f0),
        improved=bool(improved),
        n_evals=obj.n_evals,
        trace=trace,
    )


def save_params(path, result: EstimateResult, config: Optional[dict] = None) -> None:
    Path(path).write_text(json.dumps(result.to_dict(config), indent=2, sort_keys=True) + "\n")


def load_params(path) -> WaterParams:
    try:
        d = json.loads(Path(path).read_text())
        return WaterParams.from_dict(d)
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"{path}: invalid water parameter file ({exc})") from exc
