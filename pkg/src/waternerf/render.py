"""Volume-rendering quadrature over per-ray interval boundaries.

For boundaries ``t_0 < ... < t_K`` a field is queried once per interval at
its midpoint, and with ``delta_k = t_{k+1} - t_k``

    T_k = exp(-sum_{k' < k} sigma_k' * delta_k')
    w_k = T_k * (1 - exp(-sigma_k * delta_k))
    C   = sum_k w_k c_k
    D   = sum_k w_k (t_k + t_{k+1}) / 2

Nothing is composited onto a background: rays that do not saturate keep
opacity ``sum_k w_k < 1``.

Batched functions take boundaries of shape ``(R, K + 1)``, densities of
shape ``(R, K)`` and colors of shape ``(R, K, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import numpy as np

from .geometry import Ray


class RadianceField(Protocol):
    def query(self, positions: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map ``(N, 3)`` positions and unit directions to ``(N,)`` sigma and ``(N, 3)`` color."""
        ...


class FunctionField:
    """Radiance field from plain functions of position (and direction)."""

    def __init__(self, sigma_fn: Callable, color_fn: Callable):
        self.sigma_fn = sigma_fn
        self.color_fn = color_fn

    def query(self, positions, directions):
        sigma = np.asarray(self.sigma_fn(positions), dtype=np.float64)
        color = np.asarray(self.color_fn(positions, directions), dtype=np.float64)
        return np.broadcast_to(sigma, positions.shape[:-1]), np.broadcast_to(color, positions.shape)


class VoxelField:
    """Nearest-cell lookup in a dense grid over an axis-aligned box.

    Points outside the box have zero density and black color.
    """

    def __init__(self, sigma: np.ndarray, color: np.ndarray, lo, hi):
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.color = np.asarray(color, dtype=np.float64)
        if self.color.shape != self.sigma.shape + (3,):
            raise ValueError("color grid must be sigma grid shape + (3,)")
        if np.any(self.sigma < 0):
            raise ValueError("densities must be non-negative")
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)

    def query(self, positions, directions):
        shape = np.array(self.sigma.shape)
        rel = (positions - self.lo) / (self.hi - self.lo)
        inside = np.all((rel >= 0) & (rel < 1), axis=-1)
        idx = np.clip(np.floor(rel * shape).astype(int), 0, shape - 1)
        sigma = np.where(inside, self.sigma[idx[..., 0], idx[..., 1], idx[..., 2]], 0.0)
        color = np.where(inside[..., None], self.color[idx[..., 0], idx[..., 1], idx[..., 2]], 0.0)
        return sigma, color


@dataclass
class SampleSet:
    boundaries: np.ndarray
    sigma: np.ndarray
    color: np.ndarray
    transmittance: np.ndarray
    weights: np.ndarray

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.boundaries[..., 1:] + self.boundaries[..., :-1])


@dataclass
class RayRender:
    color: np.ndarray
    depth: float
    opacity: float
    samples: SampleSet


def stratified_samples(near, far, count: int, rng: Optional[np.random.Generator] = None,
                       jitter: bool = True) -> np.ndarray:
    """Boundaries partitioning ``[near, far]`` into ``count`` jittered intervals.

    One sample is drawn uniformly in each of ``count`` equal strata and the
    interior boundaries are placed halfway between consecutive samples, so
    without jitter this is the uniform partition. ``near``/``far`` may be
    arrays of shape ``(R,)``; the result is ``(R, count + 1)``.
    """
    if count < 2:
        raise ValueError("need at least two samples per ray")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    batch = np.broadcast_shapes(near.shape, far.shape)
    u = np.linspace(0.0, 1.0, count + 1)
    offsets = np.full(batch + (count,), 0.5)
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        offsets = rng.random(batch + (count,))
    s = (np.arange(count) + offsets) / count
    s = np.clip(s, u[:-1], u[1:])
    frac = np.concatenate(
        [np.zeros(batch + (1,)), 0.5 * (s[..., 1:] + s[..., :-1]), np.ones(batch + (1,))], axis=-1
    )
    return near[..., None] + (far - near)[..., None] * frac


def importance_samples(boundaries, weights, count: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Inverse-CDF samples from the piecewise-constant PDF given by ``weights``.

    Returns the new samples merged with ``boundaries`` and sorted, shape
    ``(R, K + 1 + count)``. Rays whose weights are all zero sample uniformly.
    Without ``rng`` the samples are evenly spaced in CDF space.
    """
    bounds = np.asarray(boundaries, dtype=np.float64)
    w = np.maximum(np.asarray(weights, dtype=np.float64), 0.0)
    squeeze = bounds.ndim == 1
    if squeeze:
        bounds, w = bounds[None], w[None]
    total = w.sum(axis=-1, keepdims=True)
    pdf = np.where(total > 0, w / np.where(total > 0, total, 1.0), 1.0 / w.shape[-1])
    cdf = np.concatenate([np.zeros(pdf.shape[:-1] + (1,)), np.cumsum(pdf, axis=-1)], axis=-1)
    cdf[..., -1] = 1.0
    if rng is None:
        u = np.broadcast_to((np.arange(count) + 0.5) / count, pdf.shape[:-1] + (count,))
    else:
        u = rng.random(pdf.shape[:-1] + (count,))
    # interval index containing each u; zero-mass intervals are never chosen
    idx = np.sum(cdf[..., None, 1:-1] <= u[..., :, None], axis=-1)
    lo = np.take_along_axis(cdf, idx, axis=-1)
    p = np.take_along_axis(pdf, idx, axis=-1)
    frac = np.where(p > 0, (u - lo) / np.where(p > 0, p, 1.0), 0.5)
    t_lo = np.take_along_axis(bounds, idx, axis=-1)
    t_hi = np.take_along_axis(bounds, idx + 1, axis=-1)
    new = t_lo + np.clip(frac, 0.0, 1.0) * (t_hi - t_lo)
    merged = np.sort(np.concatenate([bounds, new], axis=-1), axis=-1)
    return merged[0] if squeeze else merged


@dataclass
class Composite:
    color: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    weights: np.ndarray
    transmittance: np.ndarray
    # transmittance after each interval, T_{k+1}; kept for the backward pass
    trans_after: np.ndarray
    deltas: np.ndarray


def composite(sigma, color, boundaries) -> Composite:
    """Accumulate color, depth and opacity along each ray."""
    t = np.asarray(boundaries)
    deltas = t[..., 1:] - t[..., :-1]
    tau = sigma * deltas
    cum = np.cumsum(tau, axis=-1)
    trans_after = np.exp(-cum)
    trans = np.concatenate([np.ones_like(cum[..., :1]), trans_after[..., :-1]], axis=-1)
    weights = trans * -np.expm1(-tau)
    mids = 0.5 * (t[..., 1:] + t[..., :-1])
    return Composite(
        color=np.einsum("...k,...kc->...c", weights, color),
        depth=np.sum(weights * mids, axis=-1),
        opacity=np.sum(weights, axis=-1),
        weights=weights,
        transmittance=trans,
        trans_after=trans_after,
        deltas=deltas,
    )


def composite_backward(comp: Composite, color, grad_color) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of a loss w.r.t. per-interval sigma and color given dL/dC.

    dC/dc_k = w_k and dC/dsigma_j = delta_j (T_{j+1} c_j - sum_{k>j} w_k c_k).
    """
    grad_c = comp.weights[..., None] * grad_color[..., None, :]
    g_dot_c = np.einsum("...kc,...c->...k", color, grad_color)
    wc = comp.weights * g_dot_c
    # suffix sums over k > j
    after = np.cumsum(wc[..., ::-1], axis=-1)[..., ::-1] - wc
    grad_sigma = comp.deltas * (comp.trans_after * g_dot_c - after)
    return grad_sigma, grad_c


def render_rays(field: RadianceField, origins, directions, boundaries) -> tuple[Composite, np.ndarray, np.ndarray]:
    """Query ``field`` at interval midpoints and composite; returns (comp, sigma, color)."""
    t = np.asarray(boundaries, dtype=np.float64)
    mids = 0.5 * (t[..., 1:] + t[..., :-1])
    pts = origins[..., None, :] + mids[..., None] * directions[..., None, :]
    dirs = np.broadcast_to(directions[..., None, :], pts.shape)
    sigma, color = field.query(pts.reshape(-1, 3), dirs.reshape(-1, 3))
    sigma = np.asarray(sigma).reshape(mids.shape)
    color = np.asarray(color).reshape(mids.shape + (3,))
    return composite(sigma, color, t), sigma, color


def render_ray(field: RadianceField, boundaries, ray: Ray) -> RayRender:
    t = np.asarray(boundaries, dtype=np.float64)
    if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) < 0):
        raise ValueError("boundaries must be a sorted 1-D array of length >= 2")
    comp, sigma, color = render_rays(field, ray.origin[None], ray.direction[None], t[None])
    samples = SampleSet(
        boundaries=t,
        sigma=sigma[0],
        color=color[0],
        transmittance=comp.transmittance[0],
        weights=comp.weights[0],
    )
    return RayRender(
        color=comp.color[0],
        depth=float(comp.depth[0]),
        opacity=float(comp.opacity[0]),
        samples=samples,
    )
