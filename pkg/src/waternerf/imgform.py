"""Underwater image formation: forward degradation and inverse restoration.

An observed underwater color is modelled per channel as

    I = t * J + (1 - t) * A,    t = exp(-beta * D)

where ``J`` is the in-air radiance, ``A`` the veiling light, ``beta`` the
attenuation coefficient and ``D`` the along-ray range in meters.

All functions broadcast: ``range_`` may be a scalar or an array of shape
``(...,)`` and colors have a trailing channel axis of length 3.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T_FLOOR = 1e-3


@dataclass(frozen=True)
class WaterParams:
    """Per-channel attenuation (1/m) and veiling light, both RGB ordered."""

    beta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    veiling: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        veiling = np.asarray(self.veiling, dtype=np.float64).reshape(-1)
        if beta.shape != (3,) or veiling.shape != (3,):
            raise ValueError("beta and veiling must be 3-vectors")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(veiling))):
            raise ValueError("water parameters must be finite")
        if np.any(beta < 0):
            raise ValueError(f"beta must be non-negative, got {beta.tolist()}")
        if np.any(veiling < 0) or np.any(veiling > 1):
            raise ValueError(f"veiling light must lie in [0, 1], got {veiling.tolist()}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "veiling", veiling)

    @classmethod
    def from_vector(cls, x) -> "WaterParams":
        """Build from the flat ``(beta_r, beta_g, beta_b, A_r, A_g, A_b)`` layout."""
        x = np.asarray(x, dtype=np.float64)
        return cls(beta=x[:3], veiling=x[3:6])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.beta, self.veiling])

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "veiling": self.veiling.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WaterParams":
        return cls(beta=d["beta"], veiling=d["veiling"])


def _check_range(range_) -> np.ndarray:
    d = np.asarray(range_, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("range must be finite")
    if np.any(d < 0):
        raise ValueError("range must be non-negative")
    return d


def transmission(params: WaterParams, range_) -> np.ndarray:
    """Per-channel transmission ``exp(-beta * D)``, shape ``range_.shape + (3,)``."""
    d = _check_range(range_)
    return np.exp(-params.beta * d[..., None])


def degrade(in_air, params: WaterParams, range_) -> np.ndarray:
    """Apply the water column to in-air colors at the given ranges."""
    j = np.asarray(in_air, dtype=np.float64)
    t = transmission(params, range_)
    return t * j + (1.0 - t) * params.veiling


def restore(observed, params: WaterParams, range_, t_floor: float = DEFAULT_T_FLOOR) -> np.ndarray:
    """Invert :func:`degrade`.

    The transmission is clamped from below by ``t_floor`` so that colors at
    extreme range are not amplified without bound. No clipping to [0, 1] is
    applied here; do that at export time.
    """
    if not t_floor > 0:
        raise ValueError("t_floor must be positive")
    i = np.asarray(observed, dtype=np.float64)
    t = transmission(params, range_)
    return (i - (1.0 - t) * params.veiling) / np.maximum(t, t_floor)
