"""Trainable radiance field: frequency encoding, a small MLP with a hand
written backward pass, and the training loop.

Network layout (``depth`` trunk layers of ``width`` units)::

    enc(x) -> [softplus(W h + b)] * depth -> h
    sigma = softplus(w_s . h + b_s)
    color = sigmoid(W_c softplus(W_h [h, enc(d)] + b_h) + b_c)

``act`` is ReLU or softplus. Positions are mapped into the unit cube
``(x - center) / scale`` before encoding.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .dataset import PosedDataset
from .geometry import CameraIntrinsics, image_rays
from .imgform import DEFAULT_T_FLOOR, WaterParams
from .render import composite, composite_backward, importance_samples, stratified_samples
from .restore import build_reference, estimate_params, sample_problem
from .sinkhorn import SinkhornConfig

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "waternerf-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_MODES = ("underwater_mse", "histeq_mse", "joint")


def softplus(x):
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


sigmoid = expit

ACTIVATIONS = ("relu", "softplus")


def _act(x, kind):
    return np.maximum(x, 0) if kind == "relu" else softplus(x)


def _act_grad(dy, pre, kind):
    if kind == "relu":
        return dy * (pre > 0)
    return dy * sigmoid(pre)


def positional_encoding(v, num_freqs: int) -> np.ndarray:
    """``[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]``."""
    v = np.asarray(v)
    if num_freqs == 0:
        return v
    freqs = (2.0 ** np.arange(num_freqs)) * np.pi
    scaled = v[..., None, :] * freqs.astype(v.dtype)[:, None]
    sc = np.stack([np.sin(scaled), np.cos(scaled)], axis=-2)
    return np.concatenate([v, sc.reshape(v.shape[:-1] + (-1,))], axis=-1)


def encoded_size(dim: int, num_freqs: int) -> int:
    return dim * (2 * num_freqs + 1)


@dataclass(frozen=True)
class MlpArch:
    pos_freqs: int = 10
    dir_freqs: int = 4
    depth: int = 4
    width: int = 128
    color_width: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if min(self.depth, self.width, self.color_width) < 1 or min(self.pos_freqs, self.dir_freqs) < 0:
            raise ValueError("layer sizes must be positive and frequency counts non-negative")

    @property
    def pos_dim(self) -> int:
        return encoded_size(3, self.pos_freqs)

    @property
    def dir_dim(self) -> int:
        return encoded_size(3, self.dir_freqs)

    def layer_shapes(self) -> dict:
        shapes = {}
        fan_in = self.pos_dim
        for i in range(self.depth):
            shapes[f"trunk{i}"] = (fan_in, self.width)
            fan_in = self.width
        shapes["sigma"] = (self.width, 1)
        shapes["color_hidden"] = (self.width + self.dir_dim, self.color_width)
        shapes["color_out"] = (self.color_width, 3)
        return shapes


@dataclass
class MlpParams:
    """Weights ``W[name]`` (fan_in x fan_out) and biases ``b[name]`` per layer."""

    arch: MlpArch
    W: dict
    b: dict

    @classmethod
    def init(cls, arch: MlpArch, rng: np.random.Generator, dtype=np.float64) -> "MlpParams":
        W, b = {}, {}
        for name, (fan_in, fan_out) in arch.layer_shapes().items():
            bound = math.sqrt(6.0 / fan_in)
            W[name] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
            b[name] = np.zeros(fan_out, dtype=dtype)
        return cls(arch, W, b)

    @classmethod
    def zeros(cls, arch: MlpArch, dtype=np.float64) -> "MlpParams":
        shapes = arch.layer_shapes()
        return cls(arch, {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()},
                   {k: np.zeros(s[1], dtype=dtype) for k, s in shapes.items()})

    def names(self) -> list:
        return list(self.arch.layer_shapes())

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(self.arch, {k: v.astype(dtype) for k, v in self.W.items()},
                         {k: v.astype(dtype) for k, v in self.b.items()})

    def copy(self) -> "MlpParams":
        return self.astype(self.dtype)

    @property
    def dtype(self):
        return next(iter(self.W.values())).dtype

    def flat(self) -> list:
        """All parameter arrays in a fixed order (W then b per layer)."""
        return [a for n in self.names() for a in (self.W[n], self.b[n])]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.flat())


@dataclass
class MlpCache:
    trunk_in: list
    trunk_pre: list
    h: np.ndarray
    sigma_pre: np.ndarray
    color_in: np.ndarray
    color_pre: np.ndarray
    color_hidden: np.ndarray
    color: np.ndarray


def mlp_forward(params: MlpParams, enc_pos, enc_dir, return_cache: bool = False, density_offset=None):
    """Density ``(N,)`` and color ``(N, 3)`` for encoded inputs.

    ``density_offset`` is added to the raw density before the softplus
    (training-time noise); the cache keeps the shifted value so the
    backward pass stays exact.
    """
    arch = params.arch
    enc_pos = np.asarray(enc_pos)
    enc_dir = np.asarray(enc_dir)
    if enc_pos.shape[-1] != arch.pos_dim or enc_dir.shape[-1] != arch.dir_dim:
        raise ValueError(f"encoding sizes {enc_pos.shape[-1]}, {enc_dir.shape[-1]} do not match "
                         f"architecture ({arch.pos_dim}, {arch.dir_dim})")
    if enc_pos.shape[:-1] != enc_dir.shape[:-1]:
        raise ValueError("position and direction batches differ in size")
    W, b = params.W, params.b
    h = enc_pos
    ins, pres = [], []
    for i in range(arch.depth):
        z = h @ W[f"trunk{i}"] + b[f"trunk{i}"]
        ins.append(h)
        pres.append(z)
        h = _act(z, arch.activation)
    zs = (h @ W["sigma"] + b["sigma"])[..., 0]
    if density_offset is not None:
        zs = zs + density_offset
    sigma = softplus(zs)
    cin = np.concatenate([h, enc_dir], axis=-1)
    zc = cin @ W["color_hidden"] + b["color_hidden"]
    hc = _act(zc, arch.activation)
    color = sigmoid(hc @ W["color_out"] + b["color_out"])
    if not return_cache:
        return sigma, color
    return sigma, color, MlpCache(ins, pres, h, zs, cin, zc, hc, color)


def mlp_backward(params: MlpParams, cache: MlpCache, grad_sigma, grad_color) -> MlpParams:
    """Parameter gradients given dL/dsigma ``(N,)`` and dL/dcolor ``(N, 3)``."""
    arch = params.arch
    W = params.W
    gW, gb = {}, {}
    dzo = grad_color * cache.color * (1.0 - cache.color)
    gW["color_out"] = cache.color_hidden.T @ dzo
    gb["color_out"] = dzo.sum(axis=0)
    dzc = _act_grad(dzo @ W["color_out"].T, cache.color_pre, arch.activation)
    gW["color_hidden"] = cache.color_in.T @ dzc
    gb["color_hidden"] = dzc.sum(axis=0)
    dh = (dzc @ W["color_hidden"].T)[:, : arch.width]
    dzs = (grad_sigma * sigmoid(cache.sigma_pre))[:, None]
    gW["sigma"] = cache.h.T @ dzs
    gb["sigma"] = dzs.sum(axis=0)
    dh = dh + dzs @ W["sigma"].T
    for i in reversed(range(arch.depth)):
        dz = _act_grad(dh, cache.trunk_pre[i], arch.activation)
        gW[f"trunk{i}"] = cache.trunk_in[i].T @ dz
        gb[f"trunk{i}"] = dz.sum(axis=0)
        if i:
            dh = dz @ W[f"trunk{i}"].T
    return MlpParams(arch, gW, gb)


def color_loss(coarse_pred, fine_pred, target, coarse_weight: float) -> float:
    """Batch mean of ``coarse_weight * |C* - C_c|^2 + |C* - C_f|^2``."""
    coarse_pred, fine_pred, target = (np.asarray(a, dtype=np.float64) for a in (coarse_pred, fine_pred, target))
    if not coarse_pred.shape == fine_pred.shape == target.shape:
        raise ValueError("prediction and target batches must have equal shapes")
    per_ray = coarse_weight * np.sum((target - coarse_pred) ** 2, axis=-1) + np.sum((target - fine_pred) ** 2, axis=-1)
    return float(per_ray.mean())


@dataclass(frozen=True)
class SceneBounds:
    center: tuple
    scale: float

    def normalize(self, pts):
        return (pts - np.asarray(self.center, dtype=pts.dtype)) / pts.dtype.type(self.scale)

    @classmethod
    def from_cameras(cls, intr: CameraIntrinsics, poses, near: float, far: float) -> "SceneBounds":
        pts = []
        for P in poses:
            o, d = image_rays(intr, P)
            corners = d[[0, 0, -1, -1], [0, -1, 0, -1]]
            pts += [o[0, 0] + near * corners, o[0, 0] + far * corners]
        pts = np.concatenate(pts)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(tuple(float(c) for c in 0.5 * (lo + hi)), float(0.5 * (hi - lo).max()))


class NeRFModel:
    """Radiance field backed by :class:`MlpParams`; usable anywhere a field is expected."""

    def __init__(self, params: MlpParams, bounds: SceneBounds):
        self.params = params
        self.bounds = bounds

    def encode(self, positions, directions):
        dt = self.params.dtype
        p = self.bounds.normalize(np.asarray(positions, dtype=dt))
        d = np.asarray(directions, dtype=dt)
        return positional_encoding(p, self.params.arch.pos_freqs), positional_encoding(d, self.params.arch.dir_freqs)

    def query(self, positions, directions):
        ep, ed = self.encode(positions, directions)
        return mlp_forward(self.params, ep, ed)

    def forward(self, positions, directions, density_offset=None):
        ep, ed = self.encode(positions, directions)
        return mlp_forward(self.params, ep, ed, return_cache=True, density_offset=density_offset)


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_rays: int = 1024
    lr_initial: float = 5e-4
    lr_final: float = 5e-6
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    coarse_weight: float = 0.1
    sinkhorn_alpha: float = 0.5
    seed: int = 0
    loss_mode: str = "joint"
    n_coarse: int = 64
    n_fine: int = 64
    refit_every: int = 500
    refit_pixels: int = 512
    refit_max_evals: int = 300
    final_refit_max_evals: int = 1500
    reg_lambda: float = 100.0
    density_noise: float = 0.0
    t_floor: float = DEFAULT_T_FLOOR
    eval_every: int = 0
    dtype: str = "float32"
    arch: MlpArch = field(default_factory=MlpArch)

    def __post_init__(self):
        if isinstance(self.arch, dict):
            self.arch = MlpArch(**self.arch)
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not 0 < self.lr_final <= self.lr_initial:
            raise ValueError("need 0 < lr_final <= lr_initial")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.density_noise < 0:
            raise ValueError("density_noise must be nonnegative")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Log-linear decay from ``lr_initial`` at step 0 to ``lr_final`` at ``iterations``."""
    f = min(max(step / cfg.iterations, 0.0), 1.0)
    return float(np.exp((1 - f) * np.log(cfg.lr_initial) + f * np.log(cfg.lr_final)))


class Adam:
    def __init__(self, params: MlpParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(a) for a in params.flat()]
        self.v = [np.zeros_like(a) for a in params.flat()]
        self.t = 0

    def step(self, params: MlpParams, grads: MlpParams, lr: float) -> None:
        c = self.cfg
        self.t += 1
        b1, b2 = c.adam_beta1, c.adam_beta2
        scale = lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for p, g, m, v in zip(params.flat(), grads.flat(), self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (scale * m / (np.sqrt(v) + c.adam_eps)).astype(p.dtype)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    params: MlpParams
    water: Optional[WaterParams]
    bounds: SceneBounds
    log: dict


def _render_pass(model: NeRFModel, origins, dirs, bounds, noise=None):
    t = bounds.astype(model.params.dtype)
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    pts = origins[:, None, :] + mids[..., None] * dirs[:, None, :]
    d = np.broadcast_to(dirs[:, None, :], pts.shape)
    offset = None
    if noise is not None and noise[0] > 0:
        offset = (noise[0] * noise[1].standard_normal(mids.size)).astype(model.params.dtype)
    sigma, color, cache = model.forward(pts.reshape(-1, 3), d.reshape(-1, 3), density_offset=offset)
    sigma = sigma.reshape(mids.shape)
    color = color.reshape(mids.shape + (3,))
    return composite(sigma, color, t), sigma, color, cache


def loss_and_grads(model: NeRFModel, origins, dirs, target, t_coarse, t_fine, coarse_weight: float, coarse=None,
                   noise=None):
    """Color loss and its parameter gradients for fixed sample boundaries.

    ``coarse`` may carry an already computed coarse pass over ``t_coarse``.
    ``noise`` is an optional ``(std, rng)`` pair for raw-density noise.
    Returns ``(loss, grads, fine composite)``.
    """
    n = len(origins)
    dt = model.params.dtype
    target = np.asarray(target)
    if coarse is None:
        coarse = _render_pass(model, origins, dirs, t_coarse, noise)
    comp_c, _, col_c, cache_c = coarse
    comp_f, _, col_f, cache_f = _render_pass(model, origins, dirs, t_fine, noise)
    loss = color_loss(comp_c.color, comp_f.color, target, coarse_weight)

    grads = None
    for comp, col, cache, w in ((comp_c, col_c, cache_c, coarse_weight), (comp_f, col_f, cache_f, 1.0)):
        if w == 0:
            continue
        g_color = ((-2.0 * w / n) * (target - comp.color)).astype(dt)
        gs, gc = composite_backward(comp, col, g_color)
        g = mlp_backward(model.params, cache, gs.reshape(-1).astype(dt), gc.reshape(-1, 3).astype(dt))
        if grads is None:
            grads = g
        else:
            for a, b in zip(grads.flat(), g.flat()):
                a += b
    return loss, grads, comp_f


def training_step(model: NeRFModel, origins, dirs, target, near, far, cfg: TrainConfig, rng, noise_rng=None):
    """Jittered coarse pass, importance-sampled fine pass; returns (loss, grads, fine composite)."""
    n = len(origins)
    noise = (cfg.density_noise, noise_rng) if cfg.density_noise > 0 else None
    tc = stratified_samples(np.full(n, near), np.full(n, far), cfg.n_coarse, rng)
    coarse = _render_pass(model, origins, dirs, tc, noise)
    tf = importance_samples(tc, coarse[0].weights.astype(np.float64), cfg.n_fine, rng)
    return loss_and_grads(model, origins, dirs, target, tc, tf, cfg.coarse_weight, coarse=coarse, noise=noise)


def render_rays_full(model: NeRFModel, origins, dirs, near, far, n_coarse, n_fine, chunk=4096):
    """Deterministic coarse-to-fine render of a ray batch: (color, depth, opacity)."""
    origins = np.asarray(origins).reshape(-1, 3)
    dirs = np.asarray(dirs).reshape(-1, 3)
    cols, deps, ops = [], [], []
    dt = model.params.dtype
    for s in range(0, len(origins), chunk):
        o = origins[s:s + chunk].astype(dt)
        d = dirs[s:s + chunk].astype(dt)
        n = len(o)
        tc = stratified_samples(np.full(n, near), np.full(n, far), n_coarse, jitter=False)
        comp_c, _, _, _ = _render_pass(model, o, d, tc)
        tf = importance_samples(tc, comp_c.weights.astype(np.float64), n_fine)
        comp_f, _, _, _ = _render_pass(model, o, d, tf)
        cols.append(comp_f.color.astype(np.float64))
        deps.append(comp_f.depth.astype(np.float64))
        ops.append(comp_f.opacity.astype(np.float64))
    return np.concatenate(cols), np.concatenate(deps), np.concatenate(ops)


def render_view(model: NeRFModel, intr: CameraIntrinsics, pose, near, far, n_coarse=64, n_fine=64):
    """Rendered color (H, W, 3), range (H, W) and opacity (H, W) for one camera."""
    o, d = image_rays(intr, pose)
    c, dep, op = render_rays_full(model, o.reshape(-1, 3), d.reshape(-1, 3), near, far, n_coarse, n_fine)
    h, w = intr.height, intr.width
    return c.reshape(h, w, 3), dep.reshape(h, w), op.reshape(h, w)


def _psnr(a, b):
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    return 100.0 if mse == 0 else min(100.0, -10.0 * math.log10(mse))


def fit_water(model: NeRFModel, ds: PosedDataset, train_idx, cfg: TrainConfig, rng, init=None, max_evals=None):
    """Render a pixel subsample and fit water parameters against the equalized reference."""
    intr = ds.intrinsics
    hw = intr.height * intr.width
    pick = np.sort(rng.choice(len(train_idx) * hw, size=cfg.refit_pixels, replace=False))
    origins, dirs = [], []
    for flat in pick:
        i, p = divmod(int(flat), hw)
        o, d = _pixel_rays(intr, ds.poses[train_idx[i]])
        origins.append(o[p])
        dirs.append(d[p])
    c, dep, _ = render_rays_full(model, np.array(origins), np.array(dirs), ds.near, ds.far, cfg.n_coarse, cfg.n_fine)
    reference = build_reference(list(ds.images[train_idx]), list(train_idx))
    problem = sample_problem(
        c, dep, reference, rng,
        n_samples=cfg.refit_pixels,
        sinkhorn=SinkhornConfig(reg_lambda=cfg.reg_lambda),
        max_evals=max_evals or cfg.final_refit_max_evals,
        t_floor=cfg.t_floor,
        init=init,
    )
    return estimate_params(problem)


_RAY_CACHE: dict = {}


def _pixel_rays(intr, pose):
    key = (intr, np.asarray(pose).tobytes())
    if key not in _RAY_CACHE:
        o, d = image_rays(intr, pose)
        _RAY_CACHE[key] = (o.reshape(-1, 3), d.reshape(-1, 3))
    return _RAY_CACHE[key]


def train(ds: PosedDataset, cfg: TrainConfig, diagnostic_path=None, progress=None) -> TrainResult:
    """Fit the field to the training split.

    ``underwater_mse`` and ``joint`` fit the observed images; ``histeq_mse``
    fits the per-image equalized images instead. In ``joint`` mode the water
    parameters are refitted every ``refit_every`` steps (and once at the
    end) from the current renders; the network itself only ever sees the
    color loss.
    """
    train_idx = ds.indices("train")
    if len(train_idx) < 2:
        raise ValueError("training needs at least two posed training images")
    if cfg.loss_mode == "histeq_mse":
        if ds.equalized is None:
            raise ValueError("histeq_mse mode needs equalized images in the dataset")
        targets_all = ds.equalized
    else:
        targets_all = ds.images
    dt = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    water_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    intr = ds.intrinsics
    bounds = SceneBounds.from_cameras(intr, ds.poses, ds.near, ds.far)
    params = MlpParams.init(cfg.arch, rng, dtype=dt)
    model = NeRFModel(params, bounds)
    adam = Adam(params, cfg)

    rays_o, rays_d, targets = [], [], []
    for i in train_idx:
        o, d = _pixel_rays(intr, ds.poses[i])
        rays_o.append(o)
        rays_d.append(d)
        targets.append(targets_all[i].reshape(-1, 3))
    rays_o = np.concatenate(rays_o).astype(dt)
    rays_d = np.concatenate(rays_d).astype(dt)
    targets = np.concatenate(targets)

    test_idx = ds.indices("test")
    history = {"loss": [], "psnr": [], "lr": [], "refits": [], "eval": [], "total_loss": []}
    water = None
    sinkhorn_loss_value = None
    t0 = time.time()
    for step in range(cfg.iterations):
        sel = rng.integers(0, len(rays_o), size=cfg.batch_rays)
        lr = learning_rate(step, cfg)
        loss, grads, comp_f = training_step(model, rays_o[sel], rays_d[sel], targets[sel], ds.near, ds.far, cfg, rng,
                                             noise_rng)
        if not (math.isfinite(loss) and grads.all_finite()):
            if diagnostic_path is not None:
                save_checkpoint(diagnostic_path, TrainResult(params, water, bounds, history), cfg, ds, rng)
            raise TrainingDiverged(f"non-finite loss or gradient at step {step}")
        adam.step(params, grads, lr)
        history["loss"].append(loss)
        history["psnr"].append(_psnr(comp_f.color, targets[sel]))
        history["lr"].append(lr)
        history["total_loss"].append(
            loss + (cfg.sinkhorn_alpha * sinkhorn_loss_value if sinkhorn_loss_value is not None else 0.0)
        )

        done = step + 1
        if cfg.loss_mode == "joint" and (done % cfg.refit_every == 0 or done == cfg.iterations):
            budget = cfg.final_refit_max_evals if done == cfg.iterations else cfg.refit_max_evals
            fit = fit_water(model, ds, train_idx, cfg, water_rng, init=water, max_evals=budget)
            water = fit.params
            sinkhorn_loss_value = fit.loss
            history["refits"].append({"step": done, **fit.params.to_dict(), "loss": fit.loss, "n_evals": fit.n_evals})
            log.info("step %d: water beta=%s veiling=%s sinkhorn=%.5f", done,
                     np.round(water.beta, 4).tolist(), np.round(water.veiling, 4).tolist(), fit.loss)
        if cfg.eval_every and test_idx and (done % cfg.eval_every == 0 or done == cfg.iterations):
            ev = []
            for i in test_idx:
                c, _, _ = render_view(model, intr, ds.poses[i], ds.near, ds.far, cfg.n_coarse, cfg.n_fine)
                ev.append(_psnr(c, ds.images[i]))
            history["eval"].append({"step": done, "psnr": float(np.mean(ev))})
        if progress is not None and (done % 100 == 0 or done == cfg.iterations):
            progress(done, loss, time.time() - t0)
    history["rng_state"] = rng.bit_generator.state
    return TrainResult(params=params, water=water, bounds=bounds, log=history)


def _arrays_to_json(params: MlpParams) -> dict:
    out = {}
    for n in params.names():
        out[n] = {
            "weight_shape": list(params.W[n].shape),
            "weight": params.W[n].astype(np.float64).ravel().tolist(),
            "bias": params.b[n].astype(np.float64).ravel().tolist(),
        }
    return out


def save_checkpoint(path, result: TrainResult, cfg: TrainConfig, ds: PosedDataset, rng=None) -> None:
    """Single JSON document holding everything needed to render again."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(result.params.arch),
        "dtype": str(result.params.dtype),
        "bounds": {"center": list(result.bounds.center), "scale": result.bounds.scale},
        "layers": _arrays_to_json(result.params),
        "water_params": result.water.to_dict() if result.water is not None else None,
        "train_config": cfg.to_dict(),
        "rng_state": (rng.bit_generator.state if rng is not None else result.log.get("rng_state")),
        "cameras": {
            "intrinsics": ds.intrinsics.to_dict(),
            "near": ds.near,
            "far": ds.far,
            "frames": [
                {"name": n, "split": s, "camera_to_world": [float(v) for v in np.asarray(P).ravel()]}
                for n, s, P in zip(ds.names, ds.splits, ds.poses)
            ],
        },
        "log": {k: v for k, v in result.log.items() if k != "rng_state"},
    }
    Path(path).write_text(json.dumps(doc) + "\n")


@dataclass
class Checkpoint:
    model: NeRFModel
    water: Optional[WaterParams]
    config: TrainConfig
    intrinsics: CameraIntrinsics
    near: float
    far: float
    poses: np.ndarray
    names: list
    splits: list
    log: dict


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ValueError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: checkpoint is not valid JSON ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a waternerf checkpoint")
    try:
        arch = MlpArch(**doc["arch"])
        dt = np.dtype(doc.get("dtype", "float64"))
        W, b = {}, {}
        for name, shape in arch.layer_shapes().items():
            layer = doc["layers"][name]
            W[name] = np.asarray(layer["weight"], dtype=np.float64).reshape(shape).astype(dt)
            b[name] = np.asarray(layer["bias"], dtype=np.float64).reshape(shape[1]).astype(dt)
        bounds = SceneBounds(tuple(doc["bounds"]["center"]), float(doc["bounds"]["scale"]))
        cams = doc["cameras"]
        frames = cams["frames"]
        return Checkpoint(
            model=NeRFModel(MlpParams(arch, W, b), bounds),
            water=WaterParams.from_dict(doc["water_params"]) if doc.get("water_params") else None,
            config=TrainConfig.from_dict(doc["train_config"]),
            intrinsics=CameraIntrinsics.from_dict(cams["intrinsics"]),
            near=float(cams["near"]),
            far=float(cams["far"]),
            poses=np.array([np.reshape(f["camera_to_world"], (4, 4)) for f in frames]),
            names=[f["name"] for f in frames],
            splits=[f["split"] for f in frames],
            log=doc.get("log", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: malformed checkpoint ({exc})") from exc
