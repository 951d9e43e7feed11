"""Entropic optimal transport between discrete RGB distributions.

The regularised problem solved here is

    min_T <T, M> - (1 / reg_lambda) * h(T),   T 1 = a,  T^T 1 = b

with ``h(T) = -sum T (log T - 1)``. Larger ``reg_lambda`` means weaker
regularisation and a plan closer to the unregularised optimum.

Two solvers are provided. ``method="log"`` (the default) runs the usual
diagonal scaling on a stabilised kernel and absorbs the scalings into the
dual potentials whenever they grow large or the kernel underflows, so it is
safe for any ``reg_lambda``. ``method="kernel"`` is the textbook iteration on
``exp(-reg_lambda * M)`` and refuses to run once that kernel underflows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

METRICS = ("sqeuclidean", "euclidean")

# absorb scalings into the potentials beyond this magnitude (|log u| or |log v|)
_ABSORB_LOG = np.log(1e3)
_TINY = 1e-280
# annealing: start where lambda * spread(M) is about this, step lambda by this factor
_ANNEAL_START = 20.0
_ANNEAL_FACTOR = 4.0


@dataclass(frozen=True)
class DiscreteDistribution:
    """Weighted point cloud ``sum_i w_i delta_{x_i}``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points must be a non-empty (n, d) array")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "DiscreteDistribution":
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class SinkhornConfig:
    reg_lambda: float = 100.0
    max_iters: int = 1000
    marginal_tol: float = 1e-6
    cost_metric: str = "sqeuclidean"
    method: str = "log"
    check_every: int = 10
    # anneal lambda upward from a coarse value (log method, cold starts only)
    eps_scaling: bool = True

    def __post_init__(self):
        if not self.reg_lambda > 0:
            raise ValueError("reg_lambda must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.marginal_tol > 0:
            raise ValueError("marginal_tol must be positive")
        if self.cost_metric not in METRICS:
            raise ValueError(f"unknown cost metric {self.cost_metric!r}")
        if self.method not in ("log", "kernel"):
            raise ValueError(f"unknown method {self.method!r}")

    def to_dict(self) -> dict:
        return {
            "reg_lambda": self.reg_lambda,
            "max_iters": self.max_iters,
            "marginal_tol": self.marginal_tol,
            "cost_metric": self.cost_metric,
            "method": self.method,
            "check_every": self.check_every,
            "eps_scaling": self.eps_scaling,
        }


@dataclass
class TransportPlan:
    plan: np.ndarray
    cost: float
    n_iters: int
    converged: bool
    marginal_error: float
    # dual potentials, usable as a warm start for a nearby problem
    f: np.ndarray
    g: np.ndarray


def cost_matrix(mu: DiscreteDistribution, nu: DiscreteDistribution, metric: str = "sqeuclidean") -> np.ndarray:
    x, y = mu.points, nu.points
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"point dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if metric not in METRICS:
        raise ValueError(f"unknown cost metric {metric!r}")
    diff = x[:, None, :] - y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return sq if metric == "sqeuclidean" else np.sqrt(sq)


def _marginal_error(u, K, v, a, b):
    row = u * (K @ v)
    col = v * (K.T @ u)
    return max(np.abs(row - a).max(), np.abs(col - b).max())


def _solve_log(a, b, M, eps, cfg, f, g):
    # potentials are (f, g); the working kernel carries them so that the
    # plan is diag(u) K diag(v) with u, v close to one
    def kernel():
        return np.exp((f[:, None] + g[None, :] - M) / eps)

    K = kernel()
    u = np.ones_like(a)
    v = np.ones_like(b)
    loga, logb = np.log(a), np.log(b)
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        Kv = K @ v
        if np.any(Kv < _TINY):
            g = g + eps * np.log(v)
            f = eps * loga - eps * logsumexp((g[None, :] - M) / eps, axis=1)
            K = kernel()
            v = np.ones_like(b)
            Kv = K.sum(axis=1)
        u = a / Kv
        Ktu = K.T @ u
        if np.any(Ktu < _TINY):
            f = f + eps * np.log(u)
            g = eps * logb - eps * logsumexp((f[:, None] - M) / eps, axis=0)
            K = kernel()
            u = np.ones_like(a)
            Ktu = K.sum(axis=0)
        v = b / Ktu
        if max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > _ABSORB_LOG:
            f = f + eps * np.log(u)
            g = g + eps * np.log(v)
            K = kernel()
            u = np.ones_like(a)
            v = np.ones_like(b)
        if it % cfg.check_every == 0 or it == cfg.max_iters:
            err = _marginal_error(u, K, v, a, b)
            if err <= cfg.marginal_tol:
                break
    plan = u[:, None] * K * v[None, :]
    return plan, it, err, f + eps * np.log(u), g + eps * np.log(v)


def _solve_kernel(a, b, M, eps, cfg):
    K = np.exp(-M / eps)
    if np.any(K.sum(axis=1) == 0) or np.any(K.sum(axis=0) == 0):
        raise FloatingPointError(
            "Sinkhorn kernel underflowed (a row or column of exp(-lambda*M) is all zero); "
            "use method='log' or a smaller reg_lambda"
        )
    u = np.ones_like(a)
    v = np.ones_like(b)
    err = np.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        u = a / (K @ v)
        v = b / (K.T @ u)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError("Sinkhorn scaling overflowed; use method='log'")
        if it % cfg.check_every == 0 or it == cfg.max_iters:
            err = _marginal_error(u, K, v, a, b)
            if err <= cfg.marginal_tol:
                break
    plan = u[:, None] * K * v[None, :]
    with np.errstate(divide="ignore"):
        return plan, it, err, eps * np.log(u), eps * np.log(v)


def _anneal(a, b, M, cfg, f, g):
    """Run coarse-to-fine stages below the target lambda; return warm potentials."""
    spread = float(M.max() - M.min())
    lams = []
    lam = cfg.reg_lambda
    while spread > 0 and lam * spread > _ANNEAL_START:
        lam /= _ANNEAL_FACTOR
        lams.append(lam)
    total = 0
    stage_cfg = SinkhornConfig(
        reg_lambda=cfg.reg_lambda,
        max_iters=cfg.max_iters,
        marginal_tol=cfg.marginal_tol,
        check_every=cfg.check_every,
    )
    for lam in reversed(lams):
        _, it, _, f, g = _solve_log(a, b, M, 1.0 / lam, stage_cfg, f, g)
        total += it
    return f, g, total


def sinkhorn_solve(
    mu: DiscreteDistribution,
    nu: DiscreteDistribution,
    config: SinkhornConfig = SinkhornConfig(),
    cost: Optional[np.ndarray] = None,
    init: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> TransportPlan:
    """Solve the entropic OT problem between ``mu`` and ``nu``.

    ``cost`` may be passed to reuse a precomputed cost matrix. ``init`` is a
    pair of dual potentials ``(f, g)`` from an earlier solve on a problem of
    the same size; it only changes the starting point, not the fixed point.
    The reported ``cost`` is the transport term ``<T, M>`` alone.
    """
    M = cost_matrix(mu, nu, config.cost_metric) if cost is None else np.asarray(cost, dtype=np.float64)
    if M.shape != (len(mu), len(nu)):
        raise ValueError(f"cost matrix shape {M.shape} does not match distributions")
    a, b = mu.weights, nu.weights
    eps = 1.0 / config.reg_lambda

    # zero-mass support points carry no information and would break log(a)
    rows, cols = a > 0, b > 0
    a_s, b_s, M_s = a[rows], b[cols], M[np.ix_(rows, cols)]
    warm_iters = 0

    if config.method == "kernel":
        plan_s, it, err, f_s, g_s = _solve_kernel(a_s, b_s, M_s, eps, config)
    else:
        if init is not None and init[0].shape == a.shape and init[1].shape == b.shape:
            f0, g0 = init[0][rows].copy(), init[1][cols].copy()
        else:
            # c-transform start: every row of the first kernel has an entry of 1
            f0 = M_s.min(axis=1)
            g0 = np.zeros_like(b_s)
            if config.eps_scaling:
                f0, g0, warm_iters = _anneal(a_s, b_s, M_s, config, f0, g0)
        plan_s, it, err, f_s, g_s = _solve_log(a_s, b_s, M_s, eps, config, f0, g0)
        it += warm_iters

    plan = np.zeros_like(M)
    plan[np.ix_(rows, cols)] = plan_s
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    f[rows], g[cols] = f_s, g_s
    return TransportPlan(
        plan=plan,
        cost=float(np.sum(plan * M)),
        n_iters=it,
        converged=bool(err <= config.marginal_tol),
        marginal_error=float(err),
        f=f,
        g=g,
    )


def sinkhorn_loss(
    predicted: DiscreteDistribution,
    reference: DiscreteDistribution,
    config: SinkhornConfig = SinkhornConfig(),
) -> float:
    """Transport cost of the entropic plan between two color distributions."""
    return sinkhorn_solve(predicted, reference, config).cost
