"""PDE residuals, constraint losses, hybrid loss assembly, noise and metrics.

Models are passed as callables ``model(points) -> [n, 1]`` so that the same
residual code serves every operator (evaluate the latent state once, then
decode at as many point sets as needed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffops import build_pointcloud_operator
from .mollified import _require_smooth, query_derivatives

BACKENDS = ("autograd", "fd_regular", "fd_pointcloud", "fourier")
DEFAULT_ALPHA = {"burgers": 100.0, "poisson": 10.0}
EPS = 1e-12

ModelFn = Callable[[Tensor], Tensor]


@dataclass
class LossSpec:
    """``L = data_weight * L_data + lam * (L_pde + alpha * L_constraint)``.

    ``collocation`` is ``None`` for the full grid or a count of uniformly
    resampled points per optimizer step.
    """

    lam: float = 1.0
    alpha: float | None = None
    data_weight: float = 1.0
    backend: str = "autograd"
    collocation: int | None = None

    def __post_init__(self):
        if self.lam < 0 or self.data_weight < 0 or (self.alpha is not None and self.alpha < 0):
            raise ValueError("loss coefficients must be non-negative")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown derivative back-end {self.backend!r}")
        if self.lam == 0 and self.data_weight == 0:
            raise ValueError("at least one of the data and physics terms must be active")
        if self.collocation is not None and self.collocation < 1:
            raise ValueError("collocation count must be positive")

    def alpha_for(self, problem: str) -> float:
        return DEFAULT_ALPHA[problem] if self.alpha is None else self.alpha


@dataclass
class Residual:
    residual: Tensor
    pde: Tensor
    constraint: Tensor
    alpha: float

    @property
    def loss(self) -> Tensor:
        return self.pde + self.alpha * self.constraint


def _squeeze(v: Tensor) -> Tensor:
    return v[:, 0] if v.ndim == 2 else v


def _msq(r: Tensor) -> Tensor:
    return ad.mean(r * r)


# -- differentiation helpers on grids ------------------------------------------

def fd_matrix(n: int, order: int, h: float) -> np.ndarray:
    """Dense matrix of :func:`diffops.fd_regular` along one axis."""
    from .diffops import fd_regular
    return fd_regular(np.eye(n), 0, order, h).T


def fourier_matrix(n: int, order: int, length: float = 1.0) -> np.ndarray:
    from .spectral import fourier_derivative
    return fourier_derivative(np.eye(n), order, 0, length).T


def _apply_axis(v: Tensor, mat: np.ndarray, axis: int) -> Tensor:
    """``out[..., i, ...] = sum_j mat[j, i] v[..., j, ...]`` on a 2-D grid."""
    spec = "jb,ja->ab" if axis == 0 else "aj,jb->ab"
    return ad.einsum(spec, v, ad.constant(mat))


def grid_points(xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    xx, tt = np.meshgrid(xs, ts, indexing="ij")
    return np.stack([xx.ravel(), tt.ravel()], axis=1)


def _uniform_step(c: np.ndarray) -> float:
    d = np.diff(c)
    if np.max(np.abs(d - d.mean())) > 1e-9 * max(abs(d.mean()), 1.0):
        raise ValueError("grid back-ends need uniformly spaced coordinates")
    return float(d.mean())


# -- Burgers -------------------------------------------------------------------

def burgers_derivatives(model: ModelFn, backend: str, points: np.ndarray | None = None,
                        grid: tuple[np.ndarray, np.ndarray] | None = None,
                        create_graph: bool = True, k_neighbors: int | None = None):
    """``(v, v_x, v_t, v_xx)`` at collocation points (flattened grid for grid back-ends)."""
    if backend == "autograd":
        if points is None:
            if grid is None:
                raise ValueError("need points or grid")
            points = grid_points(*grid)
        x = ad.tensor(np.asarray(points, dtype=np.float64), requires_grad=True)
        v = _squeeze(model(x))
        g1, rows = query_derivatives(v, x, second=[0], create_graph=create_graph)
        return v, g1[:, 0], g1[:, 1], rows[0][:, 0]
    if backend in ("fd_regular", "fourier"):
        if grid is None:
            raise ValueError(f"the {backend} back-end needs a regular grid, not scattered points")
        xs, ts = grid
        hx, ht = _uniform_step(xs), _uniform_step(ts)
        v = ad.reshape(_squeeze(model(ad.constant(grid_points(xs, ts)))), (len(xs), len(ts)))
        if backend == "fd_regular":
            dx1, dx2 = fd_matrix(len(xs), 1, hx), fd_matrix(len(xs), 2, hx)
        else:
            length = hx * len(xs)
            dx1, dx2 = fourier_matrix(len(xs), 1, length), fourier_matrix(len(xs), 2, length)
        dt1 = fd_matrix(len(ts), 1, ht)
        v_x = _apply_axis(v, dx1, 0)
        v_xx = _apply_axis(v, dx2, 0)
        v_t = _apply_axis(v, dt1, 1)
        flat = lambda a: ad.reshape(a, (-1,))  # noqa: E731
        return flat(v), flat(v_x), flat(v_t), flat(v_xx)
    if backend == "fd_pointcloud":
        if points is None:
            points = grid_points(*grid)
        op = build_pointcloud_operator(points, 2, k_neighbors)
        v = _squeeze(model(ad.constant(points)))
        return v, op.apply(v, "x"), op.apply(v, "y"), op.apply(v, "xx")
    raise ValueError(f"unknown derivative back-end {backend!r}")


def burgers_residual(model: ModelFn, u0: np.ndarray, nu: float = 0.01,
                     backend: str = "autograd", points: np.ndarray | None = None,
                     grid: tuple[np.ndarray, np.ndarray] | None = None,
                     alpha: float = DEFAULT_ALPHA["burgers"], create_graph: bool = True,
                     ic_model: ModelFn | None = None) -> Residual:
    """``v_t + v v_x - nu v_xx`` plus the initial-condition mismatch at t = 0.

    The IC term compares ``v(x_i, 0)`` with ``u0`` on its periodic nodes
    ``x_i = i / n``.
    """
    v, v_x, v_t, v_xx = burgers_derivatives(model, backend, points, grid, create_graph)
    r = v_t + v * v_x - nu * v_xx
    if alpha > 0:
        n = len(u0)
        ic_pts = np.stack([np.arange(n) / n, np.zeros(n)], axis=1)
        v0 = _squeeze((ic_model or model)(ad.constant(ic_pts)))
        ic = _msq(v0 - np.asarray(u0, dtype=np.float64))
    else:
        ic = ad.constant(0.0)
    return Residual(r, _msq(r), ic, alpha)


# -- Poisson -------------------------------------------------------------------

def poisson_residual(model: ModelFn, interior: np.ndarray, f: np.ndarray,
                     boundary: np.ndarray | None = None, b: np.ndarray | None = None,
                     backend: str = "autograd", alpha: float = DEFAULT_ALPHA["poisson"],
                     form: str = "expanded", create_graph: bool = True,
                     cloud_points: np.ndarray | None = None,
                     k_neighbors: int | None = None) -> Residual:
    """``div((1 + 0.1 v^2) grad v) - f`` inside, ``v - b`` on the boundary.

    ``form="expanded"`` uses ``(1 + 0.1 v^2) Lap v + 0.2 v |grad v|^2``;
    ``"divergence"`` differentiates the flux directly (autograd only).
    The point-cloud back-end builds stencils on ``cloud_points`` (default:
    interior and boundary together) and keeps the interior rows.
    """
    if alpha > 0 and (boundary is None or len(boundary) == 0):
        raise ValueError("boundary points are required when alpha > 0")
    f = np.asarray(f, dtype=np.float64)
    if backend == "autograd":
        x = ad.tensor(np.asarray(interior, dtype=np.float64), requires_grad=True)
        v = _squeeze(model(x))
        if form == "expanded":
            g1, rows = query_derivatives(v, x, second=[0, 1], create_graph=create_graph)
            lap = rows[0][:, 0] + rows[1][:, 1]
            grad2 = ad.sum(g1 * g1, axis=1)
            lhs = (1.0 + 0.1 * v * v) * lap + 0.2 * v * grad2
        elif form == "divergence":
            g1 = ad.grad(ad.sum(v), x, create_graph=True)
            coef = ad.reshape(1.0 + 0.1 * v * v, (-1, 1))
            flux = coef * g1
            lhs = None
            for i in range(2):
                gi = ad.grad(ad.sum(flux[:, i]), x, create_graph=create_graph)[:, i]
                lhs = gi if lhs is None else lhs + gi
        else:
            raise ValueError("form must be 'expanded' or 'divergence'")
    elif backend == "fd_pointcloud":
        if form != "expanded":
            raise ValueError("the point-cloud back-end supports the expanded form only")
        n_int = len(interior)
        pts = np.asarray(cloud_points if cloud_points is not None else
                         (interior if boundary is None else np.concatenate([interior, boundary])))
        op = build_pointcloud_operator(pts, 2, k_neighbors)
        v_all = _squeeze(model(ad.constant(pts)))
        take = np.arange(n_int)
        v = ad.take(v_all, take)
        vx, vy = ad.take(op.apply(v_all, "x"), take), ad.take(op.apply(v_all, "y"), take)
        lap = ad.take(op.apply(v_all, "xx") + op.apply(v_all, "yy"), take)
        lhs = (1.0 + 0.1 * v * v) * lap + 0.2 * v * (vx * vx + vy * vy)
    else:
        raise ValueError(f"back-end {backend!r} is not available on point clouds")
    r = lhs - f
    if alpha > 0:
        vb = _squeeze(model(ad.constant(boundary)))
        bc = _msq(vb - np.asarray(b, dtype=np.float64))
    else:
        bc = ad.constant(0.0)
    return Residual(r, _msq(r), bc, alpha)


# -- loss assembly -------------------------------------------------------------

def hybrid_loss(data_term, physics_term, spec: LossSpec) -> tuple[Tensor, dict[str, float]]:
    """Total loss and its additive components."""
    data_term = ad.constant(data_term)
    physics_term = ad.constant(physics_term)
    for name, term in (("data", data_term), ("physics", physics_term)):
        if not np.all(np.isfinite(term.data)):
            raise ad.NonFiniteError(f"non-finite {name} loss")
    parts = []
    if spec.data_weight:
        parts.append(("data", spec.data_weight * data_term))
    if spec.lam:
        parts.append(("physics", spec.lam * physics_term))
    total = parts[0][1]
    for _, p in parts[1:]:
        total = total + p
    comps = {"data": 0.0, "physics": 0.0}
    comps.update({k: float(p.data) for k, p in parts})
    comps["total"] = float(total.data)
    return total, comps


def inject_noise(u: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
    """``u + eta * eps * mean|u|`` with i.i.d. standard normal ``eps``."""
    if eta < 0:
        raise ValueError("noise level must be non-negative")
    u = np.asarray(u, dtype=np.float64)
    scale = eta * float(np.mean(np.abs(u)))
    return u + scale * rng.standard_normal(u.shape)


@dataclass(frozen=True)
class Metrics:
    mse: float
    relative_squared_error: float
    l2: float
    relative_l2: float

    def as_dict(self) -> dict[str, float]:
        return {"mse": self.mse, "relative_squared_error": self.relative_squared_error,
                "l2": self.l2, "relative_l2": self.relative_l2}


def measure_constant(measure: float, n: int) -> float:
    return math.sqrt(measure / n)


def metrics(y_pred, y_true, c: float = 1.0, eps: float = EPS) -> Metrics:
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    t = np.asarray(y_true, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError("prediction and target differ in size")
    sq = float(np.sum((p - t) ** 2))
    tt = float(np.sum(t * t))
    return Metrics(sq / p.size, sq / (tt + eps), c * math.sqrt(sq),
                   c * math.sqrt(sq) / (c * math.sqrt(tt) + eps))


def input_gradient(objective: Callable[..., Tensor], wrt: Sequence, model=None) -> list[np.ndarray]:
    """Gradient of a scalar objective with respect to inputs or design parameters.

    ``objective(*tensors)`` must build its graph from the given tensors;
    ``model`` (optional) is checked for non-smooth kernel layers first.
    """
    if model is not None:
        _require_smooth(model)
    tensors = [w if isinstance(w, Tensor) and w.requires_grad
               else ad.tensor(np.asarray(w.data if isinstance(w, Tensor) else w,
                                         dtype=np.float64), requires_grad=True)
               for w in wrt]
    j = objective(*tensors)
    if j.size != 1:
        raise ValueError("objective must be a scalar")
    return ad.grad(j, tensors)
