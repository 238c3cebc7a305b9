"""Desk-scale studies: second-derivative benchmark and an inverse-design toy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .diffops import fd_regular, pointcloud_derivative
from .mollified import GinoModel, LatentGrid, MgnoFnoModel, padded_axis, query_derivatives
from .neural import AdamState, adam_step
from .physics import input_gradient
from .problems import PoissonInstance
from .spectral import fourier_derivative

BENCH_HEADER = ("backend", "resolution", "n_points", "rel_l2", "status")
TRACE_HEADER = ("step", "J", "grad_norm", "theta_0", "theta_1", "theta_2", "theta_3")


# -- u = sin(4 pi x y) ---------------------------------------------------------

def bench_field(p: np.ndarray) -> np.ndarray:
    return np.sin(4.0 * np.pi * p[:, 0] * p[:, 1])


def bench_dxx(p: np.ndarray) -> np.ndarray:
    return -16.0 * np.pi ** 2 * p[:, 1] ** 2 * np.sin(4.0 * np.pi * p[:, 0] * p[:, 1])


def bench_laplacian(p: np.ndarray) -> np.ndarray:
    r2 = p[:, 0] ** 2 + p[:, 1] ** 2
    return -16.0 * np.pi ** 2 * r2 * np.sin(4.0 * np.pi * p[:, 0] * p[:, 1])


def bench_field_tensor(x: ad.Tensor) -> ad.Tensor:
    return ad.sin(4.0 * np.pi * x[:, 0] * x[:, 1])


def rel_l2(pred: np.ndarray, true: np.ndarray) -> float:
    return float(np.linalg.norm(pred - true) / max(np.linalg.norm(true), 1e-300))


def autograd_dxx(fn: Callable[[ad.Tensor], ad.Tensor], points: np.ndarray) -> np.ndarray:
    x = ad.tensor(np.asarray(points, dtype=np.float64), requires_grad=True)
    out = fn(x)
    if out.ndim == 2:
        out = out[:, 0]
    _, rows = query_derivatives(out, x, second=[0], create_graph=False)
    return rows[0].data[:, 0]


@dataclass
class BenchConfig:
    n_train: int = 400
    densities: tuple[int, ...] = (1, 4, 9)
    resolutions: tuple[int, ...] = (16, 32, 64, 96)
    n_eval: int = 400
    n_latent: int = 24
    width: int = 16
    modes: tuple[int, int] = (8, 8)
    n_layers: int = 2
    # a wide, smooth weight keeps node-spacing ripple out of second derivatives
    radius_spacings: float = 6.0
    weight: str = "octic"
    kernel_hidden: tuple[int, ...] = (16, 16)
    epochs: int = 1000
    lr: float = 5e-3
    # geometric decay from lr to lr_final over the fit
    lr_final: float = 5e-5
    lam: float = 1e-4
    # fresh random points per epoch for the Laplacian term; None uses the training points
    n_collocation: int | None = 64
    k_neighbors: int | None = None
    margin: float = 0.1
    seed: int = 0


def build_bench_model(cfg: BenchConfig) -> MgnoFnoModel:
    h = 1.0 / (cfg.n_latent - 1)
    radius = cfg.radius_spacings * h
    axes = (padded_axis(0.0, 1.0, cfg.n_latent, radius, periodic=False),
            padded_axis(0.0, 1.0, cfg.n_latent, radius, periodic=False))
    grid = LatentGrid(axes)
    return MgnoFnoModel(grid, c_in=2, width=cfg.width, modes=tuple(cfg.modes),
                        n_layers=cfg.n_layers, radius=radius, weight=cfg.weight,
                        kernel_hidden=tuple(cfg.kernel_hidden), seed=cfg.seed)


def bench_grid_input(model: MgnoFnoModel) -> np.ndarray:
    n1, n2 = model.grid.shape
    return model.grid.nodes().reshape(n1, n2, 2)


def interior_points(rng: np.random.Generator, n: int, margin: float) -> np.ndarray:
    return rng.uniform(margin, 1.0 - margin, size=(n, 2))


def fit_bench_model(cfg: BenchConfig, on_epoch: Callable[[int, float], None] | None = None
                    ) -> tuple[MgnoFnoModel, np.ndarray]:
    """Fit the model to the field with a data term plus the Laplacian residual."""
    rng = np.random.default_rng(cfg.seed)
    model = build_bench_model(cfg)
    train = rng.uniform(0.0, 1.0, size=(cfg.n_train, 2))
    target = bench_field(train)
    lap = bench_laplacian(train)
    gin = bench_grid_input(model)
    adam = AdamState(lr=cfg.lr, weight_decay=0.0)
    decay = (cfg.lr_final / cfg.lr) ** (1.0 / max(1, cfg.epochs - 1))
    for epoch in range(cfg.epochs):
        adam.lr = cfg.lr * decay ** epoch
        latent = model.latent(gin)
        x = ad.tensor(train, requires_grad=True)
        u = model.decode(latent, x)[:, 0]
        diff = u - target
        loss = ad.mean(diff * diff)
        if cfg.lam:
            if cfg.n_collocation is None:
                xc, uc, lap_c = x, u, lap
            else:
                pts = rng.uniform(0.0, 1.0, size=(cfg.n_collocation, 2))
                xc = ad.tensor(pts, requires_grad=True)
                uc = model.decode(latent, xc)[:, 0]
                lap_c = bench_laplacian(pts)
            _, rows = query_derivatives(uc, xc, second=[0, 1])
            r = rows[0][:, 0] + rows[1][:, 1] - lap_c
            loss = loss + cfg.lam * ad.mean(r * r)
        ad.check_finite(loss.data, "loss")
        params = model.parameters()
        adam_step(adam, params, ad.grad(loss, params))
        if on_epoch is not None:
            on_epoch(epoch, float(loss.data))
    return model, train


def derivative_bench(cfg: BenchConfig, model: MgnoFnoModel | None = None,
                     train: np.ndarray | None = None) -> list[tuple]:
    """Rows of (backend, resolution, n_points, rel_l2, status) for d^2u/dx^2."""
    rng = np.random.default_rng(cfg.seed + 1)
    rows: list[tuple] = []
    probe = interior_points(rng, cfg.n_eval, cfg.margin)
    exact = bench_dxx(probe)
    rows.append(("analytic_autograd", 0, cfg.n_eval,
                 rel_l2(autograd_dxx(bench_field_tensor, probe), exact), "ok"))
    for n in cfg.resolutions:
        xs = np.linspace(0.0, 1.0, n)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        u = bench_field(pts).reshape(n, n)
        d = fd_regular(u, 0, 2, xs[1] - xs[0]).ravel()
        rows.append(("fd_regular", n, n * n, rel_l2(d, bench_dxx(pts)), "ok"))
        xp = np.arange(n) / n
        px, py = np.meshgrid(xp, xp, indexing="ij")
        ppts = np.stack([px.ravel(), py.ravel()], axis=1)
        try:
            fd = fourier_derivative(bench_field(ppts).reshape(n, n), 2, dim=0)
            rows.append(("fourier", n, n * n, rel_l2(fd.ravel(), bench_dxx(ppts)),
                         "field not periodic"))
        except ValueError as exc:
            rows.append(("fourier", n, n * n, math.nan, f"error: {exc}"))
    if model is None:
        model, train = fit_bench_model(cfg)
    gin = bench_grid_input(model)
    latent = ad.constant(model.latent(gin).data)
    decode = lambda q: model.decode(latent, q)  # noqa: E731
    rows.append(("autograd", 0, cfg.n_train, rel_l2(autograd_dxx(decode, probe), exact), "ok"))
    for k in cfg.densities:
        pts = train if k == 1 else np.random.default_rng(cfg.seed + 10 + k).uniform(
            0.0, 1.0, size=(k * cfg.n_train, 2))
        with ad.no_grad():
            u = decode(pts).data[:, 0]
        d = pointcloud_derivative(u, pts, order=2, k_neighbors=cfg.k_neighbors)[:, 0]
        inner = np.all((pts > cfg.margin) & (pts < 1.0 - cfg.margin), axis=1)
        rows.append(("fd_pointcloud", k, pts.shape[0],
                     rel_l2(d[inner], bench_dxx(pts[inner])), "ok"))
    return rows


# -- inverse design toy --------------------------------------------------------

def radial_basis(coords: np.ndarray) -> np.ndarray:
    """Four smooth radial modes: 1, cos phi, sin phi, cos 2 phi."""
    phi = np.arctan2(coords[:, 1], coords[:, 0])
    return np.stack([np.ones_like(phi), np.cos(phi), np.sin(phi), np.cos(2 * phi)], axis=1)


@dataclass
class InverseProblem:
    """Scalar objective of the decoded field as a function of 4 radial controls.

    Cloud points move radially, ``p -> p (1 + B(p) theta)``; source values,
    quadrature weights and the latent SDF stay at their reference values.
    """

    model: GinoModel
    inst: PoissonInstance
    objective: str = "mean"
    probe_radius: float = 0.3
    n_probe: int = 64
    seed: int = 0
    _probe: np.ndarray = field(init=False, repr=False)
    _basis: np.ndarray = field(init=False, repr=False)
    _sdf: np.ndarray | None = field(init=False, repr=False)

    def __post_init__(self):
        if self.objective not in ("mean", "quadratic"):
            raise ValueError("objective must be 'mean' or 'quadratic'")
        rng = np.random.default_rng(self.seed)
        rad = self.probe_radius * np.sqrt(rng.uniform(0.0, 1.0, self.n_probe))
        ang = rng.uniform(0.0, 2.0 * np.pi, self.n_probe)
        self._probe = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
        self._basis = radial_basis(self.inst.cloud.coords)
        self._sdf = self.inst.sdf_at(self.model._nodes) if self.model.use_sdf else None

    def __call__(self, theta) -> ad.Tensor:
        theta = ad.constant(theta)
        scale = 1.0 + ad.matmul(ad.constant(self._basis), ad.reshape(theta, (4, 1)))
        coords = ad.constant(self.inst.cloud.coords) * scale
        latent = self.model.encode(coords, self.inst.features(), self.inst.cloud.weights,
                                   self._sdf)
        u = self.model.decode(latent, self._probe)[:, 0]
        return ad.mean(u) if self.objective == "mean" else ad.mean(u * u)

    def value(self, theta: np.ndarray) -> float:
        with ad.no_grad():
            return float(self(np.asarray(theta, dtype=np.float64)).data)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return input_gradient(self, [np.asarray(theta, dtype=np.float64)], self.model)[0]


def fd_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def inverse_descent(problem: InverseProblem, theta0: Sequence[float], steps: int,
                    lr: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Plain gradient descent; returns parameter trace, J trace and gradient norms."""
    theta = np.asarray(theta0, dtype=np.float64).copy()
    thetas, js, norms = [], [], []
    for step in range(steps + 1):
        g = problem.gradient(theta)
        ad.check_finite(g, "gradient")
        thetas.append(theta.copy())
        js.append(problem.value(theta))
        norms.append(float(np.linalg.norm(g)))
        if step < steps:
            theta = theta - lr * g
    return np.array(thetas), np.array(js), np.array(norms)
