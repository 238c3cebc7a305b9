"""Problem instances: Burgers initial data and reference solutions, star-shaped
nonlinear Poisson domains, and manufactured solutions."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mollified import PointCloud

log = logging.getLogger(__name__)

NU = 0.01
POLYLINE_SEGMENTS = 2048


def instance_rng(base_seed: int, instance_id: int) -> np.random.Generator:
    """Independent stream per instance: seed = base XOR id."""
    return np.random.default_rng(int(base_seed) ^ int(instance_id))


# -- Burgers -------------------------------------------------------------------

def grf_eigenvalues(k: np.ndarray) -> np.ndarray:
    """Spectrum of 625 (-Laplacian + 25)^-2 on the unit torus."""
    return 625.0 / ((2.0 * np.pi * k) ** 2 + 25.0) ** 2


def sample_grf_u0(n_x: int, rng: np.random.Generator) -> np.ndarray:
    """Periodic Gaussian random field on ``n_x`` nodes of [0, 1).

    ``u(x) = sum_k c_k exp(2 pi i k x)`` with ``E|c_k|^2 = 625((2 pi k)^2 + 25)^-2``;
    ``c_0`` is real with unit variance, ``c_{-k} = conj(c_k)``.
    """
    if n_x < 8:
        raise ValueError("n_x must be at least 8")
    n_half = n_x // 2
    k = np.arange(n_half + 1)
    lam = grf_eigenvalues(k)
    coeffs = np.sqrt(lam / 2.0) * (rng.standard_normal(n_half + 1)
                                   + 1j * rng.standard_normal(n_half + 1))
    coeffs[0] = math.sqrt(lam[0]) * rng.standard_normal()
    if n_x % 2 == 0:
        coeffs[n_half] = math.sqrt(lam[n_half]) * rng.standard_normal()
    return np.fft.irfft(coeffs, n=n_x) * n_x


def grf_coefficients(u: np.ndarray) -> np.ndarray:
    """Fourier coefficients ``c_k`` (k >= 0) of a field sampled on [0, 1)."""
    return np.fft.rfft(u, axis=-1) / u.shape[-1]


def _burgers_rhs(u_hat: np.ndarray, k: np.ndarray, nu: float, keep: np.ndarray) -> np.ndarray:
    n = 2 * (u_hat.shape[0] - 1)
    u = np.fft.irfft(u_hat, n=n)
    flux = np.fft.rfft(0.5 * u * u) * keep
    return -1j * 2.0 * np.pi * k * flux - nu * (2.0 * np.pi * k) ** 2 * u_hat


def solve_burgers(u0: np.ndarray, t_out: np.ndarray, nu: float = NU,
                  dt: float | None = None) -> np.ndarray:
    """Pseudo-spectral RK4 trajectory of ``u0`` at times ``t_out``, same grid.

    Returns ``[n, len(t_out)]``.  The step is at most ``0.25 dx^2 / nu``;
    steps land exactly on every output time.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    n = u0.shape[0]
    if n % 2:
        raise ValueError("solver grid must have even length")
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    t_out = np.asarray(t_out, dtype=np.float64)
    if np.any(np.diff(t_out) < 0) or t_out[0] < 0:
        raise ValueError("output times must be non-negative and sorted")
    dx = 1.0 / n
    dt_max = 0.25 * dx * dx / nu
    if dt is None or dt > dt_max:
        if dt is not None:
            log.info("requested dt=%g violates the stability bound; using %g", dt, dt_max)
        dt = dt_max
    k = np.arange(n // 2 + 1)
    keep = (k <= n // 3).astype(np.float64)
    u_hat = np.fft.rfft(u0)
    out = np.empty((n, t_out.shape[0]))
    t = 0.0
    for j, target in enumerate(t_out):
        span = target - t
        if span > 0:
            steps = int(math.ceil(span / dt - 1e-12))
            h = span / steps
            for _ in range(steps):
                k1 = _burgers_rhs(u_hat, k, nu, keep)
                k2 = _burgers_rhs(u_hat + 0.5 * h * k1, k, nu, keep)
                k3 = _burgers_rhs(u_hat + 0.5 * h * k2, k, nu, keep)
                k4 = _burgers_rhs(u_hat + h * k3, k, nu, keep)
                u_hat = u_hat + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = target
        out[:, j] = np.fft.irfft(u_hat, n=n)
    return out


def upsample_periodic(u: np.ndarray, n: int) -> np.ndarray:
    """Trigonometric interpolation of a periodic sample onto ``n`` nodes."""
    m = u.shape[0]
    if n == m:
        return u.copy()
    c = np.fft.rfft(u) / m
    full = np.zeros(n // 2 + 1, dtype=np.complex128)
    kk = min(len(c), len(full))
    full[:kk] = c[:kk]
    if m % 2 == 0 and kk == m // 2 + 1 and n > m:
        full[m // 2] *= 0.5  # split the Nyquist mode symmetrically
    return np.fft.irfft(full * n, n=n)


def solve_burgers_reference(u0: np.ndarray, nu: float = NU, n_x: int | None = None,
                            n_t_out: int = 26, n_internal: int = 512) -> np.ndarray:
    """Reference solution ``[n_x, n_t_out]`` on uniform times over [0, 1].

    ``u0`` is interpolated onto ``n_internal`` nodes, integrated, and
    sampled back at the ``n_x`` original nodes.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    n_x = n_x or u0.shape[0]
    if u0.shape[0] != n_x:
        raise ValueError("u0 length must equal n_x")
    n_internal = max(n_internal, n_x)
    if n_internal % n_x:
        raise ValueError("internal resolution must be a multiple of n_x")
    fine = upsample_periodic(u0, n_internal)
    t_out = np.linspace(0.0, 1.0, n_t_out)
    traj = solve_burgers(fine, t_out, nu)
    out = traj[:: n_internal // n_x]
    out[:, 0] = u0
    return out


def burgers_spectral_residual(traj: np.ndarray, tau: float, nu: float = NU) -> np.ndarray:
    """Residual at the middle of five snapshots spaced ``tau`` apart.

    ``u_t`` by the fourth-order central difference, ``(u^2/2)_x`` and
    ``u_xx`` spectrally.
    """
    if traj.shape[1] != 5:
        raise ValueError("need five snapshots")
    u_t = (traj[:, 0] - 8 * traj[:, 1] + 8 * traj[:, 3] - traj[:, 4]) / (12 * tau)
    u = traj[:, 2]
    n = u.shape[0]
    k = np.fft.rfftfreq(n, d=1.0 / n)
    flux_x = np.fft.irfft(2j * np.pi * k * np.fft.rfft(0.5 * u * u), n=n)
    u_xx = np.fft.irfft(-(2 * np.pi * k) ** 2 * np.fft.rfft(u), n=n)
    return u_t + flux_x - nu * u_xx


@dataclass
class BurgersInstance:
    u0: np.ndarray
    u: np.ndarray
    nu: float = NU
    seed: int = 0

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.u.shape[0]) / self.u.shape[0]

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.u.shape[1])

    def grid_points(self) -> np.ndarray:
        xx, tt = np.meshgrid(self.x, self.t, indexing="ij")
        return np.stack([xx.ravel(), tt.ravel()], axis=1)


def make_burgers_instance(rng: np.random.Generator, n_x: int = 128, n_t: int = 26,
                          nu: float = NU, n_internal: int = 512, seed: int = 0) -> BurgersInstance:
    u0 = sample_grf_u0(n_x, rng)
    u = solve_burgers_reference(u0, nu, n_x, n_t, n_internal)
    return BurgersInstance(u0, u, nu, seed)


# -- Poisson -------------------------------------------------------------------

def polar_radius(theta, c1: float, c2: float, r0: float = 1.0):
    return r0 * (1.0 + c1 * np.cos(4.0 * theta) + c2 * np.cos(8.0 * theta))


def boundary_value(theta, b: np.ndarray):
    return b[0] + 0.25 * (b[1] * np.cos(theta) + b[2] * np.sin(theta)
                          + b[3] * np.cos(2 * theta) + b[4] * np.sin(2 * theta))


def rbf_source(points: np.ndarray, beta: np.ndarray, mu: np.ndarray,
               positive_exponent: bool = False) -> np.ndarray:
    sign = 1.0 if positive_exponent else -1.0
    d2 = ((points[:, None, :] - mu[None, :, :]) ** 2).sum(-1)
    return (beta[None, :] * np.exp(sign * d2)).sum(1)


def polyline(c1: float, c2: float, r0: float = 1.0,
             n_segments: int = POLYLINE_SEGMENTS) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(n_segments) / n_segments
    r = polar_radius(theta, c1, c2, r0)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def polyline_distance(points: np.ndarray, vertices: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Unsigned distance from each point to the closed polyline."""
    a = vertices
    b = np.roll(vertices, -1, axis=0)
    ab = b - a
    ab2 = (ab * ab).sum(1)
    out = np.empty(points.shape[0])
    for s in range(0, points.shape[0], chunk):
        p = points[s:s + chunk, None, :]
        t = np.clip(((p - a) * ab).sum(-1) / ab2, 0.0, 1.0)
        proj = a + t[..., None] * ab
        out[s:s + chunk] = np.sqrt(((p - proj) ** 2).sum(-1).min(1))
    return out


def inside_star(points: np.ndarray, c1: float, c2: float, r0: float = 1.0) -> np.ndarray:
    theta = np.arctan2(points[:, 1], points[:, 0])
    return np.hypot(points[:, 0], points[:, 1]) <= polar_radius(theta, c1, c2, r0)


def signed_distance(points: np.ndarray, c1: float, c2: float, r0: float = 1.0) -> np.ndarray:
    """Distance to the boundary polyline, negative inside the domain."""
    d = polyline_distance(points, polyline(c1, c2, r0))
    return np.where(inside_star(points, c1, c2, r0), -d, d)


@dataclass
class ExactSolution:
    """Closed-form solution with its gradient and Laplacian."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]

    def source(self, p: np.ndarray) -> np.ndarray:
        """f = (1 + 0.1 u^2) Lap u + 0.2 u |grad u|^2."""
        u = self.value(p)
        g = self.gradient(p)
        return (1.0 + 0.1 * u * u) * self.laplacian(p) + 0.2 * u * (g * g).sum(1)


def exact_solution(kind: str) -> ExactSolution:
    if kind == "quadratic":
        return ExactSolution(
            kind,
            lambda p: p[:, 0] ** 2 + p[:, 1] ** 2,
            lambda p: 2.0 * p,
            lambda p: np.full(p.shape[0], 4.0),
        )
    if kind == "sinusoidal":
        pi = np.pi
        return ExactSolution(
            kind,
            lambda p: np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
            lambda p: pi * np.stack([np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
                                     np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])], axis=1),
            lambda p: -2.0 * pi * pi * np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
        )
    if kind == "zero":
        return ExactSolution(kind, lambda p: np.zeros(p.shape[0]),
                             lambda p: np.zeros_like(p), lambda p: np.zeros(p.shape[0]))
    raise ValueError(f"unknown manufactured solution {kind!r}")


@dataclass
class PoissonInstance:
    c1: float
    c2: float
    r0: float
    cloud: PointCloud
    f: np.ndarray
    b: np.ndarray
    beta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mu: np.ndarray = field(default_factory=lambda: np.zeros((3, 2)))
    b_coef: np.ndarray = field(default_factory=lambda: np.zeros(5))
    positive_exponent: bool = False
    exact: ExactSolution | None = None

    @property
    def area(self) -> float:
        return polygon_area(polyline(self.c1, self.c2, self.r0))

    def source_at(self, points: np.ndarray) -> np.ndarray:
        if self.exact is not None:
            return self.exact.source(points)
        return rbf_source(points, self.beta, self.mu, self.positive_exponent)

    def sdf_at(self, points: np.ndarray) -> np.ndarray:
        return signed_distance(points, self.c1, self.c2, self.r0)

    def features(self) -> np.ndarray:
        """Per-point input channels: source, boundary data (0 inside), boundary flag."""
        mask = self.cloud.boundary
        return np.stack([self.f, self.b * mask, mask], axis=1)


def sample_interior(rng: np.random.Generator, n: int, c1: float, c2: float,
                    r0: float = 1.0) -> np.ndarray:
    rmax = r0 * (1.0 + abs(c1) + abs(c2))
    pts = np.empty((0, 2))
    while pts.shape[0] < n:
        cand = rng.uniform(-rmax, rmax, size=(2 * n, 2))
        pts = np.concatenate([pts, cand[inside_star(cand, c1, c2, r0)]])
    return pts[:n]


def boundary_points(n: int, c1: float, c2: float, r0: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    theta = 2.0 * np.pi * np.arange(n) / n
    r = polar_radius(theta, c1, c2, r0)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1), theta


def build_cloud(interior: np.ndarray, boundary: np.ndarray, c1: float, c2: float,
                r0: float = 1.0) -> PointCloud:
    """Boundary points carry half an interior cell; all weights sum to the area."""
    area = polygon_area(polyline(c1, c2, r0))
    cell = area / (interior.shape[0] + 0.5 * boundary.shape[0])
    coords = np.concatenate([interior, boundary])
    weights = np.concatenate([np.full(interior.shape[0], cell),
                              np.full(boundary.shape[0], 0.5 * cell)])
    mask = np.concatenate([np.zeros(interior.shape[0]), np.ones(boundary.shape[0])])
    sdf = signed_distance(coords, c1, c2, r0)
    sdf[interior.shape[0]:] = 0.0
    return PointCloud(coords, weights, mask, sdf)


def _draw_shape(rng: np.random.Generator) -> tuple[float, float]:
    while True:
        c1, c2 = rng.uniform(-0.2, 0.2, size=2)
        theta = np.linspace(0.0, 2.0 * np.pi, POLYLINE_SEGMENTS, endpoint=False)
        if np.all(polar_radius(theta, c1, c2) > 0):
            return float(c1), float(c2)
        log.warning("degenerate domain (c1=%g, c2=%g); resampling", c1, c2)


def make_poisson_instance(rng: np.random.Generator, n_interior: int = 1000,
                          n_boundary: int = 100, r0: float = 1.0,
                          positive_exponent: bool = False) -> PoissonInstance:
    if n_interior < 50:
        raise ValueError("n_interior must be at least 50")
    c1, c2 = _draw_shape(rng)
    beta = rng.standard_normal(3)
    mu = rng.standard_normal((3, 2))
    b_coef = rng.uniform(-1.0, 1.0, size=5)
    interior = sample_interior(rng, n_interior, c1, c2, r0)
    bpts, theta = boundary_points(n_boundary, c1, c2, r0)
    cloud = build_cloud(interior, bpts, c1, c2, r0)
    f = rbf_source(cloud.coords, beta, mu, positive_exponent)
    b = np.concatenate([np.zeros(n_interior), boundary_value(theta, b_coef)])
    return PoissonInstance(c1, c2, r0, cloud, f, b, beta, mu, b_coef, positive_exponent)


def make_manufactured_poisson(u_choice: str, rng: np.random.Generator, c1: float = 0.0,
                              c2: float = 0.0, r0: float = 1.0, n_interior: int = 1000,
                              n_boundary: int = 100) -> PoissonInstance:
    exact = exact_solution(u_choice)
    interior = sample_interior(rng, n_interior, c1, c2, r0)
    bpts, _ = boundary_points(n_boundary, c1, c2, r0)
    cloud = build_cloud(interior, bpts, c1, c2, r0)
    f = exact.source(cloud.coords)
    b = exact.value(cloud.coords) * cloud.boundary
    return PoissonInstance(c1, c2, r0, cloud, f, b, exact=exact)
