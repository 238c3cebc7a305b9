"""Derivative back-ends that do not use autodiff: regular-grid finite
differences and least-squares stencils on scattered points."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .autodiff import Tensor

log = logging.getLogger(__name__)

# monomial exponents (a, b) of dx^a dy^b
FIRST_BASIS = ((0, 0), (1, 0), (0, 1))
SECOND_BASIS = FIRST_BASIS + ((2, 0), (1, 1), (0, 2))
FIRST_DERIVS = ("x", "y")
SECOND_DERIVS = ("xx", "xy", "yy")
_DERIV_EXPONENT = {"x": (1, 0), "y": (0, 1), "xx": (2, 0), "xy": (1, 1), "yy": (0, 2)}
DEFAULT_K = {1: 6, 2: 12}


class RankDeficientStencil(np.linalg.LinAlgError):
    pass


def fd_regular(u: np.ndarray, dim: int, order: int, h: float) -> np.ndarray:
    """Second-order finite differences along ``dim`` of a uniform grid."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    u = np.moveaxis(np.asarray(u, dtype=np.float64), dim, 0)
    n = u.shape[0]
    if n < 3:
        raise ValueError("finite differences need at least 3 points along the axis")
    out = np.empty_like(u)
    if order == 1:
        out[1:-1] = (u[2:] - u[:-2]) / (2 * h)
        out[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * h)
        out[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * h)
    else:
        out[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / (h * h)
        if n >= 5:
            # one-sided, second-order accurate
            out[0] = (35 * u[0] - 104 * u[1] + 114 * u[2] - 56 * u[3] + 11 * u[4]) / (12 * h * h)
            out[-1] = (35 * u[-1] - 104 * u[-2] + 114 * u[-3] - 56 * u[-4] + 11 * u[-5]) \
                / (12 * h * h)
        elif n == 4:
            out[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / (h * h)
            out[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / (h * h)
        else:
            out[0] = out[1]
            out[-1] = out[-2]
    return np.moveaxis(out, 0, dim)


@dataclass(frozen=True)
class Stencil:
    center: np.ndarray
    indices: np.ndarray
    coeffs: dict[str, np.ndarray]
    regularized: bool = False

    def apply(self, u: np.ndarray, deriv: str) -> float:
        return float(self.coeffs[deriv] @ np.asarray(u)[self.indices])


def _basis_matrix(offsets: np.ndarray, basis) -> np.ndarray:
    return np.stack([offsets[:, 0] ** a * offsets[:, 1] ** b for a, b in basis])


def _rhs(basis, deriv: str) -> np.ndarray:
    target = _DERIV_EXPONENT[deriv]
    b = np.zeros(len(basis))
    b[basis.index(target)] = float(math.factorial(target[0]) * math.factorial(target[1]))
    return b


def solve_stencil(points: np.ndarray, center: np.ndarray, order: int,
                  label: str = "") -> tuple[dict[str, np.ndarray], bool]:
    """Minimum-norm coefficients exact on the polynomial basis of ``order``."""
    basis = FIRST_BASIS if order == 1 else SECOND_BASIS
    derivs = FIRST_DERIVS if order == 1 else FIRST_DERIVS + SECOND_DERIVS
    off = points - center
    scale = float(np.max(np.abs(off))) or 1.0
    a_mat = _basis_matrix(off / scale, basis)
    if a_mat.shape[1] < a_mat.shape[0] or np.linalg.matrix_rank(a_mat, tol=1e-10) < a_mat.shape[0]:
        raise RankDeficientStencil(
            f"rank-deficient stencil at query point {label or tuple(center)}")
    gram = a_mat @ a_mat.T
    regularized = False
    if np.linalg.cond(gram) > 1e12:
        gram = gram + 1e-12 * np.trace(gram) * np.eye(gram.shape[0])
        regularized = True
        log.info("stencil at %s regularized", label or tuple(center))
    coeffs = {}
    for d in derivs:
        c = a_mat.T @ np.linalg.solve(gram, _rhs(basis, d))
        coeffs[d] = c / scale ** sum(_DERIV_EXPONENT[d])
    return coeffs, regularized


def build_pointcloud_stencil(points: np.ndarray, query: np.ndarray, k_neighbors: int | None = None,
                             order: int = 1, tree: cKDTree | None = None) -> Stencil:
    """Least-squares stencil at ``query`` from its ``k`` nearest cloud points."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    points = np.asarray(points, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    k = k_neighbors or DEFAULT_K[order]
    need = len(FIRST_BASIS if order == 1 else SECOND_BASIS)
    if k < need:
        raise ValueError(f"k_neighbors must be at least {need} for order {order}")
    if k > points.shape[0]:
        raise ValueError("more neighbours requested than points available")
    tree = tree or cKDTree(points)
    _, idx = tree.query(query, k=k)
    idx = np.sort(np.atleast_1d(idx))
    coeffs, reg = solve_stencil(points[idx], query, order)
    return Stencil(query, idx, coeffs, reg)


@dataclass
class PointcloudOperator:
    """All stencils of a cloud as sparse rows: ``D u = sum_j c_ij u_j``."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    coeffs: dict[str, np.ndarray]
    n_regularized: int = 0

    def apply(self, u, deriv: str):
        c = self.coeffs[deriv]
        if isinstance(u, Tensor):
            return ad.segment_sum(ad.take(u, self.cols) * c, self.rows, self.n)
        u = np.asarray(u, dtype=np.float64)
        return np.bincount(self.rows, weights=c * u[self.cols], minlength=self.n)


def build_pointcloud_operator(points: np.ndarray, order: int = 1,
                              k_neighbors: int | None = None) -> PointcloudOperator:
    points = np.asarray(points, dtype=np.float64)
    k = k_neighbors or DEFAULT_K[order]
    tree = cKDTree(points)
    _, nbr = tree.query(points, k=k)
    nbr = np.sort(nbr, axis=1)
    derivs = FIRST_DERIVS if order == 1 else FIRST_DERIVS + SECOND_DERIVS
    coeffs = {d: np.empty(points.shape[0] * k) for d in derivs}
    n_reg = 0
    for i in range(points.shape[0]):
        try:
            c, reg = solve_stencil(points[nbr[i]], points[i], order, label=f"index {i}")
        except RankDeficientStencil as exc:
            raise RankDeficientStencil(f"{exc} (point {i} at {tuple(points[i])})") from None
        n_reg += reg
        for d in derivs:
            coeffs[d][i * k:(i + 1) * k] = c[d]
    rows = np.repeat(np.arange(points.shape[0]), k)
    return PointcloudOperator(points.shape[0], rows, nbr.ravel(), coeffs, n_reg)


def pointcloud_derivative(u: np.ndarray, coords, order: int = 1, k_neighbors: int | None = None,
                          route: str = "direct") -> np.ndarray:
    """Per-point derivatives: order 1 -> ``[u_x, u_y]``, order 2 -> ``[u_xx, u_xy, u_yy]``.

    ``route="nested"`` forms second derivatives by applying first-order
    stencils twice; ``"direct"`` fits the quadratic basis.
    """
    points = coords.coords if hasattr(coords, "coords") else np.asarray(coords, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if order == 1:
        op = build_pointcloud_operator(points, 1, k_neighbors)
        return np.stack([op.apply(u, d) for d in FIRST_DERIVS], axis=1)
    if order != 2:
        raise ValueError("order must be 1 or 2")
    if route == "direct":
        op = build_pointcloud_operator(points, 2, k_neighbors)
        return np.stack([op.apply(u, d) for d in SECOND_DERIVS], axis=1)
    if route == "nested":
        op = build_pointcloud_operator(points, 1, k_neighbors)
        ux, uy = op.apply(u, "x"), op.apply(u, "y")
        return np.stack([op.apply(ux, "x"), op.apply(ux, "y"), op.apply(uy, "y")], axis=1)
    raise ValueError("route must be 'direct' or 'nested'")
