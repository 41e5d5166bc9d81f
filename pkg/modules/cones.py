"""
Cones Module
============

Jordan-algebra operations and Nesterov-Todd scalings of the symmetric cones
used by the interior-point solver.

Features:
- Nonnegative orthant, second-order cone, rotated second-order cone, PSD cone (svec form)
- NT scaling W with W z = W^{-T} x = lambda and the Hessian block H = W^{-1} W^{-T}
- Jordan product, inverse product (lambda \\ r) and maximum step to the boundary

Every cone works on a flat slice of the solver's variable vector. Scaled
quantities (lambda and the right-hand sides built from it) live in the Jordan
algebra of the cone; the rotated cone maps into the plain second-order algebra
through the orthogonal involution T(u, v, w) = ((u + v)/sqrt2, (u - v)/sqrt2, w).
"""

import logging
from abc import ABC, abstractmethod

import numpy as np
from scipy.linalg import cholesky, eigh, solve_triangular, svd

from .conic_program import SQRT2, BlockKind, ConeBlock, smat, svec

logger = logging.getLogger(__name__)


class ConeScaling(ABC):
    """NT scaling of one block at the current (x, z)."""

    lam: np.ndarray

    @abstractmethod
    def w(self, v: np.ndarray) -> np.ndarray:
        """W v"""

    @abstractmethod
    def w_inv(self, v: np.ndarray) -> np.ndarray:
        """W^{-1} v"""

    @abstractmethod
    def w_inv_t(self, v: np.ndarray) -> np.ndarray:
        """W^{-T} v"""

    @abstractmethod
    def hessian(self) -> np.ndarray:
        """Dense W^{-1} W^{-T}, or its diagonal for the orthant."""


class Cone(ABC):
    """A symmetric cone occupying ``size`` entries with barrier degree ``degree``."""

    size: int
    degree: int

    @abstractmethod
    def identity(self) -> np.ndarray:
        ...

    @abstractmethod
    def scaling(self, x: np.ndarray, z: np.ndarray) -> ConeScaling:
        ...

    @abstractmethod
    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jordan product u o v in the scaled algebra."""

    @abstractmethod
    def divide(self, lam: np.ndarray, r: np.ndarray) -> np.ndarray:
        """Solve lam o w = r for w."""

    @abstractmethod
    def max_step(self, x: np.ndarray, d: np.ndarray) -> float:
        """Largest alpha with x + alpha d in the cone (inf if unbounded); x interior."""

    @abstractmethod
    def margin(self, x: np.ndarray) -> float:
        """Signed distance-like membership measure (>= 0 inside)."""

    def algebra_identity(self) -> np.ndarray:
        return self.identity()


# ---------------------------------------------------------------------------
# Nonnegative orthant
# ---------------------------------------------------------------------------

class _DiagonalScaling(ConeScaling):
    def __init__(self, x: np.ndarray, z: np.ndarray):
        self.d = np.sqrt(x / z)
        self.lam = np.sqrt(x * z)

    def w(self, v):
        return self.d * v

    def w_inv(self, v):
        return v / self.d

    def w_inv_t(self, v):
        return v / self.d

    def hessian(self):
        return 1.0 / self.d ** 2


class NonnegativeCone(Cone):
    def __init__(self, size: int):
        self.size = size
        self.degree = size

    def identity(self):
        return np.ones(self.size)

    def scaling(self, x, z):
        if np.any(x <= 0) or np.any(z <= 0):
            raise np.linalg.LinAlgError("orthant iterate left the interior")
        return _DiagonalScaling(x, z)

    def product(self, u, v):
        return u * v

    def divide(self, lam, r):
        return r / lam

    def max_step(self, x, d):
        neg = d < 0
        if not np.any(neg):
            return np.inf
        return float(np.min(-x[neg] / d[neg]))

    def margin(self, x):
        return float(np.min(x)) if x.size else np.inf


# ---------------------------------------------------------------------------
# Second-order cone
# ---------------------------------------------------------------------------

def _jdot(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[0] - u[1:] @ v[1:])


def _jflip(u: np.ndarray) -> np.ndarray:
    out = -u.copy()
    out[0] = u[0]
    return out


class _LorentzScaling(ConeScaling):
    """W = beta (2 v v' - J), symmetric, with v' J v = 1."""

    def __init__(self, x: np.ndarray, z: np.ndarray):
        xn, zn = _jdot(x, x), _jdot(z, z)
        if xn <= 0 or zn <= 0 or x[0] <= 0 or z[0] <= 0:
            raise np.linalg.LinAlgError("second-order iterate left the interior")
        sbar = x / np.sqrt(xn)
        zbar = z / np.sqrt(zn)
        gamma = np.sqrt((1.0 + sbar @ zbar) / 2.0)
        wbar = (sbar + _jflip(zbar)) / (2.0 * gamma)
        e = np.zeros_like(x)
        e[0] = 1.0
        self.v = (wbar + e) / np.sqrt(2.0 * (wbar[0] + 1.0))
        self.beta = (xn / zn) ** 0.25
        self.lam = self.w(z)

    def w(self, u):
        return self.beta * (2.0 * self.v * (self.v @ u) - _jflip(u))

    def w_inv(self, u):
        jv = _jflip(self.v)
        return (2.0 * jv * (jv @ u) - _jflip(u)) / self.beta

    def w_inv_t(self, u):
        return self.w_inv(u)

    def hessian(self):
        n = self.v.size
        jv = _jflip(self.v)
        J = -np.eye(n)
        J[0, 0] = 1.0
        winv = (2.0 * np.outer(jv, jv) - J) / self.beta
        return winv @ winv


class SecondOrderCone(Cone):
    """{(t, x): t >= ||x||}."""

    def __init__(self, size: int):
        self.size = size
        self.degree = 1

    def identity(self):
        e = np.zeros(self.size)
        e[0] = 1.0
        return e

    def scaling(self, x, z):
        return _LorentzScaling(x, z)

    def product(self, u, v):
        out = u[0] * v[1:] + v[0] * u[1:]
        return np.concatenate([[u @ v], out])

    def divide(self, lam, r):
        det = lam[0] ** 2 - lam[1:] @ lam[1:]
        w0 = (lam[0] * r[0] - lam[1:] @ r[1:]) / det
        w1 = (r[1:] - w0 * lam[1:]) / lam[0]
        return np.concatenate([[w0], w1])

    def max_step(self, x, d):
        a = _jdot(d, d)
        b = 2.0 * _jdot(x, d)
        c = _jdot(x, x)
        return _first_positive_root(a, b, c)

    def margin(self, x):
        return float(x[0] - np.linalg.norm(x[1:]))


def _first_positive_root(a: float, b: float, c: float) -> float:
    """Smallest alpha > 0 with a alpha^2 + b alpha + c = 0, given c > 0."""
    scale = max(abs(a), abs(b), abs(c), 1e-300)
    if abs(a) <= 1e-14 * scale:
        return -c / b if b < 0 else np.inf
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return np.inf
    root = np.sqrt(disc)
    q = -0.5 * (b + np.copysign(root, b))
    candidates = [r for r in (q / a, c / q if q != 0 else np.inf) if r > 0]
    return float(min(candidates)) if candidates else np.inf


# ---------------------------------------------------------------------------
# Rotated second-order cone: {(u, v, w): 2 u v >= ||w||^2, u, v >= 0}
# ---------------------------------------------------------------------------

def rotate(u: np.ndarray) -> np.ndarray:
    """T(u, v, w) = ((u + v)/sqrt2, (u - v)/sqrt2, w); T is its own inverse."""
    out = u.copy()
    out[0] = (u[0] + u[1]) / SQRT2
    out[1] = (u[0] - u[1]) / SQRT2
    return out


class _RotatedScaling(ConeScaling):
    def __init__(self, x: np.ndarray, z: np.ndarray):
        self.inner = _LorentzScaling(rotate(x), rotate(z))
        self.lam = self.inner.lam

    def w(self, u):
        return self.inner.w(rotate(u))

    def w_inv(self, u):
        return rotate(self.inner.w_inv(u))

    def w_inv_t(self, u):
        return self.inner.w_inv(rotate(u))

    def hessian(self):
        n = self.lam.size
        T = np.eye(n)
        T[:2, :2] = np.array([[1.0, 1.0], [1.0, -1.0]]) / SQRT2
        return T @ self.inner.hessian() @ T


class RotatedSecondOrderCone(SecondOrderCone):
    def identity(self):
        return rotate(super().identity())

    def algebra_identity(self):
        return super().identity()

    def scaling(self, x, z):
        return _RotatedScaling(x, z)

    def max_step(self, x, d):
        return super().max_step(rotate(x), rotate(d))

    def margin(self, x):
        return super().margin(rotate(x))


# ---------------------------------------------------------------------------
# PSD cone in svec form
# ---------------------------------------------------------------------------

class _MatrixScaling(ConeScaling):
    """
    W(Z) = R' Z R and W^{-T}(X) = R^{-1} X R^{-T}, both equal to diag(lambda).
    """

    def __init__(self, x: np.ndarray, z: np.ndarray):
        X, Z = smat(x), smat(z)
        L1 = cholesky(X, lower=True)
        L2 = cholesky(Z, lower=True)
        _, sigma, vt = svd(L2.T @ L1)
        if np.any(sigma <= 0):
            raise np.linalg.LinAlgError("psd iterate left the interior")
        self.R = L1 @ vt.T / np.sqrt(sigma)
        self.R_inv = np.sqrt(sigma)[:, None] * solve_triangular(L1, vt.T, lower=True, trans="T").T
        self.sigma = sigma
        self.lam = svec(np.diag(sigma))

    def w(self, v):
        return svec(self.R.T @ smat(v) @ self.R)

    def w_inv(self, v):
        return svec(self.R_inv.T @ smat(v) @ self.R_inv)

    def w_inv_t(self, v):
        return svec(self.R_inv @ smat(v) @ self.R_inv.T)

    def hessian(self):
        G = self.R_inv.T @ self.R_inv
        n = G.shape[0]
        rows, cols = np.tril_indices(n)
        order = np.lexsort((rows, cols))
        I, J = rows[order], cols[order]
        s = np.where(I == J, 1.0, SQRT2)
        H = G[I[:, None], I[None, :]] * G[J[:, None], J[None, :]] + G[I[:, None], J[None, :]] * G[J[:, None], I[None, :]]
        return 0.5 * s[:, None] * s[None, :] * H


class PsdCone(Cone):
    def __init__(self, order: int):
        self.order = order
        self.size = order * (order + 1) // 2
        self.degree = order

    def identity(self):
        return svec(np.eye(self.order))

    def scaling(self, x, z):
        return _MatrixScaling(x, z)

    def product(self, u, v):
        U, V = smat(u), smat(v)
        return svec(0.5 * (U @ V + V @ U))

    def divide(self, lam, r):
        diag = np.diag(smat(lam))
        return svec(2.0 * smat(r) / (diag[:, None] + diag[None, :]))

    def max_step(self, x, d):
        L = cholesky(smat(x), lower=True)
        inner = solve_triangular(L, solve_triangular(L, smat(d), lower=True).T, lower=True)
        low = eigh(0.5 * (inner + inner.T), eigvals_only=True)[0]
        return -1.0 / low if low < 0 else np.inf

    def margin(self, x):
        return float(eigh(smat(x), eigvals_only=True)[0])


def make_cone(block: ConeBlock) -> Cone:
    if block.kind == BlockKind.NONNEG:
        return NonnegativeCone(block.size)
    if block.kind == BlockKind.SOC:
        return SecondOrderCone(block.size)
    if block.kind == BlockKind.RSOC:
        return RotatedSecondOrderCone(block.size)
    if block.kind == BlockKind.PSD:
        return PsdCone(block.order)
    raise ValueError(f"no cone for block kind {block.kind}")

