"""Post-processing of computed moment sequences: Christoffel-Darboux
kernels, support estimation by thresholding, linear quantities of
interest, and density fitting by weighted least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moments import (TruncatedMomentSequence, moment_matrix, riesz,
                      DegreeOverflowError)
from .polyalg import (AffineMap, Polynomial, basis_size,
                      enumerate_indices)


@dataclass
class ChristoffelModel:
    """Spectral model of the moment matrix M_r(y) for kernel evaluation.

    Eigenpairs below eps_rank * lambda_max are discarded; the kernel is the
    Moore-Penrose form restricted to the retained eigenspace, which handles
    the singular case (support inside an algebraic set) uniformly.
    """
    order: int
    basis: tuple
    matrix: np.ndarray
    eigenvalues: np.ndarray      # descending
    eigenvectors: np.ndarray     # columns match eigenvalues
    rank: int
    eps_rank: float
    transform: AffineMap = None  # ambient (natural) coords -> model coords

    @property
    def dimension(self):
        return len(self.basis[0])

    def basis_values(self, points) -> np.ndarray:
        """Monomial basis evaluated at points (N, n) -> (N, s(r))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.transform is not None and not self.transform.is_identity():
            pts = self.transform.to_scaled(pts)
        n = pts.shape[1]
        max_pow = max(max(a) for a in self.basis)
        powers = pts[:, :, None] ** np.arange(max_pow + 1)[None, None, :]
        out = np.empty((pts.shape[0], len(self.basis)))
        for k, alpha in enumerate(self.basis):
            v = np.ones(pts.shape[0])
            for d, e in enumerate(alpha):
                if e:
                    v = v * powers[:, d, e]
            out[:, k] = v
        return out


def christoffel_model(y: TruncatedMomentSequence, r: int,
                      transform=None) -> ChristoffelModel:
    """Spectral factorization of M_r(y) with the scale-aware rank cutoff."""
    if 2 * r > y.order:
        raise DegreeOverflowError(f"model of order {r} needs moments to {2 * r}")
    mat = moment_matrix(y, r).entries
    if not np.all(np.isfinite(mat)):
        raise ValueError("moment matrix has non-finite entries")
    lam, vec = np.linalg.eigh(mat)
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].copy()
    s_r = basis_size(y.dimension, r)
    eps = s_r * 1e-10
    lam_max = max(lam[0], 0.0)
    rank = int(np.sum(lam >= eps * lam_max)) if lam_max > 0 else 0
    return ChristoffelModel(r, enumerate_indices(y.dimension, r), mat,
                            lam, vec, rank, eps, transform)


def kernel_diag(model: ChristoffelModel, x) -> float:
    """Christoffel-Darboux kernel diagonal at one point; always >= 0."""
    return float(kernel_diag_grid(model, np.atleast_2d(np.asarray(x, float)))[0])


def kernel_diag_grid(model: ChristoffelModel, points) -> np.ndarray:
    phi = model.basis_values(points)
    proj = phi @ model.eigenvectors[:, :model.rank]
    lam = model.eigenvalues[:model.rank]
    if model.rank == 0:
        return np.zeros(phi.shape[0])
    return np.einsum("nk,k->n", proj ** 2, 1.0 / lam)


def christoffel_value(model: ChristoffelModel, x) -> float:
    """Christoffel function value 1/kappa(x, x) (inf when kappa = 0)."""
    k = kernel_diag(model, x)
    return 1.0 / k if k > 0 else math.inf


@dataclass
class SupportEstimate:
    points: np.ndarray
    kappa: np.ndarray
    eta: float
    gamma_r: float
    labels: np.ndarray           # True = inside

    def inside_fraction(self):
        return float(self.labels.mean())


def support_estimate(model: ChristoffelModel, grid, eta) -> SupportEstimate:
    """Label points inside when kappa(x, x) <= s(r)/eta.

    The threshold gamma_r = eta/s(r) on the Christoffel function guarantees
    that the estimated region carries at least 1 - eta of the mass of the
    measure behind exact moments.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.size == 0:
        raise ValueError("empty evaluation grid")
    kappa = kernel_diag_grid(model, pts)
    s_r = len(model.basis)
    gamma = eta / s_r
    labels = kappa <= s_r / eta
    return SupportEstimate(pts, kappa, eta, gamma, labels)


def make_grid(lo, hi, shape):
    """Regular cell-center grid over a box; returns (points, mesh shape)."""
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes = [lo[d] + (hi[d] - lo[d]) * (np.arange(shape[d]) + 0.5) / shape[d]
            for d in range(len(shape))]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    return pts, tuple(shape)


def qoi_estimate(y: TruncatedMomentSequence, g: Polynomial,
                 transform=None) -> float:
    """Exact linear quantity of interest ell_y(g) for polynomial g.

    When the sequence lives in scaled coordinates, pass the set transform
    and state g in natural coordinates.
    """
    if transform is not None and not transform.is_identity():
        g = transform.pull_polynomial(g)
    return riesz(y, g)


@dataclass
class ApproxQoI:
    value: float
    fit_sup_error: float         # max |g - g_p| over the provided samples
    fit_polynomial: Polynomial


def qoi_estimate_approx(y: TruncatedMomentSequence, sample_points,
                        sample_values, degree: int,
                        transform=None) -> ApproxQoI:
    """QoI for a non-polynomial g: least-squares polynomial surrogate of
    the samples, then the Riesz functional; the sup-norm of the fit
    residual over the samples is reported as the g - g_p error proxy."""
    pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
    vals = np.asarray(sample_values, dtype=float)
    if degree > y.order:
        raise DegreeOverflowError("fit degree exceeds stored moment order")
    if transform is not None and not transform.is_identity():
        pts = transform.to_scaled(pts)
    idx = enumerate_indices(y.dimension, degree)
    vand = np.empty((pts.shape[0], len(idx)))
    for k, alpha in enumerate(idx):
        v = np.ones(pts.shape[0])
        for d, e in enumerate(alpha):
            if e:
                v = v * pts[:, d] ** e
        vand[:, k] = v
    coef, *_ = np.linalg.lstsq(vand, vals, rcond=None)
    poly = Polynomial(y.dimension, {a: c for a, c in zip(idx, coef)})
    resid = float(np.abs(vand @ coef - vals).max(initial=0.0))
    return ApproxQoI(riesz(y, poly), resid, poly)


@dataclass
class DensityFit:
    polynomial: Polynomial
    residual: float              # weighted least-squares objective at optimum
    rank: int
    columns: int
    rows_used: int


def density_fit(y: TruncatedMomentSequence, reference: TruncatedMomentSequence,
                p: int, weights=None) -> DensityFit:
    """Polynomial density of y with respect to the reference measure.

    Minimizes sum_alpha w_alpha |y_alpha - sum_beta G[alpha, beta] a_beta|^2
    with G[alpha, beta] the reference moments at alpha + beta.  Rows run
    over |alpha| <= min(y.order, reference.order - p), the exact range the
    reference can pair with degree-p columns; the requirement is validated.
    Normal equations are solved with a spectral cutoff; rank deficiency is
    reported, not fatal.
    """
    if y.dimension != reference.dimension:
        raise ValueError("dimension mismatch")
    if p < 0:
        raise ValueError("fit degree must be >= 0")
    row_order = min(y.order, reference.order - p)
    if row_order < 0:
        raise DegreeOverflowError(
            f"reference order {reference.order} cannot pair degree-{p} columns")
    rows = enumerate_indices(y.dimension, row_order)
    cols = enumerate_indices(y.dimension, p)
    if len(rows) < len(cols):
        raise ValueError(
            f"{len(rows)} usable rows cannot determine {len(cols)} coefficients; "
            f"raise the reference order or lower p")
    w = np.ones(len(rows)) if weights is None else np.asarray(weights, float)
    if w.shape != (len(rows),):
        raise ValueError("weights must match the row count")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    G = np.empty((len(rows), len(cols)))
    for i, a in enumerate(rows):
        for j, bcol in enumerate(cols):
            G[i, j] = reference[tuple(x + z for x, z in zip(a, bcol))]
    rhs = np.array([y[a] for a in rows])
    gw = G * w[:, None]
    normal = G.T @ gw
    target = gw.T @ rhs
    lam, vec = np.linalg.eigh(normal)
    cutoff = max(lam.max(initial=0.0), 0.0) * 1e-12 * len(cols)
    keep = lam > cutoff
    inv = np.zeros_like(lam)
    inv[keep] = 1.0 / lam[keep]
    coef = vec @ (inv * (vec.T @ target))
    resid = float(np.sum(w * (G @ coef - rhs) ** 2))
    poly = Polynomial(y.dimension, {a: c for a, c in zip(cols, coef)})
    return DensityFit(poly, resid, int(keep.sum()), len(cols), len(rows))
