"""Exact 2x2 symmetric positive definite tensor algebra.

Everything downstream (cell solves, the core recursion, exit-time bounds)
manipulates constant 2x2 conductivity tensors; closed forms keep the inner
loops exact and fast, with no iterative eigensolver anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import TensorError

# Relative slack for positive-definiteness checks; tolerates round-off
# accumulated over long core recursions without admitting genuinely
# degenerate tensors.
_PD_SLACK = 1e-12


@dataclass(frozen=True)
class SPDTensor:
    """Symmetric positive definite 2x2 tensor stored as three entries."""

    a11: float
    a12: float
    a22: float

    def __post_init__(self):
        if not (math.isfinite(self.a11) and math.isfinite(self.a12) and math.isfinite(self.a22)):
            raise TensorError("tensor entries must be finite")
        if self.a11 <= 0.0:
            raise TensorError(f"a11 must be positive, got {self.a11}")
        # The determinant check carries a relative slack so that round-off
        # accumulated over long core recursions cannot spuriously reject a
        # tensor that is positive definite in exact arithmetic.
        tr = abs(self.a11) + abs(self.a22)
        det = self.a11 * self.a22 - self.a12 * self.a12
        if det <= -_PD_SLACK * max(tr * tr, 1e-300):
            raise TensorError(f"determinant must be positive, got {det}")

    def as_array(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]], dtype=float)

    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a12

    def trace(self) -> float:
        return self.a11 + self.a22

    def scaled(self, c: float) -> "SPDTensor":
        if c <= 0:
            raise TensorError(f"scale factor must be positive, got {c}")
        return SPDTensor(c * self.a11, c * self.a12, c * self.a22)

    def quad(self, l) -> float:
        """Quadratic form l . T l for a 2-vector l."""
        l1, l2 = float(l[0]), float(l[1])
        return self.a11 * l1 * l1 + 2.0 * self.a12 * l1 * l2 + self.a22 * l2 * l2


def identity(scale: float = 1.0) -> SPDTensor:
    return SPDTensor(scale, 0.0, scale)


def from_array(m) -> SPDTensor:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise TensorError(f"expected a 2x2 array, got shape {m.shape}")
    if abs(m[0, 1] - m[1, 0]) > _PD_SLACK * (abs(m[0, 1]) + abs(m[1, 0]) + m.trace() + 1e-300):
        raise TensorError(f"array is not symmetric: off-diagonals {m[0,1]} vs {m[1,0]}")
    return SPDTensor(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))


def eigen_bounds(t: SPDTensor) -> tuple[float, float]:
    """Exact eigenvalues (lambda_min, lambda_max) of a 2x2 SPD tensor."""
    half_tr = 0.5 * (t.a11 + t.a22)
    half_gap = 0.5 * (t.a11 - t.a22)
    radius = math.hypot(half_gap, t.a12)
    lo, hi = half_tr - radius, half_tr + radius
    # Subtraction can round the small eigenvalue of an ill-conditioned tensor
    # to <= 0; recover it from the determinant, with a positive floor for
    # tensors accepted under the marginal round-off slack.
    if lo <= 0.0:
        lo = max(t.det() / hi, _PD_SLACK * hi)
    return lo, hi


def peclet(a: SPDTensor) -> SPDTensor:
    """Inverse tensor; applied to a core state A^n it is the renormalized Peclet tensor."""
    det = a.det()
    if det < 1e-300:
        raise TensorError(f"tensor is numerically singular, determinant {det}")
    return SPDTensor(a.a22 / det, -a.a12 / det, a.a11 / det)


def anisotropy(t: SPDTensor) -> float:
    """Eigenvalue ratio lambda_max / lambda_min >= 1; 1 iff t is isotropic."""
    lo, hi = eigen_bounds(t)
    return hi / lo


def quad_ratio_interval(num: SPDTensor, den: SPDTensor, n_angles: int = 64) -> tuple[float, float]:
    """Extremal values over unit directions l of (l.num l)/(l.den l).

    The exact extrema are the eigenvalues of den^{-1} num (a generalized
    eigenproblem, closed form in 2x2); a uniform angle sweep cross-checks the
    closed form and guards against degenerate conditioning.
    """
    n = num.as_array()
    d = den.as_array()
    # Similarity transform by den^{-1/2} keeps the problem symmetric.
    dd = np.linalg.eigh(d)
    inv_sqrt = dd.eigenvectors @ np.diag(1.0 / np.sqrt(dd.eigenvalues)) @ dd.eigenvectors.T
    sym = inv_sqrt @ n @ inv_sqrt
    eig = np.linalg.eigvalsh(0.5 * (sym + sym.T))
    lo, hi = float(eig[0]), float(eig[-1])

    angles = np.linspace(0.0, np.pi, n_angles, endpoint=False)
    ls = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    vals = np.einsum("ki,ij,kj->k", ls, n, ls) / np.einsum("ki,ij,kj->k", ls, d, ls)
    lo = min(lo, float(vals.min()))
    hi = max(hi, float(vals.max()))
    return lo, hi
