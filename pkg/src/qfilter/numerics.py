"""Dense linear algebra and quadrature primitives.

Every operator in the package is a function of a discretized Hamiltonian, so
the central object is :class:`SpectralDecomposition`: once ``H = V diag(E) V^†``
is known, ``f(H)`` is exact up to the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

DEFAULT_NODES = 64


class NotHermitianError(ValueError):
    """Raised when a matrix expected to be Hermitian is not."""

    def __init__(self, asymmetry: float, tol: float):
        super().__init__(
            f"matrix is not Hermitian: max|H - H^dagger| = {asymmetry:.3e} exceeds {tol:.3e}"
        )
        self.asymmetry = asymmetry
        self.tol = tol


class ConvergenceError(RuntimeError):
    pass


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a Hermitian matrix.

    Attributes
    ----------
    eigenvalues : ndarray, shape (n,)
        Real, ascending.
    eigenvectors : ndarray, shape (n, n)
        Orthonormal columns; ``eigenvectors[:, k]`` belongs to ``eigenvalues[k]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def function(self, values: np.ndarray) -> np.ndarray:
        """Return ``V diag(values) V^†`` for per-eigenvalue ``values``."""
        q = self.eigenvectors
        return (q * values) @ q.conj().T

    def apply(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Matrix of ``f(H)`` for a vectorized scalar function ``f``."""
        return self.function(f(self.eigenvalues))

    def to_energy_basis(self, psi: np.ndarray) -> np.ndarray:
        return self.eigenvectors.conj().T @ psi

    def from_energy_basis(self, coeffs: np.ndarray) -> np.ndarray:
        return self.eigenvectors @ coeffs

    def reconstruct(self) -> np.ndarray:
        return self.function(self.eigenvalues)

    def orthonormality_residual(self) -> float:
        q = self.eigenvectors
        return float(np.max(np.abs(q.conj().T @ q - np.eye(self.dim))))


def hermitian_asymmetry(h: np.ndarray) -> float:
    return float(np.max(np.abs(h - h.conj().T))) if h.size else 0.0


def _fix_phases(q: np.ndarray) -> np.ndarray:
    # first component with non-negligible modulus made real positive, per column
    mags = np.abs(q)
    pivot = np.argmax(mags > 1e-8 * mags.max(axis=0, keepdims=True), axis=0)
    lead = q[pivot, np.arange(q.shape[1])]
    phase = lead / np.abs(lead)
    if np.isrealobj(q):
        return q * np.sign(lead)
    return q * phase.conj()


def eig_hermitian(h: np.ndarray, tol: float = 1e-10) -> SpectralDecomposition:
    """Full eigendecomposition of a dense Hermitian matrix.

    Parameters
    ----------
    h : array_like, shape (n, n)
        Hermitian matrix. Real symmetric input keeps real eigenvectors.
    tol : float
        Relative Hermiticity tolerance, measured against ``max|h|``.

    Returns
    -------
    SpectralDecomposition
        Eigenvalues ascending; each eigenvector's first significant component
        is made real and positive so repeated runs give identical output.

    Raises
    ------
    NotHermitianError
        If ``max|h - h^†| > tol * max|h|``.
    ConvergenceError
        If LAPACK fails to converge.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] == 0:
        raise ValueError(f"expected a non-empty square matrix, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError("matrix has non-finite entries")
    scale = float(np.max(np.abs(h)))
    asym = hermitian_asymmetry(h)
    if asym > tol * max(scale, np.finfo(float).tiny):
        raise NotHermitianError(asym, tol * scale)
    try:
        evals, evecs = scipy.linalg.eigh(h, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigh failed to converge: {exc}") from exc
    order = np.argsort(evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    return SpectralDecomposition(evals, _fix_phases(evecs))


def spectral_norm(m: np.ndarray) -> float:
    """Largest singular value."""
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0 or not np.any(m):
        return 0.0
    return float(scipy.linalg.svdvals(m, check_finite=False)[0])


def gauss_hermite_rule(center: float, width: float, nodes: int = DEFAULT_NODES):
    """Nodes and weights for expectations under ``N(center, width**2)``.

    Weights sum to one.
    """
    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    if nodes < 2:
        raise ValueError(f"need at least 2 nodes, got {nodes}")
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return center + width * x, w / np.sqrt(2.0 * np.pi)


def gauss_quadrature_complex(
    integrand: Callable[[float], complex | np.ndarray],
    center: float,
    width: float,
    nodes: int = DEFAULT_NODES,
):
    """Approximate ``∫ f(u) N(u; center, width²) du`` by Gauss-Hermite quadrature.

    ``integrand`` is called once per node with a float and may return a scalar
    or an array; the weighted sum has the same shape.

    Raises
    ------
    QuadratureError
        If the integrand is non-finite at any node.
    """
    us, ws = gauss_hermite_rule(center, width, nodes)
    total = None
    for u, w in zip(us, ws):
        val = np.asarray(integrand(float(u)))
        if not np.all(np.isfinite(val)):
            raise QuadratureError(f"integrand is not finite at node u={u!r}")
        total = w * val if total is None else total + w * val
    return total[()] if total.ndim == 0 else total


def expm(a: np.ndarray) -> np.ndarray:
    """Dense matrix exponential (Pade scaling and squaring)."""
    return scipy.linalg.expm(a)
