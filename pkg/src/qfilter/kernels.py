"""Regulated short-time kernels and singular-potential suppression bounds.

Grid-measure convention: a kernel matrix carries a ``1/h`` weight, so that
``h * K @ psi`` approximates ``∫ dx K(x', x) psi(x)`` and ``h * K`` is exactly
the position-basis matrix of the filtered step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, special

from .filters import FilterParams, filtered_step, unitary_step
from .hamiltonian import DomainError, Hamiltonian, PotentialSpec, evaluate_potential, kinetic_matrix
from .numerics import eig_hermitian
from .output import write_csv, write_json

SQRT2 = np.sqrt(2.0)


@dataclass
class KernelMatrix:
    values: np.ndarray
    positions: np.ndarray
    dt: float
    sigma: float
    spacing: float

    def operator(self) -> np.ndarray:
        """Position-basis matrix of the step (kernel times cell width)."""
        return self.values * self.spacing

    def dump(self, path, hamiltonian: Hamiltonian | None = None):
        """Write ``path`` as CSV (x_prime, x, re, im) plus a ``.json`` sidecar."""
        path = Path(path)
        x = self.positions
        xp, xx = np.meshgrid(x, x, indexing="ij")
        cols = (xp.ravel(), xx.ravel(), self.values.real.ravel(), self.values.imag.ravel())
        write_csv(path, ["x_prime", "x", "re", "im"], zip(*(c.tolist() for c in cols)))
        meta = {
            "dt": self.dt,
            "sigma": self.sigma,
            "spacing": self.spacing,
            "measure": "kernel values carry a 1/spacing weight; spacing*K is the step matrix",
        }
        if hamiltonian is not None:
            meta.update(hamiltonian.to_dict())
        write_json(path.with_suffix(".json"), meta)
        return path


def spectral_kernel(h: Hamiltonian, p: FilterParams) -> KernelMatrix:
    """``K(x', x) = Σ_n exp(-i E_n dt - sigma² dt² E_n² / 2) phi_n(x') phi_n*(x) / h``."""
    d = h.decomposition
    e = d.eigenvalues
    weights = np.exp(-1j * e * p.dt) * p.damping(e)
    q = d.eigenvectors
    values = np.empty((q.shape[0], q.shape[0]), dtype=complex)
    qw = q * weights
    qh = q.conj().T
    for i in range(q.shape[0]):
        values[i] = qw[i] @ qh
    values /= h.spacing
    return KernelMatrix(values, h.positions.copy(), p.dt, p.sigma, h.spacing)


def free_kernel(m: float, dt: float, x_prime, x):
    """``(m / 2 pi i dt)^{1/2} exp(i m (x' - x)² / 2 dt)``, principal branch."""
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    dx = np.asarray(x_prime, float) - np.asarray(x, float)
    return np.sqrt(m / (2 * np.pi * dt)) * np.exp(-0.25j * np.pi) * np.exp(0.5j * m * dx**2 / dt)


@dataclass(frozen=True)
class ParametrixParams:
    mass: float
    dt: float
    sigma: float
    potential: PotentialSpec

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"ParametrixParams: dt must be > 0, got {self.dt}")
        if not self.mass > 0:
            raise ValueError(f"ParametrixParams: mass must be > 0, got {self.mass}")
        if self.sigma < 0:
            raise ValueError(f"ParametrixParams: sigma must be >= 0, got {self.sigma}")


def midpoint_factors(p: ParametrixParams, x_prime, x):
    """Phase ``exp(-i V(x_m) dt)`` times local damping ``exp(-sigma² dt² V(x_m)² / 2)``."""
    xm = 0.5 * (np.asarray(x_prime, float) + np.asarray(x, float))
    v = evaluate_potential(p.potential, xm)
    return np.exp(-1j * v * p.dt) * np.exp(-0.5 * (p.sigma * p.dt * v) ** 2)


def midpoint_damping(p: ParametrixParams, x_m):
    v = evaluate_potential(p.potential, x_m)
    return np.exp(-0.5 * (p.sigma * p.dt * v) ** 2)


def midpoint_parametrix(p: ParametrixParams, x_prime, x):
    """Free kernel times midpoint phase and local Gaussian damping.

    Raises
    ------
    DomainError
        If the midpoint falls on the singular point of a coulomb/spike potential.
    """
    return free_kernel(p.mass, p.dt, x_prime, x) * midpoint_factors(p, x_prime, x)


def grid_free_kernel(h: Hamiltonian, p: FilterParams, filtered: bool = True) -> np.ndarray:
    """Kernel (with the 1/h weight) of the free step on the grid of ``h``.

    ``filtered`` includes the kinetic filter ``exp(-sigma² dt² T² / 2)``;
    otherwise this is the bare propagator ``exp(-i T dt)``.
    """
    t = eig_hermitian(kinetic_matrix(h.positions.size, h.spacing, h.mass))
    step = filtered_step(t, p) if filtered else unitary_step(t, p.dt)
    return step / h.spacing


def parametrix_deviation(
    h: Hamiltonian, p: FilterParams, region, margin: float = 0.0, kinetic_filter: bool = True
) -> float:
    """Max ``|K_sigma - K_0 * midpoint factors|`` over node pairs inside ``region``.

    ``K_0`` here is the free step of the same grid (same box, same stencil),
    not the continuum expression, which a finite grid cannot reproduce
    pointwise. With ``kinetic_filter`` the free step carries its own
    ``exp(-sigma² dt² T² / 2)``, so the deviation measures the corrections
    that couple kinetic and potential terms (split-step commutators and
    ``TV + VT`` in the filter exponent) and vanishes for ``V = 0`` at any
    sigma. Without it the pure ``T²`` part is included too; on a grid that
    part is dominated by the lattice's highest modes.

    Parameters
    ----------
    region : (lo, hi)
        Both ``x'`` and ``x`` range over grid nodes in ``[lo, hi]``.
    margin : float
        For singular potentials, required distance between ``region`` and 0.
    """
    lo, hi = region
    if h.potential.singular:
        dist = 0.0 if lo <= 0 <= hi else min(abs(lo), abs(hi))
        if not margin > 0 or dist < margin:
            raise DomainError(
                f"region {region} must stay at least margin={margin} (> 0) away from x = 0"
            )
    x = h.positions
    sel = np.flatnonzero((x >= lo) & (x <= hi))
    if sel.size == 0:
        raise ValueError(f"region {region} contains no grid nodes")
    k = spectral_kernel(h, p).values[np.ix_(sel, sel)]
    k0 = grid_free_kernel(h, p, kinetic_filter)[np.ix_(sel, sel)]
    pp = ParametrixParams(h.mass, p.dt, p.sigma, h.potential)
    xs = x[sel]
    approx = k0 * midpoint_factors(pp, xs[:, None], xs[None, :])
    return float(np.max(np.abs(k - approx)))


def danger_radius(sigma: float, dt: float, eta: float, nu: float) -> float:
    """``(sigma dt |eta| / sqrt 2)^{1/nu}``.

    Inside this radius the single-slice damping factor of a spike
    ``eta |x|^{-nu}`` is below ``e^{-1}``; at the radius it equals ``e^{-1}``.
    """
    if not 0 < nu <= 2:
        raise ValueError(f"nu must satisfy 0 < nu <= 2, got {nu}")
    return float((sigma * dt * abs(eta) / SQRT2) ** (1.0 / nu))


def resolution_rule_of_thumb(r_sing: float, eta: float, nu: float) -> float:
    """Smallest ``sigma * dt`` whose danger radius reaches ``r_sing``."""
    if not r_sing > 0:
        raise ValueError(f"r_sing must be > 0, got {r_sing}")
    if eta == 0:
        raise ValueError("eta = 0: there is no spike to resolve")
    return float(SQRT2 * r_sing**nu / abs(eta))


def tail_integral(c: float, delta: float, epsrel: float = 1e-12) -> float:
    """``∫_0^delta exp(-c / x²) dx`` by adaptive quadrature in ``y = 1/x``."""
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if c < 0:
        raise ValueError(f"c must be >= 0, got {c}")
    if c == 0:
        return float(delta)
    val, _ = integrate.quad(
        lambda y: np.exp(-c * y * y) / (y * y), 1.0 / delta, np.inf, epsabs=0.0, epsrel=epsrel,
        limit=200,
    )
    return float(val)


def tail_integral_panels(c: float, delta: float, panels: int, order: int = 16) -> float:
    """Same integral by composite Gauss-Legendre on ``[0, delta]``.

    Panel edges are geometric, ``delta * 2^{-52 k / panels}``, plus one panel
    down to 0, so the turn-on of the integrand near ``x ~ sqrt(c)`` is resolved
    at every scale. Doubling ``panels`` bisects each panel.
    """
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.concatenate(([0.0], delta * 2.0 ** (-52.0 * np.arange(panels, -1, -1) / panels)))
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        x = 0.5 * (b - a) * xg + 0.5 * (b + a)
        total += 0.5 * (b - a) * np.sum(wg * np.exp(-c / x**2))
    return float(total)


def tail_integral_closed_form(c: float, delta: float) -> float:
    """``delta e^{-c/delta²} - sqrt(pi c) erfc(sqrt(c)/delta)``."""
    return float(delta * np.exp(-c / delta**2) - np.sqrt(np.pi * c) * special.erfc(np.sqrt(c) / delta))


@dataclass
class CoulombBoundReport:
    sup_abs: float
    bound: float
    tail_integral: float
    c: float

    @property
    def holds(self) -> bool:
        return self.sup_abs <= self.bound


def coulomb_near_origin_bound(
    g: float, p: FilterParams, m: float, delta: float, midpoints=None, n_midpoints: int = 4001
) -> CoulombBoundReport:
    """Compare the parametrix near ``x = 0`` with its Gaussian-suppressed envelope.

    ``midpoints`` defaults to a uniform set in ``(-delta, delta)`` avoiding 0;
    the supremum is taken over pairs ``(x_m + s, x_m - s)`` with any ``s``
    since only the midpoint enters the modulus.
    """
    if not delta > 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    if midpoints is None:
        k = np.arange(n_midpoints)
        midpoints = -delta + (k + 0.5) * (2 * delta / n_midpoints)
    xm = np.asarray(midpoints, float)
    xm = xm[(np.abs(xm) < delta) & (xm != 0)]
    pp = ParametrixParams(m, p.dt, p.sigma, PotentialSpec.coulomb(g))
    s = 0.37 * delta
    sup_abs = float(np.max(np.abs(midpoint_parametrix(pp, xm + s, xm - s))))
    c = 0.5 * (p.sigma * p.dt * g) ** 2
    bound = float(np.sqrt(m / (2 * np.pi * p.dt)) * np.exp(-c / delta**2))
    return CoulombBoundReport(sup_abs, bound, tail_integral(c, delta), c)


def hs_norm(h: Hamiltonian, p: FilterParams, rtol: float = 1e-8) -> float:
    """Squared Hilbert-Schmidt norm ``Σ_n exp(-sigma² dt² E_n²)`` of the filtered step.

    Cross-checked against the squared Frobenius norm of the step matrix. At
    ``sigma = 0`` the step is unitary and the result is the grid dimension; a
    warning flags that case.
    """
    e = h.decomposition.eigenvalues
    if p.sigma == 0:
        warnings.warn("sigma = 0: filtered step is unitary, HS norm is the grid dimension")
    total = float(np.sum(p.damping(e) ** 2))
    frob = float(np.linalg.norm(filtered_step(h.decomposition, p), "fro") ** 2)
    if abs(frob - total) > rtol * total:
        raise ArithmeticError(f"HS norm mismatch: spectral {total!r} vs Frobenius {frob!r}")
    return total
