"""Postselected Gaussian-filtered time steps and their diagnostics.

The filtered step ``V = exp(-i H dt) exp(-sigma² dt² H² / 2)`` is the Kraus
operator obtained from a Gaussian superposition of time rescalings
``u H`` with ``u ~ N(1, sigma²)``. Everything here is built from the spectral
decomposition of ``H``; no product formulas are used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import (
    DEFAULT_NODES,
    SpectralDecomposition,
    eig_hermitian,
    expm,
    gauss_hermite_rule,
    gauss_quadrature_complex,
    hermitian_asymmetry,
    spectral_norm,
)

IDENTITY_TOL = 1e-9
UNITARY_TOL = 1e-10
NORM_TOL = 1e-10


class PreconditionError(ValueError):
    pass


class ChannelAccuracyError(ArithmeticError):
    """Quadrature of the dephasing channel is too coarse for the requested accuracy."""


@dataclass(frozen=True)
class FilterParams:
    sigma: float
    dt: float

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"FilterParams: sigma must be >= 0, got {self.sigma}")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError(f"FilterParams: dt must be > 0, got {self.dt}")

    def damping(self, energies):
        """Per-eigenvalue filter weight ``exp(-sigma² dt² E² / 2)``."""
        e = np.asarray(energies, dtype=float)
        return np.exp(-0.5 * (self.sigma * self.dt * e) ** 2)

    def weight(self, u):
        """Gaussian density ``g_sigma(u)`` of the time rescaling ``u``."""
        return np.exp(-((u - 1.0) ** 2) / (2 * self.sigma**2)) / (np.sqrt(2 * np.pi) * self.sigma)


@dataclass
class SuperpositionSpec:
    """Coefficients ``a_j`` and generators ``H_j`` of ``U_mix = Σ a_j exp(-i H_j dt)``."""

    coefficients: np.ndarray
    generators: list[np.ndarray]
    decompositions: list[SpectralDecomposition] = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=complex)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("SuperpositionSpec: need a non-empty 1-D coefficient array")
        if len(self.generators) != a.size:
            raise ValueError(
                f"SuperpositionSpec: {a.size} coefficients but {len(self.generators)} generators"
            )
        if abs(a.sum() - 1.0) > 1e-12:
            raise ValueError(f"SuperpositionSpec: coefficients must sum to 1, got {a.sum()}")
        gens = [np.asarray(g) for g in self.generators]
        shapes = {g.shape for g in gens}
        if len(shapes) != 1 or len(gens[0].shape) != 2 or gens[0].shape[0] != gens[0].shape[1]:
            raise ValueError(f"SuperpositionSpec: generator dimension mismatch {sorted(shapes)}")
        self.coefficients = a
        self.generators = gens
        self.decompositions = [eig_hermitian(g) for g in gens]

    @classmethod
    def time_rescaling(cls, h, scales, coefficients) -> "SuperpositionSpec":
        """Generators ``u_j H`` sharing one Hamiltonian."""
        h = np.asarray(h)
        return cls(np.asarray(coefficients), [u * h for u in scales])

    @classmethod
    def gaussian_rescaling(cls, h, sigma: float, nodes: int) -> "SuperpositionSpec":
        """Discretized Gaussian over ``u``, see :func:`gaussian_rescaling_nodes`."""
        u, a = gaussian_rescaling_nodes(sigma, nodes)
        return cls.time_rescaling(h, u, a)

    @property
    def mean_generator(self) -> np.ndarray:
        return sum(a * g for a, g in zip(self.coefficients, self.generators))

    @property
    def max_norm(self) -> float:
        return max(spectral_norm(g) for g in self.generators)

    def variance_operator(self) -> np.ndarray:
        """``Var_a(H) = Σ a_j H_j² - H̄²``."""
        hbar = self.mean_generator
        return sum(a * g @ g for a, g in zip(self.coefficients, self.generators)) - hbar @ hbar


def gaussian_rescaling_nodes(sigma: float, nodes: int):
    """Equispaced ``u_j`` symmetric about 1 with normalized Gaussian weights.

    Standardized nodes span ``±sqrt(pi (n-1) / 2)``, which balances truncation
    and aliasing so both errors fall exponentially in ``n``.
    """
    if nodes < 1:
        raise ValueError("need at least one node")
    if nodes == 1 or sigma == 0:
        return np.ones(1), np.ones(1)
    span = np.sqrt(np.pi * (nodes - 1) / 2)
    s = np.linspace(-span, span, nodes)
    w = np.exp(-0.5 * s**2)
    return 1.0 + sigma * s, w / w.sum()


def unitary_step(h: SpectralDecomposition, dt: float) -> np.ndarray:
    return h.function(np.exp(-1j * h.eigenvalues * dt))


def gaussian_filter(h: SpectralDecomposition, p: FilterParams) -> np.ndarray:
    return h.function(p.damping(h.eigenvalues).astype(complex))


def filtered_step(h: SpectralDecomposition, p: FilterParams) -> np.ndarray:
    e = h.eigenvalues
    return h.function(np.exp(-1j * e * p.dt) * p.damping(e))


def filtered_step_quadrature(h: SpectralDecomposition, p: FilterParams, nodes=DEFAULT_NODES):
    """``∫ du g_sigma(u) exp(-i u H dt)`` by Gauss-Hermite quadrature over ``u``."""
    if p.sigma == 0:
        return unitary_step(h, p.dt)
    phases = gauss_quadrature_complex(
        lambda u: np.exp(-1j * u * h.eigenvalues * p.dt), 1.0, p.sigma, nodes
    )
    return h.function(phases)


def mix_step(spec: SuperpositionSpec, dt: float) -> np.ndarray:
    return sum(a * unitary_step(d, dt) for a, d in zip(spec.coefficients, spec.decompositions))


def _exp_mean_generator(spec: SuperpositionSpec, dt: float) -> np.ndarray:
    hbar = spec.mean_generator
    if hermitian_asymmetry(hbar) <= 1e-13 * max(1.0, np.abs(hbar).max()):
        hbar = 0.5 * (hbar + hbar.conj().T)
        return unitary_step(eig_hermitian(hbar), dt)
    return expm(-1j * dt * hbar)


@dataclass
class BoundReport:
    """Short-time comparison of ``U_mix`` with ``exp(-i H̄ dt)``.

    ``cubic_constant`` is the a priori Taylor-remainder constant
    ``(A + A³ e^{A dt M}) / 6`` with ``A = Σ|a_j|``: the bound
    ``lhs <= quadratic_term + cubic_constant (dt M)³`` holds rigorously.
    """

    dt: float
    lhs: float
    quadratic_term: float
    mean_h_norm: float
    max_norm: float
    sum_abs_coeffs: float
    cubic_constant: float
    variance: np.ndarray = field(repr=False)

    @property
    def dt_m(self) -> float:
        return self.dt * self.max_norm

    @property
    def cubic_ratio(self) -> float:
        """``(lhs - quadratic_term) / (dt M)³``."""
        return (self.lhs - self.quadratic_term) / self.dt_m**3

    def as_record(self) -> dict:
        return {
            "dt": self.dt,
            "lhs": self.lhs,
            "quadratic_term": self.quadratic_term,
            "mean_h_norm": self.mean_h_norm,
            "max_norm": self.max_norm,
            "sum_abs_coeffs": self.sum_abs_coeffs,
            "cubic_constant": self.cubic_constant,
            "cubic_ratio": self.cubic_ratio,
        }


def error_bound_check(spec: SuperpositionSpec, dt: float, max_dt_m: float = 0.5) -> BoundReport:
    """Measure ``||U_mix - exp(-i H̄ dt)||`` against the second-order term.

    Raises
    ------
    PreconditionError
        If ``dt * max_j ||H_j|| > max_dt_m``.
    """
    m = spec.max_norm
    if dt * m > max_dt_m:
        raise PreconditionError(
            f"error_bound_check requires dt*M <= {max_dt_m}, measured dt*M = {dt * m:.4g}"
        )
    var = spec.variance_operator()
    lhs = spectral_norm(mix_step(spec, dt) - _exp_mean_generator(spec, dt))
    a_abs = float(np.abs(spec.coefficients).sum())
    return BoundReport(
        dt=dt,
        lhs=lhs,
        quadratic_term=0.5 * dt**2 * spectral_norm(var),
        mean_h_norm=spectral_norm(spec.mean_generator),
        max_norm=m,
        sum_abs_coeffs=a_abs,
        cubic_constant=(a_abs + a_abs**3 * np.exp(a_abs * dt * m)) / 6.0,
        variance=var,
    )


def fit_power_law(x, y) -> tuple[float, float]:
    """Least-squares ``log y = log c + p log x``; returns ``(p, c)``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    p, logc = np.polyfit(lx, ly, 1)
    return float(p), float(np.exp(logc))


def _check_normalized(psi: np.ndarray):
    n = np.linalg.norm(psi)
    if abs(n - 1.0) > NORM_TOL:
        raise ValueError(f"state must be normalized, ||psi|| = {n!r}")


def normalize(psi: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(psi)
    if n == 0:
        raise ValueError("cannot normalize the zero vector")
    return psi / n


def success_probability(psi, h: SpectralDecomposition, p: FilterParams) -> float:
    """``<psi| exp(-sigma² dt² H²) |psi>`` for a normalized state."""
    psi = np.asarray(psi)
    _check_normalized(psi)
    c = h.to_energy_basis(psi)
    return float(np.sum(np.abs(c) ** 2 * p.damping(h.eigenvalues) ** 2))


def multi_step_success(psi, h: SpectralDecomposition, p: FilterParams, n: int) -> float:
    """Probability that ``n`` consecutive postselections all succeed.

    Closed form ``<psi| exp(-sigma² t dt H²) |psi>`` with ``t = n dt``,
    cross-checked against ``||V^n psi||²`` from ``n`` explicit applications.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    psi = np.asarray(psi)
    _check_normalized(psi)
    c = h.to_energy_basis(psi)
    t = n * p.dt
    closed = float(np.sum(np.abs(c) ** 2 * np.exp(-(p.sigma**2) * t * p.dt * h.eigenvalues**2)))
    v = filtered_step(h, p)
    phi = psi.astype(complex)
    for _ in range(n):
        phi = v @ phi
    direct = float(np.vdot(phi, phi).real)
    if abs(direct - closed) > IDENTITY_TOL:
        raise ArithmeticError(
            f"p_N mismatch: closed form {closed!r} vs repeated application {direct!r}"
        )
    return closed


def multi_step_identity_check(h: SpectralDecomposition, p: FilterParams, n: int) -> float:
    """Spectral-norm residual of ``V^n - exp(-iHt) exp(-sigma² t dt H² / 2)``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    vn = np.linalg.matrix_power(filtered_step(h, p), n)
    t = n * p.dt
    e = h.eigenvalues
    closed = h.function(np.exp(-1j * e * t) * np.exp(-0.5 * p.sigma**2 * t * p.dt * e**2))
    return spectral_norm(vn - closed)


def diffusive_step(h: SpectralDecomposition, kappa: float, t: float) -> np.ndarray:
    """``exp(-iHt - kappa t H² / 2)``."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    e = h.eigenvalues
    return h.function(np.exp(-1j * e * t - 0.5 * kappa * t * e**2))


def check_density_matrix(rho: np.ndarray, tol: float = 1e-10):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got {rho.shape}")
    if hermitian_asymmetry(rho) > tol:
        raise ValueError("density matrix is not Hermitian")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise ValueError("density matrix is not positive semidefinite")
    if np.trace(rho).real > 1 + 1e-12:
        raise ValueError("density matrix has trace > 1")


def dephasing_channel(
    rho, h: SpectralDecomposition, p: FilterParams, nodes: int = DEFAULT_NODES, tol: float = 1e-8
) -> np.ndarray:
    """Unconditioned time-smearing channel ``∫ du g(u) U_u rho U_u^†``.

    Evaluated by quadrature over ``u`` in the energy basis and compared with
    the closed form, in which each coherence ``rho_{EE'}`` is multiplied by
    ``exp(-i(E-E')dt) exp(-sigma² dt² (E-E')² / 2)``.

    Raises
    ------
    ChannelAccuracyError
        If the quadrature disagrees with the closed form by more than ``tol``
        or produces an eigenvalue below ``-tol``.
    """
    if nodes < 16:
        raise ValueError(f"dephasing_channel needs nodes >= 16, got {nodes}")
    rho = np.asarray(rho)
    check_density_matrix(rho)
    q = h.eigenvectors
    r = q.conj().T @ rho @ q
    de = h.eigenvalues[:, None] - h.eigenvalues[None, :]
    exact = np.exp(-1j * de * p.dt) * np.exp(-0.5 * (p.sigma * p.dt * de) ** 2)
    if p.sigma == 0:
        factor = exact
    else:
        us, ws = gauss_hermite_rule(1.0, p.sigma, nodes)
        factor = np.zeros_like(de, dtype=complex)
        for u, w in zip(us, ws):
            factor += w * np.exp(-1j * u * de * p.dt)
    out_e = factor * r
    err = np.max(np.abs((factor - exact) * r))
    if err > tol:
        raise ChannelAccuracyError(
            f"quadrature with {nodes} nodes deviates from closed form by {err:.3e}; increase nodes"
        )
    out = q @ out_e @ q.conj().T
    out = 0.5 * (out + out.conj().T)
    lo = np.linalg.eigvalsh(out).min()
    if lo < -tol:
        raise ChannelAccuracyError(
            f"channel output lost positivity (min eigenvalue {lo:.3e}); increase nodes"
        )
    return out


def spectral_window_weight(psi, h: SpectralDecomposition, e_star: float) -> float:
    """Spectral weight of ``psi`` outside ``[-e_star, e_star]``."""
    if not e_star > 0:
        raise ValueError(f"e_star must be > 0, got {e_star}")
    c = h.to_energy_basis(np.asarray(psi))
    return float(np.sum(np.abs(c[np.abs(h.eigenvalues) > e_star]) ** 2))


@dataclass
class SuppressionReport:
    lhs: float
    bound: float
    projected_norm: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.bound if self.bound > 0 else np.inf


def negative_sector_suppression(
    h: SpectralDecomposition, p: FilterParams, alpha_v0: float, psi
) -> SuppressionReport:
    """``||V P psi||`` for the spectral projector ``P`` onto ``E <= -alpha_v0``.

    The bound ``exp(-sigma² dt² alpha_v0² / 2) ||psi||`` must hold; a violation
    raises ``ArithmeticError``.
    """
    if not alpha_v0 > 0:
        raise ValueError(f"alpha_v0 must be > 0, got {alpha_v0}")
    psi = np.asarray(psi, dtype=complex)
    c = h.to_energy_basis(psi)
    proj = h.from_energy_basis(np.where(h.eigenvalues <= -alpha_v0, c, 0.0))
    lhs = float(np.linalg.norm(filtered_step(h, p) @ proj))
    bound = float(np.exp(-0.5 * (p.sigma * p.dt * alpha_v0) ** 2) * np.linalg.norm(psi))
    if lhs > bound + 1e-12:
        raise ArithmeticError(f"negative-sector bound violated: {lhs!r} > {bound!r}")
    return SuppressionReport(lhs, bound, float(np.linalg.norm(proj)))


def ground_state(h: SpectralDecomposition) -> np.ndarray:
    return h.eigenvectors[:, 0].astype(complex)


def eigenstate_mixture(h: SpectralDecomposition, amplitudes: Sequence[complex]) -> np.ndarray:
    """Normalized combination of the lowest ``len(amplitudes)`` eigenvectors."""
    a = np.asarray(amplitudes, dtype=complex)
    return normalize(h.eigenvectors[:, : a.size] @ a)
