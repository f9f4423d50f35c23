"""Finite-difference Schrödinger operators on a uniform 1-D grid (hbar = 1)."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy import sparse

from .numerics import SpectralDecomposition, eig_hermitian

SINGULAR_KINDS = frozenset({"coulomb", "spike"})
_REQUIRED = {
    "free": (),
    "constant": ("value",),
    "harmonic": ("omega",),
    "step_well": ("width", "depth"),
    "coulomb": ("g",),
    "spike": ("eta", "nu"),
}


class DomainError(ValueError):
    """A singular potential was evaluated at its singular point."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on ``[x_min, x_max]``.

    With ``offset_half_cell`` the nodes are cell centres
    ``x_min + (k + 1/2) h`` with ``h = (x_max - x_min) / n_points``; otherwise
    they include both endpoints. ``None`` lets :class:`Hamiltonian` pick the
    offset grid for singular potentials.

    Dirichlet walls sit one spacing beyond the outermost nodes.
    """

    x_min: float
    x_max: float
    n_points: int
    offset_half_cell: bool | None = None

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError(f"GridSpec: need x_min < x_max, got {self.x_min}, {self.x_max}")
        if self.n_points < 2:
            raise ValueError(f"GridSpec: n_points must be >= 2, got {self.n_points}")

    @classmethod
    def dirichlet_box(cls, a: float, b: float, n_points: int) -> "GridSpec":
        """Interior nodes of the box ``(a, b)`` whose walls sit exactly at ``a`` and ``b``."""
        h = (b - a) / (n_points + 1)
        return cls(a + h, b - h, n_points, offset_half_cell=False)

    def with_offset(self, offset: bool) -> "GridSpec":
        return GridSpec(self.x_min, self.x_max, self.n_points, offset)

    @property
    def spacing(self) -> float:
        if self.offset_half_cell:
            return (self.x_max - self.x_min) / self.n_points
        return (self.x_max - self.x_min) / (self.n_points - 1)


def build_grid(spec: GridSpec) -> np.ndarray:
    if spec.offset_half_cell:
        h = spec.spacing
        x = spec.x_min + (np.arange(spec.n_points) + 0.5) * h
        if np.any(x == 0.0):
            raise ValueError("GridSpec: half-cell offset grid places a node at x = 0")
        return x
    return np.linspace(spec.x_min, spec.x_max, spec.n_points)


@dataclass(frozen=True)
class PotentialSpec:
    """One of the model potentials, identified by ``kind``.

    ``params`` per kind:

    - ``free``: none
    - ``constant``: ``value``
    - ``harmonic``: ``omega``, optional ``mass`` (default 1)
    - ``step_well``: ``width`` a, ``depth`` V0; V = 0 on [0, a], -V0 outside
    - ``coulomb``: ``g``; V = g/|x|
    - ``spike``: ``eta``, ``nu``, optional ``omega`` and ``mass`` for harmonic confinement
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise ValueError(f"PotentialSpec: unknown kind {self.kind!r}")
        missing = [k for k in _REQUIRED[self.kind] if k not in self.params]
        if missing:
            raise ValueError(f"PotentialSpec[{self.kind}]: missing parameters {missing}")
        p = self.params
        if self.kind == "step_well":
            if not p["depth"] > 0:
                raise ValueError("PotentialSpec[step_well]: depth V0 must be > 0")
            if not p["width"] > 0:
                raise ValueError("PotentialSpec[step_well]: width a must be > 0")
        if self.kind == "spike" and not 0 < p["nu"] <= 2:
            raise ValueError("PotentialSpec[spike]: exponent nu must satisfy 0 < nu <= 2")
        if p.get("mass", 1.0) <= 0:
            raise ValueError(f"PotentialSpec[{self.kind}]: mass must be > 0")

    @classmethod
    def free(cls):
        return cls("free")

    @classmethod
    def constant(cls, value):
        return cls("constant", {"value": value})

    @classmethod
    def harmonic(cls, omega, mass=1.0):
        return cls("harmonic", {"omega": omega, "mass": mass})

    @classmethod
    def step_well(cls, width, depth):
        return cls("step_well", {"width": width, "depth": depth})

    @classmethod
    def coulomb(cls, g):
        return cls("coulomb", {"g": g})

    @classmethod
    def spike(cls, eta, nu, omega=None, mass=1.0):
        params = {"eta": eta, "nu": nu, "mass": mass}
        if omega is not None:
            params["omega"] = omega
        return cls("spike", params)

    @property
    def singular(self) -> bool:
        return self.kind in SINGULAR_KINDS

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PotentialSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, d)

    def __call__(self, x):
        return evaluate_potential(self, x)


def evaluate_potential(pot: PotentialSpec, x):
    """Pointwise value of ``pot`` at ``x`` (scalar or array).

    Raises
    ------
    DomainError
        For coulomb/spike if any ``x == 0``.
    """
    x = np.asarray(x, dtype=float)
    p = pot.params
    if pot.singular and np.any(x == 0.0):
        raise DomainError(f"{pot.kind} potential is singular at x = 0")
    if pot.kind == "free":
        v = np.zeros_like(x)
    elif pot.kind == "constant":
        v = np.full_like(x, p["value"])
    elif pot.kind == "harmonic":
        v = 0.5 * p.get("mass", 1.0) * p["omega"] ** 2 * x**2
    elif pot.kind == "step_well":
        inside = (x >= 0.0) & (x <= p["width"])
        v = np.where(inside, 0.0, -float(p["depth"]))
    elif pot.kind == "coulomb":
        v = p["g"] / np.abs(x)
    else:
        v = p["eta"] * np.abs(x) ** (-p["nu"])
        if "omega" in p:
            v = v + 0.5 * p.get("mass", 1.0) * p["omega"] ** 2 * x**2
    return v[()] if v.ndim == 0 else v


@dataclass(frozen=True)
class Hamiltonian:
    """``H = -(1/2m) d²/dx² + V(x)`` on a grid with Dirichlet walls."""

    grid: GridSpec
    potential: PotentialSpec
    mass: float = 1.0

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError(f"Hamiltonian: mass must be > 0, got {self.mass}")
        if self.grid.n_points < 16:
            raise ValueError(f"Hamiltonian: grid needs n_points >= 16, got {self.grid.n_points}")
        if self.grid.offset_half_cell is None:
            object.__setattr__(self, "grid", self.grid.with_offset(self.potential.singular))

    @cached_property
    def positions(self) -> np.ndarray:
        return build_grid(self.grid)

    @property
    def spacing(self) -> float:
        return self.grid.spacing

    @cached_property
    def matrix(self) -> np.ndarray:
        return build_hamiltonian(self)

    @cached_property
    def decomposition(self) -> SpectralDecomposition:
        return decompose(self)

    def to_dict(self) -> dict:
        g = self.grid
        return {
            "grid": {
                "x_min": g.x_min,
                "x_max": g.x_max,
                "n_points": g.n_points,
                "offset_half_cell": g.offset_half_cell,
            },
            "potential": self.potential.to_dict(),
            "mass": self.mass,
        }


def kinetic_matrix(n: int, h: float, mass: float) -> np.ndarray:
    """Three-point ``-(1/2m) d²/dx²`` with zero Dirichlet ghosts."""
    c = 1.0 / (2.0 * mass * h * h)
    off = np.full(n - 1, -c)
    return sparse.diags([off, np.full(n, 2.0 * c), off], [-1, 0, 1]).toarray()


def build_hamiltonian(spec: Hamiltonian) -> np.ndarray:
    x = spec.positions
    h = kinetic_matrix(x.size, spec.spacing, spec.mass)
    h[np.diag_indices_from(h)] += evaluate_potential(spec.potential, x)
    return h


def decompose(spec: Hamiltonian) -> SpectralDecomposition:
    return eig_hermitian(spec.matrix)


def step_well_hamiltonian(width, depth, margin, n_points, mass=1.0) -> Hamiltonian:
    """Step well on the box ``(-margin, width + margin)``.

    ``margin`` is the outside-region length L, a convergence parameter.
    """
    grid = GridSpec.dirichlet_box(-margin, width + margin, n_points)
    return Hamiltonian(grid, PotentialSpec.step_well(width, depth), mass)
