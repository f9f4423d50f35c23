"""Euclidean lattice scalar field with the induced phi^8 stabilizer.

Site potential ``U(phi) = m²/2 phi² + lambda0 phi⁴ + sigma²/2 phi⁸`` on a
periodic hypercubic lattice in lattice units. The phi^8 term is what the
local Gaussian average of the quartic coupling leaves behind in the Euclidean
weight; it is sampled directly, never through a fluctuating coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .numerics import gauss_quadrature_complex

DRIFT_TOL = 1e-8
MAX_EXTENT = 64


class UnstableActionError(ValueError):
    """The Euclidean weight is not normalizable; sampling is refused."""


@dataclass(frozen=True)
class LatticeParams:
    """``dims=()`` is a single site (d = 0, no gradient term)."""

    dims: tuple[int, ...] = ()
    mass2: float = 1.0
    lambda0: float = 1.0
    sigma_c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if len(self.dims) > 2:
            raise ValueError(f"LatticeParams: d must be 0, 1 or 2, got {len(self.dims)}")
        for n in self.dims:
            if n < 1 or n > MAX_EXTENT:
                raise ValueError(f"LatticeParams: extents must be in [1, {MAX_EXTENT}], got {n}")
            if n > 1 and n % 2:
                raise ValueError(f"LatticeParams: extents must be even (checkerboard), got {n}")
        if not self.sigma_c >= 0:
            raise ValueError(f"LatticeParams: sigma_c must be >= 0, got {self.sigma_c}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.dims if self.dims else (1,)

    @property
    def volume(self) -> int:
        return math.prod(self.shape)

    def with_sigma(self, sigma_c: float) -> "LatticeParams":
        return LatticeParams(self.dims, self.mass2, self.lambda0, sigma_c)

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "mass2": self.mass2,
            "lambda0": self.lambda0,
            "sigma_c": self.sigma_c,
        }


@dataclass
class FieldConfiguration:
    values: np.ndarray
    action: float

    @classmethod
    def from_values(cls, values, p: LatticeParams) -> "FieldConfiguration":
        values = np.array(values, dtype=float).reshape(p.shape)
        return cls(values, euclidean_action(values, p))

    @classmethod
    def cold(cls, p: LatticeParams, value: float = 0.0) -> "FieldConfiguration":
        return cls.from_values(np.full(p.shape, value), p)


def site_potential(phi, p: LatticeParams):
    phi2 = np.square(phi)
    phi4 = phi2 * phi2
    return 0.5 * p.mass2 * phi2 + p.lambda0 * phi4 + 0.5 * p.sigma_c**2 * phi4 * phi4


def _active_axes(p: LatticeParams):
    return [ax for ax, n in enumerate(p.dims) if n > 1]


def euclidean_action(config, p: LatticeParams) -> float:
    """Lattice action with periodic boundaries and unit spacing."""
    phi = config.values if isinstance(config, FieldConfiguration) else np.asarray(config, float)
    phi = phi.reshape(p.shape)
    s = float(np.sum(site_potential(phi, p)))
    for ax in _active_axes(p):
        s += 0.5 * float(np.sum((np.roll(phi, -1, axis=ax) - phi) ** 2))
    return s


def _neighbour_sum(phi, axes):
    total = np.zeros_like(phi)
    for ax in axes:
        total += np.roll(phi, 1, axis=ax) + np.roll(phi, -1, axis=ax)
    return total


def local_action_changes(phi, proposal, p: LatticeParams):
    """``S`` change for replacing each site's value by ``proposal`` with all others fixed."""
    axes = _active_axes(p)
    ds = site_potential(proposal, p) - site_potential(phi, p)
    if axes:
        ds = ds + len(axes) * (proposal**2 - phi**2) - (proposal - phi) * _neighbour_sum(phi, axes)
    return ds


def local_action_change(phi, site, new_value, p: LatticeParams) -> float:
    """Single-site version of :func:`local_action_changes`."""
    phi = np.asarray(phi, float).reshape(p.shape)
    proposal = phi.copy()
    proposal[site] = new_value
    return float(local_action_changes(phi, proposal, p)[site])


def acceptance_probability(delta_s):
    """Metropolis acceptance ``min(1, exp(-delta_s))``."""
    return np.exp(-np.maximum(delta_s, 0.0))


@dataclass
class MinimumReport:
    min_value: float
    bounded_below: bool
    argmin: float


def _bounded_below(mass2, lambda0, sigma_c) -> bool:
    return sigma_c > 0 or lambda0 > 0 or (lambda0 == 0 and mass2 >= 0)


def potential_minimum(p: LatticeParams, scan_points: int = 4001) -> MinimumReport:
    """Global minimum of the site potential ``U``.

    ``U`` is even, so the search runs over ``phi >= 0``: a dense scan on a
    bracket outside which ``U`` is increasing, then bounded Brent refinement.
    """
    m2, lam, sig = p.mass2, p.lambda0, p.sigma_c
    if not _bounded_below(m2, lam, sig):
        return MinimumReport(-math.inf, False, math.nan)
    if sig == 0 and lam == 0:
        return MinimumReport(0.0, True, 0.0)
    if sig > 0:
        r = max(1.0, ((abs(m2) + 4 * abs(lam)) / (4 * sig**2)) ** 0.25)
    else:
        r = max(1.0, math.sqrt(abs(m2) / (4 * lam)))
    grid = np.linspace(0.0, r, scan_points)
    u = site_potential(grid, p)
    i = int(np.argmin(u))
    if i == 0 and u[1] >= u[0]:
        return MinimumReport(0.0, True, 0.0)
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, scan_points - 1)]
    res = optimize.minimize_scalar(
        lambda x: float(site_potential(x, p)), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-14, "maxiter": 500},
    )
    x = float(res.x)
    return MinimumReport(float(site_potential(x, p)), True, x)


def require_stable(p: LatticeParams):
    if not _bounded_below(p.mass2, p.lambda0, p.sigma_c):
        rep = potential_minimum(p)
        raise UnstableActionError(
            "refusing to sample: potential_minimum reports bounded_below="
            f"{rep.bounded_below} for mass2={p.mass2}, lambda0={p.lambda0}, sigma_c={p.sigma_c}"
        )


def checkerboard(p: LatticeParams) -> list[np.ndarray]:
    if not p.dims:
        return [np.ones((1,), dtype=bool)]
    parity = sum(np.indices(p.dims)) % 2
    return [parity == 0, parity == 1]


def metropolis_sweep(
    config: FieldConfiguration,
    p: LatticeParams,
    proposal_width: float,
    rng: np.random.Generator,
    log: list | None = None,
    masks: Sequence[np.ndarray] | None = None,
) -> tuple[FieldConfiguration, int]:
    """One Metropolis pass visiting every site once.

    Sites are updated by checkerboard colour; same-colour sites do not
    interact, so each colour is an exact set of independent single-site
    updates. Proposals are uniform in ``±proposal_width``.

    Returns the new configuration (cached action updated incrementally) and
    the number of accepted moves. If ``log`` is a list, one record per colour
    ``(mask, old, new, delta_s, accepted)`` is appended.
    """
    require_stable(p)
    phi = config.values.copy()
    action = config.action
    accepted = 0
    for mask in masks if masks is not None else checkerboard(p):
        step = rng.uniform(-proposal_width, proposal_width, size=phi.shape)
        r = rng.random(size=phi.shape)
        new = phi + step
        ds = local_action_changes(phi, new, p)
        acc = mask & (r < acceptance_probability(ds))
        if log is not None:
            log.append((mask.copy(), phi.copy(), new, ds, acc))
        phi = np.where(acc, new, phi)
        action += float(np.sum(ds[acc]))
        accepted += int(acc.sum())
    return FieldConfiguration(phi, action), accepted


def chain_rng(seed: int, chain_index: int = 0) -> np.random.Generator:
    """Counter-based stream: Philox keyed by ``seed``, one jump per chain."""
    bg = np.random.Philox(key=seed)
    if chain_index:
        bg = bg.jumped(chain_index)
    return np.random.Generator(bg)


@dataclass
class ChainRecord:
    """Per-sweep measurements of one post-burn-in chain."""

    params: LatticeParams
    action: np.ndarray
    phi2: np.ndarray
    phi4: np.ndarray
    phi8: np.ndarray
    magnetization: np.ndarray
    acceptance: float
    proposal_width: float
    seed: int
    max_drift: float = 0.0

    def __len__(self):
        return self.action.size

    def rows(self):
        for k in range(len(self)):
            yield (k, self.action[k], self.phi2[k], self.phi4[k], self.phi8[k])


def _measure(phi):
    p2 = phi * phi
    p4 = p2 * p2
    return float(p2.mean()), float(p4.mean()), float((p4 * p4).mean()), float(phi.mean())


def run_chain(
    p: LatticeParams,
    n_therm: int,
    n_meas: int,
    seed: int = 0,
    proposal_width: float = 1.0,
    chain_index: int = 0,
    start: FieldConfiguration | None = None,
    adapt_every: int = 100,
    check_every: int = 1000,
) -> ChainRecord:
    """Burn in with width adaptation toward 40-60% acceptance, then measure.

    The proposal width is frozen after burn-in. Every ``check_every`` sweeps
    the cached action is compared with a full recompute; relative drift above
    ``DRIFT_TOL`` raises ``ArithmeticError``.
    """
    require_stable(p)
    rng = chain_rng(seed, chain_index)
    cfg = start if start is not None else FieldConfiguration.cold(p)
    masks = checkerboard(p)
    width = proposal_width
    max_drift = 0.0
    acc_window = 0

    def verify(cfg):
        nonlocal max_drift
        full = euclidean_action(cfg.values, p)
        drift = abs(cfg.action - full) / max(1.0, abs(full))
        max_drift = max(max_drift, drift)
        if not np.isfinite(full) or drift > DRIFT_TOL:
            raise ArithmeticError(f"incremental action drift {drift:.3e} (full action {full!r})")
        return FieldConfiguration(cfg.values, full)

    for k in range(1, n_therm + 1):
        cfg, acc = metropolis_sweep(cfg, p, width, rng, masks=masks)
        acc_window += acc
        if k % adapt_every == 0:
            rate = acc_window / (adapt_every * p.volume)
            if rate > 0.6:
                width *= 1.15
            elif rate < 0.4:
                width /= 1.15
            acc_window = 0
        if k % check_every == 0:
            cfg = verify(cfg)

    out = np.empty((5, n_meas))
    total_acc = 0
    for k in range(n_meas):
        cfg, acc = metropolis_sweep(cfg, p, width, rng, masks=masks)
        total_acc += acc
        if (k + 1) % check_every == 0:
            cfg = verify(cfg)
        out[0, k] = cfg.action
        out[1:, k] = _measure(cfg.values)
    verify(cfg)
    return ChainRecord(
        p, out[0], out[1], out[2], out[3], out[4],
        acceptance=total_acc / max(1, n_meas * p.volume),
        proposal_width=width, seed=seed, max_drift=max_drift,
    )


def integrated_autocorrelation_time(x, window_factor: float = 6.0) -> float:
    """Integrated autocorrelation time with self-consistent window.

    ``tau = 1/2 + Σ_{t=1}^{W} rho(t)`` with the smallest ``W >= c tau(W)``
    (Madras-Sokal). An uncorrelated series gives ``tau ≈ 1/2``. Returns nan
    for a constant series.
    """
    x = np.asarray(x, float)
    n = x.size
    d = x - x.mean()
    var = np.dot(d, d) / n
    if var == 0 or n < 2:
        return math.nan
    f = np.fft.rfft(d, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = 0.5
    for w in range(1, n):
        tau += acf[w]
        if w >= window_factor * tau:
            return float(tau)
    return float(tau)


def _bin(x, size):
    nb = x.size // size
    return x[: nb * size].reshape(nb, size).mean(axis=1)


def jackknife(estimator, *series, bin_size: int = 1):
    """Binned jackknife mean and error of ``estimator(*means)``."""
    binned = [_bin(np.asarray(s, float), bin_size) for s in series]
    nb = binned[0].size
    if nb < 2:
        raise ValueError("jackknife needs at least two bins")
    sums = [b.sum() for b in binned]
    full = estimator(*[s / nb for s in sums])
    loo = np.asarray(estimator(*[(s - b) / (nb - 1) for s, b in zip(sums, binned)]), float)
    err = math.sqrt((nb - 1) / nb * float(np.sum((loo - loo.mean()) ** 2)))
    return float(full), err


@dataclass
class ChainStats:
    samples: int
    acceptance: float
    observables: dict[str, tuple[float, float]]
    autocorrelation_time: float
    autocorrelation_times: dict[str, float] = field(default_factory=dict)
    bin_size: int = 1
    degenerate: bool = False


MIN_SAMPLES = 100


def measure_observables(chain, acceptance: float = math.nan, params: LatticeParams | None = None):
    """Means with binned-jackknife errors and autocorrelation times.

    ``chain`` is a :class:`ChainRecord` or a sequence of
    :class:`FieldConfiguration` (then ``params`` is needed for the volume).
    The reported ``autocorrelation_time`` is that of the phi² series; bins are
    ten times the largest per-observable time.
    """
    if isinstance(chain, ChainRecord):
        series = {"phi2": chain.phi2, "phi4": chain.phi4, "phi8": chain.phi8}
        mag = chain.magnetization
        volume = chain.params.volume
        acceptance = chain.acceptance
    else:
        cols = np.array([_measure(np.asarray(c.values, float)) for c in chain]).reshape(-1, 4)
        series = {"phi2": cols[:, 0], "phi4": cols[:, 1], "phi8": cols[:, 2]}
        mag = cols[:, 3]
        volume = params.volume if params is not None else 1
    n = mag.size
    if n < MIN_SAMPLES:
        raise ValueError(f"measure_observables needs >= {MIN_SAMPLES} samples, got {n}")
    taus = {k: integrated_autocorrelation_time(v) for k, v in series.items()}
    taus["magnetization"] = integrated_autocorrelation_time(mag)
    finite = [t for t in taus.values() if np.isfinite(t)]
    degenerate = not finite
    bin_size = 1 if degenerate else max(1, min(int(math.ceil(10 * max(finite))), n // 20))
    obs = {}
    for k, v in series.items():
        obs[k] = jackknife(lambda m: m, v, bin_size=bin_size)
    obs["susceptibility"] = jackknife(
        lambda m1, m2: volume * (m2 - m1 * m1), mag, mag * mag, bin_size=bin_size
    )
    return ChainStats(
        samples=n,
        acceptance=float(acceptance),
        observables=obs,
        autocorrelation_time=taus["phi2"],
        autocorrelation_times=taus,
        bin_size=bin_size,
        degenerate=degenerate,
    )


def single_site_moment(p: LatticeParams, power: int) -> float:
    """``∫ phi^power e^{-U} / ∫ e^{-U}`` for the d = 0 model, by adaptive quadrature."""
    require_stable(p)
    shift = potential_minimum(p).min_value

    def weight(x):
        return math.exp(-(float(site_potential(x, p)) - shift))

    z, _ = integrate.quad(weight, -np.inf, np.inf, epsabs=0, epsrel=1e-13, limit=200)
    num, _ = integrate.quad(lambda x: x**power * weight(x), -np.inf, np.inf, epsabs=0,
                            epsrel=1e-13, limit=200)
    return num / z


class CharacteristicCheckError(ArithmeticError):
    pass


def pointwise_characteristic_check(phi: float, lambda0: float, sigma_c: float, nodes: int = 64):
    """``|∫ dλ N(λ; λ0, σ²) e^{-iλφ⁴} - e^{-iλ0 φ⁴ - σ² φ⁸ / 2}|`` by quadrature.

    Raises ``CharacteristicCheckError`` when the residual exceeds 1e-3, which
    means the node count cannot resolve ``σ φ⁴``.
    """
    if nodes < 32:
        raise ValueError(f"pointwise_characteristic_check needs nodes >= 32, got {nodes}")
    phi4 = phi**4
    exact = np.exp(-1j * lambda0 * phi4 - 0.5 * sigma_c**2 * phi4**2)
    if sigma_c == 0:
        approx = np.exp(-1j * lambda0 * phi4)
    else:
        approx = gauss_quadrature_complex(lambda lam: np.exp(-1j * lam * phi4), lambda0, sigma_c, nodes)
    res = float(abs(approx - exact))
    if res > 1e-3:
        raise CharacteristicCheckError(
            f"quadrature residual {res:.3e} at sigma*phi^4 = {sigma_c * phi4:.3g}; increase nodes"
        )
    return res


def irrelevance_coupling(sigma_c: float, mu: float) -> float:
    """Dimensionless phi^8 coupling ``sigma² mu⁴`` at scale ``mu`` (d = 4 counting)."""
    if not mu > 0:
        raise ValueError(f"mu must be > 0, got {mu}")
    return sigma_c**2 * mu**4


PROTOCOLS = ("quadrature", "reweight", "independent")


def _reweighted(record: ChainRecord, sigma_c: float, bin_size: int):
    """phi² and phi⁴ at ``sigma_c`` from a sigma = 0 chain, and the phi² shift."""
    s8 = record.phi8 * record.params.volume
    w = np.exp(-0.5 * sigma_c**2 * (s8 - s8.min()))
    phi2, phi4 = record.phi2, record.phi4
    m2 = jackknife(lambda a, b: a / b, w * phi2, w, bin_size=bin_size)
    m4 = jackknife(lambda a, b: a / b, w * phi4, w, bin_size=bin_size)
    dev = jackknife(lambda a, b, c: a / b - c, w * phi2, w, phi2, bin_size=bin_size)
    return m2, m4, dev


def sigma_zero_sweep(
    p_base: LatticeParams,
    sigma_list: Sequence[float],
    protocol: str = "reweight",
    n_therm: int = 2000,
    n_meas: int = 100_000,
    seed: int = 0,
    proposal_width: float = 1.0,
) -> list[dict]:
    """Observables versus sigma and their shift from the sigma = 0 value.

    Protocols:

    - ``quadrature``: exact single-site integrals (d = 0 only).
    - ``reweight``: one sigma = 0 chain reweighted by ``exp(-sigma²/2 Σ phi⁸)``;
      the shift is estimated on common samples, so its error scales with it.
    - ``independent``: a separate chain per sigma (chain index = row index).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if not p_base.lambda0 > 0:
        raise ValueError("sigma_zero_sweep needs lambda0 > 0 so the sigma = 0 endpoint is stable")
    rows = []
    if protocol == "quadrature":
        if p_base.dims:
            raise ValueError("quadrature protocol is only available for the d = 0 model")
        base = single_site_moment(p_base.with_sigma(0.0), 2)
        for s in sigma_list:
            q = p_base.with_sigma(s)
            m2 = single_site_moment(q, 2)
            rows.append({"sigma": s, "phi2": m2, "phi2_err": 0.0, "phi4": single_site_moment(q, 4),
                         "phi4_err": 0.0, "deviation": m2 - base, "deviation_err": 0.0})
        return rows
    if protocol == "reweight":
        rec = run_chain(p_base.with_sigma(0.0), n_therm, n_meas, seed, proposal_width)
        stats = measure_observables(rec)
        for s in sigma_list:
            (m2, e2), (m4, e4), (d, de) = _reweighted(rec, s, stats.bin_size)
            rows.append({"sigma": s, "phi2": m2, "phi2_err": e2, "phi4": m4, "phi4_err": e4,
                         "deviation": d, "deviation_err": de})
        return rows
    stats = []
    for i, s in enumerate(sigma_list):
        rec = run_chain(p_base.with_sigma(s), n_therm, n_meas, seed, proposal_width, chain_index=i)
        stats.append(measure_observables(rec).observables)
    if 0 in list(sigma_list):
        base = stats[list(sigma_list).index(0)]["phi2"]
    else:
        rec = run_chain(p_base.with_sigma(0.0), n_therm, n_meas, seed, proposal_width,
                        chain_index=len(sigma_list))
        base = measure_observables(rec).observables["phi2"]
    for s, obs in zip(sigma_list, stats):
        (m2, e2), (m4, e4) = obs["phi2"], obs["phi4"]
        rows.append({"sigma": s, "phi2": m2, "phi2_err": e2, "phi4": m4, "phi4_err": e4,
                     "deviation": m2 - base[0],
                     "deviation_err": math.hypot(e2, base[1]) if s else 0.0})
    return rows


def deviation_exponent(rows, lo: float = 0.05, hi: float = 0.5) -> float:
    """Log-log slope of ``|deviation|`` against sigma over ``[lo, hi]``."""
    sel = [r for r in rows if lo - 1e-12 <= r["sigma"] <= hi + 1e-12 and r["sigma"] > 0]
    if len(sel) < 2:
        raise ValueError("need at least two sigma values in the fit range")
    x = np.log([r["sigma"] for r in sel])
    y = np.log([abs(r["deviation"]) for r in sel])
    return float(np.polyfit(x, y, 1)[0])
