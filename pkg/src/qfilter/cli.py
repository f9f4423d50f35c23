"""Config-driven experiment runner.

    qfilter run --config FILE --out DIR [--seed N] [--threads K]
    qfilter validate --config FILE

A config is one JSON document with a ``kind`` and the parameter blocks that
kind needs. Every run writes its CSV/JSON artifacts atomically plus a
``manifest.json`` listing them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__
from . import filters as flt
from . import kernels, lattice
from .hamiltonian import GridSpec, Hamiltonian, PotentialSpec
from .output import to_json, write_csv, write_json

KINDS = (
    "spectrum",
    "filter-check",
    "bound-sweep",
    "kernel",
    "coulomb-bound",
    "danger-zone",
    "lattice",
    "sigma-sweep",
    "identity-check",
)


class ConfigError(ValueError):
    pass


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _require(block: dict, key: str, where: str):
    if key not in block:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return block[key]


def parse_hamiltonian(block: dict) -> Hamiltonian:
    g = _require(block, "grid", "hamiltonian")
    grid = GridSpec(
        float(_require(g, "x_min", "grid")),
        float(_require(g, "x_max", "grid")),
        int(_require(g, "n_points", "grid")),
        g.get("offset_half_cell"),
    )
    pot = PotentialSpec.from_dict(_require(block, "potential", "hamiltonian"))
    return Hamiltonian(grid, pot, float(block.get("mass", 1.0)))


def parse_filters(block: dict) -> list[flt.FilterParams]:
    """All (sigma, dt) combinations; scalars or lists accepted."""
    sig = _as_list(_require(block, "sigma", "filter"))
    dts = _as_list(_require(block, "dt", "filter"))
    return [flt.FilterParams(float(s), float(d)) for s in sig for d in dts]


def parse_lattice(block: dict) -> lattice.LatticeParams:
    return lattice.LatticeParams(
        tuple(block.get("dims", ())),
        float(block.get("mass2", 1.0)),
        float(block.get("lambda0", 1.0)),
        float(block.get("sigma_c", 0.0)),
    )


def _dt_list(block) -> list[float]:
    if isinstance(block, dict):
        return np.geomspace(block["start"], block["stop"], int(block["num"])).tolist()
    return [float(v) for v in _as_list(block)]


def parse_superposition(block: dict, seed: int) -> flt.SuperpositionSpec:
    kind = _require(block, "type", "family")
    if kind == "gaussian-rescaling":
        h = block.get("matrix")
        if h is None:
            h = random_hermitian(int(block.get("dim", 6)), int(block.get("matrix_seed", seed)))
        return flt.SuperpositionSpec.gaussian_rescaling(
            np.asarray(h, dtype=complex), float(_require(block, "sigma", "family")),
            int(block.get("nodes", 9)),
        )
    if kind == "generators":
        coeffs = [complex(*c) if isinstance(c, list) else complex(c)
                  for c in _require(block, "coefficients", "family")]
        gens = [np.asarray(g, dtype=complex) for g in _require(block, "generators", "family")]
        return flt.SuperpositionSpec(np.array(coeffs), gens)
    raise ConfigError(f"family: unknown type {kind!r}")


def random_hermitian(dim: int, seed: int) -> np.ndarray:
    """Random Hermitian matrix with unit spectral norm."""
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = 0.5 * (a + a.conj().T)
    return h / np.linalg.norm(h, 2)


def initial_state(h: Hamiltonian, block) -> np.ndarray:
    """``"ground"``, ``{"levels": [amplitudes]}`` or ``{"gaussian": {"x0", "width", "k0"}}``."""
    d = h.decomposition
    if block in (None, "ground"):
        return flt.ground_state(d)
    if "levels" in block:
        return flt.eigenstate_mixture(d, block["levels"])
    if "gaussian" in block:
        g = block["gaussian"]
        x = h.positions
        psi = np.exp(-((x - g.get("x0", 0.0)) ** 2) / (2 * g.get("width", 1.0) ** 2)
                     + 1j * g.get("k0", 0.0) * x)
        return flt.normalize(psi)
    raise ConfigError(f"state: unrecognised specification {block!r}")


@dataclass
class RunContext:
    config: dict
    out: Path
    seed: int
    threads: int

    def map(self, fn: Callable, items):
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


def run_spectrum(ctx: RunContext):
    h = parse_hamiltonian(_require(ctx.config, "hamiltonian", "config"))
    d = h.decomposition
    levels = int(ctx.config.get("levels", min(20, d.dim)))
    files = {"spectrum.csv": write_csv(ctx.out / "spectrum.csv", ["index", "energy"],
                                       enumerate(d.eigenvalues[:levels].tolist()))}
    resid = float(np.max(np.abs(d.reconstruct() - h.matrix)))
    summary = {"orthonormality_residual": d.orthonormality_residual(),
               "reconstruction_residual": resid,
               "hermiticity": float(np.max(np.abs(h.matrix - h.matrix.T)))}
    return files, summary


def run_filter_check(ctx: RunContext):
    cfg = ctx.config
    h = parse_hamiltonian(_require(cfg, "hamiltonian", "config"))
    params = parse_filters(_require(cfg, "filter", "config"))
    ns = [int(n) for n in _as_list(cfg.get("n", [1]))]
    d = h.decomposition
    psi = initial_state(h, cfg.get("state"))

    def point(p):
        v = flt.filtered_step(d, p)
        kraus = float(np.max(np.abs(v.conj().T @ v - d.apply(lambda e: np.exp(-(p.sigma * p.dt * e) ** 2)))))
        u, g = flt.unitary_step(d, p.dt), flt.gaussian_filter(d, p)
        comm = float(np.max(np.abs(u @ g - g @ u)))
        p1 = flt.success_probability(psi, d, p)
        rows = []
        for n in ns:
            rows.append([p.sigma, p.dt, n, kraus, comm, p1, flt.multi_step_success(psi, d, p, n),
                         flt.multi_step_identity_check(d, p, n)])
        return rows

    rows = [r for chunk in ctx.map(point, params) for r in chunk]
    header = ["sigma", "dt", "n", "kraus_residual", "commutator", "success_probability",
              "multi_step_success", "identity_residual"]
    files = {"filter_check.csv": write_csv(ctx.out / "filter_check.csv", header, rows)}
    summary = {"max_kraus_residual": max(r[3] for r in rows),
               "max_identity_residual": max(r[7] for r in rows)}
    return files, summary


def run_bound_sweep(ctx: RunContext):
    cfg = ctx.config
    spec = parse_superposition(_require(cfg, "family", "config"), ctx.seed)
    dts = _dt_list(_require(cfg, "dt", "config"))
    reports = ctx.map(lambda dt: flt.error_bound_check(spec, dt), dts)
    header = ["dt", "dt_m", "lhs", "quadratic_term", "cubic_ratio", "cubic_constant"]
    rows = [[r.dt, r.dt_m, r.lhs, r.quadratic_term, r.cubic_ratio, r.cubic_constant] for r in reports]
    lhs_exp, _ = flt.fit_power_law(dts, [r.lhs for r in reports])
    excess = [r.lhs - r.quadratic_term for r in reports]
    summary = {
        "lhs_exponent": lhs_exp,
        "excess_exponent": flt.fit_power_law(dts, excess)[0] if all(excess) else None,
        "excess_sign": "positive" if min(excess) > 0 else "negative" if max(excess) < 0 else "mixed",
        "bound_holds_apriori": all(
            r.lhs <= r.quadratic_term + r.cubic_constant * r.dt_m**3 for r in reports),
    }
    return {"bound_sweep.csv": write_csv(ctx.out / "bound_sweep.csv", header, rows)}, summary


def run_kernel(ctx: RunContext):
    cfg = ctx.config
    h = parse_hamiltonian(_require(cfg, "hamiltonian", "config"))
    (p,) = parse_filters(_require(cfg, "filter", "config"))[:1]
    k = kernels.spectral_kernel(h, p)
    path = k.dump(ctx.out / "kernel.csv", h)
    step = flt.filtered_step(h.decomposition, p)
    summary = {"operator_kernel_residual": float(np.max(np.abs(k.operator() - step)))}
    return {"kernel.csv": path, "kernel.json": path.with_suffix(".json")}, summary


def run_coulomb_bound(ctx: RunContext):
    cfg = ctx.config
    g = float(_require(cfg, "g", "config"))
    m = float(cfg.get("mass", 1.0))
    params = parse_filters(_require(cfg, "filter", "config"))
    deltas = [float(x) for x in _as_list(_require(cfg, "delta", "config"))]
    jobs = [(p, dl) for p in params for dl in deltas]
    reps = ctx.map(lambda j: kernels.coulomb_near_origin_bound(g, j[0], m, j[1]), jobs)
    rows = [[p.sigma, p.dt, dl, r.sup_abs, r.bound, r.holds, r.c, r.tail_integral]
            for (p, dl), r in zip(jobs, reps)]
    header = ["sigma", "dt", "delta", "sup_abs", "bound", "holds", "c", "tail_integral"]
    summary = {"all_hold": all(r.holds for r in reps), "points": len(rows)}
    return {"coulomb_bound.csv": write_csv(ctx.out / "coulomb_bound.csv", header, rows)}, summary


def run_danger_zone(ctx: RunContext):
    cfg = ctx.config
    rows = []
    for s in _as_list(_require(cfg, "sigma", "config")):
        for dt in _as_list(_require(cfg, "dt", "config")):
            for eta in _as_list(_require(cfg, "eta", "config")):
                for nu in _as_list(_require(cfg, "nu", "config")):
                    r = kernels.danger_radius(s, dt, eta, nu)
                    pp = kernels.ParametrixParams(1.0, dt, s, PotentialSpec.spike(eta, nu))
                    damp = float(kernels.midpoint_damping(pp, r)) if r > 0 else float("nan")
                    if r > 0:
                        rt = kernels.danger_radius(
                            1.0, kernels.resolution_rule_of_thumb(r, eta, nu), eta, nu)
                        rt_err = abs(rt - r) / r
                    else:
                        rt_err = float("nan")
                    rows.append([s, dt, eta, nu, r, damp, rt_err])
    header = ["sigma", "dt", "eta", "nu", "radius", "damping_at_radius", "roundtrip_rel_error"]
    return {"danger_zone.csv": write_csv(ctx.out / "danger_zone.csv", header, rows)}, {}


def run_lattice(ctx: RunContext):
    cfg = ctx.config
    p = parse_lattice(_require(cfg, "lattice", "config"))
    lattice.require_stable(p)
    n_therm = int(cfg.get("n_therm", 1000))
    n_meas = int(cfg.get("n_meas", 10000))
    width = float(cfg.get("proposal_width", 1.0))
    chains = int(cfg.get("chains", 1))
    records = ctx.map(
        lambda i: lattice.run_chain(p, n_therm, n_meas, ctx.seed, width, chain_index=i),
        range(chains),
    )
    files, per_chain = {}, []
    header = ["sweep_index", "action", "phi2_mean", "phi4_mean", "phi8_mean"]
    for i, rec in enumerate(records):
        name = f"chain_{i}.csv"
        files[name] = write_csv(ctx.out / name, header, rec.rows())
        st = lattice.measure_observables(rec)
        per_chain.append({
            "chain": i,
            "acceptance": st.acceptance,
            "autocorrelation_time": st.autocorrelation_time,
            "proposal_width": rec.proposal_width,
            "max_drift": rec.max_drift,
            "observables": {k: {"mean": m, "error": e} for k, (m, e) in st.observables.items()},
        })
    summary = {"params": p.to_dict(), "seed": ctx.seed, "chains": per_chain}
    return files, summary


def run_sigma_sweep(ctx: RunContext):
    cfg = ctx.config
    p = parse_lattice(_require(cfg, "lattice", "config"))
    sigmas = [float(s) for s in _as_list(_require(cfg, "sigmas", "config"))]
    rows = lattice.sigma_zero_sweep(
        p, sigmas, cfg.get("protocol", "reweight"), int(cfg.get("n_therm", 2000)),
        int(cfg.get("n_meas", 100000)), ctx.seed, float(cfg.get("proposal_width", 1.0)),
    )
    header = ["sigma", "phi2", "phi2_err", "phi4", "phi4_err", "deviation", "deviation_err"]
    files = {"sigma_sweep.csv": write_csv(ctx.out / "sigma_sweep.csv", header,
                                          ([r[k] for k in header] for r in rows))}
    lo, hi = cfg.get("fit_range", [0.05, 0.5])
    summary = {"deviation_exponent": lattice.deviation_exponent(rows, lo, hi)}
    return files, summary


def run_identity_check(ctx: RunContext):
    cfg = ctx.config
    h = parse_hamiltonian(_require(cfg, "hamiltonian", "config"))
    params = parse_filters(_require(cfg, "filter", "config"))
    ns = [int(n) for n in _as_list(_require(cfg, "n", "config"))]
    d = h.decomposition
    jobs = [(p, n) for p in params for n in ns]
    res = ctx.map(lambda j: flt.multi_step_identity_check(d, j[0], j[1]), jobs)
    rows = [[p.sigma, p.dt, n, r] for (p, n), r in zip(jobs, res)]
    files = {"identity.csv": write_csv(ctx.out / "identity.csv",
                                       ["sigma", "dt", "n", "residual"], rows)}
    return files, {"max_residual": max(res), "passes": max(res) <= flt.IDENTITY_TOL}


RUNNERS = {
    "spectrum": run_spectrum,
    "filter-check": run_filter_check,
    "bound-sweep": run_bound_sweep,
    "kernel": run_kernel,
    "coulomb-bound": run_coulomb_bound,
    "danger-zone": run_danger_zone,
    "lattice": run_lattice,
    "sigma-sweep": run_sigma_sweep,
    "identity-check": run_identity_check,
}

REQUIRED = {
    "spectrum": ("hamiltonian",),
    "filter-check": ("hamiltonian", "filter"),
    "bound-sweep": ("family", "dt"),
    "kernel": ("hamiltonian", "filter"),
    "coulomb-bound": ("g", "filter", "delta"),
    "danger-zone": ("sigma", "dt", "eta", "nu"),
    "lattice": ("lattice",),
    "sigma-sweep": ("lattice", "sigmas"),
    "identity-check": ("hamiltonian", "filter", "n"),
}

_BLOCK_PARSERS = {
    "hamiltonian": parse_hamiltonian,
    "filter": parse_filters,
    "lattice": parse_lattice,
}


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def validate(cfg: dict, seed: int = 0) -> None:
    """Check ``kind`` and build every parameter block, raising on the first failure."""
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"ExperimentConfig: kind must be one of {list(KINDS)}, got {kind!r}")
    for key in REQUIRED[kind]:
        _require(cfg, key, kind)
    for key, parse in _BLOCK_PARSERS.items():
        if key in cfg:
            parse(cfg[key])
    if "family" in cfg:
        parse_superposition(cfg["family"], seed)
    if kind == "lattice":
        lattice.require_stable(parse_lattice(_require(cfg, "lattice", "config")))
    if kind in ("coulomb-bound",):
        for dl in _as_list(_require(cfg, "delta", "config")):
            if not float(dl) > 0:
                raise ConfigError(f"coulomb-bound: delta must be > 0, got {dl}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def run(cfg: dict, out, seed: int | None = None, threads: int = 1) -> dict:
    """Validate, execute and write the manifest. Returns the manifest dict."""
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    validate(cfg, seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out, seed, max(1, int(threads)))
    t0 = time.perf_counter()
    files, summary = RUNNERS[cfg["kind"]](ctx)
    manifest = {
        "kind": cfg["kind"],
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": seed,
        "threads": ctx.threads,
        "versions": {
            "qfilter": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": time.perf_counter() - t0,
        "files": sorted(files),
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qfilter", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    pr = sub.add_parser("run", help="run an experiment")
    pr.add_argument("--config", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--threads", type=int, default=1)
    pv = sub.add_parser("validate", help="validate a config without running it")
    pv.add_argument("--config", required=True)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            validate(cfg)
            print(f"ok: {cfg['kind']}")
            return 0
        manifest = run(cfg, args.out, args.seed, args.threads)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical error in {cfg.get('kind')}: {exc}", file=sys.stderr)
        return 3
    sys.stdout.write(to_json({"files": manifest["files"], "summary": manifest["summary"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
