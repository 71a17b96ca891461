"""Command-line driver, JSON run configuration, CSV output and eigendecomposition cache.

    casimir-ho spectrum|dynamics|perturbation|coupling --config run.json [--out DIR]

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import subprocess
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hamiltonian import HamiltonianModel, ModelError, effective_scattering_coupling, hamiltonian_terms, make_space
from .opensys import (
    BathParameters,
    IntegrationAbort,
    NoConvergence,
    default_dt,
    evolve,
    open_system,
    steady_state,
)
from .perturbation import (
    DegenerateLevel,
    free_decomposition,
    one_d_vacuum_energy,
    perturbation_table,
    vacuum_closed_forms,
)
from .spectrum import (
    RESONANCES,
    EigenDecomposition,
    diagonalize_model,
    resonance_gap,
    sweep_spectrum,
)
from .thermo import TRAJECTORY_COLUMNS, TrajectoryObserver

log = logging.getLogger("casimir_ho")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("spectrum", "dynamics", "perturbation", "coupling")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# ---------------------------------------------------------------- configuration

@dataclass
class RunConfig:
    command: str
    model: HamiltonianModel = field(default_factory=HamiltonianModel)
    omega_grid: np.ndarray | None = None
    n_levels: int = 8
    truncations: tuple = (8, 5, 12)
    baths: BathParameters = field(default_factory=BathParameters)
    delta: float = 0.09
    kappa0: float = 0.003
    t_max: float = 30.0  # in units of 1/kappa0
    dt: float | None = None
    record_every: int | None = None
    records: int = 200
    positivity_tol: float = 1e-5
    convention: str = "dressed"
    initial_state: str = "vacuum"
    resonance: str | None = "first"
    order_sets: tuple = (frozenset({1}), frozenset({1, 2, 3}))
    levels: tuple = (0,)
    coeff_floor: float = 1e-8
    output: str = "out"
    raw: dict = field(default_factory=dict)


_TOP = {"command", "model", "omega_grid", "n_levels", "truncations", "baths", "filter_delta",
        "kappa0", "integration", "population_convention", "initial_state", "resonance",
        "order_sets", "levels", "coeff_floor", "output"}
_MODEL = {f.name for f in dataclasses.fields(HamiltonianModel)}
_BATHS = {f.name for f in dataclasses.fields(BathParameters)}
_INTEGRATION = {"t_max", "dt", "record_every", "records", "positivity_tol"}


def _line_of(text: str, key: str):
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def parse_config(text: str) -> RunConfig:
    """Parse a JSON run configuration; unspecified values take the model defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", e.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object", 1)

    def fail(key, msg):
        raise ConfigError(f"{key}: {msg}", _line_of(text, key))

    for k in raw:
        if k not in _TOP:
            fail(k, "unknown field")
    cmd = raw.get("command")
    if cmd not in COMMANDS:
        fail("command", f"must be one of {', '.join(COMMANDS)}")
    cfg = RunConfig(command=cmd, raw=raw)

    mraw = raw.get("model", {})
    if not isinstance(mraw, dict):
        fail("model", "must be an object")
    for k in mraw:
        if k not in _MODEL:
            fail(k, "unknown model field")
    mkw = dict(mraw)
    if "include_orders" in mkw:
        mkw["include_orders"] = frozenset(mkw["include_orders"])
    if "cutoffs" in mkw:
        mkw["cutoffs"] = tuple(mkw["cutoffs"])
    try:
        cfg.model = HamiltonianModel(**mkw)
    except (ModelError, TypeError) as e:
        fail("model", str(e))

    if "omega_grid" in raw:
        g = raw["omega_grid"]
        try:
            if isinstance(g, dict):
                grid = np.linspace(float(g["start"]), float(g["stop"]), int(g["points"]))
            else:
                grid = np.asarray(g, dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            fail("omega_grid", f"expected list or {{start, stop, points}} ({e})")
        if grid.size == 0:
            fail("omega_grid", "empty grid")
        if np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
            fail("omega_grid", "must be positive and strictly increasing")
        cfg.omega_grid = grid
    else:
        w1 = cfg.model.omega1
        cfg.omega_grid = np.linspace(0.5 * w1, 2.5 * w1, 400)

    if "truncations" in raw:
        tr = raw["truncations"]
        if not isinstance(tr, list) or len(tr) < 2 or any(not isinstance(x, int) or x < 2 for x in tr):
            fail("truncations", "expected a list of integers >= 2 (optical..., mechanical)")
        cfg.truncations = tuple(tr)
    elif cmd == "dynamics":
        cfg.truncations = (6, 4, 10)

    braw = raw.get("baths", {})
    for k in braw:
        if k not in _BATHS:
            fail(k, "unknown bath field")
    try:
        cfg.baths = BathParameters(**{k: float(v) for k, v in braw.items()})
    except (TypeError, ValueError) as e:
        fail("baths", str(e))
    if cfg.baths.kappa <= 0 or cfg.baths.gamma <= 0:
        fail("baths", "rates must be positive")
    if cfg.baths.T_c < 0 or cfg.baths.T_w < 0:
        fail("baths", "temperatures must be >= 0")

    cfg.delta = float(raw.get("filter_delta", cfg.delta))
    if cfg.delta <= 0:
        fail("filter_delta", "must be positive")
    cfg.kappa0 = float(raw.get("kappa0", cfg.kappa0))
    iraw = raw.get("integration", {})
    for k in iraw:
        if k not in _INTEGRATION:
            fail(k, "unknown integration field")
    cfg.t_max = float(iraw.get("t_max", cfg.t_max))
    cfg.dt = iraw.get("dt")
    cfg.record_every = iraw.get("record_every")
    cfg.records = int(iraw.get("records", cfg.records))
    if cfg.t_max <= 0:
        fail("t_max", "must be positive")
    cfg.positivity_tol = float(iraw.get("positivity_tol", cfg.positivity_tol))
    if cfg.positivity_tol <= 0:
        fail("positivity_tol", "must be positive")

    cfg.convention = raw.get("population_convention", cfg.convention)
    if cfg.convention not in ("bare", "dressed"):
        fail("population_convention", "must be 'bare' or 'dressed'")
    cfg.initial_state = raw.get("initial_state", cfg.initial_state)
    if cfg.initial_state not in ("vacuum", "ground"):
        fail("initial_state", "must be 'vacuum' (bare) or 'ground' (dressed)")
    cfg.resonance = raw.get("resonance", cfg.resonance)
    if cfg.resonance is not None and cfg.resonance not in RESONANCES:
        fail("resonance", f"must be one of {', '.join(RESONANCES)} or null")
    if "order_sets" in raw:
        try:
            cfg.order_sets = tuple(frozenset(s) for s in raw["order_sets"])
        except TypeError:
            fail("order_sets", "expected a list of lists")
    elif cmd == "dynamics" and "include_orders" in mraw:
        cfg.order_sets = (cfg.model.include_orders,)
    cfg.levels = tuple(int(n) for n in raw.get("levels", cfg.levels))
    cfg.n_levels = int(raw.get("n_levels", cfg.n_levels))
    cfg.coeff_floor = float(raw.get("coeff_floor", cfg.coeff_floor))
    cfg.output = raw.get("output", cfg.output)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------- output

def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def build_id() -> str:
    from . import __version__
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                              text=True, cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def write_metadata(csv_path: Path, cfg: RunConfig, extra: dict | None = None) -> Path:
    meta = {"config": cfg.raw, "command": cfg.command, "model": cfg.model.to_dict(),
            "truncations": list(cfg.truncations), "build": build_id()}
    if extra:
        meta.update(extra)
    path = csv_path.with_suffix(".meta.json")
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (frozenset, set)):
        return sorted(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


# ---------------------------------------------------------------- eigen cache

def cache_dir() -> Path:
    return Path(os.environ.get("CASIMIR_HO_CACHE_DIR", Path.home() / ".cache" / "casimir_ho"))


def cache_eig(eig: EigenDecomposition, directory: Path | None = None) -> Path:
    directory = Path(directory or cache_dir())
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{eig.fingerprint}.npz"
    arrays = {"energies": eig.energies, "states": eig.states,
              "fingerprint": np.array(eig.fingerprint)}
    if eig.labels is not None:
        arrays["labels"] = eig.labels
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)
    return path


def load_eig(fingerprint: str, directory: Path | None = None) -> EigenDecomposition | None:
    """Cached decomposition for ``fingerprint``, or None on a miss or unreadable file."""
    path = Path(directory or cache_dir()) / f"{fingerprint}.npz"
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as f:
            if str(f["fingerprint"]) != fingerprint:
                return None
            labels = f["labels"] if "labels" in f.files else None
            return EigenDecomposition(f["energies"], f["states"], fingerprint, labels)
    except Exception as e:  # corrupt or truncated archive
        warnings.warn(f"ignoring unreadable eigen cache {path}: {e}")
        return None


def cached_diagonalize(model: HamiltonianModel, truncations, directory: Path | None = None):
    """Diagonalize with the on-disk cache; loaded entries are checked against H."""
    truncations = tuple(int(t) for t in truncations)
    fp = model.fingerprint(list(truncations))
    eig = load_eig(fp, directory)
    space = make_space(model, truncations[:-1], truncations[-1])
    if eig is not None:
        from .hamiltonian import build_hamiltonian
        H = build_hamiltonian(space, model).data
        if eig.dim == space.dim and eig.residual(H) < 1e-9 * max(1.0, np.abs(H).max()):
            return eig
        warnings.warn(f"eigen cache entry {fp} fails the residual check; recomputing")
    eig, _ = diagonalize_model(model, truncations[:-1], truncations[-1])
    try:
        cache_eig(eig, directory)
    except OSError as e:
        warnings.warn(f"could not write eigen cache: {e}")
    return eig


# ---------------------------------------------------------------- convergence

def truncation_converged(quantity, truncations, rel_tol: float = 1e-3, step: int = 2):
    """Compare ``quantity(truncations)`` with every truncation raised by ``step``.

    Returns (converged, value, value_at_larger_truncation).
    """
    a = np.asarray(quantity(tuple(truncations)), dtype=float)
    b = np.asarray(quantity(tuple(t + step for t in truncations)), dtype=float)
    scale = np.maximum(np.abs(b), 1e-300)
    return bool(np.all(np.abs(a - b) / scale < rel_tol)), a, b


# ---------------------------------------------------------------- commands

def _orders_tag(orders) -> str:
    return "orders" + "".join(str(k) for k in sorted(orders))


def run_spectrum(cfg: RunConfig, out: Path) -> dict:
    truncs = cfg.truncations
    gaps = []
    for orders in cfg.order_sets:
        sw = sweep_spectrum(cfg.model, cfg.omega_grid, cfg.n_levels, include_orders=orders,
                            truncations=truncs)
        header, rows = sw.to_csv_rows()
        path = write_csv(out / f"spectrum_{_orders_tag(orders)}.csv", header, rows)
        write_metadata(path, cfg, {"include_orders": sorted(orders)})
        m = cfg.model.with_(include_orders=orders)
        for name in RESONANCES:
            g = resonance_gap(m, name, truncations=truncs)
            gaps.append((name, _orders_tag(orders), g.gap, g.omega_at_min))
    write_csv(out / "gaps.csv", ["resonance", "orders", "gap", "omega_at_min"],
              [(a, b, c, d) for a, b, c, d in gaps])
    print(f"{'resonance':<10} {'orders':<12} {'gap':>14} {'Omega at min':>14}")
    for a, b, c, d in gaps:
        print(f"{a:<10} {b:<12} {c:>14.6g} {d:>14.6g}")
    return {"gaps": gaps}


def _initial_state(system, kind: str) -> np.ndarray:
    if kind == "vacuum":
        return system.vacuum()
    rho = np.zeros((system.eig.dim, system.eig.dim), dtype=complex)
    rho[0, 0] = 1.0
    return system.eig.to_fock(rho)


def simulate(model: HamiltonianModel, cfg: RunConfig):
    """Trajectory records and the steady-state record for one model."""
    truncs = cfg.truncations
    eig = cached_diagonalize(model, truncs)
    system = open_system(model, truncs[:-1], truncs[-1], cfg.baths, cfg.delta,
                         coeff_floor=cfg.coeff_floor, eig=eig)
    obs = TrajectoryObserver(system.L, system.space, system.temperatures, cfg.kappa0, cfg.convention)
    T = cfg.t_max / cfg.kappa0
    dt = cfg.dt or default_dt(system.L)
    every = cfg.record_every or max(1, int(round(T / dt / cfg.records)))
    traj = evolve(_initial_state(system, cfg.initial_state), system.L, (0.0, T), dt=dt,
                  record_every=every, observer=obs, positivity_tol=cfg.positivity_tol,
                  monitor_every=1)
    ss = steady_state(system.L)
    return traj.observations, obs(np.inf, ss.rho), {
        "dt": dt, "record_every": every, "steady_residual": ss.residual,
        "worst_min_eig": traj.worst_min_eig, "worst_min_eig_t_kappa0": traj.worst_min_eig_time * cfg.kappa0,
        "worst_trace_dev": traj.worst_trace_dev}


def run_dynamics(cfg: RunConfig, out: Path) -> dict:
    model = cfg.model
    if cfg.resonance is not None:
        ratio, _ = RESONANCES[cfg.resonance]
        model = model.with_(Omega=ratio * model.omega1)
    results = {}
    for orders in cfg.order_sets:
        m = model.with_(include_orders=orders)
        records, steady, info = simulate(m, cfg)
        tag = _orders_tag(orders)
        path = write_csv(out / f"trajectory_{tag}.csv", TRAJECTORY_COLUMNS, [r.row() for r in records])
        steady_row = steady.row()
        steady_row[0] = float("inf")
        write_csv(out / f"steady_{tag}.csv", TRAJECTORY_COLUMNS, [steady_row])
        write_metadata(path, cfg, {
            "initial_state": "bare vacuum |0,0,0>" if cfg.initial_state == "vacuum" else "dressed ground",
            "population_convention": cfg.convention, "include_orders": sorted(orders),
            "Omega": m.Omega, "time_unit": "t*kappa0", **info})
        results[tag] = steady
        print(f"{tag}: steady n_wall={steady.n_wall:.6g} n_mode1={steady.n_mode1:.6g} "
              f"J_w={steady.J_w:.6g} J_c={steady.J_c:.6g} Sigma_dot={steady.Sigma_dot:.6g}")
    return results


def run_perturbation(cfg: RunConfig, out: Path) -> dict:
    m = cfg.model
    truncs = cfg.truncations
    space = make_space(m, truncs[:-1], truncs[-1])
    terms = hamiltonian_terms(space, m)
    eig0 = free_decomposition(terms[0])
    rows = perturbation_table(eig0, terms[1], terms[2], terms[3], cfg.levels, m.epsilon)
    path = write_csv(out / "perturbation.csv", ["n", "E0", "E1", "E2", "E3", "C"], rows)
    write_metadata(path, cfg)
    info = {"rows": rows}
    if m.geometry in ("1d", "3d"):
        cf = vacuum_closed_forms(m)
        info["closed_form_E0_2"] = cf.E0_2
        print(f"closed-form E0^(2) = {cf.E0_2:.12g}")
        if m.geometry == "1d":
            info["series_E0_2"] = one_d_vacuum_energy(m)
            print(f"series-consistent E0^(2) = {info['series_E0_2']:.12g}")
    for r in rows:
        print(" ".join(fmt(v) for v in r))
    return info


def run_coupling(cfg: RunConfig, out: Path) -> dict:
    m = cfg.model
    c = effective_scattering_coupling(m.omega1, m.omega2, m.omega1)
    info = {"g_total": c.g_total, "g_virtual": c.g_virtual, "g_H2": c.g_H2,
            "virtual_fraction": c.virtual_fraction}
    out.mkdir(parents=True, exist_ok=True)
    (out / "coupling.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(f"g_total={c.g_total:.6g} g_virtual={c.g_virtual:.6g} g_H2={c.g_H2:.6g} "
          f"virtual fraction={c.virtual_fraction:.4f}")
    return info


RUNNERS = {"spectrum": run_spectrum, "dynamics": run_dynamics,
           "perturbation": run_perturbation, "coupling": run_coupling}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="casimir-ho", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if cfg.command != args.command:
            raise ConfigError(f"command: config says {cfg.command!r}, CLI says {args.command!r}",
                              _line_of(Path(args.config).read_text(), "command"))
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out or cfg.output)
    try:
        RUNNERS[cfg.command](cfg, out)
    except IntegrationAbort as e:
        print(f"numerical abort: {e} (last good time {e.last_good_time})", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NoConvergence, DegenerateLevel, np.linalg.LinAlgError) as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
