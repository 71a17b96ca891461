"""Exact diagonalization, frequency sweeps and avoided-crossing gaps."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fock import OperatorMatrix, optical_parity
from .hamiltonian import HamiltonianModel, build_hamiltonian, make_space


class SpectrumError(ValueError):
    pass


class NonHermitianError(SpectrumError):
    pass


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs sorted by energy; ``states[:, a]`` is eigenvector a in the Fock basis.

    ``labels`` holds a conserved quantum number per eigenstate (optical parity
    for the cavity models) when the Hamiltonian was diagonalized block-wise.
    """
    energies: np.ndarray
    states: np.ndarray
    fingerprint: str = ""
    labels: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.energies)

    def to_eigenbasis(self, op) -> np.ndarray:
        op = np.asarray(op)
        return self.states.conj().T @ op @ self.states

    def to_fock(self, op) -> np.ndarray:
        op = np.asarray(op)
        return self.states @ op @ self.states.conj().T

    def residual(self, H) -> float:
        H = np.asarray(H)
        r = H @ self.states - self.states * self.energies
        return float(np.max(np.linalg.norm(r, axis=0)))


def diagonalize(H, labels=None, fingerprint: str = "") -> EigenDecomposition:
    """Dense Hermitian eigensolve.

    With ``labels`` (one integer per basis state) the matrix is diagonalized
    block by block, which keeps eigenvectors inside symmetry sectors even when
    levels from different sectors are degenerate.
    """
    if isinstance(H, OperatorMatrix):
        if not H.hermitian:
            raise NonHermitianError(f"Hamiltonian is not Hermitian (error {H.hermiticity_error():.2e})")
        H = H.data
    H = np.asarray(H)
    if np.max(np.abs(H - H.conj().T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(H))):
        raise NonHermitianError("Hamiltonian is not Hermitian")
    real = np.isrealobj(H) or np.max(np.abs(H.imag), initial=0.0) == 0.0
    M = H.real if real else H
    if labels is None:
        e, v = np.linalg.eigh(M)
        return EigenDecomposition(e, v.astype(complex), fingerprint)

    labels = np.asarray(labels)
    d = H.shape[0]
    sectors = np.unique(labels)
    for s in sectors:
        inside = labels == s
        if np.max(np.abs(H[np.ix_(inside, ~inside)]), initial=0.0) > 1e-12:
            raise SpectrumError(f"Hamiltonian couples sector {s} to other sectors")
    energies = []
    vecs = []
    lab = []
    for s in sectors:
        idx = np.where(labels == s)[0]
        e, v = np.linalg.eigh(M[np.ix_(idx, idx)])
        full = np.zeros((d, len(idx)), dtype=complex)
        full[idx, :] = v
        energies.append(e)
        vecs.append(full)
        lab.append(np.full(len(idx), s))
    energies = np.concatenate(energies)
    order = np.argsort(energies, kind="stable")
    return EigenDecomposition(
        energies[order], np.hstack(vecs)[:, order], fingerprint, np.concatenate(lab)[order])


def diagonalize_model(model: HamiltonianModel, optical_truncation, mechanical_truncation: int,
                      by_parity: bool = True) -> tuple[EigenDecomposition, OperatorMatrix]:
    space = make_space(model, optical_truncation, mechanical_truncation)
    H = build_hamiltonian(space, model)
    truncs = list(np.atleast_1d(optical_truncation)) + [mechanical_truncation]
    fp = model.fingerprint([int(t) for t in truncs])
    labels = optical_parity(space) if by_parity else None
    return diagonalize(H, labels=labels, fingerprint=fp), H


# ---------------------------------------------------------------- sweeps

@dataclass(frozen=True)
class SpectrumSweep:
    omega_grid: np.ndarray
    levels: np.ndarray  # (len(grid), n_levels), ground subtracted
    include_orders: frozenset
    sector: int | None = None

    def to_csv_rows(self):
        header = ["omega"] + [f"level{k}" for k in range(self.levels.shape[1])]
        rows = [[w, *lv] for w, lv in zip(self.omega_grid, self.levels)]
        return header, rows


class _OmegaFamily:
    """H(Omega) = H(Omega_ref) + (Omega - Omega_ref) n_b, restricted to a parity sector.

    Omega only enters the free wall term, so one assembly serves a whole sweep.
    """

    def __init__(self, model: HamiltonianModel, truncations, sector: int | None):
        space = make_space(model, truncations[:-1], truncations[-1])
        H = build_hamiltonian(space, model).data.real
        nb = space.occupation_table[:, -1].astype(float)
        if sector is not None:
            idx = np.where(optical_parity(space) == sector)[0]
            H = H[np.ix_(idx, idx)]
            nb = nb[idx]
        self.H = H
        self.nb = nb
        self.ref = model.Omega

    def levels(self, Omega: float, n_levels: int) -> np.ndarray:
        H = self.H.copy()
        H[np.diag_indices_from(H)] += (Omega - self.ref) * self.nb
        e = np.linalg.eigvalsh(H)
        if n_levels > len(e):
            raise SpectrumError(f"n_levels={n_levels} exceeds dimension {len(e)}")
        return e[:n_levels] - e[0]


def sweep_spectrum(model: HamiltonianModel, omega_grid, n_levels: int, include_orders=None,
                   truncations=(8, 5, 12), sector: int | None = None,
                   workers: int | None = None) -> SpectrumSweep:
    """Lowest ``n_levels`` eigenenergies minus the ground energy along a grid of Omega.

    ``sector`` restricts to optical parity +1 or -1. ``workers`` defaults to the
    ``CASIMIR_HO_WORKERS`` environment variable (1 if unset); results are
    always returned in grid order.
    """
    grid = np.asarray(omega_grid, dtype=float)
    if grid.size == 0:
        raise SpectrumError("empty Omega grid")
    if np.any(np.diff(grid) <= 0):
        raise SpectrumError("Omega grid must be strictly increasing")
    if np.any(grid <= 0):
        raise SpectrumError("Omega grid must be positive")
    if include_orders is not None:
        model = model.with_(include_orders=frozenset(include_orders))
    if workers is None:
        workers = int(os.environ.get("CASIMIR_HO_WORKERS", "1"))

    family = _OmegaFamily(model.with_(Omega=float(grid[0])), truncations, sector)

    def job(w):
        return family.levels(float(w), n_levels)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            levels = list(pool.map(job, grid))
    else:
        levels = [job(w) for w in grid]
    return SpectrumSweep(grid, np.array(levels), model.include_orders, sector)


@dataclass(frozen=True)
class GapResult:
    gap: float
    omega_at_min: float


def avoided_crossing_gap(sweep: SpectrumSweep, level_pair, window) -> GapResult:
    """Minimum of E_upper - E_lower over the grid points inside ``window``.

    A parabola through the discrete minimum and its neighbours refines the
    result when the minimum is interior to the window.
    """
    lo_level, hi_level = level_pair
    lo, hi = window
    inside = np.where((sweep.omega_grid >= lo) & (sweep.omega_grid <= hi))[0]
    if inside.size == 0:
        raise SpectrumError(f"no grid points inside window {window}")
    w = sweep.omega_grid[inside]
    g = sweep.levels[inside, hi_level] - sweep.levels[inside, lo_level]
    i = int(np.argmin(g))
    gap, at = float(g[i]), float(w[i])
    if 0 < i < len(g) - 1:
        x = w[i - 1:i + 2]
        y = g[i - 1:i + 2]
        a, b, c = np.polyfit(x - x[1], y, 2)
        if a > 0:
            x0 = -b / (2 * a)
            if x[0] - x[1] <= x0 <= x[2] - x[1]:
                gap = float(max(0.0, min(gap, c - b * b / (4 * a))))
                at = float(x[1] + x0)
    return GapResult(gap, at)


def locate_gap(model: HamiltonianModel, level_pair, window, truncations=(8, 5, 12),
               sector: int | None = 1, points: int = 81, min_rounds: int = 3,
               max_rounds: int = 14, shrink: float = 10.0, rtol: float = 1e-6,
               atol: float = 1e-12) -> GapResult:
    """Avoided-crossing gap by repeated zooming.

    Each round sweeps ``points`` values of Omega across the window and
    recentres a window ``shrink`` times narrower on the minimum. Zooming
    stops once the gap changes by less than ``rtol`` between rounds (the
    hyperbola bottom is resolved) or drops below ``atol`` (a true crossing).
    """
    lo, hi = window
    n_levels = max(level_pair) + 1
    result = prev = None
    for r in range(max_rounds):
        grid = np.linspace(lo, hi, points)
        sw = sweep_spectrum(model, grid, n_levels, truncations=truncations, sector=sector, workers=1)
        result = avoided_crossing_gap(sw, level_pair, (lo, hi))
        if r + 1 >= min_rounds and (result.gap < atol or
                                    abs(result.gap - prev.gap) <= rtol * result.gap):
            break
        prev = result
        half = (hi - lo) / (2 * shrink)
        lo, hi = result.omega_at_min - half, result.omega_at_min + half
    return result


RESONANCES = {
    "first": (2.0, (1, 2)),
    "second": (1.0, (2, 3)),
    "third": (2.0 / 3.0, (3, 4)),
}


def resonance_gap(model: HamiltonianModel, which: str, truncations=(8, 5, 12),
                  half_width: float = 0.03) -> GapResult:
    """Gap of the photon-pair / phonon avoided crossing at a named resonance.

    Levels are counted inside the even optical-parity sector, where
    |2,0,n_b=0> and |0,0,n_b=k> are the crossing pair for k = 1, 2, 3.
    """
    ratio, pair = RESONANCES[which]
    centre = ratio * model.omega1
    return locate_gap(model, pair, (centre - half_width, centre + half_width),
                      truncations=truncations, sector=1)
