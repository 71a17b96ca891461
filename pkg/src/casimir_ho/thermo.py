"""Heat flows, entropy, entropy production and mode populations.

All density matrices here are in the eigenbasis of the full Hamiltonian,
where H is diagonal and the dissipators act natively.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import HilbertSpace, MECHANICAL, OPTICAL, number_operator
from .opensys import Liouvillian, dressed_transition_table
from .fock import ladder_operator
from .spectrum import EigenDecomposition

EIGENVALUE_FLOOR = 1e-14

TRAJECTORY_COLUMNS = ("t_kappa0", "n_wall", "n_mode1", "n_mode2", "J_w", "J_c", "S",
                      "Sigma_dot", "trace", "min_eig")


@dataclass
class TrajectoryRecord:
    t: float  # t * kappa0
    n_wall: float
    n_mode1: float
    n_mode2: float
    J_w: float
    J_c: float
    S: float
    Sigma_dot: float
    trace: float
    min_eig: float

    def row(self):
        return [self.t, self.n_wall, self.n_mode1, self.n_mode2, self.J_w, self.J_c, self.S,
                self.Sigma_dot, self.trace, self.min_eig]


def heat_flow(rho: np.ndarray, L: Liouvillian, bath: str) -> complex:
    """Tr[H L_bath rho]; the imaginary part is a numerical diagnostic."""
    Lr = L.part(bath, rho)
    return complex(np.sum(L.eig.energies * np.diag(Lr)))


def heat_flows(rho: np.ndarray, L: Liouvillian) -> dict[str, float]:
    return {name: heat_flow(rho, L, name).real for name in L.parts}


def _log_rho(rho: np.ndarray, floor: float = EIGENVALUE_FLOOR):
    lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    lam = np.clip(lam, floor, None)
    return lam, (V * np.log(lam)) @ V.conj().T


def von_neumann_entropy(rho: np.ndarray, floor: float = EIGENVALUE_FLOOR) -> float:
    """-sum lambda ln lambda over eigenvalues >= floor."""
    lam = np.linalg.eigvalsh(0.5 * (np.asarray(rho) + np.asarray(rho).conj().T))
    lam = lam[lam >= floor]
    return float(max(0.0, -np.sum(lam * np.log(lam))))


def entropy_rate(rho: np.ndarray, L: Liouvillian, floor: float = EIGENVALUE_FLOOR) -> float:
    """dS/dt = -Tr[(L rho) ln rho]; the unitary part drops out."""
    _, lnr = _log_rho(rho, floor)
    return float(-np.real(np.sum(L.dissipator(rho) * lnr.T)))


def spohn_terms(rho: np.ndarray, L: Liouvillian, temperatures: dict[str, float],
                floor: float = EIGENVALUE_FLOOR) -> dict[str, float]:
    """Per-bath -Tr[(L_a rho)(ln rho - ln rho_a)] with rho_a the global Gibbs state at T_a.

    Since Tr[L_a rho] = 0 this equals -Tr[(L_a rho) ln rho] - J_a / T_a.
    """
    _, lnr = _log_rho(rho, floor)
    E = L.eig.energies
    out = {}
    for name in L.parts:
        Lr = L.part(name, rho)
        dS = -np.real(np.sum(Lr * lnr.T))
        J = np.real(np.sum(E * np.diag(Lr)))
        out[name] = float(dS - J / temperatures[name])
    return out


def entropy_production_rate(rho: np.ndarray, L: Liouvillian, temperatures: dict[str, float],
                            floor: float = EIGENVALUE_FLOOR) -> float:
    """Sigma_dot = sum_a [-Tr((L_a rho) ln rho) - J_a / T_a]."""
    return float(sum(spohn_terms(rho, L, temperatures, floor).values()))


def gibbs_state(eig: EigenDecomposition, T: float) -> np.ndarray:
    """exp(-H/T)/Z in the eigenbasis."""
    x = -(eig.energies - eig.energies[0]) / T
    p = np.exp(x)
    return np.diag(p / p.sum()).astype(complex)


def energy(rho: np.ndarray, eig: EigenDecomposition) -> float:
    return float(np.real(np.sum(eig.energies * np.diag(rho))))


# ---------------------------------------------------------------- populations

class PopulationOperators:
    """Number-like operators for the wall and the first two cavity modes, in the eigenbasis.

    ``bare``: o^dag o. ``dressed``: O^dag O with O the dressed lowering
    operator built from o + o^dag.
    """

    def __init__(self, eig: EigenDecomposition, space: HilbertSpace, coeff_floor: float = 0.0):
        wall = [i for i, m in enumerate(space.modes) if m.kind == MECHANICAL]
        opt = [i for i, m in enumerate(space.modes) if m.kind == OPTICAL]
        self.modes = {"n_wall": wall[0], "n_mode1": opt[0] if opt else None,
                      "n_mode2": opt[1] if len(opt) > 1 else None}
        self.bare = {}
        self.dressed = {}
        for key, idx in self.modes.items():
            if idx is None:
                continue
            self.bare[key] = eig.to_eigenbasis(number_operator(space, idx).data)
            t = dressed_transition_table(eig, ladder_operator(space, idx, "lower"), coeff_floor)
            O = t.operator()
            self.dressed[key] = O.conj().T @ O

    def __call__(self, rho: np.ndarray, convention: str = "dressed") -> dict[str, float]:
        ops = {"bare": self.bare, "dressed": self.dressed}.get(convention)
        if ops is None:
            raise ValueError(f"convention must be 'bare' or 'dressed', got {convention!r}")
        out = {k: float("nan") for k in self.modes}
        for k, op in ops.items():
            out[k] = float(np.real(np.sum(op * rho.T)))
        return out


def mode_populations(rho: np.ndarray, eig: EigenDecomposition, space: HilbertSpace,
                     convention: str = "dressed") -> dict[str, float]:
    return PopulationOperators(eig, space)(rho, convention)


# ---------------------------------------------------------------- trajectory observer

class TrajectoryObserver:
    """Callable for :func:`opensys.evolve` that produces TrajectoryRecords.

    ``cavity``/``wall`` name the dissipator parts; time is reported as t*kappa0.
    """

    def __init__(self, L: Liouvillian, space: HilbertSpace, temperatures: dict[str, float],
                 kappa0: float = 0.003, convention: str = "dressed",
                 cavity: str = "cavity", wall: str = "wall"):
        self.L = L
        self.pops = PopulationOperators(L.eig, space)
        self.temps = temperatures
        self.kappa0 = kappa0
        self.convention = convention
        self.cavity = cavity
        self.wall = wall

    def __call__(self, t: float, rho: np.ndarray) -> TrajectoryRecord:
        L = self.L
        lam, V = np.linalg.eigh(0.5 * (rho + rho.conj().T))
        lnr = (V * np.log(np.clip(lam, EIGENVALUE_FLOOR, None))) @ V.conj().T
        E = L.eig.energies
        J = {}
        sig = 0.0
        for name in L.parts:
            Lr = L.part(name, rho)
            J[name] = float(np.real(np.sum(E * np.diag(Lr))))
            sig += -np.real(np.sum(Lr * lnr.T)) - J[name] / self.temps[name]
        keep = lam[lam >= EIGENVALUE_FLOOR]
        S = float(max(0.0, -np.sum(keep * np.log(keep))))
        pops = self.pops(rho, self.convention)
        return TrajectoryRecord(
            t=t * self.kappa0, n_wall=pops["n_wall"], n_mode1=pops["n_mode1"],
            n_mode2=pops["n_mode2"], J_w=J.get(self.wall, 0.0), J_c=J.get(self.cavity, 0.0),
            S=S, Sigma_dot=float(sig), trace=float(np.trace(rho).real), min_eig=float(lam[0]))
