"""Rayleigh-Schroedinger perturbation theory for H0 + eps H1 + eps^2 H2 + eps^3 H3.

Because the second- and third-order pieces of the interaction scale with
eps^2 and eps^3, they enter the energy and state corrections at the same
order as the iterated first-order terms. With H2 = H3 = 0 every formula
here reduces to the textbook expansion.

Also provides closed-form vacuum corrections for the 1-D and 3-D cavities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hamiltonian import (
    ONE_D,
    THREE_D,
    HamiltonianModel,
    ModelError,
    box_modes,
    box_wavevectors,
    one_d_frequencies,
    zeta,
)
from .spectrum import EigenDecomposition


class DegenerateLevel(ValueError):
    """The requested level is (quasi-)degenerate; a resonance is active."""


@dataclass
class PerturbativeResult:
    n: int
    E0: float
    E1: float = np.nan
    E2: float = np.nan
    E3: float = np.nan
    state1: np.ndarray | None = None
    state2: np.ndarray | None = None
    C: float | None = None

    def energy(self, epsilon: float) -> float:
        total = self.E0
        for k, e in enumerate((self.E1, self.E2, self.E3), start=1):
            if np.isfinite(e):
                total += epsilon ** k * e
        return total

    def normalization(self, epsilon: float) -> float:
        """C = 1 - eps^2 sum_l |c1_nl|^2."""
        if self.state1 is None:
            raise ValueError("first-order state not computed")
        return float(1.0 - epsilon ** 2 * np.sum(np.abs(self.state1) ** 2))

    def state(self, epsilon: float, order: int = 2) -> np.ndarray:
        """|n0> + eps|n1> (+ eps^2|n2>) in the unperturbed basis, unnormalized."""
        psi = np.zeros(len(self.state1), dtype=complex)
        psi[self.n] = 1.0
        psi += epsilon * self.state1
        if order >= 2 and self.state2 is not None:
            psi += epsilon ** 2 * self.state2
        return psi


def free_decomposition(H0) -> EigenDecomposition:
    """Eigenbasis of a diagonal H0 made of sorted Fock basis vectors."""
    H0 = np.asarray(H0)
    if np.max(np.abs(H0 - np.diag(np.diag(H0))), initial=0.0) > 0:
        raise ValueError("H0 is not diagonal in the supplied basis")
    e = np.diag(H0).real
    order = np.argsort(e, kind="stable")
    return EigenDecomposition(e[order], np.eye(len(e), dtype=complex)[:, order])


def degeneracy_threshold(frequencies) -> float:
    return 1e-6 * float(np.max(frequencies))


def _prepare(eig0: EigenDecomposition, ops, n: int, delta_deg: float | None):
    E = eig0.energies
    if not 0 <= n < len(E):
        raise IndexError(f"level {n} outside 0..{len(E) - 1}")
    if delta_deg is None:
        delta_deg = 1e-6 * max(1.0, float(np.max(np.abs(E))))
    diff = E[n] - E
    others = np.delete(np.abs(diff), n)
    if others.size and others.min() <= delta_deg:
        raise DegenerateLevel(
            f"level {n} is within {others.min():.3e} of another level (threshold {delta_deg:.1e})")
    V = eig0.states
    mats = [None if op is None else V.conj().T @ np.asarray(op) @ V for op in ops]
    inv = np.zeros_like(diff)
    mask = np.arange(len(E)) != n
    inv[mask] = 1.0 / diff[mask]
    return E, mats, inv


def perturbative_energy(eig0: EigenDecomposition, H1, H2=None, H3=None, n: int = 0,
                        max_order: int = 3, delta_deg: float | None = None) -> PerturbativeResult:
    """Energy corrections E1..E3 of unperturbed level ``n``.

    ``inv[l] = 1/(E_n - E_l)`` (zero at l = n) carries every restricted sum.
    The third-order H1-H2 cross term is written as the sum of both
    orderings, which is 2 Re(...) and equals twice either one for real
    matrix elements.
    """
    if max_order > 3 or max_order < 1:
        raise ValueError("orders 1..3 are supported")
    E, (A, B, G), inv = _prepare(eig0, (H1, H2, H3), n, delta_deg)
    d = len(E)
    B = np.zeros((d, d)) if B is None else B
    G = np.zeros((d, d)) if G is None else G
    res = PerturbativeResult(n=n, E0=float(E[n]))
    res.E1 = float(A[n, n].real)
    if max_order >= 2:
        c1 = A[:, n] * inv
        res.E2 = float((A[n, :] @ c1 + B[n, n]).real)
    if max_order >= 3:
        a_ln = A[:, n]
        a_nl = A[n, :]
        triple = (a_nl * inv) @ A @ (inv * a_ln)
        shift = A[n, n] * np.sum(np.abs(a_ln) ** 2 * inv ** 2)
        cross = np.sum(B[n, :] * inv * a_ln) + np.sum(a_nl * inv * B[:, n])
        res.E3 = float((triple - shift + cross + G[n, n]).real)
    return res


def perturbative_state(eig0: EigenDecomposition, H1, H2=None, n: int = 0, max_order: int = 2,
                       epsilon: float | None = None,
                       delta_deg: float | None = None) -> PerturbativeResult:
    """First- and second-order state coefficients c1_nl, c2_nl over the unperturbed basis.

    ``C`` is filled in when ``epsilon`` is given.
    """
    if max_order > 2 or max_order < 1:
        raise ValueError("state corrections are available to second order")
    E, (A, B), inv = _prepare(eig0, (H1, H2), n, delta_deg)
    res = PerturbativeResult(n=n, E0=float(E[n]), E1=float(A[n, n].real))
    c1 = A[:, n] * inv
    res.state1 = c1
    if max_order >= 2:
        c2 = inv * (A @ c1) - A[n, n] * A[:, n] * inv ** 2
        if B is not None:
            c2 = c2 + B[:, n] * inv
        c2[n] = 0.0
        res.state2 = c2
    if epsilon is not None:
        res.C = res.normalization(epsilon)
    return res


def perturbation_table(eig0: EigenDecomposition, H1, H2, H3, levels, epsilon: float,
                       delta_deg: float | None = None):
    """Rows (n, E0, E1, E2, E3, C) for the CSV output."""
    rows = []
    for n in levels:
        r = perturbative_energy(eig0, H1, H2, H3, n=n, delta_deg=delta_deg)
        s = perturbative_state(eig0, H1, H2, n=n, max_order=1, epsilon=epsilon, delta_deg=delta_deg)
        rows.append((n, r.E0, r.E1, r.E2, r.E3, s.C))
    return rows


# ---------------------------------------------------------------- closed forms

@dataclass
class VacuumClosedForms:
    """First-order vacuum amplitudes and second-order vacuum energy at a fixed mode cutoff.

    ``amp_2n1b`` is keyed by mode label, ``amp_1n1m1b`` by unordered label pairs.
    """
    amp_1b: float
    amp_2n1b: dict = field(default_factory=dict)
    amp_1n1m1b: dict = field(default_factory=dict)
    E0_2: float = 0.0


def _mode_table(model: HamiltonianModel):
    """(label, k_x, k_perp^2, omega) per mode, 1-D modes labelled by n."""
    if model.geometry == ONE_D:
        if model.n_max < 1:
            raise ModelError("mode cutoff must be >= 1")
        return [(n, w, 0.0, w) for n, w in enumerate(one_d_frequencies(model), start=1)]
    if model.geometry == THREE_D:
        if min(model.cutoffs) < 1:
            raise ModelError("mode cutoffs must be >= 1")
        return [(lab, *box_wavevectors(model, lab)) for lab in box_modes(model)]
    raise ModelError("closed forms exist for the 1d and 3d cavities only")


def _x_index(label):
    return label if isinstance(label, (int, np.integer)) else label[0]


def _partners(a, b) -> bool:
    """Modes sharing their transverse indices (all 1-D modes do)."""
    if isinstance(a, (int, np.integer)):
        return True
    return a[1:] == b[1:]


def vacuum_closed_forms(model: HamiltonianModel) -> VacuumClosedForms:
    """Closed-form vacuum corrections, evaluated as printed.

    For the 1-D cavity E0_2 uses the k_perp -> 0 reduced expression; for
    the box it uses the general one. See :func:`one_d_vacuum_energy` for the
    form that agrees with the perturbation series of the 1-D Hamiltonian.
    """
    modes = _mode_table(model)
    Om = model.Omega
    amp_1b = sum((kx ** 2 - kp2) / (2 * w * Om) for _, kx, kp2, w in modes)
    amp2 = {lab: np.sqrt(2) * kx ** 2 / (2 * w * (2 * w + Om)) for lab, kx, kp2, w in modes}
    amp11 = {}
    for i, (a, ka, _, wa) in enumerate(modes):
        for b, kb, _, wb in modes[i + 1:]:
            if not _partners(a, b):
                continue
            sign = (-1) ** (_x_index(a) + _x_index(b))
            amp11[(a, b)] = sign * ka * kb / (np.sqrt(wa * wb) * (wa + wb + Om))

    if model.geometry == ONE_D:
        w = np.array([m[3] for m in modes])
        E2 = (w.sum() / 2 - np.sum(np.outer(w, w) / (4 * (w[:, None] + w[None, :] + Om)))
              - np.sum(w ** 2) / (4 * Om))
    else:
        E2 = 0.0
        for _, kx, kp2, w in modes:
            E2 += kx ** 2 / (4 * w ** 3) * (zeta(kx, kx, kp2) / w ** 2 - kp2 / 2)
            E2 -= (kx ** 2 - kp2) ** 2 / (4 * w ** 2 * Om)
        for _, ka, _, wa in modes:
            for _, kb, _, wb in modes:
                E2 -= ka ** 2 * kb ** 2 / (4 * wa * wb * (wa + wb + Om))
    return VacuumClosedForms(float(amp_1b), amp2, amp11, float(E2))


def one_d_vacuum_energy(model: HamiltonianModel) -> float:
    """Second-order vacuum energy of the 1-D cavity from its own perturbation series.

    sum_n w_n/2 - sum_{n,m} w_n w_m / (2 (w_n + w_m + Omega)) - (sum_n w_n)^2 / (4 Omega).
    Differs from the reduced printed form by a factor 2 in the pair sum and by
    the n != m cross terms of the radiation-pressure piece.
    """
    if model.geometry != ONE_D:
        raise ModelError("one_d_vacuum_energy needs a 1d model")
    w = one_d_frequencies(model)
    Om = model.Omega
    pair = np.sum(np.outer(w, w) / (2 * (w[:, None] + w[None, :] + Om)))
    return float(w.sum() / 2 - pair - w.sum() ** 2 / (4 * Om))
