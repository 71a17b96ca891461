"""Cavity-field / vibrating-wall Hamiltonians up to third order in epsilon.

Three geometries are supported:

``three_body``
    two cavity modes (omega1, omega2) and the wall mode Omega, the model used
    for spectra and dynamics.
``1d``
    ``n_max`` modes of a 1-D cavity of length L, omega_n = n*pi/L.
``3d``
    box modes (n_x, n_y, n_z) with omega_n = sqrt(k_nx^2 + k_perp^2).

All builders return ``H0 + sum_k eps^k H_k`` over the selected orders. The
free part carries no zero-point constants; the 1/2 vacuum terms only show up
inside the 3-D first-order term and the radiation pressure term.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .fock import (
    MECHANICAL,
    OPTICAL,
    HilbertSpace,
    OperatorMatrix,
    build_space,
    ladder_operator,
    mechanical,
    number_operator,
    optical,
    quadrature_operator,
)

THREE_BODY = "three_body"
ONE_D = "1d"
THREE_D = "3d"
GEOMETRIES = (THREE_BODY, ONE_D, THREE_D)

EPSILON_MAX = 0.2


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class HamiltonianModel:
    geometry: str = THREE_BODY
    epsilon: float = 0.07
    include_orders: frozenset = frozenset({1, 2, 3})
    omega1: float = 0.5
    omega2: float = 1.0
    Omega: float = 1.0
    # 1-D cavity
    L: float = np.pi
    n_max: int = 2
    # 3-D box
    Lx: float = np.pi
    Ly: float = np.pi
    Lz: float = np.pi
    cutoffs: tuple = (1, 1, 1)

    def __post_init__(self):
        if self.geometry not in GEOMETRIES:
            raise ModelError(f"unknown geometry {self.geometry!r}")
        if not 0 <= self.epsilon <= EPSILON_MAX:
            raise ModelError(f"epsilon must lie in [0, {EPSILON_MAX}], got {self.epsilon}")
        orders = frozenset(int(k) for k in self.include_orders)
        if not orders <= {1, 2, 3}:
            raise ModelError(f"include_orders must be a subset of {{1,2,3}}, got {sorted(orders)}")
        object.__setattr__(self, "include_orders", orders)
        object.__setattr__(self, "cutoffs", tuple(int(c) for c in self.cutoffs))
        if self.Omega <= 0:
            raise ModelError("mechanical frequency must be positive")
        if self.geometry == THREE_BODY and (self.omega1 <= 0 or self.omega2 <= 0):
            raise ModelError("optical frequencies must be positive")
        if self.geometry == ONE_D:
            if self.L <= 0:
                raise ModelError("cavity length must be positive")
            if self.n_max < 1:
                raise ModelError("mode cutoff must be >= 1")
        if self.geometry == THREE_D:
            if min(self.Lx, self.Ly, self.Lz) <= 0:
                raise ModelError("box lengths must be positive")
            if len(self.cutoffs) != 3 or min(self.cutoffs) < 1:
                raise ModelError("3-D cutoffs must be three integers >= 1")

    def with_(self, **changes) -> "HamiltonianModel":
        data = asdict(self)
        data.update(changes)
        return HamiltonianModel(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["include_orders"] = sorted(self.include_orders)
        d["cutoffs"] = list(self.cutoffs)
        return d

    def fingerprint(self, truncations=()) -> str:
        payload = {"model": self.to_dict(), "truncations": list(truncations)}
        text = json.dumps(payload, sort_keys=True, default=repr)
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class CouplingBreakdown:
    g_total: float
    g_virtual: float
    g_H2: float
    virtual_fraction: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "virtual_fraction", self.g_virtual / self.g_total)


# ---------------------------------------------------------------- mode tables

def one_d_frequencies(model: HamiltonianModel) -> np.ndarray:
    n = np.arange(1, model.n_max + 1)
    return n * np.pi / model.L


def box_modes(model: HamiltonianModel) -> list[tuple[int, int, int]]:
    """Mode labels (n_x, n_y, n_z), n_x slowest."""
    nx, ny, nz = model.cutoffs
    return list(product(range(1, nx + 1), range(1, ny + 1), range(1, nz + 1)))


def box_wavevectors(model: HamiltonianModel, label):
    """(k_x, k_perp^2, omega) for one box mode."""
    n_x, n_y, n_z = label
    kx = np.pi * n_x / model.Lx
    kperp2 = (np.pi * n_y / model.Ly) ** 2 + (np.pi * n_z / model.Lz) ** 2
    return kx, kperp2, np.sqrt(kx ** 2 + kperp2)


def optical_frequencies(model: HamiltonianModel) -> np.ndarray:
    if model.geometry == THREE_BODY:
        return np.array([model.omega1, model.omega2])
    if model.geometry == ONE_D:
        return one_d_frequencies(model)
    return np.array([box_wavevectors(model, lab)[2] for lab in box_modes(model)])


def make_space(model: HamiltonianModel, optical_truncation, mechanical_truncation: int) -> HilbertSpace:
    """Space with one optical mode per model mode plus the wall mode (last).

    ``optical_truncation`` is an int (same for every optical mode) or a
    sequence with one entry per optical mode.
    """
    freqs = optical_frequencies(model)
    if np.isscalar(optical_truncation):
        optical_truncation = [int(optical_truncation)] * len(freqs)
    if len(optical_truncation) != len(freqs):
        raise ModelError(
            f"need {len(freqs)} optical truncations, got {len(optical_truncation)}")
    modes = [optical(w, n) for w, n in zip(freqs, optical_truncation)]
    modes.append(mechanical(model.Omega, mechanical_truncation))
    return build_space(modes)


# ---------------------------------------------------------------- coefficient functions

def zeta(kn, km, kperp2):
    """Second-order coefficient function; reduces to 2 km^2 kn^2 for k_perp = 0."""
    return km ** 2 * (2 * kn ** 2 + 3 * kperp2) + kperp2 * (3 * kn ** 2 + 4 * kperp2)


def theta(kn, km, kperp2, wn, wm, Lx):
    """Coefficient of the photon-conserving part of the third-order term."""
    kp2, kp4 = kperp2, kperp2 ** 2
    L2 = Lx ** 2
    ww = wm * wn
    return (
        4 * km ** 6 * wn ** 4 * L2
        + km ** 4 * (
            4 * kn ** 6 * L2
            - kp4 * (45 + 8 * ww * L2)
            + 2 * kn ** 2 * kp2 * (-27 + 2 * (kp2 - 4 * ww) * L2)
            + 8 * kn ** 4 * (-3 + (kp2 - ww) * L2))
        - kp4 * (
            -4 * kn ** 6 * L2
            + kn ** 4 * (45 + 8 * ww * L2)
            + 2 * kn ** 2 * kp2 * (51 + 6 * kp2 * L2 + 8 * ww * L2)
            + 8 * kp4 * (9 + (kp2 + ww) * L2))
        - 2 * km ** 2 * kp2 * (
            -4 * kn ** 6 * L2
            + kn ** 4 * (27 - 2 * kp2 * L2 + 8 * ww * L2)
            + kp4 * (51 + 6 * kp2 * L2 + 8 * ww * L2)
            + kn ** 2 * kp2 * (63 + 8 * (kp2 + 2 * ww) * L2))
    )


def chi(kn, km, kperp2, wn, wm, Lx):
    """Coefficient of the pair creation/annihilation part of the third-order term."""
    kp2, kp4 = kperp2, kperp2 ** 2
    L2 = Lx ** 2
    ww = wm * wn
    return (
        4 * km ** 6 * wn ** 4 * L2
        - kp4 * (
            -4 * kn ** 6 * L2
            + kn ** 4 * (45 - 8 * ww * L2)
            + 2 * kn ** 2 * kp2 * (51 + 6 * kp2 * L2 - 8 * ww * L2)
            + 8 * kp4 * (9 + (kp2 - ww) * L2))
        - 2 * km ** 2 * kp2 * (
            -4 * kn ** 6 * L2
            + kp4 * (51 + 6 * kp2 * L2 - 8 * ww * L2)
            + kn ** 2 * kp2 * (63 + 8 * (kp2 - 2 * ww) * L2)
            - kn ** 4 * (-27 + 2 * (kp2 + 4 * ww) * L2))
        + km ** 4 * (
            4 * kn ** 6 * L2
            + kp4 * (-45 + 8 * ww * L2)
            + 8 * kn ** 4 * (-3 + (kp2 + ww) * L2)
            + 2 * kn ** 2 * kp2 * (-27 + 2 * (kp2 + 4 * ww) * L2))
    )


# ---------------------------------------------------------------- builders

def _check_space(space: HilbertSpace, model: HamiltonianModel) -> np.ndarray:
    freqs = optical_frequencies(model)
    n_opt = len(freqs)
    if space.n_modes != n_opt + 1:
        raise ModelError(
            f"{model.geometry} model needs {n_opt} optical modes + 1 mechanical mode, "
            f"space has {space.n_modes} modes")
    kinds = [m.kind for m in space.modes]
    if kinds != [OPTICAL] * n_opt + [MECHANICAL]:
        raise ModelError(f"mode kinds must be {n_opt} optical then mechanical, got {kinds}")
    space_freqs = np.array([m.frequency for m in space.modes[:n_opt]])
    if not np.allclose(space_freqs, freqs, rtol=1e-12, atol=1e-12):
        raise ModelError("space mode frequencies do not match the model")
    if not np.isclose(space.modes[-1].frequency, model.Omega, rtol=1e-12, atol=1e-12):
        raise ModelError("space mechanical frequency does not match the model")
    return freqs


def _free(space: HilbertSpace, freqs, Omega) -> np.ndarray:
    h = np.zeros((space.dim, space.dim), dtype=complex)
    for i, w in enumerate(freqs):
        h += w * number_operator(space, i).data
    h += Omega * number_operator(space, len(freqs)).data
    return h


def _quads(space: HilbertSpace, n_opt: int):
    X = [quadrature_operator(space, i, "X").data for i in range(n_opt)]
    P = [quadrature_operator(space, i, "P").data for i in range(n_opt)]
    Xb = quadrature_operator(space, n_opt, "X").data
    return X, P, Xb


def three_body_terms(space: HilbertSpace, model: HamiltonianModel) -> dict[int, np.ndarray]:
    """Unscaled H0..H3 of the two-mode + wall model."""
    if model.geometry != THREE_BODY:
        raise ModelError("three_body_terms needs a three_body model")
    freqs = _check_space(space, model)
    w1, w2 = freqs
    W = model.Omega
    (X1, X2), (P1, P2), Xb = _quads(space, 2)
    s = np.sqrt(w1 * w2)
    Xb2 = Xb @ Xb
    Xb3 = Xb2 @ Xb
    quad = w1 * X1 @ X1 + w2 * X2 @ X2 - s * X1 @ X2
    c = (4 * np.pi) ** 2
    h3_optical = (
        c / 3 * (w1 * P1 @ P1 + 4 * w2 * P2 @ P2 - 2 * s * P1 @ P2)
        + c / 6 * (w1 * X1 @ X1 + 8 * w2 * X2 @ X2 - 5 * s * X1 @ X2)
        - 16 * (w1 * X1 @ X1 - w2 * X2 @ X2 + s * X1 @ X2)
    )
    return {
        0: _free(space, freqs, W),
        1: -4 * Xb @ quad,
        2: 8 * Xb2 @ quad,
        3: h3_optical @ Xb3,
    }


def one_d_terms(space: HilbertSpace, model: HamiltonianModel) -> dict[int, np.ndarray]:
    """Unscaled H0..H3 of the 1-D multimode cavity, double sums taken over all (n, m)."""
    if model.geometry != ONE_D:
        raise ModelError("one_d_terms needs a 1d model")
    freqs = _check_space(space, model)
    k = freqs  # c = 1
    L = model.L
    n_opt = len(freqs)
    X, P, Xb = _quads(space, n_opt)
    Xb2 = Xb @ Xb
    Xb3 = Xb2 @ Xb
    S1 = np.zeros_like(Xb)
    S3 = np.zeros_like(Xb)
    for i in range(n_opt):
        for j in range(n_opt):
            sign = (-1) ** ((i + 1) + (j + 1))
            amp = sign * np.sqrt(freqs[i] * freqs[j])
            XX = X[i] @ X[j]
            S1 += amp * XX
            S3 += amp * (k[i] * k[j] * L ** 2 / 3 * P[i] @ P[j]
                         + ((k[i] ** 2 + k[j] ** 2) * L ** 2 / 6 - 1) * XX)
    return {
        0: _free(space, freqs, model.Omega),
        1: -4 * S1 @ Xb,
        2: 8 * S1 @ Xb2,
        3: 16 * S3 @ Xb3,
    }


def three_d_terms(space: HilbertSpace, model: HamiltonianModel) -> dict[int, np.ndarray]:
    """Unscaled H0..H3 of the 3-D box.

    The inner sums run over m_x only with (n_y, n_z) shared with n. The
    photon-conserving part of the third-order term is not symmetric in
    (n, m) for k_perp != 0, so that term is Hermitian-symmetrized.
    """
    if model.geometry != THREE_D:
        raise ModelError("three_d_terms needs a 3d model")
    _check_space(space, model)
    labels = box_modes(model)
    n_opt = len(labels)
    index = {lab: i for i, lab in enumerate(labels)}
    waves = [box_wavevectors(model, lab) for lab in labels]
    freqs = np.array([w[2] for w in waves])
    X, P, Xb = _quads(space, n_opt)
    a = [ladder_operator(space, i, "lower").data for i in range(n_opt)]
    ad = [m.conj().T for m in a]
    N = [number_operator(space, i).data for i in range(n_opt)]
    eye = np.eye(space.dim)
    Xb2 = Xb @ Xb
    Xb3 = Xb2 @ Xb
    Lx = model.Lx

    S1 = np.zeros_like(Xb)
    S2 = np.zeros_like(Xb)
    S3 = np.zeros_like(Xb)
    for lab in labels:
        i = index[lab]
        kn, kp2, wn = waves[i]
        S1 += 2 * kp2 / wn * (N[i] + 0.5 * eye)
        S2 += -2 * kn ** 2 * kp2 / wn ** 3 * P[i] @ P[i]
        for mx in range(1, model.cutoffs[0] + 1):
            j = index[(mx, lab[1], lab[2])]
            km, _, wm = waves[j]
            sign = (-1) ** (lab[0] + mx)
            XX = X[i] @ X[j]
            S1 += -4 * sign * kn * km / np.sqrt(wn * wm) * XX
            S2 += -4 * sign * km * kn / (wn * wm) ** 2.5 * zeta(kn, km, kp2) * XX
            pref = sign * km * kn / (6 * (wn * wm) ** 2.5)
            S3 += pref * (theta(kn, km, kp2, wn, wm, Lx) * (ad[i] @ a[j] + a[i] @ ad[j])
                          + chi(kn, km, kp2, wn, wm, Lx) * (a[i] @ a[j] + ad[j] @ ad[i]))
    H3 = S3 @ Xb3
    H3 = 0.5 * (H3 + H3.conj().T)
    return {
        0: _free(space, freqs, model.Omega),
        1: S1 @ Xb,
        2: S2 @ Xb2,
        3: H3,
    }


_TERM_BUILDERS = {THREE_BODY: three_body_terms, ONE_D: one_d_terms, THREE_D: three_d_terms}


def hamiltonian_terms(space: HilbertSpace, model: HamiltonianModel) -> dict[int, np.ndarray]:
    return _TERM_BUILDERS[model.geometry](space, model)


def assemble(terms: dict[int, np.ndarray], epsilon: float, include_orders) -> np.ndarray:
    h = terms[0].copy()
    for k in sorted(include_orders):
        h = h + epsilon ** k * terms[k]
    return h


def build_hamiltonian(space: HilbertSpace, model: HamiltonianModel) -> OperatorMatrix:
    terms = hamiltonian_terms(space, model)
    return OperatorMatrix(space, assemble(terms, model.epsilon, model.include_orders))


def build_three_body(space: HilbertSpace, model: HamiltonianModel) -> OperatorMatrix:
    if model.geometry != THREE_BODY:
        raise ModelError("build_three_body needs a three_body model")
    return build_hamiltonian(space, model)


def build_1d_multimode(space: HilbertSpace, model: HamiltonianModel) -> OperatorMatrix:
    if model.geometry != ONE_D:
        raise ModelError("build_1d_multimode needs a 1d model")
    return build_hamiltonian(space, model)


def build_3d_multimode(space: HilbertSpace, model: HamiltonianModel) -> OperatorMatrix:
    if model.geometry != THREE_D:
        raise ModelError("build_3d_multimode needs a 3d model")
    return build_hamiltonian(space, model)


def radiation_pressure_term(space: HilbertSpace, model: HamiltonianModel) -> OperatorMatrix:
    """2 sum_n (k_perp^2 - k_nx^2)/omega_n (n_n + 1/2) X_b.

    For the three_body and 1d geometries k_perp = 0 and k_nx = omega_n.
    """
    freqs = _check_space(space, model)
    if model.geometry == THREE_D:
        waves = [box_wavevectors(model, lab) for lab in box_modes(model)]
        coeffs = [2 * (kp2 - kx ** 2) / w for kx, kp2, w in waves]
    else:
        coeffs = [-2 * w for w in freqs]
    n_opt = len(freqs)
    Xb = quadrature_operator(space, n_opt, "X").data
    eye = np.eye(space.dim)
    S = sum(c * (number_operator(space, i).data + 0.5 * eye) for i, c in enumerate(coeffs))
    return OperatorMatrix(space, S @ Xb)


def effective_scattering_coupling(omega1: float, omega2: float, Omega: float) -> CouplingBreakdown:
    """Coupling of the two-phonon / two-photon scattering term at 2 Omega = 2 omega1.

    g = (omega1/2) [ (2/Omega)(omega1 + omega2/8) + 1 ]; the 2/Omega piece comes
    from virtual first-order processes, the constant from the second-order term.
    """
    if Omega <= 0:
        raise ModelError("Omega must be positive")
    g_virtual = omega1 / 2 * (2 / Omega) * (omega1 + omega2 / 8)
    g_h2 = omega1 / 2
    return CouplingBreakdown(g_total=g_virtual + g_h2, g_virtual=g_virtual, g_H2=g_h2)
