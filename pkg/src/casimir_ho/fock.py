"""Truncated multimode Fock spaces and bare bosonic operators.

Index convention: basis states are occupation tuples ``(n_0, ..., n_{M-1})``
ordered row-major, mode 0 being the slowest-varying index. This matches
``np.kron(op_0, np.kron(op_1, ...))`` and is fixed so that stored
eigendecompositions stay portable.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

OPTICAL = "optical"
MECHANICAL = "mechanical"


class FockSpaceError(ValueError):
    """Invalid mode specification or mode index."""


class EmptySpace(FockSpaceError):
    pass


@dataclass(frozen=True)
class ModeSpec:
    kind: str
    frequency: float
    truncation: int

    def __post_init__(self):
        if self.kind not in (OPTICAL, MECHANICAL):
            raise FockSpaceError(f"unknown mode kind {self.kind!r}")
        if not self.frequency > 0:
            raise FockSpaceError(f"mode frequency must be positive, got {self.frequency}")
        if int(self.truncation) != self.truncation or self.truncation < 2:
            raise FockSpaceError(f"truncation must be an integer >= 2, got {self.truncation}")


def optical(frequency: float, truncation: int) -> ModeSpec:
    return ModeSpec(OPTICAL, float(frequency), int(truncation))


def mechanical(frequency: float, truncation: int) -> ModeSpec:
    return ModeSpec(MECHANICAL, float(frequency), int(truncation))


@dataclass(frozen=True)
class HilbertSpace:
    modes: tuple[ModeSpec, ...]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.truncation for m in self.modes)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def index(self, occupations: Sequence[int]) -> int:
        """Flat basis index of an occupation tuple."""
        if len(occupations) != self.n_modes:
            raise FockSpaceError("occupation tuple length does not match mode count")
        return int(np.ravel_multi_index(tuple(occupations), self.dims))

    def occupations(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.dims))

    @cached_property
    def occupation_table(self) -> np.ndarray:
        """(dim, n_modes) integer array of occupations for every basis state."""
        grids = np.indices(self.dims).reshape(self.n_modes, -1)
        return grids.T.copy()

    def basis_state(self, occupations: Sequence[int]) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[self.index(occupations)] = 1.0
        return psi

    def check_mode(self, mode_idx: int) -> None:
        if not 0 <= mode_idx < self.n_modes:
            raise FockSpaceError(f"mode index {mode_idx} out of range for {self.n_modes} modes")


def build_space(modes: Sequence[ModeSpec]) -> HilbertSpace:
    modes = tuple(modes)
    if not modes:
        raise EmptySpace("a Hilbert space needs at least one mode")
    for m in modes:
        if not isinstance(m, ModeSpec):
            raise FockSpaceError(f"expected ModeSpec, got {type(m).__name__}")
    return HilbertSpace(modes)


class OperatorMatrix:
    """Dense operator on a :class:`HilbertSpace`.

    Thin wrapper around a complex ndarray. Arithmetic returns new instances;
    ``hermitian`` is checked numerically (tolerance 1e-12) on first access.
    """

    __array_priority__ = 100
    HERMITIAN_TOL = 1e-12

    def __init__(self, space: HilbertSpace, data):
        data = np.asarray(data, dtype=complex)
        if data.shape != (space.dim, space.dim):
            raise FockSpaceError(
                f"operator shape {data.shape} does not match space dim {space.dim}")
        self.space = space
        self.data = data
        self.data.setflags(write=False)
        self._hermitian = None

    @property
    def hermitian(self) -> bool:
        if self._hermitian is None:
            self._hermitian = bool(self.hermiticity_error() < self.HERMITIAN_TOL)
        return self._hermitian

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T), initial=0.0))

    def dag(self) -> "OperatorMatrix":
        return OperatorMatrix(self.space, self.data.conj().T)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def _other(self, other):
        if isinstance(other, OperatorMatrix):
            if other.space.dims != self.space.dims:
                raise FockSpaceError("operators act on different spaces")
            return other.data
        return other

    def __add__(self, other):
        return OperatorMatrix(self.space, self.data + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return OperatorMatrix(self.space, self.data - self._other(other))

    def __rsub__(self, other):
        return OperatorMatrix(self.space, self._other(other) - self.data)

    def __neg__(self):
        return OperatorMatrix(self.space, -self.data)

    def __mul__(self, scalar):
        if isinstance(scalar, OperatorMatrix):
            raise TypeError("use @ for operator products")
        return OperatorMatrix(self.space, self.data * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return OperatorMatrix(self.space, self.data / scalar)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            return OperatorMatrix(self.space, self.data @ self._other(other))
        return self.data @ other

    def __repr__(self):
        return f"OperatorMatrix(dim={self.space.dim}, dims={self.space.dims})"


def _single_mode_lowering(n: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n, dtype=float)), k=1).astype(complex)


def embed(space: HilbertSpace, mode_idx: int, local: np.ndarray) -> OperatorMatrix:
    """Tensor-embed a single-mode matrix, identity on all other modes."""
    space.check_mode(mode_idx)
    dims = space.dims
    before = int(np.prod(dims[:mode_idx]))
    after = int(np.prod(dims[mode_idx + 1:]))
    full = np.kron(np.kron(np.eye(before), local), np.eye(after))
    return OperatorMatrix(space, full)


def identity(space: HilbertSpace) -> OperatorMatrix:
    return OperatorMatrix(space, np.eye(space.dim, dtype=complex))


def ladder_operator(space: HilbertSpace, mode_idx: int, which: str = "lower") -> OperatorMatrix:
    """Lowering (``which="lower"``) or raising operator of one mode.

    On the top Fock level the raising operator gives zero, so
    ``[a, a^dag]`` equals ``-(N-1)`` there instead of 1.
    """
    space.check_mode(mode_idx)
    a = _single_mode_lowering(space.modes[mode_idx].truncation)
    if which == "lower":
        return embed(space, mode_idx, a)
    if which == "raise":
        return embed(space, mode_idx, a.conj().T)
    raise FockSpaceError(f"which must be 'lower' or 'raise', got {which!r}")


def number_operator(space: HilbertSpace, mode_idx: int) -> OperatorMatrix:
    space.check_mode(mode_idx)
    n = space.modes[mode_idx].truncation
    return embed(space, mode_idx, np.diag(np.arange(n, dtype=float)).astype(complex))


def quadrature_operator(space: HilbertSpace, mode_idx: int, which: str = "X") -> OperatorMatrix:
    """Quadratures with the half convention: X = (a^dag + a)/2, P = i(a^dag - a)/2."""
    space.check_mode(mode_idx)
    a = _single_mode_lowering(space.modes[mode_idx].truncation)
    ad = a.conj().T
    if which == "X":
        local = 0.5 * (ad + a)
    elif which == "P":
        local = 0.5j * (ad - a)
    else:
        raise FockSpaceError(f"which must be 'X' or 'P', got {which!r}")
    return embed(space, mode_idx, local)


def optical_parity(space: HilbertSpace) -> np.ndarray:
    """Diagonal of (-1)^(total photon number) in the Fock basis."""
    occ = space.occupation_table
    optical_idx = [i for i, m in enumerate(space.modes) if m.kind == OPTICAL]
    total = occ[:, optical_idx].sum(axis=1) if optical_idx else np.zeros(space.dim, int)
    return np.where(total % 2 == 0, 1, -1)
