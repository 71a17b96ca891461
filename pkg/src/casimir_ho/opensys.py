"""Dressed-basis master equation with a frequency-mismatch filter.

Everything is expressed in the eigenbasis of the full Hamiltonian. For each
bath channel the bare quadrature o + o^dag is projected onto downward
transitions |a><b| (E_b > E_a), giving the dressed lowering operator
O = sum_{a<b} <a|(o+o^dag)|b> |a><b|. Pairs of transitions p = (k<-j),
q = (m<-l) contribute

    rate/2 * F(w_p - w_q) * c_p conj(c_q) * [
        n_q (P_lm rho P_kj - P_kj P_lm rho) + n_p (P_lm rho P_kj - rho P_kj P_lm)
      + (n_q + 1)(P_kj rho P_lm - rho P_lm P_kj) + (n_p + 1)(P_kj rho P_lm - P_lm P_kj rho) ]

with P_ab = |a><b|, F the box filter and n the Bose occupation. When all
transitions share one occupation (F = 1) this is the thermal dissipator
(n+1) D[O] + n D[O^dag]. Otherwise the pair weights (n_p + n_q)/2 are not
positive semidefinite and the generator is not of Lindblad form: transitions
slower than the damping rates (near-degenerate dressed doublets, n ~ T/w)
can drive negative eigenvalues of rho and, at some truncations, modes that
grow exponentially.

The one-sided products collapse to fixed matrices G_left, G_right so that
L rho = G_left rho + rho G_right + S(rho); only the sandwich part S needs the
explicit pair list, which is stored as a sparse superoperator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres

from .fock import OperatorMatrix
from .spectrum import EigenDecomposition

log = logging.getLogger(__name__)

CAVITY = "cavity"
WALL = "wall"


class OpenSystemError(ValueError):
    pass


class BasisMismatch(OpenSystemError):
    pass


class IntegrationAbort(RuntimeError):
    """Raised when a monitored trace or eigenvalue crosses its threshold.

    ``partial`` holds the Trajectory recorded before the abort.
    """

    def __init__(self, message, last_good_time=None, diagnostics=None, partial=None):
        super().__init__(message)
        self.last_good_time = last_good_time
        self.diagnostics = diagnostics or {}
        self.partial = partial


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class BathSpec:
    """A thermal bath attached to one or more bare modes.

    Each mode in ``modes`` gets its own independent channel with the same
    rate and temperature.
    """
    target: str
    temperature: float
    rate: float
    modes: tuple = ()

    def __post_init__(self):
        if self.target not in (CAVITY, WALL):
            raise OpenSystemError(f"bath target must be 'cavity' or 'wall', got {self.target!r}")
        if not self.rate > 0:
            raise OpenSystemError(f"bath rate must be positive, got {self.rate}")
        if not self.temperature >= 0:
            raise OpenSystemError(f"bath temperature must be >= 0, got {self.temperature}")
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))


@dataclass(frozen=True)
class FilterSpec:
    delta: float
    theta_at_zero: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise OpenSystemError(f"filter width must be positive, got {self.delta}")


def thermal_occupation(omega: float, T: float) -> float:
    if not omega > 0:
        raise OpenSystemError(f"thermal occupation needs omega > 0, got {omega}")
    if T < 0:
        raise OpenSystemError("temperature must be >= 0")
    if T == 0 or omega / T > 700:
        return 0.0
    return float(1.0 / np.expm1(omega / T))


def _occupations(omega: np.ndarray, T: float) -> np.ndarray:
    """Vectorized thermal_occupation; non-positive frequencies map to 0."""
    out = np.zeros(np.shape(omega))
    if T == 0:
        return out
    x = np.asarray(omega) / T
    ok = (x > 0) & (x <= 700)
    out[ok] = 1.0 / np.expm1(x[ok])
    return out


def filter_function(omega_mismatch, filt: FilterSpec):
    """1 where 0 <= |w| < delta, else 0."""
    w = np.abs(np.asarray(omega_mismatch))
    out = (w < filt.delta).astype(int)
    return int(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- transitions

@dataclass(frozen=True)
class DressedTransitionTable:
    """Downward transitions of one bare quadrature in the dressed basis.

    ``lower``/``upper`` are eigenstate indices with E_upper > E_lower,
    ``coeff`` = <lower|(o + o^dag)|upper>.
    """
    lower: np.ndarray
    upper: np.ndarray
    omega: np.ndarray
    coeff: np.ndarray
    dim: int
    fingerprint: str = ""
    mode: int | None = None

    def __len__(self):
        return len(self.omega)

    def operator(self) -> np.ndarray:
        """Dressed lowering operator in the eigenbasis."""
        O = np.zeros((self.dim, self.dim), dtype=complex)
        O[self.lower, self.upper] = self.coeff
        return O

    def operator_fock(self, eig: EigenDecomposition) -> np.ndarray:
        return eig.to_fock(self.operator())


def dressed_transition_table(eig: EigenDecomposition, bare_op, coeff_floor: float = 1e-8,
                             mode: int | None = None, degeneracy_tol: float = 1e-12
                             ) -> DressedTransitionTable:
    """Tabulate <a|(o+o^dag)|b> for all eigenpairs with E_b > E_a.

    ``bare_op`` is the bare lowering operator (OperatorMatrix or ndarray).
    Pairs closer in energy than ``degeneracy_tol`` carry no transition.
    """
    o = bare_op.data if isinstance(bare_op, OperatorMatrix) else np.asarray(bare_op)
    if o.shape != (eig.dim, eig.dim):
        raise BasisMismatch(f"operator shape {o.shape} does not match eigenbasis dim {eig.dim}")
    x = eig.to_eigenbasis(o + o.conj().T)
    E = eig.energies
    w = E[None, :] - E[:, None]  # w[a, b] = E_b - E_a
    keep = (w > degeneracy_tol) & (np.abs(x) >= coeff_floor)
    a, b = np.nonzero(keep)
    c = x[a, b]
    if np.max(np.abs(c.imag), initial=0.0) < 1e-14 * max(1.0, np.max(np.abs(c), initial=0.0)):
        c = c.real
    return DressedTransitionTable(a, b, w[a, b], c, eig.dim, eig.fingerprint, mode)


# ---------------------------------------------------------------- dissipator

def _pairs_within(omega_sorted: np.ndarray, delta: float):
    """All (p, q) index pairs with |w_p - w_q| < delta, for sorted w."""
    lo = np.searchsorted(omega_sorted, omega_sorted - delta, side="right")
    hi = np.searchsorted(omega_sorted, omega_sorted + delta, side="left")
    counts = hi - lo
    p = np.repeat(np.arange(len(omega_sorted)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    q = np.repeat(lo, counts) + offsets
    return p, q


class Dissipator:
    """L rho = G_left rho + rho G_right + S(rho) for one bath (all its channels).

    ``support`` (optional boolean d x d mask) lists the matrix elements that
    can be non-zero; pairs whose source element lies outside it are dropped.
    ``pair_floor`` drops sandwich pairs with |c_p c_q| * sqrt(w_j w_l) below
    the floor, where w are optional per-state weights (default 1). Pairs with
    a shared lower or upper state are always kept, so pruning never breaks
    trace preservation. Both are exact (zero and None) by default.
    """

    def __init__(self, eig: EigenDecomposition, tables: Sequence[DressedTransitionTable],
                 bath: BathSpec, filt: FilterSpec | None, support: np.ndarray | None = None,
                 pair_floor: float = 0.0, state_weights: np.ndarray | None = None,
                 chunk: int = 4_000_000):
        for t in tables:
            if t.fingerprint != eig.fingerprint or t.dim != eig.dim:
                raise BasisMismatch("transition table built from a different eigenbasis")
        self.eig = eig
        self.bath = bath
        self.filter = filt
        d = eig.dim
        self.dim = d
        E = eig.energies
        delta = np.inf if filt is None else filt.delta
        half = bath.rate / 2
        real = all(np.isrealobj(t.coeff) for t in tables)
        dtype = float if real else complex

        Fab = (np.abs(E[:, None] - E[None, :]) < delta).astype(float)
        W = E[None, :] - E[:, None]
        N = _occupations(W, bath.temperature)
        GL = np.zeros((d, d), dtype=dtype)
        GR = np.zeros((d, d), dtype=dtype)
        blocks = []
        for t in tables:
            C = t.operator()
            C = C.real if real else C
            Cc = C.conj()
            # common upper state
            GL -= half * (C @ (Cc * N).T) * Fab
            GR -= half * ((C * N) @ Cc.T) * Fab
            # common lower state
            GL -= half * (Cc.T @ (C * (N + 1))) * Fab
            GR -= half * ((Cc * (N + 1)).T @ C) * Fab
            blocks.append(self._sandwich(t, delta, support, pair_floor, state_weights, chunk, dtype))
        self.G_left = GL
        self.G_right = GR
        S = blocks[0]
        for b in blocks[1:]:
            S = S + b
        self.S = S.tocsr() if S is not None else sp.csr_matrix((d * d, d * d), dtype=dtype)
        self.S.sum_duplicates()
        self.real = real

    def _sandwich(self, t: DressedTransitionTable, delta, support, pair_floor, weights, chunk, dtype):
        d = self.dim
        T = self.bath.temperature
        half = self.bath.rate / 2
        order = np.argsort(t.omega, kind="stable")
        w = t.omega[order]
        lo_s = t.lower[order]
        up_s = t.upper[order]
        c = t.coeff[order]
        n = _occupations(w, T)
        has_abs = T > 0 and np.any(n > 0)
        absval = np.abs(c)
        sw = None if weights is None else np.sqrt(np.asarray(weights, dtype=float))

        if np.isinf(delta):
            P = np.repeat(np.arange(len(w)), len(w))
            Q = np.tile(np.arange(len(w)), len(w))
            spans = [(P, Q)]
        else:
            P, Q = _pairs_within(w, delta)
            spans = [(P[i:i + chunk], Q[i:i + chunk]) for i in range(0, len(P), chunk)]
        mats = []
        for p, q in spans:
            k, j = lo_s[p], up_s[p]
            m, l = lo_s[q], up_s[q]
            if pair_floor > 0:
                mag = absval[p] * absval[q]
                if sw is not None:
                    mag = mag * sw[j] * sw[l]
                # pairs sharing a lower or an upper state carry the trace; keep them
                sel = (mag >= pair_floor) | (k == m) | (j == l)
                p, q, k, j, m, l = p[sel], q[sel], k[sel], j[sel], m[sel], l[sel]
            wgt = c[p] * np.conj(c[q])
            # emission: rho_jl -> R_km
            coef = half * wgt * (n[p] + n[q] + 2)
            rows, cols, vals = [k * d + m], [j * d + l], [coef]
            src_ok = None if support is None else support[j, l]
            if src_ok is not None:
                rows[0], cols[0], vals[0] = rows[0][src_ok], cols[0][src_ok], vals[0][src_ok]
            if has_abs:
                # absorption: rho_mk -> R_lj
                coef = half * wgt * (n[p] + n[q])
                sel = coef != 0
                if support is not None:
                    sel &= support[m, k]
                rows.append((l * d + j)[sel])
                cols.append((m * d + k)[sel])
                vals.append(coef[sel])
            r = np.concatenate(rows)
            cc = np.concatenate(cols)
            v = np.concatenate(vals).astype(dtype)
            mats.append(sp.csr_matrix((v, (r, cc)), shape=(d * d, d * d)))
        out = mats[0]
        for mm in mats[1:]:
            out = out + mm
        return out

    @property
    def nnz(self) -> int:
        return self.S.nnz

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """L rho with rho in the eigenbasis."""
        d = self.dim
        out = self.G_left @ rho + rho @ self.G_right
        out += _spmv(self.S, rho, self.real).reshape(d, d)
        return out

    def __call__(self, rho):
        return self.apply(rho)


def _spmv(S, rho: np.ndarray, real: bool) -> np.ndarray:
    v = np.ascontiguousarray(rho).reshape(-1)
    if real and np.iscomplexobj(v):
        out = S @ v.view(float).reshape(-1, 2)
        return out.view(complex).reshape(-1)
    return S @ v


class Liouvillian:
    """Sum of per-bath dissipators sharing one eigenbasis."""

    def __init__(self, eig: EigenDecomposition, dissipators: dict[str, Dissipator]):
        for D in dissipators.values():
            if D.eig.fingerprint != eig.fingerprint or D.dim != eig.dim:
                raise BasisMismatch("dissipators built on different eigenbases")
        self.eig = eig
        self.parts = dict(dissipators)
        d = eig.dim
        self.G_left = sum((D.G_left for D in self.parts.values()), np.zeros((d, d)))
        self.G_right = sum((D.G_right for D in self.parts.values()), np.zeros((d, d)))
        S = None
        for D in self.parts.values():
            S = D.S if S is None else S + D.S
        self.S = S.tocsr() if S is not None else sp.csr_matrix((d * d, d * d))
        self.real = all(D.real for D in self.parts.values()) and np.isrealobj(self.G_left)
        self.blocks = _block_partition(eig)

    @property
    def nnz(self) -> int:
        return self.S.nnz

    def dissipator(self, rho: np.ndarray) -> np.ndarray:
        d = self.eig.dim
        out = _blockwise(self.G_left, rho, self.blocks, left=True)
        out += _blockwise(self.G_right, rho, self.blocks, left=False)
        out += _spmv(self.S, rho, self.real).reshape(d, d)
        return out

    def apply(self, rho: np.ndarray) -> np.ndarray:
        """Full right-hand side -i[H, rho] + L rho in the eigenbasis."""
        E = self.eig.energies
        return -1j * (E[:, None] - E[None, :]) * rho + self.dissipator(rho)

    def part(self, name: str, rho: np.ndarray) -> np.ndarray:
        return self.parts[name].apply(rho)

    def __call__(self, rho):
        return self.apply(rho)


def _block_partition(eig: EigenDecomposition):
    if eig.labels is None:
        return None
    return [np.where(eig.labels == s)[0] for s in np.unique(eig.labels)]


def _blockwise(G, rho, blocks, left: bool):
    """G @ rho (or rho @ G) using the block-diagonal structure when present.

    Only valid when rho is block diagonal, which the parity-restricted
    dynamics guarantees; off-block entries of the result are left at zero.
    """
    if blocks is None:
        return G @ rho if left else rho @ G
    out = np.zeros_like(rho, dtype=complex)
    for idx in blocks:
        ix = np.ix_(idx, idx)
        out[ix] = G[ix] @ rho[ix] if left else rho[ix] @ G[ix]
    return out


def parity_support(eig: EigenDecomposition) -> np.ndarray | None:
    """Mask of elements allowed in a density matrix that starts in one symmetry block pattern."""
    if eig.labels is None:
        return None
    return eig.labels[:, None] == eig.labels[None, :]


def build_liouvillian(eig: EigenDecomposition, tables: dict[str, tuple[BathSpec, Sequence[DressedTransitionTable]]],
                      filt: FilterSpec | None, restrict_to_blocks: bool = True,
                      pair_floor: float = 0.0, state_weights=None) -> Liouvillian:
    """Assemble the total dissipator from ``{name: (bath, tables)}``.

    With ``restrict_to_blocks`` and labelled eigenstates the density matrix is
    assumed block diagonal in the labels (true for states that start there,
    since both H and every channel respect the symmetry).
    """
    support = parity_support(eig) if restrict_to_blocks else None
    parts = {}
    for name, (bath, tabs) in tables.items():
        parts[name] = Dissipator(eig, tabs, bath, filt, support=support,
                                 pair_floor=pair_floor, state_weights=state_weights)
    L = Liouvillian(eig, parts)
    if not restrict_to_blocks:
        L.blocks = None
    return L


def bath_tables(eig: EigenDecomposition, space, bath: BathSpec, coeff_floor: float = 1e-8):
    from .fock import ladder_operator
    return [dressed_transition_table(eig, ladder_operator(space, m, "lower"), coeff_floor, mode=m)
            for m in bath.modes]


# ---------------------------------------------------------------- time evolution

@dataclass
class Trajectory:
    times: np.ndarray
    traces: np.ndarray
    min_eigs: np.ndarray
    observations: list = field(default_factory=list)
    states: list = field(default_factory=list)
    final: np.ndarray | None = None
    # extremes over every monitored step, not just the recorded ones
    worst_min_eig: float = np.inf
    worst_min_eig_time: float = np.nan
    worst_trace_dev: float = 0.0


def check_density_matrix(rho: np.ndarray, dim: int | None = None):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise OpenSystemError("density matrix must be square")
    if dim is not None and rho.shape[0] != dim:
        raise BasisMismatch(f"density matrix dim {rho.shape[0]} != {dim}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise OpenSystemError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > 1e-8:
        raise OpenSystemError(f"density matrix trace {np.trace(rho).real} != 1")


def rk4_step_rate(L: Liouvillian) -> float:
    """Largest damping rate scale: max |diagonal| of the dissipator."""
    g = np.abs(np.diag(L.G_left)).max() + np.abs(np.diag(L.G_right)).max()
    diag = np.abs(L.S.diagonal()).max() if L.S.nnz else 0.0
    return float(g + diag)


def default_dt(L: Liouvillian, frame: str = "interaction") -> float:
    """Step size for RK4.

    Lab frame: 0.02 / spectral span. Interaction frame: the fastest phase left
    is the filter width, so the step is limited by it and by the damping scale.
    """
    E = L.eig.energies
    if frame == "lab":
        return 0.02 / (E[-1] - E[0])
    delta = max((D.filter.delta for D in L.parts.values() if D.filter is not None), default=None)
    rate = rk4_step_rate(L)
    limits = [1.0 / rate if rate > 0 else np.inf]
    if delta is not None:
        limits.append(0.25 / delta)
    else:
        limits.append(0.02 / (E[-1] - E[0]))
    return float(min(limits))


class _Frame:
    """Phase bookkeeping for the interaction picture: rho = Phi(t) * rho_tilde."""

    def __init__(self, E, frame):
        self.E = E
        self.lab = frame == "lab"
        if frame not in ("lab", "interaction"):
            raise OpenSystemError(f"unknown frame {frame!r}")

    def phase(self, t):
        v = np.exp(-1j * self.E * t)
        return v[:, None] * v.conj()[None, :]

    def to_lab(self, rho_t, t):
        return rho_t if self.lab else self.phase(t) * rho_t

    def from_lab(self, rho, t):
        return rho if self.lab else self.phase(t).conj() * rho


def evolve(rho0, L: Liouvillian, t_span, dt: float | None = None, record_every: int = 1,
           frame: str = "interaction", observer: Callable | None = None,
           keep_states: bool = False, basis: str = "fock",
           trace_tol: float = 1e-6, positivity_tol: float = 1e-5,
           monitor_every: int | None = None) -> Trajectory:
    """Fixed-step RK4 integration of rho' = -i[H, rho] + L rho.

    ``rho0`` is given in the Fock basis (``basis="fock"``) or the eigenbasis.
    In the interaction frame the unitary part is carried exactly by phases
    exp(-i w_ab t), so the step only has to resolve the dissipator.
    ``observer(t, rho_eig)`` is called at every record point with the
    lab-frame eigenbasis density matrix; its return values are collected.
    Trace and smallest eigenvalue are checked every ``monitor_every`` steps
    (default: at record points only) and the abort thresholds apply there.
    """
    eig = L.eig
    rho0 = np.asarray(rho0, dtype=complex)
    check_density_matrix(rho0, eig.dim)
    rho = eig.to_eigenbasis(rho0) if basis == "fock" else rho0.copy()
    if L.blocks is not None:
        mask = parity_support(eig)
        if np.max(np.abs(rho[~mask]), initial=0.0) > 1e-12:
            raise OpenSystemError("initial state mixes symmetry blocks; build with restrict_to_blocks=False")
    t0, t1 = map(float, t_span)
    if dt is None:
        dt = default_dt(L, frame)
    n_steps = int(np.ceil((t1 - t0) / dt - 1e-9))
    dt = (t1 - t0) / n_steps if n_steps else dt
    fr = _Frame(eig.energies, frame)

    if frame == "lab":
        rhs = lambda t, x: L.apply(x)
    else:
        def rhs(t, x):
            ph = fr.phase(t)
            return ph.conj() * L.dissipator(ph * x)

    times, traces, mins, obs, states = [], [], [], [], []
    worst = {"min_eig": np.inf, "t": np.nan, "trace_dev": 0.0, "last_good": t0}

    def check(t, x):
        # the frame change is a diagonal unitary, so x has the spectrum of rho
        tr = np.trace(x).real
        h = 0.5 * (x + x.conj().T)
        if L.blocks is None:
            mn = float(np.linalg.eigvalsh(h)[0])
        else:
            mn = min(float(np.linalg.eigvalsh(h[np.ix_(b, b)])[0]) for b in L.blocks)
        if mn < worst["min_eig"]:
            worst["min_eig"], worst["t"] = mn, t
        worst["trace_dev"] = max(worst["trace_dev"], abs(tr - 1))
        if abs(tr - 1) > trace_tol or mn < -positivity_tol:
            raise IntegrationAbort(
                f"integration aborted at t={t:.6g}: trace={tr:.3e}, min eigenvalue={mn:.3e}",
                last_good_time=worst["last_good"], diagnostics={"t": t, "trace": tr, "min_eig": mn})
        worst["last_good"] = t
        return tr, mn

    def record(t, x):
        tr, mn = check(t, x)
        r = fr.to_lab(x, t)
        times.append(t)
        traces.append(tr)
        mins.append(mn)
        if observer is not None:
            obs.append(observer(t, r))
        if keep_states:
            states.append(r.copy())

    def trajectory(final):
        return Trajectory(np.array(times), np.array(traces), np.array(mins), obs, states,
                          final, worst["min_eig"], worst["t"], worst["trace_dev"])

    x = fr.from_lab(rho, t0)
    t = t0
    h = dt
    try:
        record(t, x)
        for step in range(1, n_steps + 1):
            k1 = rhs(t, x)
            k2 = rhs(t + h / 2, x + h / 2 * k1)
            k3 = rhs(t + h / 2, x + h / 2 * k2)
            k4 = rhs(t + h, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            t = t0 + step * h
            if step % record_every == 0 or step == n_steps:
                record(t, x)
            elif monitor_every and step % monitor_every == 0:
                check(t, x)
    except IntegrationAbort as e:
        e.partial = trajectory(None)
        raise
    return trajectory(fr.to_lab(x, t))


# ---------------------------------------------------------------- steady state

@dataclass
class SteadyState:
    rho: np.ndarray  # eigenbasis
    residual: float
    steps: int
    method: str
    refinements: int = 0


def _residual(L: Liouvillian, rho: np.ndarray) -> float:
    return float(np.linalg.norm(L.apply(rho)) / np.linalg.norm(rho))


def population_rates(L: Liouvillian) -> np.ndarray:
    """Rate matrix K with d p/dt = K p for diagonal density matrices (eigenbasis)."""
    d = L.eig.dim
    didx = np.arange(d) * (d + 1)
    K = L.S[didx][:, didx].toarray().real
    K[np.diag_indices(d)] += (np.diag(L.G_left) + np.diag(L.G_right)).real
    return K


def rate_equation_state(L: Liouvillian) -> np.ndarray:
    """Stationary populations of the rate equations, as a diagonal density matrix."""
    K = population_rates(L)
    d = K.shape[0]
    A = np.vstack([K, np.ones(d)])
    b = np.zeros(d + 1)
    b[-1] = 1.0
    p = np.linalg.lstsq(A, b, rcond=None)[0]
    p = np.clip(p, 0.0, None)
    return np.diag(p / p.sum()).astype(complex)


def steady_state(L: Liouvillian, rho0=None, tol: float = 1e-8, method: str = "solve",
                 dt: float | None = None, check_every: int = 50, max_steps: int = 200_000,
                 refine: bool = True, refine_tol: float = 1e-14, max_refinements: int = 4,
                 basis: str = "fock") -> SteadyState:
    """Stationary state of rho' = -i[H, rho] + L rho, returned in the eigenbasis.

    ``method="integrate"`` runs interaction-frame RK4 from ``rho0`` until
    ||rho'||_F < tol ||rho||_F. ``method="solve"`` starts from the
    rate-equation populations and goes straight to the linear solve. Either
    way the result is refined by GMRES (unless ``refine=False``) and must
    meet the same stopping rule.
    """
    eig = L.eig
    steps = 0
    if method == "integrate":
        if rho0 is None:
            raise OpenSystemError("integration needs an initial state")
        rho = np.asarray(rho0, dtype=complex)
        check_density_matrix(rho, eig.dim)
        rho = eig.to_eigenbasis(rho) if basis == "fock" else rho.copy()
        if dt is None:
            dt = default_dt(L)
        fr = _Frame(eig.energies, "interaction")

        def rhs(t, x):
            ph = fr.phase(t)
            return ph.conj() * L.dissipator(ph * x)

        x = rho.copy()
        t = 0.0
        res = _residual(L, rho)
        while res >= tol:
            if steps >= max_steps:
                raise NoConvergence(f"no steady state after {steps} steps (residual {res:.3e})")
            for _ in range(check_every):
                k1 = rhs(t, x)
                k2 = rhs(t + dt / 2, x + dt / 2 * k1)
                k3 = rhs(t + dt / 2, x + dt / 2 * k2)
                k4 = rhs(t + dt, x + dt * k3)
                x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += dt
                steps += 1
            rho = fr.to_lab(x, t)
            res = _residual(L, rho)
            log.debug("steady_state t=%.1f residual=%.3e", t, res)
    elif method == "solve":
        rho = rate_equation_state(L)
    else:
        raise OpenSystemError(f"unknown steady-state method {method!r}")

    n_ref = 0
    if refine or method == "solve":
        target = refine_tol if refine else tol
        solver = SteadyStateRefiner(L)
        res = _residual(L, rho)
        while res > target and n_ref < max_refinements:
            trial = solver.refine(rho, tol=target)
            n_ref += 1
            new = _residual(L, trial)
            if new < res:
                rho, improved = trial, new < 0.5 * res
                res = new
            else:
                improved = False
            if not improved:  # stagnating: further rounds buy little
                break
    res = _residual(L, rho)
    if res >= tol:
        raise NoConvergence(f"steady state residual {res:.3e} above tolerance {tol:.1e}")
    return SteadyState(rho, res, steps, method, n_ref)


class SteadyStateRefiner:
    """Newton-type correction of an approximate stationary state.

    Solves (L + P) delta = -L rho where P x = Tr(x) 1/d fixes the trace, by
    GMRES preconditioned with the exact population block and the diagonal of
    the coherence block.
    """

    def __init__(self, L: Liouvillian):
        self.L = L
        d = L.eig.dim
        self.d = d
        mask = parity_support(L.eig) if L.blocks is not None else np.ones((d, d), bool)
        self.idx = np.flatnonzero(mask.reshape(-1))
        self.diag_pos = np.flatnonzero(np.eye(d, dtype=bool).reshape(-1)[self.idx])
        K = population_rates(L) + 1.0 / d
        self.pop_inv = np.linalg.inv(K)
        E = L.eig.energies
        Sdiag = L.S.diagonal().reshape(d, d)
        coh = (-1j * (E[:, None] - E[None, :]) + np.diag(L.G_left)[:, None]
               + np.diag(L.G_right)[None, :] + Sdiag).reshape(-1)[self.idx]
        coh[np.abs(coh) == 0] = 1.0
        self.coh = coh

    def _expand(self, v):
        full = np.zeros(self.d * self.d, dtype=complex)
        full[self.idx] = v
        return full.reshape(self.d, self.d)

    def refine(self, rho: np.ndarray, tol: float = 1e-14, maxiter: int = 6) -> np.ndarray:
        L, d, idx, dp = self.L, self.d, self.idx, self.diag_pos

        def op(v):
            x = self._expand(v)
            out = L.apply(x).reshape(-1)[idx]
            out[dp] += np.trace(x) / d
            return out

        def prec(v):
            out = v / self.coh
            out[dp] = self.pop_inv @ v[dp]
            return out

        n = len(idx)
        A = LinearOperator((n, n), matvec=op, dtype=complex)
        M = LinearOperator((n, n), matvec=prec, dtype=complex)
        r = L.apply(rho).reshape(-1)[idx]
        scale = np.linalg.norm(r)
        if scale == 0:
            return rho
        rtol = min(0.1, tol * np.linalg.norm(rho) / scale)
        delta, info = gmres(A, -r, M=M, rtol=rtol, atol=0.0, restart=80, maxiter=maxiter)
        if info != 0:
            log.debug("steady-state refinement used its iteration budget (info=%s)", info)
        out = rho + self._expand(delta)
        out = 0.5 * (out + out.conj().T)
        return out / np.trace(out).real


def polish_steady_state(L: Liouvillian, rho: np.ndarray, tol: float = 1e-14) -> np.ndarray:
    return SteadyStateRefiner(L).refine(rho, tol=tol)


# ---------------------------------------------------------------- assembly

@dataclass(frozen=True)
class BathParameters:
    """Cavity and wall bath settings; the cavity bath couples to every optical mode."""
    kappa: float = 0.006
    gamma: float = 0.018
    T_c: float = 1e-6
    T_w: float = 0.3

    def baths(self, space) -> dict[str, BathSpec]:
        from .fock import MECHANICAL, OPTICAL
        opt = tuple(i for i, m in enumerate(space.modes) if m.kind == OPTICAL)
        mech = tuple(i for i, m in enumerate(space.modes) if m.kind == MECHANICAL)
        out = {}
        if opt:
            out["cavity"] = BathSpec(CAVITY, self.T_c, self.kappa, opt)
        if mech:
            out["wall"] = BathSpec(WALL, self.T_w, self.gamma, mech)
        return out

    def temperatures(self) -> dict[str, float]:
        return {"cavity": self.T_c, "wall": self.T_w}


@dataclass
class OpenSystem:
    eig: EigenDecomposition
    space: object
    L: Liouvillian
    temperatures: dict

    def vacuum(self) -> np.ndarray:
        """Bare joint vacuum |0,...,0><0,...,0| in the Fock basis."""
        rho = np.zeros((self.eig.dim, self.eig.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho


def open_system(model, optical_truncation, mechanical_truncation: int,
                params: BathParameters = BathParameters(), delta: float | None = 0.09,
                coeff_floor: float = 1e-8, eig: EigenDecomposition | None = None,
                pair_floor: float = 0.0) -> OpenSystem:
    """Diagonalize ``model`` (parity-resolved) and attach both baths."""
    from .hamiltonian import make_space
    from .spectrum import diagonalize_model
    space = make_space(model, optical_truncation, mechanical_truncation)
    if eig is None:
        eig, _ = diagonalize_model(model, optical_truncation, mechanical_truncation)
    baths = params.baths(space)
    tables = {name: (b, bath_tables(eig, space, b, coeff_floor)) for name, b in baths.items()}
    filt = None if delta is None else FilterSpec(delta)
    weights = None
    if pair_floor > 0:
        weights = np.exp(-(eig.energies - eig.energies[0]) / max(params.T_w, params.T_c))
    L = build_liouvillian(eig, tables, filt, pair_floor=pair_floor, state_weights=weights)
    temps = {name: b.temperature for name, b in baths.items()}
    return OpenSystem(eig, space, L, temps)
