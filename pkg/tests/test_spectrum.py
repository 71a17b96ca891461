import numpy as np
import pytest

from casimir_ho.fock import optical_parity
from casimir_ho.hamiltonian import HamiltonianModel
from casimir_ho.spectrum import (
    NonHermitianError,
    SpectrumError,
    avoided_crossing_gap,
    diagonalize,
    diagonalize_model,
    resonance_gap,
    sweep_spectrum,
)

TRUNC = (5, 3, 6)


def test_identity_eigenvalues():
    eig = diagonalize(np.eye(4))
    np.testing.assert_allclose(eig.energies, 1.0)


def test_free_spectrum():
    m = HamiltonianModel(epsilon=0.0, Omega=0.8)
    eig, H = diagonalize_model(m, (4, 3), 4)
    occ = H.space.occupation_table
    np.testing.assert_allclose(eig.energies, np.sort(occ @ [0.5, 1.0, 0.8]), atol=1e-12)


def test_residual_and_orthonormality():
    m = HamiltonianModel(epsilon=0.07, Omega=0.8)
    eig, H = diagonalize_model(m, TRUNC[:2], TRUNC[2])
    norm = np.linalg.norm(H.data, 2)
    assert eig.residual(H.data) < 1e-9 * norm
    V = eig.states
    assert np.max(np.abs(V.conj().T @ V - np.eye(eig.dim))) < 1e-10
    assert np.all(np.diff(eig.energies) >= 0)


def test_parity_labels_are_conserved():
    m = HamiltonianModel(epsilon=0.07, Omega=1.0)
    eig, H = diagonalize_model(m, TRUNC[:2], TRUNC[2])
    par = optical_parity(H.space)
    for a in range(eig.dim):
        v = eig.states[:, a]
        assert np.sum(np.abs(v[par != eig.labels[a]]) ** 2) < 1e-20


def test_blockwise_matches_full_spectrum():
    m = HamiltonianModel(epsilon=0.07, Omega=0.9)
    eig, H = diagonalize_model(m, TRUNC[:2], TRUNC[2])
    np.testing.assert_allclose(eig.energies, np.linalg.eigvalsh(H.data), atol=1e-12)


def test_non_hermitian_rejected():
    with pytest.raises(NonHermitianError):
        diagonalize(np.array([[0, 1], [0, 0]], dtype=float))


def test_sweep_ground_subtracted_and_ordered():
    m = HamiltonianModel(epsilon=0.07)
    grid = np.linspace(0.3, 1.2, 25)
    sw = sweep_spectrum(m, grid, 6, truncations=TRUNC)
    assert sw.levels.shape == (25, 6)
    assert np.all(sw.levels[:, 0] == 0)
    assert np.all(np.diff(sw.levels, axis=1) >= -1e-12)


def test_sweep_levels_are_continuous():
    m = HamiltonianModel(epsilon=0.07)
    grid = np.linspace(0.4, 1.2, 161)
    sw = sweep_spectrum(m, grid, 5, truncations=TRUNC)
    # level slopes are bounded by the phonon number of the states involved
    slope = np.abs(np.diff(sw.levels, axis=0)) / np.diff(grid)[:, None]
    assert slope.max() < TRUNC[2]


def test_sweep_parallel_matches_serial():
    m = HamiltonianModel(epsilon=0.07)
    grid = np.linspace(0.4, 1.2, 9)
    a = sweep_spectrum(m, grid, 4, truncations=TRUNC, workers=1)
    b = sweep_spectrum(m, grid, 4, truncations=TRUNC, workers=3)
    np.testing.assert_array_equal(a.levels, b.levels)


@pytest.mark.parametrize("grid", [[], [0.5, 0.4], [0.0, 0.5]])
def test_sweep_rejects_bad_grid(grid):
    with pytest.raises(SpectrumError):
        sweep_spectrum(HamiltonianModel(), grid, 3, truncations=TRUNC)


def test_gap_window_empty():
    sw = sweep_spectrum(HamiltonianModel(), [0.5, 0.6], 3, truncations=TRUNC)
    with pytest.raises(SpectrumError):
        avoided_crossing_gap(sw, (1, 2), (2.0, 3.0))


def test_uncoupled_crossing_has_zero_gap():
    m = HamiltonianModel(epsilon=0.0)
    grid = np.linspace(0.9, 1.1, 21)  # contains Omega = 2 omega1 exactly
    sw = sweep_spectrum(m, grid, 3, truncations=TRUNC, sector=1)
    g = avoided_crossing_gap(sw, (1, 2), (0.9, 1.1))
    assert g.gap < 1e-10
    assert g.omega_at_min == pytest.approx(1.0, abs=1e-10)
    for name in ("first", "second", "third"):
        assert 0 <= resonance_gap(m, name, truncations=TRUNC).gap < 1e-8


def test_parabolic_refinement_on_hyperbola():
    # synthetic avoided crossing: gap(w) = sqrt(g^2 + (w - w0)^2)
    from casimir_ho.spectrum import SpectrumSweep
    grid = np.linspace(0.9, 1.1, 41)
    gap = np.sqrt(0.05 ** 2 + (grid - 1.0013) ** 2)
    levels = np.stack([np.zeros_like(grid), np.ones_like(grid), 1 + gap], axis=1)
    g = avoided_crossing_gap(SpectrumSweep(grid, levels, frozenset({1})), (1, 2), (0.9, 1.1))
    assert g.gap == pytest.approx(0.05, rel=1e-3)
    assert g.omega_at_min == pytest.approx(1.0013, abs=2e-4)


def test_first_order_gap_two_level_estimate():
    m = HamiltonianModel(epsilon=0.07, include_orders={1})
    g = resonance_gap(m, "first", truncations=TRUNC)
    assert g.gap == pytest.approx(np.sqrt(2) * 0.07 * 0.5, rel=0.15)


def test_full_hamiltonian_shifted_from_first_order_curves():
    grid = np.array([0.7])
    full = sweep_spectrum(HamiltonianModel(epsilon=0.07), grid, 4, truncations=TRUNC)
    first = sweep_spectrum(HamiltonianModel(epsilon=0.07, include_orders={1}), grid, 4, truncations=TRUNC)
    assert np.max(np.abs(full.levels - first.levels)) > 1e-4


def test_csv_rows():
    sw = sweep_spectrum(HamiltonianModel(), [0.5, 0.6], 3, truncations=TRUNC)
    header, rows = sw.to_csv_rows()
    assert header == ["omega", "level0", "level1", "level2"]
    assert len(rows) == 2 and rows[0][0] == 0.5
