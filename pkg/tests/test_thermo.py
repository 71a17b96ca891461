import numpy as np
import pytest

from casimir_ho.fock import build_space, mechanical, number_operator
from casimir_ho.hamiltonian import HamiltonianModel
from casimir_ho.opensys import (
    BathSpec,
    FilterSpec,
    bath_tables,
    build_liouvillian,
    evolve,
    open_system,
    steady_state,
    thermal_occupation,
)
from casimir_ho.spectrum import diagonalize
from casimir_ho.thermo import (
    TRAJECTORY_COLUMNS,
    PopulationOperators,
    TrajectoryObserver,
    energy,
    entropy_production_rate,
    entropy_rate,
    gibbs_state,
    heat_flows,
    mode_populations,
    spohn_terms,
    von_neumann_entropy,
)

SMALL = ((3, 2), 4)


def test_entropy_examples():
    pure = np.zeros((3, 3))
    pure[1, 1] = 1
    assert von_neumann_entropy(pure) == pytest.approx(0.0, abs=1e-10)
    assert von_neumann_entropy(np.eye(2) / 2) == pytest.approx(np.log(2))
    assert von_neumann_entropy(np.diag([0.9, 0.1])) == pytest.approx(0.3251, abs=1e-4)
    # basis independent
    U = np.linalg.qr(np.random.default_rng(0).normal(size=(2, 2)))[0]
    assert von_neumann_entropy(U @ np.diag([0.9, 0.1]) @ U.T) == pytest.approx(0.3251, abs=1e-4)


def test_lone_oscillator_thermal_state_has_no_heat_flow():
    space = build_space([mechanical(1.0, 12)])
    eig = diagonalize(number_operator(space, 0).data, fingerprint="lone")
    bath = BathSpec("wall", 0.3, 0.018, (0,))
    L = build_liouvillian(eig, {"wall": (bath, bath_tables(eig, space, bath))}, FilterSpec(0.09))
    rho = gibbs_state(eig, 0.3)
    assert abs(heat_flows(rho, L)["wall"]) < 1e-10
    assert abs(entropy_production_rate(rho, L, {"wall": 0.3})) < 1e-10


@pytest.fixture(scope="module")
def resonant():
    m = HamiltonianModel(epsilon=0.07, Omega=1.0)
    sysm = open_system(m, *SMALL)
    ss = steady_state(sysm.L)
    return sysm, ss.rho


def test_zero_dissipators_give_zero_entropy_production(resonant):
    sysm, rho = resonant
    L = open_system(HamiltonianModel(epsilon=0.07, Omega=1.0), *SMALL, eig=sysm.eig).L
    for D in L.parts.values():
        D.G_left = np.zeros_like(D.G_left)
        D.G_right = np.zeros_like(D.G_right)
        D.S = D.S * 0
    assert entropy_production_rate(rho, L, sysm.temperatures) == 0.0


def test_steady_state_heat_flow_identities(resonant):
    sysm, rho = resonant
    J = heat_flows(rho, sysm.L)
    assert abs(J["cavity"] + J["wall"]) < 1e-6
    assert J["wall"] > 0 and J["cavity"] < 0
    T = sysm.temperatures
    sig = entropy_production_rate(rho, sysm.L, T)
    assert sig == pytest.approx(J["wall"] * (1 / T["cavity"] - 1 / T["wall"]), rel=1e-6, abs=1e-6)
    assert all(v >= -1e-9 for v in spohn_terms(rho, sysm.L, T).values())


def test_wall_population_below_bose_einstein_at_resonance(resonant):
    sysm, rho = resonant
    pops = mode_populations(rho, sysm.eig, sysm.space, "dressed")
    assert 0 < pops["n_wall"] < thermal_occupation(1.0, 0.3)
    assert pops["n_mode1"] > 0


def test_uncoupled_conventions_agree():
    m = HamiltonianModel(epsilon=0.0, Omega=1.0)
    sysm = open_system(m, (3, 2), 6)
    rho = steady_state(sysm.L).rho
    ops = PopulationOperators(sysm.eig, sysm.space)
    bare, dressed = ops(rho, "bare"), ops(rho, "dressed")
    for k in bare:
        assert bare[k] == pytest.approx(dressed[k], abs=1e-10)
    assert bare["n_wall"] == pytest.approx(thermal_occupation(1.0, 0.3), rel=0.01)
    with pytest.raises(ValueError):
        ops(rho, "classical")


@pytest.fixture(scope="module")
def trajectory():
    m = HamiltonianModel(epsilon=0.07, Omega=1.0)
    sysm = open_system(m, *SMALL)
    obs = TrajectoryObserver(sysm.L, sysm.space, sysm.temperatures)
    tr = evolve(sysm.vacuum(), sysm.L, (0, 400), dt=0.5, record_every=1, observer=obs,
                keep_states=True, positivity_tol=1.0)
    return sysm, tr


def five_point(y, h):
    """Fourth-order central differences on the interior points."""
    return (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * h)


def test_first_law_along_trajectory(trajectory):
    sysm, tr = trajectory
    h = tr.times[1] - tr.times[0]
    U = np.array([energy(r, sysm.eig) for r in tr.states])
    J = np.array([r.J_c + r.J_w for r in tr.observations])[2:-2]
    assert np.max(np.abs(five_point(U, h) - J)) < 1e-5 * np.max(np.abs(J))


def test_entropy_rate_matches_finite_differences(trajectory):
    sysm, tr = trajectory
    t = np.asarray(tr.times)[2:-2]
    S = np.array([r.S for r in tr.observations])
    dS = five_point(S, tr.times[1] - tr.times[0])
    rate = np.array([entropy_rate(r, sysm.L) for r in tr.states])[2:-2]
    # skip the first stretch, where near-zero eigenvalues of the pure initial state cross the floor
    late = t > 40
    assert np.max(np.abs(dS[late] - rate[late])) < 1e-4 * np.max(np.abs(rate[late]))


def test_second_law_and_record_layout(trajectory):
    sysm, tr = trajectory
    recs = tr.observations
    assert min(r.Sigma_dot for r in recs) >= -1e-9
    assert all(r.S >= 0 for r in recs)
    assert len(recs[0].row()) == len(TRAJECTORY_COLUMNS)
    assert recs[0].t == 0.0 and recs[1].t == pytest.approx(tr.times[1] * 0.003)


def test_coupling_response_at_resonance():
    out = {}
    for eps in (0.03, 0.07):
        sysm = open_system(HamiltonianModel(epsilon=eps, Omega=1.0), *SMALL)
        rho = steady_state(sysm.L).rho
        pops = mode_populations(rho, sysm.eig, sysm.space)
        out[eps] = pops["n_mode1"], entropy_production_rate(rho, sysm.L, sysm.temperatures)
    assert out[0.07][0] > out[0.03][0]
    assert out[0.07][1] > out[0.03][1]
