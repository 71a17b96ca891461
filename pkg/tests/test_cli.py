import csv
import json

import numpy as np
import pytest

from casimir_ho.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    ConfigError,
    cache_eig,
    cached_diagonalize,
    load_eig,
    main,
    parse_config,
)
from casimir_ho.hamiltonian import HamiltonianModel
from casimir_ho.opensys import thermal_occupation


@pytest.fixture(autouse=True)
def private_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("CASIMIR_HO_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path / "cache"


def write(tmp_path, cfg, name="run.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg, indent=2))
    return p


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- configuration

def test_unknown_field_reports_line():
    text = '{\n  "command": "spectrum",\n  "model": {"epsilon": 0.07},\n  "colour": 3\n}'
    with pytest.raises(ConfigError) as e:
        parse_config(text)
    assert e.value.line == 4 and "colour" in str(e.value)


@pytest.mark.parametrize("text", [
    '{"command": "spectrum",',
    '{"command": "spectra"}',
    '{"command": "spectrum", "model": {"epsilon": 0.5}}',
    '{"command": "spectrum", "omega_grid": [0.5, 0.4]}',
    '{"command": "spectrum", "truncations": [8, 1]}',
    '{"command": "dynamics", "integration": {"positivity_tol": 0}}',
    '{"command": "dynamics", "baths": {"kappa": -1}}',
])
def test_bad_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_defaults_and_overrides():
    cfg = parse_config('{"command": "dynamics"}')
    assert cfg.truncations == (6, 4, 10) and cfg.t_max == 30.0 and cfg.positivity_tol == 1e-5
    assert cfg.order_sets == (frozenset({1}), frozenset({1, 2, 3}))
    cfg = parse_config(json.dumps({"command": "dynamics", "model": {"include_orders": [1]},
                                   "integration": {"positivity_tol": 1e-3},
                                   "omega_grid": {"start": 0.5, "stop": 1.5, "points": 11}}))
    assert cfg.positivity_tol == 1e-3 and cfg.order_sets == (frozenset({1}),)
    assert len(cfg.omega_grid) == 11
    assert parse_config('{"command": "spectrum"}').truncations == (8, 5, 12)


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["spectrum", "--config", str(write(tmp_path, "{oops"))]) == EXIT_CONFIG
    assert main(["coupling", "--config", str(write(tmp_path, {"command": "spectrum"}))]) == EXIT_CONFIG
    assert main(["coupling", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------- cache

def test_cache_round_trip_is_exact(private_cache):
    m = HamiltonianModel(epsilon=0.07, Omega=0.9)
    eig = cached_diagonalize(m, (3, 2, 4))
    again = load_eig(eig.fingerprint)
    np.testing.assert_array_equal(again.energies, eig.energies)
    np.testing.assert_array_equal(again.states, eig.states)
    np.testing.assert_array_equal(again.labels, eig.labels)
    # any parameter change is a different entry
    other = m.with_(epsilon=0.07 + 1e-9).fingerprint([3, 2, 4])
    assert load_eig(other) is None


def test_corrupt_cache_is_recomputed(private_cache, tmp_path):
    m = HamiltonianModel(epsilon=0.03)
    eig = cached_diagonalize(m, (3, 2, 4))
    path = private_cache / f"{eig.fingerprint}.npz"
    path.write_bytes(b"not a zip archive")
    with pytest.warns(UserWarning, match="unreadable"):
        eig2 = cached_diagonalize(m, (3, 2, 4))
    np.testing.assert_allclose(eig2.energies, eig.energies)
    assert load_eig(eig.fingerprint) is not None


def test_stale_cache_entry_fails_residual_check(private_cache):
    m = HamiltonianModel(epsilon=0.03)
    eig = cached_diagonalize(m, (3, 2, 4))
    from casimir_ho.spectrum import EigenDecomposition
    bad = EigenDecomposition(eig.energies + 0.1, eig.states, eig.fingerprint, eig.labels)
    cache_eig(bad)
    with pytest.warns(UserWarning, match="residual"):
        fixed = cached_diagonalize(m, (3, 2, 4))
    np.testing.assert_allclose(fixed.energies, eig.energies)


# ---------------------------------------------------------------- commands

def test_coupling_command(tmp_path, capsys):
    cfg = write(tmp_path, {"command": "coupling"})
    assert main(["coupling", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    info = json.loads((tmp_path / "o" / "coupling.json").read_text())
    assert round(info["virtual_fraction"], 4) == 0.7143
    assert "0.7143" in capsys.readouterr().out


def test_perturbation_command(tmp_path):
    cfg = write(tmp_path, {"command": "perturbation", "model": {"Omega": 0.8, "epsilon": 0.02},
                           "truncations": [4, 3, 5], "levels": [0, 1]})
    assert main(["perturbation", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "perturbation.csv")
    assert rows[0] == ["n", "E0", "E1", "E2", "E3", "C"] and len(rows) == 3
    assert (tmp_path / "o" / "perturbation.meta.json").exists()


def test_one_d_perturbation_reports_both_closed_forms(tmp_path, capsys):
    cfg = write(tmp_path, {"command": "perturbation", "truncations": [3, 2],
                           "model": {"geometry": "1d", "n_max": 1, "L": 3.14159, "Omega": 0.7}})
    assert main(["perturbation", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "closed-form E0^(2)" in out and "series-consistent E0^(2)" in out


def test_spectrum_command_uncoupled(tmp_path):
    cfg = {"command": "spectrum", "model": {"epsilon": 0.0}, "truncations": [4, 3, 6],
           "omega_grid": {"start": 0.5, "stop": 1.2, "points": 15}, "n_levels": 4,
           "order_sets": [[1]]}
    p = write(tmp_path, cfg)
    assert main(["spectrum", "--config", str(p), "--out", str(tmp_path / "a")]) == EXIT_OK
    rows = read_csv(tmp_path / "a" / "spectrum_orders1.csv")
    assert rows[0] == ["omega", "level0", "level1", "level2", "level3"]
    assert all(float(r[1]) == 0 for r in rows[1:])
    gaps = read_csv(tmp_path / "a" / "gaps.csv")[1:]
    assert len(gaps) == 3 and all(float(g[2]) < 1e-8 for g in gaps)
    meta = json.loads((tmp_path / "a" / "spectrum_orders1.meta.json").read_text())
    assert meta["config"] == cfg and "build" in meta
    # same configuration, same bytes
    assert main(["spectrum", "--config", str(p), "--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("spectrum_orders1.csv", "gaps.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dynamics_uncoupled_cavity_stays_thermal(tmp_path):
    cfg = {"command": "dynamics", "model": {"epsilon": 0.0}, "truncations": [3, 2, 4],
           "order_sets": [[1]], "integration": {"t_max": 0.5, "records": 10}}
    p = write(tmp_path, cfg)
    assert main(["dynamics", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "trajectory_orders1.csv")
    assert rows[0][:4] == ["t_kappa0", "n_wall", "n_mode1", "n_mode2"]
    n1 = np.array([float(r[2]) for r in rows[1:]])
    assert np.all(n1 <= thermal_occupation(0.5, 1e-6) + 1e-6)
    t = np.array([float(r[0]) for r in rows[1:]])
    assert t[0] == 0 and t[-1] == pytest.approx(0.5)
    steady = read_csv(tmp_path / "o" / "steady_orders1.csv")[1]
    assert steady[0] == "inf"
    meta = json.loads((tmp_path / "o" / "trajectory_orders1.meta.json").read_text())
    assert meta["initial_state"].startswith("bare vacuum") and meta["time_unit"] == "t*kappa0"
    assert meta["worst_min_eig"] > -1e-5


def test_dynamics_abort_exits_3(tmp_path, capsys):
    cfg = {"command": "dynamics", "model": {"epsilon": 0.07}, "truncations": [3, 2, 4],
           "order_sets": [[1, 2, 3]], "integration": {"t_max": 0.3, "positivity_tol": 1e-30}}
    p = write(tmp_path, cfg)
    assert main(["dynamics", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    assert "last good time" in capsys.readouterr().err
