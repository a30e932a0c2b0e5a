import json
import subprocess
import sys

import numpy as np
import pytest

from crowdqueue import io
from crowdqueue.cli import main


def run(args, tmp_path, name="out", config=None):
    out = tmp_path / name
    argv = list(args) + ["--out", str(out)]
    if config is not None:
        path = tmp_path / f"{name}.toml"
        path.write_text(config)
        argv += ["--config", str(path)]
    return main(argv), out


def load(path):
    return json.loads(path.read_text())


def test_simulate_deterministic(tmp_path):
    code, out = run(["simulate", "--runs", "1", "--seed", "7"], tmp_path)
    assert code == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    code, _ = run(["simulate", "--runs", "1", "--seed", "7"], tmp_path)
    assert code == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first
    code, other = run(["simulate", "--runs", "1", "--seed", "8"], tmp_path, "b")
    a = load(out / "summary.json")["scenarios"][0]["exit_time"]
    b = load(other / "summary.json")["scenarios"][0]["exit_time"]
    assert a != b


def test_simulate_threads_do_not_matter(tmp_path):
    _, a = run(["simulate", "--runs", "6", "--threads", "1"], tmp_path, "a")
    _, b = run(["simulate", "--runs", "6", "--threads", "3"], tmp_path, "b")
    sa, sb = load(a / "summary.json"), load(b / "summary.json")
    assert sa["scenarios"] == sb["scenarios"]


def test_simulate_outputs_and_provenance(tmp_path):
    cfg = "[corridor]\nwidth_m = [0.9, 3.3]\n[agents]\nn = 60\n"
    code, out = run(["simulate", "--runs", "40"], tmp_path, config=cfg)
    assert code == 0
    summary = load(out / "summary.json")
    digest = summary["manifest"]
    for k in range(2):
        dmap, meta = io.read_field_csv(out / f"density_map_{k}.csv")
        assert meta["manifest"] == digest
        assert meta["config"] == cfg.rstrip("\n")
        hist, _ = io.read_table_csv(out / f"exit_times_hist_{k}.csv")
        assert hist["count"].sum() == 40
    # the per-run maximum saturates at the packing density; the ensemble-mean peak does not
    peaks = [s["peak_mean_density"] for s in summary["scenarios"]]
    assert peaks[0] < peaks[1]
    assert all(s["mean_max_density"] <= 1 / 0.09 + 1e-9 for s in summary["scenarios"])


def test_simulate_no_agents(tmp_path):
    code, out = run(["simulate", "--runs", "2"], tmp_path, config="[agents]\nn = 0\n")
    assert code == 0
    assert load(out / "summary.json")["scenarios"][0]["exit_time"] == 0


def test_config_error_exit_code(tmp_path, capsys):
    code, _ = run(["simulate"], tmp_path, config="[ca]\nbeta = 'fast'\n")
    assert code == 2
    assert "ca.beta" in capsys.readouterr().err


def test_missing_config_is_io_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.toml"),
                 "--out", str(tmp_path / "o")]) == 4


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["riemann", "--out", str(blocker / "sub")]) == 4


def test_numerical_failure_exit_code(tmp_path):
    cfg = "[agents]\nn = 90\n[pde]\nhughes_every = 5\np_ex = 0.3\nt_end = 20.0\n"
    code, _ = run(["pde"], tmp_path, config=cfg)
    assert code == 3


def test_riemann_spot_values(tmp_path):
    code, out = run(["riemann", "0.4", "0.3", "1"], tmp_path)
    assert code == 0
    sol = load(out / "riemann.json")["solution"]
    assert sol["regime"] == "boundary_shock"
    assert sol["exit_time"] == pytest.approx(1.9048, abs=1e-4)
    code, out = run(["riemann", "0.25", "0.6", "1"], tmp_path, "c")
    assert load(out / "riemann.json")["solution"]["regime"] == "constant"


def test_riemann_map(tmp_path):
    code, out = run(["riemann", "0.5", "0.5", "--map", "50"], tmp_path)
    assert code == 0
    emap, meta = io.read_field_csv(out / "riemann_exit_time_map.csv")
    assert emap.shape == (50, 50)
    assert np.all(np.diff(emap, axis=0) > 0)
    assert meta["rows"] == "rho0"


def test_pde_mass_decreasing(tmp_path):
    cfg = "[agents]\nn = 63\n[pde]\np_ex = 0.5\n"
    code, out = run(["pde"], tmp_path, config=cfg)
    assert code == 0
    series, _ = io.read_table_csv(out / "pde_series_0_standard.csv")
    assert np.all(np.diff(series["mass"]) < 0)


def test_pde_closed_domain(tmp_path):
    cfg = "[agents]\nn = 63\n[pde]\nclosed = true\nt_end = 5.0\n"
    code, out = run(["pde"], tmp_path, config=cfg)
    series, _ = io.read_table_csv(out / "pde_series_0_standard.csv")
    assert np.allclose(series["mass"], series["mass"][0], rtol=0, atol=1e-12)


def test_pde_pushing_pair(tmp_path):
    cfg = ("[corridor]\nwidth_m = 3.3\n[agents]\nn = 67\n[pde]\ncompare_pushing = true\n"
           "p_ex = 1.15\np_ex_units = 'persons_per_second'\n")
    code, out = run(["pde"], tmp_path, config=cfg)
    runs = {r["variant"]: r for r in load(out / "summary.json")["runs"]}
    assert runs["pushing"]["half_peak_time_s"] < runs["standard"]["half_peak_time_s"]


def test_potential_reports(tmp_path):
    code, out = run(["potential"], tmp_path)
    assert code == 0
    rep = load(out / "potential.json")
    assert all(r["within_2dx"] for r in rep["corridor"])
    assert rep["convex"]["agreement"] > 0.9
    assert set(rep["u_shape"]["probe"]) == {"cell", "eikonal", "laplace"}
    for name in ("u_shape_eikonal.csv", "u_shape_laplace.csv"):
        assert (out / name).exists()


@pytest.mark.slow
def test_calibrate_quick(tmp_path):
    code, out = run(["calibrate", "--quick"], tmp_path, config="[calibrate]\nestimate_mu0 = false\n")
    assert code == 0
    rep = load(out / "calibration.json")
    assert rep["low_fidelity"] is True
    assert rep["manifest_fields"]["runs"] == 100
    assert rep["targets_mu1"] == [53, 60, 55] and rep["targets_mu0"] == [64, 68, 57]
    assert "calibrate.targets_mu1" in rep["injected_defaults"]
    surface, meta = io.read_field_csv(out / "calibration_surface.csv")
    assert surface.shape == (5, 6) and meta["low_fidelity"] == "true"


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "crowdqueue.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("simulate", "pde", "riemann", "calibrate", "potential"):
        assert sub in res.stdout
