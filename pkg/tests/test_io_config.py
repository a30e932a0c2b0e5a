import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from crowdqueue import config, io

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@given(arr=arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_field_round_trip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("f") / "x.csv"
    io.write_field_csv(path, arr, {"note": "a\nb", "n": 3})
    back, meta = io.read_field_csv(path)
    assert np.array_equal(back, arr)
    assert meta["note"] == "a\nb" and meta["n"] == "3"


def test_field_specials(tmp_path):
    arr = np.array([[np.nan, np.inf, -np.inf, 5e-324]])
    io.write_field_csv(tmp_path / "s.csv", arr)
    back, _ = io.read_field_csv(tmp_path / "s.csv")
    assert np.isnan(back[0, 0]) and back[0, 1] == np.inf and back[0, 2] == -np.inf
    assert back[0, 3] == 5e-324


def test_table_round_trip(tmp_path):
    cols = {"t": np.linspace(0, 1, 7) / 3, "mass": np.exp(-np.arange(7.0))}
    io.write_table_csv(tmp_path / "t.csv", cols, {"manifest": "abc"})
    back, meta = io.read_table_csv(tmp_path / "t.csv")
    assert list(back) == ["t", "mass"]
    assert all(np.array_equal(back[k], cols[k]) for k in cols)
    assert meta["manifest"] == "abc"
    with pytest.raises(ValueError):
        io.write_table_csv(tmp_path / "bad.csv", {"a": [1, 2], "b": [1]})


def test_json_sorted_and_numpy_aware():
    text = io.dumps({"b": np.arange(2), "a": np.float64(0.5), "c": np.bool_(True)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": 0.5, "b": [0, 1], "c": True}


def test_manifest_digest_tracks_content():
    m = io.RunManifest("simulate", None, "out", 7, 1, "x = 1")
    assert m.digest == io.RunManifest("simulate", None, "out", 7, 1, "x = 1").digest
    assert m.digest != io.RunManifest("simulate", None, "out", 8, 1, "x = 1").digest
    assert m.stamp({"k": 1})["manifest"] == m.digest


# --- config ---------------------------------------------------------------------------

def test_defaults_and_injection():
    cfg = config.default()
    assert cfg.scenarios() == [(0.9, 60)]
    assert cfg.calibrate.targets_mu1 == [53, 60, 55]
    assert cfg.calibrate.targets_mu0 == [64, 68, 57]
    assert set(cfg.injected) == {"calibrate.targets_mu1", "calibrate.targets_mu0"}


def test_scenarios_broadcast():
    cfg = config.loads("[corridor]\nwidth_m = [0.9, 3.3, 5.7]\n[agents]\nn = [63, 67, 57]\n")
    assert cfg.scenarios() == [(0.9, 63), (3.3, 67), (5.7, 57)]
    cfg = config.loads("[corridor]\nwidth_m = [0.9, 3.3]\n")
    assert cfg.scenarios() == [(0.9, 60), (3.3, 60)]


def test_text_is_kept():
    text = "# comment\n[ca]\nbeta = 2\n"
    cfg = config.loads(text)
    assert cfg.text == text and cfg.ca.beta == 2.0


@pytest.mark.parametrize("text, field", [
    ("[ca]\nbeta = 'x'\n", "ca.beta"),
    ("[ca]\nbta = 1.0\n", "ca.bta"),
    ("[nope]\na = 1\n", "nope"),
    ("[ca]\nmu = 2.0\n", "ca.mu"),
    ("[pde]\nvariant = 'other'\n", "pde.variant"),
    ("[agents]\nn = [1, 2]\n[corridor]\nwidth_m = [0.9, 3.3, 5.7]\n", "agents.n"),
    ("[calibrate]\ntargets_mu1 = [1, 2]\n", "calibrate.targets_mu1"),
    ("[run]\nruns = 1.5\n", "run.runs"),
    ("[ca\n", "<file>"),
])
def test_errors_name_the_field(text, field):
    with pytest.raises(config.ConfigError) as exc:
        config.loads(text)
    assert exc.value.field == field
    assert str(exc.value).startswith(field)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        config.load(tmp_path / "missing.toml")
