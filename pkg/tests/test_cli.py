import json

import pytest

from twistband.cli import (EXIT_INVALID, EXIT_OK, ConfigError, RunConfig, load_config, main,
                           parse_config)


def small_config(**twist):
    d = RunConfig().to_dict()
    d["mesh"] = {"target_h": 0.2, "refinements": 1, "n_theta": None}
    d["band"] = {"p_min": -2.0, "p_max": 2.0, "n_points": 5, "n_bands": 2}
    d["waveguide"] = {"L_list": [5.0, 10.0], "n_s_per_unit": 5.0, "n_modes": None, "k": 2}
    if twist:
        d["twist"] = {**d["twist"], **twist}
    return d


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def test_config_round_trip():
    cfg = RunConfig()
    again = parse_config(json.loads(cfg.to_json()))
    assert again.to_json() == cfg.to_json()
    assert cfg.h_list() == [0.08, 0.04, 0.02]


@pytest.mark.parametrize("patch,key", [
    ({"mesh": {"target_h": -1.0}}, "mesh.target_h"),
    ({"solver": {"tol": 0.0}}, "solver.tol"),
    ({"band": {"n_points": 4}}, "band.n_points"),
    ({"waveguide": {"L_list": [20.0, 10.0]}}, "waveguide.L_list"),
    ({"bogus": 1}, "bogus"),
])
def test_config_errors_name_the_key(patch, key):
    d = RunConfig().to_dict()
    for k, v in patch.items():
        d[k] = {**d[k], **v} if isinstance(v, dict) and k in d else v
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(d)


def test_bad_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"mesh": {"target_h": 0.1,}}')
    with pytest.raises(ConfigError, match="line 1"):
        load_config(str(p))
    assert main(["bands", "--config", str(p)]) == EXIT_INVALID
    assert "invalid configuration" in capsys.readouterr().err


def test_invalid_geometry_exit_code(tmp_path):
    d = small_config()
    d["cross_section"] = {"kind": "polygon",
                          "vertices": [[0, 0], [1, 1], [1, 0], [0, 1]]}
    out = tmp_path / "out"
    code = main(["mesh", "--config", write(tmp_path, d), "--out", str(out)])
    assert code == EXIT_INVALID


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = main(["mesh", "--config", write(tmp_path, small_config()),
                 "--out", str(blocker / "sub")])
    assert code == EXIT_INVALID


def test_bands_outputs_and_reproducibility(tmp_path):
    cfg = write(tmp_path, small_config())
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["bands", "--config", cfg, "--out", str(a), "--seed", "3"]) == EXIT_OK
    assert main(["bands", "--config", cfg, "--out", str(b), "--seed", "3"]) == EXIT_OK
    for name in ("bands.csv", "ground_state.csv", "diagnostics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    text = (a / "bands.csv").read_text()
    assert text.split("\n")[0] == "p,eps_1,eps_2"
    assert "\r" not in text
    man = json.loads((a / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["seed"] == 3
    assert set(man["files"]) == {"bands.csv", "ground_state.csv", "diagnostics.json"}
    diag = json.loads((a / "diagnostics.json").read_text())
    g = diag["ground_state"]
    assert g["angular_energy_tol"] == pytest.approx(10 * g["angular_energy_refinement_diff"])
    assert g["angular_resolved"] == (g["angular_energy"] > g["angular_energy_tol"])


def test_certify_attractive(tmp_path):
    out = tmp_path / "c"
    d = small_config()
    d["mesh"] = {"target_h": 0.08, "refinements": 2, "n_theta": None}
    assert main(["certify", "--config", write(tmp_path, d),
                 "--out", str(out)]) == EXIT_OK
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["certificate"]["verdict"] is True
    assert cert["certificate"]["shifted_quotient"] < 0


def test_certify_coarse_mesh_unresolved(tmp_path):
    # 0.2 -> 0.1 changes the angular energy by more than a tenth of its value
    out = tmp_path / "c"
    assert main(["certify", "--config", write(tmp_path, small_config()),
                 "--out", str(out)]) == EXIT_OK
    cert = json.loads((out / "certificate.json").read_text())["certificate"]
    assert cert["verdict"] is False
    assert cert["reason"].startswith("angular energy not resolved")


def test_bound_unperturbed(tmp_path):
    out = tmp_path / "u"
    d = small_config(params={"c": 0.0})
    assert main(["bound", "--config", write(tmp_path, d), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "bound_report.json").read_text())
    assert rep["verdict"] == "no certified bound state"
    assert not rep["certified"] and not rep["inconclusive"]


def test_mesh_outputs(tmp_path):
    out = tmp_path / "m"
    assert main(["mesh", "--config", write(tmp_path, small_config()),
                 "--out", str(out)]) == EXIT_OK
    mesh = json.loads((out / "mesh.json").read_text())
    assert len(mesh["quality"]) == 2
    assert all(abs(r["area_error"]) <= 1e-12 for r in mesh["quality"])
    obj = (out / "tube.obj").read_text()
    assert obj.startswith("v ") or "\nv " in obj
