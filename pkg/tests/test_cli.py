import json

import pytest

from catcontrol import __version__
from catcontrol.cli import main
from catcontrol.controller import MLPParams, desk_schedule, load_weights, network_for, save_weights

SMALL = """\
grid:
  train_intervals: 10
  test_intervals: 40
curriculum:
  preset: custom
  stages:
    - {batches: 2, alpha_max: 0.6, n_max: 6, batch_size: 2, pump: true}
    - {batches: 2, alpha_max: 0.6, n_max: 7, batch_size: 2}
tomography:
  n_fock: 10
  n_samples: 400
baseline:
  n_fock: 6
  grape_max_iter: 2
  krotov_max_iter: 1
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


@pytest.fixture
def weights(tmp_path):
    net = network_for(desk_schedule())
    m = MLPParams(net, net.init_params(0), 0, 3)
    p = tmp_path / "w.json"
    save_weights(p, m)
    return str(p)


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_train_writes_weights_and_manifest(tmp_path, config):
    out = tmp_path / "train"
    assert main(["train", "--config", config, "--seed", "3", "--out", str(out)]) == 0
    m = manifest(out)
    assert m["seed"] == 3 and m["code_version"] == __version__
    assert len(m["config_hash"]) == 64
    assert set(m["outputs"]) == {"weights.json", "log.csv", "checkpoints"}
    w = load_weights(out / "weights.json")
    assert w.seed == 3
    assert len((out / "log.csv").read_text().splitlines()) == 5


def test_generate_outputs_36_numbers(tmp_path, config, weights):
    out = tmp_path / "gen"
    rc = main(["generate", "--config", config, "--weights", weights, "--alpha", "0.5", "1.5",
               "--phi", "0.3", "--out", str(out)])
    assert rc == 0
    doc = json.loads((out / "coefficients.json").read_text())
    assert len(doc) == 2
    assert all(len(d["coefficients"]) == 36 for d in doc)
    assert doc[0]["alpha"] == 0.5 and doc[0]["phi"] == 0.3
    rows = (out / "waveforms.csv").read_text().splitlines()
    assert rows[0] == "alpha,phi,t_us,reC,imC,reQ,imQ"
    assert len(rows) == 1 + 2 * 41
    assert manifest(out)["generation_s"] >= 0


def test_generate_warns_outside_range(tmp_path, config, weights, caplog):
    rc = main(["generate", "--config", config, "--weights", weights, "--alpha", "5.0",
               "--out", str(tmp_path / "g")])
    assert rc == 0
    assert "outside the training range" in caplog.text


def test_evaluate_modes(tmp_path, config, weights):
    out = tmp_path / "ev"
    for mode in ("schrodinger", "corrected"):
        assert main(["evaluate", "--config", config, "--weights", weights, "--alpha", "0.5",
                     "--mode", mode, "--n-fock", "10", "--out", str(out)]) == 0
        rows = json.loads((out / "evaluation.json").read_text())
        assert 0 <= rows[0]["fidelity"] <= 1 and rows[0]["mode"] == mode


def test_tomography_replay_is_identical(tmp_path, config):
    out = tmp_path / "tomo"
    assert main(["tomography", "--config", config, "--alpha", "1.0", "--n", "300",
                 "--seed", "4", "--out", str(out)]) == 0
    first = json.loads((out / "estimate.json").read_text())
    rep = tmp_path / "rep"
    assert main(["tomography", "--config", config, "--alpha", "1.0", "--replay",
                 str(out / "samples.csv"), "--contrast", str(first["contrast"]),
                 "--out", str(rep)]) == 0
    second = json.loads((rep / "estimate.json").read_text())
    assert second["value"] == first["value"] and second["stderr"] == first["stderr"]


def test_tomography_seed_reproducible(tmp_path, config):
    vals = []
    for k in range(2):
        out = tmp_path / f"t{k}"
        main(["tomography", "--config", config, "--n", "200", "--seed", "9", "--out", str(out)])
        vals.append((out / "samples.csv").read_text())
    assert vals[0] == vals[1]


def test_heralding(tmp_path, capsys):
    out = tmp_path / "h"
    assert main(["tomography", "--heralding", "--out", str(out)]) == 0
    doc = json.loads((out / "heralding.json").read_text())
    assert doc["p_accept_ground"] == pytest.approx(0.974384, abs=1e-6)
    assert "P(accept | excited)" in capsys.readouterr().out


def test_grape_and_benchmark_reuse(tmp_path, config, weights):
    g = tmp_path / "grape"
    assert main(["grape", "--config", config, "--alpha", "0.3", "--out", str(g)]) == 0
    timing = json.loads((g / "timing_a0.3_p0.json").read_text())
    assert (g / "controls_a0.3_p0.csv").exists()
    b = tmp_path / "bench"
    assert main(["benchmark", "--config", config, "--weights", weights, "--alpha", "0.3",
                 "--baseline-dir", str(g), "--out", str(b)]) == 0
    rows = json.loads((b / "benchmark.json").read_text())
    assert rows[0]["baseline_fidelity"] == timing["fidelity"]
    assert rows[0]["speedup"] > 0
    assert rows[0]["gap"] == pytest.approx(rows[0]["baseline_fidelity"] - rows[0]["nn_fidelity"])
    ev = tmp_path / "ev"
    assert main(["evaluate", "--config", config, "--controls", str(g / "controls_a0.3_p0.csv"),
                 "--alpha", "0.3", "--mode", "lindblad", "--n-fock", "6", "--out", str(ev)]) == 0
    f = json.loads((ev / "evaluation.json").read_text())[0]["fidelity"]
    assert f == pytest.approx(timing["fidelity"], abs=1e-3)


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("system:\n  chi_mhz: -1\n")
    assert main(["generate", "--config", str(p), "--weights", "x", "--alpha", "1",
                 "--out", str(tmp_path / "o")]) == 2
    assert f"{p}:2: system.chi_mhz" in capsys.readouterr().err


def test_missing_weights_exit_code(tmp_path):
    assert main(["generate", "--weights", str(tmp_path / "none.json"), "--alpha", "1",
                 "--out", str(tmp_path / "o")]) == 1


def test_negative_seed_rejected(tmp_path):
    assert main(["tomography", "--heralding", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_threads_flag(tmp_path):
    assert main(["tomography", "--heralding", "--threads", "1", "--out", str(tmp_path)]) == 0
