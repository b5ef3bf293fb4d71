import json

import numpy as np
import pytest
from click.testing import CliRunner

from paqm.cli import main
from paqm.core.ear_model import get_ear_model
from paqm.database.schemas import BasisFunction, CemStats, GateWeight, SalienceMappingModel
from paqm.services.synthetic import am_tone, pure_tone
from paqm.settings import EarModelSettings


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.delenv("PAQM_CONFIG", raising=False)
    return CliRunner()


@pytest.fixture
def tone_pair(wav):
    ref = wav("ref.wav", pure_tone(1000.0, duration=1.0))
    return str(ref), str(ref)


@pytest.fixture
def model_file(tmp_path):
    model = SalienceMappingModel(
        dm_names=["RmsNoiseLoud", "SegmentalNMR", "EHS"],
        bases={
            "RmsNoiseLoud": BasisFunction(knots=[0.0, 1.0], values=[0.0, 10.0]),
            "SegmentalNMR": BasisFunction(knots=[-100.0, 0.0], values=[0.0, 10.0]),
            "EHS": BasisFunction(knots=[0.0, 1.0], values=[0.0, 40.0]),
        },
        gates=[GateWeight(dm="EHS", cem="BVAR", sign=-1, weight=-0.35)],
        cem_stats={"BVAR": CemStats(mean=0.05, std=0.02)},
    )
    path = tmp_path / "model.json"
    path.write_text(model.model_dump_json(), encoding="utf-8")
    return str(path)


def test_compare_identical_pair(runner, tone_pair, model_file):
    result = runner.invoke(main, ["compare", *tone_pair, "--model", model_file, "--json", "--no-align"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["movs"]["RmsNoiseLoud"] == 0.0
    assert report["movs"]["EHS"] == 0.0
    assert report["baq"] == 100.0
    assert report["alignment"]["lag_samples"] == 0
    assert report["metadata"]["config"]["ear"]["n_bands"] == 40
    assert report["metadata"]["tool"] == "paqm"


def test_compare_is_deterministic(runner, tone_pair):
    first = runner.invoke(main, ["compare", *tone_pair, "--json"])
    second = runner.invoke(main, ["compare", *tone_pair, "--json"])
    assert first.exit_code == 0, first.output
    assert first.stdout == second.stdout


def test_compare_text_report(runner, tone_pair):
    result = runner.invoke(main, ["compare", *tone_pair])
    assert result.exit_code == 0, result.output
    assert "SegmentalNMR" in result.stdout
    assert "β-VAR" in result.stdout


def test_compare_missing_file(runner, tone_pair, tmp_path):
    missing = str(tmp_path / "missing.wav")
    result = runner.invoke(main, ["compare", tone_pair[0], missing])
    assert result.exit_code == 3
    assert "missing.wav" in result.stderr


def test_compare_unsupported_format(runner, tone_pair, wav):
    u8 = wav("u8.wav", np.zeros(48000), subtype="PCM_U8")
    result = runner.invoke(main, ["compare", tone_pair[0], str(u8)])
    assert result.exit_code == 3


def test_compare_too_short(runner, wav):
    short = wav("short.wav", np.zeros(1000, dtype=np.int16))
    result = runner.invoke(main, ["compare", str(short), str(short), "--no-align"])
    assert result.exit_code == 4


def test_bad_config_file(runner, tone_pair, tmp_path):
    result = runner.invoke(main, ["--config", str(tmp_path / "nope.env"), "compare", *tone_pair])
    assert result.exit_code == 2


def test_config_file_overrides(runner, tone_pair, tmp_path):
    env = tmp_path / "paqm.env"
    env.write_text("PAQM_METRICS__SETTLING_INTERVAL=0.1\n", encoding="utf-8")
    result = runner.invoke(main, ["--config", str(env), "compare", *tone_pair, "--json"])
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["metadata"]["config"]["metrics"]["settling_interval"] == 0.1


def test_heatmap_identical_bvar(runner, tone_pair, tmp_path):
    out = tmp_path / "bvar.csv"
    image = tmp_path / "bvar.pgm"
    result = runner.invoke(main, ["export-heatmap", *tone_pair, "--metric", "bvar", "--out", str(out),
                                  "--image", str(image)])
    assert result.exit_code == 0, result.output
    lines = out.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# paqm")
    matrix = np.loadtxt(out, delimiter=",", comments="#")
    assert matrix.shape[0] == 40
    assert np.all(matrix == 0.0)
    data = image.read_bytes()
    assert data.startswith(b"P5\n# paqm")
    comments = [line.decode("ascii") for line in data.split(b"\n")[1:6] if line.startswith(b"#")]
    assert comments == lines[:3]
    echoed = json.loads(comments[1][len("# config: "):])
    assert echoed["ear"]["n_bands"] == 40
    assert echoed["cem"]["bvar_window"] == 0.1


def test_heatmap_pdev_localizes_carrier(runner, wav, tmp_path):
    path = str(wav("am.wav", am_tone(1000.0, 4.0, 0.9, duration=2.0)))
    out = tmp_path / "pdev.csv"
    result = runner.invoke(main, ["export-heatmap", path, path, "--metric", "pdev", "--out", str(out)])
    assert result.exit_code == 0, result.output
    matrix = np.loadtxt(out, delimiter=",", comments="#")
    edges = get_ear_model(EarModelSettings(), 48000).layout.edges_hz
    assert int(np.argmax(matrix.mean(axis=1))) == int(np.searchsorted(edges, 1000.0)) - 1


def test_heatmap_unknown_metric(runner, tone_pair, tmp_path):
    result = runner.invoke(main, ["export-heatmap", *tone_pair, "--metric", "loudness",
                                  "--out", str(tmp_path / "x.csv")])
    assert result.exit_code == 2


def test_train_rejects_corrupt_interactions(runner, tmp_path):
    bad = tmp_path / "interactions.json"
    bad.write_text('{\n  "threshold": 0.6,\n  oops\n}', encoding="utf-8")
    result = runner.invoke(main, ["train", str(tmp_path / "manifest.csv"), "--interactions", str(bad),
                                  "--out", str(tmp_path / "model.json")])
    assert result.exit_code == 2
    assert "interactions.json:3:" in result.stderr


@pytest.mark.slow
def test_synthesize_analyze_train_evaluate(runner, tmp_path):
    db = tmp_path / "db"
    result = runner.invoke(main, ["synthesize", str(db), "--items", "30", "--duration", "1.0", "--jobs", "1"])
    assert result.exit_code == 0, result.output
    manifest = str(db / "manifest.csv")

    analysis = tmp_path / "analysis"
    result = runner.invoke(main, ["analyze-interactions", manifest, "-o", str(analysis), "--jobs", "1"])
    assert result.exit_code == 0, result.output
    csv_lines = (analysis / "interactions.csv").read_text(encoding="utf-8").splitlines()
    assert csv_lines[0].startswith("# paqm")
    assert csv_lines[2] == "CEM,RmsNoiseLoud,SegmentalNMR,EHS"
    assert [line.split(",")[0] for line in csv_lines[3:]] == ["PS", "PDEV", "β-VAR"]
    document = json.loads((analysis / "interactions.json").read_text(encoding="utf-8"))
    assert len(document["cells"]) == 9

    models = []
    for name in ("a.json", "b.json"):
        result = runner.invoke(main, ["train", manifest, "--interactions", str(analysis / "interactions.json"),
                                      "--out", str(tmp_path / name), "--jobs", "1"])
        assert result.exit_code == 0, result.output
        models.append((tmp_path / name).read_bytes())
    assert models[0] == models[1]

    result = runner.invoke(main, ["evaluate", manifest, "--model", str(tmp_path / "a.json"), "--json",
                                  "--jobs", "1"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["systems"][0]["system"] == "a"
    assert report["systems"][0]["n_items"] == 30
    assert -1.0 <= report["systems"][0]["r"] <= 1.0


@pytest.mark.slow
def test_synthetic_suppressing_gate_is_selected(runner, tmp_path):
    db = tmp_path / "db"
    result = runner.invoke(main, ["synthesize", str(db), "--items", "60", "--duration", "1.0", "--jobs", "1"])
    assert result.exit_code == 0, result.output
    out = tmp_path / "analysis"
    result = runner.invoke(main, ["analyze-interactions", str(db / "manifest.csv"), "-o", str(out), "--jobs", "1"])
    assert result.exit_code == 0, result.output
    selected = json.loads((out / "interactions.json").read_text(encoding="utf-8"))["selected"]
    gate = [s for s in selected if s["cem"] == "BVAR" and s["dm"] == "EHS"]
    assert len(gate) == 1
    assert gate[0]["sign"] == -1
    assert gate[0]["r"] <= -0.6
    assert "β-VAR -> EHS (-" in result.stdout


def test_empty_selection_at_high_threshold(runner, tmp_path):
    db = tmp_path / "db"
    result = runner.invoke(main, ["synthesize", str(db), "--items", "20", "--duration", "1.0", "--jobs", "1"])
    assert result.exit_code == 0, result.output
    out = tmp_path / "analysis"
    result = runner.invoke(main, ["analyze-interactions", str(db / "manifest.csv"), "-o", str(out),
                                  "--threshold", "1.1", "--jobs", "1"])
    assert result.exit_code == 0, result.output
    assert json.loads((out / "interactions.json").read_text(encoding="utf-8"))["selected"] == []
