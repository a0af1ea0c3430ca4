import json

import pytest

from planoforge.cli import main
from planoforge.domain import save_fixture


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["corpus-gen", "--out", str(d), "--stores", "3", "--per-store", "4", "--seed", "3"]) == 0
    return d


def test_validate_corpus_output(data_dir, capsys):
    capsys.readouterr()
    assert main(["validate", str(data_dir / "planograms.jsonl"), "--data", str(data_dir), "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["overall"] == 1.0 and out["count"] == 12


def test_train_zero_steps_then_sample_report_quantize(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    cfg = tmp_path / "train.json"
    cfg.write_text(json.dumps({"T": 6, "model": {"widths": [4, 8, 8], "time_dim": 8}}))
    assert main(["train", "--data", str(data_dir), "--out", str(ckpt), "--steps", "0", "--config", str(cfg)]) == 0
    assert ckpt.exists()
    from planoforge.corpus import read_dataset

    fx = tmp_path / "fx.json"
    save_fixture(read_dataset(data_dir).planograms[0].fixture, fx)
    out = tmp_path / "s.jsonl"
    assert main(["sample", "--model", str(ckpt), "--data", str(data_dir), "--fixture", str(fx),
                 "--count", "3", "--seed", "1", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 3
    capsys.readouterr()
    assert main(["report", str(out), "--data", str(data_dir)]) == 0
    assert "Overall average" in capsys.readouterr().out
    assert main(["quantize", "--model", str(ckpt), "--out", str(tmp_path / "q.bin"), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["int8_bytes"] < rep["fp32_bytes"]  # the 26% bound is checked on the desk model


def test_edgesim_table2(capsys):
    assert main(["edgesim", "--table2", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)["rows"]
    assert [r["response_time_ms"] for r in rows] == [450, 460, 475, 495, 497]


def test_edgesim_poisson(capsys):
    assert main(["edgesim", "--rate", "10", "--duration", "5", "--seed", "2", "--json"]) == 0
    assert json.loads(capsys.readouterr().out)["requests"] > 0


def test_errors_are_machine_readable(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "missing.jsonl"), "--data", str(tmp_path)]) != 0
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert "error" in err and "message" in err
    assert main(["no-such-command"]) == 2
    assert json.loads(capsys.readouterr().err.strip())["error"] == "usage"
    assert main([]) == 2
