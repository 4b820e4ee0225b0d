import json

import numpy as np
import pytest

from attn_tgcn.cli import main
from attn_tgcn.data import dumps_model, load_model, read_dataset, save_model
from attn_tgcn.metrics import evaluate
from attn_tgcn.model import ModelConfig, init_params, zero_params

SMALL_DATA = ["--frames", "5", "--features", "4", "--threshold", "0.5"]
SMALL_MODEL = ["--hidden", "4", "--graph-dim", "4", "--attn-dim", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "train.jsonl"
    code, out, _ = run(capsys, "generate", "--out", path, "--videos", 12, "--seed", 1, *SMALL_DATA)
    assert code == 0
    return path


def test_generate_prints_counts(tmp_path, capsys):
    path = tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "generate", "--out", path, "--videos", 122, "--seed", 0)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "videos\t122"
    assert [line.split("\t")[0] for line in lines[1:]] == ["node1", "node2", "node3"]
    for line in lines[1:]:
        parts = line.split("\t")
        assert int(parts[2]) + int(parts[4]) == 122
    assert len(path.read_text().splitlines()) == 122


def test_generate_zero_videos(tmp_path, capsys):
    path = tmp_path / "d.jsonl"
    code, out, _ = run(capsys, "generate", "--out", path, "--videos", 0)
    assert code == 0
    assert path.read_bytes() == b""


def test_generate_workers_are_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run(capsys, "generate", "--out", a, "--videos", 20, "--workers", 1)[0] == 0
    assert run(capsys, "generate", "--out", b, "--videos", 20, "--workers", 4)[0] == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["generate", "--out", "x", "--frames", "0"],
        ["generate", "--out", "x", "--videos", "-1"],
        ["gradcheck", "--eps", "0"],
        ["nonsense"],
        ["generate"],
    ],
)
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err.startswith("usage-error: ") and err.count("\n") == 1


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck", "--seed", 0)
    assert code == 0
    fields = out.strip().split("\t")
    assert fields[0] == "max_rel_err" and float(fields[1]) <= 1e-4
    assert fields[2] == "worst" and fields[4:] == ["pass", "true"]


def test_gradcheck_failure_exits_3(capsys):
    code, out, err = run(capsys, "gradcheck", "--tol", "1e-14", "--eps", "0.1")
    assert code == 3
    assert out.strip().endswith("pass\tfalse")
    assert err.startswith("numeric-error: ")


def test_train_is_byte_reproducible(tmp_path, dataset, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["train", "--data", dataset, "--epochs", 2, *SMALL_MODEL, "--log", tmp_path / "log.tsv"]
    assert run(capsys, *args, "--out", a)[0] == 0
    assert run(capsys, *args, "--out", b)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    log = (tmp_path / "log.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in log] == ["0", "1"]


def test_train_zero_epochs_saves_init(tmp_path, dataset, capsys):
    out = tmp_path / "m.json"
    assert run(capsys, "train", "--data", dataset, "--epochs", 0, "--seed", 9, *SMALL_MODEL, "--out", out)[0] == 0
    cfg = ModelConfig(t=5, n=3, f=4, g=4, h=4, d_a=3)
    assert out.read_text() == dumps_model(init_params(cfg, 9))


def test_train_with_validation_log(tmp_path, dataset, capsys):
    log = tmp_path / "log.tsv"
    args = ["train", "--data", dataset, "--validation", dataset, "--epochs", 1, *SMALL_MODEL]
    assert run(capsys, *args, "--out", tmp_path / "m.json", "--log", log)[0] == 0
    fields = log.read_text().strip().split("\t")
    assert len(fields) == 3 and 0.0 <= float(fields[2]) <= 1.0


def test_train_config_file_and_override(tmp_path, dataset, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nh = 5\ng = 4\nd_a = 3\n[train]\nepochs = 0\nseed = 3\n")
    out = tmp_path / "m.json"
    assert run(capsys, "train", "--config", ini, "--data", dataset, "--hidden", 6, "--out", out)[0] == 0
    archive = load_model(out)
    assert archive.model_config.h == 6 and archive.model_config.g == 4
    code, text, _ = run(capsys, "train", "--config", ini, "--print-config")
    assert code == 0 and "h = 5" in text and "epochs = 0" in text


def test_unknown_config_key_is_validation_error(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[model]\nwidth = 5\n")
    code, _, err = run(capsys, "generate", "--config", ini, "--out", tmp_path / "x")
    assert code == 2 and "width" in err


def test_eval_summary_matches_report(tmp_path, dataset, capsys):
    model = tmp_path / "m.json"
    run(capsys, "train", "--data", dataset, "--epochs", 1, *SMALL_MODEL, "--out", model)
    report_path = tmp_path / "r.json"
    code, out, _ = run(capsys, "eval", "--model", model, "--data", dataset, "--out", report_path)
    assert code == 0
    header, row = out.strip().split("\n")
    assert header.split("\t") == ["average_accuracy", "mean_loss", "average_precision", "average_recall"]
    doc = json.loads(report_path.read_text())
    expected = evaluate(load_model(model).params, read_dataset(dataset)).to_dict()
    assert doc == expected
    for key, text in zip(header.split("\t"), row.split("\t")):
        assert text == ("undefined" if doc[key] == "undefined" else repr(doc[key]))


def test_predict_matches_eval_tallies(tmp_path, dataset, capsys):
    model = tmp_path / "m.json"
    run(capsys, "train", "--data", dataset, "--epochs", 1, *SMALL_MODEL, "--out", model)
    preds = tmp_path / "p.jsonl"
    assert run(capsys, "predict", "--model", model, "--data", dataset, "--out", preds)[0] == 0
    report = evaluate(load_model(model).params, read_dataset(dataset))
    labels = {s.id: s.labels for s in read_dataset(dataset)}
    predicted_dead = np.zeros(3, dtype=int)
    for line in preds.read_text().splitlines():
        rec = json.loads(line)
        for node in rec["nodes"]:
            assert node["decision"] == int(node["p_dead"] > 0.5)
            assert sum(node["attention"]) == pytest.approx(1.0)
            predicted_dead[node["node"]] += node["decision"]
        assert len(rec["nodes"]) == len(labels[rec["id"]])
    assert predicted_dead.tolist() == [c.tp + c.fp for c in report.confusions]


def test_zero_param_archive_predicts_half(tmp_path, dataset, capsys):
    model = tmp_path / "z.json"
    save_model(model, zero_params(ModelConfig(t=5, n=3, f=4, g=4, h=4, d_a=3)))
    preds = tmp_path / "p.jsonl"
    assert run(capsys, "predict", "--model", model, "--data", dataset, "--out", preds)[0] == 0
    for line in preds.read_text().splitlines():
        for node in json.loads(line)["nodes"]:
            assert node["p_dead"] == 0.5 and node["decision"] == 0


def test_eval_empty_dataset_exits_2(tmp_path, capsys):
    model = tmp_path / "z.json"
    save_model(model, zero_params(ModelConfig(t=5, n=3, f=4, g=4, h=4, d_a=3)))
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    code, _, err = run(capsys, "eval", "--model", model, "--data", empty)
    assert code == 2 and err.count("\n") == 1


def test_eval_dimension_mismatch_exits_2(tmp_path, dataset, capsys):
    model = tmp_path / "z.json"
    save_model(model, zero_params(ModelConfig(t=5, n=3, f=7, g=4, h=4, d_a=3)))
    code, _, err = run(capsys, "eval", "--model", model, "--data", dataset)
    assert code == 2 and "expects" in err


def test_corrupt_archive_exits_2(tmp_path, dataset, capsys):
    model = tmp_path / "bad.json"
    model.write_text('{"version": 1, "model_')
    code, _, err = run(capsys, "eval", "--model", model, "--data", dataset)
    assert code == 2 and err.startswith("parse-error")


def test_missing_file_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope.jsonl", "--out", tmp_path / "m.json")
    assert code == 2 and err.startswith("io-error")
