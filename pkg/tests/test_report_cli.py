import csv
import os

import numpy as np
import pytest

from epig_bench.cli import cli_main
from epig_bench.core import RoundRecord, RunLog
from epig_bench.report import ROUNDS_HEADER, SUMMARY_HEADER, fmt, write_results, write_score_map


def fake_logs(digest="d" * 64):
    logs = []
    for method in ("bald_topk", "uniform"):
        for trial in range(3):
            recs = [RoundRecord(r, 10 + 5 * r, 0.5 + 0.1 * r + 0.01 * trial + (method == "uniform") * 0.003,
                                0.1 * trial * (r > 0), 0.25, (r,)) for r in range(3)]
            logs.append(RunLog(method, trial, 1000 + trial, digest, recs))
    return logs


def read(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_number_format():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(3) == "3" and fmt(np.int64(4)) == "4"
    assert float(fmt(1 / 3)) == 1 / 3


def test_empty_logs(tmp_path):
    paths = write_results([], tmp_path)
    assert read(paths["rounds.csv"]) == [list(ROUNDS_HEADER)]
    assert read(paths["summary.csv"]) == [list(SUMMARY_HEADER)]
    assert open(paths["accuracy.svg"]).read().lstrip().startswith("<?xml")


def test_rows_and_medians(tmp_path):
    logs = fake_logs()
    paths = write_results(logs, tmp_path)
    rows = read(paths["rounds.csv"])
    assert rows[0] == list(ROUNDS_HEADER)
    assert len(rows) == 1 + 2 * 3 * 3
    assert all(r[-1] == "d" * 64 for r in rows[1:])
    summary = read(paths["summary.csv"])[1:]
    for method, rnd, trials, lab, acc, ood, digest in summary:
        per_trial = sorted(float(r[3]) for r in rows[1:] if r[5] == method and r[1] == rnd)
        assert int(trials) == 3
        assert float(acc) == per_trial[1]  # independent median of three


def test_byte_identical_outputs(tmp_path):
    a = write_results(fake_logs(), tmp_path / "a")
    b = write_results(fake_logs(), tmp_path / "b")
    for key in a:
        assert open(a[key], "rb").read() == open(b[key], "rb").read()


def test_mixed_digests_rejected(tmp_path):
    logs = fake_logs() + fake_logs("e" * 64)
    with pytest.raises(ValueError, match="digest"):
        write_results(logs, tmp_path)


def test_score_map_csv_clamps_only_the_marked_column(tmp_path):
    res = {"grid": np.array([[0.0, 0.0], [1.0, 1.0]]), "bald": np.array([0.2, 0.1]),
           "epig_bald": np.array([-0.05, 0.04]), "train": [], "eval_x": np.zeros((0, 2))}
    paths = write_score_map(res, tmp_path, "f" * 64)
    rows = read(paths["score_map.csv"])
    assert rows[0] == ["x0", "x1", "bald", "epig_bald", "epig_bald_clamped", "config_digest"]
    assert float(rows[1][3]) == -0.05 and float(rows[1][4]) == 0.0
    assert float(rows[2][4]) == 0.04
    assert os.path.getsize(paths["score_map.svg"]) > 0


def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(
        "[experiment]\nmethods = uniform, bald_topk\nacquisition_size = 2\nrounds = 2\ninitial_train = 8\n"
        "eval_size = 20\ntest_size = 50\npool_size = 40\ntrials = 2\n"
        "[model]\nhidden = 8\nmembers = 2\nepochs = 5\n"
        "[epig]\ndistill_epochs = 3\n"
    )
    return path


def test_cli_run_is_byte_deterministic(tmp_path, capsys):
    cfg = tiny_config(tmp_path)
    assert cli_main(["run", str(cfg), "--out-dir", str(tmp_path / "a")]) == 0
    assert cli_main(["run", str(cfg), "--out-dir", str(tmp_path / "b"), "--threads", "2"]) == 0
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    assert {"rounds.csv", "summary.csv", "accuracy.svg", "ood_ratio.svg"} <= set(names)
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_cli_overrides(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cli_main(["run", str(cfg), "--out-dir", str(tmp_path / "o"), "--trials", "1", "--seed", "4"]) == 0
    rows = read(tmp_path / "o" / "rounds.csv")[1:]
    assert {r[0] for r in rows} == {"0"}


def test_cli_missing_config(tmp_path, capsys):
    assert cli_main(["run", str(tmp_path / "missing.ini")]) == 1
    assert "not found" in capsys.readouterr().err


def test_cli_usage_errors(capsys):
    assert cli_main([]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli_main(["ablate-eval", "x.ini"]) == 1


def test_cli_validate(tmp_path, capsys):
    good = tmp_path / "g.ini"
    good.write_text("")
    assert cli_main(["validate-config", str(good)]) == 0
    assert "[experiment]" in capsys.readouterr().out
    bad = tmp_path / "b.ini"
    bad.write_text("[experiment]\nacquisition_size = 0\n")
    assert cli_main(["validate-config", str(bad)]) == 1
    assert "experiment.acquisition_size" in capsys.readouterr().err


def test_cli_runtime_failure(tmp_path, capsys):
    path = tmp_path / "idx.ini"
    path.write_text(f"[data]\nkind = idx\nidx_images = {tmp_path}/nope\nidx_labels = {tmp_path}/nope2\n")
    assert cli_main(["run", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_toy_map_and_ablation(tmp_path):
    cfg = tiny_config(tmp_path)
    assert cli_main(["toy-map", str(cfg), "--out-dir", str(tmp_path / "m"), "--resolution", "5"]) == 0
    assert len(read(tmp_path / "m" / "score_map.csv")) == 26
    assert cli_main(["ablate-eval", str(cfg), "--sizes", "0,20", "--trials", "1",
                     "--out-dir", str(tmp_path / "ab")]) == 0
    rows = read(tmp_path / "ab" / "ablation.csv")
    assert [r[0] for r in rows[1:]] == ["0", "0", "20", "20"]
    assert len({r[-1] for r in rows[1:]}) == 1
    assert cli_main(["ablate-eval", str(cfg), "--sizes", "a,b"]) == 1


def test_cli_check_identities_small(capsys):
    assert cli_main(["check-identities", "--instances", "6", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS epig-forms" in out and "greedy-bound" in out
