import csv
import json

import numpy as np
import pytest

from nwsketch.cli import error_study, main
from nwsketch.datasets import TabularDataset, synth_regression, write_csv
from nwsketch.nws import error_bound


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    assert main([str(a) for a in argv]) == 0


@pytest.fixture
def smooth_csv(tmp_path):
    ds = synth_regression("smooth-angular", 3000, 4, noise=0.0, seed=11)
    train = TabularDataset(features=ds.features[:2500], targets=ds.targets[:2500])
    test = TabularDataset(features=ds.features[2500:], targets=ds.targets[2500:])
    write_csv(train, tmp_path / "train.csv")
    write_csv(test, tmp_path / "test.csv")
    return tmp_path / "train.csv", tmp_path / "test.csv", test


def test_regress_bench_schema(tmp_path):
    out = tmp_path / "bench.csv"
    run("regress-bench", "--data", "synth:step:n=300,d=3", "-R", "25", "--bits", "6", "-o", out)
    text = out.read_text().splitlines()
    assert text[0] == "model,R,test_mse"
    assert [line.split(",")[:2] for line in text[1:]] == [["nws", "25"], ["ols", ""]]
    assert all(float(line.split(",")[2]) >= 0 for line in text[1:])
    manifest = json.loads((tmp_path / "bench.csv.manifest.json").read_text())
    assert manifest["command"] == "regress-bench" and manifest["args"]["rows"] == [25]


def test_regress_bench_linear_target_favours_ols(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((400, 3))
    path = tmp_path / "lin.csv"
    write_csv(TabularDataset(features=X, targets=X @ [1.0, 2.0, -1.0]), path)
    out = tmp_path / "b.csv"
    run("regress-bench", "--data", path, "-R", "50", "--bits", "6", "-o", out)
    rows = {r["model"]: float(r["test_mse"]) for r in read_rows(out)}
    assert rows["ols"] < 1e-20 < rows["nws"]


def test_regress_bench_stdout(capsys):
    run("regress-bench", "--data", "synth:step:n=200,d=3", "-R", "10,20", "--bits", "4")
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "model,R,test_mse" and len(lines) == 4


def test_error_study_outputs(tmp_path):
    out = tmp_path / "err.csv"
    run("error-study", "-R", "10,40", "--seeds", "2", "--n-train", "300", "--n-test", "30", "--bits", "6", "-o", out)
    rows = read_rows(out)
    assert [int(r["R"]) for r in rows] == [10, 40]
    for r in rows:
        assert float(r["p50"]) <= float(r["p99"]) < float(r["bound"])
        assert float(r["bound"]) == error_bound(1.0, 0.01, int(r["R"]))


def test_error_study_function_matches_cli(tmp_path):
    out = tmp_path / "err.csv"
    run("error-study", "-R", "16", "--seeds", "2", "--n-train", "200", "--n-test", "20", "--bits", "5", "--seed", "3", "-o", out)
    direct = error_study(5, [16], 0.01, 200, 20, 2, seed=3)
    assert float(read_rows(out)[0]["p99"]) == direct[0][2]


def test_sketch_build_and_query(tmp_path, smooth_csv):
    train, test, test_ds = smooth_csv
    snap = tmp_path / "s.nws"
    run("sketch-build", "--data", train, "--bits", "6", "-R", "400", "-o", snap)
    assert (tmp_path / "s.nws.manifest.json").exists()
    est_path = tmp_path / "est.csv"
    run("sketch-query", "--snapshot", snap, "--queries", test, "--target-col", "-1", "-o", est_path)
    est = np.array([float(r["estimate"]) for r in read_rows(est_path)])
    assert len(est) == len(test_ds.targets)
    assert np.corrcoef(est, test_ds.targets)[0, 1] >= 0.9


def test_sketch_query_standardized(tmp_path, smooth_csv):
    train, test, test_ds = smooth_csv
    snap = tmp_path / "s.nws"
    run("sketch-build", "--data", train, "--bits", "6", "-R", "100", "--standardize", "-o", snap)
    meta = json.loads((tmp_path / "s.nws.manifest.json").read_text())
    assert len(meta["standardizer"]["mean"]) == 4
    est_path = tmp_path / "est.csv"
    run("sketch-query", "--snapshot", snap, "--queries", test, "--target-col", "-1", "-o", est_path)
    assert len(read_rows(est_path)) == len(test_ds.targets)


def test_empty_snapshot_queries_zero(tmp_path, capsys):
    # a sketch built from a CSV whose responses are all zero still answers 0
    path = tmp_path / "zeros.csv"
    write_csv(TabularDataset(features=np.eye(3), targets=np.zeros(3)), path)
    snap = tmp_path / "z.nws"
    run("sketch-build", "--data", path, "--bits", "4", "-R", "8", "-o", snap)
    capsys.readouterr()
    run("sketch-query", "--snapshot", snap, "--queries", path, "--target-col", "-1")
    assert capsys.readouterr().out.splitlines() == ["estimate", "0.0", "0.0", "0.0"]


def test_query_dimension_mismatch(tmp_path, smooth_csv, capsys):
    train, _, _ = smooth_csv
    snap = tmp_path / "s.nws"
    run("sketch-build", "--data", train, "--bits", "4", "-R", "8", "-o", snap)
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["sketch-query", "--snapshot", str(snap), "--queries", str(bad)]) == 1
    assert "features" in capsys.readouterr().err


def test_corrupted_snapshot(tmp_path, smooth_csv, capsys):
    train, test, _ = smooth_csv
    snap = tmp_path / "s.nws"
    run("sketch-build", "--data", train, "--bits", "4", "-R", "8", "-o", snap)
    data = bytearray(snap.read_bytes())
    data[3] ^= 0xFF
    snap.write_bytes(bytes(data))
    assert main(["sketch-query", "--snapshot", str(snap), "--queries", str(test), "--target-col", "-1"]) == 1
    assert "nwsketch: error" in capsys.readouterr().err


def test_missing_required_option(capsys):
    assert main(["sketch-build", "--bits", "4"]) == 1
    assert "--data" in capsys.readouterr().err


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["regress-bench", "--data", "synth:smooth-angular:n=300,d=4", "-R", "10,30", "--bits", "6", "--seed", "5"]
    run(*args, "-o", a)
    run(*args, "-o", b)
    assert a.read_bytes() == b.read_bytes()
    run(*args[:-1], "6", "-o", b)
    assert a.read_bytes() != b.read_bytes()


def test_manifest_rerun_reproduces(tmp_path):
    first = tmp_path / "first.csv"
    run("regress-bench", "--data", "synth:step:n=300,d=3", "-R", "10,20", "--bits", "5", "--seed", "9", "-o", first)
    again = tmp_path / "again.csv"
    run("regress-bench", "--config", tmp_path / "first.csv.manifest.json", "-o", again)
    assert first.read_bytes() == again.read_bytes()


def test_train_demo_and_compare(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(
        "dataset: {n_train: 500, n_test: 200, dim: 4}\n"
        "sampler: {target_ratio: 1.0, p_min: 1.0, warmup_iters: 5}\n"
        "sketch: {rows: 20}\n"
        "iterations: 30\n"
        "batch_size: 25\n"
    )
    out = tmp_path / "demo"
    run("train-demo", "--config", cfg, "-o", out)
    for name in ("baseline.csv", "adaptive.csv", "report.json", "config.yaml", "manifest.json"):
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["speedup"] == 1.0 and report["acc_gap"] == 0.0
    assert (out / "baseline.csv").read_text().split("\n")[0].startswith("iter,train_loss")

    cmp_out = tmp_path / "cmp.json"
    run("compare", "--baseline", out / "baseline.csv", "--adaptive", out / "adaptive.csv", "--config", out / "config.yaml", "-o", cmp_out)
    cmp = json.loads(cmp_out.read_text())
    assert cmp["speedup"] == 1.0 and cmp["target_acc"] == report["target_acc"]

    # the manifest carries the full training config and replays the run
    again = tmp_path / "again"
    run("train-demo", "--config", out / "manifest.json", "-o", again)
    assert (again / "adaptive.csv").read_text() != ""
    assert json.loads((again / "report.json").read_text())["baseline_final_acc"] == report["baseline_final_acc"]


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "nwsketch" in capsys.readouterr().out
