import json

import numpy as np
import pytest

from scl.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


@pytest.fixture
def workspace(tmp_path):
    spec = {"k": 2, "subspace_dim": 2, "ambient_dim": 8, "points_per_cluster": 20, "seed": 3}
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    (tmp_path / "cfg.json").write_text(json.dumps({"epochs": 20, "batch_size": 40, "lr": 1e-3}))
    assert main(["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "x.bin"),
                 "--labels", str(tmp_path / "y.txt")]) == EXIT_OK
    assert main(["train", "--embeddings", str(tmp_path / "x.bin"), "--config",
                 str(tmp_path / "cfg.json"), "--out", str(tmp_path / "m.bin"),
                 "--log", str(tmp_path / "log.csv")]) == EXIT_OK
    return tmp_path


def test_eval_identical_files(tmp_path, capsys):
    (tmp_path / "y.txt").write_text("0\n1\n1\n2\n")
    assert main(["eval", "--pred", str(tmp_path / "y.txt"), "--truth", str(tmp_path / "y.txt")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["acc"] == 1.0 and out["nmi"] == 1.0 and out["n"] == 4


def test_cluster_k_zero_is_usage_error(workspace):
    w = workspace
    code = main(["cluster", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--method", "spectral", "--k", "0", "--out", str(w / "p.txt")])
    assert code == EXIT_USAGE


def test_usage_errors():
    assert main([]) == EXIT_USAGE
    assert main(["train", "--embeddings", "x"]) == EXIT_USAGE
    assert main(["eval", "--pred", "a", "--truth", "b", "--bogus"]) == EXIT_USAGE


def test_cluster_kmeans_needs_k(workspace):
    w = workspace
    assert main(["cluster", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--method", "kmeans", "--out", str(w / "p.txt")]) == EXIT_USAGE


def test_data_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("x\n")
    assert main(["eval", "--pred", str(tmp_path / "bad.txt"), "--truth",
                 str(tmp_path / "bad.txt")]) == EXIT_DATA
    (tmp_path / "a.txt").write_text("0\n1\n")
    (tmp_path / "b.txt").write_text("0\n")
    assert main(["eval", "--pred", str(tmp_path / "a.txt"), "--truth",
                 str(tmp_path / "b.txt")]) == EXIT_DATA
    assert main(["train", "--embeddings", str(tmp_path / "missing.bin"), "--config",
                 str(tmp_path / "a.txt"), "--out", str(tmp_path / "m.bin")]) == EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_error_exit_code(tmp_path):
    from scl.data_io import write_embeddings
    write_embeddings(tmp_path / "x.bin", np.random.default_rng(0).standard_normal((16, 4)) * 1e200)
    (tmp_path / "cfg.json").write_text(json.dumps({"epochs": 1, "batch_size": 16,
                                                   "loss": {"gamma_recon": 1.0}}))
    code = main(["train", "--embeddings", str(tmp_path / "x.bin"), "--config",
                 str(tmp_path / "cfg.json"), "--out", str(tmp_path / "m.bin")])
    assert code == EXIT_NUMERIC


def test_full_pipeline(workspace, capsys):
    w = workspace
    assert main(["cluster", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--method", "spectral", "--k", "2", "--out", str(w / "p.txt")]) == EXIT_OK
    assert main(["cluster", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--method", "kmeans", "--k", "2", "--out", str(w / "q.txt")]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", "--pred", str(w / "p.txt"), "--truth", str(w / "y.txt")]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["n"] == 40 and out["k_true"] == 2
    assert main(["export-affinity", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--sample", "10", "--symmetrize", "--out", str(w / "a.csv")]) == EXIT_OK
    rows = (w / "a.csv").read_text().splitlines()
    assert len(rows) == 10 and all(len(r.split(",")) == 10 for r in rows)
    idx = [int(x) for x in (w / "a.csv.indices.txt").read_text().split()]
    assert idx == sorted(set(idx)) and len(idx) == 10
    assert main(["export-scatter", "--embeddings", str(w / "x.bin"), "--model", str(w / "m.bin"),
                 "--labels", str(w / "y.txt"), "--out", str(w / "s.csv")]) == EXIT_OK
    assert len((w / "s.csv").read_text().splitlines()) == 41


def test_sweep_rows(workspace):
    w = workspace
    code = main(["sweep", "--param", "lambda_reg", "--values", "0.0001,0.001,0.01,0.1,1",
                 "--embeddings", str(w / "x.bin"), "--truth", str(w / "y.txt"),
                 "--config", str(w / "cfg.json"), "--out", str(w / "sweep.csv")])
    assert code == EXIT_OK
    lines = (w / "sweep.csv").read_text().splitlines()
    assert lines[0] == "value,acc,nmi"
    assert [float(ln.split(",")[0]) for ln in lines[1:]] == [1e-4, 1e-3, 1e-2, 1e-1, 1.0]


def test_commands_reproducible(workspace, tmp_path_factory):
    w = workspace
    other = tmp_path_factory.mktemp("again")
    main(["synth", "--spec", str(w / "spec.json"), "--out", str(other / "x.bin"),
          "--labels", str(other / "y.txt")])
    main(["train", "--embeddings", str(other / "x.bin"), "--config", str(w / "cfg.json"),
          "--out", str(other / "m.bin"), "--log", str(other / "log.csv")])
    for name in ("x.bin", "y.txt", "m.bin", "log.csv"):
        assert (w / name).read_bytes() == (other / name).read_bytes(), name
    for d in (w, other):
        main(["cluster", "--embeddings", str(d / "x.bin"), "--model", str(d / "m.bin"),
              "--method", "spectral", "--out", str(d / "auto.txt")])
    assert (w / "auto.txt").read_bytes() == (other / "auto.txt").read_bytes()
