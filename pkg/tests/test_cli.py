import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest

from molddp import gpack
from molddp.cli import main, read_config_file
from molddp.ddp import PHASES

GOLDEN = Path(__file__).parent / "golden" / "metrics_tiny.json"

THREE = "smiles,gap\nCCO,1.5\nc1ccccc1,2.25\nO=C=O,3.0\n"


def _csv(tmp_path, text, name="in.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_preprocess_three_molecules(tmp_path, capsys):
    src = _csv(tmp_path, THREE)
    assert main(["preprocess", str(src), str(tmp_path / "c")]) == 0
    out = capsys.readouterr().out
    assert "graphs=3" in out and "avg_nodes_per_graph=" in out
    r = gpack.open_reader(tmp_path / "c")
    assert len(r) == 3 and r.schema.vocab == ("H", "C", "O")
    assert r.read_graph(1).num_nodes == 12


def test_preprocess_object_format(tmp_path):
    src = _csv(tmp_path, THREE)
    assert main(["preprocess", str(src), str(tmp_path / "o"), "--format", "object"]) == 0
    assert json.loads((tmp_path / "o" / "meta.json").read_text())["num_graphs"] == 3


def test_preprocess_bad_line_logged(tmp_path, caplog):
    src = _csv(tmp_path, THREE + "C(C,1.0\n")
    code = main(["preprocess", str(src), str(tmp_path / "c")])
    assert code == 2  # 1 of 4 is over the default threshold
    assert "line 5" in caplog.text
    assert (tmp_path / "c.errors.tsv").read_text().splitlines()[1].startswith("5\tC(C\t")
    code = main(["preprocess", str(src), str(tmp_path / "d"), "--max-failure-rate", "0.5"])
    assert code == 0 and len(gpack.open_reader(tmp_path / "d")) == 3
    assert gpack.open_reader(tmp_path / "d").meta.ids.tolist() == [0, 1, 2]


def test_preprocess_io_errors(tmp_path):
    assert main(["preprocess", str(tmp_path / "missing.csv"), str(tmp_path / "c")]) == 1
    src = _csv(tmp_path, "smi,gap\nC,1\n")
    assert main(["preprocess", str(src), str(tmp_path / "c")]) == 1
    src = _csv(tmp_path, THREE)
    assert main(["preprocess", str(src), str(tmp_path / "c")]) == 0
    assert main(["preprocess", str(src), str(tmp_path / "c")]) == 1
    assert main(["preprocess", str(src), str(tmp_path / "c"), "--overwrite"]) == 0


def test_preprocess_rerun_byte_identical(small_corpus, tmp_path):
    for name in ("a", "b"):
        assert main(["preprocess", str(small_corpus["csv"]), str(tmp_path / name), "--workers", "2"]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == ["data.0", "data.1", "meta.idx"]
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    one = gpack.open_reader(small_corpus["gpack"])
    two = gpack.open_reader(tmp_path / "a")
    assert sorted(two.meta.ids.tolist()) == sorted(one.meta.ids.tolist())


def test_inspect(small_corpus, tmp_path, capsys):
    assert main(["inspect", str(small_corpus["gpack"]), "--verify", "--graph", "3"]) == 0
    out = capsys.readouterr().out
    assert "graphs=400" in out and "vocab: H,C" in out and "graph 3:" in out and "data.2=" in out
    assert main(["inspect", str(small_corpus["object"])]) == 0
    assert "graphs=400" in capsys.readouterr().out
    assert main(["inspect", str(small_corpus["gpack"]), "--graph", "400"]) == 1
    assert main(["inspect", str(tmp_path)]) == 1


def test_inspect_empty_container(tmp_path, capsys):
    gpack.write_dataset(tmp_path / "e", [], gpack.GpackSchema(5, 4, 1, ("H", "C")))
    assert main(["inspect", str(tmp_path / "e")]) == 0
    out = capsys.readouterr().out
    assert "graphs=0 nodes=0 edges=0" in out
    row = out.strip().splitlines()[-1].split()
    assert row[1:4] == ["0", "0", "0.0"]


def _train(data, out, *extra):
    return main(["train", str(data), "--layers", "2", "--hidden", "8", "--batch-size", "32", "--epochs", "2",
                 "--precision", "f64", "--seed", "5", "--out", str(out), *extra])


def test_train_outputs(small_corpus, tmp_path):
    assert _train(small_corpus["gpack"], tmp_path / "r", "--world-size", "2", "--batch-size", "16",
                  "--launcher", "thread") == 0
    rep = json.loads((tmp_path / "r" / "metrics.json").read_text())
    assert rep["schema"] == "molddp.metrics" and rep["version"] == "1.0"
    assert len(rep["timings"]) == 2 * 2
    assert {(t["rank"], t["epoch"]) for t in rep["timings"]} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert all(isinstance(t[p], float) for t in rep["timings"] for p in PHASES)
    assert rep["summary"]["ranks_consistent"]
    with open(tmp_path / "r" / "parity.csv") as f:
        rows = list(csv.DictReader(f))
    assert {r["split"] for r in rows} == {"train", "val", "test"} and len(rows) == 400
    assert len((tmp_path / "r" / "loss.csv").read_text().splitlines()) == 3
    assert (tmp_path / "r" / "checkpoint.gckp").exists()


def test_train_defaults_and_failure(tmp_path):
    from molddp.cli import build_parser, resolve
    _, opts = build_parser()
    o = resolve(build_parser()[0].parse_args(["train", "x"]), opts["train"].specs, {}, {})
    assert (o["layers"], o["hidden"], o["lr"], o["batch_size"], o["epochs"]) == (6, 55, 0.001, 128, 3)
    assert main(["train", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 1
    assert main(["train", str(tmp_path / "missing"), "--world-size", "2", "--launcher", "thread", "--timeout", "5",
                 "--out", str(tmp_path / "r")]) == 1


def _normalize(rep):
    """Drop machine-dependent fields from a metrics report."""
    rep = json.loads(json.dumps(rep))
    for t in rep["timings"]:
        for k in (*PHASES, "total"):
            t[k] = "seconds"
    for h in rep["history"]:
        h["wall_seconds"] = "seconds"
    rep["summary"]["wall_seconds"] = "seconds"
    rep["run"]["dataset"] = "DATA"
    return rep


def _assert_close(a, b, path="$"):
    if isinstance(b, dict):
        assert isinstance(a, dict) and sorted(a) == sorted(b), path
        for k in b:
            _assert_close(a[k], b[k], f"{path}.{k}")
    elif isinstance(b, list):
        assert isinstance(a, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _assert_close(x, y, f"{path}[{i}]")
    elif isinstance(b, float):
        assert a == pytest.approx(b, rel=1e-8, abs=1e-12), path
    else:
        assert a == b, path


def test_metrics_golden(small_corpus, tmp_path):
    assert _train(small_corpus["gpack"], tmp_path / "r") == 0
    rep = _normalize(json.loads((tmp_path / "r" / "metrics.json").read_text()))
    if os.environ.get("UPDATE_GOLDEN"):
        GOLDEN.parent.mkdir(exist_ok=True)
        GOLDEN.write_text(json.dumps(rep, indent=1, sort_keys=True) + "\n")
    _assert_close(rep, json.loads(GOLDEN.read_text()))


def test_train_rerun_deterministic(small_corpus, tmp_path):
    for name in ("a", "b"):
        assert _train(small_corpus["gpack"], tmp_path / name, "--epochs", "1") == 0
    assert (tmp_path / "a" / "parity.csv").read_bytes() == (tmp_path / "b" / "parity.csv").read_bytes()
    assert (tmp_path / "a" / "loss.csv").read_text().splitlines()[1].split(",")[1:] == \
        (tmp_path / "b" / "loss.csv").read_text().splitlines()[1].split(",")[1:]


def test_option_precedence(small_corpus, tmp_path, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nepochs = 2\nhidden = 6\nlayers = 1\nbatch_size = 64\n")
    assert read_config_file(cfg)["hidden"] == "6"
    monkeypatch.setenv("MOLDDP_HIDDEN", "7")
    out = tmp_path / "r"
    assert main(["--config", str(cfg), "train", str(small_corpus["gpack"]), "--epochs", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "metrics.json").read_text())
    assert len(rep["history"]) == 1                       # flag beats config
    assert rep["run"]["model"]["hidden_width"] == 7       # env beats config
    assert rep["run"]["model"]["num_conv_layers"] == 1    # config beats default
    assert rep["run"]["hyper"]["local_batch_size"] == 64
    assert rep["run"]["config_file"]["hidden"] == "6"


def test_bench_io(small_corpus, tmp_path, capsys):
    args = ["bench-io", "--inline", str(small_corpus["csv"]), "--object", str(small_corpus["object"]),
            "--gpack", str(small_corpus["gpack"]), "--batch-size", "32", "--cold", "false", "--out", str(tmp_path)]
    assert main(args + ["--repeats", "1"]) == 2
    assert main(args + ["--repeats", "3"]) == 0
    rep = json.loads((tmp_path / "bench_io.json").read_text())
    assert rep["repeats"] == 3 and len(rep["backends"]["gpack"]["seconds"]) == 3
    assert isinstance(rep["speedups"]["object_over_gpack"], float)
    assert "object_over_gpack=" in capsys.readouterr().out
    assert len((tmp_path / "bench_io.csv").read_text().splitlines()) == 1 + 3 * 3


def test_bench_io_stream_mismatch(small_corpus, tmp_path):
    other = tmp_path / "other"
    recs = [type(s)(s.id, s.x, s.edge_index, s.edge_attr, s.y + 1) for s in small_corpus["samples"]]
    sch = gpack.open_reader(small_corpus["gpack"]).schema
    gpack.write_dataset(other, recs, sch)
    assert main(["bench-io", "--object", str(small_corpus["object"]), "--gpack", str(other), "--cold", "false",
                 "--repeats", "3", "--out", str(tmp_path)]) == 1


def test_bench_scaling_small(small_corpus, tmp_path):
    assert main(["bench-scaling", str(small_corpus["gpack"]), "--world-sizes", "1,2", "--samples", "64",
                 "--batch-size", "16", "--layers", "1", "--hidden", "4", "--launcher", "thread",
                 "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "bench_scaling.json").read_text())
    assert [r["world_size"] for r in rep["rows"]] == [1, 2]
    assert rep["rows"][0]["speedup"] == 1.0
    assert [r["batches_per_worker"] for r in rep["rows"]] == [4, 2]


def test_make_corpus(tmp_path):
    assert main(["make-corpus", str(tmp_path / "c.csv"), "--n", "20", "--seed", "1"]) == 0
    with open(tmp_path / "c.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 20 and {"smiles", "gap", "heavy_scaled"} <= set(rows[0])
    assert np.isfinite(float(rows[0]["gap"]))
