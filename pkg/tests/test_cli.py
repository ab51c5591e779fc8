import json

import numpy as np
import pytest

from mapquant.cli import run
from mapquant.errors import DataError
from mapquant.mapio import load_compressed, read_compressed, save_map, write_compressed
from mapquant.pipeline import compress_map
from mapquant.pq import decode
from mapquant.synthetic import synthetic_map


@pytest.fixture(scope="module")
def small_map():
    return synthetic_map(120, 16, num_cameras=20, n_clusters=6, seed=1)


@pytest.fixture
def map_file(tmp_path, small_map):
    path = tmp_path / "map.json"
    save_map(small_map, path)
    return path


def test_compress_map_alpha_one_keeps_everything(small_map):
    cm, stats = compress_map(small_map, 1.0, 1.0, M=4, K=16, seed=0)
    assert len(cm) == len(small_map) == stats.selected_points
    assert np.array_equal(cm.ids, small_map.ids)


def test_compress_map_contents(small_map):
    cm, stats = compress_map(small_map, 0.3, 1.0, M=4, K=16, seed=2)
    assert stats.selected_points >= 36
    assert stats.compressed_bytes == len(write_compressed(cm))
    assert stats.compressed_descriptor_bytes == stats.selected_points * 4
    assert stats.original_descriptor_bytes == stats.selected_points * 64
    assert cm.original_point_count == 120 and cm.alpha == 0.3
    by_id = {p.id: p for p in small_map.points}
    for pid, xyz, code in cm.entries():
        assert xyz == by_id[pid].position
    x = small_map.subset([list(small_map.ids).index(i) for i in cm.ids]).descriptors.astype(float)
    err = np.mean(np.sum((x - decode(cm.codes, cm.codebook)) ** 2, axis=1))
    assert stats.mean_sq_reconstruction_error == pytest.approx(err, rel=1e-12)


def test_compress_map_too_few_points():
    m = synthetic_map(10, 16, seed=0)
    with pytest.raises(DataError, match=r"\[train-pq\] codebook larger than training set"):
        compress_map(m, 0.5, 1.0, M=8, K=256, seed=0)


def test_compress_map_stage_label_for_select(small_map):
    with pytest.raises(DataError, match=r"\[select\] alpha"):
        compress_map(small_map, 1.5, 1.0, M=4, K=8)


def test_train_on_all(small_map):
    a, _ = compress_map(small_map, 0.3, 1.0, M=4, K=16, seed=2, train_on="all")
    b, _ = compress_map(small_map, 0.3, 1.0, M=4, K=16, seed=2)
    assert np.array_equal(a.ids, b.ids)
    assert a.codebook != b.codebook


def test_cli_compress_and_stats(tmp_path, map_file, capsys):
    out = tmp_path / "map.mqz"
    args = ["compress", "--in", str(map_file), "--out", str(out), "--alpha", "0.3", "--tau", "1.0",
            "-M", "4", "-K", "16", "--seed", "7", "--json"]
    assert run(args) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["selected_points"] >= 36
    cm = load_compressed(out)
    assert len(cm) == stats["selected_points"]

    assert run(["stats", "--in", str(out), "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["entries"] == len(cm) and info["M"] == 4 and info["K"] == 16


def test_cli_stages_compose_to_compress(tmp_path, map_file):
    common = ["--seed", "3"]
    one = tmp_path / "one.mqz"
    assert run(["compress", "--in", str(map_file), "--out", str(one), "--alpha", "0.4",
                "-M", "4", "-K", "16", *common]) == 0
    sel, cb, two = tmp_path / "sel.json", tmp_path / "cb.mqz", tmp_path / "two.mqz"
    assert run(["select", "--in", str(map_file), "--out", str(sel), "--alpha", "0.4", *common]) == 0
    assert run(["train-pq", "--in", str(map_file), "--selection", str(sel), "--out", str(cb),
                "-M", "4", "-K", "16", *common]) == 0
    assert len(load_compressed(cb)) == 0
    assert run(["encode", "--in", str(map_file), "--selection", str(sel), "--codebook", str(cb),
                "--out", str(two)]) == 0
    assert one.read_bytes() == two.read_bytes()


def test_cli_truncated_file(tmp_path, map_file, capsys):
    out = tmp_path / "m.mqz"
    assert run(["compress", "--in", str(map_file), "--out", str(out), "--alpha", "0.5", "-M", "4", "-K", "8"]) == 0
    data = out.read_bytes()
    out.write_bytes(data[: len(data) // 2])
    capsys.readouterr()
    assert run(["stats", "--in", str(out)]) == 2
    captured = capsys.readouterr()
    assert "checksum" in captured.err and captured.out == ""


@pytest.mark.parametrize("argv", [[], ["bogus"], ["compress", "--in", "x"], ["stats", "--in", "x", "--nope"],
                                  ["lora"], ["compress", "--in", "a", "--out", "b", "--alpha", "x"]])
def test_cli_usage_errors(argv, capsys):
    assert run(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_missing_file(tmp_path, capsys):
    assert run(["stats", "--in", str(tmp_path / "nope.mqz")]) == 2
    assert "data error" in capsys.readouterr().err


def test_cli_bad_map(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"num_cameras": 1, "descriptor_dim": 2, "points": [{"id": 3, "xyz": [0,0,0], '
                 '"descriptor": [1], "cameras": [0]}]}')
    assert run(["compress", "--in", str(p), "--out", str(tmp_path / "o"), "--alpha", "1"]) == 2
    assert "descriptor length mismatch at id=3" in capsys.readouterr().err


def test_cli_codebook_too_large(tmp_path, capsys):
    p = tmp_path / "tiny.json"
    save_map(synthetic_map(10, 16, seed=0), p)
    assert run(["compress", "--in", str(p), "--out", str(tmp_path / "o"), "--alpha", "0.5"]) == 2
    assert "codebook larger than training set" in capsys.readouterr().err


def test_cli_force_limit(tmp_path, map_file, monkeypatch, capsys):
    import mapquant.selector as sel

    monkeypatch.setattr(sel, "MAX_DENSE_POINTS", 50)
    out = tmp_path / "o.mqz"
    base = ["compress", "--in", str(map_file), "--out", str(out), "--alpha", "0.5", "-M", "4", "-K", "8"]
    assert run(base) == 2
    assert "dense-matrix limit" in capsys.readouterr().err
    assert run(base + ["--force"]) == 0


def test_cli_kernel_flag(tmp_path, map_file):
    out = tmp_path / "o.mqz"
    assert run(["compress", "--in", str(map_file), "--out", str(out), "--alpha", "0.3", "-M", "4", "-K", "8",
                "--kernel", "rbf:4"]) == 0
    assert run(["compress", "--in", str(map_file), "--out", str(out), "--alpha", "0.3",
                "--kernel", "cosine"]) == 2


def test_cli_selection_mismatch(tmp_path, map_file):
    sel = tmp_path / "sel.json"
    assert run(["select", "--in", str(map_file), "--out", str(sel), "--alpha", "0.5"]) == 0
    other = tmp_path / "other.json"
    save_map(synthetic_map(50, 16, seed=9), other)
    assert run(["train-pq", "--in", str(other), "--selection", str(sel), "--out", str(tmp_path / "cb"),
                "-M", "4", "-K", "8"]) == 2


def test_cli_lora_selftest(capsys):
    assert run(["lora", "selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS gradient check" in out and "max relative error" in out
    assert "FAIL" not in out


def test_cli_deterministic_output(tmp_path, map_file):
    a, b = tmp_path / "a.mqz", tmp_path / "b.mqz"
    for p in (a, b):
        assert run(["compress", "--in", str(map_file), "--out", str(p), "--alpha", "0.3",
                    "-M", "4", "-K", "16", "--seed", "11"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert write_compressed(read_compressed(a.read_bytes())) == a.read_bytes()
