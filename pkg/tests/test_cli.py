import json
import logging

import numpy as np
import pytest

import msvlad.netvlad
from msvlad.cli import main
from msvlad.tensor_io import write_tensor


def dir_bytes(path):
    return {f.name: f.read_bytes() for f in sorted(path.iterdir())}


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out


@pytest.fixture()
def initialized(small_dataset, tmp_path, capsys):
    checkpoint = tmp_path / "ckpt"
    code, out = run_cli(
        capsys,
        "kmeans-init", "--manifest", str(small_dataset), "--checkpoint", str(checkpoint),
        "--k", "4", "--sample-columns", "2000", "--seed", "7",
    )
    assert code == 0
    return small_dataset, checkpoint


def test_kmeans_init_writes_checkpoint(initialized, capsys):
    _, checkpoint = initialized
    assert (checkpoint / "meta.json").is_file()


def test_kmeans_init_k_too_large(small_dataset, tmp_path, capsys):
    code, _ = run_cli(
        capsys,
        "kmeans-init", "--manifest", str(small_dataset),
        "--checkpoint", str(tmp_path / "c"), "--k", "64", "--sample-columns", "10",
    )
    assert code == 2


def test_kmeans_init_same_seed_identical(small_dataset, tmp_path, capsys):
    for name in ("a", "b"):
        code, _ = run_cli(
            capsys,
            "kmeans-init", "--manifest", str(small_dataset),
            "--checkpoint", str(tmp_path / name), "--k", "4",
            "--sample-columns", "1500", "--seed", "3",
        )
        assert code == 0
    assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")


def test_train_streams_csv_and_logs_mining(initialized, tmp_path, capsys, caplog):
    manifest, checkpoint = initialized
    with caplog.at_level(logging.INFO, logger="msvlad.trainer"):
        code, out = run_cli(
            capsys,
            "train", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
            "--checkpoint-out", str(tmp_path / "trained"), "--iterations", "16",
            "--lr-initial", "0.01", "--lr-final", "0.01",
            "--mining-batch-size", "32", "--num-classes", "8",
            "--mini-batch-size", "8", "--seed", "7",
        )
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0] == "iteration,loss,lr,triplet_pool_size"
    assert len(rows) == 17
    mining_lines = [r for r in caplog.messages if r.startswith("mining round")]
    assert len(mining_lines) == 2


def test_train_missing_checkpoint(small_dataset, tmp_path, capsys):
    code, _ = run_cli(
        capsys,
        "train", "--manifest", str(small_dataset),
        "--checkpoint", str(tmp_path / "missing"),
        "--checkpoint-out", str(tmp_path / "out"), "--iterations", "4",
    )
    assert code == 2


def test_train_resume_matches_straight_run(initialized, tmp_path, capsys):
    manifest, checkpoint = initialized
    common = [
        "--manifest", str(manifest),
        "--lr-initial", "0.01", "--lr-final", "0.01",
        "--mining-batch-size", "32", "--num-classes", "8",
        "--mini-batch-size", "8", "--seed", "7", "--checkpoint-interval", "5",
    ]
    code, _ = run_cli(
        capsys, "train", "--checkpoint", str(checkpoint),
        "--checkpoint-out", str(tmp_path / "straight"), "--iterations", "20", *common,
    )
    assert code == 0
    code, _ = run_cli(
        capsys, "train", "--checkpoint", str(checkpoint),
        "--checkpoint-out", str(tmp_path / "half"), "--iterations", "10", *common,
    )
    assert code == 0
    code, _ = run_cli(
        capsys, "train", "--checkpoint", str(tmp_path / "half"),
        "--checkpoint-out", str(tmp_path / "resumed"), "--iterations", "20", *common,
    )
    assert code == 0
    assert dir_bytes(tmp_path / "straight") == dir_bytes(tmp_path / "resumed")


def test_evaluate_prints_report(initialized, capsys):
    manifest, checkpoint = initialized
    code, out = run_cli(
        capsys,
        "evaluate", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
        "--pooling", "both",
    )
    assert code == 0
    payload = json.loads(out)
    assert set(payload) == {"map", "per_query"}
    assert 0.0 <= payload["map"] <= 1.0


def test_evaluate_multires(multires_dataset, tmp_path, capsys):
    checkpoint = tmp_path / "ckpt"
    code, _ = run_cli(
        capsys,
        "kmeans-init", "--manifest", str(multires_dataset),
        "--checkpoint", str(checkpoint), "--k", "4", "--sample-columns", "1500",
    )
    assert code == 0
    code, out = run_cli(
        capsys,
        "evaluate", "--manifest", str(multires_dataset), "--checkpoint", str(checkpoint),
        "--resolutions", "224,336,504", "--power-norm",
    )
    assert code == 0
    assert 0.0 <= json.loads(out)["map"] <= 1.0


def test_evaluate_unknown_pooling_exits_2(initialized, capsys):
    manifest, checkpoint = initialized
    with pytest.raises(SystemExit) as exc:
        main([
            "evaluate", "--manifest", str(manifest),
            "--checkpoint", str(checkpoint), "--pooling", "5x5",
        ])
    assert exc.value.code == 2
    capsys.readouterr()


def test_query_self_first(initialized, capsys):
    manifest, checkpoint = initialized
    feature = manifest.parent / "features" / "gallery002_01_336.msvf"
    code, out = run_cli(
        capsys,
        "query", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
        str(feature), "--top-k", "4",
    )
    assert code == 0
    results = json.loads(out)["results"]
    assert len(results) == 4
    assert results[0]["id"] == "gallery002_01"


def test_query_top_k_larger_than_gallery(initialized, capsys):
    manifest, checkpoint = initialized
    feature = manifest.parent / "features" / "gallery000_00_336.msvf"
    code, out = run_cli(
        capsys,
        "query", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
        str(feature), "--top-k", "999",
    )
    assert code == 0
    assert len(json.loads(out)["results"]) == 16


def test_query_malformed_feature(initialized, tmp_path, capsys):
    manifest, checkpoint = initialized
    bad = tmp_path / "bad.msvf"
    bad.write_bytes(b"XXXXnotatensor")
    code, _ = run_cli(
        capsys,
        "query", "--manifest", str(manifest), "--checkpoint", str(checkpoint), str(bad),
    )
    assert code == 2


def test_query_undersized_feature(initialized, tmp_path, capsys):
    manifest, checkpoint = initialized
    small = tmp_path / "small.msvf"
    write_tensor(small, [2, 2, 8], np.zeros(32))
    code, _ = run_cli(
        capsys,
        "query", "--manifest", str(manifest), "--checkpoint", str(checkpoint), str(small),
    )
    assert code == 2


def test_gradcheck_reports_and_passes(capsys):
    code, out = run_cli(
        capsys,
        "gradcheck", "--seed", "3", "--netvlad-instances", "2",
        "--triplet-instances", "2", "--pooling-instances", "2",
    )
    assert code == 0
    payload = json.loads(out)
    assert payload["ok"] is True
    assert set(payload["checks"]) == set(payload["tolerances"])


def test_gradcheck_same_seed_identical(capsys):
    args = ("gradcheck", "--seed", "5", "--netvlad-instances", "2",
            "--triplet-instances", "2", "--pooling-instances", "2")
    _, first = run_cli(capsys, *args)
    _, second = run_cli(capsys, *args)
    assert first == second


def test_gradcheck_detects_injected_bug(capsys, monkeypatch):
    original = msvlad.netvlad.vlad_backward

    def corrupted(cache, params, grad_descriptor):
        grads, grad_columns = original(cache, params, grad_descriptor)
        grads.weights *= 1.01
        return grads, grad_columns

    monkeypatch.setattr(msvlad.netvlad, "vlad_backward", corrupted)
    code, out = run_cli(
        capsys,
        "gradcheck", "--netvlad-instances", "2", "--triplet-instances", "1",
        "--pooling-instances", "1",
    )
    assert code == 1
    assert json.loads(out)["ok"] is False


def test_evaluate_perfect_retrieval_fixture(tmp_path, capsys):
    from fixtures import make_retrieval_dataset

    manifest = make_retrieval_dataset(
        tmp_path / "easy", classes=4, per_class=(3, 2, 1), channels=8,
        resolution_grids={336: (8, 8)}, background_prob=0.0,
        class_scale=3.0, cell_noise=0.05, seed=1,
    )
    checkpoint = tmp_path / "ckpt"
    code, _ = run_cli(
        capsys,
        "kmeans-init", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
        "--k", "4", "--sample-columns", "1000", "--seed", "1",
    )
    assert code == 0
    code, out = run_cli(
        capsys,
        "evaluate", "--manifest", str(manifest), "--checkpoint", str(checkpoint),
    )
    assert code == 0
    assert json.loads(out)["map"] == 1.0
