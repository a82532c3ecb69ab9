import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from cloudifier.cli import batch_paths, class_colors, main, overlay, pad_to_multiple
from cloudifier.errors import ShapeError
from cloudifier.io import load_checkpoint, read_dataset
from cloudifier.network import build_network, variant_config
from cloudifier.training import TrainHistory


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def data(workdir):
    path = workdir / "d.cfds"
    assert main(["gen-data", "--out", str(path), "--obs", "12", "--size", "32", "--classes", "5", "--seed", "3"]) == 0
    return path


@pytest.fixture(scope="module")
def trained(workdir, data):
    ckpt, hist = workdir / "m.cfnw", workdir / "h.csv"
    code = main(["train", "--data", str(data), "--variant", "micro", "--batch", "4", "--epochs", "2",
                 "--ckpt", str(ckpt), "--history", str(hist)])
    assert code == 0
    return ckpt, hist


def test_gen_data_is_byte_deterministic(workdir, data):
    again = workdir / "again.cfds"
    main(["gen-data", "--out", str(again), "--obs", "12", "--size", "32", "--classes", "5", "--seed", "3"])
    assert again.read_bytes() == data.read_bytes()
    batch = read_dataset(data)
    assert len(batch) == 12 and batch.num_classes == 5 and batch.size == 32


def test_gen_data_multiple_batches(workdir):
    out = workdir / "multi.cfds"
    assert main(["gen-data", "--out", str(out), "--meta-batches", "2", "--obs", "2", "--size", "16"]) == 0
    paths = batch_paths(str(out), 2)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["multi-000.cfds", "multi-001.cfds"]
    a, b = read_dataset(paths[0]), read_dataset(paths[1])
    assert a.observations[0].image.tobytes() != b.observations[0].image.tobytes()


def test_train_writes_all_artifacts(trained):
    ckpt, hist = trained
    assert ckpt.exists() and hist.exists()
    assert hist.with_suffix(".png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    rows = TrainHistory.from_csv(hist).rows
    assert [r[0] for r in rows] == [1, 2]
    assert load_checkpoint(ckpt).num_classes == 5


def test_lr_zero_keeps_initial_weights(workdir, data):
    ckpt = workdir / "zero.cfnw"
    assert main(["train", "--data", str(data), "--variant", "micro", "--batch", "4", "--epochs", "1",
                 "--lr", "0", "--seed", "5", "--ckpt", str(ckpt)]) == 0
    init = build_network(variant_config("micro", 5), seed=5)
    loaded = load_checkpoint(ckpt)
    for (name, p), (_, q) in zip(init.named_parameters(), loaded.named_parameters()):
        assert np.array_equal(p.data, q.data), name


def test_focal_gamma_zero_history_equals_nll(workdir, data):
    runs = {}
    for loss in ("nll", "focal"):
        hist = workdir / f"{loss}.csv"
        main(["train", "--data", str(data), "--variant", "micro", "--batch", "4", "--epochs", "2", "--loss", loss,
              "--focal-gamma", "0", "--ckpt", str(workdir / f"{loss}.cfnw"), "--history", str(hist)])
        runs[loss] = hist.read_text()
    assert runs["nll"] == runs["focal"]


def test_augmented_training(workdir, data, capsys):
    assert main(["train", "--data", str(data), "--variant", "micro", "--batch", "8", "--epochs", "1", "--augment",
                 "--aug-factor", "2", "--aug-artificial", "--ckpt", str(workdir / "aug.cfnw")]) == 0
    assert "augmented train partition to 22 samples" in capsys.readouterr().out


def test_eval_report_is_reproducible(workdir, data, trained, capsys):
    ckpt, _ = trained
    reports = []
    for k in range(2):
        path = workdir / f"r{k}.json"
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--report", str(path)]) == 0
        reports.append(path.read_bytes())
        assert (workdir / f"r{k}-confusion.png").exists()
    assert reports[0] == reports[1]
    doc = json.loads(reports[0])
    assert doc["observations"] == 12
    assert np.asarray(doc["confusion"]).sum() == 12 * 32 * 32
    out = capsys.readouterr().out
    assert "artificial" in out and "natural" in out


def test_eval_split_and_class_mismatch(workdir, data, trained):
    ckpt, _ = trained
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--split", "dev"]) == 0
    other = workdir / "c3.cfds"
    main(["gen-data", "--out", str(other), "--obs", "2", "--size", "32", "--classes", "3"])
    assert main(["eval", "--ckpt", str(ckpt), "--data", str(other)]) == 2


def test_infer_outputs(workdir, trained):
    ckpt, _ = trained
    img = np.random.default_rng(0).integers(0, 256, (30, 22, 3), dtype=np.uint8)
    Image.fromarray(img).save(workdir / "in.png")
    labels, logits, over = workdir / "l.u16", workdir / "lg.f32", workdir / "o.png"
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(workdir / "in.png"), "--labels-out", str(labels),
                 "--logits-out", str(logits), "--overlay-out", str(over)]) == 0
    lab = np.frombuffer(labels.read_bytes(), "<u2")
    lg = np.frombuffer(logits.read_bytes(), "<f4")
    assert lab.size == 30 * 22 and lg.size == 30 * 22 * 5
    assert lab.max() < 5
    np.testing.assert_array_equal(lg.reshape(30 * 22, 5).argmax(1), lab)
    assert np.asarray(Image.open(over)).shape == (30, 22, 3)
    # --pad none refuses sizes that are not multiples of the downsample factor
    assert main(["infer", "--ckpt", str(ckpt), "--image", str(workdir / "in.png"), "--pad", "none"]) == 2


def test_infer_unreadable_image(workdir, trained):
    bad = workdir / "bad.png"
    bad.write_bytes(b"not an image")
    assert main(["infer", "--ckpt", str(trained[0]), "--image", str(bad)]) == 2


def test_exit_codes(workdir, capsys):
    assert main(["train", "--data", str(workdir / "missing.cfds"), "--ckpt", str(workdir / "x")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--out", "x", "--classes", "12"])
    assert exc.value.code == 1
    bad = workdir / "garbage.cfds"
    bad.write_bytes(b"garbage" * 10)
    assert main(["eval", "--ckpt", str(bad), "--data", str(bad)]) == 2
    assert "cloudifier:" in capsys.readouterr().err


def test_numeric_exit_code(workdir, data, monkeypatch):
    import cloudifier.cli as cli

    real = cli.build_network

    def poisoned(config, seed=0):
        net = real(config, seed)
        net.readout.bias.data[:] = np.nan
        return net

    monkeypatch.setattr(cli, "build_network", poisoned)
    assert main(["train", "--data", str(data), "--variant", "micro", "--epochs", "1", "--ckpt", str(workdir / "n")]) == 3


def test_indivisible_dataset_is_a_data_error(workdir):
    odd = workdir / "odd.cfds"
    main(["gen-data", "--out", str(odd), "--obs", "2", "--size", "30", "--classes", "5"])
    assert main(["train", "--data", str(odd), "--variant", "micro", "--ckpt", str(workdir / "o")]) == 2


def test_overlay_and_palette():
    colors = class_colors(6)
    assert tuple(colors[0]) == (0, 0, 0)
    assert len({tuple(c) for c in colors}) == 6
    img = np.full((2, 2, 3), 200, np.uint8)
    out = overlay(img, np.zeros((2, 2), int), 6)
    assert (out == 100).all()


def test_pad_to_multiple():
    img = np.arange(5 * 6 * 3, dtype=np.uint8).reshape(5, 6, 3)
    padded = pad_to_multiple(img, 4)
    assert padded.shape == (8, 8, 3)
    np.testing.assert_array_equal(padded[:5, :6], img)
    assert pad_to_multiple(np.zeros((1, 1, 3), np.uint8), 4).shape == (4, 4, 3)
    with pytest.raises(ShapeError):
        pad_to_multiple(img, 4, "none")


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "cloudifier", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("gen-data", "train", "eval", "infer"):
        assert sub in out.stdout
