import numpy as np
import pytest

from deeptraj import cnn, fileio
from deeptraj.cli import main

CONFIG = """\
segments = 2
canvas_size = 33
network.conv_filters = 4,4,4,4
network.conv_kernels = 3,3,3,1
network.fc_hidden = 8,8
network.epochs = 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.cfg").write_text(CONFIG)
    code = main(["synth", "--out", str(root / "data"), "--classes", "2", "--per-class", "3", "--frames", "12",
                 "--size", "40", "--speed", "1.5"])
    assert code == 0
    return root


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main([])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["flow", "--out", "x.flo"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["train", "--out", "o", "--manifest", "m", "--jobs", "many"])
    assert info.value.code == 1


def test_data_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path / "o"), "--manifest", str(tmp_path / "none.tsv")]) == 2
    (tmp_path / "bad.cfg").write_text("flow.alpha = fast\n")
    assert main(["traj", "--out", str(tmp_path / "t.csv"), "--frames", str(tmp_path),
                 "--config", str(tmp_path / "bad.cfg")]) == 2
    assert main(["traj", "--out", str(tmp_path / "t.csv"), "--frames", str(tmp_path / "nothing")]) == 2
    assert "deeptraj traj" in capsys.readouterr().err


def test_flow_command(workspace):
    frames = workspace / "data" / "translate_right" / "translate_right_00" / "frames"
    out = workspace / "flow" / "f.flo"
    assert main(["flow", "--prev", str(frames / "00000.pgm"), "--next", str(frames / "00001.pgm"),
                 "--mask", str(frames.parent / "masks" / "00000.pgm"), "--out", str(out)]) == 0
    flow = fileio.read_flo(out)
    assert flow.shape == (40, 40)
    assert out.with_suffix(".png").exists()
    assert np.median(flow.u[flow.u != 0]) > 1.0


def test_traj_and_canvas_commands(workspace):
    seq = workspace / "data" / "translate_down" / "translate_down_01"
    csv = workspace / "traj" / "t.csv"
    args = ["--frames", str(seq / "frames"), "--masks", str(seq / "masks"), "--config", str(workspace / "small.cfg")]
    assert main(["traj", "--out", str(csv), "--no-plot", *args]) == 0
    trajs = fileio.read_trajectories(csv)
    assert trajs and not csv.with_suffix(".png").exists()
    assert main(["canvas", "--out", str(workspace / "can"), "--format", "pgm", *args]) == 0
    stack = np.load(workspace / "can" / "stack.npy")
    assert stack.shape == (2, 33, 33)
    assert np.allclose(fileio.read_canvas_raw(workspace / "can" / "canvas_1.dtc"), stack[1].astype(np.float32))
    assert (workspace / "can" / "canvas_0.pgm").exists() and (workspace / "can" / "stack.png").exists()
    out = workspace / "can2"
    assert main(["canvas", "--out", str(out), "--traj", str(csv), "--width", "40", "--height", "40"]) == 0
    assert np.load(out / "stack.npy").shape == (1, 165, 165)
    assert main(["canvas", "--out", str(out), "--traj", str(csv)]) == 1


def test_train_and_eval(workspace, capsys):
    manifest = str(workspace / "data" / "manifest.tsv")
    common = ["--manifest", manifest, "--config", str(workspace / "small.cfg"), "--per-class-train", "2"]
    model_dir = workspace / "model"
    assert main(["train", "--out", str(model_dir), *common]) == 0
    for name in ("model.dtrj", "classes.txt", "config.txt", "losses.tsv", "splits.tsv", "loss.png"):
        assert (model_dir / name).exists(), name
    model = cnn.load_model(model_dir / "model.dtrj")
    assert model.config.class_count == 2 and model.config.input_channels == 2
    assert (model_dir / "classes.txt").read_text().split() == ["translate_down", "translate_right"]
    rep = workspace / "report"
    assert main(["eval", "--out", str(rep), "--model", str(model_dir / "model.dtrj"), *common]) == 0
    assert "accuracy" in capsys.readouterr().out
    for name in ("confusion.csv", "summary.txt", "recall.tsv", "predictions.tsv", "confusion.png"):
        assert (rep / name).exists(), name
    (workspace / "three.txt").write_text("a\nb\nc\n")
    assert main(["eval", "--out", str(rep), "--model", str(model_dir / "model.dtrj"),
                 "--classes", str(workspace / "three.txt"), *common]) == 2
