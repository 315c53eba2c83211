import numpy as np
import pytest

from deeptraj.dataset import (MOTION_FAMILIES, SynthSpec, VideoRecord, class_names, load_video,
                              motion_path, plan_segments, read_manifest, split_dataset, synth_generate,
                              write_manifest)
from deeptraj.errors import DataError
from deeptraj.fileio import write_pgm

from oracles import block_match


def test_plan_segments_200_3():
    assert plan_segments(200, 3).boundaries == ((0, 66), (66, 132), (132, 200))


def test_plan_segments_cover_video():
    for frames in range(6, 60):
        for n in range(1, frames // 2 + 1):
            b = plan_segments(frames, n).boundaries
            assert b[0][0] == 0 and b[-1][1] == frames
            assert all(e - s >= 2 for s, e in b)
            assert all(b[i][1] == b[i + 1][0] for i in range(n - 1))


def test_plan_segments_too_short():
    with pytest.raises(DataError, match="video too short"):
        plan_segments(5, 3)


def records(classes=3, per_class=10):
    return [VideoRecord(f"/v/{c}/{k}", None, f"c{c}") for c in range(classes) for k in range(per_class)]


def test_split_six_per_class():
    recs = records(3, 30)
    out = split_dataset(recs, per_class_train=6, seed=4)
    for label in class_names(recs):
        splits = [r.split for r in out if r.label == label]
        assert splits.count("train") == 6 and splits.count("test") == 24
    assert [r.frames_dir for r in out] == [r.frames_dir for r in recs]


def test_split_seeded():
    recs = records()
    assert split_dataset(recs, seed=1) == split_dataset(recs, seed=1)
    assert split_dataset(recs, seed=1) != split_dataset(recs, seed=2)


def test_split_fraction_and_errors():
    out = split_dataset(records(2, 10), train_fraction=0.5)
    assert sum(r.split == "train" for r in out) == 10
    with pytest.raises(DataError, match="'c1'"):
        split_dataset(records(2, 10)[:15], per_class_train=9)


def write_video(root, frames, masks=None):
    (root / "frames").mkdir(parents=True)
    for k, f in enumerate(frames):
        write_pgm(root / "frames" / f"{k:05d}.pgm", f)
    if masks is not None:
        (root / "masks").mkdir()
        for k, m in enumerate(masks):
            write_pgm(root / "masks" / f"{k:05d}.pgm", m)
    return VideoRecord(root / "frames", None if masks is None else root / "masks", "x")


def test_load_video_180x144(tmp_path):
    rng = np.random.default_rng(0)
    frames = [rng.integers(0, 256, (144, 180)) / 255.0 for _ in range(4)]
    masks = [(rng.random((144, 180)) > 0.5).astype(float) for _ in range(4)]
    got, got_masks = load_video(write_video(tmp_path, frames, masks))
    assert len(got) == 4 and got[0].shape == (144, 180)
    assert all(np.array_equal(a, b) for a, b in zip(got, frames))
    assert all(np.array_equal(a, b) for a, b in zip(got_masks, masks))


def test_load_video_errors(tmp_path):
    rec = write_video(tmp_path / "a", [np.zeros((8, 8))] * 3, [np.ones((8, 8))] * 2)
    with pytest.raises(DataError, match="2 masks for 3 frames"):
        load_video(rec)
    rec = write_video(tmp_path / "b", [np.zeros((8, 8))] * 3)
    (tmp_path / "b" / "frames" / "00001.pgm").unlink()
    with pytest.raises(DataError, match="non-contiguous"):
        load_video(rec)
    with pytest.raises(DataError):
        load_video(VideoRecord(tmp_path / "nothing", None, "x"))


def test_manifest_round_trip(tmp_path):
    recs = [VideoRecord(tmp_path / "a" / "frames", tmp_path / "a" / "masks", "walk", "train"),
            VideoRecord(tmp_path / "b" / "frames", None, "run")]
    write_manifest(tmp_path / "m.tsv", recs)
    assert (tmp_path / "m.tsv").read_text().splitlines()[1] == "b/frames\t-\trun\t-"
    assert read_manifest(tmp_path / "m.tsv") == recs
    (tmp_path / "bad.tsv").write_text("only\ttwo\n")
    with pytest.raises(DataError):
        read_manifest(tmp_path / "bad.tsv")


def test_motion_paths():
    p = motion_path("translate_right", 5, 64, 2.0)
    assert np.array_equal(np.diff(p[:, 0]), [2.0] * 4) and np.all(p[:, 1] == p[0, 1])
    p = motion_path("orbit", 40, 64, 2.0)
    r = np.hypot(p[:, 0] - 31.5, p[:, 1] - 31.5)
    assert np.allclose(r, r[0])
    for fam in MOTION_FAMILIES:
        p = motion_path(fam, 18, 64, 2.0, (2.0, -2.0), 0.5)
        assert p.shape == (18, 2) and p.min() > 9 and p.max() < 54
    with pytest.raises(ValueError):
        motion_path("spin", 5, 64, 1.0)


def test_synth_generate(tmp_path):
    spec = SynthSpec(class_count=2, sequences_per_class=2, frame_count=6, frame_size=48, noise=0.0)
    recs = synth_generate(spec, tmp_path)
    assert [r.label for r in recs] == ["translate_right"] * 2 + ["translate_down"] * 2
    assert read_manifest(tmp_path / "manifest.tsv") == recs
    for rec in recs:
        frames, masks = load_video(rec)
        centres = np.loadtxt(rec.frames_dir.parent / "centres.tsv", skiprows=1)
        assert len(frames) == 6 and frames[0].shape == (48, 48)
        for k in range(5):
            x, y = np.floor(centres[k] + 0.5).astype(int)
            dx, dy = block_match(frames[k], frames[k + 1], x, y, half=4, search=3)
            assert (dx, dy) == ((2, 0) if rec.label == "translate_right" else (0, 2))
            assert masks[k][y, x] == 1.0 and abs(masks[k].sum() - np.pi * 81) < 40


def test_synth_is_seeded(tmp_path):
    spec = SynthSpec(class_count=2, sequences_per_class=1, frame_count=3, frame_size=32)
    synth_generate(spec, tmp_path / "a")
    synth_generate(spec, tmp_path / "b")
    for rel in ("translate_right/translate_right_00/frames/00002.pgm", "translate_down/translate_down_00/centres.tsv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(class_count=8)
    with pytest.raises(ValueError):
        SynthSpec(class_count=2, motions=("orbit", "orbit"))
