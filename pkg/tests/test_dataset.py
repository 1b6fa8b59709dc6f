"""Sequence container and dataset generation tests."""

import numpy as np
import pytest

from belieftrack.model import GraphModel
from belieftrack.simworld import dataset as ds


def tiny_record(n=3, size=24, nodes=3):
    rng = np.random.default_rng(0)
    frames = [rng.integers(0, 256, size=(3, size, size), dtype=np.uint8)
              for _ in range(n)]
    masks = [rng.random((size, size)) > 0.5 for _ in range(n)]
    keypoints = rng.uniform(-1, 1, size=(n, nodes, 2))
    ratios = rng.uniform(0, 0.3, size=n)
    return ds.SequenceRecord("pendulum", frames, masks, keypoints, ratios,
                             meta={"index": 4})


def test_sequence_round_trip(tmp_path):
    record = tiny_record()
    path = tmp_path / "seq_00000.bin"
    ds.save_sequence(path, record)
    loaded = ds.load_sequence(path)
    assert loaded.task == "pendulum"
    assert len(loaded) == len(record)
    for a, b in zip(record.frames, loaded.frames):
        assert np.array_equal(a, b)            # PNG storage is lossless
    for a, b in zip(record.masks, loaded.masks):
        assert np.array_equal(a, b)
    assert np.allclose(loaded.keypoints, record.keypoints)
    assert np.allclose(loaded.clutter, record.clutter)
    assert loaded.meta["index"] == 4


def test_truncated_file_raises(tmp_path):
    path = tmp_path / "seq.bin"
    ds.save_sequence(path, tiny_record())
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ds.DatasetError, match="truncated|checksum"):
        ds.load_sequence(path)
    path.write_bytes(raw[:10])
    with pytest.raises(ds.DatasetError, match="truncated"):
        ds.load_sequence(path)


def test_corrupted_byte_raises_checksum_error(tmp_path):
    path = tmp_path / "seq.bin"
    ds.save_sequence(path, tiny_record())
    raw = bytearray(path.read_bytes())
    raw[100] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ds.DatasetError, match="checksum"):
        ds.load_sequence(path)


def test_bad_magic_and_version(tmp_path):
    import hashlib
    import struct
    path = tmp_path / "seq.bin"
    payload = b"XXXX" + struct.pack("<I", 1)
    path.write_bytes(payload + hashlib.sha256(payload).digest())
    with pytest.raises(ds.DatasetError, match="magic"):
        ds.load_sequence(path)
    payload = ds.MAGIC + struct.pack("<I", 99)
    path.write_bytes(payload + hashlib.sha256(payload).digest())
    with pytest.raises(ds.DatasetError, match="version"):
        ds.load_sequence(path)


def test_channel_statistics_on_constant_frames():
    frame = np.zeros((3, 8, 8), dtype=np.uint8)
    frame[0] = 255                      # pure red everywhere
    record = ds.SequenceRecord(
        "pendulum", [frame], [np.zeros((8, 8), bool)],
        np.zeros((1, 3, 2)), np.zeros(1))
    mean, std = ds.channel_statistics([record])
    assert np.allclose(mean, [1.0, 0.0, 0.0])
    assert np.all(std < 1e-5)


def test_generate_pendulum_dataset_round_trip(tmp_path):
    out = tmp_path / "data"
    manifest = ds.generate_dataset(out, "pendulum", n_sequences=3,
                                   n_frames=2, size=32, seed=7)
    assert (out / "manifest.txt").exists()
    assert len(ds.sequence_paths(out)) == 3
    loaded_manifest, records = ds.load_dataset(out)
    assert loaded_manifest["task"] == "pendulum"
    assert int(loaded_manifest["sequences"]) == 3
    mean, std = ds.manifest_channel_stats(loaded_manifest)
    assert mean.shape == (3,) and std.shape == (3,)
    assert np.all(mean > 0.0) and np.all(mean <= 1.0)
    assert np.all(std > 0.0)
    for record in records:
        assert record.task == "pendulum"
        assert len(record) == 2
        assert record.keypoints.shape == (2, 3, 2)
        assert record.frames[0].shape == (3, 32, 32)


def test_generate_spider_sequence_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    record = ds.generate_sequence("spider", 2, 64, rng,
                                  target_bin=(0.0, 0.04))
    assert record.keypoints.shape == (2, 7, 2)
    assert record.frames[0].shape == (3, 64, 64)
    path = tmp_path / "seq.bin"
    ds.save_sequence(path, record)
    loaded = ds.load_sequence(path)
    assert np.allclose(loaded.keypoints, record.keypoints)


def test_zero_bin_yields_no_clutter():
    rng = np.random.default_rng(11)
    record = ds.generate_sequence("pendulum", 3, 32, rng,
                                  target_bin=(0.0, 0.0))
    assert np.all(record.clutter == 0.0)
    assert not any(mask.any() for mask in record.masks)


def test_ratio_bins_are_hit_and_recorded():
    for bin_ in ((0.0, 0.04), (0.04, 0.1)):
        rng = np.random.default_rng(21)
        record = ds.generate_sequence("pendulum", 3, 64, rng,
                                      target_bin=bin_)
        ratio = ds.clutter_ratio(record)
        assert bin_[0] < ratio <= bin_[1]
        assert record.meta["bin_hi"] == bin_[1]
        # the stored per-frame values recount the stored masks
        for frac, mask in zip(record.clutter, record.masks):
            assert frac == pytest.approx(mask.mean())


def test_ratio_targeting_reaches_a_high_decile():
    rng = np.random.default_rng(22)
    record = ds.generate_sequence("pendulum", 2, 48, rng,
                                  target_bin=(0.5, 0.6))
    assert 0.5 < ds.clutter_ratio(record) <= 0.6


def test_unreachable_bin_is_a_hard_error(monkeypatch):
    monkeypatch.setattr(ds, "RETRY_BUDGET", 3)
    rng = np.random.default_rng(23)
    with pytest.raises(ds.DatasetError, match=r"\(1.5, 2.0\]"):
        ds.generate_sequence("pendulum", 1, 32, rng, target_bin=(1.5, 2.0))


def test_cluttered_sequences_alternate_static_and_dynamic(tmp_path):
    out = tmp_path / "data"
    ds.generate_dataset(out, "pendulum", n_sequences=6, n_frames=2,
                        size=32, seed=13)
    _, records = ds.load_dataset(out)
    cluttered = [r for r in records if ds.clutter_ratio(r) > 0.0]
    assert len(cluttered) == 4          # bins cycle zero, low, mid
    assert [r.meta["dynamic"] for r in cluttered] == [True, False,
                                                      True, False]


def test_unknown_task_rejected():
    with pytest.raises(ValueError, match="unknown task"):
        ds.generate_sequence("car", 2, 32, np.random.default_rng(0))


def test_to_training_sequence_adapts_record():
    record = tiny_record()
    graph = GraphModel.pendulum()
    seq = ds.to_training_sequence(record, graph.nodes)
    assert len(seq.frames) == len(record)
    assert set(seq.truth[0]) == set(graph.nodes)
    assert np.allclose(seq.truth[1]["2"], record.keypoints[1, 2])
    with pytest.raises(ValueError, match="node id count"):
        ds.to_training_sequence(record, ("a", "b"))


def test_keypoints_land_on_rendered_joints():
    # the normalized keypoints, mapped to pixels, must hit object pixels
    from belieftrack.simworld import pendulum as pend
    from belieftrack.simworld import render
    state = np.array([0.9, -0.3, 0.0, 0.0])
    size = 128
    _, mask, _ = render.render_pendulum_frame(state, size)
    for kp in pend.keypoints(state):
        px = int((kp[0] + 1) / 2 * size)
        py = int((kp[1] + 1) / 2 * size)
        assert mask[py, px]
