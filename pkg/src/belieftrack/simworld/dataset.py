"""Sequence container format and dataset generation.

A dataset directory holds a `manifest.txt` (key=value) plus one
`seq_NNNNN.bin` per sequence. Each sequence file is:

    magic "BTSQ" | u32 version
    u32 header length | header JSON (task, frame count, size, node count,
                                     per-frame clutter fractions, seed, ...)
    per frame: u32 length | PNG bytes (RGB frame)
    per frame: u32 length | PNG bytes (L-mode clutter footprint mask)
    keypoints as little-endian f64 [n_frames * node_count * 2]
    sha256 digest of everything above (32 bytes)

All integers are little-endian. Truncated files and digest mismatches
raise DatasetError.

A sequence's clutter ratio is the fraction of image pixels covered by
distractor shapes, averaged over its frames. Generation draws the object
trajectory once per sequence and then resamples the clutter until the
ratio lands in the sequence's assigned bin (round-robin over the bin
list). Proposals start from the per-layer binomial count distribution
when the bin is within its reach and otherwise target the bin with
adaptively corrected item counts; a bin the budget cannot reach raises
DatasetError naming the bin. Among cluttered sequences, every other one
keeps its clutter static.
"""

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..config import parse_kv
from . import clutter as clut
from . import pendulum as pend
from . import render
from . import spider as spid

MAGIC = b"BTSQ"
VERSION = 1
RETRY_BUDGET = 400
BINOMIAL_TRIES = 25          # proposals from the layer count distribution
ITEM_COVERAGE_GUESS = 0.004  # rough canvas share of one item, seeds the search

PENDULUM_NODES = ("0", "1", "2")
SPIDER_NODES = ("0", "1", "2", "3", "4", "5", "6")

PENDULUM_BINS = ((0.0, 0.0), (0.0, 0.04), (0.04, 0.1))
SPIDER_BINS = ((0.0, 0.0), (0.0, 0.04), (0.04, 0.1), (0.1, 0.2), (0.2, 0.3))
TEST_DECILES = tuple((i / 10.0, (i + 1) / 10.0) for i in range(9)) + ((0.9, 0.95),)


class DatasetError(Exception):
    pass


@dataclass
class SequenceRecord:
    task: str
    frames: list               # [3, H, W] uint8 arrays
    masks: list                # [H, W] bool clutter footprints
    keypoints: np.ndarray      # [n_frames, node_count, 2]
    clutter: np.ndarray        # [n_frames] footprint fraction per frame
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.frames)


def clutter_ratio(record: SequenceRecord) -> float:
    """Fraction of pixels covered by clutter, averaged over the sequence."""
    return float(np.mean(record.clutter)) if len(record) else 0.0


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(array), mode).save(buf, format="PNG")
    return buf.getvalue()


def save_sequence(path, record: SequenceRecord):
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", VERSION))
    header = dict(record.meta)
    header.update({
        "task": record.task,
        "n_frames": len(record.frames),
        "size": int(record.frames[0].shape[1]) if record.frames else 0,
        "node_count": int(record.keypoints.shape[1]),
        "clutter": [float(x) for x in record.clutter],
    })
    blob = json.dumps(header, sort_keys=True).encode()
    body.write(struct.pack("<I", len(blob)))
    body.write(blob)
    for frame in record.frames:
        png = _png_bytes(frame.transpose(1, 2, 0), "RGB")
        body.write(struct.pack("<I", len(png)))
        body.write(png)
    for mask in record.masks:
        png = _png_bytes((mask.astype(np.uint8) * 255), "L")
        body.write(struct.pack("<I", len(png)))
        body.write(png)
    body.write(record.keypoints.astype("<f8").tobytes())
    payload = body.getvalue()
    digest = hashlib.sha256(payload).digest()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(digest)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DatasetError(f"{self.path}: truncated sequence file")
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_sequence(path) -> SequenceRecord:
    raw = Path(path).read_bytes()
    if len(raw) < 32 + len(MAGIC) + 4:
        raise DatasetError(f"{path}: truncated sequence file")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise DatasetError(f"{path}: checksum mismatch")
    r = _Reader(payload, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise DatasetError(f"{path}: bad magic")
    version = r.u32()
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    header = json.loads(r.take(r.u32()).decode())
    n = header["n_frames"]
    nodes = header["node_count"]
    frames = []
    for _ in range(n):
        png = r.take(r.u32())
        with Image.open(io.BytesIO(png)) as img:
            frames.append(np.asarray(img.convert("RGB"),
                                     dtype=np.uint8).transpose(2, 0, 1))
    masks = []
    for _ in range(n):
        png = r.take(r.u32())
        with Image.open(io.BytesIO(png)) as img:
            masks.append(np.asarray(img) > 127)
    kp = np.frombuffer(r.take(n * nodes * 2 * 8), dtype="<f8")
    keypoints = kp.reshape(n, nodes, 2).copy()
    clutter = np.array(header.pop("clutter"), dtype=np.float64)
    meta = {k: v for k, v in header.items()
            if k not in ("task", "n_frames", "size", "node_count")}
    return SequenceRecord(header["task"], frames, masks, keypoints,
                          clutter, meta)


# -- generation -----------------------------------------------------------------


def _task_geometry(task, size):
    if task == "pendulum":
        scale = size / (2.0 * pend.WORLD_HALFWIDTH)
        to_px = lambda p: render.pendulum_to_px(p, size)
    else:
        scale = size / render.SPIDER_CANVAS
        to_px = lambda p: render.spider_to_px(p, size)
    return to_px, scale


def _clone(item):
    return clut.ClutterItem(
        kind=item.kind, color=item.color, position=item.position.copy(),
        velocity=item.velocity.copy(), angle=item.angle, spin=item.spin,
        length=item.length, width=item.width, radius=item.radius,
        dynamic=item.dynamic)


def _render_sequence(task, states, size, behind, front):
    """Full render pass: frames, footprint masks, per-frame ratios, keypoints."""
    frame_fn = (render.render_pendulum_frame if task == "pendulum"
                else render.render_spider_frame)
    kp_fn = pend.keypoints if task == "pendulum" else spid.keypoints
    behind = [_clone(i) for i in behind]
    front = [_clone(i) for i in front]
    frames, masks, ratios, kps = [], [], [], []
    for state in states:
        frame, _object_mask, footprint = frame_fn(state, size, behind, front)
        frames.append(frame)
        masks.append(footprint)
        ratios.append(float(footprint.mean()))
        kps.append(kp_fn(state))
        clut.step_items(behind)
        clut.step_items(front)
    return frames, masks, np.array(ratios), np.array(kps)


def _ratio_only(task, n_frames, size, behind, front):
    """Mean clutter ratio of a proposal, footprint masks only."""
    to_px, scale = _task_geometry(task, size)
    behind = [_clone(i) for i in behind]
    front = [_clone(i) for i in front]
    items = behind + front
    total = 0.0
    for _ in range(n_frames):
        total += float(render.clutter_mask(items, size, to_px, scale).mean())
        clut.step_items(items)
    return total / max(n_frames, 1)


def _sample_layers(task, rng, dynamic, counts=None):
    sampler = (clut.sample_pendulum_layer if task == "pendulum"
               else clut.sample_spider_layer)
    behind_count, front_count = counts if counts is not None else (None, None)
    return (sampler(rng, behind_count, dynamic),
            sampler(rng, front_count, dynamic))


def _split_count(rng, total):
    behind = int(rng.binomial(total, 0.5))
    return behind, total - behind


def _needed_items(ratio, coverage):
    """Item count whose expected footprint union is `ratio`."""
    ratio = min(max(ratio, 1e-6), 0.99)
    return max(1, int(np.ceil(np.log1p(-ratio) / np.log1p(-coverage))))


def _binomial_reach(task):
    n = (clut.PENDULUM_LAYER_COUNT if task == "pendulum"
         else clut.SPIDER_LAYER_COUNT)[0]
    return 1.0 - (1.0 - ITEM_COVERAGE_GUESS) ** (2 * n)


def _target_clutter(task, states, n_frames, size, rng, target_bin, dynamic):
    """Resample clutter until its mean ratio lands in (lo, hi].

    Proposals come from the per-layer count distribution while the bin is
    within its reach, then from item counts corrected multiplicatively
    toward the bin midpoint. Raises DatasetError when the budget ends
    without a hit.
    """
    lo, hi = target_bin
    if hi <= 0.0:
        return [], [], 0
    mid = (lo + hi) / 2.0
    use_binomial = lo < _binomial_reach(task)
    k_total = _needed_items(mid, ITEM_COVERAGE_GUESS)
    for attempt in range(RETRY_BUDGET):
        if use_binomial and attempt < BINOMIAL_TRIES:
            counts = None
        else:
            counts = _split_count(rng, k_total)
        behind, front = _sample_layers(task, rng, dynamic, counts)
        ratio = _ratio_only(task, n_frames, size, behind, front)
        if lo < ratio <= hi:
            return behind, front, attempt + 1
        k_now = max(len(behind) + len(front), 1)
        if 0.0 < ratio < 0.99:
            per_item = 1.0 - (1.0 - ratio) ** (1.0 / k_now)
            corrected = _needed_items(mid, max(per_item, 1e-6))
        else:
            corrected = k_now * 2 + 1
        k_total = int(np.clip(corrected, max(1, k_now // 3), k_now * 3 + 1))
    raise DatasetError(
        f"clutter ratio bin ({lo}, {hi}] not reached in {RETRY_BUDGET} draws")


def generate_sequence(task, n_frames, size, rng, *, target_bin=None,
                      use_clutter=True, dynamic=True) -> SequenceRecord:
    """One simulated sequence, clutter resampled into the target ratio bin."""
    if task == "pendulum":
        states = pend.simulate(n_frames, rng)
    elif task == "spider":
        states = spid.simulate(n_frames, rng)
    else:
        raise ValueError(f"unknown task {task!r}")

    attempts = 0
    if not use_clutter or (target_bin is not None and target_bin[1] <= 0.0):
        behind, front = [], []
    elif target_bin is not None:
        behind, front, attempts = _target_clutter(
            task, states, n_frames, size, rng, target_bin, dynamic)
    else:
        behind, front = _sample_layers(task, rng, dynamic)

    frames, masks, ratios, kps = _render_sequence(task, states, size,
                                                  behind, front)
    meta = {"attempts": attempts, "dynamic": bool(dynamic)}
    if target_bin is not None:
        meta["bin_lo"] = float(target_bin[0])
        meta["bin_hi"] = float(target_bin[1])
    return SequenceRecord(task, frames, masks, kps, ratios, meta=meta)


def channel_statistics(records) -> tuple:
    """Per-channel mean and std over every frame, in [0, 1] scale."""
    sums = np.zeros(3)
    squares = np.zeros(3)
    count = 0
    for record in records:
        for frame in record.frames:
            x = frame.astype(np.float64) / 255.0
            sums += x.sum(axis=(1, 2))
            squares += (x * x).sum(axis=(1, 2))
            count += x.shape[1] * x.shape[2]
    mean = sums / count
    var = np.maximum(squares / count - mean * mean, 1e-12)
    return mean, np.sqrt(var)


def generate_dataset(out_dir, task, n_sequences, n_frames, size, seed, *,
                     bins=None, use_clutter=True) -> dict:
    """Write a dataset directory; returns the manifest mapping.

    Bins are assigned round-robin; among the cluttered sequences every
    other one keeps its clutter static.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if bins is None:
        bins = PENDULUM_BINS if task == "pendulum" else SPIDER_BINS
    records = []
    cluttered_seen = 0
    for i in range(n_sequences):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17, i]))
        target = bins[i % len(bins)] if bins else None
        cluttered = use_clutter and (target is None or target[1] > 0.0)
        dynamic = True
        if cluttered:
            dynamic = cluttered_seen % 2 == 0
            cluttered_seen += 1
        record = generate_sequence(task, n_frames, size, rng,
                                   target_bin=target, use_clutter=use_clutter,
                                   dynamic=dynamic)
        record.meta["seed"] = seed
        record.meta["index"] = i
        save_sequence(out / f"seq_{i:05d}.bin", record)
        records.append(record)

    mean, std = channel_statistics(records)
    manifest = {
        "task": task,
        "sequences": str(n_sequences),
        "frames_per_sequence": str(n_frames),
        "size": str(size),
        "seed": str(seed),
        "use_clutter": str(int(use_clutter)),
        "channel_mean": ",".join(f"{x:.8f}" for x in mean),
        "channel_std": ",".join(f"{x:.8f}" for x in std),
        "bins": ";".join(f"{lo},{hi}" for lo, hi in bins) if bins else "",
    }
    with open(out / "manifest.txt", "w") as f:
        for key, value in manifest.items():
            f.write(f"{key}={value}\n")
    return manifest


def load_manifest(dataset_dir) -> dict:
    path = Path(dataset_dir) / "manifest.txt"
    if not path.exists():
        raise DatasetError(f"{dataset_dir}: no manifest.txt")
    return parse_kv(path.read_text())


def sequence_paths(dataset_dir) -> list:
    return sorted(Path(dataset_dir).glob("seq_*.bin"))


def load_dataset(dataset_dir):
    """-> (manifest, [SequenceRecord...]) for a directory."""
    manifest = load_manifest(dataset_dir)
    return manifest, [load_sequence(p) for p in sequence_paths(dataset_dir)]


def manifest_channel_stats(manifest) -> tuple:
    mean = np.array([float(x) for x in manifest["channel_mean"].split(",")])
    std = np.array([float(x) for x in manifest["channel_std"].split(",")])
    return mean, std


def node_ids_for(task) -> tuple:
    return PENDULUM_NODES if task == "pendulum" else SPIDER_NODES


def to_training_sequence(record: SequenceRecord, node_ids=None):
    """Adapt a stored sequence to the trainer's frame/truth interface."""
    from ..training import Sequence
    if node_ids is None:
        node_ids = node_ids_for(record.task)
    if len(node_ids) != record.keypoints.shape[1]:
        raise ValueError("node id count does not match stored keypoints")
    truth = [{node: record.keypoints[t, k].copy()
              for k, node in enumerate(node_ids)}
             for t in range(len(record))]
    return Sequence(list(record.frames), truth,
                    name=f"{record.task}:{record.meta.get('index', '?')}")
