"""Evaluation products: error tables, uncertainty measures, inspection plots.

Errors are reported in pixels at the dataset's frame resolution, grouped by
node and by the frame's occluded-fraction decile, as CSV plus an SVG chart.
Belief uncertainty is summarized by the entropy of a weight-binned
histogram. Pairwise models are inspected by comparing the stored data
translations, draws from the translation sampler, and the translation
density evaluated on a grid.
"""

import csv
import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .inference import InferenceState, max_weight_estimate, run_pass
from .model import GraphModel
from .simworld import dataset as ds

ENTROPY_BINS = 20
DENSITY_GRID = 100
SAMPLER_DRAWS = 10_000


def graph_for_task(task: str) -> GraphModel:
    if task == "pendulum":
        return GraphModel.pendulum()
    if task == "spider":
        return GraphModel.spider()
    raise ValueError(f"unknown task {task!r}")


def discrete_entropy(positions, weights, bins: int = ENTROPY_BINS) -> float:
    """Entropy (nats) of the weights binned on a grid over [-1, 1]^2.

    Positions outside the box land in the edge cells, so the estimate is
    defined for any particle set.
    """
    positions = np.asarray(positions)
    weights = np.asarray(weights, dtype=np.float64)
    total = weights.sum()
    if total <= 0.0:
        return 0.0
    idx = np.clip(((positions + 1.0) / 2.0 * bins).astype(int), 0, bins - 1)
    hist = np.zeros((bins, bins))
    np.add.at(hist, (idx[:, 0], idx[:, 1]), weights / total)
    p = hist[hist > 0.0]
    return float(-(p * np.log(p)).sum())


# -- tracking a dataset ---------------------------------------------------------


def track_records(graph, pots, records, *, particles=200, passes=2, seed=0,
                  unary_samples=10):
    """Run the deployment tracker over stored sequences.

    Returns one entry per sequence: estimates [n_frames, n_nodes, 2] plus
    per-frame belief entropies [n_frames, n_nodes].
    """
    results = []
    with ad.no_grad():
        for i, record in enumerate(records):
            state = InferenceState(
                graph, particles,
                seed=int(np.random.SeedSequence([seed, 21, i])
                         .generate_state(1)[0]))
            estimates = np.empty((len(record), len(graph.nodes), 2))
            entropies = np.empty((len(record), len(graph.nodes)))
            for t, frame in enumerate(record.frames):
                normed = pots.normalize_frame(frame)
                for _ in range(passes):
                    run_pass(state, pots, normed, unary_samples=unary_samples)
                for k, node in enumerate(graph.nodes):
                    belief = state.beliefs[node]
                    estimates[t, k] = max_weight_estimate(belief)
                    entropies[t, k] = discrete_entropy(belief.positions,
                                                       belief.weights)
            pots.clear_feature_caches()
            results.append({"estimates": estimates, "entropies": entropies})
    return results


def pixel_error(estimate, truth, size) -> float:
    """Euclidean error of normalized coordinates, in pixels at `size`."""
    return float(np.linalg.norm(np.asarray(estimate) - np.asarray(truth))
                 * (size / 2.0))


def error_rows(graph, records, results, size) -> list:
    """Aggregate mean pixel error per (task, node, clutter-ratio decile).

    The decile is a property of the whole sequence: its mean clutter
    ratio, floored to a tenth.
    """
    sums = {}
    counts = {}
    for record, result in zip(records, results):
        decile = min(int(ds.clutter_ratio(record) * 10.0), 9)
        for t in range(len(record)):
            for k, node in enumerate(graph.nodes):
                err = pixel_error(result["estimates"][t, k],
                                  record.keypoints[t, k], size)
                key = (record.task, node, decile)
                sums[key] = sums.get(key, 0.0) + err
                counts[key] = counts.get(key, 0) + 1
    rows = []
    for key in sorted(sums):
        task, node, decile = key
        rows.append({"task": task, "node": node, "decile": decile,
                     "mean_error_px": sums[key] / counts[key],
                     "n": counts[key]})
    return rows


def write_error_csv(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(
            f, fieldnames=["task", "node", "decile", "mean_error_px", "n"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def error_plot(rows, path):
    """SVG chart: mean pixel error against clutter decile, one line per node."""
    fig, ax = plt.subplots(figsize=(6, 4))
    nodes = sorted({row["node"] for row in rows})
    for node in nodes:
        pts = sorted((r["decile"], r["mean_error_px"])
                     for r in rows if r["node"] == node)
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker="o", label=f"node {node}")
    ax.set_xlabel("occluded-fraction decile")
    ax.set_ylabel("mean error (px)")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -- joint posterior sampling -------------------------------------------------------


def joint_posterior_samples(graph, pots, beliefs, n, rng) -> dict:
    """Draw joint configurations from per-node beliefs linked by the edges.

    Walks the graph from its first node; the root particle is drawn by
    belief weight, and each child particle is drawn from its own belief
    reweighted by the edge's translation density against the parent draw.
    """
    order = [graph.nodes[0]]
    parent = {graph.nodes[0]: None}
    seen = {graph.nodes[0]}
    queue = [graph.nodes[0]]
    while queue:
        current = queue.pop(0)
        for nb in graph.neighbors(current):
            if nb not in seen:
                seen.add(nb)
                parent[nb] = current
                order.append(nb)
                queue.append(nb)

    out = {node: np.empty((n, 2)) for node in order}
    with ad.no_grad():
        for node in order:
            belief = beliefs[node]
            if parent[node] is None:
                idx = rng.choice(len(belief.weights), size=n,
                                 p=belief.weights / belief.weights.sum())
                out[node] = belief.positions[idx].copy()
                continue
            pot = pots.edge_potential(parent[node], node)
            for i in range(n):
                parent_val = out[parent[node]][i]
                if pot.source == node:
                    diffs = belief.positions - parent_val[None, :]
                else:
                    diffs = parent_val[None, :] - belief.positions
                dens = pot.density(Tensor(diffs)).values
                w = belief.weights * dens
                total = w.sum()
                if total <= 0.0 or not np.isfinite(total):
                    w = belief.weights / belief.weights.sum()
                else:
                    w = w / total
                idx = rng.choice(len(w), p=w)
                out[node][i] = belief.positions[idx]
    return out


# -- pairwise model inspection --------------------------------------------------------


def data_translations(graph, records, source, dest) -> np.ndarray:
    """Observed keypoint translations (source - dest) across a dataset."""
    s_idx = graph.nodes.index(source)
    d_idx = graph.nodes.index(dest)
    diffs = [record.keypoints[:, s_idx] - record.keypoints[:, d_idx]
             for record in records]
    return np.concatenate(diffs, axis=0)


def pairwise_inspection(graph, pots, records, source, dest, out_dir, *,
                        seed=0, draws=SAMPLER_DRAWS, grid=DENSITY_GRID):
    """Write CSV + SVG comparing data, sampler draws and learned density.

    Produces translations_data.csv/svg, translations_sampled.csv/svg and
    density_grid.csv/svg under out_dir, named with the edge. Returns the
    written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s, d = graph.edge_between(source, dest)
    tag = f"{s}-{d}"
    pot = pots.edge_potential(s, d)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 23]))
    paths = []

    data = data_translations(graph, records, s, d)
    with ad.no_grad():
        sampled = pot.sample_translations(draws, rng).values
        axis = np.linspace(-1.0, 1.0, grid)
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        density = pot.density(Tensor(pts)).values.reshape(grid, grid)

    def dump_points(name, pts_array):
        path = out / f"{name}_{tag}.csv"
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "y"])
            writer.writerows(np.round(pts_array, 8).tolist())
        paths.append(path)

    dump_points("translations_data", data)
    dump_points("translations_sampled", sampled)

    density_csv = out / f"density_grid_{tag}.csv"
    with open(density_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "y", "density"])
        for i in range(grid):
            for j in range(grid):
                writer.writerow([round(float(axis[i]), 8),
                                 round(float(axis[j]), 8),
                                 round(float(density[i, j]), 10)])
    paths.append(density_csv)

    for name, pts_array in (("translations_data", data),
                            ("translations_sampled", sampled)):
        fig, ax = plt.subplots(figsize=(4, 4))
        ax.hist2d(pts_array[:, 0], pts_array[:, 1], bins=60,
                  range=[[-1, 1], [-1, 1]])
        ax.set_title(f"{name.replace('_', ' ')} {tag}", fontsize=9)
        ax.set_aspect("equal")
        fig.tight_layout()
        svg = out / f"{name}_{tag}.svg"
        fig.savefig(svg)
        plt.close(fig)
        paths.append(svg)

    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(density.T, origin="lower", extent=(-1, 1, -1, 1))
    ax.set_title(f"translation density {tag}", fontsize=9)
    fig.tight_layout()
    svg = out / f"density_grid_{tag}.svg"
    fig.savefig(svg)
    plt.close(fig)
    paths.append(svg)
    return paths


# -- tracking output ------------------------------------------------------------------


def write_track_jsonl(graph, records, results, stream, names=None):
    """One JSON line per frame: estimates and belief entropies per node."""
    for i, (record, result) in enumerate(zip(records, results)):
        name = names[i] if names else i
        for t in range(len(record)):
            line = {
                "seq": name,
                "frame": t,
                "estimates": {
                    node: [float(x) for x in result["estimates"][t, k]]
                    for k, node in enumerate(graph.nodes)},
                "entropy": {
                    node: float(result["entropies"][t, k])
                    for k, node in enumerate(graph.nodes)},
            }
            stream.write(json.dumps(line) + "\n")
