"""Maximum-likelihood training of the potential networks.

One training step covers one node of one frame batch: the messages into the
node and its belief are recomputed on the tape (with the ground-truth
neighbor substitution active), and the negative log of three kernel density
estimates at the node's true position is minimized:

  * the belief reweighted by the destination-unary factor alone,
  * by the sender-unary factor alone,
  * by the neighbor-smoothing factor alone.

Each factor family is normalized over the belief's particles before the
density is formed, so every network receives gradients only through the
factor it produced; the families never rescale each other. Losses are
averaged over a lockstep batch of sequences, one Adam event updates every
parameter block the tape touched, and the new particles are committed as
plain numpy before the next node is processed.

Validation runs the deployment path (no substitution, no uniform particle
injection) and scores mean Euclidean estimate error against the truth.
"""

import json
import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ConfigError, parse_kv
from .inference import (
    InferenceState,
    belief_update,
    commit_node,
    gaussian_mixture_density,
    max_weight_estimate,
    message_update,
    refresh_isolated_belief,
    run_pass,
)
from .model import GraphModel
from .potentials import PotentialSet

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-300


@dataclass
class Sequence:
    """Frames plus per-frame ground truth keypoints for every node."""
    frames: list                 # [C, H, W] arrays, uint8 or float
    truth: list                  # dict node -> (2,) array, one per frame
    name: str = ""

    def __len__(self):
        return len(self.frames)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 6
    particles: int = 100
    passes_per_frame: int = 1
    unary_samples: int = 10
    lr: float = 1e-3
    bandwidth: float = 0.05
    seed: int = 0
    patience: int = 0            # 0 disables early stopping
    val_particles: int = 100
    val_passes: int = 1
    log_path: str = ""
    checkpoint_path: str = ""

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        raw = parse_kv(open(path).read())
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict) -> "TrainConfig":
        kwargs = {}
        typed = {f.name: f.type for f in fields(cls)}
        for key, value in raw.items():
            if key not in typed:
                raise ConfigError(f"unknown training option {key!r}")
            kind = typed[key]
            try:
                if kind is int or kind == "int":
                    kwargs[key] = int(value)
                elif kind is float or kind == "float":
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = value
            except ValueError as err:
                raise ConfigError(f"bad value for {key!r}: {value!r}") from err
        return cls(**kwargs)


def node_loss(belief_result, truth_position, bandwidth) -> Tensor:
    """Negative log likelihood of the truth under the three factor families."""
    positions = belief_result.positions
    total = None
    for name in ("unary_dest", "unary_src", "neigh"):
        family = belief_result.families[name]
        weights = ad.div(family, ad.tsum(family))
        density = gaussian_mixture_density(positions, weights, truth_position,
                                           bandwidth)
        term = ad.log(ad.add(density, DENSITY_FLOOR))
        total = term if total is None else ad.add(total, term)
    return ad.neg(total)


def _node_tape(state, pots, node, frame, truth, unary_samples):
    """Recompute the messages into a node and its belief on the tape."""
    senders = state.graph.neighbors(node)
    if senders:
        messages = [message_update(state, pots, s, node, frame, training=True,
                                   ground_truth=truth,
                                   unary_samples=unary_samples)
                    for s in senders]
        belief = belief_update(state, pots, node, frame, messages,
                               train_own_unary=True)
    else:
        messages = []
        belief = refresh_isolated_belief(state, pots, node, frame,
                                         training=True)
    return messages, belief


def step_touched_blocks(pots: PotentialSet, lr: float) -> list:
    """Adam-update every block the last backward pass reached."""
    stepped = []
    for block in pots.blocks():
        if block.has_grad():
            if ad.adam_step(block, lr=lr):
                stepped.append(block.name)
    return stepped


def train_pass(states, pots, frames, truths, config: TrainConfig) -> dict:
    """One message pass over a lockstep batch, with one update event per node.

    states/frames/truths are parallel lists (one entry per sequence in the
    batch); frames must already be normalized. Returns the mean loss per
    node.
    """
    graph = states[0].graph
    node_losses = {}
    for node in graph.nodes:
        taped = []
        losses = []
        for state, frame, truth in zip(states, frames, truths):
            messages, belief = _node_tape(state, pots, node, frame, truth,
                                          config.unary_samples)
            losses.append(node_loss(belief, truth[node], config.bandwidth))
            taped.append((state, belief, messages))
        total = losses[0]
        for term in losses[1:]:
            total = ad.add(total, term)
        total = ad.div(total, float(len(losses)))

        if np.isfinite(total.values):
            total.backward()
            step_touched_blocks(pots, config.lr)
        else:
            log.warning("non-finite loss at node %s, update skipped", node)
        pots.zero_grads()

        for state, belief, messages in taped:
            commit_node(state, belief, messages)
        pots.clear_feature_caches()
        node_losses[node] = float(total.values)
    for state in states:
        state.iteration += 1
    return node_losses


def _derived_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def evaluate_sequences(graph, pots, sequences, *, particles, passes, seed,
                       unary_samples=10) -> float:
    """Mean Euclidean error of the deployment tracker over whole sequences."""
    errors = []
    with ad.no_grad():
        for i, seq in enumerate(sequences):
            state = InferenceState(graph, particles,
                                   seed=_derived_seed(seed, 7, i))
            for frame, truth in zip(seq.frames, seq.truth):
                normed = pots.normalize_frame(frame)
                for _ in range(passes):
                    run_pass(state, pots, normed, unary_samples=unary_samples)
                for node in graph.nodes:
                    est = max_weight_estimate(state.beliefs[node])
                    errors.append(float(np.linalg.norm(est - truth[node])))
            pots.clear_feature_caches()
    return float(np.mean(errors)) if errors else float("nan")


def fit(graph: GraphModel, pots: PotentialSet, train_sequences,
        val_sequences=(), config: TrainConfig | None = None,
        log_stream=None) -> list:
    """Train the potential set in place; returns the per-epoch history.

    Shuffles sequences each epoch, walks them in lockstep batches (any
    remainder smaller than the batch size is dropped), runs
    `passes_per_frame` update passes on each frame, and validates with the
    deployment tracker after every epoch. When a checkpoint path is set the
    best-validation parameters are saved (final parameters if there is no
    validation data).
    """
    if config is None:
        config = TrainConfig()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 9]))
    history = []
    best_val = float("inf")
    stale_epochs = 0

    sink = None
    if log_stream is not None:
        sink = log_stream
    elif config.log_path:
        sink = open(config.log_path, "a")

    def emit(record):
        if sink is not None:
            sink.write(json.dumps(record) + "\n")
            sink.flush()

    for epoch in range(config.epochs):
        started = time.monotonic()
        order = rng.permutation(len(train_sequences))
        usable = (len(order) // config.batch_size) * config.batch_size
        loss_sums = {node: 0.0 for node in graph.nodes}
        loss_counts = {node: 0 for node in graph.nodes}

        for start in range(0, usable, config.batch_size):
            batch = [train_sequences[int(i)]
                     for i in order[start:start + config.batch_size]]
            states = [InferenceState(
                graph, config.particles,
                seed=_derived_seed(config.seed, 5, epoch, int(i)))
                for i in order[start:start + config.batch_size]]
            length = min(len(seq) for seq in batch)
            for t in range(length):
                frames = [pots.normalize_frame(seq.frames[t]) for seq in batch]
                truths = [seq.truth[t] for seq in batch]
                for _ in range(config.passes_per_frame):
                    losses = train_pass(states, pots, frames, truths, config)
                    for node, value in losses.items():
                        if np.isfinite(value):
                            loss_sums[node] += value
                            loss_counts[node] += 1

        epoch_losses = {
            node: (loss_sums[node] / loss_counts[node]
                   if loss_counts[node] else float("nan"))
            for node in graph.nodes}
        for node in graph.nodes:
            emit({"epoch": epoch, "node": node, "loss": epoch_losses[node]})

        val_error = None
        if val_sequences:
            val_error = evaluate_sequences(
                graph, pots, val_sequences,
                particles=config.val_particles, passes=config.val_passes,
                seed=_derived_seed(config.seed, 11, epoch),
                unary_samples=config.unary_samples)
            emit({"epoch": epoch, "val_error": val_error})

        duration = time.monotonic() - started
        history.append({"epoch": epoch, "node_loss": epoch_losses,
                        "val_error": val_error, "duration_s": duration})
        log.info("epoch %d: loss %s val %s (%.1fs)", epoch,
                 {k: round(v, 4) for k, v in epoch_losses.items()},
                 None if val_error is None else round(val_error, 5), duration)

        improved = val_error is not None and val_error < best_val
        if improved:
            best_val = val_error
            stale_epochs = 0
            if config.checkpoint_path:
                pots.save(config.checkpoint_path)
        elif val_error is not None:
            stale_epochs += 1
            if config.patience and stale_epochs >= config.patience:
                log.info("no validation improvement for %d epochs, stopping",
                         stale_epochs)
                break

    if config.checkpoint_path and not val_sequences:
        pots.save(config.checkpoint_path)
    if sink is not None and sink is not log_stream:
        sink.close()
    return history
