"""Particle-based pull message passing and belief maintenance.

A message from sender s to destination d carries M weighted particles over
the destination's state. One pass updates every directed message from the
previous iteration's state, then refreshes every belief:

  message update
    1. draw particle positions: during training a floor((1-gamma^(n-1))*M)
       share is resampled by weight from the destination's previous belief
       (positions detached) and moved by the destination's diffusion
       network; the rest is drawn uniformly from the state bounds. During
       deployment the uniform share is zero. n counts passes from 1.
    2. sender-unary term: for each particle, average the sender's unary
       score over UNARY_SAMPLES conditional samples of the sender state
       drawn through the edge's translation sampler. The sender's own
       parameters are frozen here; gradients reach the sampler through the
       sampled positions.
    3. neighbor term: for each remaining neighbor u of s, smooth the
       incoming message u->s against this edge's translation density.
       During training every such factor is replaced by a single density
       evaluation at the sender's ground-truth state.
    4. particle weight = unary term * product of neighbor terms.

  belief update
    each incoming message's weights are multiplied by the destination's
    unary score at the particle, normalized within the message, and the
    union of all messages (renormalized once more) becomes the belief of
    T = deg(d) * M particles. The three weight factors (destination unary,
    sender unary, neighbors) are also kept separately per particle; the
    training loss consumes them as independent mixture families.

State between iterations is plain numpy: anything resampled crosses an
explicit gradient boundary, and only quantities produced inside the current
update carry tape. A single-node graph has no messages; its belief is
refreshed directly by the resample/diffuse/reweight cycle.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import GraphModel
from .potentials import PotentialSet, UNARY_SAMPLES_DEFAULT

GAMMA = 0.9
KDE_BANDWIDTH = 0.05


@dataclass
class Message:
    source: str
    dest: str
    positions: np.ndarray      # [M, dim]
    weights: np.ndarray        # [M], nonnegative, sum 1 once belief-updated


@dataclass
class Belief:
    node: str
    positions: np.ndarray      # [T, dim]
    weights: np.ndarray        # [T], sum 1
    sources: tuple = ()        # sender id per message segment
    families: dict = field(default_factory=dict)  # per-particle weight factors


@dataclass
class MessageResult:
    """Tape-carrying output of one message update."""
    source: str
    dest: str
    positions: Tensor          # [M, dim]
    weights: Tensor            # [M] = unary_src * neigh
    unary_src: Tensor          # [M]
    neigh: Tensor              # [M]


@dataclass
class BeliefResult:
    node: str
    positions: Tensor          # [T, dim]
    weights: Tensor            # [T], sum 1
    families: dict             # 'unary_dest' | 'unary_src' | 'neigh' -> Tensor [T]
    sources: tuple
    message_weights: list      # per message, normalized Tensor [M]


class InferenceState:
    """Beliefs, messages, iteration counter, and per-stream RNGs."""

    def __init__(self, graph: GraphModel, particles: int, seed: int = 0):
        if particles < 1:
            raise ValueError("particle count must be positive")
        self.graph = graph
        self.particles = particles
        self.seed = seed
        self.iteration = 0
        self._rngs = {}
        for k, (s, d) in enumerate(graph.directed_edges()):
            self._rngs[(s, d)] = np.random.default_rng(
                np.random.SeedSequence([seed, 2, k]))
        for i, node in enumerate(graph.nodes):
            self._rngs[node] = np.random.default_rng(
                np.random.SeedSequence([seed, 3, i]))

        self.messages = {}
        for s, d in graph.directed_edges():
            self.messages[(s, d)] = Message(
                s, d,
                _uniform_positions(self._rngs[(s, d)], graph, particles),
                np.full(particles, 1.0 / particles))
        self.beliefs = {}
        for node in graph.nodes:
            incoming = [self.messages[(s, node)] for s in graph.neighbors(node)]
            if incoming:
                positions = np.concatenate([m.positions for m in incoming])
                total = len(positions)
                self.beliefs[node] = Belief(
                    node, positions, np.full(total, 1.0 / total),
                    sources=tuple(m.source for m in incoming))
            else:
                self.beliefs[node] = Belief(
                    node,
                    _uniform_positions(self._rngs[node], graph, particles),
                    np.full(particles, 1.0 / particles))

    def rng(self, key):
        return self._rngs[key]


def _uniform_positions(rng, graph, n):
    lows = np.array([lo for lo, _ in graph.bounds])
    highs = np.array([hi for _, hi in graph.bounds])
    return rng.uniform(lows, highs, size=(n, graph.state_dim))


def _resample_base(state: InferenceState, node: str, n: int, rng) -> np.ndarray:
    """Positions drawn by weight from a belief; detached by construction.

    Uses systematic (low-variance) resampling: one uniform offset stratifies
    the [0,1) interval into n cells, so slot counts match n*w_i up to
    rounding while each draw still follows the belief distribution.
    """
    belief = state.beliefs[node]
    w = belief.weights
    if not np.all(np.isfinite(w)) or w.sum() <= 0.0:
        import logging
        logging.getLogger(__name__).warning(
            "degenerate belief weights at node %s, uniform fallback", node)
        idx = rng.integers(0, len(w), size=n)
    else:
        points = (rng.uniform() + np.arange(n)) / n
        cum = np.cumsum(w / w.sum())
        cum[-1] = 1.0
        idx = np.searchsorted(cum, points)
    return belief.positions[idx].copy()


def _draw_positions(state, pots, edge_rng, dest, n_total, training):
    """Proposal positions for a message into dest: belief share + uniform share."""
    share_uniform = GAMMA ** state.iteration if training else 0.0
    n_belief = int(np.floor((1.0 - share_uniform) * n_total))
    n_uniform = n_total - n_belief
    parts = []
    if n_belief:
        base = _resample_base(state, dest, n_belief, edge_rng)
        disp = pots.diffusion[dest].sample_displacements(n_belief, edge_rng)
        parts.append(ad.add(Tensor(base), disp))
    if n_uniform:
        parts.append(Tensor(_uniform_positions(edge_rng, state.graph, n_uniform)))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)


def oriented_difference(edge_source, a_node, a_values, b_values):
    """Translation in an edge's declared direction.

    a_values belong to a_node, b_values to the other endpoint; the result
    is (declared source values) - (declared destination values).
    """
    if a_node == edge_source:
        return ad.sub(a_values, b_values)
    return ad.sub(b_values, a_values)


def message_update(state: InferenceState, pots: PotentialSet, source: str,
                   dest: str, frame: np.ndarray, *, training: bool = False,
                   ground_truth: dict | None = None,
                   unary_samples: int = UNARY_SAMPLES_DEFAULT) -> MessageResult:
    graph = state.graph
    M = state.particles
    rng = state.rng((source, dest))
    pot = pots.edge_potential(source, dest)
    edge_source = pot.source

    positions = _draw_positions(state, pots, rng, dest, M, training)

    # sender-unary average over conditional samples of the sender state
    translations = pot.sample_translations(M * unary_samples, rng)
    anchors = ad.repeat_rows(positions, unary_samples)
    if source == edge_source:
        sender_samples = ad.add(anchors, translations)
    else:
        sender_samples = ad.sub(anchors, translations)
    scores = pots.unaries[source].evaluate(sender_samples, frame, stop_params=True)
    unary_src = ad.tmean(ad.reshape(scores, (M, unary_samples)), axis=1)

    # neighbor factors
    others = [u for u in graph.neighbors(source) if u != dest]
    if not others:
        neigh = Tensor(np.ones(M))
    elif training:
        if ground_truth is None or source not in ground_truth:
            raise ValueError("training message update needs ground truth for the sender")
        truth = ad.tile_rows(Tensor(np.asarray(ground_truth[source], dtype=np.float64)), M)
        diffs = oriented_difference(edge_source, source, truth, positions)
        dens = pot.density(diffs)
        neigh = dens if len(others) == 1 else ad.power(dens, len(others))
    else:
        neigh = Tensor(np.ones(M))
        for u in others:
            incoming = state.messages[(u, source)]
            m_in = len(incoming.positions)
            a = ad.tile_rows(Tensor(incoming.positions), M)        # [M*m_in, dim]
            b = ad.repeat_rows(positions, m_in)                    # candidate rows repeated
            diffs = oriented_difference(edge_source, source, a, b)
            dens = ad.reshape(pot.density(diffs), (M, m_in))
            w_in = ad.tile_rows(Tensor(incoming.weights[None, :]), M)
            factor = ad.tsum(ad.mul(dens, w_in), axis=1)
            neigh = ad.mul(neigh, factor)

    weights = ad.mul(unary_src, neigh)
    return MessageResult(source, dest, positions, weights, unary_src, neigh)


def belief_update(state: InferenceState, pots: PotentialSet, node: str,
                  frame: np.ndarray, incoming: list,
                  *, train_own_unary: bool = False) -> BeliefResult:
    """Combine incoming MessageResults into the node's belief."""
    if not incoming:
        raise ValueError(f"belief update for {node} needs at least one message")
    positions_parts = []
    weight_parts = []
    unary_dest_parts = []
    unary_src_parts = []
    neigh_parts = []
    message_weights = []
    for result in incoming:
        scores = pots.unaries[node].evaluate(
            result.positions, frame,
            stop_params=False, tape_feature=train_own_unary)
        w = ad.mul(result.weights, scores)
        total = ad.tsum(w)
        if total.item() <= 0.0:
            raise AssertionError("message weights collapsed to zero despite floor")
        w_norm = ad.div(w, total)
        message_weights.append(w_norm)
        positions_parts.append(result.positions)
        weight_parts.append(w_norm)
        unary_dest_parts.append(scores)
        unary_src_parts.append(result.unary_src)
        neigh_parts.append(result.neigh)

    k = len(incoming)
    positions = positions_parts[0] if k == 1 else ad.concat(positions_parts, axis=0)
    weights = weight_parts[0] if k == 1 else ad.concat(weight_parts, axis=0)
    weights = ad.div(weights, float(k))
    families = {
        "unary_dest": unary_dest_parts[0] if k == 1 else ad.concat(unary_dest_parts),
        "unary_src": unary_src_parts[0] if k == 1 else ad.concat(unary_src_parts),
        "neigh": neigh_parts[0] if k == 1 else ad.concat(neigh_parts),
    }
    return BeliefResult(node, positions, weights, families,
                        tuple(r.source for r in incoming), message_weights)


def refresh_isolated_belief(state: InferenceState, pots: PotentialSet, node: str,
                            frame: np.ndarray, *, training: bool = False) -> BeliefResult:
    """Belief cycle for a node without neighbors: propose, diffuse, reweight."""
    rng = state.rng(node)
    M = state.particles
    share_uniform = GAMMA ** state.iteration if training else 0.0
    n_belief = int(np.floor((1.0 - share_uniform) * M))
    n_uniform = M - n_belief
    parts = []
    if n_belief:
        base = _resample_base(state, node, n_belief, rng)
        disp = pots.diffusion[node].sample_displacements(n_belief, rng)
        parts.append(ad.add(Tensor(base), disp))
    if n_uniform:
        parts.append(Tensor(_uniform_positions(rng, state.graph, n_uniform)))
    positions = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
    scores = pots.unaries[node].evaluate(positions, frame, tape_feature=training)
    weights = ad.div(scores, ad.tsum(scores))
    families = {"unary_dest": scores,
                "unary_src": Tensor(np.ones(M)),
                "neigh": Tensor(np.ones(M))}
    return BeliefResult(node, positions, weights, families, (node,), [weights])


def commit_node(state: InferenceState, belief_result: BeliefResult,
                message_results: list):
    """Persist tape results as detached numpy state."""
    for result, w_norm in zip(message_results, belief_result.message_weights):
        state.messages[(result.source, result.dest)] = Message(
            result.source, result.dest,
            result.positions.values.copy(), w_norm.values.copy())
    state.beliefs[belief_result.node] = Belief(
        belief_result.node,
        belief_result.positions.values.copy(),
        belief_result.weights.values.copy(),
        belief_result.sources,
        {k: v.values.copy() for k, v in belief_result.families.items()})


def run_pass(state: InferenceState, pots: PotentialSet, frame: np.ndarray,
             *, training: bool = False, ground_truth: dict | None = None,
             unary_samples: int = UNARY_SAMPLES_DEFAULT):
    """One full message pass: every directed edge, then every belief."""
    graph = state.graph
    results = {}
    for s, d in graph.directed_edges():
        results[(s, d)] = message_update(
            state, pots, s, d, frame, training=training,
            ground_truth=ground_truth, unary_samples=unary_samples)
    belief_results = {}
    for node in graph.nodes:
        incoming = [results[(s, node)] for s in graph.neighbors(node)]
        if incoming:
            belief_results[node] = belief_update(state, pots, node, frame, incoming)
        else:
            belief_results[node] = refresh_isolated_belief(
                state, pots, node, frame, training=training)
    for node in graph.nodes:
        incoming = [results[(s, node)] for s in graph.neighbors(node)]
        commit_node(state, belief_results[node], incoming)
    state.iteration += 1
    return belief_results


def max_weight_estimate(belief: Belief) -> np.ndarray:
    """Position of the highest-weight particle (first one on ties)."""
    return belief.positions[int(np.argmax(belief.weights))].copy()


def gaussian_mixture_density(positions, weights, query, bandwidth=KDE_BANDWIDTH) -> Tensor:
    """Kernel density of a weighted particle set at one query point.

    Isotropic Gaussian kernels with standard deviation `bandwidth` per
    dimension. Differentiable with respect to both weights and positions.
    """
    positions = ad.as_tensor(positions)
    weights = ad.as_tensor(weights)
    query = np.asarray(query, dtype=np.float64)
    dim = positions.values.shape[1]
    var = bandwidth * bandwidth
    norm = (2.0 * np.pi * var) ** (-dim / 2.0)
    diffs = query[None, :] - positions.values
    kernel = norm * np.exp(-0.5 * np.sum(diffs * diffs, axis=1) / var)
    value = float(weights.values @ kernel)

    def vjp(g):
        g = float(g)
        return (g * (weights.values * kernel)[:, None] * diffs / var,
                g * kernel)

    return ad.make_op(np.asarray(value), (positions, weights),
                      "gaussian_mixture_density", vjp)


def track_sequence(graph: GraphModel, pots: PotentialSet, frames,
                   *, particles: int = 200, passes: int = 2, seed: int = 0,
                   unary_samples: int = UNARY_SAMPLES_DEFAULT,
                   keep_beliefs: bool = False):
    """Run deployment inference over a frame sequence.

    Returns one record per frame: estimates and beliefs per node. Runs with
    the tape disabled throughout.
    """
    state = InferenceState(graph, particles, seed=seed)
    records = []
    with ad.no_grad():
        for frame in frames:
            for _ in range(passes):
                run_pass(state, pots, frame, training=False,
                         unary_samples=unary_samples)
            record = {
                "estimates": {n: max_weight_estimate(state.beliefs[n])
                              for n in graph.nodes},
            }
            if keep_beliefs:
                record["beliefs"] = {
                    n: Belief(n, state.beliefs[n].positions.copy(),
                              state.beliefs[n].weights.copy())
                    for n in graph.nodes}
            records.append(record)
    return records
