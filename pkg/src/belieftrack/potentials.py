"""Learnable potential networks attached to the graph.

Four families, one parameter block each:

  unary.<node>          image feature extractor (five conv units) plus a
                        small head scoring (state, feature) pairs in
                        [0.005, 1]; the floor keeps every particle alive
  pairwise.<s>-<d>.density   scores a translation (source minus destination
                        state) in [0.005, 1]
  pairwise.<s>-<d>.sampler   generates translations from isotropic Gaussian
                        noise; conditional samples are formed by adding or
                        subtracting the translation depending on which end
                        of the edge is known
  diffusion.<node>      generates per-iteration particle displacements from
                        the same kind of noise

All hidden layers are ReLU with uniform fan-in (He style) initialization and
zero biases; likelihood outputs use the scaled sigmoid.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterBlock, Tensor
from .model import GraphModel

NOISE_DIM = 64
UNARY_SAMPLES_DEFAULT = 10
# displacement/translation generators start close to zero motion so that
# freshly initialized particles do not random-walk across the state space
GENERATOR_OUTPUT_SCALE = 0.05
FEATURE_CHANNELS = 10
CONV_UNITS = 5


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Mlp:
    """Fully connected stack living inside a parameter block."""

    def __init__(self, block: ParameterBlock, sizes, final: str, rng, prefix="",
                 final_weight_scale: float = 1.0):
        self.block = block
        self.sizes = tuple(sizes)
        self.final = final
        self.prefix = prefix
        self.weights = []
        self.biases = []
        last = len(sizes) - 2
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            init = _he_uniform(rng, (n_out, n_in), n_in)
            if i == last:
                init = init * final_weight_scale
            w = block.add(f"{prefix}w{i}", init)
            b = block.add(f"{prefix}b{i}", np.zeros(n_out))
            self.weights.append(w)
            self.biases.append(b)

    def __call__(self, x: Tensor, stop_params: bool = False) -> Tensor:
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if stop_params:
                w, b = w.detach(), b.detach()
            x = ad.affine(x, w, b)
            if i < last:
                x = ad.relu(x)
            elif self.final == "sigmoid_scaled":
                x = ad.sigmoid_scaled(x)
            elif self.final != "linear":
                raise ValueError(f"unknown final activation {self.final!r}")
        return x


class UnaryPotential:
    """Observation likelihood for one node: head(state, features(frame))."""

    def __init__(self, node, block: ParameterBlock, rng,
                 state_dim=2, image_channels=3):
        self.node = node
        self.block = block
        self.state_dim = state_dim
        self.conv_weights = []
        self.conv_biases = []
        channels = [image_channels] + [FEATURE_CHANNELS] * CONV_UNITS
        for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
            w = block.add(f"feat.w{i}", _he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9))
            b = block.add(f"feat.b{i}", np.zeros(c_out))
            self.conv_weights.append(w)
            self.conv_biases.append(b)
        self.head = Mlp(block, (state_dim + FEATURE_CHANNELS, 64, 64, 1),
                        "sigmoid_scaled", rng, prefix="head.")
        self.feature_runs = 0          # instrumentation for the cache contract
        self._cache_key = None
        self._cache_feature = None

    def _conv_stack(self, frame: Tensor, stop_params: bool) -> Tensor:
        x = frame
        for w, b in zip(self.conv_weights, self.conv_biases):
            if stop_params:
                w, b = w.detach(), b.detach()
            x = ad.maxpool2x2(ad.relu(ad.conv2d(x, w, b, stride=2, pad=1)))
        if x.shape[1] != 1 or x.shape[2] != 1:
            raise ValueError(f"frame too large for the feature stack: {x.shape}")
        return ad.reshape(x, (FEATURE_CHANNELS,))

    def feature(self, frame: np.ndarray, tape: bool = False) -> Tensor:
        """Feature vector of a frame.

        With tape=True the conv stack is recorded so its parameters can
        learn. Otherwise the result is a cached constant: for a given frame
        object the extractor runs once no matter how many particles are
        scored against it.
        """
        if tape and ad.grad_enabled():
            self.feature_runs += 1
            return self._conv_stack(ad.as_tensor(frame), stop_params=False)
        key = (id(frame), frame.shape)
        if self._cache_key != key:
            with ad.no_grad():
                feat = self._conv_stack(ad.as_tensor(frame), stop_params=True)
            self._cache_key = key
            self._cache_feature = feat.values
            self.feature_runs += 1
        return Tensor(self._cache_feature)

    def clear_cache(self):
        self._cache_key = None
        self._cache_feature = None

    def evaluate(self, particles: Tensor, frame: np.ndarray,
                 stop_params: bool = False, tape_feature: bool = False) -> Tensor:
        """Score a [n, state_dim] particle tensor against a frame, in [0.005, 1].

        stop_params freezes this unary's own parameters (gradients still
        flow into the particle positions), which is how senders are scored
        inside outgoing messages.
        """
        particles = ad.as_tensor(particles)
        n = particles.shape[0]
        feat = self.feature(frame, tape=tape_feature and not stop_params)
        rows = ad.concat([particles, ad.tile_rows(feat, n)], axis=1)
        out = self.head(rows, stop_params=stop_params)
        return ad.reshape(out, (n,))


class PairwisePotential:
    """Density over, and generator of, edge translations (source - dest)."""

    def __init__(self, source, dest, density_block, sampler_block, rng, state_dim=2):
        self.source = source
        self.dest = dest
        self.state_dim = state_dim
        self.density_net = Mlp(density_block, (state_dim, 32, 32, 32, 32, 1),
                               "sigmoid_scaled", rng)
        self.sampler_net = Mlp(sampler_block, (NOISE_DIM, 64, 64, state_dim),
                               "linear", rng,
                               final_weight_scale=GENERATOR_OUTPUT_SCALE)

    def density(self, translations: Tensor, stop_params=False) -> Tensor:
        translations = ad.as_tensor(translations)
        out = self.density_net(translations, stop_params=stop_params)
        return ad.reshape(out, (translations.shape[0],))

    def sample_translations(self, n: int, rng, stop_params=False) -> Tensor:
        noise = rng.standard_normal((n, NOISE_DIM))
        return self.sampler_net(Tensor(noise), stop_params=stop_params)


class DiffusionModel:
    """Learned per-iteration displacement generator for one node."""

    def __init__(self, node, block, rng, state_dim=2):
        self.node = node
        self.net = Mlp(block, (NOISE_DIM, 64, 64, state_dim), "linear", rng,
                       final_weight_scale=GENERATOR_OUTPUT_SCALE)

    def sample_displacements(self, n: int, rng, stop_params=False) -> Tensor:
        noise = rng.standard_normal((n, NOISE_DIM))
        return self.net(Tensor(noise), stop_params=stop_params)


class PotentialSet:
    """Every learnable network for a graph, addressable by node or edge."""

    def __init__(self, graph: GraphModel, seed: int = 0, image_channels: int = 3):
        self.graph = graph
        self.image_channels = image_channels
        self.unaries = {}
        self.pairwise = {}
        self.diffusion = {}
        self.norm = None           # optional channel normalization block
        self._block_list = []

        def new_block(name):
            block = ParameterBlock(name)
            self._block_list.append(block)
            return block

        counter = 0

        def block_rng():
            nonlocal counter
            counter += 1
            return np.random.default_rng(np.random.SeedSequence([seed, counter]))

        for node in graph.nodes:
            self.unaries[node] = UnaryPotential(
                node, new_block(graph.unary_block(node)), block_rng(),
                state_dim=graph.state_dim, image_channels=image_channels)
        for s, d in graph.edges:
            self.pairwise[(s, d)] = PairwisePotential(
                s, d,
                new_block(graph.pairwise_density_block(s, d)),
                new_block(graph.pairwise_sampler_block(s, d)),
                block_rng(), state_dim=graph.state_dim)
        for node in graph.nodes:
            self.diffusion[node] = DiffusionModel(
                node, new_block(graph.diffusion_block(node)), block_rng(),
                state_dim=graph.state_dim)

    def edge_potential(self, a, b) -> PairwisePotential:
        s, d = self.graph.edge_between(a, b)
        return self.pairwise[(s, d)]

    def blocks(self) -> list:
        out = list(self._block_list)
        if self.norm is not None:
            out.append(self.norm)
        return out

    def set_normalization(self, mean, std):
        self.norm = ParameterBlock("norm")
        self.norm.add("channel_mean", np.asarray(mean, dtype=np.float64))
        self.norm.add("channel_std", np.asarray(std, dtype=np.float64))

    def normalization(self):
        if self.norm is None:
            return None
        return (self.norm.tensors["channel_mean"].values,
                self.norm.tensors["channel_std"].values)

    def normalize_frame(self, frame: np.ndarray) -> np.ndarray:
        """Apply the stored per-channel statistics to a [C, H, W] frame.

        Integer frames are first scaled to [0, 1], matching the scale the
        statistics are computed on.
        """
        x = np.asarray(frame)
        if np.issubdtype(x.dtype, np.integer):
            x = x.astype(np.float64) / 255.0
        else:
            x = x.astype(np.float64)
        stats = self.normalization()
        if stats is None:
            return x
        mean, std = stats
        return (x - mean[:, None, None]) / std[:, None, None]

    def clear_feature_caches(self):
        for unary in self.unaries.values():
            unary.clear_cache()

    def zero_grads(self):
        for block in self.blocks():
            block.zero_grads()

    def save(self, path):
        ad.save_blocks(path, self.blocks())

    def load(self, path):
        records = ad.load_records(path)
        if self.norm is None and any(r.startswith("norm.") for r in records):
            self.set_normalization(np.zeros(self.image_channels),
                                   np.ones(self.image_channels))
        ad.load_blocks(path, self.blocks())
        self.clear_feature_caches()


def zero_block(block: ParameterBlock):
    """Test fixture helper: zero every tensor in a block."""
    for t in block.tensors.values():
        t.values[...] = 0.0
