"""Pairwise Markov random field over hidden state nodes.

Each hidden node carries a continuous state (2-D keypoint position in the
benchmark tasks, normalized to [-1, 1] per axis) and observes the shared
camera frame. Edges are stored oriented: pairwise potentials measure the
translation (source state - destination state), so every consumer must ask
the graph for the declared orientation rather than assume one.
"""

import re
from dataclasses import dataclass, field

from .config import ConfigError, as_list, parse_kv

_ID_RE = re.compile(r"^[A-Za-z0-9_]+$")


@dataclass(frozen=True)
class GraphModel:
    nodes: tuple
    edges: tuple               # oriented (source, destination) pairs
    state_dim: int = 2
    bounds: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    bindings: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seen = set()
        for n in self.nodes:
            if not _ID_RE.match(n):
                raise ValueError(f"bad node id {n!r}")
            if n in seen:
                raise ValueError(f"duplicate node id {n!r}")
            seen.add(n)
        edge_keys = set()
        for s, d in self.edges:
            if s not in seen or d not in seen:
                raise ValueError(f"edge {s}-{d} references unknown node")
            if s == d:
                raise ValueError(f"self loop on node {s}")
            key = frozenset((s, d))
            if key in edge_keys:
                raise ValueError(f"duplicate edge between {s} and {d}")
            edge_keys.add(key)
        if len(self.bounds) != self.state_dim:
            raise ValueError("bounds/state_dim mismatch")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError("empty state bounds")
        # isolated hidden nodes cannot exchange messages; a lone node is
        # still accepted because single-node graphs are useful fixtures
        if len(self.nodes) > 1:
            connected = {n for e in self.edges for n in e}
            isolated = [n for n in self.nodes if n not in connected]
            if isolated:
                raise ValueError(f"nodes without any neighbor: {isolated}")

    # -- structure queries --------------------------------------------------

    def neighbors(self, node) -> tuple:
        """Adjacent nodes in edge construction order."""
        if node not in self.nodes:
            raise KeyError(node)
        out = []
        for s, d in self.edges:
            if s == node:
                out.append(d)
            elif d == node:
                out.append(s)
        return tuple(out)

    def edge_between(self, a, b):
        for s, d in self.edges:
            if {s, d} == {a, b}:
                return (s, d)
        raise KeyError(f"no edge between {a} and {b}")

    def directed_edges(self) -> list:
        """Every message direction, in deterministic schedule order."""
        out = []
        for s, d in self.edges:
            out.append((s, d))
            out.append((d, s))
        return out

    # -- parameter block naming ----------------------------------------------

    def binding(self, key: str) -> str:
        return self.bindings.get(key, key)

    def unary_block(self, node) -> str:
        return self.binding(f"unary.{node}")

    def diffusion_block(self, node) -> str:
        return self.binding(f"diffusion.{node}")

    def pairwise_density_block(self, source, dest) -> str:
        return self.binding(f"pairwise.{source}-{dest}.density")

    def pairwise_sampler_block(self, source, dest) -> str:
        return self.binding(f"pairwise.{source}-{dest}.sampler")

    # -- construction ----------------------------------------------------------

    @classmethod
    def chain(cls, ids):
        ids = tuple(ids)
        return cls(ids, tuple(zip(ids[:-1], ids[1:])))

    @classmethod
    def pendulum(cls):
        """Two-link pendulum: base, elbow, end effector."""
        return cls.chain(("0", "1", "2"))

    @classmethod
    def spider(cls):
        """Central root with three two-link arms."""
        nodes = tuple(str(i) for i in range(7))
        edges = (("0", "1"), ("0", "2"), ("0", "3"),
                 ("1", "4"), ("2", "5"), ("3", "6"))
        return cls(nodes, edges)

    @classmethod
    def preset(cls, name: str):
        if name == "pendulum":
            return cls.pendulum()
        if name == "spider":
            return cls.spider()
        raise ValueError(f"unknown graph preset {name!r}")

    @classmethod
    def from_config(cls, text: str):
        kv = parse_kv(text)
        if "nodes" not in kv:
            raise ConfigError("graph config needs a 'nodes' entry")
        nodes = tuple(as_list(kv["nodes"]))
        edges = []
        for token in as_list(kv.get("edges", "")):
            if "-" not in token:
                raise ConfigError(f"bad edge {token!r}, expected 'a-b'")
            s, d = token.split("-", 1)
            edges.append((s.strip(), d.strip()))
        state_dim = int(kv.get("state_dim", "2"))
        if "bounds" in kv:
            parts = [float(p) for p in as_list(kv["bounds"])]
            if len(parts) == 2:
                bounds = tuple((parts[0], parts[1]) for _ in range(state_dim))
            elif len(parts) == 2 * state_dim:
                bounds = tuple((parts[2 * i], parts[2 * i + 1]) for i in range(state_dim))
            else:
                raise ConfigError("bounds must be 'lo, hi' or per-dimension pairs")
        else:
            bounds = tuple((-1.0, 1.0) for _ in range(state_dim))
        prefixes = ("unary.", "diffusion.", "pairwise.")
        bindings = {k: v for k, v in kv.items() if k.startswith(prefixes)}
        return cls(nodes, tuple(edges), state_dim, bounds, bindings)

    def to_config(self) -> str:
        lines = [
            f"state_dim = {self.state_dim}",
            "bounds = " + ", ".join(f"{lo}, {hi}" for lo, hi in self.bounds),
            "nodes = " + ", ".join(self.nodes),
            "edges = " + ", ".join(f"{s}-{d}" for s, d in self.edges),
        ]
        for k, v in self.bindings.items():
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"
