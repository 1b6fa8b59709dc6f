"""Moving distractor shapes layered behind and in front of the object.

Clutter items live in the task's own coordinate system (world meters for
the pendulum, canvas pixels for the spider); drawing takes a point mapping
and a scale so the same item type serves both. Whether the items of a
sequence move is decided per sequence, not per item.
"""

from dataclasses import dataclass

import numpy as np

from . import spider as spid
from .render import draw_disc, draw_oriented_rect

PENDULUM_RECT_COLORS = ((0, 204, 204), (245, 87, 77))
PENDULUM_DISC_COLORS = ((204, 204, 0), (96, 217, 63))
SPIDER_RECT_COLORS = spid.ARM_COLORS
SPIDER_DISC_COLOR = spid.JOINT_COLOR

PENDULUM_LAYER_COUNT = (15, 0.3)     # binomial (n, p) per layer
SPIDER_LAYER_COUNT = (10, 0.5)


@dataclass
class ClutterItem:
    kind: str                  # "rect" | "disc"
    color: tuple
    position: np.ndarray       # task units
    velocity: np.ndarray       # task units per frame
    angle: float
    spin: float                # radians per frame
    length: float = 0.0        # rect long side, task units
    width: float = 0.0         # rect short side
    radius: float = 0.0        # disc radius
    dynamic: bool = True

    def step(self):
        if self.dynamic:
            self.position = self.position + self.velocity
            self.angle += self.spin

    def draw(self, draw, to_px, scale, mask=False):
        color = 255 if mask else self.color
        center = to_px(self.position)
        if self.kind == "rect":
            draw_oriented_rect(draw, center, self.angle,
                               self.length * scale, self.width * scale, color)
        else:
            draw_disc(draw, center, self.radius * scale, color)


def step_items(items):
    for item in items:
        item.step()


def _common(rng, position_range, velocity_std, dynamic):
    lo, hi = position_range
    return dict(
        position=rng.uniform(lo, hi, size=2),
        velocity=rng.normal(0.0, velocity_std, size=2),
        angle=rng.uniform(0.0, 2.0 * np.pi),
        spin=rng.normal(0.0, 0.05),
        dynamic=dynamic,
    )


def sample_pendulum_layer(rng, count=None, dynamic=True) -> list:
    """One clutter layer for the pendulum world (world-meter units).

    `count=None` draws the layer's item count from its binomial
    distribution; an integer pins it (used by ratio-targeted generation).
    """
    if count is None:
        count = int(rng.binomial(*PENDULUM_LAYER_COUNT))
    items = []
    extent = 2.5 * 1.5
    for _ in range(count):
        base = _common(rng, (-extent, extent), 0.025, dynamic)
        if rng.random() < 0.8:
            items.append(ClutterItem(
                kind="rect",
                color=PENDULUM_RECT_COLORS[int(rng.integers(2))],
                width=max(0.0, rng.normal(0.2, 0.05)),
                length=max(0.0, rng.normal(0.8, 0.2)),
                **base))
        else:
            items.append(ClutterItem(
                kind="disc",
                color=PENDULUM_DISC_COLORS[int(rng.integers(2))],
                radius=max(0.0, rng.normal(0.1, 0.1)),
                **base))
    return items


def sample_spider_layer(rng, count=None, dynamic=True) -> list:
    """One clutter layer for the spider canvas (pixel units)."""
    if count is None:
        count = int(rng.binomial(*SPIDER_LAYER_COUNT))
    items = []
    for _ in range(count):
        base = _common(rng, (0.0, 500.0), 3.0, dynamic)
        if rng.random() < 0.7:
            items.append(ClutterItem(
                kind="rect",
                color=SPIDER_RECT_COLORS[int(rng.integers(3))],
                width=max(0.0, rng.normal(20.0, 3.0)),
                length=max(0.0, rng.normal(80.0, 5.0)),
                **base))
        else:
            items.append(ClutterItem(
                kind="disc", color=SPIDER_DISC_COLOR,
                radius=max(0.0, rng.normal(10.0, 3.0)),
                **base))
    return items
