"""PIL-based scene rendering shared by the simulated worlds.

Scenes are layered: clutter behind the articulated object, the object, then
clutter in front of it. Alongside the RGB frame each renderer produces the
binary union of every clutter footprint (both layers, regardless of paint
order); an object mask is available separately.

The pendulum draws directly at the output resolution in world coordinates.
The spider draws at a fixed 500 px canvas and is box-downsampled to the
output size (its masks are drawn at the output size with scaled geometry).
"""

import numpy as np
from PIL import Image, ImageDraw

from . import pendulum as pend
from . import spider as spid

WHITE = (255, 255, 255)
PENDULUM_LINK_COLOR = (0, 204, 204)
PENDULUM_JOINT_COLOR = (255, 255, 0)
SPIDER_CANVAS = 500


def new_canvas(size: int, color=WHITE) -> Image.Image:
    return Image.new("RGB", (size, size), color)


def new_mask(size: int) -> Image.Image:
    return Image.new("L", (size, size), 0)


def draw_disc(draw: ImageDraw.ImageDraw, center, radius: float, color):
    x, y = center
    draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=color)


def draw_oriented_rect(draw: ImageDraw.ImageDraw, center, angle: float,
                       length: float, width: float, color):
    """Filled rectangle centered at `center`, long axis along `angle`."""
    ux, uy = np.cos(angle), np.sin(angle)
    vx, vy = -uy, ux
    hl, hw = length / 2.0, width / 2.0
    cx, cy = center
    corners = [(cx + sx * hl * ux + sy * hw * vx,
                cy + sx * hl * uy + sy * hw * vy)
               for sx, sy in ((1, 1), (1, -1), (-1, -1), (-1, 1))]
    draw.polygon(corners, fill=color)


def draw_link(draw: ImageDraw.ImageDraw, a, b, width: float, color):
    """Filled rectangle joining two endpoint pixels."""
    ax, ay = a
    bx, by = b
    angle = np.arctan2(by - ay, bx - ax)
    length = float(np.hypot(bx - ax, by - ay))
    draw_oriented_rect(draw, ((ax + bx) / 2.0, (ay + by) / 2.0),
                       angle, length, width, color)


def to_chw_uint8(img: Image.Image) -> np.ndarray:
    """RGB image -> [3, H, W] uint8."""
    return np.asarray(img, dtype=np.uint8).transpose(2, 0, 1)


def mask_to_bool(img: Image.Image) -> np.ndarray:
    return np.asarray(img) > 127


def occluded_fraction(object_mask: np.ndarray, front_mask: np.ndarray) -> float:
    total = int(object_mask.sum())
    if total == 0:
        return 0.0
    return float(np.logical_and(object_mask, front_mask).sum()) / total


def _norm_to_px(point, size):
    return ((point[0] + 1.0) / 2.0 * size, (point[1] + 1.0) / 2.0 * size)


# -- pendulum scenes -----------------------------------------------------------

def pendulum_to_px(world_point, size):
    return _norm_to_px(pend.normalize_points(world_point), size)


def _draw_pendulum(draw, state, size, link_color, joint_color):
    scale = size / (2.0 * pend.WORLD_HALFWIDTH)
    joints = pend.joint_world_positions(state)
    px = [pendulum_to_px(j, size) for j in joints]
    for a, b in ((px[0], px[1]), (px[1], px[2])):
        draw_link(draw, a, b, 2.0 * pend.LINK_HALFWIDTH * scale, link_color)
    for p in px:
        draw_disc(draw, p, pend.JOINT_RADIUS * scale, joint_color)


def render_pendulum_frame(state, size, behind=(), front=()):
    """-> (frame [3,H,W] uint8, object mask, clutter footprint mask)."""
    scale = size / (2.0 * pend.WORLD_HALFWIDTH)
    to_px = lambda p: pendulum_to_px(p, size)

    img = new_canvas(size)
    draw = ImageDraw.Draw(img)
    for item in behind:
        item.draw(draw, to_px, scale)
    _draw_pendulum(draw, state, size, PENDULUM_LINK_COLOR,
                   PENDULUM_JOINT_COLOR)
    for item in front:
        item.draw(draw, to_px, scale)

    object_mask = pendulum_object_mask(state, size)
    footprint = clutter_mask(list(behind) + list(front), size, to_px, scale)
    return to_chw_uint8(img), object_mask, footprint


def pendulum_object_mask(state, size) -> np.ndarray:
    mask = new_mask(size)
    _draw_pendulum(ImageDraw.Draw(mask), state, size, 255, 255)
    return mask_to_bool(mask)


def clutter_mask(items, size, to_px, scale) -> np.ndarray:
    mask = new_mask(size)
    draw = ImageDraw.Draw(mask)
    for item in items:
        item.draw(draw, to_px, scale, mask=True)
    return mask_to_bool(mask)


# -- spider scenes ----------------------------------------------------------------

def spider_to_px(canvas_point, size):
    factor = size / SPIDER_CANVAS
    return (canvas_point[0] * factor, canvas_point[1] * factor)


def _draw_spider(draw, state, factor, colors=None, joint_color=None):
    joints = spid.joint_canvas_positions(state)
    link_w = spid.LINK_WIDTH * factor
    for j in range(3):
        color = spid.ARM_COLORS[j] if colors is None else colors
        mid = joints[1 + j] * factor
        tip = joints[4 + j] * factor
        root = joints[0] * factor
        draw_link(draw, tuple(root), tuple(mid), link_w, color)
        draw_link(draw, tuple(mid), tuple(tip), link_w, color)
    jc = spid.JOINT_COLOR if joint_color is None else joint_color
    for p in joints:
        draw_disc(draw, tuple(p * factor), spid.JOINT_RADIUS * factor, jc)


def render_spider_frame(state, size, behind=(), front=()):
    """-> (frame [3,H,W] uint8, object mask, clutter footprint mask).

    The RGB frame is drawn at the 500 px canvas and box-downsampled; masks
    are drawn at the output size directly.
    """
    img = new_canvas(SPIDER_CANVAS)
    draw = ImageDraw.Draw(img)
    canvas_px = lambda p: (p[0], p[1])
    for item in behind:
        item.draw(draw, canvas_px, 1.0)
    _draw_spider(draw, state, 1.0)
    for item in front:
        item.draw(draw, canvas_px, 1.0)
    img = img.resize((size, size), Image.BOX)

    object_mask = spider_object_mask(state, size)
    factor = size / SPIDER_CANVAS
    scaled_px = lambda p: spider_to_px(p, size)
    footprint = clutter_mask(list(behind) + list(front), size, scaled_px,
                             factor)
    return to_chw_uint8(img), object_mask, footprint


def spider_object_mask(state, size) -> np.ndarray:
    mask = new_mask(size)
    _draw_spider(ImageDraw.Draw(mask), state, size / SPIDER_CANVAS,
                 colors=255, joint_color=255)
    return mask_to_bool(mask)
