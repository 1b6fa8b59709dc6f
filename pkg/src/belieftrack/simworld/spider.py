"""Articulated three-armed walker ("spider") on a fixed 500 px canvas.

The body is a root joint with three arms, one per 120-degree sector. Each
arm has a prismatic inner segment (its length slides between EXT_MIN and
EXT_MAX) pointing at an absolute angle confined to the arm's sector, and a
fixed-length outer segment whose direction may deviate from the inner
segment by at most OUTER_SWING either way.

The state vector is 11 numbers:
  [root_x, root_y,
   inner_angle_0..2 (absolute radians),
   extension_0..2 (px),
   outer_offset_0..2 (radians, relative to the inner angle)]

Per frame, every degree of freedom draws a fresh velocity from a symmetric
two-component Gaussian mixture (so it keeps moving in one of two opposite
directions at a typical speed) and integrates SUBSTEPS Euler steps of DT
seconds; hitting a joint limit clamps the coordinate and reverses that
velocity. Keypoints are the seven joints (root, three mid joints, three
tips) in [-1, 1] canvas-normalized coordinates, matching the node order
root, mids, tips of the seven-node tracking graph.
"""

import numpy as np

CANVAS = 500
LINK_WIDTH = 20.0
OUTER_LENGTH = 80.0
JOINT_RADIUS = 10.0
EXT_MIN, EXT_MAX = 20.0, 80.0
OUTER_SWING = np.deg2rad(35.0)
SECTOR = 2.0 * np.pi / 3.0

ROOT_INIT_HALF = 90.0        # initial root box: central 180 x 180
ROOT_MIN, ROOT_MAX = 125.0, 375.0

DT = 0.01
SUBSTEPS = 10

ROOT_SPEED = (24.0, 15.0)    # (mixture mean magnitude, std) px/s
ANGLE_SPEED = (0.3, 0.1)     # rad/s, inner angles and outer offsets
EXT_SPEED = (500.0, 60.0)    # px/s

ARM_COLORS = ((204, 0, 0), (0, 204, 0), (0, 0, 204))
JOINT_COLOR = (255, 255, 0)

STATE_DIM = 11
NODE_COUNT = 7


def random_state(rng) -> np.ndarray:
    center = CANVAS / 2.0
    root = rng.uniform(center - ROOT_INIT_HALF, center + ROOT_INIT_HALF, size=2)
    inner = np.array([rng.uniform(j * SECTOR, (j + 1) * SECTOR)
                      for j in range(3)])
    ext = rng.uniform(EXT_MIN, EXT_MAX, size=3)
    outer = rng.uniform(-OUTER_SWING, OUTER_SWING, size=3)
    return np.concatenate([root, inner, ext, outer])


def _mixture_speed(rng, mean, std, size) -> np.ndarray:
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return sign * mean + rng.normal(0.0, std, size)


def sample_velocities(rng) -> np.ndarray:
    return np.concatenate([
        _mixture_speed(rng, *ROOT_SPEED, 2),
        _mixture_speed(rng, *ANGLE_SPEED, 3),
        _mixture_speed(rng, *EXT_SPEED, 3),
        _mixture_speed(rng, *ANGLE_SPEED, 3),
    ])


_LIMITS = (
    [(ROOT_MIN, ROOT_MAX)] * 2
    + [(j * SECTOR, (j + 1) * SECTOR) for j in range(3)]
    + [(EXT_MIN, EXT_MAX)] * 3
    + [(-OUTER_SWING, OUTER_SWING)] * 3
)


def step_frame(state: np.ndarray, rng) -> np.ndarray:
    """Advance one frame: fresh velocities, SUBSTEPS integration steps."""
    state = state.copy()
    velocity = sample_velocities(rng)
    for _ in range(SUBSTEPS):
        state += velocity * DT
        for i, (lo, hi) in enumerate(_LIMITS):
            if state[i] < lo:
                state[i] = lo
                velocity[i] = -velocity[i]
            elif state[i] > hi:
                state[i] = hi
                velocity[i] = -velocity[i]
    return state


def simulate(n_frames: int, rng, initial_state=None) -> np.ndarray:
    state = (random_state(rng) if initial_state is None
             else np.asarray(initial_state, dtype=np.float64))
    out = np.empty((n_frames, STATE_DIM))
    for i in range(n_frames):
        out[i] = state
        state = step_frame(state, rng)
    return out


def joint_canvas_positions(state) -> np.ndarray:
    """[7, 2] canvas-pixel joint positions: root, three mids, three tips."""
    root = state[0:2]
    inner = state[2:5]
    ext = state[5:8]
    outer = state[8:11]
    mids = np.empty((3, 2))
    tips = np.empty((3, 2))
    for j in range(3):
        u = np.array([np.cos(inner[j]), np.sin(inner[j])])
        mids[j] = root + ext[j] * u
        beta = inner[j] + outer[j]
        v = np.array([np.cos(beta), np.sin(beta)])
        tips[j] = mids[j] + OUTER_LENGTH * v
    return np.vstack([root[None, :], mids, tips])


def keypoints(state) -> np.ndarray:
    """[7, 2] normalized keypoints in [-1, 1] canvas coordinates."""
    return joint_canvas_positions(state) / (CANVAS / 2.0) - 1.0
