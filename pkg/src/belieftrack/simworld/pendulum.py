"""Planar double-link pendulum dynamics.

The state vector is [angle1, angle2, rate1, rate2] with angles measured
from the downward vertical at a fixed anchor. Both links are massless rods
of length l with a point mass at the far end. Integration is classic
Runge-Kutta 4.

World coordinates are meters with the anchor at the origin and y pointing
up; the scene box spans [-WORLD_HALFWIDTH, +WORLD_HALFWIDTH] on both axes,
and normalized coordinates divide by that half-width (flipping y so that
+1 is the bottom of a rendered image). Each link is 1 m, or 0.4 in
normalized units.
"""

from dataclasses import dataclass

import numpy as np

WORLD_HALFWIDTH = 2.5
LINK_HALFWIDTH = 0.1
JOINT_RADIUS = 0.15
FRAME_DT = 0.05


@dataclass(frozen=True)
class PendulumParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g: float = 9.8


def derivatives(state: np.ndarray, params: PendulumParams = PendulumParams()):
    """Time derivative of [a1, a2, w1, w2]."""
    a1, a2, w1, w2 = state
    m1, m2, l1, l2, g = params.m1, params.m2, params.l1, params.l2, params.g
    c = np.cos(a1 - a2)
    s = np.sin(a1 - a2)
    lhs = np.array([[(m1 + m2) * l1, m2 * l2 * c],
                    [l1 * c, l2]])
    rhs = np.array([-m2 * l2 * w2 * w2 * s - (m1 + m2) * g * np.sin(a1),
                    l1 * w1 * w1 * s - g * np.sin(a2)])
    acc = np.linalg.solve(lhs, rhs)
    return np.array([w1, w2, acc[0], acc[1]])


def rk4_step(state, dt, params: PendulumParams = PendulumParams()):
    k1 = derivatives(state, params)
    k2 = derivatives(state + 0.5 * dt * k1, params)
    k3 = derivatives(state + 0.5 * dt * k2, params)
    k4 = derivatives(state + dt * k3, params)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def joint_world_positions(state, params: PendulumParams = PendulumParams()):
    """Anchor, elbow and tip positions in world meters, y up."""
    a1, a2 = state[0], state[1]
    p1 = np.array([params.l1 * np.sin(a1), -params.l1 * np.cos(a1)])
    p2 = p1 + np.array([params.l2 * np.sin(a2), -params.l2 * np.cos(a2)])
    return np.array([[0.0, 0.0], p1, p2])


def total_energy(state, params: PendulumParams = PendulumParams()) -> float:
    """Kinetic plus potential energy; conserved along exact trajectories."""
    a1, a2, w1, w2 = state
    m1, m2, l1, l2, g = params.m1, params.m2, params.l1, params.l2, params.g
    v1 = l1 * w1 * np.array([np.cos(a1), np.sin(a1)])
    v2 = v1 + l2 * w2 * np.array([np.cos(a2), np.sin(a2)])
    kinetic = 0.5 * m1 * v1 @ v1 + 0.5 * m2 * v2 @ v2
    _, p1, p2 = joint_world_positions(state, params)
    potential = m1 * g * p1[1] + m2 * g * p2[1]
    return float(kinetic + potential)


def normalize_points(points: np.ndarray) -> np.ndarray:
    """World meters -> [-1, 1] image-oriented coordinates (y flipped)."""
    points = np.asarray(points, dtype=np.float64)
    return np.stack([points[..., 0] / WORLD_HALFWIDTH,
                     -points[..., 1] / WORLD_HALFWIDTH], axis=-1)


def keypoints(state, params: PendulumParams = PendulumParams()) -> np.ndarray:
    """[3, 2] normalized keypoints: anchor, elbow, tip."""
    return normalize_points(joint_world_positions(state, params))


def random_initial_state(rng) -> np.ndarray:
    angles = rng.uniform(-np.pi, np.pi, size=2)
    rates = rng.uniform(-2.0, 2.0, size=2)
    return np.concatenate([angles, rates])


def simulate(n_frames: int, rng, dt: float = FRAME_DT,
             params: PendulumParams = PendulumParams(),
             initial_state=None) -> np.ndarray:
    """[n_frames, 4] trajectory sampled once per frame."""
    state = (random_initial_state(rng) if initial_state is None
             else np.asarray(initial_state, dtype=np.float64))
    out = np.empty((n_frames, 4))
    for i in range(n_frames):
        out[i] = state
        state = rk4_step(state, dt, params)
    return out
