"""Simulated world tests.

Dynamics are checked against physics invariants rather than stored
trajectories: equilibria stay put, energy is conserved under fine
integration, and the small-oscillation period matches the analytic normal
mode of the linearized equations.
"""

import numpy as np
import pytest
from PIL import ImageDraw

from belieftrack.simworld import clutter as clut
from belieftrack.simworld import pendulum as pend
from belieftrack.simworld import render
from belieftrack.simworld import spider as spid


# --- pendulum dynamics ---------------------------------------------------------

def test_hanging_equilibrium_is_stationary():
    state = np.zeros(4)
    assert np.allclose(pend.derivatives(state), 0.0)
    out = pend.simulate(10, np.random.default_rng(0), initial_state=state)
    assert np.allclose(out, 0.0)


def test_inverted_equilibrium_has_zero_acceleration():
    state = np.array([np.pi, np.pi, 0.0, 0.0])
    assert np.allclose(pend.derivatives(state), 0.0, atol=1e-12)


def test_energy_conserved_under_fine_integration():
    rng = np.random.default_rng(12)
    for _ in range(3):
        state = pend.random_initial_state(rng)
        e0 = pend.total_energy(state)
        s = state
        for _ in range(1000):
            s = pend.rk4_step(s, 1e-3)
        drift = abs(pend.total_energy(s) - e0)
        assert drift < 1e-6 * max(1.0, abs(e0))


def test_small_oscillation_matches_analytic_normal_mode():
    # linearized equal-mass, equal-length system: the in-phase mode has
    # angle ratio sqrt(2) and squared frequency (2 - sqrt(2)) g / l
    params = pend.PendulumParams()
    omega = np.sqrt((2.0 - np.sqrt(2.0)) * params.g / params.l1)
    period = 2.0 * np.pi / omega

    eps = 1e-3
    state = np.array([eps, np.sqrt(2.0) * eps, 0.0, 0.0])
    dt = 1e-3
    prev = state
    crossing = None
    for i in range(int(3.0 / dt)):
        nxt = pend.rk4_step(prev, dt)
        if prev[0] > 0.0 and nxt[0] <= 0.0:
            frac = prev[0] / (prev[0] - nxt[0])
            crossing = (i + frac) * dt
            break
        prev = nxt
    assert crossing is not None
    assert abs(4.0 * crossing - period) / period < 1e-3


def test_joint_positions_at_reference_angles():
    down = pend.joint_world_positions(np.array([0.0, 0.0, 0, 0]))
    assert np.allclose(down, [[0, 0], [0, -1], [0, -2]])
    level = pend.joint_world_positions(np.array([np.pi / 2, np.pi / 2, 0, 0]))
    assert np.allclose(level, [[0, 0], [1, 0], [2, 0]])


def test_keypoints_are_normalized_with_y_flip():
    kp = pend.keypoints(np.array([0.0, 0.0, 0, 0]))
    assert np.allclose(kp, [[0, 0], [0, 0.4], [0, 0.8]])
    assert np.allclose(np.linalg.norm(kp[1] - kp[0]), 0.4)
    assert np.allclose(np.linalg.norm(kp[2] - kp[1]), 0.4)


def test_trajectory_shape_and_reproducibility():
    a = pend.simulate(7, np.random.default_rng(5))
    b = pend.simulate(7, np.random.default_rng(5))
    assert a.shape == (7, 4)
    assert np.array_equal(a, b)


# --- spider dynamics -------------------------------------------------------------

def test_spider_initial_states_respect_limits():
    rng = np.random.default_rng(1)
    for _ in range(50):
        s = spid.random_state(rng)
        for value, (lo, hi) in zip(s, spid._LIMITS):
            assert lo - 1e-9 <= value <= hi + 1e-9
        center = spid.CANVAS / 2.0
        assert np.all(np.abs(s[0:2] - center) <= spid.ROOT_INIT_HALF)


def test_spider_simulation_stays_within_limits():
    rng = np.random.default_rng(2)
    states = spid.simulate(200, rng)
    for i, (lo, hi) in enumerate(spid._LIMITS):
        assert np.all(states[:, i] >= lo - 1e-9)
        assert np.all(states[:, i] <= hi + 1e-9)


def test_spider_joint_geometry_reference_pose():
    state = np.zeros(spid.STATE_DIM)
    state[0:2] = (250.0, 250.0)
    state[2:5] = (0.0, spid.SECTOR, 2 * spid.SECTOR)   # sector lower edges
    state[5:8] = 40.0
    state[8:11] = 0.0
    joints = spid.joint_canvas_positions(state)
    assert np.allclose(joints[0], [250, 250])
    assert np.allclose(joints[1], [290, 250])                       # along +x
    assert np.allclose(joints[4], [250 + 40 + 80, 250])
    u1 = np.array([np.cos(spid.SECTOR), np.sin(spid.SECTOR)])
    assert np.allclose(joints[2], joints[0] + 40 * u1)
    assert np.allclose(joints[5], joints[0] + 120 * u1)


def test_spider_keypoints_normalized():
    state = np.zeros(spid.STATE_DIM)
    state[0:2] = (250.0, 250.0)
    state[2:5] = (0.0, spid.SECTOR, 2 * spid.SECTOR)
    state[5:8] = 50.0
    kp = spid.keypoints(state)
    assert kp.shape == (7, 2)
    assert np.allclose(kp[0], [0.0, 0.0])
    assert np.allclose(kp[1], [50.0 / 250.0, 0.0])


def test_spider_velocities_are_bimodal():
    rng = np.random.default_rng(3)
    draws = np.array([spid.sample_velocities(rng) for _ in range(400)])
    root = draws[:, 0]
    assert np.any(root > 5.0) and np.any(root < -5.0)
    assert abs(np.mean(np.abs(root)) - spid.ROOT_SPEED[0]) < 6.0
    ext = draws[:, 5]
    assert abs(np.mean(np.abs(ext)) - spid.EXT_SPEED[0]) < 60.0


# --- clutter ----------------------------------------------------------------------

def test_clutter_counts_and_kinds():
    rng = np.random.default_rng(4)
    counts = []
    kinds = []
    for _ in range(200):
        layer = clut.sample_pendulum_layer(rng)
        counts.append(len(layer))
        kinds.extend(item.kind for item in layer)
    assert 0 <= min(counts) and max(counts) <= 15
    assert abs(np.mean(counts) - 15 * 0.3) < 0.5
    rect_share = kinds.count("rect") / len(kinds)
    assert 0.7 < rect_share < 0.9


def test_layer_dynamics_follow_sequence_flag():
    rng = np.random.default_rng(9)
    assert all(it.dynamic for it in clut.sample_pendulum_layer(rng))
    static = clut.sample_spider_layer(rng, dynamic=False)
    assert static and all(not it.dynamic for it in static)


def test_layer_count_can_be_pinned():
    rng = np.random.default_rng(10)
    assert len(clut.sample_pendulum_layer(rng, count=7)) == 7
    assert len(clut.sample_spider_layer(rng, count=0)) == 0


def test_spider_clutter_palette_and_spawn_box():
    rng = np.random.default_rng(11)
    items = [it for _ in range(60) for it in clut.sample_spider_layer(rng)]
    for item in items:
        if item.kind == "rect":
            assert item.color in clut.SPIDER_RECT_COLORS
        else:
            assert item.color == clut.SPIDER_DISC_COLOR
        assert np.all(item.position >= 0.0) and np.all(item.position <= 500.0)


def test_static_items_do_not_move():
    rng = np.random.default_rng(5)
    item = clut.ClutterItem("disc", (1, 2, 3), np.zeros(2), np.ones(2),
                            0.0, 0.1, radius=1.0, dynamic=False)
    before = item.position.copy()
    item.step()
    assert np.array_equal(item.position, before)

    moving = clut.ClutterItem("disc", (1, 2, 3), np.zeros(2), np.ones(2),
                              0.0, 0.1, radius=1.0, dynamic=True)
    moving.step()
    assert np.allclose(moving.position, [1.0, 1.0])
    assert moving.angle == pytest.approx(0.1)


def test_clutter_draws_into_mask():
    mask = render.new_mask(64)
    item = clut.ClutterItem("rect", (9, 9, 9), np.array([0.0, 0.0]),
                            np.zeros(2), 0.3, 0.0, length=1.0, width=0.4)
    to_px = lambda p: render.pendulum_to_px(p, 64)
    item.draw(ImageDraw.Draw(mask), to_px, 64 / 5.0, mask=True)
    assert render.mask_to_bool(mask).sum() > 0


# --- rendering ---------------------------------------------------------------------

def test_pendulum_frame_matches_its_mask_exactly():
    # with no clutter the mask must recount precisely the non-background
    # pixels: frame and mask render the same geometry through the same path
    state = np.array([0.7, -0.4, 0.0, 0.0])
    frame, mask, footprint = render.render_pendulum_frame(state, 128)
    assert frame.shape == (3, 128, 128) and frame.dtype == np.uint8
    nonwhite = (frame != 255).any(axis=0)
    assert np.array_equal(nonwhite, mask)
    assert not footprint.any()
    # both link and joint colors are present
    flat = frame.reshape(3, -1).T
    assert (flat == np.array(render.PENDULUM_LINK_COLOR)).all(axis=1).any()
    assert (flat == np.array(render.PENDULUM_JOINT_COLOR)).all(axis=1).any()


def test_spider_frame_overlaps_its_mask():
    state = np.zeros(spid.STATE_DIM)
    state[0:2] = (250.0, 250.0)
    state[2:5] = (0.5, spid.SECTOR + 0.5, 2 * spid.SECTOR + 0.5)
    state[5:8] = 60.0
    frame, mask, footprint = render.render_spider_frame(state, 128)
    assert frame.shape == (3, 128, 128)
    assert not footprint.any()
    nonwhite = (frame != 255).any(axis=0)
    inter = np.logical_and(nonwhite, mask).sum()
    union = np.logical_or(nonwhite, mask).sum()
    assert inter / union > 0.7          # downsampling blurs the frame only


def test_footprint_mask_ignores_paint_order():
    # the stored mask is the union of clutter footprints: a shape hidden
    # beneath the object still contributes every one of its pixels
    state = np.array([0.0, 0.0, 0.0, 0.0])     # hangs straight down
    blocker = clut.ClutterItem(
        "rect", (245, 87, 77), np.array([0.0, -1.0]), np.zeros(2),
        0.0, 0.0, length=0.6, width=0.6)
    _, _, fp_front = render.render_pendulum_frame(state, 128,
                                                  front=[blocker])
    _, _, fp_behind = render.render_pendulum_frame(state, 128,
                                                   behind=[blocker])
    assert fp_front.any()
    assert np.array_equal(fp_front, fp_behind)


def test_object_coverage_from_masks():
    state = np.array([0.0, 0.0, 0.0, 0.0])
    blocker = clut.ClutterItem(
        "rect", (245, 87, 77), np.array([0.0, -1.0]), np.zeros(2),
        0.0, 0.0, length=0.6, width=0.6)
    _, object_mask, footprint = render.render_pendulum_frame(
        state, 128, front=[blocker])
    assert render.occluded_fraction(object_mask, footprint) > 0.05


def test_occluded_fraction_synthetic_masks():
    obj = np.zeros((4, 4), dtype=bool)
    obj[0, 0:4] = True
    front = np.zeros((4, 4), dtype=bool)
    front[0, 0] = True
    assert render.occluded_fraction(obj, front) == pytest.approx(0.25)
    assert render.occluded_fraction(np.zeros((4, 4), bool), front) == 0.0
