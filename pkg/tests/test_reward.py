import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from omniwalk.mathkit import ConfigurationError
from omniwalk.reward import (
    LEFT,
    RIGHT,
    AliveThresholds,
    CurriculumCoeff,
    FootState,
    RewardInputs,
    RewardWeights,
    alive_reward_and_termination,
    curriculum_coeff_after,
    foot_clearance_error,
    foot_clearance_reward,
    pose_regularization_reward,
    resolve_swing_leg,
    total_reward,
    update_curriculum_coeff,
    velocity_error,
    velocity_reward,
)

W = RewardWeights()
DT = 0.025
small = st.floats(-3, 3)
vec3 = st.lists(small, min_size=3, max_size=3)
vec2 = st.lists(small, min_size=2, max_size=2)
coef = st.floats(1e-6, 1.0)


def sech(x):
    return 2.0 / (math.exp(x) + math.exp(-x))


def test_velocity_reward_examples():
    z = np.zeros(2)
    assert velocity_reward(np.zeros(3), z, z, 0.0, 1.0, W) == DT
    r = velocity_reward(np.array([0.1, 0, 0]), z, z, 0.0, 1.0, W)
    assert r == pytest.approx(DT * sech(9 * math.sqrt(0.02)), abs=1e-15)
    assert r == pytest.approx(0.012984120508341671, abs=1e-15)  # 40-digit decimal oracle


@given(vec3, vec2, vec2, small, coef)
def test_velocity_reward_bounded(v_cmd, v_loc, v_ref, w, c):
    r = velocity_reward(np.array(v_cmd), np.array(v_loc), np.array(v_ref), w, c, W)
    assert 0.0 <= r <= DT


def test_velocity_error_components():
    e = velocity_error([1, 2, 3], [0.5, 1.0], [1.0, 0.0], 2.0)
    assert e == pytest.approx(math.sqrt(0.25 + 1 + 0 + 4 + 1))


@given(st.floats(0, 2), st.floats(0.001, 1))
def test_rewards_strictly_decreasing_in_error(e, de):
    a = velocity_reward(np.array([e, 0, 0]), np.zeros(2), np.zeros(2), 0.0, 1.0, W)
    b = velocity_reward(np.array([e + de, 0, 0]), np.zeros(2), np.zeros(2), 0.0, 1.0, W)
    if 9 * e < 25:
        assert b < a
    fa = foot_clearance_reward(FootState(0.0, e, 0, 0, RIGHT), 1.0, W)
    fb = foot_clearance_reward(FootState(0.0, e + de, 0, 0, RIGHT), 1.0, W)
    if e > W.foot_clearance:
        assert fb < fa


def test_pose_regularization_examples():
    q = np.array([0.1, -0.2])
    assert pose_regularization_reward(q, q, W) == DT
    r = pose_regularization_reward(np.zeros(1), np.ones(1), W)
    assert r == pytest.approx(DT * sech(3.0), abs=1e-15)
    assert r == pytest.approx(0.0024831981854858302, abs=1e-15)  # 40-digit decimal oracle
    assert pose_regularization_reward(np.zeros(0), np.zeros(0), W) == DT
    with pytest.raises(ConfigurationError):
        pose_regularization_reward(np.zeros(2), np.zeros(3), W)


@given(st.lists(small, min_size=3, max_size=3), st.lists(small, min_size=3, max_size=3))
def test_pose_regularization_bounded(a, b):
    assert 0.0 <= pose_regularization_reward(np.array(a), np.array(b), W) <= DT


def test_alive_examples():
    th = AliveThresholds(0.3, 0.5, 0.5)
    assert alive_reward_and_termination(0.45, 0.0, 0.0, th, DT) == (DT, False)
    assert alive_reward_and_termination(0.3, 0.0, 0.0, th, DT) == (0.0, True)
    assert alive_reward_and_termination(0.45, 0.6, 0.0, th, DT) == (0.0, True)
    assert alive_reward_and_termination(0.45, 0.0, -0.6, th, DT) == (0.0, True)
    with pytest.raises(ConfigurationError):
        AliveThresholds(0.0)
    with pytest.raises(ConfigurationError):
        AliveThresholds(0.3, 2.0)


def test_foot_clearance_examples():
    ideal = FootState(0.0, 0.05, 0.0, 0.0, RIGHT)
    assert foot_clearance_reward(ideal, 0.3, W) == pytest.approx(0.3 * DT)
    both_down = FootState(0.0, 0.0, 0.0, 0.0, RIGHT)
    assert foot_clearance_error(both_down, W) == pytest.approx(5 * 0.05)
    assert foot_clearance_reward(both_down, 1.0, W) < DT
    fs = FootState(left_height=0.002, right_height=0.03, swing=RIGHT)
    e = foot_clearance_error(fs, W)
    assert e == pytest.approx(math.hypot(0.1, 0.01), abs=1e-12)
    assert foot_clearance_reward(fs, 1.0, W) == pytest.approx(DT * sech(10 * e), abs=1e-15)
    assert sech(10 * e) == pytest.approx(0.64559394624001113, abs=1e-13)  # decimal oracle
    # left swing swaps the roles of the two feet
    mirrored = FootState(left_height=0.03, right_height=0.002, swing=LEFT)
    assert foot_clearance_error(mirrored, W) == pytest.approx(e)
    rolled = FootState(0.0, 0.05, left_roll=0.1, right_roll=-0.2, swing=RIGHT)
    assert foot_clearance_error(rolled, W) == pytest.approx(math.hypot(0.1, 0.2))


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1),
       st.sampled_from([LEFT, RIGHT]), coef)
def test_foot_reward_bounded(lh, rh, lr, rr, side, c):
    r = foot_clearance_reward(FootState(lh, rh, lr, rr, side), c, W)
    assert 0.0 <= r <= DT


def test_swing_leg_examples():
    # distances to the trunk: right foot 3 cm closer
    assert resolve_swing_leg(-0.40, -0.37, LEFT, 0.01) == RIGHT
    assert resolve_swing_leg(-0.40, -0.395, LEFT, 0.01) == LEFT
    assert resolve_swing_leg(-0.40, -0.40, LEFT, 0.01) == LEFT
    assert resolve_swing_leg(-0.40, -0.40, RIGHT, 0.01) == RIGHT


@given(st.floats(-1, 1), st.floats(-1, 1), st.sampled_from([LEFT, RIGHT]))
def test_swing_leg_zero_hysteresis_is_argmin(l, r, prev):
    side = resolve_swing_leg(l, r, prev, 0.0)
    assert side in (LEFT, RIGHT)
    if abs(l) < abs(r):
        assert side == LEFT
    elif abs(r) < abs(l):
        assert side == RIGHT
    else:
        assert side == prev


def test_curriculum_coeff_examples():
    assert update_curriculum_coeff(CurriculumCoeff(1.0, 0.95)).value == 1.0
    assert update_curriculum_coeff(CurriculumCoeff(0.01, 0.95)).value == \
        pytest.approx(math.exp(0.95 * math.log(0.01)), rel=1e-14)
    assert update_curriculum_coeff(CurriculumCoeff(0.01, 0.95)).value == pytest.approx(0.012589254117941672, rel=1e-13)
    assert update_curriculum_coeff(CurriculumCoeff(0.05, 0.995)).value == pytest.approx(0.050754570186123448, rel=1e-13)
    with pytest.raises(ConfigurationError):
        CurriculumCoeff(0.0, 0.9)
    with pytest.raises(ConfigurationError):
        CurriculumCoeff(0.5, 1.0)


@given(coef, st.floats(0.01, 0.99), st.integers(0, 200))
def test_curriculum_coeff_closed_form_and_monotone(c0, kd, n):
    c = CurriculumCoeff(c0, kd)
    prev = c.value
    for _ in range(n):
        c = update_curriculum_coeff(c)
        assert prev <= c.value <= 1.0
        prev = c.value
    assert c.value == pytest.approx(curriculum_coeff_after(c0, kd, n), rel=1e-9)


def _inputs(**kw):
    base = dict(v_cmd=np.zeros(3), v_local=np.zeros(2), v_ref=np.zeros(2), omega_z=0.0,
                q_reg=np.zeros(2), q_reg_current=np.zeros(2), height=1.0, roll=0.0, pitch=0.0,
                foot=FootState(0.0, 0.05, 0.0, 0.0, RIGHT))
    base.update(kw)
    return RewardInputs(**base)


def test_total_reward_examples():
    th = AliveThresholds(0.5)
    t = total_reward(_inputs(), W, th, 1.0, 1.0)
    assert t.total == pytest.approx(68 * DT) and t.total == pytest.approx(1.7)
    fell = total_reward(_inputs(height=0.2), W, th, 1.0, 1.0)
    assert fell.alive == 0.0 and fell.terminate
    zero = RewardWeights(0.0, 0.0, 0.0, 0.0)
    assert total_reward(_inputs(), zero, th, 1.0, 1.0).total == 0.0


@given(vec3, vec2, vec2, small, st.floats(0, 2), st.floats(-1, 1), st.floats(-1, 1), coef, coef)
def test_total_reward_is_weighted_sum_and_terms_bounded(v_cmd, vl, vr, w, h, roll, pitch, cv, cf):
    th = AliveThresholds(0.5)
    t = total_reward(_inputs(v_cmd=np.array(v_cmd), v_local=np.array(vl), v_ref=np.array(vr),
                             omega_z=w, height=h, roll=roll, pitch=pitch), W, th, cv, cf)
    for term in (t.vel, t.reg, t.alive, t.foot):
        assert 0.0 <= term <= DT
    oracle = 42 * t.vel + 4 * t.reg + 4 * t.alive + 18 * t.foot
    assert t.total == pytest.approx(oracle, rel=1e-12, abs=1e-15)


def test_featureless_body_reports_zero_foot_error():
    t = total_reward(_inputs(foot=None), W, AliveThresholds(0.5), 1.0, 0.4)
    assert t.foot == pytest.approx(0.4 * DT)


def test_weight_validation():
    with pytest.raises(ConfigurationError):
        RewardWeights(w_vel=-1.0)
    with pytest.raises(ConfigurationError):
        RewardWeights(dt=0.0)
