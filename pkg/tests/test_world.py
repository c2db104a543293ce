import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdnav.world import (
    LidarConfig,
    LidarScan,
    LimitsError,
    RobotState,
    WorldMap,
    check_collision,
    integrate_robot,
    raycast,
    vec2,
    wrap_angle,
)
from oracles import lidar_oracle

ONE_BEAM = LidarConfig(angle_min=0.0, angle_max=1.0, num_beams=1, max_range=10.0)


def open_map(walls=None, circles=None):
    return WorldMap((-10, -10, 10, 10), walls=walls if walls is not None else np.zeros((0, 4)),
                    static_obstacles=circles if circles is not None else np.zeros((0, 3)))


class TestTypes:
    def test_vec2_rejects_nan(self):
        with pytest.raises(ValueError):
            vec2(float("nan"), 0)

    def test_map_rejects_zero_length_wall(self):
        with pytest.raises(ValueError):
            WorldMap((0, 0, 5, 5), walls=[[1, 1, 1, 1]])

    def test_map_rejects_circle_outside_bounds(self):
        with pytest.raises(ValueError):
            WorldMap((0, 0, 5, 5), static_obstacles=[[4.8, 2, 0.5]])

    def test_rectangle_has_four_walls(self):
        m = WorldMap.rectangle(10, 4)
        assert m.walls.shape == (4, 4)
        assert m.bounds == (0.0, 0.0, 10.0, 4.0)

    def test_robot_velocity_limits(self):
        with pytest.raises(LimitsError):
            RobotState(position=(0, 0), linear_velocity=0.3)
        with pytest.raises(ValueError):
            RobotState(position=(0, 0), radius=0)
        with pytest.raises(ValueError):
            RobotState(position=(0, 0), task_flag=6)

    def test_lidar_config_invariants(self):
        with pytest.raises(ValueError):
            LidarConfig(angle_min=1.0, angle_max=1.0)
        with pytest.raises(ValueError):
            LidarConfig(num_beams=0)
        with pytest.raises(ValueError):
            LidarConfig(max_range=0)

    def test_default_lidar_covers_full_circle(self):
        a = LidarConfig().beam_angles()
        assert len(a) == 360
        assert a[0] == -math.pi
        assert a[1] - a[0] == pytest.approx(2 * math.pi / 360)


class TestRaycast:
    def test_perpendicular_wall(self):
        scan = raycast((0, 0, 0), open_map(walls=[[2, -5, 2, 5]]), config=ONE_BEAM)
        assert scan.ranges[0] == pytest.approx(2.0, abs=1e-12)

    def test_empty_world_reports_max_range(self):
        scan = raycast((0, 0, 0.3), open_map())
        assert np.all(scan.ranges == 3.5)

    def test_pedestrian_circle(self):
        peds = np.array([[3.0, 0.0, 0.5]])
        scan = raycast((0, 0, 0), open_map(), peds, ONE_BEAM)
        assert scan.ranges[0] == pytest.approx(2.5, abs=1e-12)

    def test_beam_angles_follow_heading(self):
        cfg = LidarConfig(angle_min=-math.pi / 2, angle_max=math.pi / 2, num_beams=3, max_range=10.0)
        m = open_map(walls=[[-5, 4, 5, 4]])
        scan = raycast((0, 0, math.pi / 2), m, config=cfg)
        # middle beam points up at the wall, the side beams run parallel to it
        assert scan.ranges[1] == pytest.approx(4.0)
        assert scan.ranges[0] == 10.0 and scan.ranges[2] == 10.0

    def test_inside_circle_is_min_positive(self):
        scan = raycast((0, 0, 0), open_map(circles=[[0.1, 0, 0.5]]), config=ONE_BEAM)
        assert 0 < scan.ranges[0] <= 1e-9

    def test_max_range_clamps(self):
        scan = raycast((0, 0, 0), open_map(walls=[[5, -1, 5, 1]]), config=LidarConfig(0, 1, 1, 3.5))
        assert scan.ranges[0] == 3.5

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi),
        st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6), st.floats(-6, 6)), max_size=4),
        st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6), st.floats(0.1, 1.0)), max_size=4),
    )
    def test_matches_scalar_oracle(self, x, y, th, walls, circles):
        walls = [w for w in walls if math.hypot(w[2] - w[0], w[3] - w[1]) > 1e-3]
        cfg = LidarConfig(num_beams=72)
        m = open_map(walls=walls or np.zeros((0, 4)), circles=circles or np.zeros((0, 3)))
        got = raycast((x, y, th), m, config=cfg).ranges
        want = lidar_oracle((x, y, th), walls, circles, cfg.angle_min, cfg.angle_max, cfg.num_beams, cfg.max_range)
        assert np.max(np.abs(got - np.array(want))) <= 1e-6
        assert np.all(got > 0) and np.all(got <= cfg.max_range)


class TestIntegrate:
    def test_straight_step(self):
        s = integrate_robot(RobotState(position=(0, 0)), (0.22, 0), 0.1)
        assert s.position == pytest.approx([0.022, 0.0], abs=1e-15)

    def test_stop_keeps_pose(self):
        s0 = RobotState(position=(1.5, -2.0), heading=0.7)
        s = integrate_robot(s0, (0, 0), 0.1)
        assert s.pose == s0.pose

    def test_pure_rotation(self):
        s = integrate_robot(RobotState(position=(0, 0)), (0, math.pi), 0.5)
        assert s.heading == pytest.approx(math.pi / 2)
        assert tuple(s.position) == (0.0, 0.0)

    def test_rejects_over_speed(self):
        with pytest.raises(LimitsError):
            integrate_robot(RobotState(position=(0, 0)), (0.23, 0), 0.1)
        with pytest.raises(LimitsError):
            integrate_robot(RobotState(position=(0, 0)), (-0.1, 0), 0.1)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            integrate_robot(RobotState(position=(0, 0)), (0.1, 0), 0.0)

    def test_uses_updated_heading(self):
        s = integrate_robot(RobotState(position=(0, 0)), (0.2, math.pi / 2), 1.0)
        assert s.position == pytest.approx([0.0, 0.2], abs=1e-12)

    def test_clamped_to_bounds(self):
        m = WorldMap.rectangle(1, 1)
        s = integrate_robot(RobotState(position=(0.99, 0.5)), (0.22, 0), 1.0, m)
        assert s.position[0] == 1.0

    def test_full_turn_returns_heading(self):
        s = RobotState(position=(0, 0), heading=0.4)
        w = 2 * math.pi / 100
        for _ in range(1000):
            s = integrate_robot(s, (0.0, w), 1.0)
        assert abs(wrap_angle(s.heading - 0.4)) <= 1e-9

    @given(st.floats(-50, 50))
    def test_wrap_range(self, a):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        assert math.cos(w) == pytest.approx(math.cos(a), abs=1e-9)


class TestCollision:
    @pytest.mark.parametrize(
        "ranges, r, expected",
        [([0.1, 2.0], 0.2, True), ([0.5, 0.5], 0.2, False), ([0.2], 0.2, False)],
    )
    def test_examples(self, ranges, r, expected):
        assert check_collision(LidarScan(ranges), r) is expected

    @given(st.lists(st.floats(0.01, 3.5), min_size=1, max_size=20), st.integers(0, 19), st.floats(0, 1))
    def test_monotone(self, ranges, i, shrink):
        before = check_collision(ranges, 0.2)
        i %= len(ranges)
        shrunk = list(ranges)
        shrunk[i] *= shrink
        assert not (before and not check_collision(shrunk, 0.2))
