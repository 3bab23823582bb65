from __future__ import annotations

import json

import numpy as np
import pytest

from dronecourier.world import (ScenarioError, VoxelWorld, clearance_to_boxes,
                                is_occupied, load_scenario, ray_intersect, vec3)

from .conftest import march_ray, write_scenario


def make_world(boxes):
    boxes = np.asarray(boxes, dtype=float).reshape(-1, 2, 3)
    return VoxelWorld(boxes=boxes, resolution=0.2,
                      bounds=np.array([[-50.0, -50.0, -50.0], [50.0, 50.0, 50.0]]))


UNIT_BOX = make_world([[[0, 0, 0], [1, 1, 1]]])


class TestIsOccupied:
    def test_empty_world(self):
        assert not is_occupied(make_world(np.zeros((0, 2, 3))), vec3(0, 0, 0))

    def test_interior_point(self):
        assert is_occupied(UNIT_BOX, vec3(0.5, 0.5, 0.5))

    def test_exterior_point(self):
        assert not is_occupied(UNIT_BOX, vec3(1.5, 0.5, 0.5))

    def test_boundary_counts_as_inside(self):
        assert is_occupied(UNIT_BOX, vec3(1.0, 0.5, 0.5))


class TestRayIntersect:
    def test_axis_aligned_hit(self):
        w = make_world([[[2, -1, -1], [3, 1, 1]]])
        t = ray_intersect(w, vec3(0, 0, 0), vec3(1, 0, 0), 10.0)
        assert t == pytest.approx(2.0, abs=1e-12)

    def test_out_of_range(self):
        w = make_world([[[2, -1, -1], [3, 1, 1]]])
        assert ray_intersect(w, vec3(0, 0, 0), vec3(1, 0, 0), 1.5) is None

    def test_against_ray_marching_oracle(self):
        rng = np.random.default_rng(7)
        boxes = []
        for _ in range(6):
            lo = rng.uniform(-8, 6, 3)
            hi = lo + rng.uniform(0.5, 3.0, 3)
            boxes.append([lo, hi])
        w = make_world(boxes)
        centers = w.boxes.mean(axis=1)
        max_range = 12.0
        checked = 0
        for _ in range(1000):
            origin = rng.uniform(-10, 10, 3)
            if is_occupied(w, origin):
                continue
            # aim in the general direction of a random box so most rays hit
            target = centers[rng.integers(len(centers))] + rng.normal(0, 1.5, 3)
            d = target - origin
            d /= np.linalg.norm(d)
            t_oracle = march_ray(w, origin, d, max_range)
            if t_oracle is None:
                continue
            t = ray_intersect(w, origin, d, max_range)
            assert t is not None
            assert abs(t - t_oracle) <= 2e-3
            checked += 1
        assert checked > 200  # the oracle actually exercised hits

    def test_entry_exit_boundary_property(self):
        rng = np.random.default_rng(3)
        w = make_world([[[1, -2, -2], [2.5, 2, 2]], [[-4, -4, 3], [4, 4, 4]]])
        eps = 1e-6
        hits = 0
        for _ in range(300):
            origin = rng.uniform(-6, 0.5, 3)
            if is_occupied(w, origin):
                continue
            target = w.boxes[rng.integers(2)].mean(axis=0) + rng.normal(0, 1.0, 3)
            d = target - origin
            d /= np.linalg.norm(d)
            t = ray_intersect(w, origin, d, 20.0)
            if t is None or t < 1e-5:
                continue
            assert is_occupied(w, origin + (t + eps) * d)
            assert not is_occupied(w, origin + (t - eps) * d)
            hits += 1
        assert hits > 100


class TestClearance:
    def test_outside_distance(self):
        assert clearance_to_boxes(UNIT_BOX, vec3(3, 0.5, 0.5)) == pytest.approx(2.0)

    def test_inside_is_zero(self):
        assert clearance_to_boxes(UNIT_BOX, vec3(0.5, 0.5, 0.5)) == 0.0

    def test_empty_world_is_inf(self):
        assert clearance_to_boxes(make_world(np.zeros((0, 2, 3))), vec3(0, 0, 0)) == np.inf


class TestLoadScenario:
    def test_default_scenario_values(self, default_scenario_path):
        sc = load_scenario(default_scenario_path)
        assert sc.cruise_altitude == 30.0
        assert sc.rooftop_height == 20.0
        assert sc.world.boxes.shape[0] == 5
        assert sc.marker.outer_diameter == pytest.approx(0.18)

    def test_idempotent(self, default_scenario_path):
        a = load_scenario(default_scenario_path)
        b = load_scenario(default_scenario_path)
        assert np.array_equal(a.world.boxes, b.world.boxes)
        assert np.array_equal(a.home, b.home)
        assert a.noise == b.noise
        assert a.cameras == b.cameras
        assert a.seed == b.seed

    def test_marker_diameter_invariant(self, tmp_path, default_scenario_dict):
        data = default_scenario_dict
        data["marker"]["inner_diameter"] = 0.2
        path = write_scenario(tmp_path, data)
        with pytest.raises(ScenarioError, match="inner_diameter < outer_diameter"):
            load_scenario(path)

    def test_obstructed_channel_invariant(self, tmp_path, default_scenario_dict):
        data = default_scenario_dict
        data["world"]["boxes"].append([[-1.0, 6.0, 0.0], [1.0, 9.0, 25.0]])
        path = write_scenario(tmp_path, data)
        with pytest.raises(ScenarioError, match="descent channel obstructed"):
            load_scenario(path)

    def test_parse_error_has_location(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"world": [,]}')
        with pytest.raises(ScenarioError, match=r":1:\d+"):
            load_scenario(path)

    def test_missing_field_named(self, tmp_path, default_scenario_dict):
        data = default_scenario_dict
        del data["marker"]["outer_diameter"]
        path = write_scenario(tmp_path, data)
        with pytest.raises(ScenarioError, match="marker.outer_diameter"):
            load_scenario(path)

    def test_channel_clearance_samples(self, default_scenario_path):
        sc = load_scenario(default_scenario_path)
        rng = np.random.default_rng(11)
        cx, cy = sc.channel_top[0], sc.channel_top[1]
        for _ in range(100):
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0, sc.drone_radius)
            z = rng.uniform(sc.channel_bottom_altitude, sc.channel_top[2])
            p = vec3(cx + rad * np.cos(ang), cy + rad * np.sin(ang), z)
            assert not is_occupied(sc.world, p)
