import json
import math

import numpy as np
import pytest

from mapprior.data import (
    HDLane,
    HDRecord,
    LaneGraph,
    SyntheticSpec,
    filter_still_frames,
    generate_synthetic_scene,
    hdmap_to_lanegraph,
    list_scenes,
    load_bundle,
    save_bundle,
    split_by_key,
)
from mapprior.data.io import SCHEMA_VERSION
from mapprior.data.synthetic import _junction
from mapprior.errors import InputError, IntegrityError, ParseError, SchemaVersionError
from mapprior.geo import Extent, GeoPose, ego_to_latlon

POSE = GeoPose(41.0, -81.5, 0.0)


def _enu(points_ego):
    """Ego points for a pose with heading 0 at the record origin are ENU directly."""
    pts = np.asarray(points_ego, dtype=np.float64)
    return np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)


class TestLaneGraph:
    def test_diagonal_rejected(self):
        with pytest.raises(InputError):
            LaneGraph(np.zeros((1, 11, 3)), np.ones(1), np.ones((1, 1), dtype=np.uint8))

    def test_json_round_trip(self, scenes):
        g = scenes[3].gt_graph
        assert LaneGraph.from_json(g.to_json()).equals(g)

    def test_successors(self):
        adj = np.array([[0, 1, 1], [0, 0, 0], [1, 0, 0]], dtype=np.uint8)
        g = LaneGraph(np.zeros((3, 11, 3)), np.ones(3), adj)
        assert g.successors(0).tolist() == [1, 2] and g.successors(1).tolist() == []


class TestHDMap:
    def test_minimal_chain(self):
        rec = HDRecord(
            {"A": HDLane(_enu([[-40, 0], [-5, 0]]), ["B"]), "B": HDLane(_enu([[-5, 0], [30, 0]]), [])},
            (POSE.lat, POSE.lon),
        )
        g = hdmap_to_lanegraph(rec, POSE)
        assert g.n_lanes == 2
        np.testing.assert_array_equal(g.adjacency, [[0, 1], [0, 0]])

    def test_relink_through_dropped_lane(self):
        # B loops far outside the window, so A -> C must be bridged
        rec = HDRecord(
            {
                "A": HDLane(_enu([[-40, 0], [-10, 0]]), ["B"]),
                "B": HDLane(_enu([[200, 200], [300, 200]]), ["C"]),
                "C": HDLane(_enu([[10, 0], [40, 0]]), []),
            },
            (POSE.lat, POSE.lon),
        )
        g = hdmap_to_lanegraph(rec, POSE)
        assert g.n_lanes == 2
        np.testing.assert_array_equal(g.adjacency, [[0, 1], [0, 0]])

    def test_relink_matches_transitive_closure(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = 6
            succ = {str(i): [str(j) for j in range(n) if j != i and rng.random() < 0.3] for i in range(n)}
            inside = rng.random(n) < 0.5
            lanes = {}
            for i in range(n):
                y = -20 + 7 * i
                geom = [[-10, y], [10, y]] if inside[i] else [[500, y], [520, y]]
                lanes[str(i)] = HDLane(_enu(geom), succ[str(i)])
            g = hdmap_to_lanegraph(HDRecord(lanes, (POSE.lat, POSE.lon)), POSE, Extent(100, 60))
            kept = [i for i in range(n) if inside[i]]
            # brute force: DFS over removed nodes only
            expected = np.zeros((len(kept), len(kept)), dtype=np.uint8)
            for a_idx, a in enumerate(kept):
                seen, stack = set(), list(succ[str(a)])
                while stack:
                    v = int(stack.pop())
                    if v in seen:
                        continue
                    seen.add(v)
                    if inside[v]:
                        if v != a:
                            expected[a_idx, kept.index(v)] = 1
                    else:
                        stack.extend(succ[str(v)])
            np.testing.assert_array_equal(g.adjacency, expected)

    def test_boundary_crossing_lane_clipped(self):
        rec = HDRecord({"A": HDLane(_enu([[-80, 3], [80, 3]]), [])}, (POSE.lat, POSE.lon))
        g = hdmap_to_lanegraph(rec, POSE)
        pts = g.points[0]
        assert np.abs(pts[:, 0]).max() <= 50 + 1e-6 and np.abs(pts[:, 1]).max() <= 25 + 1e-6
        assert pts[0, 0] == pytest.approx(-50, abs=1e-6) and pts[-1, 0] == pytest.approx(50, abs=1e-6)

    def test_offset_origin(self):
        # record anchored 100 m west of the pose; lane at east = 100 is at the ego origin
        lat, lon = ego_to_latlon(-100.0, 0.0, POSE)
        rec = HDRecord({"A": HDLane(_enu([[90, 0], [110, 0]]), [])}, (float(lat), float(lon)))
        g = hdmap_to_lanegraph(rec, POSE)
        assert g.points[0, 5, 0] == pytest.approx(0.0, abs=1e-3)

    def test_record_json(self):
        text = json.dumps({"origin": [41.0, -81.5], "lanes": {"a": {"centerline": [[0, 0, 0], [5, 0, 0]], "successors": []}}})
        rec = HDRecord.from_json(text)
        assert list(rec.lanes) == ["a"] and rec.lanes["a"].centerline.shape == (2, 3)
        with pytest.raises(ParseError):
            HDRecord.from_json("{")


class TestSynthetic:
    def test_minimal_straight(self):
        b = generate_synthetic_scene(SyntheticSpec(seed=7, layout="straight", lanes_per_road=1))
        g = b.gt_graph
        assert g.n_lanes == 1 and not g.adjacency.any()
        np.testing.assert_allclose(g.points[0, :, 1], 0.0, atol=1e-6)
        assert np.all(np.diff(g.points[0, :, 0]) > 0)
        assert len(b.sd_map) == 1

    def test_crossroad_turn_table(self):
        spec = SyntheticSpec(seed=7, layout="crossroad", lanes_per_road=1)
        lanes, _ = _junction(spec, np.random.default_rng(0))
        # hand-enumerated right-hand-traffic turn table: (from arm, to arm)
        table = {
            ("east", "west"), ("east", "south"), ("east", "north"),
            ("north", "south"), ("north", "east"), ("north", "west"),
            ("west", "east"), ("west", "north"), ("west", "south"),
            ("south", "north"), ("south", "west"), ("south", "east"),
        }
        kinds = {
            ("east", "west"): "straight", ("east", "south"): "left", ("east", "north"): "right",
            ("north", "south"): "straight", ("north", "east"): "left", ("north", "west"): "right",
            ("west", "east"): "straight", ("west", "north"): "left", ("west", "south"): "right",
            ("south", "north"): "straight", ("south", "west"): "left", ("south", "east"): "right",
        }
        connectors = {name for name in lanes if "_to_" in name}
        assert len(connectors) == 12
        found = set()
        for name in connectors:
            src, rest = name.split("_", 1)
            kind, dst = rest.split("_to_")
            assert kind.rstrip("0") == kinds[(src, dst)]
            assert name in lanes[f"{src}_in0"][1]
            assert lanes[name][1] == [f"{dst}_out0"]
            found.add((src, dst))
        assert found == table

    def test_crossroad_graph_structure(self):
        g = generate_synthetic_scene(SyntheticSpec(seed=7, layout="crossroad", lanes_per_road=1)).gt_graph
        assert g.n_lanes == 20 and int(g.adjacency.sum()) == 24
        out_deg, in_deg = g.adjacency.sum(1), g.adjacency.sum(0)
        assert sorted(out_deg.tolist()) == [0] * 4 + [1] * 12 + [3] * 4
        assert sorted(in_deg.tolist()) == [0] * 4 + [1] * 12 + [3] * 4

    @pytest.mark.parametrize("layout", ["straight", "curve", "t_intersection", "crossroad"])
    def test_edges_connect_end_to_start(self, layout):
        b = generate_synthetic_scene(SyntheticSpec(seed=11, layout=layout, lanes_per_road=2, curvature=0.02))
        g = b.gt_graph
        for i, j in zip(*np.nonzero(g.adjacency)):
            assert np.linalg.norm(g.points[i, -1, :2] - g.points[j, 0, :2]) < 0.5
        assert np.abs(g.points[..., 0]).max() <= 50 + 1e-6 and np.abs(g.points[..., 1]).max() <= 25 + 1e-6

    def test_t_intersection_counts(self):
        g = generate_synthetic_scene(SyntheticSpec(seed=3, layout="T-intersection")).gt_graph
        assert g.n_lanes == 12 and int(g.adjacency.sum()) == 12

    def test_deterministic_bytes(self, tmp_path):
        spec = SyntheticSpec(seed=5, layout="curve", lanes_per_road=2, curvature=-0.01)
        save_bundle(generate_synthetic_scene(spec), tmp_path / "a")
        save_bundle(generate_synthetic_scene(spec), tmp_path / "b")
        sid = list_scenes(tmp_path / "a")[0]
        for name in ("sd_map.json", "satellite.png", "lane_graph.json", "meta.json"):
            assert (tmp_path / "a" / sid / name).read_bytes() == (tmp_path / "b" / sid / name).read_bytes()

    def test_seed_changes_scene(self):
        a = generate_synthetic_scene(SyntheticSpec(seed=1, layout="straight"))
        b = generate_synthetic_scene(SyntheticSpec(seed=2, layout="straight"))
        assert not np.array_equal(a.satellite.pixels, b.satellite.pixels)

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"layout": "roundabout"}, "layout"),
            ({"lanes_per_road": 4}, "lanes_per_road"),
            ({"lane_width": 9.0}, "lane_width"),
            ({"curvature": 0.2}, "curvature"),
            ({"texture_noise": -1.0}, "texture_noise"),
        ],
    )
    def test_invalid_spec_names_field(self, kwargs, field):
        with pytest.raises(InputError) as exc:
            SyntheticSpec(**kwargs)
        assert field in str(exc.value)

    def test_satellite_shows_road_under_lanes(self):
        b = generate_synthetic_scene(SyntheticSpec(seed=4, layout="straight", texture_noise=0.0))
        row, col = b.satellite.ego_to_pixel(0.0, float(b.gt_graph.points[0, 5, 1]))
        px = b.satellite.pixels[int(row), int(col)]
        assert np.abs(px.astype(int) - np.array([112, 112, 116])).max() <= 1 or px.min() > 200


class TestPersistence:
    def test_round_trip(self, scenes, tmp_path):
        for b in scenes:
            save_bundle(b, tmp_path)
            back = load_bundle(tmp_path, b.scene_id)
            assert back.scene_id == b.scene_id and back.pose == b.pose and back.split_key == b.split_key
            np.testing.assert_array_equal(back.satellite.pixels, b.satellite.pixels)
            assert back.satellite.meters_per_pixel == pytest.approx(b.satellite.meters_per_pixel)
            assert back.gt_graph.equals(b.gt_graph)
            assert len(back.sd_map) == len(b.sd_map)
            for p, q in zip(back.sd_map.polylines, b.sd_map.polylines):
                np.testing.assert_array_equal(p.points, q.points)
                assert (p.road_class, p.lane_count, p.one_way) == (q.road_class, q.lane_count, q.one_way)

    def test_missing_satellite(self, scenes, tmp_path):
        save_bundle(scenes[0], tmp_path)
        (tmp_path / scenes[0].scene_id / "satellite.png").unlink()
        with pytest.raises(IntegrityError) as exc:
            load_bundle(tmp_path, scenes[0].scene_id)
        assert "satellite" in str(exc.value)

    def test_schema_version(self, scenes, tmp_path):
        save_bundle(scenes[0], tmp_path)
        meta_path = tmp_path / scenes[0].scene_id / "meta.json"
        meta = json.loads(meta_path.read_text())
        meta["schema_version"] = SCHEMA_VERSION + 1
        meta_path.write_text(json.dumps(meta))
        with pytest.raises(SchemaVersionError):
            load_bundle(tmp_path, scenes[0].scene_id)

    def test_no_temp_files_left(self, scenes, tmp_path):
        save_bundle(scenes[1], tmp_path)
        assert not [p for p in (tmp_path / scenes[1].scene_id).iterdir() if p.name.startswith(".tmp")]


class TestSplits:
    def test_split_partition(self):
        keys = {f"s{i}": ["boston", "pittsburgh", "singapore", "vegas"][i % 4] for i in range(40)}
        train, held = split_by_key(keys, ["singapore"])
        assert set(train).isdisjoint(held) and set(train) | set(held) == set(keys)
        assert all(keys[s] == "singapore" for s in held) and all(keys[s] != "singapore" for s in train)

    def test_still_frames(self):
        poses = []
        for i, x in enumerate([0.0, 0.2, 0.4, 3.0, 3.1, 8.0]):
            lat, lon = ego_to_latlon(x, 0.0, POSE)
            poses.append((f"f{i}", GeoPose(float(lat), float(lon), 0.0)))
        assert filter_still_frames(poses, 1.0) == ["f0", "f3", "f5"]
