import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapprior.config import MetricConfig
from mapprior.data.types import LaneGraph
from mapprior.errors import InputError
from mapprior.evaluation import det_l, discrete_frechet, ols, top_ll
from mapprior.evaluation.metrics import average_precision
from mapprior.evaluation.report import evaluate_graphs
from oracles import brute_force_frechet, ranked_ap


def lane(offset=0.0, n=11, length=20.0):
    x = np.linspace(0.0, length, n)
    return np.stack([x, np.full(n, offset), np.zeros(n)], 1)


def graph(lanes, conf, edges=None, scores=None):
    n = len(lanes)
    adj = np.zeros((n, n), dtype=np.uint8)
    sc = np.zeros((n, n))
    for k, (i, j) in enumerate(edges or []):
        adj[i, j] = 1
        sc[i, j] = scores[k] if scores else 1.0
    return LaneGraph(np.asarray(lanes), np.asarray(conf, dtype=float), adj, sc if scores else None)


class TestFrechet:
    def test_identity(self):
        assert discrete_frechet(lane(), lane()) == 0.0

    def test_constant_offset(self):
        a = np.array([[0, 0, 0], [1, 0, 0]], dtype=float)
        b = np.array([[0, 1, 0], [1, 1, 0]], dtype=float)
        assert discrete_frechet(a, b) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            discrete_frechet(np.zeros((0, 3)), lane())

    def test_matches_coupling_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            a = rng.normal(size=(int(rng.integers(1, 7)), 3))
            b = rng.normal(size=(int(rng.integers(1, 7)), 3))
            assert discrete_frechet(a, b) == brute_force_frechet(a, b)

    @given(st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded_by_endpoints(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(int(rng.integers(1, 6)), 3))
        b = rng.normal(size=(int(rng.integers(1, 6)), 3))
        f = discrete_frechet(a, b)
        assert f == discrete_frechet(b, a)
        assert f >= max(np.linalg.norm(a[0] - b[0]), np.linalg.norm(a[-1] - b[-1])) - 1e-12


class TestAP:
    @pytest.mark.parametrize("hits,n_pos", [([1, 0, 1], 2), ([0, 1, 1, 0], 3), ([1, 1], 2), ([0, 0], 1), ([0, 1, 0, 1, 1], 4)])
    def test_against_rank_oracle(self, hits, n_pos):
        assert average_precision(hits, n_pos) == pytest.approx(ranked_ap(hits, n_pos), abs=1e-12)

    def test_every_ranking_of_small_lists(self):
        for n in range(1, 7):
            for hits in itertools.product([0, 1], repeat=n):
                for extra in range(3):
                    n_pos = sum(hits) + extra
                    if n_pos:
                        assert average_precision(hits, n_pos) == pytest.approx(ranked_ap(hits, n_pos), abs=1e-12)


class TestDetL:
    def test_perfect(self):
        gts = [graph([lane(0), lane(4)], [1, 1])]
        assert det_l(gts, gts) == 100.0

    def test_no_predictions(self):
        gts = [graph([lane(0)], [1])]
        assert det_l([LaneGraph.empty()], gts) == 0.0

    def test_two_scene_toy(self):
        gts = [graph([lane(0)], [1]), graph([lane(0)], [1])]
        preds = [graph([lane(0.5)], [0.9]), graph([lane(2.5)], [0.8])]
        # tau 1 and 2: ranked hits [1, 0] -> AP 0.5; tau 3: [1, 1] -> AP 1
        expected = 100.0 * (0.5 + 0.5 + 1.0) / 3.0
        assert det_l(preds, gts) == pytest.approx(expected, abs=1e-9)

    def test_three_lane_toy(self):
        gts = [graph([lane(0), lane(8), lane(-8)], [1, 1, 1])]
        preds = [graph([lane(1.5), lane(8.2), lane(20.0), lane(-5.5)], [0.6, 0.9, 0.8, 0.7])]
        # ranked by confidence: 8.2 (d 0.2), 20 (miss), -5.5 (d 2.5), 1.5 (d 1.5)
        per_tau = {1.0: [1, 0, 0, 0], 2.0: [1, 0, 0, 1], 3.0: [1, 0, 1, 1]}
        expected = 100.0 * np.mean([ranked_ap(h, 3) for h in per_tau.values()])
        assert det_l(preds, gts) == pytest.approx(expected, abs=1e-9)

    def test_confident_hit_on_a_free_lane_never_hurts(self):
        rng = np.random.default_rng(3)
        gts = [graph([lane(0), lane(20)], [1, 1])]
        for _ in range(20):
            offs = rng.uniform(-4, 4, 3)
            base = graph([lane(o) for o in offs], rng.uniform(0.1, 0.8, 3))
            better = graph([lane(20.0)] + [lane(o) for o in offs], np.concatenate([[0.95], base.confidences]))
            assert det_l([better], gts) >= det_l([base], gts) - 1e-9

    def test_confident_hit_can_displace_a_weaker_match(self):
        # greedy matching: the new lane takes the GT lane at 6 m that the lane at 3.5 m held
        gts = [graph([lane(0), lane(6)], [1, 1])]
        base = graph([lane(3.5), lane(0.5)], [0.8, 0.5])
        better = graph([lane(6.0), lane(3.5), lane(0.5)], [0.95, 0.8, 0.5])
        cfg = MetricConfig((3.0,))
        assert det_l([base], gts, cfg) == 100.0
        assert det_l([better], gts, cfg) == pytest.approx(100.0 * ranked_ap([1, 0, 1], 2))

    def test_misaligned_lists(self):
        with pytest.raises(InputError):
            det_l([LaneGraph.empty()], [])


class TestTopLL:
    def _chain(self):
        return [lane(0, length=10), lane(0, length=10) + [10, 0, 0], lane(0, length=10) + [20, 0, 0]]

    def test_perfect(self):
        g = graph(self._chain(), [1, 1, 1], [(0, 1), (1, 2)], [1.0, 1.0])
        assert top_ll([g], [g]) == 100.0

    def test_no_predicted_edges(self):
        gt = graph(self._chain(), [1, 1, 1], [(0, 1), (1, 2)])
        assert top_ll([graph(self._chain(), [1, 1, 1])], [gt]) == 0.0

    @pytest.mark.parametrize("true_score,spurious_score", [(0.9, 0.7), (0.7, 0.9)])
    def test_chain_with_spurious_edge(self, true_score, spurious_score):
        gt = graph(self._chain(), [1, 1, 1], [(0, 1), (1, 2)])
        pred = graph(self._chain(), [0.9, 0.8, 0.7], [(0, 1), (0, 2), (1, 2)], [true_score, spurious_score, 0.95])
        # lane 0 ranks its two outgoing edges by score; lane 1 has only the true edge
        lane0 = [1, 0] if true_score > spurious_score else [0, 1]
        expected = 100.0 * (ranked_ap(lane0, 1) + ranked_ap([1], 1)) / 2.0
        assert top_ll([pred], [gt]) == pytest.approx(expected, abs=1e-9)

    def test_unmatched_gt_lane_counts_zero(self):
        gt = graph(self._chain(), [1, 1, 1], [(0, 1), (1, 2)])
        moved = self._chain()
        moved[0] = moved[0] + [0, 5, 0]  # beyond the 1.5 m gate
        pred = graph(moved, [1, 1, 1], [(0, 1), (1, 2)], [1.0, 1.0])
        assert top_ll([pred], [gt]) == pytest.approx(50.0)

    def test_scene_without_edges_is_skipped(self):
        gt = graph(self._chain(), [1, 1, 1], [(0, 1)])
        flat = graph([lane(0)], [1])
        assert top_ll([gt, flat], [gt, flat]) == 100.0


class TestOLS:
    def test_published_anchors(self):
        assert ols(28.6, 48.6, 10.9, 23.8) == pytest.approx(39.8, abs=0.1)
        assert ols(28.5, 49.5, 21.7, 26.9) == pytest.approx(44.1, abs=0.1)

    def test_boundaries(self):
        assert ols(0, 0, 0, 0) == 0.0
        assert ols(100, 100, 100, 100) == 100.0

    def test_out_of_range(self):
        with pytest.raises(InputError):
            ols(101, 0, 0, 0)

    @given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.integers(0, 3), st.floats(0, 50))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, vals, k, delta):
        bumped = list(vals)
        bumped[k] = min(100.0, bumped[k] + delta)
        assert ols(*bumped) >= ols(*vals) - 1e-12


class TestReport:
    def test_ground_truth_as_prediction(self):
        g = graph([lane(0, length=10), lane(0, length=10) + [10, 0, 0]], [1, 1], [(0, 1)], [1.0])
        rep = evaluate_graphs([g], [g], scene_ids=["a"])
        assert rep.det_l == 100.0 and rep.top_ll == 100.0
        d = rep.to_dict()
        assert "ols" not in d and "det_t" not in d
        assert rep.per_scene_csv().splitlines()[0] == "scene_id,det_l,top_ll,n_gt,n_pred"

    def test_ols_when_supplied(self):
        g = graph([lane(0)], [1])
        rep = evaluate_graphs([g], [g], det_t=40.0, top_lt=25.0)
        assert rep.ols == pytest.approx(ols(100.0, 40.0, 0.0, 25.0))

    def test_count_mismatch(self):
        with pytest.raises(InputError):
            evaluate_graphs([LaneGraph.empty()], [])

    def test_deterministic_bytes(self):
        g = graph([lane(0), lane(3)], [0.7, 0.4])
        p = graph([lane(0.4), lane(2.0)], [0.6, 0.9])
        a = evaluate_graphs([p], [g], MetricConfig()).to_json()
        b = evaluate_graphs([p], [g], MetricConfig()).to_json()
        assert a == b and json.loads(a)["config"]["frechet_thresholds"] == [1.0, 2.0, 3.0]
