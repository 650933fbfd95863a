import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egowm.features import encode
from egowm.kinematics import flatten_action, standing_pose
from egowm.planner import (
    OracleDynamics,
    PlanningError,
    PlanRequest,
    argmin_first,
    candidate_seed,
    mean_std,
    plan,
    plan_report,
    sample_candidates,
    score_candidate,
)
from egowm.simulator import MotionPriorConfig, Simulator, make_scene
from egowm.worldmodel import ModelConfig, WorldModel

SIM = Simulator()
MODEL = WorldModel.init(ModelConfig(), 0)


def dot_distance(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) * (x - y)
    return total


def request(seed=0, **kw):
    rng = np.random.default_rng(seed)
    return PlanRequest(rng.uniform(size=(3, 64)), standing_pose(SIM.topology), rng.uniform(size=64), seed=seed, **kw)


class ConstantCost:
    """Dynamics whose rollout ends at a fixed latent per candidate call order."""

    def __init__(self, finals):
        self.finals = list(finals)
        self.calls = 0

    def rollout(self, context, actions):
        z = self.finals[self.calls]
        self.calls += 1
        return np.stack([z] * len(actions))


class TestScore:
    def test_goal_equal_to_prediction_costs_zero(self):
        req = request(1)
        cand = sample_candidates(req)[0]
        final = MODEL.rollout(req.context, [flatten_action(a) for a in cand])[-1]
        cost, z = score_candidate(MODEL, req.context, cand, final)
        assert cost == 0.0 and np.array_equal(z, final)

    def test_matches_dot_product_recompute(self):
        req = request(2)
        for cand in sample_candidates(req):
            cost, z = score_candidate(MODEL, req.context, cand, req.goal_latent)
            assert abs(cost - dot_distance(z, req.goal_latent)) < 1e-12

    def test_independent_of_other_candidates(self):
        req = request(3)
        cands = sample_candidates(req)
        alone = score_candidate(MODEL, req.context, cands[2], req.goal_latent)[0]
        assert plan(MODEL, req, cands).costs[2] == alone
        assert plan(MODEL, req, cands[::-1]).costs[1] == alone

    def test_min_over_horizon_mode(self):
        req = request(4)
        cand = sample_candidates(req)[0]
        pred = MODEL.rollout(req.context, [flatten_action(a) for a in cand])
        cost, _ = score_candidate(MODEL, req.context, cand, req.goal_latent, "min_over_horizon")
        assert abs(cost - min(dot_distance(z, req.goal_latent) for z in pred)) < 1e-12
        with pytest.raises(PlanningError):
            score_candidate(MODEL, req.context, cand, req.goal_latent, "mean")


class TestPlan:
    def test_single_candidate(self):
        assert plan(MODEL, request(5, num_candidates=1)).chosen_index == 0

    def test_tie_goes_to_index_zero(self):
        z = np.full(64, 0.3)
        res = plan(ConstantCost([z, z, z + 1]), request(6, num_candidates=3))
        assert res.costs[0] == res.costs[1] and res.chosen_index == 0

    def test_argmin_first(self):
        assert argmin_first([3.0, 1.0, 1.0, 2.0]) == 1
        assert argmin_first([0.0]) == 0

    @settings(max_examples=100)
    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=12))
    def test_argmin_invariant_under_monotone_map(self, costs):
        idx = argmin_first(costs)
        assert idx == argmin_first([math.sqrt(c) for c in costs])
        assert idx == argmin_first([3 * c + 7 for c in costs]) or len(set(3 * c + 7 for c in costs)) < len(set(costs))
        assert costs[idx] == min(costs) and all(c > costs[idx] for c in costs[:idx])

    def test_deterministic(self):
        a, b = plan(MODEL, request(7)), plan(MODEL, request(7))
        assert a.chosen_index == b.chosen_index and np.array_equal(a.costs, b.costs)
        assert a.candidates == b.candidates

    def test_result_fields(self):
        res = plan(MODEL, request(8))
        assert len(res.costs) == 4 and res.predicted_final_latents.shape == (4, 64)
        assert np.all(res.costs >= 0) and len(res.chosen_actions) == 8
        d = res.to_dict()
        assert len(d["costs"]) == 4 and len(d["chosen_actions"][0]) == 69

    def test_candidate_seeds_are_prefix_stable(self):
        a = sample_candidates(request(9, num_candidates=2))
        b = sample_candidates(request(9, num_candidates=5))
        assert a == b[:2]
        assert len({candidate_seed(9, i) for i in range(100)}) == 100

    def test_degenerate_sampler(self):
        req = request(10, sampler=MotionPriorConfig(np.zeros((22, 3)), np.zeros(3)))
        with pytest.raises(PlanningError):
            plan(MODEL, req)

    def test_request_validation(self):
        for kw in ({"horizon": 0}, {"num_candidates": 0}, {"cost_mode": "x"}):
            with pytest.raises(PlanningError):
                request(0, **kw)


def oracle_case(seed, j, horizon=8, n=4):
    scene = make_scene(seed)
    start = SIM.start_pose(scene, np.random.default_rng(seed))
    ctx = np.stack([encode(SIM.render(scene, start))] * 3)
    req = PlanRequest(ctx, start, np.zeros(64), horizon=horizon, num_candidates=n, seed=seed)
    cands = sample_candidates(req)
    goal_ep = SIM.episode_from_actions(scene, start, cands[j])
    req.goal_latent = encode(goal_ep.images[-1])
    return req, OracleDynamics(SIM, scene, start), cands


class TestOracle:
    def test_oracle_returns_goal_candidate(self):
        for seed in range(10):
            for j in range(4):
                req, oracle, cands = oracle_case(seed, j)
                res = plan(oracle, req)
                assert res.costs[j] == 0.0
                brute = min(range(4), key=lambda i: (dot_distance(oracle.rollout(None, [flatten_action(a) for a in cands[i]])[-1], req.goal_latent), i))
                assert res.chosen_index == brute == j


class TestReport:
    def test_single_run_flagged(self):
        mean, std, single = mean_std([0.4])
        assert (mean, std, single) == (0.4, 0.0, True)
        assert plan_report([{"m": 1.0}])["m"]["single_run"]

    def test_constant_runs(self):
        rep = plan_report([{"m": 0.25}] * 5)
        assert rep["m"]["mean"] == 0.25 and rep["m"]["std"] == 0.0 and rep["m"]["runs"] == 5

    def test_matches_statistics_module(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            vals = rng.normal(size=5).tolist()
            mean, std, _ = mean_std(vals)
            assert abs(mean - statistics.fmean(vals)) < 1e-12
            assert abs(std - statistics.stdev(vals)) < 1e-12

    def test_empty(self):
        with pytest.raises(ValueError):
            plan_report([])
