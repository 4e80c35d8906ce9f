import json
import math

import numpy as np
import pytest

from planreal import sim
from planreal import state as S
from planreal.controllers import ControllerCommand
from planreal.params import ParamSpec
from planreal.world import GRAVITY, segment_clear
from conftest import StubAction, cube, make_scenario, scenario_dict, table

# best sample of a ramp-mode optimizer run (acceptance config, master seed 0)
RAMP_BEST = [0.7974751349687729, 2.595181829530564, -0.003714204328561219, 2.6524507489409466,
             1.3086501756375781, 3.9032820067110854, 0.5356003323428472, 1.2410143495428525,
             -0.10025250048937237, 3.674036017637308, 2.1534450890122843]

IDLE = ControllerCommand(np.zeros(2), np.zeros(3))


def away():
    return {**scenario_dict()["robot"], "init": {"position": [-3.0, -3.0], "heading": 0.0}}


def slope_world(alpha_deg, mu):
    run = 2.0
    rise = run * math.tan(math.radians(alpha_deg))
    ramp = {"id": "Ramp", "footprint": [[0, -1], [run, -1], [run, 1], [0, 1]],
            "height": {"type": "ramp", "h_low": 0.2, "h_high": 0.2 + rise, "downhill": [-1.0, 0.0]},
            "navigation_obstacle": False}
    x = 1.7
    z = 0.2 + x * math.tan(math.radians(alpha_deg)) + 0.03
    return make_scenario(shapes=[ramp], objects=[cube("C", x, 0.0, z, friction=mu)], robot=away())


class TestPhysics:
    def test_rest_on_table(self):
        sc = make_scenario(shapes=[table("T", 1.0, 1.0, 0.4, 0.8)],
                           objects=[cube("C", 1.1, 0.9, 0.83)], robot=away())
        w = S.initial_state(sc)
        assert w.mode[0] == S.RESTING
        p0 = w.pos.copy()
        for _ in range(1000):
            w = sim.step(w, IDLE, sc)
        assert np.max(np.abs(w.pos - p0)) < 1e-12

    def test_slide_acceleration(self):
        sc = slope_world(30.0, 0.3)
        a_ref = GRAVITY * (math.sin(math.radians(30)) - 0.3 * math.cos(math.radians(30)))
        assert a_ref == pytest.approx(2.357, abs=1e-3)
        w = S.initial_state(sc)
        assert w.mode[0] == S.RESTING
        n = int(round(0.5 / sc.sim.dt))
        for _ in range(n):
            w = sim.step(w, IDLE, sc)
        assert w.mode[0] == S.RESTING
        speed = np.linalg.norm(w.vel[0])
        assert speed / (n * sc.sim.dt) == pytest.approx(a_ref, rel=0.01)
        # motion is straight down the slope
        assert w.vel[0, 0] < 0 and abs(w.vel[0, 1]) < 1e-12

    def test_static_friction_holds(self):
        sc = slope_world(10.0, 0.3)  # tan(10 deg) < 0.3
        w = S.initial_state(sc)
        p0 = w.pos.copy()
        for _ in range(200):
            w = sim.step(w, IDLE, sc)
        assert np.array_equal(w.pos, p0)

    def test_sliding_dissipates(self):
        sc = slope_world(30.0, 0.3)
        w = S.initial_state(sc)
        m = sc.objects[0].mass
        for _ in range(40):
            nxt = sim.step(w, IDLE, sc)
            d_ke = 0.5 * m * (np.sum(nxt.vel[0] ** 2) - np.sum(w.vel[0] ** 2))
            work = m * GRAVITY * (w.pos[0, 2] - nxt.pos[0, 2])
            assert d_ke <= work + 1e-12
            w = nxt

    def test_frictionless_conserves_at_most(self):
        sc = slope_world(30.0, 0.0)
        w = S.initial_state(sc)
        for _ in range(20):
            nxt = sim.step(w, IDLE, sc)
            d_ke = 0.5 * (np.sum(nxt.vel[0] ** 2) - np.sum(w.vel[0] ** 2))
            assert d_ke <= GRAVITY * (w.pos[0, 2] - nxt.pos[0, 2]) + 1e-12
            w = nxt

    def test_ballistic_fall_time(self):
        sc = make_scenario(objects=[cube("C", 1.0, 1.0, 0.5 + 0.03)], robot=away())
        w = S.initial_state(sc)
        assert w.mode[0] == S.FALLING
        t = 0
        while w.mode[0] == S.FALLING:
            w = sim.step(w, IDLE, sc)
            t += 1
            assert t < 1000
        assert w.mode[0] == S.GROUND and w.pos[0, 2] == pytest.approx(0.03)
        assert abs(t * sc.sim.dt - math.sqrt(2 * 0.5 / GRAVITY)) <= sc.sim.dt

    def test_step_is_pure(self):
        sc = slope_world(30.0, 0.3)
        w = S.initial_state(sc)
        before = w.copy()
        sim.step(w, IDLE, sc)
        assert np.array_equal(w.pos, before.pos) and w.t == before.t

    def test_nan_guard(self):
        sc = make_scenario(robot=away())
        w = S.initial_state(sc)
        cmd = ControllerCommand(np.array([np.nan, 0.0]), np.zeros(3))
        with pytest.raises(FloatingPointError):
            sim.step(w, cmd, sc)


def move_plan(spec):
    return [StubAction("AStarTrack", (spec,), f"moveTo({spec.id})")]


class TestRollout:
    def test_move_to_start(self):
        spec = ParamSpec("here", "rect2", (0.0, 0.0), size=(1.0, 1.0))
        sc = make_scenario(params=[{"id": "here", "kind": "rect2", "center": [0, 0], "size": [1, 1]}])
        r = sim.rollout(sc, move_plan(spec), np.array([0.0, 0.0]))
        assert r.action_success == (True,) and r.action_cost == (0.0,) and r.goal_ok

    def test_move_into_obstacle(self):
        spec = ParamSpec("t", "rect2", (2.0, 0.0), size=(0.2, 0.2))
        sc = make_scenario(shapes=[table("T", 2.0, 0.0, 0.5, 0.8)])
        r = sim.rollout(sc, move_plan(spec), np.array([2.0, 0.0]))
        assert r.action_success == (False,) and not r.all_actions_ok and not r.goal_feasible
        assert r.total_cost == 0.0

    def test_move_reaches(self):
        spec = ParamSpec("t", "rect2", (2.0, 1.0), size=(0.2, 0.2))
        sc = make_scenario()
        r = sim.rollout(sc, move_plan(spec), np.array([2.0, 1.0]), stride=1)
        assert r.all_actions_ok
        end = r.trace[-1, [sim.T_BX, sim.T_BY]]
        assert np.hypot(*(end - [2.0, 1.0])) <= sc.robot.success_tolerance
        # cost counts steps until success
        assert r.action_cost[0] == r.action_steps[0] == r.trace[-1, sim.T_T]

    def test_failure_aborts_rest_of_plan(self):
        ok = ParamSpec("a", "rect2", (1.0, 0.0), size=(0.2, 0.2))
        bad = ParamSpec("b", "rect2", (2.0, 0.0), size=(0.2, 0.2))
        sc = make_scenario(shapes=[table("T", 2.0, 0.0, 0.5, 0.8)], robot=away())
        plan = move_plan(bad) + move_plan(ok)
        r = sim.rollout(sc, plan, np.array([2.0, 0.0, 1.0, 0.0]))
        assert r.action_success == (False, False) and r.action_cost == (0.0, 0.0)

    def test_frozen_ramp_sample(self, ramp_scenario, pick_place_plan):
        sc = ramp_scenario
        r = sim.rollout(sc, pick_place_plan, np.array(RAMP_BEST), stride=1)
        assert r.goal_ok and r.all_actions_ok
        assert r.total_cost == 730.0
        ob = sc.shapes[sc.shape_index("Obstacle")]
        down = np.array(ob.height.downhill)
        c = sim.T_OBJ
        free = r.trace[:, c + 3] != S.ATTACHED
        on_ramp = free & (r.trace[:, c + 3] == S.RESTING) & np.array(
            [_inside(ob, x, y) for x, y in r.trace[:, [c, c + 1]]])
        rows = r.trace[on_ramp]
        assert len(rows) > 5
        along = rows[:, [c, c + 1]] @ down
        assert np.all(np.diff(along) >= -1e-12)
        assert np.all(np.diff(rows[:, c + 2]) <= 1e-12)
        assert along[-1] - along[0] > 0.1

    def test_bookkeeping(self, ramp_scenario, pick_place_plan):
        r = sim.rollout(ramp_scenario, pick_place_plan, np.array(RAMP_BEST), stride=1)
        ends = np.cumsum(r.action_steps)
        act = r.trace[:, sim.T_ACT].astype(int)
        t = r.trace[:, sim.T_T].astype(int)
        for a, end in enumerate(ends):
            assert act[t == end][0] == a
            if a + 1 < len(ends):
                assert act[t == end + 1][0] == a + 1
        assert r.total_cost == sum(r.action_cost) == ends[-1]
        assert np.all(np.diff(t) == 1)

    def test_base_never_crosses_obstacles(self, ramp_scenario, pick_place_plan):
        sc = ramp_scenario
        r = sim.rollout(sc, pick_place_plan, np.array(RAMP_BEST), stride=1)
        xy = r.trace[:, [sim.T_BX, sim.T_BY]]
        for (ax, ay), (bx, by) in zip(xy[:-1], xy[1:]):
            assert segment_clear(sc.arrays, ax, ay, bx, by, 0.0)

    def test_seed_is_only_recorded(self, ramp_scenario, pick_place_plan):
        a = sim.rollout(ramp_scenario, pick_place_plan, RAMP_BEST, rng_seed=1)
        b = sim.rollout(ramp_scenario, pick_place_plan, RAMP_BEST, rng_seed=2)
        assert a.same_outcome(b) and (a.seed, b.seed) == (1, 2)


def _inside(shape, x, y):
    fp = np.array(shape.footprint)
    return fp[:, 0].min() <= x <= fp[:, 0].max() and fp[:, 1].min() <= y <= fp[:, 1].max()


def random_vectors(sc, plan, n, seed):
    from planreal.params import initial_distribution, sample
    lay = sim.plan_layout(plan)
    rng = np.random.default_rng(seed)
    out = [sample(initial_distribution(lay), rng).values for _ in range(n)]
    # mix in perturbations of a good sample so successful paths are covered too
    for i in range(0, n, 4):
        out[i] = np.array(RAMP_BEST) + rng.normal(0, 0.02, lay.size)
    return out


class TestBatch:
    def test_batch_of_one(self, ramp_scenario, pick_place_plan):
        single = sim.rollout(ramp_scenario, pick_place_plan, RAMP_BEST)
        (batch,) = sim.rollout_batch(ramp_scenario, pick_place_plan, [RAMP_BEST])
        assert single.same_outcome(batch)

    def test_repeatable_and_duplicates(self, ramp_scenario, pick_place_plan):
        Z = random_vectors(ramp_scenario, pick_place_plan, 12, 4)
        Z[7] = Z[2]
        a = sim.rollout_batch(ramp_scenario, pick_place_plan, Z, master_seed=3)
        b = sim.rollout_batch(ramp_scenario, pick_place_plan, Z, master_seed=3)
        assert all(x.same_outcome(y) and x.seed == y.seed for x, y in zip(a, b))
        assert a[2].same_outcome(a[7])

    def test_batch_matches_serial(self, ramp_scenario, pick_place_plan):
        Z = random_vectors(ramp_scenario, pick_place_plan, 100, 9)
        batch = sim.rollout_batch(ramp_scenario, pick_place_plan, Z, master_seed=5)
        threaded = sim.rollout_batch(ramp_scenario, pick_place_plan, Z, master_seed=5, workers=3)
        for i, z in enumerate(Z):
            serial = sim.rollout(ramp_scenario, pick_place_plan, z, rng_seed=sim.sample_seed(5, i))
            assert serial.same_outcome(batch[i]) and serial.seed == batch[i].seed
            assert threaded[i].same_outcome(batch[i])
        assert any(r.goal_feasible for r in batch) and not all(r.goal_feasible for r in batch)

    def test_empty_batch(self, ramp_scenario, pick_place_plan):
        assert sim.rollout_batch(ramp_scenario, pick_place_plan, []) == []

    def test_wrong_vector_length(self, ramp_scenario, pick_place_plan):
        with pytest.raises(ValueError):
            sim.rollout(ramp_scenario, pick_place_plan, np.zeros(3))


class TestTrace:
    def test_round_trip(self, tmp_path, ramp_scenario, pick_place_plan):
        r = sim.rollout(ramp_scenario, pick_place_plan, RAMP_BEST, stride=10)
        path = tmp_path / "trace.jsonl"
        sim.write_trace(path, ramp_scenario, r, pick_place_plan.lines(), 10)
        header, rows = sim.read_trace(path)
        assert header["schema"] == sim.TRACE_SCHEMA and header["actions"] == pick_place_plan.lines()
        assert len(rows) == len(r.trace)
        first = rows[0]
        assert set(first) == {"t", "time", "active_action", "base", "ee", "objects"}
        assert first["objects"][0]["id"] == "Cube" and first["objects"][0]["support"] == "resting"
        assert any(row["ee"]["holding"] == "Cube" for row in rows)
        assert rows[-1]["objects"][0]["support"] == "resting"
        for line in path.read_text().splitlines():
            json.loads(line)

    def test_version_check(self, tmp_path):
        path = tmp_path / "t.jsonl"
        path.write_text(json.dumps({"schema": sim.TRACE_SCHEMA, "version": 99}) + "\n")
        with pytest.raises(ValueError, match="version"):
            sim.read_trace(path)
