import copy
import json
from dataclasses import dataclass

import pytest

from planreal.world import bundled_path, scenario_from_dict


def square(cx, cy, half):
    return [[cx - half, cy - half], [cx + half, cy - half], [cx + half, cy + half], [cx - half, cy + half]]


BASE = {
    "name": "unit",
    "shapes": [],
    "objects": [],
    "robot": {
        "base_radius": 0.15, "max_base_speed": 1.0, "max_base_accel": 1.0, "ee_reach": 0.7,
        "ee_height_range": [0.3, 1.4], "ee_max_speed": 0.5, "ee_max_yaw_rate": 1.0,
        "ee_radius": 0.02, "grasp_tolerance": 0.02, "grasp_yaw_tolerance": 0.02,
        "success_tolerance": 0.1, "init": {"position": [0.0, 0.0], "heading": 0.0},
    },
    "params": [],
    "goal": {"robot_region": {"min": [-5.0, -5.0], "max": [5.0, 5.0]}, "object_on_surface": None},
    "sim": {
        "horizon": 20.0, "dt": 0.02, "astar_padding": 0.2, "astar_cell": 0.05,
        "bounds": {"min": [-5.0, -5.0], "max": [5.0, 5.0]}, "settle_time": 0.0,
        "controllers": {"kp": 2.0, "kd": 2.5, "ki": 0.0, "gamma": 4.0, "damping": 5.0,
                        "eta": 2.0, "d_safe": 0.1, "yaw_gain": 3.0},
    },
}


def scenario_dict(**changes):
    """A small open-world scenario dict; keyword args replace top-level keys."""
    d = copy.deepcopy(BASE)
    d.update(copy.deepcopy(changes))
    return d


def make_scenario(**changes):
    return scenario_from_dict(scenario_dict(**changes))


def table(id_, cx, cy, half, h, nav=True):
    return {"id": id_, "footprint": square(cx, cy, half), "height": {"type": "constant", "h": h},
            "navigation_obstacle": nav}


def cube(id_, x, y, z, half=0.03, friction=0.3):
    return {"id": id_, "half_extents": [half] * 3, "mass": 0.1, "friction": friction,
            "position": [x, y, z]}


@dataclass
class StubAction:
    """Minimal stand-in for a bound ground action."""

    controller_id: str
    bound_params: tuple
    label: str = "a"

    def __str__(self):
        return self.label


def bundled(name):
    return scenario_from_dict(json.loads(bundled_path(name).read_text()))


@pytest.fixture(scope="session")
def ramp_scenario():
    return bundled("pick_place_ramp.json")


@pytest.fixture(scope="session")
def box_scenario():
    return bundled("pick_place_box.json")


@pytest.fixture(scope="session")
def push_scenario():
    return bundled("move_push.json")


@pytest.fixture(scope="session")
def pick_place_plan(ramp_scenario):
    from planreal import symbolic

    dom, prob = symbolic.load_task(bundled_path("pick_place_domain.pddl").read_text(),
                                   bundled_path("pick_place_problem.pddl").read_text())
    return symbolic.bind(symbolic.plan(dom, prob), ramp_scenario)
