"""Scenario geometry for the 2.5D world.

Static shapes are convex footprints with either a flat top or a linear ramp
top. Navigation uses the footprints as obstacles; object dynamics use the
tops as support surfaces. Everything here is immutable after loading, and
the numeric kernels operate on the packed :class:`SceneArrays` view so the
simulator can call them from compiled code.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional, Union

import jsonschema
import numpy as np
from numba import njit

from planreal.params import ParamSpec, param_spec_from_dict, param_spec_to_dict

GRAVITY = 9.81
REST_TOL = 0.005  # bottom-to-surface gap accepted as "resting"
DEFAULT_ASTAR_CELL = 0.05


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario files."""


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class ConstantHeight:
    h: float


@dataclass(frozen=True)
class RampHeight:
    h_low: float
    h_high: float
    downhill: tuple[float, float]


HeightProfile = Union[ConstantHeight, RampHeight]


@dataclass(frozen=True)
class StaticShape:
    id: str
    footprint: tuple[tuple[float, float], ...]
    height: HeightProfile
    is_navigation_obstacle: bool


@dataclass(frozen=True)
class MovableObject:
    id: str
    half_extents: tuple[float, float, float]
    mass: float
    friction: float
    initial_position: tuple[float, float, float]


@dataclass(frozen=True)
class RobotSpec:
    base_radius: float
    max_base_speed: float
    max_base_accel: float
    ee_reach: float
    ee_height_range: tuple[float, float]
    ee_max_speed: float
    ee_max_yaw_rate: float
    ee_radius: float
    grasp_tolerance: float
    grasp_yaw_tolerance: float
    success_tolerance: float


@dataclass(frozen=True)
class Rect:
    min: tuple[float, float]
    max: tuple[float, float]

    def contains(self, p) -> bool:
        return self.min[0] <= p[0] <= self.max[0] and self.min[1] <= p[1] <= self.max[1]


@dataclass(frozen=True)
class GoalSpec:
    robot_region: Rect
    object_on_surface: Optional[tuple[str, str]]


@dataclass(frozen=True)
class ControllerGains:
    kp: float
    kd: float
    ki: float
    gamma: float
    damping: float
    eta: float
    d_safe: float
    yaw_gain: float
    # seconds per action kind; kinds left out get horizon / k
    budgets: tuple[tuple[str, float], ...] = ()

    def budget_for(self, kind: str) -> Optional[float]:
        for name, seconds in self.budgets:
            if name == kind:
                return seconds
        return None


@dataclass(frozen=True)
class SimSpec:
    horizon: float
    dt: float
    astar_padding: float
    astar_cell: float
    bounds: Rect
    settle_time: float
    controllers: ControllerGains


class SceneArrays(NamedTuple):
    """Packed, compiled-code friendly view of the static world."""

    verts: np.ndarray  # (n, vmax, 2) CCW footprints
    nverts: np.ndarray  # (n,)
    nav: np.ndarray  # (n,) 1 for navigation obstacles
    hoff: np.ndarray  # top height h(p) = hoff + hgrad . p
    hgrad: np.ndarray  # (n, 2)
    hlo: np.ndarray
    hhi: np.ndarray
    bounds: np.ndarray  # (xmin, ymin, xmax, ymax)


@dataclass(frozen=True)
class Scenario:
    name: str
    shapes: tuple[StaticShape, ...]
    objects: tuple[MovableObject, ...]
    robot: RobotSpec
    robot_init: tuple[tuple[float, float], float]
    params: tuple[ParamSpec, ...]
    goal: GoalSpec
    sim: SimSpec

    @cached_property
    def arrays(self) -> SceneArrays:
        return pack_shapes(self.shapes, self.sim.bounds)

    def shape_index(self, shape_id: str) -> int:
        for i, s in enumerate(self.shapes):
            if s.id == shape_id:
                return i
        raise KeyError(shape_id)

    def object_index(self, object_id: str) -> int:
        for i, o in enumerate(self.objects):
            if o.id == object_id:
                return i
        raise KeyError(object_id)

    def param(self, param_id: str) -> ParamSpec:
        for p in self.params:
            if p.id == param_id:
                return p
        raise KeyError(param_id)


# ---------------------------------------------------------------------------
# Geometry kernels


@njit(cache=True)
def _point_seg(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    ll = ex * ex + ey * ey
    t = 0.0
    if ll > 0.0:
        t = ((px - ax) * ex + (py - ay) * ey) / ll
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    cx = ax + t * ex
    cy = ay + t * ey
    return math.sqrt((px - cx) ** 2 + (py - cy) ** 2), cx, cy


@njit(cache=True)
def poly_contains(verts, n, px, py):
    for k in range(n):
        ax, ay = verts[k, 0], verts[k, 1]
        bx, by = verts[(k + 1) % n, 0], verts[(k + 1) % n, 1]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < -1e-12:
            return False
    return True


@njit(cache=True)
def poly_sdf(verts, n, px, py):
    """Signed distance to a convex CCW polygon and the outward unit normal."""
    inside = True
    best = np.inf
    gx = 0.0
    gy = 0.0
    ex_n = 0.0
    ey_n = 0.0
    for k in range(n):
        ax, ay = verts[k, 0], verts[k, 1]
        bx, by = verts[(k + 1) % n, 0], verts[(k + 1) % n, 1]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
            inside = False
        d, cx, cy = _point_seg(px, py, ax, ay, bx, by)
        if d < best:
            best = d
            el = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2)
            ex_n = (by - ay) / el
            ey_n = -(bx - ax) / el
            if d > 1e-12:
                gx = (px - cx) / d
                gy = (py - cy) / d
            else:
                gx, gy = ex_n, ey_n
    if inside:
        return -best, ex_n, ey_n
    return best, gx, gy


@njit(cache=True)
def sdf_nav_kernel(sc, px, py, padding):
    best = np.inf
    for i in range(sc.nverts.shape[0]):
        if sc.nav[i] == 0:
            continue
        d, _, _ = poly_sdf(sc.verts[i], sc.nverts[i], px, py)
        if d - padding < best:
            best = d - padding
    return best


@njit(cache=True)
def _segments_cross(ax, ay, bx, by, cx, cy, dx, dy):
    d1 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    d2 = (bx - ax) * (dy - ay) - (by - ay) * (dx - ax)
    d3 = (dx - cx) * (ay - cy) - (dy - cy) * (ax - cx)
    d4 = (dx - cx) * (by - cy) - (dy - cy) * (bx - cx)
    return d1 * d2 <= 0.0 and d3 * d4 <= 0.0


@njit(cache=True)
def seg_poly_dist(verts, n, ax, ay, bx, by):
    """Unsigned distance between segment AB and a convex polygon (0 if they meet)."""
    if poly_contains(verts, n, ax, ay) or poly_contains(verts, n, bx, by):
        return 0.0
    best = np.inf
    for k in range(n):
        cx, cy = verts[k, 0], verts[k, 1]
        dx, dy = verts[(k + 1) % n, 0], verts[(k + 1) % n, 1]
        if _segments_cross(ax, ay, bx, by, cx, cy, dx, dy):
            return 0.0
        d, _, _ = _point_seg(cx, cy, ax, ay, bx, by)
        best = min(best, d)
        d, _, _ = _point_seg(ax, ay, cx, cy, dx, dy)
        best = min(best, d)
        d, _, _ = _point_seg(bx, by, cx, cy, dx, dy)
        best = min(best, d)
    return best


@njit(cache=True)
def segment_clear(sc, ax, ay, bx, by, padding):
    for i in range(sc.nverts.shape[0]):
        if sc.nav[i] == 0:
            continue
        if seg_poly_dist(sc.verts[i], sc.nverts[i], ax, ay, bx, by) <= padding:
            return False
    return True


@njit(cache=True)
def shape_height(sc, i, px, py):
    h = sc.hoff[i] + sc.hgrad[i, 0] * px + sc.hgrad[i, 1] * py
    if h < sc.hlo[i]:
        h = sc.hlo[i]
    elif h > sc.hhi[i]:
        h = sc.hhi[i]
    return h


@njit(cache=True)
def support_kernel(sc, px, py, zmax):
    """Highest top surface at or below ``zmax`` containing (px, py); -1 is the ground."""
    best_z = 0.0
    best_i = -1
    for i in range(sc.nverts.shape[0]):
        if not poly_contains(sc.verts[i], sc.nverts[i], px, py):
            continue
        h = shape_height(sc, i, px, py)
        if h <= zmax and (best_i < 0 or h > best_z):
            best_z = h
            best_i = i
    if best_i < 0:
        return 0.0, -1
    return best_z, best_i


@njit(cache=True)
def top_kernel(sc, px, py):
    """Highest surface of any shape at (px, py), ground included."""
    z = 0.0
    for i in range(sc.nverts.shape[0]):
        if poly_contains(sc.verts[i], sc.nverts[i], px, py):
            h = shape_height(sc, i, px, py)
            if h > z:
                z = h
    return z


# ---------------------------------------------------------------------------
# Packing and public queries


def polygon_area(points) -> float:
    a = 0.0
    n = len(points)
    for k in range(n):
        x0, y0 = points[k]
        x1, y1 = points[(k + 1) % n]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def _ccw(points):
    pts = [tuple(map(float, p)) for p in points]
    if polygon_area(pts) < 0:
        pts.reverse()
    return pts


def _ramp_coefficients(footprint, ramp: RampHeight):
    dx, dy = ramp.downhill
    proj = [x * dx + y * dy for x, y in footprint]
    lo, hi = min(proj), max(proj)
    run = hi - lo
    slope = (ramp.h_high - ramp.h_low) / run
    # h(p) = h_high - slope * (p.d - lo)
    return ramp.h_high + slope * lo, (-slope * dx, -slope * dy), run


def pack_shapes(shapes, bounds: Rect) -> SceneArrays:
    n = len(shapes)
    vmax = max([len(s.footprint) for s in shapes], default=3)
    verts = np.zeros((n, vmax, 2))
    nverts = np.zeros(n, dtype=np.int64)
    nav = np.zeros(n, dtype=np.int64)
    hoff = np.zeros(n)
    hgrad = np.zeros((n, 2))
    hlo = np.zeros(n)
    hhi = np.zeros(n)
    for i, s in enumerate(shapes):
        pts = _ccw(s.footprint)
        verts[i, : len(pts)] = pts
        nverts[i] = len(pts)
        nav[i] = int(s.is_navigation_obstacle)
        if isinstance(s.height, ConstantHeight):
            hoff[i] = hlo[i] = hhi[i] = s.height.h
        else:
            off, grad, _ = _ramp_coefficients(pts, s.height)
            hoff[i] = off
            hgrad[i] = grad
            hlo[i] = s.height.h_low
            hhi[i] = s.height.h_high
    b = np.array([bounds.min[0], bounds.min[1], bounds.max[0], bounds.max[1]])
    return SceneArrays(verts, nverts, nav, hoff, hgrad, hlo, hhi, b)


def sdf_nav(scenario: Scenario, p, padding: float) -> float:
    """Signed distance from ``p`` to the nearest padded navigation obstacle."""
    return float(sdf_nav_kernel(scenario.arrays, float(p[0]), float(p[1]), float(padding)))


@dataclass(frozen=True)
class Support:
    z: float
    downhill: tuple[float, float]
    slope_angle: float
    shape: Optional[str]  # None for the ground

    @property
    def is_ground(self) -> bool:
        return self.shape is None


def support_query(scenario: Scenario, p, z_max: float) -> Support:
    sc = scenario.arrays
    z, i = support_kernel(sc, float(p[0]), float(p[1]), float(z_max))
    if i < 0:
        return Support(0.0, (0.0, 0.0), 0.0, None)
    gx, gy = sc.hgrad[i]
    g = math.hypot(gx, gy)
    if g == 0.0:
        return Support(float(z), (0.0, 0.0), 0.0, scenario.shapes[i].id)
    return Support(float(z), (-gx / g, -gy / g), math.atan(g), scenario.shapes[i].id)


# ---------------------------------------------------------------------------
# Loading, validation, serialization


def _schema():
    text = resources.files("planreal.data").joinpath("scenario.schema.json").read_text()
    return json.loads(text)


def _check_shape(s: StaticShape):
    pts = _ccw(s.footprint)
    if len(pts) < 3:
        raise ScenarioError(f"shape {s.id!r}: footprint needs at least 3 vertices")
    if abs(polygon_area(pts)) <= 1e-9:
        raise ScenarioError(f"shape {s.id!r}: footprint is degenerate")
    n = len(pts)
    for k in range(n):
        ax, ay = pts[k]
        bx, by = pts[(k + 1) % n]
        cx, cy = pts[(k + 2) % n]
        if (bx - ax) * (cy - by) - (by - ay) * (cx - bx) < -1e-12:
            raise ScenarioError(f"shape {s.id!r}: footprint not convex")
    h = s.height
    if isinstance(h, ConstantHeight):
        if h.h < 0:
            raise ScenarioError(f"shape {s.id!r}: negative height")
    else:
        if not 0 <= h.h_low <= h.h_high:
            raise ScenarioError(f"shape {s.id!r}: ramp needs 0 <= h_low <= h_high")
        if abs(math.hypot(*h.downhill) - 1.0) > 1e-6:
            raise ScenarioError(f"shape {s.id!r}: downhill direction must be a unit vector")


def validate(sc: Scenario) -> None:
    ids = [s.id for s in sc.shapes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate shape ids")
    for s in sc.shapes:
        _check_shape(s)
    oids = [o.id for o in sc.objects]
    if len(set(oids)) != len(oids):
        raise ScenarioError("duplicate object ids")
    for o in sc.objects:
        if min(o.half_extents) <= 0:
            raise ScenarioError(f"object {o.id!r}: half_extents must be positive")
        if o.mass <= 0:
            raise ScenarioError(f"object {o.id!r}: mass must be positive")
        if o.friction < 0:
            raise ScenarioError(f"object {o.id!r}: friction must be non-negative")
    r = sc.robot
    for name in ("base_radius", "max_base_speed", "max_base_accel", "ee_reach", "ee_max_speed",
                 "ee_max_yaw_rate", "ee_radius", "grasp_tolerance", "grasp_yaw_tolerance",
                 "success_tolerance"):
        if getattr(r, name) <= 0:
            raise ScenarioError(f"robot.{name} must be positive")
    lo, hi = r.ee_height_range
    if not 0 < lo < hi:
        raise ScenarioError("robot.ee_height_range must be a nonempty positive interval")
    sim = sc.sim
    if sim.horizon <= 0:
        raise ScenarioError("sim.horizon must be positive")
    if not 0 < sim.dt <= 0.05:
        raise ScenarioError("sim.dt must be in (0, 0.05]")
    if sim.astar_padding < 0:
        raise ScenarioError("sim.astar_padding must be non-negative")
    if sim.astar_cell <= 0 or sim.settle_time < 0:
        raise ScenarioError("sim.astar_cell must be positive and sim.settle_time non-negative")
    b = sim.bounds
    if not (b.min[0] < b.max[0] and b.min[1] < b.max[1]):
        raise ScenarioError("sim.bounds has no area")
    rr = sc.goal.robot_region
    if not (rr.min[0] < rr.max[0] and rr.min[1] < rr.max[1]):
        raise ScenarioError("goal.robot_region has no area")
    if sc.goal.object_on_surface is not None:
        obj, shape = sc.goal.object_on_surface
        if obj not in oids:
            raise ScenarioError(f"goal references unknown object {obj!r}")
        if shape not in ids:
            raise ScenarioError(f"goal references unknown shape {shape!r}")
    pids = [p.id for p in sc.params]
    if len(set(pids)) != len(pids):
        raise ScenarioError("duplicate param ids")
    for p in sc.params:
        try:
            p.check()
        except ValueError as exc:
            raise ScenarioError(f"param {p.id!r}: {exc}") from None
        if p.object is not None and p.object not in oids:
            raise ScenarioError(f"param {p.id!r} references unknown object {p.object!r}")
    (x, y), _ = sc.robot_init
    if sdf_nav(sc, (x, y), sim.astar_padding) <= 0:
        raise ScenarioError("robot_init collides with padded obstacles")


def _height_from_dict(d):
    if d["type"] == "constant":
        return ConstantHeight(float(d["h"]))
    return RampHeight(float(d["h_low"]), float(d["h_high"]), tuple(map(float, d["downhill"])))


def _rect(d) -> Rect:
    return Rect(tuple(map(float, d["min"])), tuple(map(float, d["max"])))


def scenario_from_dict(data: dict) -> Scenario:
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"field {where}: {exc.message}") from None
    shapes = tuple(
        StaticShape(
            s["id"],
            tuple(tuple(map(float, v)) for v in s["footprint"]),
            _height_from_dict(s["height"]),
            bool(s["navigation_obstacle"]),
        )
        for s in data["shapes"]
    )
    objects = tuple(
        MovableObject(
            o["id"], tuple(map(float, o["half_extents"])), float(o["mass"]),
            float(o["friction"]), tuple(map(float, o["position"])),
        )
        for o in data["objects"]
    )
    r = data["robot"]
    robot = RobotSpec(
        base_radius=float(r["base_radius"]),
        max_base_speed=float(r["max_base_speed"]),
        max_base_accel=float(r["max_base_accel"]),
        ee_reach=float(r["ee_reach"]),
        ee_height_range=tuple(map(float, r["ee_height_range"])),
        ee_max_speed=float(r["ee_max_speed"]),
        ee_max_yaw_rate=float(r["ee_max_yaw_rate"]),
        ee_radius=float(r["ee_radius"]),
        grasp_tolerance=float(r["grasp_tolerance"]),
        grasp_yaw_tolerance=float(r["grasp_yaw_tolerance"]),
        success_tolerance=float(r["success_tolerance"]),
    )
    init = (tuple(map(float, r["init"]["position"])), float(r["init"]["heading"]))
    g = data["goal"]
    oos = g.get("object_on_surface")
    goal = GoalSpec(_rect(g["robot_region"]), None if oos is None else (oos["object"], oos["shape"]))
    s = data["sim"]
    c = s["controllers"]
    gains = ControllerGains(
        kp=float(c["kp"]), kd=float(c["kd"]), ki=float(c["ki"]), gamma=float(c["gamma"]),
        damping=float(c["damping"]), eta=float(c["eta"]), d_safe=float(c["d_safe"]),
        yaw_gain=float(c["yaw_gain"]),
        budgets=tuple(sorted((k, float(v)) for k, v in c.get("budgets", {}).items())),
    )
    sim = SimSpec(
        horizon=float(s["horizon"]), dt=float(s["dt"]),
        astar_padding=float(s["astar_padding"]),
        astar_cell=float(s.get("astar_cell", DEFAULT_ASTAR_CELL)),
        bounds=_rect(s["bounds"]), settle_time=float(s["settle_time"]), controllers=gains,
    )
    params = tuple(param_spec_from_dict(p) for p in data["params"])
    sc = Scenario(data.get("name", ""), shapes, objects, robot, init, params, goal, sim)
    validate(sc)
    return sc


def load_scenario(text: str) -> Scenario:
    """Parse and validate scenario JSON text."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def load_scenario_file(path) -> Scenario:
    return load_scenario(Path(path).read_text())


def _height_to_dict(h: HeightProfile) -> dict:
    if isinstance(h, ConstantHeight):
        return {"type": "constant", "h": h.h}
    return {"type": "ramp", "h_low": h.h_low, "h_high": h.h_high, "downhill": list(h.downhill)}


def _rect_dict(r: Rect) -> dict:
    return {"min": list(r.min), "max": list(r.max)}


def scenario_to_dict(sc: Scenario) -> dict:
    r = sc.robot
    c = sc.sim.controllers
    return {
        "name": sc.name,
        "shapes": [
            {
                "id": s.id,
                "footprint": [list(v) for v in s.footprint],
                "height": _height_to_dict(s.height),
                "navigation_obstacle": s.is_navigation_obstacle,
            }
            for s in sc.shapes
        ],
        "objects": [
            {
                "id": o.id, "half_extents": list(o.half_extents), "mass": o.mass,
                "friction": o.friction, "position": list(o.initial_position),
            }
            for o in sc.objects
        ],
        "robot": {
            "base_radius": r.base_radius, "max_base_speed": r.max_base_speed,
            "max_base_accel": r.max_base_accel, "ee_reach": r.ee_reach,
            "ee_height_range": list(r.ee_height_range), "ee_max_speed": r.ee_max_speed,
            "ee_max_yaw_rate": r.ee_max_yaw_rate, "ee_radius": r.ee_radius,
            "grasp_tolerance": r.grasp_tolerance, "grasp_yaw_tolerance": r.grasp_yaw_tolerance,
            "success_tolerance": r.success_tolerance,
            "init": {"position": list(sc.robot_init[0]), "heading": sc.robot_init[1]},
        },
        "params": [param_spec_to_dict(p) for p in sc.params],
        "goal": {
            "robot_region": _rect_dict(sc.goal.robot_region),
            "object_on_surface": None if sc.goal.object_on_surface is None else {
                "object": sc.goal.object_on_surface[0], "shape": sc.goal.object_on_surface[1]},
        },
        "sim": {
            "horizon": sc.sim.horizon, "dt": sc.sim.dt, "astar_padding": sc.sim.astar_padding,
            "astar_cell": sc.sim.astar_cell, "bounds": _rect_dict(sc.sim.bounds),
            "settle_time": sc.sim.settle_time,
            "controllers": {
                "kp": c.kp, "kd": c.kd, "ki": c.ki, "gamma": c.gamma, "damping": c.damping,
                "eta": c.eta, "d_safe": c.d_safe, "yaw_gain": c.yaw_gain,
                "budgets": dict(c.budgets),
            },
        },
    }


def dump_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2)


def bundled_path(name: str) -> Path:
    """Path of a data file shipped with the package (scenarios, PDDL, configs)."""
    return Path(str(resources.files("planreal.data").joinpath(name)))
