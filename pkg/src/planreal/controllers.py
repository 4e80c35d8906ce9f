"""Low-level controllers: grid A* with waypoint tracking, and a damped
attractor/repulsor whole-body reach law for the arm and base.

The kernels work on the flat state arrays defined in :mod:`planreal.state`
so the rollout loop can run them without leaving compiled code. The
Python-level functions below wrap them for direct use and testing.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numba import njit

from planreal import state as S
from planreal.world import Scenario, poly_sdf, sdf_nav_kernel, segment_clear

SQRT2 = math.sqrt(2.0)

# 8-connected moves, axis moves first: equal-priority ties go to axis moves
_MOVES = np.array(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.int64
)


class AStarFailure(RuntimeError):
    """The goal is blocked or unreachable on the padded grid."""


# ---------------------------------------------------------------------------
# Navigation grid


@njit(cache=True)
def _blocked_grid(sc, cell, padding, nx, ny):
    out = np.zeros((ny, nx), dtype=np.bool_)
    x0 = sc.bounds[0]
    y0 = sc.bounds[1]
    for j in range(ny):
        for i in range(nx):
            px = x0 + (i + 0.5) * cell
            py = y0 + (j + 0.5) * cell
            out[j, i] = sdf_nav_kernel(sc, px, py, padding) <= 0.0
    return out


@lru_cache(maxsize=16)
def nav_grid(scenario: Scenario) -> np.ndarray:
    """Blocked-cell mask (ny, nx) of the padded navigation grid."""
    sim = scenario.sim
    b = sim.bounds
    nx = int(math.ceil((b.max[0] - b.min[0]) / sim.astar_cell - 1e-9))
    ny = int(math.ceil((b.max[1] - b.min[1]) / sim.astar_cell - 1e-9))
    grid = _blocked_grid(scenario.arrays, sim.astar_cell, sim.astar_padding, nx, ny)
    grid.setflags(write=False)
    return grid


# ---------------------------------------------------------------------------
# A*


@njit(cache=True)
def _octile(ax, ay, bx, by):
    dx = abs(ax - bx)
    dy = abs(ay - by)
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


@njit(cache=True)
def astar_grid_kernel(blocked, sx, sy, gx, gy):
    """8-connected A* without corner cutting; unit cell costs.

    Returns (cells (k, 2) as (ix, iy), cost, found).
    """
    ny, nx = blocked.shape
    empty = np.zeros((0, 2), dtype=np.int64)
    if blocked[sy, sx] or blocked[gy, gx]:
        return empty, np.inf, False
    n = nx * ny
    g = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=np.bool_)
    start = sy * nx + sx
    goal = gy * nx + gx
    g[start] = 0.0
    h0 = _octile(sx, sy, gx, gy)
    heap = [(h0, h0, 0, start)]
    counter = 1
    while len(heap) > 0:
        f, h, _, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        closed[cur] = True
        if cur == goal:
            break
        cx = cur % nx
        cy = cur // nx
        for m in range(8):
            dx = _MOVES[m, 0]
            dy = _MOVES[m, 1]
            x = cx + dx
            y = cy + dy
            if x < 0 or y < 0 or x >= nx or y >= ny or blocked[y, x]:
                continue
            if dx != 0 and dy != 0 and (blocked[cy, x] or blocked[y, cx]):
                continue
            nb = y * nx + x
            if closed[nb]:
                continue
            step = SQRT2 if (dx != 0 and dy != 0) else 1.0
            cand = g[cur] + step
            if cand < g[nb]:
                g[nb] = cand
                parent[nb] = cur
                hn = _octile(x, y, gx, gy)
                heapq.heappush(heap, (cand + hn, hn, counter, nb))
                counter += 1
    if not closed[goal]:
        return empty, np.inf, False
    k = 0
    c = goal
    while c != -1:
        k += 1
        c = parent[c]
    cells = np.zeros((k, 2), dtype=np.int64)
    c = goal
    for i in range(k - 1, -1, -1):
        cells[i, 0] = c % nx
        cells[i, 1] = c // nx
        c = parent[c]
    return cells, g[goal], True


@njit(cache=True)
def _nearest_free(blocked, sx, sy):
    ny, nx = blocked.shape
    best = -1
    best_d = np.inf
    for r in range(1, max(nx, ny)):
        for j in range(max(0, sy - r), min(ny, sy + r + 1)):
            for i in range(max(0, sx - r), min(nx, sx + r + 1)):
                if not blocked[j, i]:
                    d = (i - sx) ** 2 + (j - sy) ** 2
                    if d < best_d:
                        best_d = d
                        best = j * nx + i
        if best >= 0:
            return best % nx, best // nx
    return -1, -1


@njit(cache=True)
def astar_plan_kernel(sc, blocked, cell, padding, px, py, qx, qy):
    """Waypoints from (px, py) to (qx, qy), line-of-sight shortcut; ok flag."""
    ny, nx = blocked.shape
    x0 = sc.bounds[0]
    y0 = sc.bounds[1]
    empty = np.zeros((0, 2))
    gx = int(math.floor((qx - x0) / cell))
    gy = int(math.floor((qy - y0) / cell))
    if gx < 0 or gy < 0 or gx >= nx or gy >= ny:
        return empty, False
    if blocked[gy, gx] or sdf_nav_kernel(sc, qx, qy, padding) <= 0.0:
        return empty, False
    sx = min(max(int(math.floor((px - x0) / cell)), 0), nx - 1)
    sy = min(max(int(math.floor((py - y0) / cell)), 0), ny - 1)
    if blocked[sy, sx]:
        # robot pressed against an obstacle: leave via the closest free cell
        sx, sy = _nearest_free(blocked, sx, sy)
        if sx < 0:
            return empty, False
    cells, _, found = astar_grid_kernel(blocked, sx, sy, gx, gy)
    if not found:
        return empty, False
    k = cells.shape[0]
    pts = np.zeros((k + 1, 2))
    pts[0, 0] = px
    pts[0, 1] = py
    for i in range(k):
        pts[i + 1, 0] = x0 + (cells[i, 0] + 0.5) * cell
        pts[i + 1, 1] = y0 + (cells[i, 1] + 0.5) * cell
    pts[k, 0] = qx
    pts[k, 1] = qy
    # greedy line-of-sight shortcutting
    keep = np.zeros(k + 1, dtype=np.int64)
    nk = 1
    i = 0
    while i < k:
        j = k
        while j > i + 1 and not segment_clear(sc, pts[i, 0], pts[i, 1], pts[j, 0], pts[j, 1], padding):
            j -= 1
        keep[nk] = j
        nk += 1
        i = j
    out = np.zeros((nk, 2))
    for m in range(nk):
        out[m, 0] = pts[keep[m], 0]
        out[m, 1] = pts[keep[m], 1]
    return out, True


def astar_grid(blocked: np.ndarray, start: tuple[int, int], goal: tuple[int, int]):
    """A* on an explicit boolean grid. Returns (cells, cost) or raises AStarFailure."""
    cells, cost, found = astar_grid_kernel(np.asarray(blocked, dtype=np.bool_), int(start[0]),
                                           int(start[1]), int(goal[0]), int(goal[1]))
    if not found:
        raise AStarFailure("unreachable")
    return cells, float(cost)


def astar_plan(scenario: Scenario, start, goal) -> np.ndarray:
    """Collision-free base waypoints from ``start`` to ``goal`` (both 2-vectors, m)."""
    sim = scenario.sim
    wps, ok = astar_plan_kernel(scenario.arrays, nav_grid(scenario), sim.astar_cell,
                                sim.astar_padding, float(start[0]), float(start[1]),
                                float(goal[0]), float(goal[1]))
    if not ok:
        raise AStarFailure("unreachable")
    return wps


def path_length(points: np.ndarray) -> float:
    return float(np.sum(np.hypot(*np.diff(points, axis=0).T)))


# ---------------------------------------------------------------------------
# Waypoint tracking


@njit(cache=True)
def _clamp_norm2(x, y, limit):
    n = math.sqrt(x * x + y * y)
    if n > limit:
        return x * limit / n, y * limit / n
    return x, y


@njit(cache=True)
def track_step_kernel(R, wps, ctrl_i, ctrl_f, gains, rp, dt, cmd):
    """PD(+I) law toward the current waypoint; arm and gripper hold."""
    nwp = wps.shape[0]
    advance = 1.5 * gains[S.G_CELL]
    idx = ctrl_i[0]
    while idx < nwp - 1:
        dx = wps[idx, 0] - R[S.BX]
        dy = wps[idx, 1] - R[S.BY]
        if math.sqrt(dx * dx + dy * dy) > advance:
            break
        idx += 1
        ctrl_f[0] = 0.0
        ctrl_f[1] = 0.0
    ctrl_i[0] = idx
    ex = wps[idx, 0] - R[S.BX]
    ey = wps[idx, 1] - R[S.BY]
    ctrl_f[0] += ex * dt
    ctrl_f[1] += ey * dt
    ax = gains[S.G_KP] * ex - gains[S.G_KD] * R[S.BVX] + gains[S.G_KI] * ctrl_f[0]
    ay = gains[S.G_KP] * ey - gains[S.G_KD] * R[S.BVY] + gains[S.G_KI] * ctrl_f[1]
    ax, ay = _clamp_norm2(ax, ay, rp[S.R_AMAX])
    cmd[:] = 0.0
    cmd[S.C_AX] = ax
    cmd[S.C_AY] = ay
    cmd[S.C_GRIP] = S.GRIP_HOLD


# ---------------------------------------------------------------------------
# Whole-body attractor / repulsor law


@njit(cache=True)
def attractor_grad(ex, ey, ez):
    """Gradient of psi(e) = |e|^2 / (1 + |e|)."""
    r = math.sqrt(ex * ex + ey * ey + ez * ez)
    k = (r + 2.0) / ((1.0 + r) * (1.0 + r))
    return k * ex, k * ey, k * ez


@njit(cache=True)
def fabric_accel_kernel(sc, q, qd, goal, gains, rp, use_obstacles):
    """q = (base x, base y, ee x, ee y, ee z) in world frame; returns q-double-dot."""
    gamma = gains[S.G_GAMMA]
    damp = gains[S.G_DAMP]
    out = np.zeros(5)
    gx, gy, gz = attractor_grad(q[2] - goal[0], q[3] - goal[1], q[4] - goal[2])
    out[2] = -gamma * gx - damp * qd[2]
    out[3] = -gamma * gy - damp * qd[3]
    out[4] = -gamma * gz - damp * qd[4]
    # the base only closes in when the goal is out of the arm's reach
    reach = rp[S.R_REACH] * (1.0 - S.REACH_MARGIN)
    dx = q[0] - goal[0]
    dy = q[1] - goal[1]
    db = math.sqrt(dx * dx + dy * dy)
    bx = 0.0
    by = 0.0
    if db > reach:
        s = 1.0 - reach / db
        bx, by, _ = attractor_grad(dx * s, dy * s, 0.0)
    out[0] = -gamma * bx - damp * qd[0]
    out[1] = -gamma * by - damp * qd[1]
    if use_obstacles:
        eta = gains[S.G_ETA]
        dsafe = gains[S.G_DSAFE]
        for i in range(sc.nverts.shape[0]):
            if sc.nav[i] == 0:
                continue
            d, nx, ny = poly_sdf(sc.verts[i], sc.nverts[i], q[0], q[1])
            d -= rp[S.R_RB]
            if d < dsafe:
                w = eta * (dsafe - d) / dsafe
                out[0] += w * nx
                out[1] += w * ny
    return out


@njit(cache=True)
def wrap_angle(a):
    return a - 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))


@njit(cache=True)
def fabric_step_kernel(sc, R, goal, goal_yaw, gains, rp, dt, use_obstacles, cmd):
    """Map the reach law's acceleration onto a limited base/arm command."""
    q = np.empty(5)
    qd = np.empty(5)
    q[0] = R[S.BX]
    q[1] = R[S.BY]
    q[2] = R[S.BX] + R[S.OX]
    q[3] = R[S.BY] + R[S.OY]
    q[4] = R[S.EZ]
    qd[0] = R[S.BVX]
    qd[1] = R[S.BVY]
    qd[2] = R[S.EVX]
    qd[3] = R[S.EVY]
    qd[4] = R[S.EVZ]
    acc = fabric_accel_kernel(sc, q, qd, goal, gains, rp, use_obstacles)
    ax, ay = _clamp_norm2(acc[0], acc[1], rp[S.R_AMAX])
    bvx, bvy = _clamp_norm2(qd[0] + ax * dt, qd[1] + ay * dt, rp[S.R_VMAX])
    # arm velocity is commanded relative to the (non-rotating) base frame
    vx = qd[2] + acc[2] * dt - bvx
    vy = qd[3] + acc[3] * dt - bvy
    vz = qd[4] + acc[4] * dt
    n = math.sqrt(vx * vx + vy * vy + vz * vz)
    lim = rp[S.R_EVMAX]
    if n > lim:
        vx *= lim / n
        vy *= lim / n
        vz *= lim / n
    yr = gains[S.G_YAW] * wrap_angle(goal_yaw - R[S.EYAW])
    ymax = rp[S.R_YAWRATE]
    yr = min(max(yr, -ymax), ymax)
    cmd[:] = 0.0
    cmd[S.C_AX] = ax
    cmd[S.C_AY] = ay
    cmd[S.C_EVX] = vx
    cmd[S.C_EVY] = vy
    cmd[S.C_EVZ] = vz
    cmd[S.C_YAWR] = yr
    cmd[S.C_GRIP] = S.GRIP_HOLD


# ---------------------------------------------------------------------------
# Success predicates


@njit(cache=True)
def success_kernel(kind, R, goal, target, released, eps):
    """Base within ``eps`` of goal (moves); end effector within ``eps`` of goal
    with the target held (grasp) or after opening (place, push)."""
    if kind == S.K_MOVE:
        return math.sqrt((R[S.BX] - goal[0]) ** 2 + (R[S.BY] - goal[1]) ** 2) <= eps
    dx = R[S.BX] + R[S.OX] - goal[0]
    dy = R[S.BY] + R[S.OY] - goal[1]
    dz = R[S.EZ] - goal[2]
    near = math.sqrt(dx * dx + dy * dy + dz * dz) <= eps
    if kind == S.K_GRASP:
        return near and int(R[S.ATT]) == target
    return near and released


# ---------------------------------------------------------------------------
# Python-level interface


@dataclass
class ControllerCommand:
    base_accel: np.ndarray
    ee_velocity: np.ndarray
    ee_yaw_rate: float = 0.0
    gripper: str = "hold"  # "open" | "close" | "fist" | "hold"

    def to_array(self) -> np.ndarray:
        c = np.zeros(S.NC)
        c[S.C_AX:S.C_AY + 1] = self.base_accel
        c[S.C_EVX:S.C_EVZ + 1] = self.ee_velocity
        c[S.C_YAWR] = self.ee_yaw_rate
        c[S.C_GRIP] = S.GRIP_CODES[self.gripper]
        return c

    @classmethod
    def from_array(cls, c: np.ndarray) -> "ControllerCommand":
        names = {v: k for k, v in S.GRIP_CODES.items()}
        return cls(c[S.C_AX:S.C_AY + 1].copy(), c[S.C_EVX:S.C_EVZ + 1].copy(),
                   float(c[S.C_YAWR]), names[int(c[S.C_GRIP])])


@dataclass
class TrackState:
    waypoints: np.ndarray
    index: int = 0
    integrator: tuple[float, float] = (0.0, 0.0)


def track_step(state: TrackState, world, scenario: Scenario) -> ControllerCommand:
    """One PD tracking step; advances ``state`` in place."""
    ci = np.array([state.index], dtype=np.int64)
    cf = np.array(state.integrator, dtype=float)
    cmd = np.zeros(S.NC)
    track_step_kernel(world.robot, np.asarray(state.waypoints, dtype=float), ci, cf,
                      S.gains_array(scenario), S.robot_array(scenario), scenario.sim.dt, cmd)
    state.index = int(ci[0])
    state.integrator = (float(cf[0]), float(cf[1]))
    return ControllerCommand.from_array(cmd)


def fabric_accel(scenario: Scenario, q, qd, goal, obstacles: bool = True) -> np.ndarray:
    return fabric_accel_kernel(scenario.arrays, np.asarray(q, float), np.asarray(qd, float),
                               np.asarray(goal, float), S.gains_array(scenario),
                               S.robot_array(scenario), obstacles)


def fabric_step(scenario: Scenario, world, goal, goal_yaw: float = 0.0,
                obstacles: bool = True) -> ControllerCommand:
    cmd = np.zeros(S.NC)
    fabric_step_kernel(scenario.arrays, world.robot, np.asarray(goal, float), float(goal_yaw),
                       S.gains_array(scenario), S.robot_array(scenario), scenario.sim.dt,
                       obstacles, cmd)
    return ControllerCommand.from_array(cmd)


def action_success(scenario: Scenario, kind: str, world, goal, target: Optional[str] = None,
                   released: bool = False) -> bool:
    """Success predicate of a ``moveTo`` / ``grasp`` / ``place`` / ``push`` action.

    ``goal`` is the base position (2) or end-effector position (3); for a
    grasp it is the target's position when the action started.
    """
    k = S.KIND_NAMES.index(kind)
    g = np.zeros(3)
    g[:len(goal)] = goal
    t = scenario.object_index(target) if target is not None else -1
    return bool(success_kernel(k, world.robot, g, t, released, scenario.robot.success_tolerance))
