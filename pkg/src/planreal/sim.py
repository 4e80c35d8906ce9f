"""Deterministic fixed-step 2.5D physics and the plan rollout engine.

Integration is semi-implicit Euler. The base is a disc that slides along
navigation obstacles; the end effector moves inside a reach cylinder around
the base. Objects are in one support mode at a time (see ``state``): resting
on a shape top or the ground, falling ballistically, attached to the
gripper, or stacked on another object.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from planreal import state as S
from planreal.controllers import (
    astar_plan_kernel, fabric_step_kernel, nav_grid, success_kernel, track_step_kernel,
    wrap_angle,
)
from planreal.params import Layout, ParamVector
from planreal.world import (
    GRAVITY, REST_TOL, Scenario, poly_contains, poly_sdf, shape_height, support_kernel,
    top_kernel,
)

TRACE_SCHEMA = "planreal.trace"
TRACE_VERSION = 1
STEP_UP = 0.02  # m, highest ledge a sliding object climbs instead of being stopped

# trace row layout
T_T, T_ACT, T_BX, T_BY, T_HEAD, T_EX, T_EY, T_EZ, T_EYAW, T_GRIP, T_ATT = range(11)
T_OBJ = 11  # then (x, y, z, mode) per object


# ---------------------------------------------------------------------------
# Physics


@njit(cache=True)
def _integrate_base(sc, R, rp, cmd, dt):
    vx = R[S.BVX] + cmd[S.C_AX] * dt
    vy = R[S.BVY] + cmd[S.C_AY] * dt
    sp = math.sqrt(vx * vx + vy * vy)
    if sp > rp[S.R_VMAX]:
        vx *= rp[S.R_VMAX] / sp
        vy *= rp[S.R_VMAX] / sp
    x = R[S.BX] + vx * dt
    y = R[S.BY] + vy * dt
    rb = rp[S.R_RB]
    # move and slide: push the disc out of obstacles, drop the inward velocity
    for _ in range(3):
        moved = False
        for i in range(sc.nverts.shape[0]):
            if sc.nav[i] == 0:
                continue
            d, nx, ny = poly_sdf(sc.verts[i], sc.nverts[i], x, y)
            pen = rb - d
            if pen > 0.0:
                x += nx * pen
                y += ny * pen
                vn = vx * nx + vy * ny
                if vn < 0.0:
                    vx -= vn * nx
                    vy -= vn * ny
                moved = True
        if not moved:
            break
    b = sc.bounds
    if x < b[0] + rb:
        x = b[0] + rb
        vx = max(vx, 0.0)
    elif x > b[2] - rb:
        x = b[2] - rb
        vx = min(vx, 0.0)
    if y < b[1] + rb:
        y = b[1] + rb
        vy = max(vy, 0.0)
    elif y > b[3] - rb:
        y = b[3] - rb
        vy = min(vy, 0.0)
    R[S.BX] = x
    R[S.BY] = y
    R[S.BVX] = vx
    R[S.BVY] = vy
    if vx * vx + vy * vy > 1e-6:
        R[S.HEAD] = math.atan2(vy, vx)


@njit(cache=True)
def _yaw_aligned(yaw, tol):
    q = 0.5 * math.pi
    return abs(yaw - q * math.floor(yaw / q + 0.5)) <= tol


@njit(cache=True)
def _gripper(R, P, V, mode, ref, rp, code):
    if code == S.GRIP_OPEN:
        if R[S.GRIP] > 0.5:
            R[S.GRIP] = 0.0
            att = int(R[S.ATT])
            if att >= 0:
                mode[att] = S.FALLING
                ref[att] = -1
                V[att, 0] = R[S.EVX]
                V[att, 1] = R[S.EVY]
                V[att, 2] = R[S.EVZ]
                R[S.ATT] = -1.0
    elif code == S.GRIP_CLOSE:
        if R[S.GRIP] < 0.5:
            R[S.GRIP] = 1.0
            ex = R[S.BX] + R[S.OX]
            ey = R[S.BY] + R[S.OY]
            ez = R[S.EZ]
            best = -1
            best_d = rp[S.R_GTOL]
            if _yaw_aligned(R[S.EYAW], rp[S.R_GYAWTOL]):
                for j in range(P.shape[0]):
                    if mode[j] == S.ATTACHED:
                        continue
                    d = math.sqrt((P[j, 0] - ex) ** 2 + (P[j, 1] - ey) ** 2 + (P[j, 2] - ez) ** 2)
                    if d <= best_d:
                        best_d = d
                        best = j
            if best >= 0:
                R[S.ATT] = float(best)
                mode[best] = S.ATTACHED
                ref[best] = -1
    elif code == S.GRIP_FIST:
        R[S.GRIP] = 1.0


@njit(cache=True)
def _push_contact(R, P, V, mode, op, rp):
    """A closed, empty gripper shoves resting objects out of its way."""
    evx = R[S.EVX]
    evy = R[S.EVY]
    sp = math.sqrt(evx * evx + evy * evy)
    if sp < 1e-9:
        return
    ux = evx / sp
    uy = evy / sp
    r = rp[S.R_EERAD]
    ex = R[S.BX] + R[S.OX]
    ey = R[S.BY] + R[S.OY]
    ez = R[S.EZ]
    for j in range(P.shape[0]):
        if mode[j] != S.RESTING and mode[j] != S.GROUND:
            continue
        dx = P[j, 0] - ex
        dy = P[j, 1] - ey
        dz = P[j, 2] - ez
        ax = op[j, 0] + r
        ay = op[j, 1] + r
        if abs(dx) >= ax or abs(dy) >= ay or abs(dz) >= op[j, 2] + r:
            continue
        s = np.inf
        if ux > 1e-12:
            s = min(s, (ax - dx) / ux)
        elif ux < -1e-12:
            s = min(s, (ax + dx) / -ux)
        if uy > 1e-12:
            s = min(s, (ay - dy) / uy)
        elif uy < -1e-12:
            s = min(s, (ay + dy) / -uy)
        P[j, 0] += s * ux
        P[j, 1] += s * uy
        V[j, 0] = evx
        V[j, 1] = evy


@njit(cache=True)
def _surface_update(sc, P, V, mode, ref, j, op, dt):
    """Object resting on a shape top (ref >= 0) or the ground (ref == -1)."""
    hz = op[j, 2]
    mu = op[j, 4]
    s = ref[j]
    gx = 0.0
    gy = 0.0
    if s >= 0:
        gx = sc.hgrad[s, 0]
        gy = sc.hgrad[s, 1]
    t = math.sqrt(gx * gx + gy * gy)
    cosa = 1.0 / math.sqrt(1.0 + t * t)
    sina = t * cosa
    dx = 1.0
    dy = 0.0
    if t > 0.0:
        dx = -gx / t
        dy = -gy / t
    cx = -dy
    cy = dx
    # velocity in surface coordinates (downhill, across)
    wd = (V[j, 0] * dx + V[j, 1] * dy) / cosa
    wc = V[j, 0] * cx + V[j, 1] * cy
    if wd == 0.0 and wc == 0.0 and t <= mu:
        V[j, 2] = 0.0
        return
    wd += GRAVITY * sina * dt
    f = mu * GRAVITY * cosa * dt
    n = math.sqrt(wd * wd + wc * wc)
    if n <= f:
        V[j, 0] = 0.0
        V[j, 1] = 0.0
        V[j, 2] = 0.0
        return
    k = 1.0 - f / n
    wd *= k
    wc *= k
    vhx = dx * wd * cosa + cx * wc
    vhy = dy * wd * cosa + cy * wc
    nx = P[j, 0] + vhx * dt
    ny = P[j, 1] + vhy * dt
    bottom = P[j, 2] - hz
    if top_kernel(sc, nx, ny) > bottom + STEP_UP:
        # ran into the side of a taller shape
        V[j, 0] = 0.0
        V[j, 1] = 0.0
        V[j, 2] = 0.0
        return
    if s >= 0 and poly_contains(sc.verts[s], sc.nverts[s], nx, ny):
        P[j, 0] = nx
        P[j, 1] = ny
        P[j, 2] = shape_height(sc, s, nx, ny) + hz
        V[j, 0] = vhx
        V[j, 1] = vhy
        V[j, 2] = -wd * sina
        return
    P[j, 0] = nx
    P[j, 1] = ny
    z2, s2 = support_kernel(sc, nx, ny, bottom + STEP_UP)
    drop = REST_TOL + math.sqrt(vhx * vhx + vhy * vhy) * dt * t
    if z2 >= bottom - drop:
        P[j, 2] = z2 + hz
        ref[j] = s2
        mode[j] = S.RESTING if s2 >= 0 else S.GROUND
        V[j, 0] = vhx
        V[j, 1] = vhy
        V[j, 2] = 0.0
    else:
        mode[j] = S.FALLING
        ref[j] = -1
        V[j, 0] = vhx
        V[j, 1] = vhy
        V[j, 2] = -wd * sina


@njit(cache=True)
def _falling_update(sc, P, V, mode, ref, j, op, dt):
    hz = op[j, 2]
    V[j, 2] -= GRAVITY * dt
    nx = P[j, 0] + V[j, 0] * dt
    ny = P[j, 1] + V[j, 1] * dt
    nz = P[j, 2] + V[j, 2] * dt
    bottom = P[j, 2] - hz
    if top_kernel(sc, nx, ny) > bottom + REST_TOL:
        # side wall: keep the column, lose horizontal motion
        nx = P[j, 0]
        ny = P[j, 1]
        V[j, 0] = 0.0
        V[j, 1] = 0.0
    z2, s2 = support_kernel(sc, nx, ny, bottom + REST_TOL)
    P[j, 0] = nx
    P[j, 1] = ny
    if nz - hz <= z2:
        P[j, 2] = z2 + hz
        V[j, 0] = 0.0
        V[j, 1] = 0.0
        V[j, 2] = 0.0
        ref[j] = s2
        mode[j] = S.RESTING if s2 >= 0 else S.GROUND
    else:
        P[j, 2] = nz


@njit(cache=True)
def step_kernel(sc, rp, op, R, P, V, mode, ref, cmd, dt):
    """Advance the whole world by one step, in place."""
    ex0 = R[S.BX] + R[S.OX]
    ey0 = R[S.BY] + R[S.OY]
    ez0 = R[S.EZ]
    _integrate_base(sc, R, rp, cmd, dt)

    # end effector, offset relative to the base
    ox = R[S.OX] + cmd[S.C_EVX] * dt
    oy = R[S.OY] + cmd[S.C_EVY] * dt
    r = math.sqrt(ox * ox + oy * oy)
    if r > rp[S.R_REACH]:
        ox *= rp[S.R_REACH] / r
        oy *= rp[S.R_REACH] / r
    ez = min(max(R[S.EZ] + cmd[S.C_EVZ] * dt, rp[S.R_EZLO]), rp[S.R_EZHI])
    att = int(R[S.ATT])
    clear = op[att, 2] if att >= 0 else rp[S.R_EERAD]
    floor = top_kernel(sc, R[S.BX] + ox, R[S.BY] + oy) + clear
    if ez < floor:
        ez = floor
    R[S.OX] = ox
    R[S.OY] = oy
    R[S.EZ] = ez
    ex = R[S.BX] + ox
    ey = R[S.BY] + oy
    R[S.EVX] = (ex - ex0) / dt
    R[S.EVY] = (ey - ey0) / dt
    R[S.EVZ] = (ez - ez0) / dt
    R[S.EYAW] += cmd[S.C_YAWR] * dt

    _gripper(R, P, V, mode, ref, rp, int(cmd[S.C_GRIP]))
    att = int(R[S.ATT])
    if R[S.GRIP] > 0.5 and att < 0:
        _push_contact(R, P, V, mode, op, rp)

    for j in range(P.shape[0]):
        m = mode[j]
        if m == S.ATTACHED:
            P[j, 0] = ex
            P[j, 1] = ey
            P[j, 2] = ez
            V[j, 0] = R[S.EVX]
            V[j, 1] = R[S.EVY]
            V[j, 2] = R[S.EVZ]
        elif m == S.RESTING or m == S.GROUND:
            _surface_update(sc, P, V, mode, ref, j, op, dt)
        elif m == S.FALLING:
            _falling_update(sc, P, V, mode, ref, j, op, dt)
        else:
            k = ref[j]
            if (mode[k] == S.FALLING or abs(P[j, 0] - P[k, 0]) > op[k, 0]
                    or abs(P[j, 1] - P[k, 1]) > op[k, 1]):
                mode[j] = S.FALLING
                ref[j] = -1

    for i in range(R.shape[0]):
        if not np.isfinite(R[i]):
            raise FloatingPointError("non-finite robot state")
    for j in range(P.shape[0]):
        for c in range(3):
            if not (np.isfinite(P[j, c]) and np.isfinite(V[j, c])):
                raise FloatingPointError("non-finite object state")


# ---------------------------------------------------------------------------
# Rollout


@njit(cache=True)
def _dist3(ax, ay, az, bx, by, bz):
    return math.sqrt((ax - bx) ** 2 + (ay - by) ** 2 + (az - bz) ** 2)


@njit(cache=True)
def _record(trace, n, t, act, R, P, mode):
    if n >= trace.shape[0]:
        return n
    row = trace[n]
    row[T_T] = t
    row[T_ACT] = act
    row[T_BX] = R[S.BX]
    row[T_BY] = R[S.BY]
    row[T_HEAD] = R[S.HEAD]
    row[T_EX] = R[S.BX] + R[S.OX]
    row[T_EY] = R[S.BY] + R[S.OY]
    row[T_EZ] = R[S.EZ]
    row[T_EYAW] = R[S.EYAW]
    row[T_GRIP] = R[S.GRIP]
    row[T_ATT] = R[S.ATT]
    for j in range(P.shape[0]):
        row[T_OBJ + 4 * j] = P[j, 0]
        row[T_OBJ + 4 * j + 1] = P[j, 1]
        row[T_OBJ + 4 * j + 2] = P[j, 2]
        row[T_OBJ + 4 * j + 3] = mode[j]
    return n + 1


@njit(cache=True)
def _goal_check(sc, R, P, mode, ref, op, region, goal_obj, goal_shape):
    if not (region[0] <= R[S.BX] <= region[2] and region[1] <= R[S.BY] <= region[3]):
        return False
    if goal_obj < 0:
        return True
    if mode[goal_obj] != S.RESTING or ref[goal_obj] != goal_shape:
        return False
    x = P[goal_obj, 0]
    y = P[goal_obj, 1]
    if not poly_contains(sc.verts[goal_shape], sc.nverts[goal_shape], x, y):
        return False
    bottom = P[goal_obj, 2] - op[goal_obj, 2]
    return abs(bottom - shape_height(sc, goal_shape, x, y)) <= REST_TOL




@njit(cache=True)
def _brake(R, gains, rp, cmd):
    cmd[:] = 0.0
    ax = -gains[S.G_KD] * R[S.BVX]
    ay = -gains[S.G_KD] * R[S.BVY]
    n = math.sqrt(ax * ax + ay * ay)
    if n > rp[S.R_AMAX]:
        ax *= rp[S.R_AMAX] / n
        ay *= rp[S.R_AMAX] / n
    cmd[S.C_AX] = ax
    cmd[S.C_AY] = ay
    cmd[S.C_GRIP] = S.GRIP_HOLD


@njit(cache=True)
def _at_rest(R, V, mode):
    if R[S.BVX] ** 2 + R[S.BVY] ** 2 > 1e-6:
        return False
    for j in range(V.shape[0]):
        if mode[j] == S.FALLING:
            return False
        if mode[j] != S.ATTACHED and V[j, 0] ** 2 + V[j, 1] ** 2 + V[j, 2] ** 2 > 0.0:
            return False
    return True


@njit(cache=True)
def rollout_kernel(sc, blocked, rp, gains, op, dt, R0, P0, V0, M0, F0, kinds, poff, aobj,
                   budgets, z, max_steps, settle_steps, region, goal_obj, goal_shape,
                   stride, succ, cost, nsteps):
    """Execute a realized plan from the given initial state.

    Fills ``succ``, ``cost`` and ``nsteps`` per action and returns
    ``(goal_ok, trace, n_rows)``; the trace is empty when ``stride <= 0``.
    """
    R = R0.copy()
    P = P0.copy()
    V = V0.copy()
    mode = M0.copy()
    ref = F0.copy()
    m = P.shape[0]
    k = kinds.shape[0]
    cmd = np.zeros(S.NC)
    eps = rp[S.R_SUCC]
    if stride > 0:
        trace = np.zeros(((max_steps + settle_steps) // stride + k + 3, T_OBJ + 4 * m))
    else:
        trace = np.zeros((0, T_OBJ + 4 * m))
    nrec = 0
    if stride > 0:
        nrec = _record(trace, nrec, 0, 0, R, P, mode)
    ci = np.zeros(1, dtype=np.int64)
    cf = np.zeros(2)
    goal = np.zeros(3)
    for a in range(k):
        succ[a] = False
        cost[a] = 0.0
        nsteps[a] = 0
    t = 0
    all_ok = True
    for a in range(k):
        kind = kinds[a]
        o = poff[a]
        wps = np.zeros((0, 2))
        target = aobj[a]
        if kind == S.K_MOVE:
            wps, ok = astar_plan_kernel(sc, blocked, gains[S.G_CELL], gains[S.G_PAD],
                                        R[S.BX], R[S.BY], z[o], z[o + 1])
            if not ok:
                all_ok = False
                break
            ci[0] = 0
            cf[:] = 0.0
            goal[0] = z[o]
            goal[1] = z[o + 1]
            goal[2] = 0.0
        elif kind == S.K_GRASP:
            goal[0] = P[target, 0]
            goal[1] = P[target, 1]
            goal[2] = P[target, 2]
        else:
            goal[0] = z[o]
            goal[1] = z[o + 1]
            goal[2] = z[o + 2]
        opened = False
        n = 0
        done = False
        while True:
            ex = R[S.BX] + R[S.OX]
            ey = R[S.BY] + R[S.OY]
            ez = R[S.EZ]
            done = success_kernel(kind, R, goal, target, opened, eps)
            if done or n >= budgets[a] or t >= max_steps:
                break
            if kind == S.K_MOVE:
                track_step_kernel(R, wps, ci, cf, gains, rp, dt, cmd)
            elif kind == S.K_GRASP:
                goal[0] = P[target, 0]
                goal[1] = P[target, 1]
                goal[2] = P[target, 2]
                fabric_step_kernel(sc, R, goal, z[o], gains, rp, dt, True, cmd)
                close = (_dist3(ex, ey, ez, goal[0], goal[1], goal[2]) <= rp[S.R_GTOL]
                         and abs(wrap_angle(z[o] - R[S.EYAW])) <= S.YAW_EPS)
                cmd[S.C_GRIP] = S.GRIP_CLOSE if close else S.GRIP_OPEN
            else:
                fabric_step_kernel(sc, R, goal, z[o + 3], gains, rp, dt, True, cmd)
                speed = math.sqrt(R[S.EVX] ** 2 + R[S.EVY] ** 2 + R[S.EVZ] ** 2)
                if (_dist3(ex, ey, ez, goal[0], goal[1], goal[2]) <= eps
                        and speed <= S.RELEASE_SPEED
                        and abs(wrap_angle(z[o + 3] - R[S.EYAW])) <= S.YAW_EPS):
                    cmd[S.C_GRIP] = S.GRIP_OPEN
                    opened = True
                elif kind == S.K_PUSH:
                    cmd[S.C_GRIP] = S.GRIP_FIST
            step_kernel(sc, rp, op, R, P, V, mode, ref, cmd, dt)
            t += 1
            n += 1
            if stride > 0 and t % stride == 0:
                nrec = _record(trace, nrec, t, a, R, P, mode)
        succ[a] = done
        cost[a] = float(n)
        nsteps[a] = n
        if not done:
            all_ok = False
            break
    if all_ok:
        # let released objects come to rest; no cost accrues here
        for _ in range(settle_steps):
            if _at_rest(R, V, mode):
                break
            _brake(R, gains, rp, cmd)
            step_kernel(sc, rp, op, R, P, V, mode, ref, cmd, dt)
            t += 1
            if stride > 0 and t % stride == 0:
                nrec = _record(trace, nrec, t, -1, R, P, mode)
    if stride > 0 and (nrec == 0 or trace[nrec - 1, T_T] != t):
        nrec = _record(trace, nrec, t, -1, R, P, mode)
    goal_ok = _goal_check(sc, R, P, mode, ref, op, region, goal_obj, goal_shape)
    return goal_ok, trace, nrec


@njit(cache=True, nogil=True)
def batch_kernel(sc, blocked, rp, gains, op, dt, R0, P0, V0, M0, F0, kinds, poff, aobj,
                 budgets, Z, max_steps, settle_steps, region, goal_obj, goal_shape,
                 succ, cost, nsteps, goal_ok):
    for i in range(Z.shape[0]):
        g, _, _ = rollout_kernel(sc, blocked, rp, gains, op, dt, R0, P0, V0, M0, F0, kinds,
                                 poff, aobj, budgets, Z[i], max_steps, settle_steps, region,
                                 goal_obj, goal_shape, 0, succ[i], cost[i], nsteps[i])
        goal_ok[i] = g


# ---------------------------------------------------------------------------
# Python interface


def step(state: S.WorldState, command, scenario: Scenario, dt: Optional[float] = None) -> S.WorldState:
    """One physics step; returns a new state and leaves ``state`` untouched.

    ``command`` is a :class:`~planreal.controllers.ControllerCommand` or a raw
    command array.
    """
    cmd = command.to_array() if hasattr(command, "to_array") else np.asarray(command, dtype=float)
    out = state.copy()
    step_kernel(scenario.arrays, S.robot_array(scenario), S.object_array(scenario), out.robot,
                out.pos, out.vel, out.mode, out.ref, cmd, float(dt or scenario.sim.dt))
    out.t += 1
    return out


def plan_layout(plan) -> Layout:
    """Parameter layout of a plan: each distinct bound parameter once, in plan order."""
    seen: dict = {}
    for action in plan:
        for spec in action.bound_params:
            seen.setdefault(spec.id, spec)
    return Layout(tuple(seen.values()))


@dataclass(frozen=True)
class CompiledPlan:
    names: tuple[str, ...]
    layout: Layout
    kinds: np.ndarray
    poff: np.ndarray
    aobj: np.ndarray
    budgets: np.ndarray


def compile_plan(scenario: Scenario, plan) -> CompiledPlan:
    """Lower a symbolic plan to the arrays the rollout kernel consumes.

    Each action must carry exactly one continuous parameter whose kind its
    controller accepts.
    """
    actions = list(plan)
    layout = plan_layout(actions)
    offsets = {sid: off for sid, off, _ in layout.offsets}
    k = len(actions)
    kinds = np.zeros(k, dtype=np.int64)
    poff = np.zeros(k, dtype=np.int64)
    aobj = np.full(k, -1, dtype=np.int64)
    budgets = np.zeros(k, dtype=np.int64)
    dt = scenario.sim.dt
    names = []
    for i, action in enumerate(actions):
        ctrl = action.controller_id
        if ctrl not in S.CONTROLLERS:
            raise ValueError(f"unknown controller {ctrl!r}")
        if len(action.bound_params) != 1:
            raise ValueError(f"{action} must bind exactly one continuous parameter")
        spec = action.bound_params[0]
        if spec.kind not in S.CONTROLLER_KINDS[ctrl]:
            raise ValueError(f"{ctrl} cannot take a {spec.kind} parameter ({spec.id})")
        kinds[i] = S.CONTROLLERS[ctrl]
        poff[i] = offsets[spec.id]
        if kinds[i] == S.K_GRASP:
            if spec.object is None:
                raise ValueError(f"grasp parameter {spec.id} names no object")
            aobj[i] = scenario.object_index(spec.object)
        seconds = scenario.sim.controllers.budget_for(S.KIND_NAMES[kinds[i]])
        if seconds is None:
            seconds = scenario.sim.horizon / k
        budgets[i] = int(round(seconds / dt))
        names.append(str(action))
    return CompiledPlan(tuple(names), layout, kinds, poff, aobj, budgets)


@dataclass(frozen=True)
class RolloutResult:
    action_success: tuple[bool, ...]
    action_cost: tuple[float, ...]
    action_steps: tuple[int, ...]
    goal_ok: bool
    total_cost: float
    seed: int = 0
    trace: Optional[np.ndarray] = None

    @property
    def all_actions_ok(self) -> bool:
        return all(self.action_success)

    @property
    def goal_feasible(self) -> bool:
        return self.goal_ok and self.all_actions_ok

    def summary(self) -> dict:
        return {
            "action_success": list(self.action_success),
            "action_cost": list(self.action_cost),
            "all_actions_ok": self.all_actions_ok,
            "goal_ok": self.goal_ok,
            "total_cost": self.total_cost,
        }

    def same_outcome(self, other: "RolloutResult") -> bool:
        return (self.action_success == other.action_success and self.action_cost == other.action_cost
                and self.action_steps == other.action_steps and self.goal_ok == other.goal_ok
                and self.total_cost == other.total_cost)


def sample_seed(master_seed: int, index: int) -> int:
    """Per-environment seed derived from (master seed, sample index)."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


class _Runner:
    """Everything about (scenario, plan) that stays fixed across rollouts."""

    def __init__(self, scenario: Scenario, plan):
        self.scenario = scenario
        self.cplan = plan if isinstance(plan, CompiledPlan) else compile_plan(scenario, plan)
        init = S.initial_state(scenario)
        self.init = (init.robot, init.pos, init.vel, init.mode, init.ref)
        sim = scenario.sim
        self.common = (scenario.arrays, nav_grid(scenario), S.robot_array(scenario),
                       S.gains_array(scenario), S.object_array(scenario), float(sim.dt))
        self.max_steps = int(round(sim.horizon / sim.dt))
        self.settle_steps = int(round(sim.settle_time / sim.dt))
        g = scenario.goal
        r = g.robot_region
        self.region = np.array([r.min[0], r.min[1], r.max[0], r.max[1]])
        if g.object_on_surface is None:
            self.goal_obj, self.goal_shape = -1, -1
        else:
            self.goal_obj = scenario.object_index(g.object_on_surface[0])
            self.goal_shape = scenario.shape_index(g.object_on_surface[1])

    def values(self, params) -> np.ndarray:
        v = params.values if isinstance(params, ParamVector) else params
        v = np.ascontiguousarray(v, dtype=float)
        if v.shape != (self.cplan.layout.size,):
            raise ValueError(f"expected {self.cplan.layout.size} parameter values, got {v.shape}")
        return v

    def one(self, params, seed: int, stride: int) -> RolloutResult:
        k = len(self.cplan.kinds)
        succ = np.zeros(k, dtype=np.bool_)
        cost = np.zeros(k)
        nsteps = np.zeros(k, dtype=np.int64)
        c = self.cplan
        goal_ok, trace, nrec = rollout_kernel(
            *self.common, *self.init, c.kinds, c.poff, c.aobj, c.budgets, self.values(params),
            self.max_steps, self.settle_steps, self.region, self.goal_obj, self.goal_shape,
            int(stride), succ, cost, nsteps)
        return RolloutResult(tuple(bool(s) for s in succ), tuple(float(x) for x in cost),
                             tuple(int(x) for x in nsteps), bool(goal_ok), float(cost.sum()),
                             seed, trace[:nrec].copy() if stride > 0 else None)

    def many(self, Z: np.ndarray):
        n, k = Z.shape[0], len(self.cplan.kinds)
        succ = np.zeros((n, k), dtype=np.bool_)
        cost = np.zeros((n, k))
        nsteps = np.zeros((n, k), dtype=np.int64)
        goal_ok = np.zeros(n, dtype=np.bool_)
        c = self.cplan
        batch_kernel(*self.common, *self.init, c.kinds, c.poff, c.aobj, c.budgets, Z,
                     self.max_steps, self.settle_steps, self.region, self.goal_obj,
                     self.goal_shape, succ, cost, nsteps, goal_ok)
        return succ, cost, nsteps, goal_ok


def rollout(scenario: Scenario, plan, params, rng_seed: int = 0, stride: int = 0) -> RolloutResult:
    """Execute ``plan`` with continuous parameters ``params``.

    The physics is deterministic, so ``rng_seed`` is only recorded. With
    ``stride > 0`` a state row is kept every ``stride`` steps (see
    :func:`trace_records`).
    """
    return _Runner(scenario, plan).one(params, int(rng_seed), stride)


def rollout_batch(scenario: Scenario, plan, params_list: Sequence, master_seed: int = 0,
                  workers: int = 1) -> list[RolloutResult]:
    """Independent rollouts of every parameter vector, in input order.

    ``workers > 1`` splits the batch into contiguous chunks run on threads
    (the kernel releases the GIL); results do not depend on the split.
    """
    runner = _Runner(scenario, plan)
    if len(params_list) == 0:
        return []
    Z = np.stack([runner.values(p) for p in params_list])
    if workers <= 1 or len(Z) < 2 * workers:
        parts = [runner.many(Z)]
    else:
        chunks = np.array_split(np.arange(len(Z)), workers)
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda ix: runner.many(Z[ix]), chunks))
    succ = np.concatenate([p[0] for p in parts])
    cost = np.concatenate([p[1] for p in parts])
    nsteps = np.concatenate([p[2] for p in parts])
    goal_ok = np.concatenate([p[3] for p in parts])
    return [
        RolloutResult(tuple(bool(s) for s in succ[i]), tuple(float(x) for x in cost[i]),
                      tuple(int(x) for x in nsteps[i]), bool(goal_ok[i]), float(cost[i].sum()),
                      sample_seed(master_seed, i))
        for i in range(len(Z))
    ]


# ---------------------------------------------------------------------------
# Trace export


def trace_records(scenario: Scenario, trace: np.ndarray, action_names: Sequence[str] = ()) -> list[dict]:
    """Trace rows as plain records: {t, time, active_action, base, ee, objects}."""
    out = []
    dt = scenario.sim.dt
    for row in trace:
        act = int(row[T_ACT])
        objs = []
        for j, o in enumerate(scenario.objects):
            b = T_OBJ + 4 * j
            objs.append({"id": o.id, "pos": [float(v) for v in row[b:b + 3]],
                         "support": S.MODE_NAMES[int(row[b + 3])]})
        out.append({
            "t": int(row[T_T]),
            "time": round(float(row[T_T]) * dt, 9),
            "active_action": (action_names[act] if 0 <= act < len(action_names) else act)
            if act >= 0 else None,
            "base": {"pos": [float(row[T_BX]), float(row[T_BY])], "heading": float(row[T_HEAD])},
            "ee": {"pos": [float(row[T_EX]), float(row[T_EY]), float(row[T_EZ])],
                   "yaw": float(row[T_EYAW]),
                   "gripper": "closed" if row[T_GRIP] > 0.5 else "open",
                   "holding": scenario.objects[int(row[T_ATT])].id if row[T_ATT] >= 0 else None},
            "objects": objs,
        })
    return out


def trace_header(scenario: Scenario, action_names: Sequence[str], stride: int) -> dict:
    return {"schema": TRACE_SCHEMA, "version": TRACE_VERSION, "scenario": scenario.name,
            "dt": scenario.sim.dt, "stride": stride, "actions": list(action_names),
            "objects": [o.id for o in scenario.objects]}


def write_trace(path, scenario: Scenario, result: RolloutResult, action_names: Sequence[str],
                stride: int) -> None:
    """JSON-lines: a header line, then one line per recorded state."""
    with open(path, "w") as f:
        f.write(json.dumps(trace_header(scenario, action_names, stride), sort_keys=True) + "\n")
        for rec in trace_records(scenario, result.trace, action_names):
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path) -> tuple[dict, list[dict]]:
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("schema") != TRACE_SCHEMA:
        raise ValueError("not a trace file")
    if lines[0].get("version") != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {lines[0].get('version')}")
    return lines[0], lines[1:]
