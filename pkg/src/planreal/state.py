"""Flat array layout of the simulation state, commands and gains.

Compiled kernels index these arrays with the integer constants below;
:class:`WorldState` is the Python-side view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from planreal.world import REST_TOL, Scenario, support_kernel

# robot state
BX, BY, HEAD, BVX, BVY, OX, OY, EZ, EYAW, GRIP, ATT, EVX, EVY, EVZ = range(14)
NR = 14

# object support modes
RESTING, GROUND, FALLING, ATTACHED, ON_OBJECT = range(5)
MODE_NAMES = ("resting", "ground", "falling", "attached", "on_object")

# command
C_AX, C_AY, C_EVX, C_EVY, C_EVZ, C_YAWR, C_GRIP = range(7)
NC = 7
GRIP_HOLD, GRIP_OPEN, GRIP_CLOSE, GRIP_FIST = 0, 1, 2, 3
GRIP_CODES = {"hold": GRIP_HOLD, "open": GRIP_OPEN, "close": GRIP_CLOSE, "fist": GRIP_FIST}

# robot parameters
(R_RB, R_VMAX, R_AMAX, R_REACH, R_EZLO, R_EZHI, R_EVMAX, R_YAWRATE, R_EERAD, R_GTOL,
 R_GYAWTOL, R_SUCC) = range(12)

# controller gains
(G_KP, G_KD, G_KI, G_GAMMA, G_DAMP, G_ETA, G_DSAFE, G_YAW, G_CELL, G_PAD) = range(10)

# action kinds, one per controller
K_MOVE, K_GRASP, K_PLACE, K_PUSH = range(4)
CONTROLLERS = {"AStarTrack": K_MOVE, "FabricReach": K_GRASP, "FabricRelease": K_PLACE, "Push": K_PUSH}
CONTROLLER_KINDS = {  # parameter kinds each controller accepts
    "AStarTrack": ("annulus", "rect2"),
    "FabricReach": ("yaw",),
    "FabricRelease": ("box3yaw",),
    "Push": ("box3yaw",),
}
KIND_NAMES = ("moveTo", "grasp", "place", "push")

REACH_MARGIN = 0.1  # base stops closing in once the goal is within 90% of reach
YAW_EPS = 0.05  # rad, pose yaw tolerance for closing/opening the gripper
RELEASE_SPEED = 0.05  # m/s, end effector must be this slow to open on a pose


def robot_array(sc: Scenario) -> np.ndarray:
    r = sc.robot
    return np.array([
        r.base_radius, r.max_base_speed, r.max_base_accel, r.ee_reach,
        r.ee_height_range[0], r.ee_height_range[1], r.ee_max_speed, r.ee_max_yaw_rate,
        r.ee_radius, r.grasp_tolerance, r.grasp_yaw_tolerance, r.success_tolerance,
    ])


def gains_array(sc: Scenario) -> np.ndarray:
    c = sc.sim.controllers
    return np.array([c.kp, c.kd, c.ki, c.gamma, c.damping, c.eta, c.d_safe, c.yaw_gain,
                     sc.sim.astar_cell, sc.sim.astar_padding])


def object_array(sc: Scenario) -> np.ndarray:
    """(m, 5): half extents, mass, friction coefficient."""
    out = np.zeros((len(sc.objects), 5))
    for i, o in enumerate(sc.objects):
        out[i, :3] = o.half_extents
        out[i, 3] = o.mass
        out[i, 4] = o.friction
    return out


@dataclass
class WorldState:
    t: int
    robot: np.ndarray  # (NR,)
    pos: np.ndarray  # (m, 3)
    vel: np.ndarray  # (m, 3)
    mode: np.ndarray  # (m,) support mode
    ref: np.ndarray  # (m,) supporting shape / object index, -1 for none

    def copy(self) -> "WorldState":
        return WorldState(self.t, self.robot.copy(), self.pos.copy(), self.vel.copy(),
                          self.mode.copy(), self.ref.copy())

    @property
    def base(self) -> np.ndarray:
        return self.robot[[BX, BY]].copy()

    @property
    def ee(self) -> np.ndarray:
        return np.array([self.robot[BX] + self.robot[OX], self.robot[BY] + self.robot[OY],
                         self.robot[EZ]])

    @property
    def gripper_closed(self) -> bool:
        return self.robot[GRIP] > 0.5

    @property
    def attached(self) -> int:
        return int(self.robot[ATT])


def initial_state(sc: Scenario) -> WorldState:
    """Robot at its start pose (arm tucked above the base, gripper open); objects
    snapped onto whatever supports them."""
    R = np.zeros(NR)
    (x, y), heading = sc.robot_init
    R[BX], R[BY], R[HEAD] = x, y, heading
    R[EZ] = 0.5 * (sc.robot.ee_height_range[0] + sc.robot.ee_height_range[1])
    R[ATT] = -1
    m = len(sc.objects)
    pos = np.array([o.initial_position for o in sc.objects], dtype=float).reshape(m, 3)
    vel = np.zeros((m, 3))
    mode = np.full(m, FALLING, dtype=np.int64)
    ref = np.full(m, -1, dtype=np.int64)
    arrs = sc.arrays
    for i, o in enumerate(sc.objects):
        hx, hy, hz = o.half_extents
        bottom = pos[i, 2] - hz
        z, s = support_kernel(arrs, pos[i, 0], pos[i, 1], bottom + REST_TOL)
        if abs(bottom - z) <= REST_TOL:
            pos[i, 2] = z + hz
            mode[i] = RESTING if s >= 0 else GROUND
            ref[i] = s
            continue
        # stacked on an earlier object (the scripted support chain)
        for j in range(i):
            top = pos[j, 2] + sc.objects[j].half_extents[2]
            jx, jy, _ = sc.objects[j].half_extents
            if (abs(bottom - top) <= REST_TOL and abs(pos[i, 0] - pos[j, 0]) <= jx
                    and abs(pos[i, 1] - pos[j, 1]) <= jy and mode[j] != FALLING):
                pos[i, 2] = top + hz
                mode[i] = ON_OBJECT
                ref[i] = j
                break
    return WorldState(0, R, pos, vel, mode, ref)
