"""Symbolic parameter regions and the sampling distribution over a plan's parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

KINDS = ("annulus", "rect2", "box3yaw", "yaw")
DIMS = {"annulus": 2, "rect2": 2, "box3yaw": 4, "yaw": 1}

DEFAULT_STD_FLOOR = 1e-3
DEFAULT_NOISE_STD = 0.05


@dataclass(frozen=True)
class ParamSpec:
    """A named continuous parameter and its admissible region h(z) <= 0.

    Only the fields relevant to ``kind`` are used:

    * ``annulus``: ``center`` (2), ``r``, ``R``
    * ``rect2``: ``center`` (2), ``size`` (2)
    * ``box3yaw``: ``center`` (3), ``size`` (3), ``halfwidth`` (yaw, centred on 0)
    * ``yaw``: ``center`` (1), ``halfwidth``

    ``object`` optionally names the movable object the parameter refers to
    (the grasp target for a yaw parameter).
    """

    id: str
    kind: str
    center: tuple[float, ...]
    size: tuple[float, ...] = ()
    r: float = 0.0
    R: float = 0.0
    halfwidth: float = 0.0
    object: Optional[str] = None

    @property
    def dim(self) -> int:
        return DIMS[self.kind]

    def check(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        want = {"annulus": 2, "rect2": 2, "box3yaw": 3, "yaw": 1}[self.kind]
        if len(self.center) != want:
            raise ValueError(f"center must have {want} components")
        if self.kind == "annulus" and not 0 < self.r < self.R:
            raise ValueError("annulus needs 0 < r < R")
        if self.kind in ("rect2", "box3yaw"):
            if len(self.size) != want or min(self.size) <= 0:
                raise ValueError("sizes must be positive")
        if self.kind in ("box3yaw", "yaw") and not 0 < self.halfwidth <= math.pi:
            raise ValueError("yaw halfwidth must be in (0, pi]")

    def contains(self, z: Sequence[float], tol: float = 1e-12) -> bool:
        """Membership test h(z) <= 0."""
        z = np.asarray(z, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if self.kind == "annulus":
            rho = float(np.hypot(*(z - c)))
            return self.r - tol <= rho <= self.R + tol
        if self.kind == "rect2":
            return bool(np.all(np.abs(z - c) <= np.asarray(self.size) / 2 + tol))
        if self.kind == "box3yaw":
            inside = np.all(np.abs(z[:3] - c) <= np.asarray(self.size) / 2 + tol)
            return bool(inside and abs(z[3]) <= self.halfwidth + tol)
        return abs(z[0] - c[0]) <= self.halfwidth + tol


def param_spec_from_dict(d: dict) -> ParamSpec:
    kind = d["kind"]
    return ParamSpec(
        id=d["id"],
        kind=kind,
        center=tuple(float(v) for v in (d["center"] if isinstance(d["center"], list) else [d["center"]])),
        size=tuple(float(v) for v in d.get("size", ())),
        r=float(d.get("r", 0.0)),
        R=float(d.get("R", 0.0)),
        halfwidth=float(d.get("halfwidth", 0.0)),
        object=d.get("object"),
    )


def param_spec_to_dict(p: ParamSpec) -> dict:
    d: dict = {"id": p.id, "kind": p.kind, "center": list(p.center)}
    if p.kind == "annulus":
        d.update(r=p.r, R=p.R)
    if p.kind in ("rect2", "box3yaw"):
        d["size"] = list(p.size)
    if p.kind in ("box3yaw", "yaw"):
        d["halfwidth"] = p.halfwidth
    if p.object is not None:
        d["object"] = p.object
    return d


def sample_initial(spec: ParamSpec, rng: np.random.Generator) -> np.ndarray:
    """One sample uniform over the parameter's region (area/volume measure)."""
    c = np.asarray(spec.center, dtype=float)
    if spec.kind == "annulus":
        u, v = rng.random(2)
        rho = math.sqrt(spec.r**2 + u * (spec.R**2 - spec.r**2))
        phi = 2.0 * math.pi * v
        return c + rho * np.array([math.cos(phi), math.sin(phi)])
    if spec.kind == "rect2":
        return c + (rng.random(2) - 0.5) * np.asarray(spec.size)
    if spec.kind == "box3yaw":
        xyz = c + (rng.random(3) - 0.5) * np.asarray(spec.size)
        yaw = (2.0 * rng.random() - 1.0) * spec.halfwidth
        return np.append(xyz, yaw)
    return c + (2.0 * rng.random(1) - 1.0) * spec.halfwidth


@dataclass(frozen=True)
class Layout:
    """Where each plan parameter lives inside the flat parameter vector."""

    specs: tuple[ParamSpec, ...]

    @property
    def offsets(self) -> list[tuple[str, int, int]]:
        out, off = [], 0
        for s in self.specs:
            out.append((s.id, off, s.dim))
            off += s.dim
        return out

    @property
    def size(self) -> int:
        return sum(s.dim for s in self.specs)

    def slice(self, i: int) -> slice:
        _, off, dim = self.offsets[i]
        return slice(off, off + dim)


@dataclass(frozen=True)
class ParamVector:
    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        if len(self.values) != self.layout.size:
            raise ValueError(f"expected {self.layout.size} values, got {len(self.values)}")

    def part(self, i: int) -> np.ndarray:
        return self.values[self.layout.slice(i)]


@dataclass(frozen=True)
class DistributionState:
    """Sampling distribution over a plan's parameters.

    ``mode == "initial"`` samples each parameter uniformly in its region;
    ``mode == "gaussian"`` draws independent normals per scalar (not clipped).
    """

    layout: Layout
    mode: str = "initial"
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    std_floor: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.std_floor is None:
            object.__setattr__(self, "std_floor", np.full(self.layout.size, DEFAULT_STD_FLOOR))
        if self.mode == "gaussian":
            if np.any(self.std_floor <= 0) or np.any(self.std < self.std_floor):
                raise ValueError("std must stay at or above a positive floor")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean": None if self.mean is None else [float(v) for v in self.mean],
            "std": None if self.std is None else [float(v) for v in self.std],
        }


def initial_distribution(layout: Layout, std_floor: float = DEFAULT_STD_FLOOR) -> DistributionState:
    return DistributionState(layout, "initial", std_floor=np.full(layout.size, std_floor))


def sample(dist: DistributionState, rng: np.random.Generator) -> ParamVector:
    if dist.mode == "initial":
        vals = np.concatenate([sample_initial(s, rng) for s in dist.layout.specs]) \
            if dist.layout.specs else np.zeros(0)
    else:
        vals = dist.mean + dist.std * rng.standard_normal(dist.layout.size)
    return ParamVector(vals, dist.layout)


def fit_elites(
    samples: Sequence[ParamVector],
    prev: DistributionState,
    noise_injection_std: float = DEFAULT_NOISE_STD,
) -> DistributionState:
    """Refit independent normals to elite samples (population std, floored)."""
    if not samples:
        raise ValueError("fit_elites needs at least one sample")
    # column-wise sort makes the result independent of sample order, bit for bit
    x = np.sort(np.stack([s.values for s in samples]), axis=0)
    mean = x.mean(axis=0)
    if len(samples) == 1:
        std = np.maximum(np.full(x.shape[1], noise_injection_std), prev.std_floor)
    else:
        std = np.maximum(x.std(axis=0), prev.std_floor)
    return replace(prev, mode="gaussian", mean=mean, std=std)
