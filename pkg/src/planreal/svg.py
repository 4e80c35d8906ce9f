"""Top-down SVG figures of a scenario with base paths drawn over it.

World to page: x_px = MARGIN + SCALE * (x - xmin), y_px = MARGIN + SCALE *
(ymax - y), with SCALE px per meter and (xmin, ymin, xmax, ymax) the world
bounds; north is up. Elements are written in a fixed order and numbers with
fixed precision, so equal inputs give byte-identical files.
"""

from __future__ import annotations

import math
from typing import Iterable, Optional, Sequence

from planreal.world import Scenario

SCALE = 100.0
MARGIN = 20.0

FAILED = "#f08c28"  # orange family for failed plans
SUCCESS = "#2a7fd4"
BEST = "#0b3d91"
REGION = "#7fbf7f"


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class Canvas:
    def __init__(self, scenario: Scenario):
        b = scenario.sim.bounds
        self.x0, self.y1 = b.min[0], b.max[1]
        self.w = SCALE * (b.max[0] - b.min[0]) + 2 * MARGIN
        self.h = SCALE * (b.max[1] - b.min[1]) + 2 * MARGIN
        self.parts: list[str] = []

    def pt(self, x: float, y: float) -> str:
        return f"{_f(MARGIN + SCALE * (x - self.x0))},{_f(MARGIN + SCALE * (self.y1 - y))}"

    def add(self, s: str) -> None:
        self.parts.append(s)

    def polygon(self, pts, **style) -> None:
        self.add(f'<polygon points="{" ".join(self.pt(x, y) for x, y in pts)}"{_style(style)}/>')

    def polyline(self, pts, **style) -> None:
        if len(pts) < 2:
            return
        self.add(f'<polyline points="{" ".join(self.pt(x, y) for x, y in pts)}"{_style(style)}/>')

    def cross(self, x: float, y: float, size: float = 4.0, **style) -> None:
        cx, cy = (float(v) for v in self.pt(x, y).split(","))
        self.add(f'<path d="M{_f(cx - size)},{_f(cy - size)}L{_f(cx + size)},{_f(cy + size)}'
                 f'M{_f(cx - size)},{_f(cy + size)}L{_f(cx + size)},{_f(cy - size)}"{_style(style)}/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" height="{_f(self.h)}" '
                f'viewBox="0 0 {_f(self.w)} {_f(self.h)}">')
        return "\n".join([head, f'<rect width="{_f(self.w)}" height="{_f(self.h)}" fill="white"/>',
                          *self.parts, "</svg>"]) + "\n"


def _style(style: dict) -> str:
    return "".join(f' {k.replace("_", "-")}="{v}"' for k, v in sorted(style.items()))


def _offset_outline(pts, pad: float, n_arc: int = 6):
    """Outline of a convex polygon grown by ``pad`` (rounded corners)."""
    out = []
    n = len(pts)
    area = sum(pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1] for i in range(n))
    sign = 1.0 if area > 0 else -1.0
    for i in range(n):
        px, py = pts[i - 1]
        cx, cy = pts[i]
        nx_, ny_ = pts[(i + 1) % n]
        a0 = math.atan2(-(cx - px) * sign, (cy - py) * sign)
        a1 = math.atan2(-(nx_ - cx) * sign, (ny_ - cy) * sign)
        while a1 < a0:
            a1 += 2 * math.pi
        for k in range(n_arc + 1):
            a = a0 + (a1 - a0) * k / n_arc
            out.append((cx + pad * math.cos(a), cy + pad * math.sin(a)))
    return out


def draw_world(c: Canvas, scenario: Scenario, params: Iterable = ()) -> None:
    c.add('<g id="regions">')
    for spec in params:
        _draw_region(c, spec)
    c.add("</g>")
    c.add('<g id="shapes">')
    pad = scenario.sim.astar_padding
    for s in scenario.shapes:
        fill = "#8c8c8c" if s.is_navigation_obstacle else "#d0d0d0"
        if s.is_navigation_obstacle and pad > 0:
            c.polygon(_offset_outline(list(s.footprint), pad), fill="none", stroke="#8c8c8c",
                      stroke_dasharray="4,3", stroke_width="1")
        c.polygon(s.footprint, fill=fill, stroke="black", stroke_width="1")
    r = scenario.goal.robot_region
    c.polygon([(r.min[0], r.min[1]), (r.max[0], r.min[1]), (r.max[0], r.max[1]), (r.min[0], r.max[1])],
              fill="none", stroke="#2a9d2a", stroke_width="1.5")
    c.add("</g>")


def _draw_region(c: Canvas, spec) -> None:
    style = dict(fill=REGION, fill_opacity="0.25", stroke=REGION, stroke_width="1")
    if spec.kind == "annulus":
        cx, cy = spec.center
        outer = [(cx + spec.R * math.cos(2 * math.pi * k / 48), cy + spec.R * math.sin(2 * math.pi * k / 48))
                 for k in range(48)]
        inner = [(cx + spec.r * math.cos(-2 * math.pi * k / 48), cy + spec.r * math.sin(-2 * math.pi * k / 48))
                 for k in range(48)]
        d = "M" + "L".join(c.pt(x, y) for x, y in outer) + "ZM" + "L".join(c.pt(x, y) for x, y in inner) + "Z"
        c.add(f'<path d="{d}" fill-rule="evenodd"{_style(style)}/>')
    elif spec.kind in ("rect2", "box3yaw"):
        cx, cy = spec.center[:2]
        sx, sy = spec.size[0] / 2, spec.size[1] / 2
        c.polygon([(cx - sx, cy - sy), (cx + sx, cy - sy), (cx + sx, cy + sy), (cx - sx, cy + sy)], **style)


def _xy_params(layout: Sequence[dict], values: Sequence[float]):
    for entry in layout:
        if entry["kind"] in ("annulus", "rect2", "box3yaw"):
            o = entry["offset"]
            yield values[o], values[o + 1]


def history_figure(scenario: Scenario, header: dict, record: dict) -> str:
    """One iteration's logged samples: failed paths, successful paths, best path,
    and the sampled location parameters as crosses."""
    c = Canvas(scenario)
    ids = {e["id"] for e in header["layout"]}
    draw_world(c, scenario, [p for p in scenario.params if p.id in ids])
    samples = record.get("samples", [])
    for group, keep, color in (("failed", lambda s: not s["goal_feasible"], FAILED),
                               ("success", lambda s: s["goal_feasible"] and not s["best"], SUCCESS),
                               ("best", lambda s: s["best"], BEST)):
        c.add(f'<g id="{group}">')
        for s in samples:
            if keep(s):
                width = "3" if group == "best" else "1.2"
                c.polyline(s.get("base_path", []), fill="none", stroke=color, stroke_width=width,
                           stroke_opacity="0.8")
        c.add("</g>")
    c.add('<g id="samples">')
    for s in samples:
        color = SUCCESS if s["goal_feasible"] else FAILED
        for x, y in _xy_params(header["layout"], s["values"]):
            c.cross(x, y, stroke=color, stroke_width="1")
    c.add("</g>")
    return c.render()


def trace_figure(scenario: Scenario, records: Sequence[dict], goal_ok: Optional[bool] = None) -> str:
    """Base path of a single trace, plus each object's path."""
    c = Canvas(scenario)
    draw_world(c, scenario)
    color = BEST if goal_ok is None else (SUCCESS if goal_ok else FAILED)
    c.add('<g id="base">')
    c.polyline([r["base"]["pos"] for r in records], fill="none", stroke=color, stroke_width="2")
    c.add("</g>")
    c.add('<g id="objects">')
    n = len(records[0]["objects"]) if records else 0
    for j in range(n):
        c.polyline([r["objects"][j]["pos"][:2] for r in records], fill="none", stroke="#b8002e",
                   stroke_width="1.5", stroke_dasharray="3,2")
    c.add("</g>")
    return c.render()
