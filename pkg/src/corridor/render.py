"""SVG overlays of a scene, its corridor and trajectories in the planning frame."""

from __future__ import annotations

import colorsys
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .annotation import Corridor
from .geometry import EgoFootprint, rect_vertices
from .scene import Scene, agent_boxes_at, to_local_frame

PX_PER_M = 12.0


def timestamp_colors(n: int) -> list[str]:
    """One distinct hue per timestamp, early steps blue through late steps red."""
    out = []
    for k in range(n):
        h = 0.66 * (1.0 - k / max(n - 1, 1))
        r, g, b = colorsys.hsv_to_rgb(h, 0.85, 0.85)
        out.append(f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}")
    return out


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    # SVG y grows downwards, so planning-frame y is flipped
    def __init__(self, lo, hi):
        self.lo, self.hi = np.asarray(lo, float), np.asarray(hi, float)
        self.items: list[str] = []

    def px(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.column_stack([(pts[:, 0] - self.lo[0]) * PX_PER_M, (self.hi[1] - pts[:, 1]) * PX_PER_M])

    def xy(self, pts) -> str:
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in self.px(pts))

    def polygon(self, pts, **style):
        self.items.append(f'<polygon points="{self.xy(pts)}"{_attrs(style)}/>')

    def polyline(self, pts, **style):
        self.items.append(f'<polyline points="{self.xy(pts)}" fill="none"{_attrs(style)}/>')

    def circle(self, p, r, **style):
        x, y = self.px(p)[0]
        self.items.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(r)}"{_attrs(style)}/>')

    def text(self, p, s, **style):
        x, y = self.px(p)[0]
        self.items.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}"{_attrs(style)}>{escape(s)}</text>')

    def svg(self, title: str) -> str:
        w, h = (self.hi - self.lo) * PX_PER_M
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" '
            f'viewBox="0 0 {_fmt(w)} {_fmt(h)}" font-family="sans-serif" font-size="11">'
        )
        body = "\n".join(self.items)
        return f'{head}\n<title>{escape(title)}</title>\n<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'


def _attrs(style: dict) -> str:
    return "".join(f' {k.replace("_", "-")}="{v}"' for k, v in style.items())


def render_svg(
    scene: Scene,
    corridor: Corridor | None = None,
    reference=None,
    trajectory=None,
    title: str = "scene",
    margin: float = 8.0,
) -> str:
    """Overlay of curbs, agents, corridor, reference and optimized trajectory.

    Everything tied to a timestamp (agent boxes, corridor rectangles, ego
    footprints, trajectory points) uses that timestamp's colour. Corridor
    rectangles are drawn translucent, the reference dashed, the optimized
    trajectory solid.
    """
    origin = scene.ego_pose_at(0.0)
    N = scene.horizon
    colors = timestamp_colors(N)
    fp: EgoFootprint = scene.footprint
    curbs = [to_local_frame(c, origin) for c in scene.curbs]
    lanes = [to_local_frame(c, origin) for c in scene.lanes]
    agents = []
    for k in range(N):
        boxes = []
        for b in agent_boxes_at(scene, (k + 1) * scene.dt):
            boxes.append(to_local_frame(rect_vertices(b), origin))
        agents.append(boxes)

    # view: the ego's neighbourhood over the horizon, not the whole map
    focus = [np.zeros((1, 2))]
    for arr in (reference, trajectory):
        if arr is not None:
            focus.append(np.asarray(arr, float)[:, :2])
    focus.append(scene.future_states()[:, :2])
    if corridor is not None:
        focus += [rect_vertices(r) for r in corridor]
    pts = np.vstack(focus)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    cv = _Canvas(lo, hi)

    for line in lanes:
        cv.polyline(line, stroke="#bbbbbb", stroke_width=1, stroke_dasharray="6 4")
    for line in curbs:
        cv.polyline(line, stroke="#222222", stroke_width=2)
    if corridor is not None:
        for k, r in enumerate(corridor):
            cv.polygon(rect_vertices(r), fill=colors[k % N], fill_opacity="0.12", stroke=colors[k % N], stroke_width=1)
    for k, boxes in enumerate(agents):
        for v in boxes:
            cv.polygon(v, fill=colors[k], fill_opacity="0.35", stroke=colors[k], stroke_width=1)
    cv.polygon(rect_vertices(fp.rect_at(0.0, 0.0, 0.0)), fill="#888888", fill_opacity="0.5", stroke="#444444")

    def draw_traj(arr, dashed: bool):
        arr = np.asarray(arr, float)
        line = np.vstack([[0.0, 0.0], arr[:, :2]])
        style = {"stroke": "#555555", "stroke_width": 1}
        if dashed:
            style["stroke_dasharray"] = "4 3"
        cv.polyline(line, **style)
        for k, x in enumerate(arr):
            c = colors[k % N]
            if dashed:
                cv.circle(x[:2], 3, fill="white", stroke=c, stroke_width=2)
            else:
                cv.polygon(rect_vertices(fp.rect_at(x[0], x[1], x[2])), fill="none", stroke=c, stroke_width=1.5)
                cv.circle(x[:2], 3, fill=c)

    if reference is not None:
        draw_traj(reference, dashed=True)
    if trajectory is not None:
        draw_traj(trajectory, dashed=False)

    # legend: one swatch per timestamp
    for k, c in enumerate(colors):
        p = np.array([lo[0] + 1.0 + 2.2 * k, hi[1] - 1.0])
        cv.circle(p, 5, fill=c)
        cv.text(p + [0.6, -0.3], f"{(k + 1) * scene.dt:g}s")
    return cv.svg(title)


def save_svg(svg: str, path) -> None:
    Path(path).write_text(svg, encoding="utf-8")
