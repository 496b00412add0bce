"""Oriented rectangles, their H-representation, and footprint constraint rows."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_derivative(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c], [c, -s]])


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle with center, heading and *full* length/width."""

    cx: float
    cy: float
    theta: float
    l: float
    w: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.theta, self.l, self.w)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rectangle {vals}")
        if self.l <= 0 or self.w <= 0:
            raise ValueError(f"rectangle extents must be positive, got l={self.l}, w={self.w}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def area(self) -> float:
        return self.l * self.w

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.theta, self.l, self.w)


@dataclass(frozen=True)
class HalfspaceSet:
    """Rows ``A @ p <= b``; for rectangles the order is front, rear, left, right."""

    A: np.ndarray
    b: np.ndarray

    @property
    def rows(self) -> list[tuple[float, float, float]]:
        return [(float(a[0]), float(a[1]), float(bi)) for a, bi in zip(self.A, self.b)]

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(pts @ self.A.T <= self.b + tol, axis=1)


@dataclass(frozen=True)
class EgoFootprint:
    half_length: float = 2.0
    half_width: float = 0.9

    def __post_init__(self):
        if not (self.half_length > 0 and self.half_width > 0):
            raise ValueError("footprint half dimensions must be positive")

    def vertices_body(self) -> np.ndarray:
        # vertex order of the ego polygon: (l,-w), (l,w), (-l,w), (-l,-w)
        hl, hw = self.half_length, self.half_width
        return np.array([[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]])

    def inflated(self, margin: float) -> "EgoFootprint":
        return EgoFootprint(self.half_length + margin, self.half_width + margin)

    def rect_at(self, px: float, py: float, theta: float) -> OrientedRect:
        return OrientedRect(px, py, theta, 2.0 * self.half_length, 2.0 * self.half_width)


def rect_vertices(rect: OrientedRect) -> np.ndarray:
    """Corners in counter-clockwise order starting from front-left."""
    hl, hw = rect.l / 2.0, rect.w / 2.0
    body = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return body @ rotation(rect.theta).T + rect.center


_BODY_NORMALS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def rect_to_halfspaces(rect: OrientedRect) -> HalfspaceSet:
    A = _BODY_NORMALS @ rotation(rect.theta).T
    half = np.array([rect.l, rect.l, rect.w, rect.w]) / 2.0
    b = A @ rect.center + half
    return HalfspaceSet(A, b)


def to_rect_frame(points, rect: OrientedRect) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return (pts - rect.center) @ rotation(rect.theta)


def point_in_rect(points, rect: OrientedRect, tol: float = 0.0) -> np.ndarray:
    """Closed membership test done in the rectangle's own frame."""
    local = to_rect_frame(points, rect)
    return (np.abs(local[:, 0]) <= rect.l / 2.0 + tol) & (np.abs(local[:, 1]) <= rect.w / 2.0 + tol)


def edge_distances(points, rect: OrientedRect) -> np.ndarray:
    """Signed distances to the front, rear, left and right edges (positive inside)."""
    local = to_rect_frame(points, rect)
    hl, hw = rect.l / 2.0, rect.w / 2.0
    return np.stack(
        [hl - local[:, 0], hl + local[:, 0], hw - local[:, 1], hw + local[:, 1]], axis=1
    )


def interior_distance(p, rect: OrientedRect) -> float:
    """Distance to the closest edge for interior points, zero otherwise."""
    d = edge_distances(p, rect)[0]
    m = float(d.min())
    return m if m > 0.0 else 0.0


def footprint_constraint_rows(
    halfspaces: HalfspaceSet, footprint: EgoFootprint, theta_nominal: float
) -> tuple[np.ndarray, np.ndarray]:
    """Linear rows ``G @ (px, py, theta) <= h`` keeping every ego vertex inside.

    The vertex rotation is expanded to first order around ``theta_nominal``, so
    the rows are exact when ``theta == theta_nominal``. Rows are ordered
    halfspace-major: row ``4 * j + k`` is halfspace ``j`` applied to vertex ``k``.
    """
    verts = footprint.vertices_body()
    r_nom = verts @ rotation(theta_nominal).T  # R v_k
    r_der = verts @ rotation_derivative(theta_nominal).T  # dR/dtheta v_k
    A, b = halfspaces.A, halfspaces.b
    coef_theta = A @ r_der.T  # (4 halfspaces, 4 vertices)
    offset = A @ r_nom.T
    G = np.empty((A.shape[0] * len(verts), 3))
    G[:, 0] = np.repeat(A[:, 0], len(verts))
    G[:, 1] = np.repeat(A[:, 1], len(verts))
    G[:, 2] = coef_theta.ravel()
    h = (b[:, None] - offset + coef_theta * theta_nominal).ravel()
    return G, h


def rects_overlap(a: OrientedRect, b: OrientedRect) -> bool:
    """Separating-axis test for two closed rectangles (touching counts)."""
    va, vb = rect_vertices(a), rect_vertices(b)
    for theta in (a.theta, b.theta):
        for axis in rotation(theta).T:
            pa, pb = va @ axis, vb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def footprint_rows_jacobian(
    rect: OrientedRect, footprint: EgoFootprint, theta_nominal: float
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of :func:`footprint_constraint_rows` w.r.t. ``(cx, cy, theta, l, w)``.

    Returns ``dG`` of shape (5, 16, 3) and ``dh`` of shape (5, 16).
    """
    hs = rect_to_halfspaces(rect)
    A = hs.A
    verts = footprint.vertices_body()
    r_nom = verts @ rotation(theta_nominal).T
    r_der = verts @ rotation_derivative(theta_nominal).T
    nv = len(verts)
    JA = A @ np.array([[0.0, 1.0], [-1.0, 0.0]])  # rows: J @ a_j
    dG = np.zeros((5, 4 * nv, 3))
    dh = np.zeros((5, 4 * nv))
    dh[0] = np.repeat(A[:, 0], nv)
    dh[1] = np.repeat(A[:, 1], nv)
    dG[2, :, 0] = np.repeat(JA[:, 0], nv)
    dG[2, :, 1] = np.repeat(JA[:, 1], nv)
    d_coef = JA @ r_der.T
    dG[2, :, 2] = d_coef.ravel()
    dh[2] = ((JA @ rect.center)[:, None] - JA @ r_nom.T + d_coef * theta_nominal).ravel()
    dh[3] = np.repeat([0.5, 0.5, 0.0, 0.0], nv)
    dh[4] = np.repeat([0.0, 0.0, 0.5, 0.5], nv)
    return dG, dh
