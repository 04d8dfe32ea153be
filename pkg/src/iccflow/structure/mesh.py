"""Structured quadrilateral mesh of one quadrant of a filleted cross."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgumentError, MeshGenerationError

# 2x2 Gauss rule on the reference square
GAUSS_PTS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(3.0)
GAUSS_WTS = np.ones(4)


@dataclass(frozen=True)
class CruciformGeometry:
    """Dimensions (mm) and base element counts of the quarter cross.

    The quadrant spans ``x, y >= 0``. Arm A runs along x, arm B along y, each
    with half-width ``half_width`` and distal edge at ``arm_length`` from the
    center. The re-entrant corner is rounded with ``fillet_radius``.
    ``n_core`` and ``n_width`` count elements across each central patch,
    ``n_arm`` along each arm; all three double per refinement level.
    """

    half_width: float = 10.0
    fillet_radius: float = 5.0
    arm_length: float = 120.0
    gauge_radius: float = 12.5
    thin_radius: float = 8.0
    taper_radius: float = 18.0
    gauge_thickness: float = 1.0
    arm_thickness: float = 2.0
    n_core: int = 16
    n_width: int = 13
    n_arm: int = 8

    def __post_init__(self):
        dims = (self.half_width, self.fillet_radius, self.arm_length, self.gauge_radius,
                self.thin_radius, self.taper_radius, self.gauge_thickness, self.arm_thickness)
        if any(not np.isfinite(d) or d <= 0 for d in dims):
            raise InvalidArgumentError(f"geometry dimensions must be positive: {self}")
        if self.fillet_radius >= self.half_width:
            raise InvalidArgumentError("fillet radius must be smaller than the arm half-width")
        if self.arm_length <= self.half_width + self.fillet_radius:
            raise InvalidArgumentError("arms must extend past the fillet")
        if self.taper_radius <= self.thin_radius:
            raise InvalidArgumentError("taper radius must exceed the thin radius")
        if min(self.n_core, self.n_width, self.n_arm) < 2:
            raise InvalidArgumentError("element counts must be at least 2")
        if self.n_core < 4:
            raise InvalidArgumentError("fillet needs at least 8 segments (n_core >= 4)")


@dataclass(frozen=True)
class CruciformMesh:
    nodes: np.ndarray          # (n_nodes, 2) mm
    elements: np.ndarray       # (n_elem, 4) counter-clockwise node ids
    thickness: np.ndarray      # (n_elem, 4) mm at the Gauss points
    edge_a: np.ndarray         # nodes on x = arm_length
    edge_b: np.ndarray         # nodes on y = arm_length
    sym_x: np.ndarray          # nodes on x = 0 (u_x = 0)
    sym_y: np.ndarray          # nodes on y = 0 (u_y = 0)
    gauge: np.ndarray          # nodes inside the gauge circle
    geometry: CruciformGeometry
    refinement: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def mirrored(self) -> "CruciformMesh":
        """Mesh reflected about the diagonal, with A/B and X/Y roles swapped."""
        return CruciformMesh(self.nodes[:, ::-1].copy(), self.elements[:, ::-1].copy(),
                             self.thickness, self.edge_b, self.edge_a, self.sym_y, self.sym_x,
                             self.gauge, self.geometry, self.refinement)


def _coons(bottom, top, left, right, ni, nj):
    """Transfinite interpolation; curves map [0, 1] to points of shape (..., 2)."""
    xi = np.linspace(0.0, 1.0, ni + 1)
    eta = np.linspace(0.0, 1.0, nj + 1)
    X, H = np.meshgrid(xi, eta, indexing="ij")
    Xe, He = X[..., None], H[..., None]
    b, t = bottom(X), top(X)
    lft, rgt = left(H), right(H)
    c00, c10, c01, c11 = bottom(0.0), bottom(1.0), top(0.0), top(1.0)
    return ((1 - He) * b + He * t + (1 - Xe) * lft + Xe * rgt
            - ((1 - Xe) * (1 - He) * c00 + Xe * (1 - He) * c10
               + (1 - Xe) * He * c01 + Xe * He * c11))


def _segment(p, q):
    p, q = np.asarray(p, float), np.asarray(q, float)
    return lambda s: p + np.asarray(s)[..., None] * (q - p)


def _grid_quads(ni, nj, offset):
    i, j = np.meshgrid(np.arange(ni), np.arange(nj), indexing="ij")
    idx = lambda a, b: offset + a * (nj + 1) + b
    q = np.stack([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)], axis=-1)
    return q.reshape(-1, 4)


def _lower_blocks(g: CruciformGeometry, ni, nj, na):
    """Central patch and arm-A block below the diagonal."""
    w, r, L = g.half_width, g.fillet_radius, g.arm_length
    c = w + r
    mid = c - r / np.sqrt(2.0)

    def arc(s):
        # from the diagonal point (angle 225 deg) to (c, w) (angle 270 deg)
        ang = np.deg2rad(225.0 + 45.0 * np.asarray(s))
        return np.stack([c + r * np.cos(ang), c + r * np.sin(ang)], axis=-1)

    core = _coons(_segment((0, 0), (c, 0)), arc,
                  _segment((0, 0), (mid, mid)), _segment((c, 0), (c, w)), ni, nj)
    arm = _coons(_segment((c, 0), (L, 0)), _segment((c, w), (L, w)),
                 _segment((c, 0), (c, w)), _segment((L, 0), (L, w)), na, nj)
    return [core, arm]


def build_cruciform_mesh(geometry: CruciformGeometry | None = None, refinement: int = 0) -> CruciformMesh:
    """Mesh one quadrant of the cross with four structured blocks.

    Each half of the quadrant (below and above the diagonal) is a curved
    central patch plus a rectangular arm block; the upper half is the mirror
    image of the lower one. Coincident nodes on shared block edges are merged.
    """
    g = geometry or CruciformGeometry()
    if refinement < 0:
        raise InvalidArgumentError("refinement level must be non-negative")
    f = 2 ** refinement
    ni, nj, na = g.n_core * f, g.n_width * f, g.n_arm * f

    blocks = _lower_blocks(g, ni, nj, na)
    blocks += [b[..., ::-1] for b in blocks]
    pts, quads, off = [], [], 0
    for blk in blocks:
        a, b = blk.shape[0] - 1, blk.shape[1] - 1
        pts.append(blk.reshape(-1, 2))
        quads.append(_grid_quads(a, b, off))
        off += (a + 1) * (b + 1)
    pts = np.concatenate(pts)
    quads = np.concatenate(quads)

    scale = g.arm_length
    keys = np.round(pts / scale * 1e9).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # renumber in order of first appearance for a stable, readable numbering
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    nodes = pts[first[order]]
    elems = rank[inverse.ravel()][quads]

    x, y = nodes[:, 0], nodes[:, 1]
    area2 = _signed_area2(nodes, elems)
    elems[area2 < 0] = elems[area2 < 0][:, ::-1]
    _check_quality(nodes, elems)

    thick = thickness_at(g, gauss_points(nodes, elems))

    tol = 1e-9 * scale
    gauge = np.flatnonzero(np.hypot(x, y) <= g.gauge_radius + tol)
    if gauge.size == 0:
        raise MeshGenerationError("gauge region contains no nodes")
    return CruciformMesh(
        nodes=nodes,
        elements=elems,
        thickness=thick,
        edge_a=np.flatnonzero(np.abs(x - g.arm_length) < tol),
        edge_b=np.flatnonzero(np.abs(y - g.arm_length) < tol),
        sym_x=np.flatnonzero(np.abs(x) < tol),
        sym_y=np.flatnonzero(np.abs(y) < tol),
        gauge=gauge,
        geometry=g,
        refinement=refinement,
    )


def thickness_at(g: CruciformGeometry, xy: np.ndarray) -> np.ndarray:
    """Thickness field: thin disc blended smoothly into the arm thickness.

    A C1 smoothstep over ``thin_radius <= r <= taper_radius`` avoids the
    strain localization a sharp thickness step would trigger.
    """
    r = np.hypot(xy[..., 0], xy[..., 1])
    s = np.clip((r - g.thin_radius) / (g.taper_radius - g.thin_radius), 0.0, 1.0)
    blend = s * s * (3.0 - 2.0 * s)
    return g.gauge_thickness + (g.arm_thickness - g.gauge_thickness) * blend


def gauss_points(nodes, elems) -> np.ndarray:
    """Physical Gauss point coordinates, shape (n_elem, 4, 2)."""
    xi, eta = GAUSS_PTS[:, 0], GAUSS_PTS[:, 1]
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    N = 0.25 * (1 + sx[None, :] * xi[:, None]) * (1 + sy[None, :] * eta[:, None])
    return np.einsum("gn,ena->ega", N, nodes[elems])


def _signed_area2(nodes, elems):
    p = nodes[elems]
    d1 = p[:, 2] - p[:, 0]
    d2 = p[:, 3] - p[:, 1]
    return d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]


def shape_gradients(nodes, elems):
    """Physical shape-function gradients and Jacobian determinants.

    Returns
    -------
    dN : (n_elem, 4 gauss, 4 nodes, 2)
    detJ : (n_elem, 4 gauss)
    """
    g = GAUSS_PTS
    xi, eta = g[:, 0], g[:, 1]
    sx = np.array([-1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0])
    dxi = 0.25 * sx[None, :] * (1 + sy[None, :] * eta[:, None])   # (gp, node)
    deta = 0.25 * sy[None, :] * (1 + sx[None, :] * xi[:, None])
    dref = np.stack([dxi, deta], axis=-1)                          # (gp, node, 2)
    X = nodes[elems]                                               # (e, node, 2)
    J = np.einsum("gna,enb->egab", dref, X)                        # (e, gp, 2, 2)
    detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    inv = np.empty_like(J)
    inv[..., 0, 0] = J[..., 1, 1] / detJ
    inv[..., 1, 1] = J[..., 0, 0] / detJ
    inv[..., 0, 1] = -J[..., 0, 1] / detJ
    inv[..., 1, 0] = -J[..., 1, 0] / detJ
    dN = np.einsum("egab,gnb->egna", inv, dref)
    return dN, detJ


def element_angles(nodes, elems) -> np.ndarray:
    """Interior angles in degrees, shape (n_elem, 4)."""
    p = nodes[elems]
    prev = np.roll(p, 1, axis=1) - p
    nxt = np.roll(p, -1, axis=1) - p
    cosang = np.sum(prev * nxt, axis=-1) / (np.linalg.norm(prev, axis=-1) * np.linalg.norm(nxt, axis=-1))
    return np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))


def _check_quality(nodes, elems):
    _, detJ = shape_gradients(nodes, elems)
    if np.any(detJ <= 0):
        bad = np.flatnonzero((detJ <= 0).any(axis=1))
        raise MeshGenerationError(f"non-positive Jacobian in elements {bad[:10].tolist()}")
    ang = element_angles(nodes, elems)
    if ang.min() <= 10.0 or ang.max() >= 170.0:
        raise MeshGenerationError(f"element angles out of range [{ang.min():.1f}, {ang.max():.1f}]")
