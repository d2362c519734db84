"""Cross sections, their P1 triangulations, and the twisted-tube embedding.

A cross section is described by a :class:`CrossSectionSpec` in local shape
coordinates (rectangles and ellipses centred at the local origin, polygons as
given), then rotated by ``rotation_offset`` about the local origin and shifted
by ``center_offset``.  The rotation axis of the tube is the global origin.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import LinearRing

SNAP_TOL = 1e-12

KINDS = ("rectangle", "ellipse", "polygon")


class GeometryError(ValueError):
    """Invalid cross-section description or unusable mesh request."""


@dataclass(frozen=True)
class CrossSectionSpec:
    kind: str
    width: float = 0.0
    height: float = 0.0
    semi_axis_a: float = 0.0
    semi_axis_b: float = 0.0
    vertices: tuple = ()
    center_offset: tuple = (0.0, 0.0)
    rotation_offset: float = 0.0

    @classmethod
    def rectangle(cls, width, height, center_offset=(0.0, 0.0), rotation_offset=0.0):
        return cls("rectangle", width=float(width), height=float(height),
                   center_offset=tuple(map(float, center_offset)),
                   rotation_offset=float(rotation_offset))

    @classmethod
    def ellipse(cls, a, b, center_offset=(0.0, 0.0), rotation_offset=0.0):
        return cls("ellipse", semi_axis_a=float(a), semi_axis_b=float(b),
                   center_offset=tuple(map(float, center_offset)),
                   rotation_offset=float(rotation_offset))

    @classmethod
    def polygon(cls, vertices, center_offset=(0.0, 0.0), rotation_offset=0.0):
        verts = tuple((float(x), float(y)) for x, y in vertices)
        return cls("polygon", vertices=verts,
                   center_offset=tuple(map(float, center_offset)),
                   rotation_offset=float(rotation_offset))

    def to_dict(self):
        d = {"kind": self.kind, "center_offset": list(self.center_offset),
             "rotation_offset": self.rotation_offset}
        if self.kind == "rectangle":
            d.update(width=self.width, height=self.height)
        elif self.kind == "ellipse":
            d.update(semi_axis_a=self.semi_axis_a, semi_axis_b=self.semi_axis_b)
        else:
            d["vertices"] = [list(v) for v in self.vertices]
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        extra = {"center_offset": tuple(d.get("center_offset", (0.0, 0.0))),
                 "rotation_offset": d.get("rotation_offset", 0.0)}
        if kind == "rectangle":
            return cls.rectangle(d["width"], d["height"], **extra)
        if kind == "ellipse":
            return cls.ellipse(d["semi_axis_a"], d["semi_axis_b"], **extra)
        if kind == "polygon":
            return cls.polygon(d["vertices"], **extra)
        raise GeometryError(f"unknown cross-section kind {kind!r}")

    def scale(self):
        """Characteristic length used to make tolerances relative."""
        if self.kind == "rectangle":
            return max(self.width, self.height)
        if self.kind == "ellipse":
            return max(self.semi_axis_a, self.semi_axis_b)
        v = np.asarray(self.vertices)
        return float(np.ptp(v, axis=0).max())

    def to_global(self, pts):
        """Map local shape coordinates (n, 2) to cross-section coordinates t."""
        c, s = math.cos(self.rotation_offset), math.sin(self.rotation_offset)
        rot = np.array([[c, -s], [s, c]])
        return np.asarray(pts, dtype=float) @ rot.T + np.asarray(self.center_offset)

    def to_local(self, pts):
        c, s = math.cos(self.rotation_offset), math.sin(self.rotation_offset)
        rot = np.array([[c, -s], [s, c]])
        return (np.asarray(pts, dtype=float) - np.asarray(self.center_offset)) @ rot

    def area(self):
        if self.kind == "rectangle":
            return self.width * self.height
        if self.kind == "ellipse":
            return math.pi * self.semi_axis_a * self.semi_axis_b
        return abs(_shoelace(np.asarray(self.vertices)))


def _shoelace(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def validate_spec(spec: CrossSectionSpec) -> CrossSectionSpec:
    """Check the spec invariants; polygons are returned counterclockwise."""
    if spec.kind not in KINDS:
        raise GeometryError(f"unknown cross-section kind {spec.kind!r}")
    if len(spec.center_offset) != 2 or not all(map(math.isfinite, spec.center_offset)):
        raise GeometryError("center_offset must be a finite 2-vector")
    if not math.isfinite(spec.rotation_offset):
        raise GeometryError("rotation_offset must be finite")
    if spec.kind == "rectangle":
        if not (spec.width > 0 and spec.height > 0):
            raise GeometryError("degenerate dimensions: rectangle sides must be positive")
        return spec
    if spec.kind == "ellipse":
        if not (spec.semi_axis_a > 0 and spec.semi_axis_b > 0):
            raise GeometryError("degenerate dimensions: ellipse semi-axes must be positive")
        return spec
    v = np.asarray(spec.vertices, dtype=float)
    if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
        raise GeometryError("polygon needs at least 3 vertices")
    if not np.all(np.isfinite(v)):
        raise GeometryError("polygon vertices must be finite")
    scale = float(np.ptp(v, axis=0).max())
    if scale == 0 or np.linalg.matrix_rank(v - v[0], tol=SNAP_TOL * scale) < 2:
        raise GeometryError("polygon has zero area (collinear vertices)")
    if not LinearRing(v).is_simple:
        raise GeometryError("polygon has a self-intersection")
    area = _shoelace(v)
    if abs(area) <= SNAP_TOL * scale ** 2:
        raise GeometryError("polygon has zero area")
    if area < 0:
        spec = replace(spec, vertices=tuple(map(tuple, v[::-1].tolist())))
    return spec


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_mask: np.ndarray
    interior_map: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, nodes, triangles, boundary_mask):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        boundary_mask = np.asarray(boundary_mask, dtype=bool)
        area = signed_areas(nodes, triangles)
        flip = area < 0
        if flip.any():
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
        interior_map = np.full(len(nodes), -1, dtype=np.int64)
        interior = ~boundary_mask
        interior_map[interior] = np.arange(interior.sum())
        for arr in (nodes, triangles, boundary_mask, interior_map):
            arr.setflags(write=False)
        return cls(nodes, triangles, boundary_mask, interior_map)

    @property
    def n_interior(self):
        return int((~self.boundary_mask).sum())

    @property
    def interior_nodes(self):
        return self.nodes[~self.boundary_mask]

    @property
    def h_max(self):
        e = _edges(self.triangles)
        return float(np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1).max())

    def area(self):
        return float(signed_areas(self.nodes, self.triangles).sum())

    def fingerprint(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]

    def to_json(self):
        return json.dumps({
            "nodes": self.nodes.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary": self.boundary_mask.astype(int).tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls.build(np.array(d["nodes"], dtype=float),
                         np.array(d["triangles"], dtype=np.int64),
                         np.array(d["boundary"], dtype=bool))


def signed_areas(nodes, triangles):
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    return np.unique(np.sort(e, axis=1), axis=0)


def _boundary_nodes(n_nodes, triangles):
    e = np.sort(np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]],
                                triangles[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    mask = np.zeros(n_nodes, dtype=bool)
    mask[uniq[counts == 1].ravel()] = True
    return mask


def _snap_to_ellipse(spec, pts):
    loc = spec.to_local(pts)
    rho = np.sqrt((loc[:, 0] / spec.semi_axis_a) ** 2 + (loc[:, 1] / spec.semi_axis_b) ** 2)
    return spec.to_global(loc / rho[:, None])


def _rectangle_mesh(spec, target_h):
    # diagonal of a grid cell is the longest edge
    nx = max(1, math.ceil(spec.width * math.sqrt(2) / target_h))
    ny = max(1, math.ceil(spec.height * math.sqrt(2) / target_h))
    while math.hypot(spec.width / nx, spec.height / ny) > target_h:
        if spec.width / nx >= spec.height / ny:
            nx += 1
        else:
            ny += 1
    x = np.linspace(-spec.width / 2, spec.width / 2, nx + 1)
    y = np.linspace(-spec.height / 2, spec.height / 2, ny + 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return spec.to_global(nodes), tris


def _polar_disk(n_rings, n_theta):
    """Unit-disk polar grid: ``n_theta`` nodes on each of ``n_rings`` rings plus the centre."""
    ang = 2 * np.pi * np.arange(n_theta) / n_theta
    r = np.arange(1, n_rings + 1) / n_rings
    ring = np.column_stack([np.outer(r, np.cos(ang)).ravel(), np.outer(r, np.sin(ang)).ravel()])
    nodes = np.vstack([np.zeros((1, 2)), ring])
    j = np.arange(n_theta)
    jn = (j + 1) % n_theta
    tris = [np.column_stack([np.zeros(n_theta, dtype=np.int64), 1 + j, 1 + jn])]
    for k in range(n_rings - 1):
        a, b = 1 + k * n_theta + j, 1 + k * n_theta + jn
        c, d = a + n_theta, b + n_theta
        tris.append(np.column_stack([a, c, d]))
        tris.append(np.column_stack([a, d, b]))
    return nodes, np.concatenate(tris)


def _ellipse_mesh(spec, target_h, n_theta=None):
    a, b = spec.semi_axis_a, spec.semi_axis_b
    big = max(a, b)
    n_rings = max(1, math.ceil(big / target_h))
    if n_theta is None:
        n_theta = 8 * math.ceil(2 * math.pi * big / target_h / 8)
    n_theta = max(int(n_theta), 8)
    while True:
        unit, tris = _polar_disk(n_rings, n_theta)
        nodes = spec.to_global(unit * np.array([a, b]))
        e = _edges(tris)
        h = np.linalg.norm(nodes[e[:, 0]] - nodes[e[:, 1]], axis=1).max()
        if h <= target_h:
            return nodes, tris
        # grow whichever direction produces the longest edges
        radial = big / n_rings
        if radial >= 0.9 * h:
            n_rings += 1
        else:
            n_theta += 8


def _ear_clip(v):
    """Triangulate a simple counterclockwise polygon by ear clipping."""
    idx = list(range(len(v)))
    tris = []

    def cross(o, p, q):
        return (p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0])

    guard = 0
    while len(idx) > 3:
        n = len(idx)
        clipped = False
        for k in range(n):
            i0, i1, i2 = idx[(k - 1) % n], idx[k], idx[(k + 1) % n]
            p0, p1, p2 = v[i0], v[i1], v[i2]
            if cross(p0, p1, p2) <= 0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                q = v[j]
                if cross(p0, p1, q) >= 0 and cross(p1, p2, q) >= 0 and cross(p2, p0, q) >= 0:
                    inside = True
                    break
            if inside:
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            clipped = True
            break
        guard += 1
        if not clipped or guard > 10 * len(v):
            raise GeometryError("ear clipping failed; polygon may be degenerate")
    tris.append(tuple(idx))
    return np.array(tris, dtype=np.int64)


def _polygon_mesh(spec, target_h):
    v = np.asarray(spec.vertices, dtype=float)
    tris = _ear_clip(v)
    nodes = spec.to_global(v)
    mesh = Mesh.build(nodes, tris, np.ones(len(nodes), dtype=bool))
    while mesh.h_max > target_h:
        mesh = refine(mesh, spec)
    return mesh.nodes, mesh.triangles


def triangulate(spec: CrossSectionSpec, target_h: float, n_theta=None) -> Mesh:
    """Conforming P1 triangulation of the cross section with h_max <= target_h.

    Rectangles get a structured grid, ellipses a polar grid with ``n_theta``
    nodes per ring (default: enough for ``target_h`` on the outer ring),
    polygons ear clipping plus uniform refinement.  The angular error of P1
    interpolants of radial functions scales with ``1 / n_theta``, so
    rotation-sensitive runs on near-circular sections may want a larger
    ``n_theta`` than ``target_h`` alone implies.
    """
    spec = validate_spec(spec)
    if not target_h > 0:
        raise GeometryError("target_h must be positive")
    if spec.kind == "rectangle":
        nodes, tris = _rectangle_mesh(spec, target_h)
    elif spec.kind == "ellipse":
        nodes, tris = _ellipse_mesh(spec, target_h, n_theta)
    else:
        nodes, tris = _polygon_mesh(spec, target_h)
    mesh = Mesh.build(nodes, tris, _boundary_nodes(len(nodes), tris))
    if mesh.n_interior < 1:
        raise GeometryError(f"mesh too coarse: target_h={target_h} leaves no interior node")
    return mesh


def refine(mesh: Mesh, spec: CrossSectionSpec) -> Mesh:
    """Split every triangle into four through its edge midpoints."""
    tris = mesh.triangles
    e_all = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e_sorted = np.sort(e_all, axis=1)
    uniq, inv, counts = np.unique(e_sorted, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    n0 = len(mesh.nodes)
    mid = 0.5 * (mesh.nodes[uniq[:, 0]] + mesh.nodes[uniq[:, 1]])
    on_boundary = counts == 1
    if spec.kind == "ellipse" and on_boundary.any():
        mid[on_boundary] = _snap_to_ellipse(spec, mid[on_boundary])
    nodes = np.vstack([mesh.nodes, mid])
    nt = len(tris)
    m01, m12, m20 = (n0 + inv[:nt], n0 + inv[nt:2 * nt], n0 + inv[2 * nt:])
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    new = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    boundary = np.concatenate([mesh.boundary_mask, on_boundary])
    return Mesh.build(nodes, new, boundary)


def bounding_radius(mesh: Mesh) -> float:
    """Largest distance of a mesh node from the rotation axis."""
    return float(np.linalg.norm(mesh.nodes, axis=1).max())


def map_to_physical(s, t, profile):
    """Embed straightened coordinates (s, t) into the twisted tube in R^3."""
    from .twist_profile import sample_theta

    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    theta = sample_theta(profile, s)[0]
    c, sn = np.cos(theta), np.sin(theta)
    t2, t3 = t[..., 0], t[..., 1]
    return np.stack([s + 0 * t2, t2 * c + t3 * sn, t3 * c - t2 * sn], axis=-1)


def boundary_polyline(mesh: Mesh):
    """Boundary nodes ordered as closed loops (one loop for simply connected meshes)."""
    tris = mesh.triangles
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    # keep oriented boundary edges as they appear in their single triangle
    bnd = e[counts[inv] == 1]
    nxt = {int(i): int(j) for i, j in bnd}
    start = min(nxt)
    loop = [start]
    while nxt[loop[-1]] != start:
        loop.append(nxt[loop[-1]])
    return np.array(loop)


def export_obj(mesh: Mesh, profile, s_grid) -> str:
    """Wavefront OBJ of the tube surface swept along ``s_grid``."""
    loop = boundary_polyline(mesh)
    t = mesh.nodes[loop]
    s_grid = np.asarray(s_grid, dtype=float)
    lines = ["# twisted tube surface"]
    for s in s_grid:
        xyz = map_to_physical(np.full(len(t), s), t, profile)
        lines.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in xyz)
    n = len(loop)
    for i in range(len(s_grid) - 1):
        for j in range(n):
            a = i * n + j + 1
            b = i * n + (j + 1) % n + 1
            lines.append(f"f {a} {b} {b + n} {a + n}")
    return "\n".join(lines) + "\n"
