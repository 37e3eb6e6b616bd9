"""Triangulated surfaces embedded in R^3 and their adaptive refinement.

A mesh is a conforming triangulation of a polyhedral 2-manifold.  Every
triangle row is stored as ``(v0, v1, v2)`` where by convention the
refinement edge is ``(v1, v2)``: bisection inserts the midpoint of that
edge, and the two children carry the new vertex in front, which makes the
newest-vertex structure recoverable from the connectivity alone.  The
midpoint ancestry of every non-original vertex is kept in
``vertex_parents`` so that coarsening can undo bisections without a
separate history structure.

Meshes are treated as immutable: refinement and coarsening build new
``SurfaceMesh`` objects plus a sparse nodal transfer matrix mapping old
vertex values to new ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConfigError, DegenerateTriangleError


class BoundaryTag(enum.IntEnum):
    NONE = 0
    NEUMANN = 1
    DIRICHLET = 2


# ---------------------------------------------------------------------------
# analytic carrier surfaces


class Surface:
    """Carrier surface new vertices are projected onto.

    The base class performs no projection, which is the right behaviour
    for meshes that are not a discretisation of an analytic surface.
    """

    kind = "none"

    def project(self, points: np.ndarray) -> np.ndarray:
        return points

    def project_boundary(self, points: np.ndarray) -> np.ndarray:
        return points

    def spec(self) -> dict:
        return {"kind": self.kind}


class PlaneSurface(Surface):
    kind = "plane"


class SphereSurface(Surface):
    """Unit sphere centred at the origin."""

    kind = "sphere"

    def project(self, points):
        pts = np.asarray(points, dtype=float)
        norms = np.linalg.norm(pts, axis=-1, keepdims=True)
        return pts / norms


class CapSurface(SphereSurface):
    """Spherical cap: part of the unit sphere above the latitude ``z_rim``.

    Interior points are projected radially; points created on the rim are
    snapped back onto the rim circle so the boundary polygon stays on the
    cap boundary under refinement.
    """

    kind = "cap"

    def __init__(self, z_rim: float):
        self.z_rim = float(z_rim)

    def project_boundary(self, points):
        pts = np.asarray(points, dtype=float).copy()
        horiz = pts[..., :2]
        r = np.linalg.norm(horiz, axis=-1, keepdims=True)
        rim_radius = np.sqrt(1.0 - self.z_rim ** 2)
        horiz *= rim_radius / r
        pts[..., 2] = self.z_rim
        return pts

    def spec(self):
        return {"kind": self.kind, "z_rim": self.z_rim}


def surface_from_spec(spec: dict) -> Surface:
    kind = spec.get("kind", "none")
    if kind == "sphere":
        return SphereSurface()
    if kind == "cap":
        return CapSurface(spec["z_rim"])
    if kind == "plane":
        return PlaneSurface()
    if kind == "none":
        return Surface()
    raise ConfigError(f"unknown surface kind {kind!r}")


# ---------------------------------------------------------------------------
# the mesh object


@dataclass
class TriangleGeometry:
    """Geometry of a single triangle: area, unit normal, P1 shape gradients."""

    area: float
    normal: np.ndarray          # (3,)
    gradients: np.ndarray       # (3, 3), row i is the gradient of phi_i
    diameter: float


class SurfaceMesh:
    """Conforming triangulation of a surface embedded in R^3."""

    def __init__(self, vertices, triangles, *, surface=None, vertex_parents=None,
                 boundary_edges=None, boundary_tags=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ConfigError("vertices must be an (n, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ConfigError("triangles must be an (m, 3) array")
        self.surface = surface if surface is not None else Surface()
        if vertex_parents is None:
            vertex_parents = np.full((len(self.vertices), 2), -1, dtype=np.int64)
        self.vertex_parents = np.ascontiguousarray(vertex_parents, dtype=np.int64)
        if boundary_edges is None:
            boundary_edges, counts = _edge_counts(self.triangles)
            boundary_edges = boundary_edges[counts == 1]
            boundary_tags = np.full(len(boundary_edges), BoundaryTag.NEUMANN,
                                    dtype=np.uint8)
        self.boundary_edges = np.ascontiguousarray(boundary_edges, dtype=np.int64)
        self.boundary_tags = np.ascontiguousarray(boundary_tags, dtype=np.uint8)
        self._cache: dict = {}

    # -- basic quantities ---------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def _geometry(self):
        geom = self._cache.get("geom")
        if geom is None:
            geom = _triangle_geometry_arrays(self.vertices, self.triangles)
            self._cache["geom"] = geom
        return geom

    def triangle_areas(self) -> np.ndarray:
        return self._geometry()[0]

    def triangle_normals(self) -> np.ndarray:
        return self._geometry()[1]

    def shape_gradients(self) -> np.ndarray:
        """Per-triangle P1 shape gradients, shape (m, 3, 3)."""
        return self._geometry()[2]

    def triangle_diameters(self) -> np.ndarray:
        return self._geometry()[3]

    def barycenters(self) -> np.ndarray:
        bary = self._cache.get("bary")
        if bary is None:
            bary = self.vertices[self.triangles].mean(axis=1)
            self._cache["bary"] = bary
        return bary

    def surface_barycenters(self) -> np.ndarray:
        """Triangle barycenters projected back onto the carrier surface."""
        sb = self._cache.get("surf_bary")
        if sb is None:
            sb = self.surface.project(self.barycenters())
            self._cache["surf_bary"] = sb
        return sb

    def dirichlet_vertices(self) -> np.ndarray:
        mask = self.boundary_tags == BoundaryTag.DIRICHLET
        return np.unique(self.boundary_edges[mask])

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def with_boundary_tag(self, tag: BoundaryTag) -> "SurfaceMesh":
        """Copy of the mesh with every boundary edge tagged ``tag``."""
        tags = np.full(len(self.boundary_edges), int(tag), dtype=np.uint8)
        return SurfaceMesh(self.vertices, self.triangles, surface=self.surface,
                           vertex_parents=self.vertex_parents,
                           boundary_edges=self.boundary_edges, boundary_tags=tags)

    # -- integrity checks (used by the tests) -------------------------------

    def validate(self):
        """Raise if the mesh is non-conforming or inconsistently oriented."""
        tris = self.triangles
        if tris.min(initial=0) < 0 or tris.max(initial=-1) >= self.n_vertices:
            raise ConfigError("triangle index out of range")
        edges, counts = _edge_counts(tris)
        if counts.max(initial=0) > 2:
            raise ConfigError("edge shared by more than two triangles")
        derived = edges[counts == 1]
        stored = np.sort(self.boundary_edges, axis=1) if len(self.boundary_edges) \
            else np.empty((0, 2), dtype=np.int64)
        if not np.array_equal(_lex_sorted(derived), _lex_sorted(stored)):
            raise ConfigError("stored boundary edges disagree with connectivity")
        # interior edges must appear once per direction
        directed = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        keys = directed[:, 0] * self.n_vertices + directed[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise ConfigError("orientation is not consistent")
        if np.any(self.triangle_areas() <= 0.0):
            raise ConfigError("degenerate triangle present")


def _lex_sorted(pairs: np.ndarray) -> np.ndarray:
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def _edge_counts(tris: np.ndarray):
    edges = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq, counts


def _triangle_geometry_arrays(verts, tris):
    p0 = verts[tris[:, 0]]
    p1 = verts[tris[:, 1]]
    p2 = verts[tris[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    two_area = np.linalg.norm(cross, axis=1)
    areas = 0.5 * two_area
    e0 = np.linalg.norm(p2 - p1, axis=1)
    e1 = np.linalg.norm(p0 - p2, axis=1)
    e2 = np.linalg.norm(p1 - p0, axis=1)
    diam = np.maximum(e0, np.maximum(e1, e2))
    bad = areas < 1e-14 * diam ** 2
    if np.any(bad):
        raise DegenerateTriangleError(
            f"{int(bad.sum())} triangle(s) with vanishing area")
    normals = cross / two_area[:, None]
    # gradient of the hat function at vertex i: n x (p_k - p_j) / (2A)
    grads = np.empty((len(tris), 3, 3))
    grads[:, 0] = np.cross(normals, p2 - p1)
    grads[:, 1] = np.cross(normals, p0 - p2)
    grads[:, 2] = np.cross(normals, p1 - p0)
    grads /= two_area[:, None, None]
    return areas, normals, grads, diam


def triangle_geometry(mesh: SurfaceMesh, index: int) -> TriangleGeometry:
    """Geometry of triangle ``index``: area, normal, shape gradients.

    The gradients are tangential: each row is orthogonal to the triangle
    normal and the three rows sum to zero.
    """
    if not 0 <= index < mesh.n_triangles:
        raise ConfigError(f"triangle index {index} out of range")
    areas = mesh.triangle_areas()
    return TriangleGeometry(
        area=float(areas[index]),
        normal=mesh.triangle_normals()[index].copy(),
        gradients=mesh.shape_gradients()[index].copy(),
        diameter=float(mesh.triangle_diameters()[index]),
    )


# ---------------------------------------------------------------------------
# constructions

_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def _icosahedron_vertices() -> np.ndarray:
    r = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, r, 0), (1, r, 0), (-1, -r, 0), (1, -r, 0),
        (0, -1, r), (0, 1, r), (0, -1, -r), (0, 1, -r),
        (r, 0, -1), (r, 0, 1), (-r, 0, -1), (-r, 0, 1),
    ], dtype=np.float64)
    return verts / np.linalg.norm(verts, axis=1, keepdims=True)


def build_icosphere(subdivisions: int) -> SurfaceMesh:
    """Icosahedral triangulation of the unit sphere.

    Each subdivision splits every triangle into four and projects the new
    vertices radially, giving ``20 * 4**subdivisions`` triangles.
    """
    if subdivisions < 0:
        raise ConfigError("subdivisions must be non-negative")
    if subdivisions > 9:
        raise CapacityError("icosphere subdivisions limited to 9")
    verts = _icosahedron_vertices()
    tris = _ICO_FACES.copy()
    for _ in range(subdivisions):
        edges = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        mid_idx = len(verts) + np.arange(len(uniq))
        verts = np.vstack([verts, mids])
        m01, m12, m20 = np.split(mid_idx[inv], 3)
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        tris = np.concatenate([
            np.column_stack([a, m01, m20]),
            np.column_stack([b, m12, m01]),
            np.column_stack([c, m20, m12]),
            np.column_stack([m01, m12, m20]),
        ])
    return SurfaceMesh(verts, tris, surface=SphereSurface())


CAP_RIM_Z = float(np.sin(-np.pi / 18.0))


def _cap_polar_angle(r):
    # latitude schedule of the cap parametrisation over the unit disk
    return (np.pi / 2.0 + np.pi / 18.0) * (1.0 - r) - np.pi / 18.0


def _stitch_rings(inner: np.ndarray, outer: np.ndarray,
                  inner_angles: np.ndarray, outer_angles: np.ndarray):
    """Triangulate the annulus between two closed vertex loops.

    Walks both loops by angle, always advancing the loop whose upcoming
    angle is smaller, which yields len(inner) + len(outer) triangles with
    consistent counter-clockwise orientation.
    """
    tris = []
    ni, no = len(inner), len(outer)
    i = j = 0
    while i < ni or j < no:
        next_i = inner_angles[(i + 1) % ni] + (2 * np.pi if i + 1 >= ni else 0.0)
        next_j = outer_angles[(j + 1) % no] + (2 * np.pi if j + 1 >= no else 0.0)
        if j < no and (i >= ni or next_j <= next_i):
            tris.append((inner[i % ni], outer[j % no], outer[(j + 1) % no]))
            j += 1
        else:
            tris.append((inner[i % ni], outer[j % no], inner[(i + 1) % ni]))
            i += 1
    return tris


def build_sphere_cap(resolution: int) -> SurfaceMesh:
    """Spherical cap reaching from the north pole slightly past the equator.

    The cap is parametrised over the unit disk with a linear latitude
    schedule: the disk centre maps to the pole and the disk boundary to
    the rim circle at height sin(-pi/18).  ``resolution`` is the number of
    concentric vertex rings.
    """
    if resolution < 4:
        raise ConfigError("cap resolution must be at least 4")
    points = [(0.0, 0.0)]
    rings = [[0]]
    for k in range(1, resolution + 1):
        count = 6 * k
        angles = 2.0 * np.pi * np.arange(count) / count
        start = len(points)
        rad = k / resolution
        points.extend(zip(rad * np.cos(angles), rad * np.sin(angles)))
        rings.append(list(range(start, start + count)))
    pts = np.asarray(points)

    tris = []
    center_angles = np.array([0.0])
    ring_angles = [center_angles] + [
        2.0 * np.pi * np.arange(6 * k) / (6 * k) for k in range(1, resolution + 1)]
    for k in range(1, resolution + 1):
        inner = np.asarray(rings[k - 1])
        outer = np.asarray(rings[k])
        if k == 1:
            for j in range(6):
                tris.append((0, outer[j], outer[(j + 1) % 6]))
        else:
            tris.extend(_stitch_rings(inner, outer,
                                      ring_angles[k - 1], ring_angles[k]))
    tris = np.asarray(tris, dtype=np.int64)

    r = np.linalg.norm(pts, axis=1)
    theta = _cap_polar_angle(r)
    direction = np.zeros_like(pts)
    nz = r > 0
    direction[nz] = pts[nz] / r[nz, None]
    verts = np.column_stack([
        np.cos(theta) * direction[:, 0],
        np.cos(theta) * direction[:, 1],
        np.sin(theta),
    ])
    verts[~nz] = (0.0, 0.0, 1.0)
    return SurfaceMesh(verts, tris, surface=CapSurface(CAP_RIM_Z))


def build_planar_rect(half_width: float, half_height: float,
                      resolution: int) -> SurfaceMesh:
    """Axis-aligned rectangle in the z = 0 plane.

    ``resolution`` counts grid cells per unit length.  Every grid cell is
    split along its diagonal, and the diagonal is the refinement edge of
    both children so bisection starts from the longest edge.
    """
    if half_width <= 0 or half_height <= 0:
        raise ConfigError("rectangle half sizes must be positive")
    if resolution < 1:
        raise ConfigError("resolution must be at least 1")
    nx = max(1, int(round(2.0 * half_width * resolution)))
    ny = max(1, int(round(2.0 * half_height * resolution)))
    xs = np.linspace(-half_width, half_width, nx + 1)
    ys = np.linspace(-half_height, half_height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])

    def vid(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            p00, p10 = vid(i, j), vid(i + 1, j)
            p11, p01 = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((p10, p11, p00))
            tris.append((p01, p00, p11))
    return SurfaceMesh(verts, np.asarray(tris, dtype=np.int64),
                       surface=PlaneSurface())


# ---------------------------------------------------------------------------
# adaptivity: newest-vertex bisection with conformity closure, plus
# coarsening that undoes complete bisection patches


def interface_band(mesh: SurfaceMesh, phi: np.ndarray,
                   band_tol: float) -> np.ndarray:
    """Triangles considered part of the diffuse interface.

    A triangle is in the band when one of its vertex values is not yet
    saturated or when the nodal values change sign across it; the latter
    catches interfaces thinner than the local mesh size.
    """
    vals = phi[mesh.triangles]
    unsat = (np.abs(vals) < 1.0 - band_tol).any(axis=1)
    sign_change = (vals.min(axis=1) * vals.max(axis=1)) < 0.0
    return unsat | sign_change


def _edge_table(tris: np.ndarray):
    # local edge order: refinement edge first
    edges = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
    flat = np.sort(edges.reshape(-1, 2), axis=1)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    return uniq, inv.reshape(len(tris), 3)


def _edge_lookup(uniq: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Indices of (sorted) ``pairs`` inside the lexicographically sorted
    unique edge array; -1 where absent."""
    if len(pairs) == 0:
        return np.empty(0, dtype=np.int64)
    scale = np.int64(max(uniq.max(initial=0), pairs.max(initial=0)) + 1)
    keys = uniq[:, 0] * scale + uniq[:, 1]
    probe = pairs[:, 0] * scale + pairs[:, 1]
    pos = np.searchsorted(keys, probe)
    pos = np.clip(pos, 0, len(keys) - 1)
    found = keys[pos] == probe
    return np.where(found, pos, -1)


def _refine(mesh: SurfaceMesh, marked: np.ndarray, bisect=None):
    """Split the marked triangles (all three edges) plus the closure.

    ``bisect`` optionally marks triangles for a single newest-vertex
    bisection (refinement edge only); one bisection is enough when the
    diameter is already close to its target, and it keeps the closure
    from cascading a full extra level through the mesh.

    Returns the refined mesh and the prolongation matrix; ``None`` when
    nothing is marked.
    """
    if not marked.any() and (bisect is None or not bisect.any()):
        return None
    tris = mesh.triangles
    uniq, tri2edge = _edge_table(tris)
    edge_marked = np.zeros(len(uniq), dtype=bool)
    edge_marked[tri2edge[marked].ravel()] = True
    if bisect is not None and bisect.any():
        edge_marked[tri2edge[bisect, 0]] = True
    while True:
        need = edge_marked[tri2edge].any(axis=1) & ~edge_marked[tri2edge[:, 0]]
        if not need.any():
            break
        edge_marked[tri2edge[need, 0]] = True

    split_ids = np.nonzero(edge_marked)[0]
    ends = uniq[split_ids]
    n_old = mesh.n_vertices
    new_ids = np.full(len(uniq), -1, dtype=np.int64)
    new_ids[split_ids] = n_old + np.arange(len(split_ids))

    mids = 0.5 * (mesh.vertices[ends[:, 0]] + mesh.vertices[ends[:, 1]])
    bnd_pos = _edge_lookup(uniq, np.sort(mesh.boundary_edges, axis=1)) \
        if len(mesh.boundary_edges) else np.empty(0, dtype=np.int64)
    on_boundary = np.zeros(len(uniq), dtype=bool)
    on_boundary[bnd_pos[bnd_pos >= 0]] = True
    interior = ~on_boundary[split_ids]
    mids[interior] = mesh.surface.project(mids[interior])
    mids[~interior] = mesh.surface.project_boundary(mids[~interior])

    verts = np.vstack([mesh.vertices, mids])
    parents = np.vstack([mesh.vertex_parents, ends])

    flags = edge_marked[tri2edge]                 # (m, 3): ref, e2, e3
    r, f2, f3 = flags[:, 0], flags[:, 1], flags[:, 2]
    n_children = np.where(r, 2 + f2.astype(int) + f3.astype(int), 1)
    offsets = np.concatenate([[0], np.cumsum(n_children)])
    out = np.empty((offsets[-1], 3), dtype=np.int64)

    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    m1 = new_ids[tri2edge[:, 0]]
    m2 = new_ids[tri2edge[:, 1]]
    m3 = new_ids[tri2edge[:, 2]]

    keep = ~r
    out[offsets[:-1][keep]] = tris[keep]

    def emit(mask, slot, rows):
        out[offsets[:-1][mask] + slot] = rows[:, mask].T

    only_r = r & ~f2 & ~f3
    emit(only_r, 0, np.stack([m1, c, a]))
    emit(only_r, 1, np.stack([m1, a, b]))

    r2 = r & f2 & ~f3
    emit(r2, 0, np.stack([m2, a, m1]))
    emit(r2, 1, np.stack([m2, m1, c]))
    emit(r2, 2, np.stack([m1, a, b]))

    r3 = r & ~f2 & f3
    emit(r3, 0, np.stack([m1, c, a]))
    emit(r3, 1, np.stack([m3, b, m1]))
    emit(r3, 2, np.stack([m3, m1, a]))

    r23 = r & f2 & f3
    emit(r23, 0, np.stack([m2, a, m1]))
    emit(r23, 1, np.stack([m2, m1, c]))
    emit(r23, 2, np.stack([m3, b, m1]))
    emit(r23, 3, np.stack([m3, m1, a]))

    # split tagged boundary edges in place
    if len(mesh.boundary_edges):
        sorted_bnd = np.sort(mesh.boundary_edges, axis=1)
        pos = _edge_lookup(uniq, sorted_bnd)
        mid = np.where(pos >= 0, new_ids[pos], -1)
        split = mid >= 0
        kept_e = mesh.boundary_edges[~split]
        kept_t = mesh.boundary_tags[~split]
        he = mesh.boundary_edges[split]
        hm = mid[split]
        halves = np.concatenate([
            np.column_stack([he[:, 0], hm]),
            np.column_stack([hm, he[:, 1]]),
        ]) if split.any() else np.empty((0, 2), dtype=np.int64)
        half_tags = np.concatenate([mesh.boundary_tags[split]] * 2) \
            if split.any() else np.empty(0, dtype=np.uint8)
        bnd_edges = np.vstack([kept_e, halves])
        bnd_tags = np.concatenate([kept_t, half_tags])
    else:
        bnd_edges = mesh.boundary_edges
        bnd_tags = mesh.boundary_tags

    n_new = len(verts)
    rows = np.concatenate([np.arange(n_old),
                           np.repeat(np.arange(n_old, n_new), 2)])
    cols = np.concatenate([np.arange(n_old), ends.ravel()])
    data = np.concatenate([np.ones(n_old), np.full(2 * len(ends), 0.5)])
    transfer = sp.csr_matrix((data, (rows, cols)), shape=(n_new, n_old))

    refined = SurfaceMesh(verts, out, surface=mesh.surface,
                          vertex_parents=parents,
                          boundary_edges=bnd_edges, boundary_tags=bnd_tags)
    return refined, transfer


def _coarsen_pass(mesh: SurfaceMesh, protected: np.ndarray, h_coarse: float):
    """Undo one layer of bisections away from the interface.

    A midpoint vertex is removable when every triangle around it has that
    vertex as its newest vertex, the triangles pair up into the original
    sibling pairs, no triangle of the patch is protected and all merged
    parents stay within the coarse size target.
    """
    tris = mesh.triangles
    n = mesh.n_vertices
    v0 = tris[:, 0]
    cnt0 = np.bincount(v0, minlength=n)
    cnt_all = np.bincount(tris.ravel(), minlength=n)
    cand = (mesh.vertex_parents[:, 0] >= 0) & (cnt0 == cnt_all)
    cand &= (cnt_all == 2) | (cnt_all == 4)
    if protected.any():
        prot_v = np.zeros(n, dtype=bool)
        prot_v[v0[protected]] = True
        cand &= ~prot_v
    cand_ids = np.nonzero(cand)[0]
    if len(cand_ids) == 0:
        return None

    order = np.argsort(v0, kind="stable")
    sorted_v0 = v0[order]
    starts = np.searchsorted(sorted_v0, cand_ids, side="left")

    drop = np.zeros(len(tris), dtype=bool)
    new_parents_rows = []
    removed_vertex = np.zeros(n, dtype=bool)
    verts = mesh.vertices

    for v, s in zip(cand_ids, starts):
        k = cnt0[v]
        star = order[s:s + k]
        X = tris[star, 1]
        Y = tris[star, 2]
        p, q = mesh.vertex_parents[v]
        first = np.nonzero((X == p) | (X == q))[0]
        if len(first) != k // 2:
            continue
        pairs = []
        ok = True
        for i in first:
            match = np.nonzero(X == Y[i])[0]
            if len(match) != 1:
                ok = False
                break
            j = match[0]
            if {int(X[i]), int(Y[j])} != {int(p), int(q)}:
                ok = False
                break
            parent = (int(Y[i]), int(Y[j]), int(X[i]))
            pv = verts[list(parent)]
            diam = max(np.linalg.norm(pv[0] - pv[1]),
                       np.linalg.norm(pv[1] - pv[2]),
                       np.linalg.norm(pv[2] - pv[0]))
            if diam > h_coarse:
                ok = False
                break
            pairs.append((i, j, parent))
        if not ok or len(pairs) != k // 2:
            continue
        for i, j, parent in pairs:
            drop[star[i]] = True
            drop[star[j]] = True
            new_parents_rows.append(parent)
        removed_vertex[v] = True

    if not new_parents_rows:
        return None

    new_tris = np.vstack([tris[~drop],
                          np.asarray(new_parents_rows, dtype=np.int64)])

    # merge boundary edge pairs that met at a removed vertex
    bnd_edges = mesh.boundary_edges
    bnd_tags = mesh.boundary_tags
    if len(bnd_edges):
        at_removed = removed_vertex[bnd_edges].any(axis=1)
        keep_e = bnd_edges[~at_removed]
        keep_t = bnd_tags[~at_removed]
        merged_e, merged_t = [], []
        if at_removed.any():
            rem_e = bnd_edges[at_removed]
            rem_t = bnd_tags[at_removed]
            mids = np.where(removed_vertex[rem_e[:, 0]], rem_e[:, 0], rem_e[:, 1])
            others = np.where(removed_vertex[rem_e[:, 0]], rem_e[:, 1], rem_e[:, 0])
            for v in np.unique(mids):
                idx = np.nonzero(mids == v)[0]
                assert len(idx) == 2 and rem_t[idx[0]] == rem_t[idx[1]]
                merged_e.append((others[idx[0]], others[idx[1]]))
                merged_t.append(rem_t[idx[0]])
        bnd_edges = np.vstack([keep_e, np.asarray(merged_e, dtype=np.int64)
                               .reshape(-1, 2)])
        bnd_tags = np.concatenate([keep_t,
                                   np.asarray(merged_t, dtype=np.uint8)])

    # drop unreferenced vertices and renumber
    used = np.zeros(n, dtype=bool)
    used[new_tris.ravel()] = True
    new_index = np.cumsum(used) - 1
    kept = np.nonzero(used)[0]

    new_verts = mesh.vertices[used]
    vp = mesh.vertex_parents[used].copy()
    has = vp[:, 0] >= 0
    vp[has] = new_index[vp[has]]
    new_tris = new_index[new_tris]
    if len(bnd_edges):
        bnd_edges = new_index[bnd_edges]

    transfer = sp.csr_matrix(
        (np.ones(len(kept)), (np.arange(len(kept)), kept)),
        shape=(len(kept), n))

    coarsened = SurfaceMesh(new_verts, new_tris, surface=mesh.surface,
                            vertex_parents=vp,
                            boundary_edges=bnd_edges, boundary_tags=bnd_tags)
    return coarsened, transfer


def adapt_mesh(mesh: SurfaceMesh, phi: np.ndarray, fine_n: int, coarse_n: int,
               band_tol: float = 1e-3, *, marker=None, reevaluate=None,
               max_vertices: int = 2_000_000):
    """Adapt the mesh to the interface carried by ``phi``.

    Interface-band triangles are bisected until their diameter is at most
    ``1/fine_n``; triangles away from the band are kept near ``1/coarse_n``,
    coarsening them where complete bisection patches allow it and refining
    where the background is still coarser than the target.

    ``marker`` may supply an extra per-triangle band predicate (used for
    the initial adaptation where the interface may be thinner than the
    current mesh resolves); it is called with the current mesh.
    ``reevaluate`` may supply exact nodal values for intermediate meshes
    (called with the current mesh); without it values are carried along by
    midpoint interpolation, which can only widen the band.

    Returns the adapted mesh together with the sparse nodal transfer
    matrix mapping old vertex values to new ones.
    """
    if fine_n < 1 or coarse_n < 1:
        raise ConfigError("fine_n and coarse_n must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (mesh.n_vertices,):
        raise ConfigError("phi must be a nodal vector on the mesh")
    h_fine = 1.0 / fine_n
    h_coarse = 1.0 / coarse_n

    transfer = sp.identity(mesh.n_vertices, format="csr")

    def band(m, values):
        mask = interface_band(m, values, band_tol)
        if marker is not None:
            mask = mask | marker(m)
        return mask

    def carry(step, values, m):
        if reevaluate is not None:
            return np.asarray(reevaluate(m), dtype=np.float64)
        return step @ values

    while True:
        result = _coarsen_pass(mesh, band(mesh, phi), h_coarse)
        if result is None:
            break
        mesh, step = result
        phi = carry(step, phi, mesh)
        transfer = step @ transfer

    rounds = 0
    while True:
        in_band = band(mesh, phi)
        diam = mesh.triangle_diameters()
        target = np.where(in_band, h_fine, h_coarse)
        too_big = diam > target
        # a full split overshoots when the diameter is within a factor
        # two of the target; bisect those instead
        marked = too_big & (diam > 1.9 * target)
        result = _refine(mesh, marked, bisect=too_big & ~marked)
        if result is None:
            break
        mesh, step = result
        phi = carry(step, phi, mesh)
        transfer = step @ transfer
        if mesh.n_vertices > max_vertices:
            raise CapacityError(
                f"adaptation exceeded {max_vertices} vertices")
        rounds += 1
        if rounds > 64:
            raise CapacityError("adaptation did not settle after 64 rounds")

    return mesh, transfer.tocsr()
