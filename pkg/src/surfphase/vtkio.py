"""Legacy ASCII VTK reading and writing.

Only the small subset needed here is supported: POLYDATA datasets with
POINTS, POLYGONS or LINES, and scalar POINT_DATA arrays.  Floats are
written via repr() so a write/read round trip is bit exact.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = ["write_surface_vtk", "write_polyline_vtk", "read_surface_vtk"]


def _format_points(out, points):
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ConfigError("points must be an (n, 3) array")
    out.append(f"POINTS {len(points)} double")
    for p in points.tolist():
        out.append(f"{p[0]!r} {p[1]!r} {p[2]!r}")


def write_surface_vtk(path, mesh, point_data=None, title="surfphase"):
    """Write a triangulated surface with optional nodal scalar fields."""
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA"]
    _format_points(out, mesh.vertices)
    tris = np.asarray(mesh.triangles)
    out.append(f"POLYGONS {len(tris)} {4 * len(tris)}")
    for t in tris:
        out.append(f"3 {t[0]} {t[1]} {t[2]}")
    if point_data:
        out.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_vertices,):
                raise ConfigError(
                    f"point data {name!r} has shape {values.shape}, "
                    f"expected ({mesh.n_vertices},)")
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(repr(v) for v in values.tolist())
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def write_polyline_vtk(path, points, closed=True, title="surfphase"):
    """Write a single polyline, closing the loop by default."""
    points = np.asarray(points, dtype=float)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA"]
    _format_points(out, points)
    idx = list(range(len(points)))
    if closed:
        idx.append(0)
    out.append(f"LINES 1 {len(idx) + 1}")
    out.append(" ".join(str(i) for i in [len(idx)] + idx))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def read_surface_vtk(path):
    """Read a POLYDATA file written by write_surface_vtk.

    Returns (points, triangles, point_data dict).
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    lines = [ln.strip() for ln in tokens if ln.strip()]
    if len(lines) < 4 or lines[2].upper() != "ASCII":
        raise ConfigError(f"{path}: not an ASCII VTK file")
    if lines[3].split() != ["DATASET", "POLYDATA"]:
        raise ConfigError(f"{path}: expected a POLYDATA dataset")

    pos = 4
    points = None
    triangles = None
    point_data = {}
    n_points = 0
    while pos < len(lines):
        fields = lines[pos].split()
        key = fields[0].upper()
        if key == "POINTS":
            n_points = int(fields[1])
            flat = " ".join(lines[pos + 1:]).split()
            vals = np.array(flat[:3 * n_points], dtype=float)
            points = vals.reshape(n_points, 3)
            # advance past however many lines held the coordinates
            consumed, have = 0, 0
            while have < 3 * n_points:
                consumed += 1
                have += len(lines[pos + consumed].split())
            pos += consumed + 1
        elif key == "POLYGONS":
            n_cells = int(fields[1])
            cells = []
            for row in lines[pos + 1:pos + 1 + n_cells]:
                entry = [int(v) for v in row.split()]
                if entry[0] != 3:
                    raise ConfigError(f"{path}: only triangles are supported")
                cells.append(entry[1:])
            triangles = np.array(cells, dtype=np.int64)
            pos += n_cells + 1
        elif key == "POINT_DATA":
            if int(fields[1]) != n_points:
                raise ConfigError(f"{path}: POINT_DATA size mismatch")
            pos += 1
        elif key == "SCALARS":
            name = fields[1]
            start = pos + 2  # skip LOOKUP_TABLE
            flat = []
            row = start
            while len(flat) < n_points:
                flat.extend(lines[row].split())
                row += 1
            point_data[name] = np.array(flat[:n_points], dtype=float)
            pos = row
        elif key == "LINES":
            pos += int(fields[1]) + 1
        else:
            pos += 1
    if points is None:
        raise ConfigError(f"{path}: no POINTS section found")
    return points, triangles, point_data
