"""Legacy ASCII VTK export of triangulations with attached fields.

Vertex and element ordering follow the mesh arrays, so repeated exports of
the same state are byte-identical and diffable.
"""
from __future__ import annotations

import numpy as np

from .mesh import MeshPartition


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_vtk(path, mesh: MeshPartition, point_data: dict | None = None,
              cell_data: dict | None = None, title: str = "ptafem mesh") -> None:
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    nv, nt = mesh.n_vertices, mesh.n_triangles
    lines.append(f"POINTS {nv} double")
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in values)
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(_fmt(v) for v in values)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
