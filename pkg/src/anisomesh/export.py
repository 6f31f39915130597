"""Deterministic JSON, CSV and SVG emitters."""
from __future__ import annotations

import csv
import io
import json
import math
from xml.sax.saxutils import quoteattr

import numpy as np

from .geometry import Mesh

GROUP_FILL = {1: "#4a78c2", 2: "#4fa65a", 3: "#e8912d", 4: "#9a9a9a"}
GROUP_STROKE = {1: "#1d3a6b", 2: "#1f5227", 3: "#8a4a06", 4: "#3c3c3c"}
INTERIOR_STROKE = "#ffffff"


def fmt_float(x: float) -> str:
    """17 significant digits; non-finite values become JSON strings."""
    x = float(x)
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = format(x, ".17g")
    if "e" not in s and "." not in s:
        s += ".0"
    return s


def _emit(obj, out: list[str], indent: int | None, level: int):
    nl = "" if indent is None else "\n" + " " * (indent * (level + 1))
    end = "" if indent is None else "\n" + " " * (indent * level)
    colon = ":" if indent is None else ": "
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt_float(obj))
    elif isinstance(obj, str):
        out.append(_json_str(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for k, (key, val) in enumerate(obj.items()):
            if k:
                out.append(",")
            out.append(nl)
            out.append(_json_str(str(key)))
            out.append(colon)
            _emit(val, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            out.append("[]")
            return
        out.append("[")
        for k, val in enumerate(obj):
            if k:
                out.append(",")
            out.append(nl)
            _emit(val, out, indent, level + 1)
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def _json_str(s: str) -> str:
    return json.dumps(s)


def dumps(obj, indent: int | None = 2) -> str:
    """JSON text with every float printed to 17 significant digits."""
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def mesh_json(mesh: Mesh) -> str:
    return dumps(mesh.to_json_dict(), indent=None)


def rows_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(columns)
    for r in rows:
        wr.writerow([_csv_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return fmt_float(v).strip('"')
    return v


def mesh_svg(mesh: Mesh, size: int = 800, margin: int = 10) -> str:
    """One polygon per triangle, filled by group; triangles touching a cell
    border get a dark outline, interior ones a light one."""
    scale = size - 2 * margin
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
    ]
    xy = mesh.vertices
    px = margin + scale * xy[:, 0]
    py = margin + scale * (1.0 - xy[:, 1])
    for k, tri in enumerate(mesh.triangles):
        g = int(mesh.group[k])
        pts = " ".join(f"{px[v]:.4f},{py[v]:.4f}" for v in tri)
        stroke = INTERIOR_STROKE if mesh.interior[k] else GROUP_STROKE.get(g, "#000000")
        width = "0.3" if mesh.interior[k] else "0.6"
        parts.append(
            f'<polygon points={quoteattr(pts)} fill="{GROUP_FILL.get(g, "#ffffff")}" '
            f'stroke="{stroke}" stroke-width="{width}" data-group="{g}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
