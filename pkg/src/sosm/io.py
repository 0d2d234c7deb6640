"""File output and config parsing: legacy VTK, CSV tables, flat key-value configs.

Config grammar: one ``key = value`` per line; ``#`` or ``;`` start a comment
line; keys are case-insensitive; blank lines are ignored. Values are parsed
by the caller's schema.
"""
from __future__ import annotations

import configparser
import csv
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError

_SECTION = "config"


def read_config(path_or_text, schema: Mapping[str, Callable], required=(), *, is_text=False):
    """Parse a flat ``key = value`` config against ``schema``.

    ``schema`` maps each allowed key to a converter. Unknown keys, missing
    ``required`` keys and unconvertible values raise :class:`ConfigError`
    naming the offending keys.
    """
    if is_text:
        text = path_or_text
    else:
        try:
            text = Path(path_or_text).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path_or_text}: {exc}") from exc
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    raw = dict(parser[_SECTION])
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    out = {}
    for key, value in raw.items():
        try:
            out[key] = schema[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
    return out


def float_list(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def int_list(text):
    return tuple(int(t) for t in text.replace(",", " ").split())


def write_csv(path, header, rows):
    """Write ``rows`` under ``header``; floats use ``repr`` for exact round trip."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _pad3(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return a
    if a.shape[1] == 2:
        return np.hstack([a, np.zeros((len(a), 1))])
    return a


def _tensor9(a):
    """Symmetric ``(N, 3)`` components ``(xx, xy, yy)`` as a 3x3 VTK tensor."""
    t = np.zeros((len(a), 9))
    t[:, 0], t[:, 1], t[:, 3], t[:, 4] = a[:, 0], a[:, 1], a[:, 1], a[:, 2]
    return t


def _data_block(fields, count):
    lines = []
    for name, arr in fields.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != count:
            raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {count}")
        if arr.ndim == 1:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines.extend(f"{v:.17g}" for v in arr)
        elif arr.shape[1] in (2, 3) and not name.endswith(":tensor"):
            lines.append(f"VECTORS {name} double")
            lines.extend(" ".join(f"{v:.17g}" for v in row) for row in _pad3(arr))
        else:
            lines.append(f"TENSORS {name.removesuffix(':tensor')} double")
            lines.extend(" ".join(f"{v:.17g}" for v in row) for row in _tensor9(arr))
    return lines


def write_vtk(path, mesh, point_data=None, cell_data=None, corner_data=None, title="sosm"):
    """Legacy ASCII VTK unstructured grid of triangles.

    ``point_data`` holds vertex values ``(V,)``/``(V, 2)``, ``cell_data``
    cellwise values ``(C, ...)``. ``corner_data`` holds discontinuous
    per-cell-vertex values ``(C, 3, ...)``; when present every cell gets its
    own three points so jumps are preserved, and point data are copied onto
    the duplicated points. Symmetric tensors are passed with a ``:tensor``
    suffix on the name as ``(xx, xy, yy)`` components.
    """
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    corner_data = dict(corner_data or {})
    C = mesh.num_cells
    if corner_data:
        pts = mesh.vertices[mesh.cells].reshape(-1, 2)
        conn = np.arange(3 * C).reshape(C, 3)
        pdata = {k: np.asarray(v)[mesh.cells].reshape((3 * C,) + np.asarray(v).shape[1:])
                 for k, v in point_data.items()}
        for k, v in corner_data.items():
            v = np.asarray(v)
            pdata[k] = v.reshape((3 * C,) + v.shape[2:])
    else:
        pts, conn, pdata = mesh.vertices, mesh.cells, point_data
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(pts)} double"]
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in pts)
    lines.append(f"CELLS {C} {4 * C}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in conn)
    lines.append(f"CELL_TYPES {C}")
    lines.extend(["5"] * C)
    if cell_data:
        lines.append(f"CELL_DATA {C}")
        lines.extend(_data_block(cell_data, C))
    if pdata:
        lines.append(f"POINT_DATA {len(pts)}")
        lines.extend(_data_block(pdata, len(pts)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_header(path):
    """Counts and field names of a legacy VTK file written by :func:`write_vtk`."""
    info = {"points": None, "cells": None, "fields": []}
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "POINTS":
                info["points"] = int(tok[1])
            elif tok[0] == "CELLS":
                info["cells"] = int(tok[1])
            elif tok[0] in ("SCALARS", "VECTORS", "TENSORS"):
                info["fields"].append((tok[0], tok[1]))
    return info
