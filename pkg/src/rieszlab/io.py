"""Structured text formats for domains, star boundaries and corpora.

Domain files are JSON objects::

    {"format": "rieszlab-domain", "version": 1, "dimension": 2,
     "cells_per_axis": 128, "spacing": 0.02, "origin": [-1.28, -1.28],
     "rows": ["3:5 10:2", "", ...],
     "levelset": "<base64 of zlib-compressed little-endian float64>"}

``rows`` lists the mask one grid line at a time (all indices but the last
in C order); each line is a space-separated list of ``start:length`` runs.
``levelset`` is optional; without it the domain is mask-only.

Star files hold ``{"format": "rieszlab-star", "version": 1, "R", "center",
"a", "b"}`` with a[k-1], b[k-1] the coefficients of mode k.
"""

from __future__ import annotations

import base64
import importlib.resources
import json
import os
import tempfile
import zlib

import numpy as np

from .errors import FormatError
from .geometry import GridDomain, GridSpec, StarBoundary

DOMAIN_FORMAT = "rieszlab-domain"
STAR_FORMAT = "rieszlab-star"
CORPUS_FORMAT = "rieszlab-corpus"
VERSION = 1


def _rle(line):
    d = np.diff(np.concatenate([[0], line.astype(np.int8), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return " ".join(f"{s}:{e - s}" for s, e in zip(starts, ends))


def _unrle(text, n, where):
    line = np.zeros(n, bool)
    for tok in text.split():
        try:
            s, ln = (int(x) for x in tok.split(":"))
        except ValueError:
            raise FormatError("rows", f"bad run '{tok}' in line {where}")
        if s < 0 or ln <= 0 or s + ln > n:
            raise FormatError("rows", f"run '{tok}' out of range in line {where}")
        line[s:s + ln] = True
    return line


def domain_to_dict(dom, with_levelset=True):
    spec = dom.spec
    lines = dom.mask.reshape(-1, spec.n)
    out = {"format": DOMAIN_FORMAT, "version": VERSION,
           "dimension": spec.dim, "cells_per_axis": spec.n,
           "spacing": float(spec.h),
           "origin": [float(x) for x in spec.origin],
           "rows": [_rle(r) for r in lines]}
    if with_levelset and dom.phi is not None:
        raw = np.ascontiguousarray(dom.phi, dtype="<f8").tobytes()
        out["levelset"] = base64.b64encode(zlib.compress(raw, 6)).decode("ascii")
    return out


def _require(d, key, kind):
    if key not in d:
        raise FormatError(key, "missing field")
    v = d[key]
    if kind is int and not (isinstance(v, int) and not isinstance(v, bool)):
        raise FormatError(key, "expected an integer")
    if kind is float and not (isinstance(v, (int, float)) and not isinstance(v, bool)):
        raise FormatError(key, "expected a number")
    if kind is list and not isinstance(v, list):
        raise FormatError(key, "expected a list")
    if kind is str and not isinstance(v, str):
        raise FormatError(key, "expected a string")
    return v


def domain_from_dict(d):
    if not isinstance(d, dict):
        raise FormatError("format", "document is not an object")
    if d.get("format") != DOMAIN_FORMAT:
        raise FormatError("format", f"expected '{DOMAIN_FORMAT}'")
    if _require(d, "version", int) != VERSION:
        raise FormatError("version", f"unsupported version {d['version']}")
    N = _require(d, "dimension", int)
    if N not in (2, 3):
        raise FormatError("dimension", "must be 2 or 3")
    n = _require(d, "cells_per_axis", int)
    if n < 8:
        raise FormatError("cells_per_axis", "must be at least 8")
    h = float(_require(d, "spacing", float))
    if not h > 0:
        raise FormatError("spacing", "must be positive")
    origin = _require(d, "origin", list)
    if len(origin) != N or not all(isinstance(x, (int, float)) for x in origin):
        raise FormatError("origin", f"expected {N} numbers")
    rows = _require(d, "rows", list)
    if len(rows) != n ** (N - 1):
        raise FormatError("rows", f"expected {n ** (N - 1)} lines, got {len(rows)}")
    mask = np.empty((n ** (N - 1), n), bool)
    for i, r in enumerate(rows):
        if not isinstance(r, str):
            raise FormatError("rows", f"line {i} is not a string")
        mask[i] = _unrle(r, n, i)
    mask = mask.reshape((n,) * N)
    spec = GridSpec(N, n, h, tuple(float(x) for x in origin))
    phi = None
    if "levelset" in d:
        try:
            raw = zlib.decompress(base64.b64decode(d["levelset"]))
            phi = np.frombuffer(raw, dtype="<f8").astype(float).reshape((n,) * N)
        except Exception:
            raise FormatError("levelset", "cannot decode level set")
        if not np.array_equal(phi < 0, mask):
            raise FormatError("levelset", "level set disagrees with the mask")
    return GridDomain(spec, mask, phi)


def star_to_dict(b):
    return {"format": STAR_FORMAT, "version": VERSION, "R": float(b.R),
            "center": list(b.center), "a": list(b.a), "b": list(b.b)}


def star_from_dict(d):
    if not isinstance(d, dict) or d.get("format") != STAR_FORMAT:
        raise FormatError("format", f"expected '{STAR_FORMAT}'")
    if _require(d, "version", int) != VERSION:
        raise FormatError("version", "unsupported version")
    R = float(_require(d, "R", float))
    center = _require(d, "center", list)
    a = _require(d, "a", list)
    b = _require(d, "b", list)
    for key, v in (("center", center), ("a", a), ("b", b)):
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise FormatError(key, "expected numbers")
    try:
        return StarBoundary(R, tuple(center), tuple(a), tuple(b))
    except Exception as exc:
        raise FormatError("R", str(exc))


def fixture_path(name):
    """Path of a domain file shipped with the package (``ball_unit.dom``,
    ``dumbbell_tail.dom``, ``corpus``)."""
    return str(importlib.resources.files("rieszlab") / "data" / name)


def dumps(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def write_atomic(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.chmod(tmp, 0o644)
    os.replace(tmp, path)


def read_json(path, field="format"):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(field, f"not valid JSON: {exc.msg}")


def save_domain(dom, path, with_levelset=True):
    write_atomic(path, dumps(domain_to_dict(dom, with_levelset)))


def load_domain(path):
    return domain_from_dict(read_json(path))


def save_star(b, path):
    write_atomic(path, dumps(star_to_dict(b)))


def load_star(path):
    return star_from_dict(read_json(path))


def load_shape(path, grid=None):
    """Domain file, or a star file rasterized on ``grid`` (a GridSpec)."""
    from .geometry import rasterize_star
    d = read_json(path)
    fmt = d.get("format") if isinstance(d, dict) else None
    if fmt == STAR_FORMAT:
        b = star_from_dict(d)
        if grid is None:
            grid = GridSpec.centered(2, 256, 2.4 * b.max_radius() + 0.2,
                                     b.center)
        return rasterize_star(b, grid), b
    return domain_from_dict(d), None
