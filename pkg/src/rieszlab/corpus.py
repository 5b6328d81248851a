"""Seeded corpus of random star domains and the inequality checks run on it."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .functionals import (ASYM_RATIO_THRESHOLD, ball_torsion_energy,
                          faber_krahn_deficit, kohler_jobin_check,
                          riesz_deficit, saint_venant_deficit, slack)
from .geometry import GridSpec, StarBoundary, fraenkel_asymmetry, rasterize_star
from .io import CORPUS_FORMAT, VERSION, dumps, read_json, star_from_dict, \
    star_to_dict, write_atomic

MODES = (2, 3, 4, 5, 6)
MAX_AMPLITUDE = 0.25
MIN_RADIUS_FACTOR = 0.3
PINNED_SEEDS = tuple(range(100, 120))
CHECKS = ("sv", "fk", "riesz", "kj")


def random_star(seed, max_active=3):
    """Unit-area star with 1..max_active random modes from 2..6.

    Each active mode gets an amplitude uniform in (0, 0.25] and a random
    phase; draws whose radius factor 1 + phi drops below 0.3 anywhere are
    rejected and redrawn from the same generator.
    """
    rng = np.random.default_rng(seed)
    K = max(MODES)
    th = np.linspace(0, 2 * np.pi, 16 * K * 8, endpoint=False)
    while True:
        a = np.zeros(K)
        b = np.zeros(K)
        active = rng.choice(MODES, size=rng.integers(1, max_active + 1),
                            replace=False)
        for k in active:
            amp = MAX_AMPLITUDE * (1.0 - rng.random())
            ph = rng.uniform(0, 2 * np.pi)
            a[k - 1] = amp * math.cos(ph)
            b[k - 1] = amp * math.sin(ph)
        phi = sum(a[k - 1] * np.cos(k * th) + b[k - 1] * np.sin(k * th)
                  for k in MODES)
        if 1 + phi.min() > MIN_RADIUS_FACTOR:
            return StarBoundary(1.0, (0.0, 0.0), a, b).scaled_to_area(1.0)


def corpus_grid(b, n=256, margin=0.15):
    return GridSpec.centered(2, n, 2 * b.max_radius() + 2 * margin, b.center)


def make_manifest(seeds=PINNED_SEEDS, n=256):
    return {"format": CORPUS_FORMAT, "version": VERSION,
            "grid": {"cells_per_axis": n, "margin": 0.15},
            "domains": [{"id": f"star-{s}", "seed": int(s),
                         "star": star_to_dict(random_star(s))} for s in seeds]}


def write_manifest(path, seeds=PINNED_SEEDS, n=256):
    write_atomic(path, dumps(make_manifest(seeds, n)))


def manifest_path(path):
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.json")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


@dataclass
class CorpusEntry:
    id: str
    seed: int
    star: StarBoundary
    record: dict


def load_manifest(path):
    d = read_json(manifest_path(path))
    if not isinstance(d, dict) or d.get("format") != CORPUS_FORMAT:
        raise FormatError("format", f"expected '{CORPUS_FORMAT}'")
    if d.get("version") != VERSION:
        raise FormatError("version", "unsupported version")
    grid = d.get("grid", {})
    n = grid.get("cells_per_axis", 256)
    if not isinstance(n, int) or n < 8:
        raise FormatError("grid", "cells_per_axis must be an integer >= 8")
    entries = []
    for i, e in enumerate(d.get("domains", [])):
        if "star" not in e:
            raise FormatError("domains", f"entry {i} has no star")
        rec = e.get("record", {})
        if not isinstance(rec, dict):
            raise FormatError("record", f"entry {i} record is not an object")
        entries.append(CorpusEntry(str(e.get("id", i)), int(e.get("seed", -1)),
                                   star_from_dict(e["star"]), rec))
    if not entries:
        raise FormatError("domains", "corpus is empty")
    return entries, n, float(grid.get("margin", 0.15))


@dataclass
class CheckRow:
    domain: str
    check: str
    deficit: float
    relative: float
    asymmetry: float
    ratio: float
    ok: bool

    def as_list(self):
        return [self.domain, self.check, self.deficit, self.relative,
                self.asymmetry, self.ratio, self.ok]


CHECK_COLUMNS = ["domain", "check", "deficit", "relative", "asymmetry",
                 "ratio", "ok"]


def _ratio(d, A):
    return d / A ** 2 if A > ASYM_RATIO_THRESHOLD else float("nan")


def _row(did, rep):
    return CheckRow(did, rep.name, rep.deficit, rep.relative, rep.asymmetry,
                    float("nan") if rep.ratio is None else rep.ratio, rep.ok)


def check_domain(did, dom, checks=CHECKS, alpha=1.5, record=None, tol=1e-9):
    """Deficit rows for one domain.  ``record`` may carry a precomputed
    torsion energy ``E`` that replaces the solver value (used to verify
    stored results)."""
    record = record or {}
    A = fraenkel_asymmetry(dom)[0]
    rows = []
    if "sv" in checks:
        if "E" in record:
            N = dom.dim
            m = dom.volume
            val = float(record["E"]) * m ** (-(N + 2) / N)
            ref = ball_torsion_energy(N)
            d = val - ref
            rows.append(CheckRow(did, "saint_venant", d, d / abs(ref), A,
                                 _ratio(d, A), d >= -slack(ref)))
        else:
            rows.append(_row(did, saint_venant_deficit(dom, A, tol)))
    if "fk" in checks:
        rows.append(_row(did, faber_krahn_deficit(dom, A, tol)))
    if "riesz" in checks:
        rows.append(_row(did, riesz_deficit(dom, alpha, A)))
    if "kj" in checks:
        lhs, rhs, ok = kohler_jobin_check(dom, tol)
        d = lhs - rhs
        rows.append(CheckRow(did, "kohler_jobin", d, d / rhs, A, _ratio(d, A), ok))
    return rows


def verify_corpus(path, checks=CHECKS, alpha=1.5, n=None, tol=1e-9):
    entries, n0, margin = load_manifest(path)
    n = n or n0
    rows = []
    for e in entries:
        dom = rasterize_star(e.star, corpus_grid(e.star, n, margin))
        rows.extend(check_domain(e.id, dom, checks, alpha, e.record, tol))
    return rows


def empirical_constants(rows):
    """Minimum deficit/A^2 per check over rows with a defined ratio."""
    out = {}
    for r in rows:
        if r.ratio == r.ratio:
            out[r.check] = min(out.get(r.check, math.inf), r.ratio)
    return out
