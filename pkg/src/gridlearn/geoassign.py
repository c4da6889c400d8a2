"""Geographic disaggregation of regional load onto PQ buses.

Each PQ bus owns the Voronoi cell of its site, clipped to a bounding
polygon.  A region's load is split over buses in proportion to the share
of the region's area falling in each cell.  Everything is planar.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .seeding import rng as make_rng

_EPS = 1e-12


def _shoelace(v: np.ndarray) -> float:
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2) -> bool:
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 and d2 and d3 and d4:
        return True

    def on(a, b, c, d):
        return d == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on(q1, q2, p1, d1) or on(q1, q2, p2, d2) or on(p1, p2, q1, d3) or on(p1, p2, q2, d4)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertex ring (not repeated at the end)."""

    vertices: np.ndarray
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        object.__setattr__(self, "vertices", v)
        if not self.check:
            return
        if len(v) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        if abs(_shoelace(v)) <= _EPS * max(1.0, float(np.ptp(v, axis=0).max()) ** 2):
            raise ValueError("polygon has zero area")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ValueError("polygon is self-intersecting")

    @property
    def signed_area(self) -> float:
        return _shoelace(self.vertices)

    @property
    def area(self) -> float:
        return abs(self.signed_area)

    def ccw(self) -> np.ndarray:
        return self.vertices if self.signed_area > 0 else self.vertices[::-1]

    def is_convex(self) -> bool:
        v = self.ccw()
        n = len(v)
        return all(_orient(v[i], v[(i + 1) % n], v[(i + 2) % n]) >= -_EPS for i in range(n))

    def contains(self, pts) -> np.ndarray:
        """Even-odd point-in-polygon test, vectorized over points."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        v = self.vertices
        for (x1, y1), (x2, y2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y1 > y) != (y2 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (x < xint)
        return inside

    def bounds(self):
        return (*self.vertices.min(axis=0), *self.vertices.max(axis=0))


def clip_halfplane(verts: np.ndarray, normal, offset: float) -> np.ndarray:
    """Keep the part of a vertex ring with ``normal . p <= offset``."""
    if len(verts) == 0:
        return verts
    normal = np.asarray(normal, dtype=float)
    s = verts @ normal - offset
    out = []
    n = len(verts)
    for i in range(n):
        j = (i + 1) % n
        a, b, sa, sb = verts[i], verts[j], s[i], s[j]
        if sa <= 0:
            out.append(a)
        if (sa < 0 < sb) or (sb < 0 < sa):
            out.append(a + (sa / (sa - sb)) * (b - a))
    return np.array(out).reshape(-1, 2)


def _dedupe(v: np.ndarray, tol: float) -> np.ndarray:
    if len(v) == 0:
        return v
    keep = [v[0]]
    for p in v[1:]:
        if np.abs(p - keep[-1]).max() > tol:
            keep.append(p)
    if len(keep) > 1 and np.abs(keep[0] - keep[-1]).max() <= tol:
        keep.pop()
    return np.array(keep)


def clip_convex(subject: np.ndarray, clip_ccw: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip any ring against a convex CCW ring."""
    out = np.asarray(subject, dtype=float)
    n = len(clip_ccw)
    for i in range(n):
        a, b = clip_ccw[i], clip_ccw[(i + 1) % n]
        edge = b - a
        normal = np.array([edge[1], -edge[0]])  # outward for CCW
        out = clip_halfplane(out, normal, float(normal @ a))
        if len(out) == 0:
            break
    return out


def compute_voronoi(sites: Mapping[int, Sequence[float]], bounding: Polygon) -> dict[int, Polygon]:
    """Voronoi cells of ``sites`` restricted to a convex bounding polygon."""
    if not sites:
        raise ValueError("at least one site is needed")
    if not bounding.is_convex():
        raise ValueError("bounding polygon must be convex")
    ids = list(sites)
    pts = np.array([sites[i] for i in ids], dtype=float).reshape(-1, 2)
    if len(np.unique(pts, axis=0)) != len(pts):
        raise ValueError("duplicate sites")
    if not bounding.contains(pts).all():
        # points exactly on the boundary fail the even-odd test; accept them
        x0, y0, x1, y1 = bounding.bounds()
        if np.any((pts[:, 0] < x0) | (pts[:, 0] > x1) | (pts[:, 1] < y0) | (pts[:, 1] > y1)):
            raise ValueError("bounding polygon must contain all sites")
    box = bounding.ccw()
    tol = 1e-12 * max(1.0, float(np.ptp(box, axis=0).max()))
    cells = {}
    for k, sid in enumerate(ids):
        s = pts[k]
        cell = box
        for m in range(len(pts)):
            if m == k:
                continue
            t = pts[m]
            # |p - s|^2 <= |p - t|^2  <=>  (t - s).p <= (|t|^2 - |s|^2) / 2
            cell = clip_halfplane(cell, t - s, 0.5 * (t @ t - s @ s))
            if len(cell) == 0:
                break
        cells[sid] = Polygon(_dedupe(cell, tol), check=False)
    return cells


def intersection_area(cell: Polygon, region: Polygon) -> float:
    """Area of ``cell`` (convex) intersected with ``region`` (simple)."""
    clipped = clip_convex(region.ccw(), cell.ccw())
    return max(0.0, _shoelace(clipped))


@dataclass(frozen=True)
class LoadSeries:
    """Per-source active/reactive series on a uniform time grid (MW/MVAr)."""

    timestamps: np.ndarray
    p: Mapping
    q: Mapping

    def __post_init__(self):
        ts = np.asarray(self.timestamps)
        object.__setattr__(self, "timestamps", ts)
        if ts.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if len(ts) > 1:
            d = np.diff(ts)
            if not np.all(d > d.dtype.type(0)):
                raise ValueError("timestamps must be strictly increasing")
            if not np.all(d == d[0]):
                raise ValueError("timestamps must be uniformly spaced")
        p = {k: np.asarray(v, dtype=float) for k, v in self.p.items()}
        q = {k: np.asarray(self.q[k], dtype=float) for k in p}
        for k in p:
            if p[k].shape != ts.shape or q[k].shape != ts.shape:
                raise ValueError(f"series for {k!r} does not match the time grid")
            if not (np.all(np.isfinite(p[k])) and np.all(np.isfinite(q[k]))):
                raise ValueError(f"series for {k!r} has non-finite values")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def sources(self) -> list:
        return list(self.p)

    def __len__(self) -> int:
        return len(self.timestamps)

    def index_of(self, t) -> int:
        if isinstance(t, (int, np.integer)) and not np.issubdtype(self.timestamps.dtype, np.integer):
            return int(t)
        hit = np.flatnonzero(self.timestamps == np.asarray(t, dtype=self.timestamps.dtype))
        if hit.size == 0:
            raise KeyError(f"timestamp {t!r} not in series")
        return int(hit[0])

    def with_source(self, key, p, q) -> "LoadSeries":
        return LoadSeries(self.timestamps, {**self.p, key: p}, {**self.q, key: q})


@dataclass(frozen=True)
class GeoLayout:
    sites: Mapping[int, tuple]
    regions: Sequence[tuple]  # (region_id, Polygon)
    region_loads: LoadSeries
    bounding: Optional[Polygon] = None

    def __post_init__(self):
        pts = [tuple(map(float, s)) for s in self.sites.values()]
        if len(set(pts)) != len(pts):
            raise ValueError("sites must be distinct")
        ids = {rid for rid, _ in self.regions}
        missing = [k for k in self.region_loads.sources if k not in ids]
        if missing:
            raise ValueError(f"loads reference unknown regions: {missing}")

    @cached_property
    def bus_ids(self) -> list[int]:
        return list(self.sites)

    @cached_property
    def bound(self) -> Polygon:
        if self.bounding is not None:
            return self.bounding
        allv = np.vstack([p.vertices for _, p in self.regions] + [np.array(list(self.sites.values()), float)])
        x0, y0 = allv.min(axis=0)
        x1, y1 = allv.max(axis=0)
        pad = 0.01 * max(x1 - x0, y1 - y0, 1.0)
        x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
        return Polygon([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    @cached_property
    def cells(self) -> dict[int, Polygon]:
        return compute_voronoi(self.sites, self.bound)

    @cached_property
    def ratios(self) -> np.ndarray:
        """r[i, k] = area(c_i & A_k) / area(A_k), buses by regions."""
        r = np.zeros((len(self.bus_ids), len(self.regions)))
        for i, b in enumerate(self.bus_ids):
            for k, (_, poly) in enumerate(self.regions):
                r[i, k] = intersection_area(self.cells[b], poly) / poly.area
        return np.clip(r, 0.0, 1.0)


def assign_loads(layout: GeoLayout, t) -> dict[int, tuple[float, float]]:
    """Bus loads at instant ``t`` (timestamp or integer position)."""
    i = layout.region_loads.index_of(t)
    p, q = _region_vectors(layout)
    pb = layout.ratios @ p[:, i]
    qb = layout.ratios @ q[:, i]
    return {b: (float(pb[n]), float(qb[n])) for n, b in enumerate(layout.bus_ids)}


def _region_vectors(layout: GeoLayout):
    rl = layout.region_loads
    zero = np.zeros(len(rl))
    p = np.array([rl.p.get(rid, zero) for rid, _ in layout.regions]).reshape(len(layout.regions), -1)
    q = np.array([rl.q.get(rid, zero) for rid, _ in layout.regions]).reshape(len(layout.regions), -1)
    return p, q


def assign_series(layout: GeoLayout) -> LoadSeries:
    """Apply the assignment at every instant of the regional series."""
    p, q = _region_vectors(layout)
    pb, qb = layout.ratios @ p, layout.ratios @ q
    ids = layout.bus_ids
    return LoadSeries(layout.region_loads.timestamps,
                      {b: pb[n] for n, b in enumerate(ids)}, {b: qb[n] for n, b in enumerate(ids)})


def impute_missing(series: LoadSeries, missing, neighbors: Sequence):
    """Mean of the neighbouring sources' P and Q, per instant."""
    if not neighbors:
        raise ValueError(f"no neighbours given for {missing!r}")
    p = np.mean([series.p[n] for n in neighbors], axis=0)
    q = np.mean([series.q[n] for n in neighbors], axis=0)
    return p, q


def qp_ratio_pool(series: LoadSeries, sources: Optional[Sequence] = None) -> list[np.ndarray]:
    """Per-instant Q/P ratios across sources with nonzero P."""
    sources = list(series.p) if sources is None else list(sources)
    p = np.array([series.p[s] for s in sources])
    q = np.array([series.q[s] for s in sources])
    return [q[p[:, t] != 0, t] / p[p[:, t] != 0, t] for t in range(p.shape[1])]


def wind_to_negative_pq(gen_series, qp_ratios, seed: int):
    """Model a wind generator as a PQ bus with negative load.

    ``qp_ratios`` is either one pool shared by every instant or a sequence
    of per-instant pools.  At each instant a normal law is fitted to the
    pool (sample std, zero for a single value) and one ratio is drawn.
    """
    gen = np.asarray(gen_series, dtype=float).reshape(-1)
    pools = qp_ratios
    if isinstance(pools, np.ndarray) and pools.ndim == 1 or (
            len(pools) and np.ndim(pools[0]) == 0):
        pools = [np.asarray(pools, dtype=float)] * len(gen)
    if len(pools) != len(gen):
        raise ValueError("need one ratio pool per instant")
    mu = np.empty(len(gen))
    sd = np.empty(len(gen))
    for t, pool in enumerate(pools):
        pool = np.asarray(pool, dtype=float)
        if pool.size == 0:
            raise ValueError(f"empty ratio pool at instant {t}")
        mu[t] = pool.mean()
        sd[t] = pool.std(ddof=1) if pool.size > 1 else 0.0
    rho = mu + sd * make_rng(seed, "wind").standard_normal(len(gen))
    return -gen, -gen * rho


def smooth(series, window: int = 13):
    """Centered moving average keeping only full windows.

    The output is ``len - (window - 1)`` long.  Deviations from the first
    sample are averaged, so constant input comes back bit-exact.
    """
    x = np.asarray(series, dtype=float)
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if window > x.shape[0]:
        raise ValueError("window longer than series")
    ref = x[:1]
    dev = x - ref
    c = np.cumsum(np.concatenate([np.zeros_like(ref), dev]), axis=0)
    return ref + (c[window:] - c[:-window]) / window


def scale_to_regional_total(p_bus, q_bus, total_p: float):
    """Scale all bus P and Q by one factor so that sum(P) = ``total_p``."""
    p_bus = np.asarray(p_bus, dtype=float)
    q_bus = np.asarray(q_bus, dtype=float)
    cur = p_bus.sum()
    if cur == 0:
        raise ValueError("current total active load is zero")
    s = total_p / cur
    return p_bus * s, q_bus * s


# ---- files ----------------------------------------------------------------

def _parse_times(raw: list[str]) -> np.ndarray:
    try:
        return np.array([float(t) for t in raw])
    except ValueError:
        return np.array(raw, dtype="datetime64[s]")


def read_load_csv(path) -> LoadSeries:
    """Read ``timestamp,source_id,p_mw,q_mvar`` rows (long format)."""
    rows: dict = {}
    times: list[str] = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            t = rec["timestamp"].strip()
            if t not in rows:
                rows[t] = {}
                times.append(t)
            rows[t][_src(rec["source_id"])] = (float(rec["p_mw"]), float(rec["q_mvar"]))
    ts = _parse_times(times)
    order = np.argsort(ts, kind="stable")
    times = [times[i] for i in order]
    sources = list(dict.fromkeys(s for t in times for s in rows[t]))
    p = {s: [rows[t].get(s, (np.nan, np.nan))[0] for t in times] for s in sources}
    q = {s: [rows[t].get(s, (np.nan, np.nan))[1] for t in times] for s in sources}
    return LoadSeries(ts[order], p, q)


def _src(s: str):
    s = s.strip()
    try:
        return int(s)
    except ValueError:
        return s


def _fmt_time(t) -> str:
    if isinstance(t, np.datetime64):
        return str(t)
    return repr(float(t)) if not float(t).is_integer() else str(int(t))


def write_load_csv(path, series: LoadSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "source_id", "p_mw", "q_mvar"])
        for i, t in enumerate(series.timestamps):
            for s in series.sources:
                w.writerow([_fmt_time(t), s, repr(float(series.p[s][i])), repr(float(series.q[s][i]))])


def read_layout(path, loads: Optional[LoadSeries] = None, sites: Optional[Mapping] = None) -> GeoLayout:
    """Read a GeoJSON-style FeatureCollection.

    Polygon features carry ``properties.region_id``; Point features carry
    ``properties.bus_id``.  An optional top-level ``bounding`` ring bounds
    the Voronoi cells.  ``sites`` replaces any point features.
    """
    doc = json.loads(Path(path).read_text())
    regions = []
    pts = {}
    for feat in doc.get("features", []):
        geom, props = feat["geometry"], feat.get("properties", {})
        if geom["type"] == "Polygon":
            regions.append((_src(str(props["region_id"])), Polygon(geom["coordinates"][0])))
        elif geom["type"] == "Point":
            pts[int(props["bus_id"])] = tuple(geom["coordinates"])
        else:
            raise ValueError(f"unsupported geometry {geom['type']!r}")
    bounding = Polygon(doc["bounding"]) if doc.get("bounding") else None
    if loads is None:
        loads = LoadSeries(np.zeros(0), {}, {})
    return GeoLayout(dict(sites) if sites is not None else pts, regions, loads, bounding)


def write_layout(path, layout: GeoLayout) -> None:
    feats = [{"type": "Feature", "properties": {"region_id": rid},
              "geometry": {"type": "Polygon", "coordinates": [poly.vertices.tolist() + [poly.vertices[0].tolist()]]}}
             for rid, poly in layout.regions]
    feats += [{"type": "Feature", "properties": {"bus_id": b},
               "geometry": {"type": "Point", "coordinates": list(map(float, xy))}}
              for b, xy in layout.sites.items()]
    doc = {"type": "FeatureCollection", "features": feats}
    if layout.bounding is not None:
        doc["bounding"] = layout.bounding.vertices.tolist()
    Path(path).write_text(json.dumps(doc, indent=1))
