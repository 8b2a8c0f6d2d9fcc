"""Canonical surface samplers for the six object categories.

Each sampler returns (points, normals) in an object-centered frame with y
up; absolute proportions do not matter because generation rescales the
canonical cloud's bounding box to the sampled metric extents. Rotationally
symmetric categories keep a circular cross-section in the x-z plane.
"""

from __future__ import annotations

import numpy as np

from .errors import UnknownCategoryError

CATEGORIES = ("bottle", "bowl", "camera", "can", "laptop", "mug")
SYMMETRIC = frozenset({"bottle", "bowl", "can"})

# metric full-extent ranges per axis (m); symmetric categories tie x and z
SIZE_RANGES = {
    "bottle": ((0.06, 0.12), (0.15, 0.35), (0.06, 0.12)),
    "bowl":   ((0.12, 0.25), (0.05, 0.12), (0.12, 0.25)),
    "camera": ((0.08, 0.16), (0.06, 0.12), (0.05, 0.12)),
    "can":    ((0.06, 0.10), (0.08, 0.18), (0.06, 0.10)),
    "laptop": ((0.25, 0.40), (0.15, 0.30), (0.20, 0.35)),
    "mug":    ((0.10, 0.16), (0.08, 0.14), (0.07, 0.12)),
}


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sample_box_surface(rng, n, half, center=(0.0, 0.0, 0.0), R=None):
    """Area-weighted samples over all six faces of a box."""
    half = np.asarray(half, dtype=np.float64)
    areas = np.array([half[1] * half[2], half[1] * half[2],
                      half[0] * half[2], half[0] * half[2],
                      half[0] * half[1], half[0] * half[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        sel = axis == a
        others = [i for i in range(3) if i != a]
        pts[sel, a] = sign[sel] * half[a]
        pts[sel, others[0]] = uv[sel, 0] * half[others[0]]
        pts[sel, others[1]] = uv[sel, 1] * half[others[1]]
        nrm[sel, a] = sign[sel]
    if R is not None:
        pts = pts @ np.asarray(R).T
        nrm = nrm @ np.asarray(R).T
    return pts + np.asarray(center), nrm


def sample_cylinder_surface(rng, n, radius, y0, y1, caps=(True, True),
                            center=(0.0, 0.0, 0.0), inward=False):
    """Lateral wall plus optional end caps of a y-aligned cylinder."""
    h = y1 - y0
    lateral = 2 * np.pi * radius * h
    cap = np.pi * radius ** 2
    weights = [lateral, cap if caps[0] else 0.0, cap if caps[1] else 0.0]
    w = np.asarray(weights) / sum(weights)
    kind = rng.choice(3, size=n, p=w)
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    lat = kind == 0
    pts[lat, 0] = radius * np.cos(theta[lat])
    pts[lat, 2] = radius * np.sin(theta[lat])
    pts[lat, 1] = rng.uniform(y0, y1, size=int(lat.sum()))
    nrm[lat, 0] = np.cos(theta[lat])
    nrm[lat, 2] = np.sin(theta[lat])
    for k, (y, ny) in ((1, (y1, 1.0)), (2, (y0, -1.0))):
        sel = kind == k
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, size=int(sel.sum())))
        pts[sel, 0] = r * np.cos(theta[sel])
        pts[sel, 2] = r * np.sin(theta[sel])
        pts[sel, 1] = y
        nrm[sel, 1] = ny
    if inward:
        nrm = -nrm
    return pts + np.asarray(center), nrm


def sample_sphere_surface(rng, n, radius=1.0, center=(0.0, 0.0, 0.0),
                          y_max=None, inward=False):
    """Uniform area samples on a sphere, optionally cut at y <= y_max."""
    pts = []
    need = n
    while need > 0:
        cand = rng.standard_normal((max(need * 2, 16), 3))
        cand = _unit(cand)
        if y_max is not None:
            cand = cand[cand[:, 1] <= y_max]
        pts.append(cand[:need])
        need -= len(cand[:need])
    nrm = np.concatenate(pts)[:n]
    out = nrm * radius + np.asarray(center)
    return out, (-nrm if inward else nrm)


def sample_torus_arc(rng, n, major, tube, theta0, theta1,
                     center=(0.0, 0.0, 0.0)):
    """Arc of a z-axis torus whose ring lies in the x-y plane."""
    theta = rng.uniform(theta0, theta1, size=n)
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    ring = major + tube * np.cos(phi)
    pts = np.stack([ring * np.cos(theta), ring * np.sin(theta),
                    tube * np.sin(phi)], axis=1)
    nrm = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta),
                    np.sin(phi)], axis=1)
    return pts + np.asarray(center), nrm


def _split(rng, n, fractions):
    """Integer sample counts per part, summing to n."""
    counts = np.floor(np.asarray(fractions) * n).astype(int)
    counts[0] += n - counts.sum()
    return counts


def sample_category_surface(rng, category: str, n: int = 4096):
    """Canonical (points, normals) for a category; y is the up axis."""
    if category == "bottle":
        # necked cylinder: keeps yaw symmetry but makes up/down observable
        n_body, n_neck, n_shoulder = _split(rng, n, (0.7, 0.15, 0.15))
        pb, nb = sample_cylinder_surface(rng, n_body, radius=1.0,
                                         y0=-1.0, y1=0.4, caps=(False, True))
        pn, nn = sample_cylinder_surface(rng, n_neck, radius=0.45,
                                         y0=0.4, y1=1.0, caps=(True, False))
        theta = rng.uniform(0.0, 2 * np.pi, size=n_shoulder)
        r = np.sqrt(rng.uniform(0.45 ** 2, 1.0, size=n_shoulder))
        ps = np.stack([r * np.cos(theta), np.full(n_shoulder, 0.4),
                       r * np.sin(theta)], axis=1)
        ns = np.tile([0.0, 1.0, 0.0], (n_shoulder, 1))
        return np.concatenate([pb, pn, ps]), np.concatenate([nb, nn, ns])
    if category == "can":
        return sample_cylinder_surface(rng, n, radius=1.0, y0=-1.0, y1=1.0)
    if category == "bowl":
        n_out, n_in = _split(rng, n, (0.5, 0.5))
        po, no = sample_sphere_surface(rng, n_out, radius=1.0, y_max=0.0)
        pi, ni = sample_sphere_surface(rng, n_in, radius=0.94, y_max=0.0,
                                       inward=True)
        return np.concatenate([po, pi]), np.concatenate([no, ni])
    if category == "mug":
        n_body, n_in, n_handle = _split(rng, n, (0.55, 0.25, 0.2))
        pb, nb = sample_cylinder_surface(rng, n_body, radius=0.75,
                                         y0=-1.0, y1=1.0, caps=(False, True))
        pi, ni = sample_cylinder_surface(rng, n_in, radius=0.68,
                                         y0=-0.9, y1=1.0, caps=(False, False),
                                         inward=True)
        ph, nh = sample_torus_arc(rng, n_handle, major=0.35, tube=0.12,
                                  theta0=-1.3, theta1=1.3,
                                  center=(0.75, 0.0, 0.0))
        return np.concatenate([pb, pi, ph]), np.concatenate([nb, ni, nh])
    if category == "camera":
        n_body, n_lens = _split(rng, n, (0.8, 0.2))
        pb, nb = sample_box_surface(rng, n_body, (1.0, 0.6, 0.45))
        # lens barrel on the +z face, offset toward one side
        pl, nl = sample_cylinder_surface(rng, n_lens, radius=0.25,
                                         y0=0.45, y1=0.8, caps=(True, False),
                                         center=(0.35, 0.0, 0.0))
        pl = pl[:, [0, 2, 1]]  # swing the barrel from y-aligned to z-aligned
        nl = nl[:, [0, 2, 1]]
        return np.concatenate([pb, pl]), np.concatenate([nb, nl])
    if category == "laptop":
        n_base, n_screen = _split(rng, n, (0.5, 0.5))
        pb, nb = sample_box_surface(rng, n_base, (1.0, 0.06, 0.55),
                                    center=(0.0, -0.94, 0.2))
        tilt = np.radians(20.0)
        R = np.array([[1.0, 0.0, 0.0],
                      [0.0, np.cos(tilt), -np.sin(tilt)],
                      [0.0, np.sin(tilt), np.cos(tilt)]])
        ps, ns = sample_box_surface(rng, n_screen, (1.0, 0.95, 0.05),
                                    center=(0.0, 0.0, 0.0), R=R)
        hinge = np.array([0.0, -0.88, -0.35])
        top = R @ np.array([0.0, 0.95, 0.0])
        ps = ps + hinge + top
        return np.concatenate([pb, ps]), np.concatenate([nb, ns])
    raise UnknownCategoryError(f"unknown category {category!r}")


def sample_size(rng, category: str) -> np.ndarray:
    """Metric full extents drawn from the per-category range."""
    if category not in SIZE_RANGES:
        raise UnknownCategoryError(f"unknown category {category!r}")
    lo_hi = SIZE_RANGES[category]
    s = np.array([rng.uniform(lo, hi) for lo, hi in lo_hi])
    if category in SYMMETRIC:
        s[2] = s[0]
    return s
